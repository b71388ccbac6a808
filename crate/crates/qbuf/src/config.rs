//! Run configuration: one JSON document with a schema version.
//!
//! Resolution order, later wins:
//!
//! 1. preset defaults (`--preset`, else the file's `preset`, else `fig2-main`)
//! 2. the config file
//! 3. `--set key=value` overrides
//! 4. `--seed`
//!
//! `QBUF_SEED` fills in the seed only when none of the above set it.

use std::path::Path;

use qbuf_core::components::BufferTopology;
use qbuf_core::experiments::{ExperimentConfig, Preset};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PRESET: &str = "fig2-main";
pub const SEED_ENV: &str = "QBUF_SEED";

const TOP_LEVEL: [&str; 4] = ["schema_version", "preset", "experiment", "topology"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub preset: String,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub topology: BufferTopology,
}

impl RunConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            preset: preset.name().to_string(),
            experiment: preset.config(),
            topology: preset.topology(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown preset '{name}'; available presets: {}", Preset::names().join(", "))]
    UnknownPreset { name: String },

    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl ConfigError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Schema { path: path.into(), message: message.into() }
    }

    /// Field path for schema errors, `None` otherwise.
    pub fn field_path(&self) -> Option<&str> {
        match self {
            ConfigError::Schema { path, .. } => Some(path),
            _ => None,
        }
    }
}

/// Everything that feeds into config resolution.
#[derive(Debug, Clone, Default)]
pub struct Sources {
    pub preset: Option<String>,
    pub file: Option<Value>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    /// Value of `QBUF_SEED`, if set.
    pub env_seed: Option<String>,
}

impl Sources {
    pub fn with_file(mut self, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let value: Value = serde_json::from_str(&text).map_err(|e| {
            ConfigError::schema(
                format!("{}:{}:{}", path.display(), e.line(), e.column()),
                format!("invalid JSON: {e}"),
            )
        })?;
        if !value.is_object() {
            return Err(ConfigError::schema("$", "config must be a JSON object"));
        }
        self.file = Some(value);
        Ok(self)
    }
}

fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// Splits `key=value`. The value is read as JSON when it parses, as a string
/// otherwise. Keys not starting with a top-level section are taken relative
/// to `experiment`.
fn parse_override(raw: &str) -> Result<(Vec<String>, Value), ConfigError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| ConfigError::schema(raw, "override must have the form key=value"))?;
    let mut path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(ConfigError::schema(key, "empty path segment in override"));
    }
    if !TOP_LEVEL.contains(&path[0].as_str()) {
        path.insert(0, "experiment".to_string());
    }
    let value = serde_json::from_str(value.trim()).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((path, value))
}

fn set_path(root: &mut Value, path: &[String], value: Value) -> Result<(), ConfigError> {
    let mut node = root;
    for (i, seg) in path.iter().enumerate() {
        let last = i + 1 == path.len();
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(seg.clone(), value);
                    return Ok(());
                }
                map.entry(seg.clone()).or_insert_with(|| Value::Object(Map::new()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| ConfigError::schema(path[..=i].join("."), "expected an array index"))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    ConfigError::schema(path[..=i].join("."), format!("index out of range (len {len})"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(ConfigError::schema(path[..i].join("."), "cannot descend into a scalar")),
        };
    }
    Ok(())
}

fn has_path(root: &Value, path: &[&str]) -> bool {
    path.iter().try_fold(root, |node, seg| node.get(seg)).is_some()
}

fn preset_name(sources: &Sources) -> Result<String, ConfigError> {
    if let Some(p) = &sources.preset {
        return Ok(p.clone());
    }
    match sources.file.as_ref().and_then(|f| f.get("preset")) {
        None => Ok(DEFAULT_PRESET.to_string()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ConfigError::schema("preset", "expected a preset name")),
    }
}

/// Applies the precedence rules and checks the result against the schema.
pub fn resolve(sources: &Sources) -> Result<RunConfig, ConfigError> {
    let name = preset_name(sources)?;
    let preset = Preset::from_name(&name).ok_or(ConfigError::UnknownPreset { name })?;

    let mut value = serde_json::to_value(RunConfig::from_preset(preset))
        .map_err(|e| ConfigError::schema("$", e.to_string()))?;
    let mut seed_given = false;
    if let Some(file) = &sources.file {
        merge(&mut value, file);
        seed_given |= has_path(file, &["experiment", "seed"]);
    }
    for raw in &sources.overrides {
        let (path, v) = parse_override(raw)?;
        seed_given |= path == ["experiment", "seed"];
        set_path(&mut value, &path, v)?;
    }
    value["preset"] = Value::String(preset.name().to_string());
    if let Some(seed) = sources.seed {
        value["experiment"]["seed"] = Value::from(seed);
    } else if !seed_given {
        if let Some(raw) = &sources.env_seed {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| ConfigError::schema(SEED_ENV, format!("not an unsigned integer: {raw:?}")))?;
            value["experiment"]["seed"] = Value::from(seed);
        }
    }

    let cfg: RunConfig = serde_path_to_error::deserialize(&value).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::schema(path, e.into_inner().to_string())
    })?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::schema(
            "schema_version",
            format!("unsupported schema version {} (expected {SCHEMA_VERSION})", cfg.schema_version),
        ));
    }
    cfg.experiment.validate(&cfg.topology).map_err(|e| ConfigError::schema("experiment", e.to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sources() -> Sources {
        Sources::default()
    }

    #[test]
    fn defaults_to_fig2_main() {
        let cfg = resolve(&sources()).unwrap();
        assert_eq!(cfg, RunConfig::from_preset(Preset::Fig2Main));
    }

    #[test]
    fn file_beats_preset_and_set_beats_file() {
        let file = json!({"experiment": {"mu_source": 0.2, "n_triggers": 500}});
        let s = Sources { file: Some(file.clone()), ..sources() };
        let cfg = resolve(&s).unwrap();
        assert_eq!(cfg.experiment.mu_source, 0.2);
        assert_eq!(cfg.experiment.n_triggers, 500);

        let s = Sources { file: Some(file), overrides: vec!["experiment.mu_source=0.3".into()], ..sources() };
        let cfg = resolve(&s).unwrap();
        assert_eq!(cfg.experiment.mu_source, 0.3);
        assert_eq!(cfg.experiment.n_triggers, 500);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let s = Sources {
            overrides: vec![
                "topology.storage_length_m=200".into(),
                "detector.dark_rate=5".into(),
                "topology.per_element_loss_db.coupler_db=0.25".into(),
                "mode=analytic".into(),
                "eta_list=[1,2]".into(),
            ],
            ..sources()
        };
        let cfg = resolve(&s).unwrap();
        assert_eq!(cfg.topology.storage_length_m, 200.0);
        assert_eq!(cfg.experiment.detector.dark_rate, 5.0);
        assert_eq!(cfg.topology.per_element_loss_db.coupler_db, 0.25);
        assert_eq!(cfg.experiment.mode, qbuf_core::experiments::Mode::Analytic);
        assert_eq!(cfg.experiment.eta_list, vec![1, 2]);
    }

    #[test]
    fn seed_precedence() {
        let file = json!({"experiment": {"seed": 11}});
        let env = Some("22".to_string());
        let with = |seed, file: Option<Value>, overrides: Vec<String>| {
            resolve(&Sources { seed, file, overrides, env_seed: env.clone(), ..sources() })
                .unwrap()
                .experiment
                .seed
        };
        assert_eq!(with(Some(33), Some(file.clone()), vec![]), 33);
        assert_eq!(with(None, Some(file.clone()), vec![]), 11);
        assert_eq!(with(None, None, vec!["seed=44".into()]), 44);
        assert_eq!(with(None, None, vec![]), 22);
        let none = resolve(&sources()).unwrap().experiment.seed;
        assert_eq!(none, ExperimentConfig::default().seed);
        let bad = resolve(&Sources { env_seed: Some("x".into()), ..sources() });
        assert!(matches!(bad, Err(ConfigError::Schema { .. })));
    }

    #[test]
    fn preset_selection() {
        let file = json!({"preset": "fig2-insets"});
        let cfg = resolve(&Sources { file: Some(file.clone()), ..sources() }).unwrap();
        assert_eq!(cfg.experiment.eta_list, vec![1, 3, 5]);
        let cfg =
            resolve(&Sources { file: Some(file), preset: Some("ideal-system".into()), ..sources() }).unwrap();
        assert_eq!(cfg.preset, "ideal-system");
        let err = resolve(&Sources { preset: Some("nope".into()), ..sources() }).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fig2-main") && msg.contains("ideal-system"), "{msg}");
    }

    #[test]
    fn schema_errors_carry_the_field_path() {
        let file = json!({"topology": {"loop_length_m": "long"}});
        let err = resolve(&Sources { file: Some(file), ..sources() }).unwrap_err();
        assert_eq!(err.field_path(), Some("topology.loop_length_m"));

        let file = json!({"experiment": {"detector": {"efficency": 0.5}}});
        let err = resolve(&Sources { file: Some(file), ..sources() }).unwrap_err();
        assert_eq!(err.field_path(), Some("experiment.detector.efficency"));

        let file = json!({"schema_version": 9});
        let err = resolve(&Sources { file: Some(file), ..sources() }).unwrap_err();
        assert_eq!(err.field_path(), Some("schema_version"));

        let err = resolve(&Sources { overrides: vec!["novalue".into()], ..sources() }).unwrap_err();
        assert!(err.field_path().is_some());
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::from_preset(Preset::Fig2Insets);
        let file = serde_json::to_value(&cfg).unwrap();
        assert_eq!(resolve(&Sources { file: Some(file), ..sources() }).unwrap(), cfg);
    }
}
