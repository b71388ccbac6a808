use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qbuf_core::engine::{validate_schedule, Severity, Violation};
use qbuf_core::experiments::{planned_schedules, run_experiment, ExperimentOutput, Preset};
use serde::Serialize;
use serde_json::json;

use crate::config::{resolve, ConfigError, RunConfig, Sources, SEED_ENV};
use crate::exec::Parallel;
use crate::output::{self, describe, format_violations, Format, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SCHEDULE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "qbuf", version, about = "Fiber-loop quantum buffer simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a preset or configuration and write result files.
    Run(RunArgs),
    /// Check drive timing without running.
    Validate(ConfigArgs),
    /// List built-in presets.
    Presets {
        #[arg(long, value_enum, default_value_t = ListFormat::Text)]
        format: ListFormat,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ListFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,
    /// Top-level seed; beats the config file and QBUF_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override one field, e.g. `topology.storage_length_m=200`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_name = "DIR", default_value = "qbuf-out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Worker threads for sweep points; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

/// What a command printed and how it ended.
#[derive(Debug, Default)]
pub struct Outcome {
    pub code: i32,
    pub stdout: Vec<String>,
    pub stderr: Vec<String>,
}

impl Outcome {
    fn fail(code: i32, report: serde_json::Value) -> Self {
        Outcome { code, stdout: Vec::new(), stderr: vec![report.to_string()] }
    }
}

fn config_failure(e: &ConfigError) -> Outcome {
    let kind = match e {
        ConfigError::UnknownPreset { .. } => "unknown_preset",
        ConfigError::Schema { .. } => "schema",
        ConfigError::Io { .. } => "io",
    };
    let mut report = json!({ "error": kind, "message": e.to_string() });
    if let Some(path) = e.field_path() {
        report["path"] = json!(path);
    }
    if let ConfigError::UnknownPreset { .. } = e {
        report["available"] = json!(Preset::names());
    }
    Outcome::fail(EXIT_CONFIG, report)
}

#[derive(Serialize)]
struct ViolationReport<'a> {
    kind: &'a str,
    severity: &'a str,
    drive_index: usize,
    pulse_id: Option<u64>,
    message: &'a str,
}

fn violation_reports(found: &[Violation]) -> Vec<ViolationReport<'_>> {
    found
        .iter()
        .map(|v| ViolationReport {
            kind: v.kind.label(),
            severity: match v.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            },
            drive_index: v.drive_index,
            pulse_id: v.pulse_id,
            message: &v.message,
        })
        .collect()
}

fn schedule_failure(found: &[Violation]) -> Outcome {
    let mut out = Outcome::fail(
        EXIT_SCHEDULE,
        json!({
            "error": "schedule",
            "message": "drive schedule rejected by the timing validator",
            "violations": violation_reports(found),
        }),
    );
    out.stdout = format_violations(found);
    out
}

fn load(args: &ConfigArgs, env_seed: Option<String>) -> Result<RunConfig, ConfigError> {
    let mut sources = Sources {
        preset: args.preset.clone(),
        overrides: args.set.clone(),
        seed: args.seed,
        env_seed,
        ..Sources::default()
    };
    if let Some(path) = &args.config {
        sources = sources.with_file(path)?;
    }
    resolve(&sources)
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

pub fn cmd_presets(format: ListFormat) -> Outcome {
    let stdout = match format {
        ListFormat::Text => {
            Preset::ALL.iter().map(|p| format!("{:<14}{}", p.name(), p.description())).collect()
        }
        ListFormat::Json => {
            let list: Vec<_> = Preset::ALL
                .iter()
                .map(|p| json!({ "name": p.name(), "description": p.description() }))
                .collect();
            vec![serde_json::Value::Array(list).to_string()]
        }
    };
    Outcome { code: EXIT_OK, stdout, stderr: Vec::new() }
}

pub fn cmd_validate(args: &ConfigArgs, env_seed: Option<String>) -> Outcome {
    let cfg = match load(args, env_seed) {
        Ok(c) => c,
        Err(e) => return config_failure(&e),
    };
    let plans = match planned_schedules(&cfg.experiment, &cfg.topology) {
        Ok(p) => p,
        Err(e) => {
            return Outcome::fail(EXIT_FAILURE, json!({ "error": "runtime", "message": e.to_string() }))
        }
    };
    let mut out = Outcome::default();
    let mut all = Vec::new();
    for plan in &plans {
        if plan.schedule.is_empty() {
            out.stdout.push(format!(
                "{}: warning: no drive pulses; every pulse reflects straight to the detectors",
                plan.label
            ));
            continue;
        }
        let found = validate_schedule(&cfg.topology, &plan.schedule, &plan.inputs);
        if found.is_empty() {
            out.stdout.push(format!("{}: ok ({} drive pulses)", plan.label, plan.schedule.pulses().len()));
        }
        for line in format_violations(&found) {
            out.stdout.push(format!("{}: {line}", plan.label));
        }
        all.extend(found);
    }
    if all.iter().any(|v| v.severity == Severity::Error) {
        let mut fail = schedule_failure(&all);
        fail.stdout = out.stdout;
        return fail;
    }
    out
}

pub fn cmd_run(args: &RunArgs, env_seed: Option<String>) -> Outcome {
    let started = Instant::now();
    let cfg = match load(&args.config, env_seed) {
        Ok(c) => c,
        Err(e) => return config_failure(&e),
    };
    let exec = match Parallel::new(args.threads) {
        Ok(p) => p,
        Err(e) => {
            return Outcome::fail(EXIT_FAILURE, json!({ "error": "runtime", "message": e.to_string() }))
        }
    };
    let (_, cal, result) = match run_experiment(&cfg.experiment, &cfg.topology, &exec) {
        Ok(r) => r,
        Err(qbuf_core::Error::Schedule(found)) => return schedule_failure(&found),
        Err(e) => {
            return Outcome::fail(EXIT_FAILURE, json!({ "error": "runtime", "message": e.to_string() }))
        }
    };
    match write_all(&args.out, args.format, &cfg, cal.as_ref(), &result, exec.threads(), started) {
        Ok(lines) => Outcome { code: EXIT_OK, stdout: lines, stderr: Vec::new() },
        Err(e) => Outcome::fail(EXIT_FAILURE, json!({ "error": "io", "message": format!("{e:#}") })),
    }
}

fn write_all(
    dir: &Path,
    format: Format,
    cfg: &RunConfig,
    cal: Option<&qbuf_core::experiments::Calibration>,
    result: &ExperimentOutput,
    threads: usize,
    started: Instant,
) -> anyhow::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let files = output::write_results(dir, format, cfg, cal, result)?;
    let outputs = files.iter().map(|p| describe(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let manifest = RunManifest {
        artifact: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.experiment.seed,
        threads,
        config: cfg.clone(),
        outputs,
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    output::write_json(dir, "manifest.json", &manifest)?;

    let mut lines = vec![format!("preset {} seed {}", cfg.preset, cfg.experiment.seed)];
    for v in result.warnings() {
        lines.push(format!("warning: {}", v.message));
    }
    match result {
        ExperimentOutput::Retrieval(r) => {
            lines.push(format!("storage period {:.6} us", r.storage_period * 1e6));
            for p in &r.peaks {
                let sampled = p.sampled_counts.map_or("-".to_string(), |c| c.to_string());
                lines.push(format!(
                    "eta {} at {:.4} us: expected {:.1}, sampled {sampled}",
                    p.eta,
                    p.retrieval_time * 1e6,
                    p.expected_counts
                ));
            }
            if let Some(d) = r.decay {
                lines.push(format!(
                    "fitted loss {:.4} dB/cycle (rms {:.4} dB)",
                    d.loss_db_per_cycle, d.residual_db
                ));
            }
        }
        ExperimentOutput::Hwp(h) => {
            for c in &h.curves {
                lines.push(format!("eta {} {}: visibility {:.4}", c.eta, c.basis.name(), c.visibility));
            }
            for (eta, v) in &h.visibility {
                lines.push(format!("eta {eta} average visibility {v:.4}"));
            }
        }
        ExperimentOutput::Trace(t) => {
            for r in &t.rows {
                lines.push(format!(
                    "pulse {} from source {}: exit {:.4} us after {} cycles, mu {:.4e}",
                    r.pulse_id,
                    r.source_id,
                    r.exit_time * 1e6,
                    r.cycles,
                    r.mu_out
                ));
            }
        }
    }
    lines.push(format!("wrote {} files to {}", files.len() + 1, dir.display()));
    Ok(lines)
}

pub fn execute(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Run(args) => cmd_run(args, env_seed()),
        Command::Validate(args) => cmd_validate(args, env_seed()),
        Command::Presets { format } => cmd_presets(*format),
    }
}
