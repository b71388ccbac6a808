//! Result files. Every table can be written as CSV or as a JSON array of
//! records with the same field names.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use qbuf_core::detection::{ClickSet, Histogram};
use qbuf_core::engine::{LogEntry, Severity, Violation};
use qbuf_core::experiments::{Calibration, ExperimentOutput, HwpSweep, RetrievalSweep, Trace};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

pub trait Table: Serialize {
    const COLUMNS: &'static [&'static str];
}

#[derive(Debug, Serialize)]
pub struct PeakRecord {
    pub eta: u32,
    pub cycles: u32,
    pub retrieval_time_s: f64,
    pub exit_time_s: f64,
    pub mu_out: f64,
    pub expected_counts: f64,
    pub sampled_counts: Option<u64>,
    pub corrected_counts: f64,
}

impl Table for PeakRecord {
    const COLUMNS: &'static [&'static str] = &[
        "eta",
        "cycles",
        "retrieval_time_s",
        "exit_time_s",
        "mu_out",
        "expected_counts",
        "sampled_counts",
        "corrected_counts",
    ];
}

#[derive(Debug, Serialize)]
pub struct BinRecord {
    pub bin_start_s: f64,
    pub counts: u64,
}

impl Table for BinRecord {
    const COLUMNS: &'static [&'static str] = &["bin_start_s", "counts"];
}

#[derive(Debug, Serialize)]
pub struct ClickRecord {
    pub time_s: f64,
    pub detector_id: u16,
}

impl Table for ClickRecord {
    const COLUMNS: &'static [&'static str] = &["time_s", "detector_id"];
}

#[derive(Debug, Serialize)]
pub struct EventRecord {
    pub time_s: f64,
    pub pulse_id: u64,
    pub component: &'static str,
    pub port: &'static str,
    pub mu: f64,
    pub cycles: u32,
}

impl Table for EventRecord {
    const COLUMNS: &'static [&'static str] = &["time_s", "pulse_id", "component", "port", "mu", "cycles"];
}

#[derive(Debug, Serialize)]
pub struct SweepRecord {
    pub eta: u32,
    pub basis: &'static str,
    pub angle_rad: f64,
    pub port: u8,
    pub counts: f64,
    pub normalized_counts: f64,
}

impl Table for SweepRecord {
    const COLUMNS: &'static [&'static str] =
        &["eta", "basis", "angle_rad", "port", "counts", "normalized_counts"];
}

#[derive(Debug, Serialize)]
pub struct TraceRecord {
    pub source_id: u64,
    pub pulse_id: u64,
    pub exit_time_s: f64,
    pub cycles: u32,
    pub mu_out: f64,
    pub expected_counts: f64,
    pub sampled_counts: Option<u64>,
}

impl Table for TraceRecord {
    const COLUMNS: &'static [&'static str] =
        &["source_id", "pulse_id", "exit_time_s", "cycles", "mu_out", "expected_counts", "sampled_counts"];
}

pub fn peak_records(sweep: &RetrievalSweep) -> Vec<PeakRecord> {
    sweep
        .peaks
        .iter()
        .map(|p| PeakRecord {
            eta: p.eta,
            cycles: p.eta - 1,
            retrieval_time_s: p.retrieval_time,
            exit_time_s: p.exit_time,
            mu_out: p.mu_out,
            expected_counts: p.expected_counts,
            sampled_counts: p.sampled_counts,
            corrected_counts: p.corrected_counts,
        })
        .collect()
}

pub fn bin_records(h: &Histogram) -> Vec<BinRecord> {
    h.counts
        .iter()
        .enumerate()
        .map(|(k, &counts)| BinRecord { bin_start_s: h.bin_start(k), counts })
        .collect()
}

pub fn click_records(c: &ClickSet) -> Vec<ClickRecord> {
    c.clicks().iter().map(|c| ClickRecord { time_s: c.time, detector_id: c.detector }).collect()
}

pub fn event_records(log: &[LogEntry]) -> Vec<EventRecord> {
    log.iter()
        .map(|e| EventRecord {
            time_s: e.time,
            pulse_id: e.pulse_id,
            component: e.component,
            port: e.port,
            mu: e.mu,
            cycles: e.cycles,
        })
        .collect()
}

pub fn sweep_records(sweep: &HwpSweep) -> Vec<SweepRecord> {
    sweep
        .rows
        .iter()
        .map(|r| SweepRecord {
            eta: r.eta,
            basis: r.basis.name(),
            angle_rad: r.angle,
            port: r.port,
            counts: r.counts,
            normalized_counts: r.normalized,
        })
        .collect()
}

pub fn trace_records(trace: &Trace) -> Vec<TraceRecord> {
    trace
        .rows
        .iter()
        .map(|r| TraceRecord {
            source_id: r.source_id,
            pulse_id: r.pulse_id,
            exit_time_s: r.exit_time,
            cycles: r.cycles,
            mu_out: r.mu_out,
            expected_counts: r.expected_counts,
            sampled_counts: r.sampled_counts,
        })
        .collect()
}

/// Writes a table; the CSV header is present even without rows.
pub fn write_table<T: Table>(dir: &Path, stem: &str, rows: &[T], format: Format) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.{}", format.extension()));
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
            w.write_record(T::COLUMNS)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => write_json_to(BufWriter::new(file), rows)?,
    }
    Ok(path)
}

pub fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_json_to(BufWriter::new(file), value)?;
    Ok(path)
}

fn write_json_to<W: Write, T: Serialize + ?Sized>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct CurveSummary {
    pub eta: u32,
    pub basis: &'static str,
    pub visibility: f64,
    pub port1_visibility: f64,
    pub port2_visibility: f64,
}

#[derive(Debug, Serialize)]
pub struct AverageSummary {
    pub eta: u32,
    pub visibility: f64,
}

#[derive(Debug, Serialize)]
pub struct PeakSummary {
    pub count: usize,
    pub first_retrieval_s: f64,
    pub last_retrieval_s: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub preset: String,
    pub kind: qbuf_core::experiments::ExperimentKind,
    pub mode: qbuf_core::experiments::Mode,
    pub seed: u64,
    pub storage_period_s: f64,
    pub peaks: Option<PeakSummary>,
    pub fitted_loss_db_per_cycle: Option<f64>,
    pub fit_residual_db: Option<f64>,
    /// One record per (eta, basis).
    pub visibilities: Vec<CurveSummary>,
    /// Per eta, averaged over bases.
    pub average_visibilities: Vec<AverageSummary>,
    pub calibration: Option<Calibration>,
    pub warnings: Vec<String>,
}

pub fn summary(
    cfg: &RunConfig,
    storage_period: f64,
    cal: Option<&Calibration>,
    out: &ExperimentOutput,
) -> Summary {
    let mut s = Summary {
        preset: cfg.preset.clone(),
        kind: cfg.experiment.kind,
        mode: cfg.experiment.mode,
        seed: cfg.experiment.seed,
        storage_period_s: storage_period,
        peaks: None,
        fitted_loss_db_per_cycle: None,
        fit_residual_db: None,
        visibilities: Vec::new(),
        average_visibilities: Vec::new(),
        calibration: cal.cloned(),
        warnings: out.warnings().iter().map(|v| v.message.clone()).collect(),
    };
    match out {
        ExperimentOutput::Retrieval(r) => {
            s.peaks = Some(PeakSummary {
                count: r.peaks.len(),
                first_retrieval_s: r.peaks.iter().map(|p| p.retrieval_time).fold(f64::INFINITY, f64::min),
                last_retrieval_s: r.peaks.iter().map(|p| p.retrieval_time).fold(f64::NEG_INFINITY, f64::max),
            });
            s.fitted_loss_db_per_cycle = r.decay.map(|d| d.loss_db_per_cycle);
            s.fit_residual_db = r.decay.map(|d| d.residual_db);
        }
        ExperimentOutput::Hwp(h) => {
            s.visibilities = h
                .curves
                .iter()
                .map(|c| CurveSummary {
                    eta: c.eta,
                    basis: c.basis.name(),
                    visibility: c.visibility,
                    port1_visibility: c.port_visibility[0],
                    port2_visibility: c.port_visibility[1],
                })
                .collect();
            s.average_visibilities =
                h.visibility.iter().map(|&(eta, visibility)| AverageSummary { eta, visibility }).collect();
        }
        ExperimentOutput::Trace(_) => {}
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub artifact: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub config: RunConfig,
    pub outputs: Vec<OutputFile>,
    pub wall_clock_s: f64,
}

pub fn describe(path: &Path) -> Result<OutputFile> {
    let data = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let digest = Sha256::digest(&data);
    let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(OutputFile {
        file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        bytes: data.len() as u64,
        sha256,
    })
}

/// Writes every result file of `out` into `dir` and returns their paths.
pub fn write_results(
    dir: &Path,
    format: Format,
    cfg: &RunConfig,
    cal: Option<&Calibration>,
    out: &ExperimentOutput,
) -> Result<Vec<PathBuf>> {
    let mut files = vec![write_json(dir, "config.json", cfg)?];
    let storage_period = match out {
        ExperimentOutput::Retrieval(r) => {
            files.push(write_table(dir, "peaks", &peak_records(r), format)?);
            if let Some(h) = &r.histogram {
                files.push(write_table(dir, "histogram", &bin_records(h), format)?);
            }
            if let Some(c) = &r.clicks {
                files.push(write_table(dir, "clicks", &click_records(c), format)?);
            }
            files.push(write_table(dir, "events", &event_records(&r.events), format)?);
            r.storage_period
        }
        ExperimentOutput::Hwp(h) => {
            files.push(write_table(dir, "sweep", &sweep_records(h), format)?);
            h.storage_period
        }
        ExperimentOutput::Trace(t) => {
            files.push(write_table(dir, "trace", &trace_records(t), format)?);
            if let Some(c) = &t.clicks {
                files.push(write_table(dir, "clicks", &click_records(c), format)?);
            }
            files.push(write_table(dir, "events", &event_records(&t.result.event_log), format)?);
            t.storage_period
        }
    };
    files.push(write_json(dir, "summary.json", &summary(cfg, storage_period, cal, out))?);
    Ok(files)
}

/// Validator findings, one line each.
pub fn format_violations(found: &[Violation]) -> Vec<String> {
    found
        .iter()
        .map(|v| {
            let sev = match v.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            format!("{sev}: {}", v.message)
        })
        .collect()
}
