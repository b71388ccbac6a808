use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::components::{pbs_project, BufferTopology, PulseId, PulseRecord};
use crate::detection::{
    click_probability, detected_photons, histogram, sample_channel, Arrival, ClickSet, DetectorId, Histogram,
};
use crate::engine::{
    direct_exit_time, simulate, storage_period, storage_schedule, validate_schedule, DriveSchedule, LogEntry,
    Severity, SimulationResult, Violation,
};
use crate::error::domain;
use crate::experiments::analysis::{curve_visibility, fit_decay, DecayFit};
use crate::experiments::calibration::{calibrate, AnalyticModel, Calibration};
use crate::experiments::{Basis, Executor, ExperimentConfig, ExperimentKind, Mode};
use crate::polarization::{apply_unitary, hwp_matrix, PolState};
use crate::rng::{derive_seed, tag};
use crate::{Error, Result};

/// Requires at least four distinct angles whose grid covers a full Malus
/// period: `(max - min) * n / (n - 1) >= π/2`, `n` the number of distinct angles.
pub fn check_angle_coverage(angles: &[f64]) -> Result<()> {
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(domain!("HWP angles must be finite"));
    }
    let mut sorted: Vec<f64> = angles.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let n = sorted.len();
    if n < 4 {
        return Err(domain!("HWP sweep needs at least 4 distinct angles, got {n}"));
    }
    let span = (sorted[n - 1] - sorted[0]) * n as f64 / (n - 1) as f64;
    if span < FRAC_PI_2 - 1e-9 {
        return Err(domain!("HWP angles span {span:.4} rad, less than the π/2 period of the Malus curve"));
    }
    Ok(())
}

/// Drives that release a pulse entering at `t = 0` with retrieval index `eta`.
pub fn schedule_for_eta(
    config: &ExperimentConfig,
    topology: &BufferTopology,
    eta: u32,
) -> Result<DriveSchedule> {
    if eta == 0 {
        return Err(domain!("retrieval index eta starts at 1"));
    }
    storage_schedule(topology, 0.0, config.pulse_width_s, eta - 1, &config.drive)
}

/// Expected exit time toward the detectors for retrieval index `eta`.
fn exit_time(topology: &BufferTopology, eta: u32) -> f64 {
    direct_exit_time(topology, 0.0) + (eta - 1) as f64 * storage_period(topology)
}

/// Runs the validator and turns error-severity findings into [`Error::Schedule`].
fn checked(
    topology: &BufferTopology,
    schedule: &DriveSchedule,
    inputs: &[PulseRecord],
) -> Result<Vec<Violation>> {
    let found = validate_schedule(topology, schedule, inputs);
    if found.iter().any(|v| v.severity == Severity::Error) {
        return Err(Error::Schedule(found));
    }
    Ok(found)
}

fn gate_bounds(center: f64, gate: f64) -> (f64, f64) {
    (center - 0.5 * gate, center + 0.5 * gate)
}

fn in_gate<'a>(
    res: &'a SimulationResult,
    center: f64,
    gate: f64,
) -> impl Iterator<Item = &'a PulseRecord> + 'a {
    let (lo, hi) = gate_bounds(center, gate);
    res.retrieved.iter().filter(move |p| p.t >= lo && p.t < hi)
}

/// The same arrivals repeated once per trigger.
fn repeat(n: u64, period: f64, per_trigger: &[(f64, f64)]) -> Vec<Arrival> {
    let mut out = Vec::with_capacity(n as usize * per_trigger.len());
    for k in 0..n {
        let t0 = k as f64 * period;
        out.extend(per_trigger.iter().map(|&(t, mu)| Arrival { time: t0 + t, mu }));
    }
    out
}

/// Signal-photon estimate per trigger scaled back to counts: removes the
/// saturation of the click probability and the dark contribution.
fn corrected(counts: f64, config: &ExperimentConfig) -> f64 {
    let n = config.n_triggers as f64;
    n * detected_photons(counts / n, &config.detector, config.gate_width_s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakRow {
    pub eta: u32,
    /// `eta` times the storage period.
    pub retrieval_time: f64,
    /// Exit time after the trigger, as seen by the time tagger.
    pub exit_time: f64,
    /// Mean photon number reaching the detector inside the gate.
    pub mu_out: f64,
    pub expected_counts: f64,
    pub sampled_counts: Option<u64>,
    /// Linearized, dark-subtracted counts; input to the decay fit.
    pub corrected_counts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalSweep {
    pub storage_period: f64,
    pub direct_exit: f64,
    pub peaks: Vec<PeakRow>,
    /// Present with two or more peaks with signal.
    pub decay: Option<DecayFit>,
    /// Clicks folded onto one trigger period; Monte Carlo only.
    pub histogram: Option<Histogram>,
    /// Every click, each eta's acquisition placed after the previous one.
    pub clicks: Option<ClickSet>,
    pub events: Vec<LogEntry>,
    pub warnings: Vec<Violation>,
}

struct RetrievalPoint {
    row: PeakRow,
    clicks: Option<ClickSet>,
    events: Vec<LogEntry>,
    warnings: Vec<Violation>,
}

fn retrieval_point(config: &ExperimentConfig, topology: &BufferTopology, eta: u32) -> Result<RetrievalPoint> {
    let schedule = schedule_for_eta(config, topology, eta)?;
    // distinct ids per eta keep the merged event log unambiguous
    let id: PulseId = (eta as u64) << 32;
    let input = PulseRecord::new(id, 0.0, config.pulse_width_s, config.mu_source, PolState::diagonal())?;
    let warnings = checked(topology, &schedule, core::slice::from_ref(&input))?;
    let res = simulate(topology, &schedule, &[input], config.limits)?;

    let exit = exit_time(topology, eta);
    let mu_out: f64 = in_gate(&res, exit, config.gate_width_s).map(|p| p.mu).sum();
    let n = config.n_triggers;
    let expected = n as f64 * click_probability(mu_out, &config.detector, config.gate_width_s)?;

    let (sampled, clicks) = match config.mode {
        Mode::Analytic => (None, None),
        Mode::MonteCarlo => {
            let period = config.trigger_period();
            let per_trigger: Vec<(f64, f64)> =
                res.retrieved.iter().filter(|p| p.t < period).map(|p| (p.t, p.mu)).collect();
            let arrivals = repeat(n, period, &per_trigger);
            let seed = derive_seed(config.seed, &[tag::RETRIEVAL, eta as u64]);
            let clicks = sample_channel(0, &arrivals, &config.detector, n as f64 * period, seed)?;
            let (lo, hi) = gate_bounds(exit, config.gate_width_s);
            (Some(clicks.count_gated(0, period, lo, hi)), Some(clicks))
        }
    };
    let reported = sampled.map_or(expected, |c| c as f64);
    Ok(RetrievalPoint {
        row: PeakRow {
            eta,
            retrieval_time: eta as f64 * storage_period(topology),
            exit_time: exit,
            mu_out,
            expected_counts: expected,
            sampled_counts: sampled,
            corrected_counts: corrected(reported, config),
        },
        clicks,
        events: res.event_log,
        warnings,
    })
}

/// One single-pulse storage run per entry of `config.eta_list`.
pub fn run_retrieval_sweep<E: Executor + ?Sized>(
    config: &ExperimentConfig,
    topology: &BufferTopology,
    exec: &E,
) -> Result<RetrievalSweep> {
    config.validate(topology)?;
    let points: Vec<RetrievalPoint> = exec
        .map(&config.eta_list, |&eta| retrieval_point(config, topology, eta))
        .into_iter()
        .collect::<Result<_>>()?;

    let period = config.trigger_period();
    let acquisition = config.n_triggers as f64 * period;
    let mut clicks: Option<ClickSet> = None;
    let mut peaks = Vec::new();
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    for (i, p) in points.into_iter().enumerate() {
        if let Some(c) = p.clicks {
            let shifted = c.shifted(i as f64 * acquisition);
            clicks = Some(match clicks {
                None => shifted,
                Some(acc) => acc.merge(shifted),
            });
        }
        peaks.push(p.row);
        events.extend(p.events);
        warnings.extend(p.warnings);
    }

    let histogram = match &clicks {
        None => None,
        Some(c) => {
            let max_eta = config.eta_list.iter().copied().max().unwrap_or(1);
            let horizon = (exit_time(topology, max_eta) + storage_period(topology)).min(period);
            let n_bins = libm::ceil(horizon / config.histogram_bin_s) as usize;
            Some(histogram(&c.folded(period), 0.0, config.histogram_bin_s, n_bins.max(1))?)
        }
    };
    let decay_input: Vec<(u32, f64)> = peaks.iter().map(|r| (r.eta, r.corrected_counts)).collect();
    let decay = fit_decay(&decay_input).ok();
    Ok(RetrievalSweep {
        storage_period: storage_period(topology),
        direct_exit: direct_exit_time(topology, 0.0),
        peaks,
        decay,
        histogram,
        clicks,
        events,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub eta: u32,
    pub basis: Basis,
    pub angle_index: usize,
    pub angle: f64,
    /// PBS output, 1 or 2.
    pub port: u8,
    pub expected_counts: f64,
    pub sampled_counts: Option<u64>,
    /// Sampled counts in Monte Carlo mode, expected counts otherwise.
    pub counts: f64,
    pub corrected_counts: f64,
    /// This port's share of the corrected counts of both ports.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveVisibility {
    pub eta: u32,
    pub basis: Basis,
    pub port_visibility: [f64; 2],
    /// Mean of the two ports.
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HwpSweep {
    pub storage_period: f64,
    pub rows: Vec<SweepRow>,
    pub curves: Vec<CurveVisibility>,
    /// Per eta, mean over bases.
    pub visibility: Vec<(u32, f64)>,
    pub warnings: Vec<Violation>,
}

impl HwpSweep {
    pub fn visibility_at(&self, eta: u32) -> Option<f64> {
        self.visibility.iter().find(|(e, _)| *e == eta).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Copy)]
struct HwpPoint {
    eta: u32,
    basis: Basis,
    angle_index: usize,
    angle: f64,
}

fn hwp_point(
    config: &ExperimentConfig,
    topology: &BufferTopology,
    schedule: &DriveSchedule,
    pt: &HwpPoint,
) -> Result<[SweepRow; 2]> {
    let pol = apply_unitary(&PolState::horizontal(), &hwp_matrix(pt.angle)?)?;
    let input = PulseRecord::new(0, 0.0, config.pulse_width_s, config.mu_source, pol)?;
    let res = simulate(topology, schedule, &[input], config.limits)?;
    let exit = exit_time(topology, pt.eta);
    let unitary = pt.basis.unitary();

    let mut port_arrivals: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    for p in in_gate(&res, exit, config.gate_width_s) {
        let (a, b) = pbs_project(p, &unitary)?;
        port_arrivals[0].push((a.t, a.mu));
        port_arrivals[1].push((b.t, b.mu));
    }
    let n = config.n_triggers;
    let period = config.trigger_period();
    let seed = derive_seed(config.seed, &[tag::HWP, pt.eta as u64, pt.basis.index(), pt.angle_index as u64]);
    let (lo, hi) = gate_bounds(exit, config.gate_width_s);

    let mut rows: [Option<SweepRow>; 2] = [None, None];
    for (i, arrivals) in port_arrivals.iter().enumerate() {
        let mu: f64 = arrivals.iter().map(|a| a.1).sum();
        let expected = n as f64 * click_probability(mu, &config.detector, config.gate_width_s)?;
        let sampled = match config.mode {
            Mode::Analytic => None,
            Mode::MonteCarlo => {
                let det_id = i as DetectorId;
                let clicks = sample_channel(
                    det_id,
                    &repeat(n, period, arrivals),
                    &config.detector,
                    n as f64 * period,
                    seed,
                )?;
                Some(clicks.count_gated(det_id, period, lo, hi))
            }
        };
        let counts = sampled.map_or(expected, |c| c as f64);
        rows[i] = Some(SweepRow {
            eta: pt.eta,
            basis: pt.basis,
            angle_index: pt.angle_index,
            angle: pt.angle,
            port: i as u8 + 1,
            expected_counts: expected,
            sampled_counts: sampled,
            counts,
            corrected_counts: corrected(counts, config),
            normalized: 0.0,
        });
    }
    let [Some(mut r1), Some(mut r2)] = rows else { unreachable!("both ports are filled above") };
    let total = r1.corrected_counts + r2.corrected_counts;
    if total > 0.0 {
        r1.normalized = r1.corrected_counts / total;
        r2.normalized = r2.corrected_counts / total;
    }
    Ok([r1, r2])
}

/// HWP sweep for every `(eta, basis)` of `config`.
///
/// The input state is `HWP(θ)|H⟩`; each point is counted on both PBS outputs.
/// Per-port visibilities come from the normalized, linearized counts, fitted to
/// a Malus curve when there are enough angles.
pub fn run_hwp_sweep<E: Executor + ?Sized>(
    config: &ExperimentConfig,
    topology: &BufferTopology,
    exec: &E,
) -> Result<HwpSweep> {
    config.validate(topology)?;
    if config.bases.is_empty() {
        return Err(domain!("an HWP sweep needs at least one basis"));
    }
    check_angle_coverage(&config.hwp_angles_rad)?;

    let mut schedules = Vec::new();
    let mut warnings = Vec::new();
    for &eta in &config.eta_list {
        let schedule = schedule_for_eta(config, topology, eta)?;
        let probe = PulseRecord::new(0, 0.0, config.pulse_width_s, config.mu_source, PolState::horizontal())?;
        warnings.extend(checked(topology, &schedule, &[probe])?);
        schedules.push((eta, schedule));
    }

    let mut points = Vec::new();
    for &eta in &config.eta_list {
        for &basis in &config.bases {
            for (angle_index, &angle) in config.hwp_angles_rad.iter().enumerate() {
                points.push(HwpPoint { eta, basis, angle_index, angle });
            }
        }
    }
    let results: Vec<[SweepRow; 2]> = exec
        .map(&points, |pt| {
            let schedule = &schedules.iter().find(|(e, _)| *e == pt.eta).expect("schedule per eta").1;
            hwp_point(config, topology, schedule, pt)
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let n_angles = config.hwp_angles_rad.len();
    let mut curves = Vec::new();
    for chunk in results.chunks(n_angles) {
        let (eta, basis) = (chunk[0][0].eta, chunk[0][0].basis);
        let mut port_visibility = [0.0; 2];
        for (port, v) in port_visibility.iter_mut().enumerate() {
            let ys: Vec<f64> = chunk.iter().map(|r| r[port].normalized).collect();
            *v = curve_visibility(&config.hwp_angles_rad, &ys)?;
        }
        curves.push(CurveVisibility {
            eta,
            basis,
            port_visibility,
            visibility: 0.5 * (port_visibility[0] + port_visibility[1]),
        });
    }
    let mut visibility = Vec::new();
    for &eta in &config.eta_list {
        if visibility.iter().any(|(e, _)| *e == eta) {
            continue;
        }
        let vs: Vec<f64> = curves.iter().filter(|c| c.eta == eta).map(|c| c.visibility).collect();
        visibility.push((eta, vs.iter().sum::<f64>() / vs.len() as f64));
    }
    Ok(HwpSweep {
        storage_period: storage_period(topology),
        rows: results.into_iter().flatten().collect(),
        curves,
        visibility,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub source_id: PulseId,
    pub pulse_id: PulseId,
    pub exit_time: f64,
    pub cycles: u32,
    pub mu_out: f64,
    pub expected_counts: f64,
    pub sampled_counts: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub storage_period: f64,
    pub schedule: DriveSchedule,
    pub rows: Vec<TraceRow>,
    pub result: SimulationResult,
    pub clicks: Option<ClickSet>,
    pub warnings: Vec<Violation>,
}

/// Drives for a train: pulse `k` uses `eta_list[k % len]`.
fn train_schedule(
    config: &ExperimentConfig,
    topology: &BufferTopology,
    spacing: f64,
) -> Result<DriveSchedule> {
    let mut drives = Vec::new();
    for k in 0..config.train_length {
        let eta = config.eta_list[k as usize % config.eta_list.len()];
        let t_in = k as f64 * spacing;
        let s = storage_schedule(topology, t_in, config.pulse_width_s, eta - 1, &config.drive)?;
        drives.extend_from_slice(s.pulses());
    }
    drives.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
    DriveSchedule::new(drives)
}

fn train_inputs(config: &ExperimentConfig) -> Result<Vec<PulseRecord>> {
    let spacing = config.trigger_period();
    (0..config.train_length)
        .map(|k| {
            PulseRecord::new(
                k as u64,
                k as f64 * spacing,
                config.pulse_width_s,
                config.mu_source,
                PolState::diagonal(),
            )
        })
        .collect()
}

fn trace_schedule(config: &ExperimentConfig, topology: &BufferTopology) -> Result<DriveSchedule> {
    match &config.schedule {
        Some(drives) => DriveSchedule::new(drives.clone()),
        None => train_schedule(config, topology, config.trigger_period()),
    }
}

/// A drive schedule together with the pulses it is meant for.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedSchedule {
    pub label: String,
    pub schedule: DriveSchedule,
    pub inputs: Vec<PulseRecord>,
}

/// Every schedule a run of `config` would execute: one per eta for sweeps,
/// one for a trace.
pub fn planned_schedules(
    config: &ExperimentConfig,
    topology: &BufferTopology,
) -> Result<Vec<PlannedSchedule>> {
    config.validate(topology)?;
    if config.kind == ExperimentKind::Trace {
        return Ok(alloc::vec![PlannedSchedule {
            label: "trace".into(),
            schedule: trace_schedule(config, topology)?,
            inputs: train_inputs(config)?,
        }]);
    }
    let mut out = Vec::new();
    for &eta in &config.eta_list {
        let input = PulseRecord::new(0, 0.0, config.pulse_width_s, config.mu_source, PolState::diagonal())?;
        out.push(PlannedSchedule {
            label: alloc::format!("eta={eta}"),
            schedule: schedule_for_eta(config, topology, eta)?,
            inputs: alloc::vec![input],
        });
    }
    Ok(out)
}

/// A train of `train_length` diagonal pulses spaced by the trigger period,
/// under `config.schedule` or drives generated from `eta_list`.
///
/// In Monte Carlo mode the whole train repeats `n_triggers` times.
pub fn run_trace<E: Executor + ?Sized>(
    config: &ExperimentConfig,
    topology: &BufferTopology,
    _exec: &E,
) -> Result<Trace> {
    config.validate(topology)?;
    let spacing = config.trigger_period();
    let inputs = train_inputs(config)?;
    let schedule = trace_schedule(config, topology)?;
    let warnings = checked(topology, &schedule, &inputs)?;
    let result = simulate(topology, &schedule, &inputs, config.limits)?;

    let n = config.n_triggers;
    let frame = config.train_length as f64 * spacing;
    let clicks = match config.mode {
        Mode::Analytic => None,
        Mode::MonteCarlo => {
            let per_frame: Vec<(f64, f64)> =
                result.retrieved.iter().filter(|p| p.t < frame).map(|p| (p.t, p.mu)).collect();
            let seed = derive_seed(config.seed, &[tag::RETRIEVAL, 0]);
            Some(sample_channel(0, &repeat(n, frame, &per_frame), &config.detector, n as f64 * frame, seed)?)
        }
    };
    let mut rows = Vec::new();
    for p in &result.retrieved {
        let mu_out: f64 = in_gate(&result, p.t, config.gate_width_s).map(|q| q.mu).sum();
        let expected = n as f64 * click_probability(mu_out, &config.detector, config.gate_width_s)?;
        let sampled = match (&clicks, p.t < frame) {
            (Some(c), true) => {
                let (lo, hi) = gate_bounds(p.t, config.gate_width_s);
                Some(c.count_gated(0, frame, lo, hi))
            }
            _ => None,
        };
        rows.push(TraceRow {
            source_id: p.source_id,
            pulse_id: p.id,
            exit_time: p.t,
            cycles: p.cycles,
            mu_out,
            expected_counts: expected,
            sampled_counts: sampled,
        });
    }
    Ok(Trace { storage_period: storage_period(topology), schedule, rows, result, clicks, warnings })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentOutput {
    Retrieval(RetrievalSweep),
    Hwp(HwpSweep),
    Trace(Trace),
}

impl ExperimentOutput {
    pub fn warnings(&self) -> &[Violation] {
        match self {
            ExperimentOutput::Retrieval(r) => &r.warnings,
            ExperimentOutput::Hwp(h) => &h.warnings,
            ExperimentOutput::Trace(t) => &t.warnings,
        }
    }
}

/// Calibrates (when configured) and runs the experiment selected by `config.kind`.
///
/// Returns the topology actually used, which carries the calibrated
/// depolarization.
pub fn run_experiment<E: Executor + ?Sized>(
    config: &ExperimentConfig,
    topology: &BufferTopology,
    exec: &E,
) -> Result<(BufferTopology, Option<Calibration>, ExperimentOutput)> {
    config.validate(topology)?;
    let mut topo = topology.clone();
    let calibration = match &config.calibration {
        None => None,
        Some(spec) => {
            let model = AnalyticModel::new(config, &topo)?;
            let cal = calibrate(&spec.targets, spec.mode, &model)?;
            topo.prep_error_depol = cal.prep_error_depol;
            topo.depol_per_cycle = cal.depol_per_cycle.clone();
            Some(cal)
        }
    };
    let out = match config.kind {
        ExperimentKind::RetrievalSweep => {
            ExperimentOutput::Retrieval(run_retrieval_sweep(config, &topo, exec)?)
        }
        ExperimentKind::HwpSweep => ExperimentOutput::Hwp(run_hwp_sweep(config, &topo, exec)?),
        ExperimentKind::Trace => ExperimentOutput::Trace(run_trace(config, &topo, exec)?),
    };
    Ok((topo, calibration, out))
}
