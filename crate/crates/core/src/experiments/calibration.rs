//! Fits the depolarization parameters of a topology to target visibilities.
//!
//! `Table` reproduces each target exactly by giving every stretch of storage
//! cycles its own depolarization: state preparation absorbs the first target,
//! then the cycles between consecutive targets share one value. `Physical`
//! uses one constant per-cycle value and reports how far the targets are from
//! what that can explain.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::components::{BufferTopology, DepolSchedule};
use crate::experiments::sweeps::run_hwp_sweep;
use crate::experiments::{hwp_grid, Basis, ExperimentConfig, ExperimentKind, Mode, Sequential};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    #[default]
    Table,
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisibilityTarget {
    pub eta: u32,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSpec {
    pub mode: CalibrationMode,
    pub targets: Vec<VisibilityTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub mode: CalibrationMode,
    pub prep_error_depol: f64,
    pub depol_per_cycle: DepolSchedule,
    /// Model visibility per target eta with the fitted parameters.
    pub achieved: Vec<(u32, f64)>,
    /// `achieved - target`.
    pub residuals: Vec<(u32, f64)>,
}

/// Average visibility at `eta` for given depolarization parameters.
pub trait VisibilityModel {
    fn visibility(&self, prep_error_depol: f64, depol: &DepolSchedule, eta: u32) -> Result<f64>;
}

/// Runs the analytic HWP sweep pipeline of an experiment configuration.
#[derive(Debug, Clone)]
pub struct AnalyticModel {
    config: ExperimentConfig,
    topology: BufferTopology,
}

impl AnalyticModel {
    pub fn new(config: &ExperimentConfig, topology: &BufferTopology) -> Result<Self> {
        let mut cfg = config.clone();
        cfg.kind = ExperimentKind::HwpSweep;
        cfg.mode = Mode::Analytic;
        cfg.calibration = None;
        if cfg.bases.is_empty() {
            cfg.bases = vec![Basis::Computational, Basis::Logical];
        }
        if crate::experiments::check_angle_coverage(&cfg.hwp_angles_rad).is_err() {
            cfg.hwp_angles_rad = hwp_grid(16);
        }
        Ok(Self { config: cfg, topology: topology.clone() })
    }
}

impl VisibilityModel for AnalyticModel {
    fn visibility(&self, prep_error_depol: f64, depol: &DepolSchedule, eta: u32) -> Result<f64> {
        let topo =
            BufferTopology { prep_error_depol, depol_per_cycle: depol.clone(), ..self.topology.clone() };
        let cfg = ExperimentConfig { eta_list: vec![eta], ..self.config.clone() };
        let sweep = run_hwp_sweep(&cfg, &topo, &Sequential)?;
        sweep.visibility_at(eta).ok_or_else(|| Error::Calibration(format!("no visibility for eta {eta}")))
    }
}

/// `(1 - prep) * Π (1 - p_c)`: the Bloch-vector shrinkage seen by an ideal,
/// noiseless measurement.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClosedFormModel;

impl VisibilityModel for ClosedFormModel {
    fn visibility(&self, prep_error_depol: f64, depol: &DepolSchedule, eta: u32) -> Result<f64> {
        Ok((1.0 - prep_error_depol) * depol.retained(eta.saturating_sub(1)))
    }
}

/// Root of a non-increasing `f` on `[0, 1]`, clamped to the ends when
/// `target` is out of reach.
fn solve_decreasing(f: impl Fn(f64) -> Result<f64>, target: f64) -> Result<f64> {
    if f(0.0)? <= target {
        return Ok(0.0);
    }
    if f(1.0)? >= target {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn golden_min(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let g = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

fn sorted_targets(targets: &[VisibilityTarget]) -> Result<Vec<VisibilityTarget>> {
    if targets.is_empty() {
        return Err(Error::Calibration("no visibility targets".into()));
    }
    for t in targets {
        if t.eta == 0 {
            return Err(Error::Calibration("target eta starts at 1".into()));
        }
        if !(t.visibility > 0.0 && t.visibility <= 1.0) {
            return Err(Error::Calibration(format!(
                "target visibility at eta {} must lie in (0, 1], got {}",
                t.eta, t.visibility
            )));
        }
    }
    let mut ts = targets.to_vec();
    ts.sort_by_key(|t| t.eta);
    let mut out: Vec<VisibilityTarget> = Vec::new();
    for t in ts {
        match out.last() {
            Some(prev) if prev.eta == t.eta => {
                if prev.visibility != t.visibility {
                    return Err(Error::Calibration(format!(
                        "conflicting targets at eta {}: {} and {}",
                        t.eta, prev.visibility, t.visibility
                    )));
                }
            }
            _ => out.push(t),
        }
    }
    Ok(out)
}

/// Fits `prep_error_depol` and `depol_per_cycle` so that `model` reproduces `targets`.
///
/// Table mode needs visibilities that do not increase with eta; a rise cannot
/// come from depolarization and is reported as [`Error::Calibration`].
pub fn calibrate<M: VisibilityModel + ?Sized>(
    targets: &[VisibilityTarget],
    mode: CalibrationMode,
    model: &M,
) -> Result<Calibration> {
    let ts = sorted_targets(targets)?;
    let (prep, schedule) = match mode {
        CalibrationMode::Table => table_fit(&ts, model)?,
        CalibrationMode::Physical => physical_fit(&ts, model)?,
    };
    let mut achieved = Vec::new();
    let mut residuals = Vec::new();
    for t in &ts {
        let v = model.visibility(prep, &schedule, t.eta)?;
        achieved.push((t.eta, v));
        residuals.push((t.eta, v - t.visibility));
    }
    Ok(Calibration { mode, prep_error_depol: prep, depol_per_cycle: schedule, achieved, residuals })
}

fn table_fit<M: VisibilityModel + ?Sized>(
    ts: &[VisibilityTarget],
    model: &M,
) -> Result<(f64, DepolSchedule)> {
    for w in ts.windows(2) {
        if w[1].visibility > w[0].visibility {
            return Err(Error::Calibration(format!(
                "visibility rises from {} at eta {} to {} at eta {}; depolarization can only lower it",
                w[0].visibility, w[0].eta, w[1].visibility, w[1].eta
            )));
        }
    }
    let zero = DepolSchedule::Constant(0.0);
    let first = ts[0];
    let prep = solve_decreasing(|x| model.visibility(x, &zero, first.eta), first.visibility)?;

    let mut table: Vec<f64> = Vec::new();
    let mut covered = first.eta - 1;
    if covered > 0 {
        table.resize(covered as usize, 0.0);
    }
    for t in &ts[1..] {
        let cycles = t.eta - 1;
        let span = (cycles - covered) as usize;
        let trial = |x: f64| {
            let mut tab = table.clone();
            tab.resize(tab.len() + span, x);
            model.visibility(prep, &DepolSchedule::PerCycle(tab), t.eta)
        };
        let p = solve_decreasing(trial, t.visibility)?;
        table.resize(table.len() + span, p);
        covered = cycles;
    }
    let schedule = if table.is_empty() { zero } else { DepolSchedule::PerCycle(table) };
    Ok((prep, schedule))
}

fn physical_fit<M: VisibilityModel + ?Sized>(
    ts: &[VisibilityTarget],
    model: &M,
) -> Result<(f64, DepolSchedule)> {
    const TOL: f64 = 1e-10;
    let sse = |prep: f64, p: f64| -> Result<f64> {
        let s = DepolSchedule::Constant(p);
        let mut acc = 0.0;
        for t in ts {
            let r = model.visibility(prep, &s, t.eta)? - t.visibility;
            acc += r * r;
        }
        Ok(acc)
    };
    let best_prep = |p: f64| golden_min(|prep| sse(prep, p), 0.0, 1.0, TOL);
    let p = golden_min(|p| sse(best_prep(p)?, p), 0.0, 1.0, TOL)?;
    let prep = best_prep(p)?;
    Ok((prep, DepolSchedule::Constant(p)))
}
