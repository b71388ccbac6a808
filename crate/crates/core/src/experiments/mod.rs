//! Experiment drivers: retrieval-time sweeps, HWP visibility sweeps, single
//! traces, plus the analysis and calibration built on top of them.
//!
//! Everything here is deterministic given [`ExperimentConfig::seed`]. Work is
//! split into independent points and handed to an [`Executor`]; each point
//! draws from its own random substream, so a parallel executor produces the
//! same bits as [`Sequential`].

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::components::{BufferTopology, DrivePulse};
use crate::detection::DetectorModel;
use crate::engine::{DriveTiming, Limits};
use crate::error::domain;
use crate::polarization::{hwp_matrix, JonesOp};
use crate::Result;

pub mod analysis;
pub mod calibration;
mod presets;
mod sweeps;

pub use analysis::{curve_visibility, fit_decay, fit_malus, visibility, DecayFit, MalusFit};
pub use calibration::{
    calibrate, AnalyticModel, Calibration, CalibrationMode, CalibrationSpec, ClosedFormModel,
    VisibilityModel, VisibilityTarget,
};
pub use presets::Preset;
pub use sweeps::{
    check_angle_coverage, planned_schedules, run_experiment, run_hwp_sweep, run_retrieval_sweep, run_trace,
    schedule_for_eta, CurveVisibility, ExperimentOutput, HwpSweep, PeakRow, PlannedSchedule, RetrievalSweep,
    SweepRow, Trace, TraceRow,
};

/// Measurement basis in front of the PBS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    /// H/V, no polarization controller.
    Computational,
    /// D/A, controller acting as a half-wave plate at π/8.
    Logical,
}

impl Basis {
    pub fn name(self) -> &'static str {
        match self {
            Basis::Computational => "computational",
            Basis::Logical => "logical",
        }
    }

    /// Unitary applied before the PBS.
    pub fn unitary(self) -> JonesOp {
        match self {
            Basis::Computational => JonesOp::identity(),
            Basis::Logical => hwp_matrix(PI / 8.0).unwrap_or_else(|_| JonesOp::identity()),
        }
    }

    pub(crate) fn index(self) -> u64 {
        match self {
            Basis::Computational => 0,
            Basis::Logical => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Sampled clicks.
    #[default]
    MonteCarlo,
    /// Expected counts only, no sampling.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// One single-pulse run per entry of `eta_list`, single detector, no PBS.
    #[default]
    RetrievalSweep,
    /// HWP angle sweep per `(eta, basis)` with the PBS and two detectors.
    HwpSweep,
    /// A train of `train_length` pulses under an explicit or generated schedule.
    Trace,
}

/// `n` angles evenly spaced over `[0, π/2)`.
pub fn hwp_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * PI / (2.0 * n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub mode: Mode,
    pub seed: u64,
    /// Mean photon number per source pulse.
    pub mu_source: f64,
    pub n_triggers: u64,
    pub rep_rate_hz: f64,
    pub pulse_width_s: f64,
    /// Coincidence gate around each expected exit time.
    pub gate_width_s: f64,
    /// Retrieval index: a pulse with index `eta` leaves after `eta - 1` storage cycles.
    pub eta_list: Vec<u32>,
    pub hwp_angles_rad: Vec<f64>,
    pub bases: Vec<Basis>,
    pub drive: DriveTiming,
    /// Explicit drive schedule for traces; generated from `eta_list` when absent.
    pub schedule: Option<Vec<DrivePulse>>,
    /// Pulses per trace.
    pub train_length: u32,
    pub detector: DetectorModel,
    pub histogram_bin_s: f64,
    pub limits: Limits,
    pub calibration: Option<CalibrationSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::RetrievalSweep,
            mode: Mode::MonteCarlo,
            seed: 0x5eed,
            mu_source: 0.1,
            n_triggers: 60_000,
            rep_rate_hz: 1_000.0,
            pulse_width_s: 50e-9,
            gate_width_s: 50e-9,
            eta_list: (1..=8).collect(),
            hwp_angles_rad: hwp_grid(16),
            bases: alloc::vec![Basis::Computational, Basis::Logical],
            drive: DriveTiming::default(),
            schedule: None,
            train_length: 1,
            detector: DetectorModel::default(),
            histogram_bin_s: 100e-9,
            limits: Limits::default(),
            calibration: None,
        }
    }
}

impl ExperimentConfig {
    pub fn trigger_period(&self) -> f64 {
        1.0 / self.rep_rate_hz
    }

    /// Checks parameter domains and that every expected exit fits inside one
    /// trigger period of `topology`.
    pub fn validate(&self, topology: &BufferTopology) -> Result<()> {
        topology.validate()?;
        self.detector.validate()?;
        if !(self.mu_source >= 0.0 && self.mu_source.is_finite()) {
            return Err(domain!("mu_source must be non-negative, got {}", self.mu_source));
        }
        if self.n_triggers == 0 {
            return Err(domain!("n_triggers must be at least 1"));
        }
        for (name, v) in [
            ("rep_rate_hz", self.rep_rate_hz),
            ("pulse_width_s", self.pulse_width_s),
            ("gate_width_s", self.gate_width_s),
            ("histogram_bin_s", self.histogram_bin_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain!("{name} must be positive, got {v}"));
            }
        }
        if self.eta_list.is_empty() {
            return Err(domain!("eta_list is empty"));
        }
        if let Some(bad) = self.eta_list.iter().find(|&&e| e == 0) {
            return Err(domain!("retrieval index eta starts at 1, got {bad}"));
        }
        if let Some(&max_eta) = self.eta_list.iter().max() {
            if max_eta - 1 > self.limits.max_cycles {
                return Err(domain!(
                    "eta {max_eta} needs {} storage cycles but limits.max_cycles is {}",
                    max_eta - 1,
                    self.limits.max_cycles
                ));
            }
            let last_exit = crate::engine::direct_exit_time(topology, 0.0)
                + (max_eta - 1) as f64 * crate::engine::storage_period(topology)
                + 0.5 * self.gate_width_s;
            if last_exit >= self.trigger_period() {
                return Err(domain!(
                    "retrieval at eta {max_eta} ({last_exit:.3e} s) does not fit in the trigger period {:.3e} s",
                    self.trigger_period()
                ));
            }
        }
        if self.kind == ExperimentKind::HwpSweep {
            if self.bases.is_empty() {
                return Err(domain!("an HWP sweep needs at least one basis"));
            }
            check_angle_coverage(&self.hwp_angles_rad)?;
        }
        if self.schedule.is_some() && self.kind != ExperimentKind::Trace {
            return Err(domain!("an explicit drive schedule applies only to trace experiments"));
        }
        if self.kind == ExperimentKind::Trace && self.train_length == 0 {
            return Err(domain!("train_length must be at least 1"));
        }
        Ok(())
    }
}

/// Runs independent work items. Implementations may run items concurrently but
/// must return results in input order.
pub trait Executor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.iter().map(f).collect()
    }
}

/// Human-readable label for a list of etas, e.g. `1,3,5`.
pub fn eta_label(etas: &[u32]) -> String {
    let mut s = String::new();
    for (i, e) in etas.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&alloc::format!("{e}"));
    }
    s
}
