use alloc::vec;
use alloc::vec::Vec;

use crate::components::BufferTopology;
use crate::detection::DetectorModel;
use crate::experiments::calibration::{CalibrationMode, CalibrationSpec, VisibilityTarget};
use crate::experiments::{Basis, ExperimentConfig, ExperimentKind};

/// Named starting points for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Preset {
    /// Retrieval-time sweep over eta 1..=8 with the default loss budget.
    Fig2Main,
    /// HWP sweeps at eta 1, 3, 5 in both bases, depolarization calibrated to
    /// measured visibilities.
    Fig2Insets,
    /// Lossless buffer, perfect detectors, no depolarization.
    IdealSystem,
    /// One pulse stored for a single cycle, with the full event log.
    Trace,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Fig2Main, Preset::Fig2Insets, Preset::IdealSystem, Preset::Trace];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig2Main => "fig2-main",
            Preset::Fig2Insets => "fig2-insets",
            Preset::IdealSystem => "ideal-system",
            Preset::Trace => "trace",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::Fig2Main => "retrieval-time histogram for eta = 1..8, decay fit",
            Preset::Fig2Insets => "HWP visibility sweeps at eta = 1, 3, 5 with calibrated depolarization",
            Preset::IdealSystem => "lossless, noiseless buffer; visibilities should be 1",
            Preset::Trace => "single pulse stored for one cycle, full event log",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|p| p.name()).collect()
    }

    pub fn config(self) -> ExperimentConfig {
        let base = ExperimentConfig::default();
        match self {
            Preset::Fig2Main => ExperimentConfig { kind: ExperimentKind::RetrievalSweep, ..base },
            Preset::Fig2Insets => ExperimentConfig {
                kind: ExperimentKind::HwpSweep,
                eta_list: vec![1, 3, 5],
                calibration: Some(CalibrationSpec {
                    mode: CalibrationMode::Table,
                    targets: vec![
                        VisibilityTarget { eta: 1, visibility: 0.955 },
                        VisibilityTarget { eta: 3, visibility: 0.953 },
                        VisibilityTarget { eta: 5, visibility: 0.835 },
                    ],
                }),
                ..base
            },
            Preset::IdealSystem => ExperimentConfig {
                kind: ExperimentKind::HwpSweep,
                eta_list: vec![1, 3, 5],
                bases: vec![Basis::Computational, Basis::Logical],
                detector: DetectorModel::ideal(),
                ..base
            },
            Preset::Trace => ExperimentConfig {
                kind: ExperimentKind::Trace,
                eta_list: vec![2],
                n_triggers: 10_000,
                ..base
            },
        }
    }

    pub fn topology(self) -> BufferTopology {
        match self {
            Preset::IdealSystem => BufferTopology::ideal(),
            _ => BufferTopology::default(),
        }
    }
}
