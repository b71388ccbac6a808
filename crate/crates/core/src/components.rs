//! Transfer rules for the optical elements of the buffer.
//!
//! Every element acts on a [`PulseRecord`]: a weak coherent pulse described by its
//! mean photon number, polarization and timing. Elements are passive, so `mu`
//! never increases along a path.

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::domain;
use crate::polarization::{apply_depolarizing, conjugate, JonesOp, PolState};
use crate::{Result, SPEED_OF_LIGHT};

pub type PulseId = u64;

/// Where a pulse record currently sits in the setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Port {
    Source,
    /// Circulator port 1, heading for the routing stage.
    CirculatorIn,
    /// Sagnac coupler, arriving from the circulator side.
    LoopFromCirculator,
    /// Sagnac coupler, arriving from the storage-line side.
    LoopFromStorage,
    /// Entering the storage line toward the FBG.
    StorageLine,
    /// Circulator port 3, heading for the measurement stage.
    Measurement,
    /// One of the two PBS outputs.
    Detector(u8),
}

impl Port {
    pub fn component(self) -> &'static str {
        match self {
            Port::Source => "source",
            Port::CirculatorIn | Port::Measurement => "circulator",
            Port::LoopFromCirculator | Port::LoopFromStorage => "sagnac",
            Port::StorageLine => "storage_line",
            Port::Detector(_) => "pbs",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Port::Source => "out",
            Port::CirculatorIn => "in",
            Port::LoopFromCirculator => "from_circulator",
            Port::LoopFromStorage => "from_storage",
            Port::StorageLine => "to_fbg",
            Port::Measurement => "to_measurement",
            Port::Detector(0) => "port1",
            Port::Detector(_) => "port2",
        }
    }
}

/// One optical pulse in flight.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseRecord {
    pub id: PulseId,
    /// Id of the source pulse this record descends from.
    pub source_id: PulseId,
    /// Arrival time of the pulse center at `port`, seconds.
    pub t: f64,
    /// Temporal width, seconds.
    pub width: f64,
    /// Mean photon number.
    pub mu: f64,
    pub pol: PolState,
    pub port: Port,
    /// Completed storage-line round trips.
    pub cycles: u32,
}

impl PulseRecord {
    pub fn new(id: PulseId, t: f64, width: f64, mu: f64, pol: PolState) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(domain!("pulse width must be positive, got {width}"));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(domain!("mean photon number must be non-negative, got {mu}"));
        }
        if !t.is_finite() {
            return Err(domain!("pulse time must be finite"));
        }
        Ok(Self { id, source_id: id, t, width, mu, pol, port: Port::Source, cycles: 0 })
    }

    /// `[t - width/2, t + width/2]`
    pub fn interval(&self) -> (f64, f64) {
        (self.t - 0.5 * self.width, self.t + 0.5 * self.width)
    }
}

/// Per-pass insertion losses of the passive elements, dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElementLosses {
    /// Each pass through the circulator (1→2 and 2→3 are separate passes).
    pub circulator_db: f64,
    /// Excess loss of one traversal of the Sagnac coupler pair, splices included.
    pub coupler_db: f64,
    /// One traversal of the loop delay fiber.
    pub loop_fiber_db: f64,
    /// One-way traversal of the storage line.
    pub storage_fiber_db: f64,
}

impl Default for ElementLosses {
    fn default() -> Self {
        Self { circulator_db: 0.6, coupler_db: 0.5, loop_fiber_db: 0.2, storage_fiber_db: 0.2 }
    }
}

impl ElementLosses {
    pub const fn zero() -> Self {
        Self { circulator_db: 0.0, coupler_db: 0.0, loop_fiber_db: 0.0, storage_fiber_db: 0.0 }
    }
}

/// Per-cycle depolarization: either one constant or a table indexed by cycle.
///
/// Table entry `i` applies on storage cycle `i + 1`; the last entry repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DepolSchedule {
    Constant(f64),
    PerCycle(Vec<f64>),
}

impl Default for DepolSchedule {
    fn default() -> Self {
        DepolSchedule::Constant(0.0)
    }
}

impl DepolSchedule {
    /// Depolarization applied on the `cycle`-th storage round trip (1-based).
    pub fn for_cycle(&self, cycle: u32) -> f64 {
        match self {
            DepolSchedule::Constant(p) => *p,
            DepolSchedule::PerCycle(table) => match table.len() {
                0 => 0.0,
                n => table[(cycle.max(1) as usize - 1).min(n - 1)],
            },
        }
    }

    /// Bloch-length factor accumulated over `cycles` round trips.
    pub fn retained(&self, cycles: u32) -> f64 {
        (1..=cycles).map(|c| 1.0 - self.for_cycle(c)).product()
    }

    fn values(&self) -> &[f64] {
        match self {
            DepolSchedule::Constant(p) => core::slice::from_ref(p),
            DepolSchedule::PerCycle(t) => t,
        }
    }
}

/// Optional fixed birefringence of the fiber spans. Identity when absent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Birefringence {
    /// Applied once per Sagnac traversal.
    pub loop_fiber: Option<JonesOp>,
    /// Applied once per storage-line round trip.
    pub storage_line: Option<JonesOp>,
}

/// Parameters of the buffer: lengths, losses and imperfections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferTopology {
    pub loop_length_m: f64,
    pub storage_length_m: f64,
    pub group_index: f64,
    /// Distance from the coupler to the modulator along one loop arm.
    pub modulator_offset_m: f64,
    pub v_pi: f64,
    pub modulator_loss_db: f64,
    pub per_element_loss_db: ElementLosses,
    pub fbg_reflectivity: f64,
    pub depol_per_cycle: DepolSchedule,
    /// One-shot depolarization lumping state preparation and measurement errors.
    pub prep_error_depol: f64,
    pub birefringence: Birefringence,
}

impl Default for BufferTopology {
    fn default() -> Self {
        Self {
            loop_length_m: 1000.0,
            storage_length_m: 100.0,
            group_index: 1.468,
            modulator_offset_m: 10.0,
            v_pi: 900.0,
            modulator_loss_db: 0.4,
            per_element_loss_db: ElementLosses::default(),
            fbg_reflectivity: 1.0,
            depol_per_cycle: DepolSchedule::default(),
            prep_error_depol: 0.0,
            birefringence: Birefringence::default(),
        }
    }
}

/// Which arm of the loop a half-pulse takes relative to the modulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    /// Meets the modulator `modulator_offset_m` after entering the loop.
    Near,
    /// Meets the modulator `loop_length_m - modulator_offset_m` after entering.
    Far,
}

/// The interval during which one half of a pulse sits in the modulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Passage {
    pub direction: Direction,
    pub start: f64,
    pub width: f64,
}

impl Passage {
    pub fn end(&self) -> f64 {
        self.start + self.width
    }
}

impl BufferTopology {
    /// An ideal lossless buffer with perfect state preservation.
    pub fn ideal() -> Self {
        Self { modulator_loss_db: 0.0, per_element_loss_db: ElementLosses::zero(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive =
            [("loop_length_m", self.loop_length_m), ("group_index", self.group_index), ("v_pi", self.v_pi)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain!("{name} must be positive, got {v}"));
            }
        }
        if self.group_index < 1.0 {
            return Err(domain!("group_index must be at least 1, got {}", self.group_index));
        }
        if !(self.storage_length_m >= 0.0 && self.storage_length_m.is_finite()) {
            return Err(domain!("storage_length_m must be non-negative, got {}", self.storage_length_m));
        }
        if !(0.0..=self.loop_length_m).contains(&self.modulator_offset_m) {
            return Err(domain!(
                "modulator_offset_m must lie within the loop, got {}",
                self.modulator_offset_m
            ));
        }
        let l = &self.per_element_loss_db;
        let losses = [
            ("modulator_loss_db", self.modulator_loss_db),
            ("per_element_loss_db.circulator_db", l.circulator_db),
            ("per_element_loss_db.coupler_db", l.coupler_db),
            ("per_element_loss_db.loop_fiber_db", l.loop_fiber_db),
            ("per_element_loss_db.storage_fiber_db", l.storage_fiber_db),
        ];
        for (name, v) in losses {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(domain!("{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.fbg_reflectivity) {
            return Err(domain!("fbg_reflectivity must lie in [0, 1], got {}", self.fbg_reflectivity));
        }
        if !(0.0..=1.0).contains(&self.prep_error_depol) {
            return Err(domain!("prep_error_depol must lie in [0, 1], got {}", self.prep_error_depol));
        }
        if let Some(p) = self.depol_per_cycle.values().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(domain!("depol_per_cycle values must lie in [0, 1], got {p}"));
        }
        for (name, op) in [
            ("birefringence.loop_fiber", self.birefringence.loop_fiber),
            ("birefringence.storage_line", self.birefringence.storage_line),
        ] {
            if let Some(u) = op {
                u.require_unitary().map_err(|_| domain!("{name} must be unitary"))?;
            }
        }
        Ok(())
    }

    pub fn loop_delay(&self) -> f64 {
        self.loop_length_m * self.group_index / SPEED_OF_LIGHT
    }

    pub fn storage_one_way_delay(&self) -> f64 {
        self.storage_length_m * self.group_index / SPEED_OF_LIGHT
    }

    pub fn storage_round_trip(&self) -> f64 {
        2.0 * self.storage_length_m * self.group_index / SPEED_OF_LIGHT
    }

    /// Loss of one Sagnac traversal, either reflected or routed.
    pub fn loop_pass_loss_db(&self) -> f64 {
        let l = &self.per_element_loss_db;
        l.loop_fiber_db + l.coupler_db + self.modulator_loss_db
    }

    /// Loss of one FBG reflection, converted from the power reflectance.
    pub fn fbg_loss_db(&self) -> f64 {
        -10.0 * libm::log10(self.fbg_reflectivity)
    }

    /// Loss accrued per storage cycle: storage-line round trip, FBG and one loop pass.
    pub fn cycle_loss_db(&self) -> f64 {
        2.0 * self.per_element_loss_db.storage_fiber_db + self.fbg_loss_db() + self.loop_pass_loss_db()
    }

    /// Loss from circulator input to measurement output without storage.
    pub fn direct_loss_db(&self) -> f64 {
        2.0 * self.per_element_loss_db.circulator_db + self.loop_pass_loss_db()
    }

    /// Modulator passages of both halves of a pulse entering the loop at `t_entry`.
    pub fn modulator_passages(&self, t_entry: f64, width: f64) -> [Passage; 2] {
        let near = self.modulator_offset_m * self.group_index / SPEED_OF_LIGHT;
        let far = (self.loop_length_m - self.modulator_offset_m) * self.group_index / SPEED_OF_LIGHT;
        [
            Passage { direction: Direction::Near, start: t_entry + near - 0.5 * width, width },
            Passage { direction: Direction::Far, start: t_entry + far - 0.5 * width, width },
        ]
    }
}

/// One high-voltage pulse applied to the poled-fiber modulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivePulse {
    #[serde(rename = "t_start_s")]
    pub t_start: f64,
    #[serde(rename = "width_s", default = "DrivePulse::default_width")]
    pub width: f64,
    #[serde(rename = "voltage_v", default = "DrivePulse::default_voltage")]
    pub voltage: f64,
}

impl DrivePulse {
    pub const DEFAULT_WIDTH: f64 = 180e-9;
    pub const DEFAULT_VOLTAGE: f64 = 900.0;

    fn default_width() -> f64 {
        Self::DEFAULT_WIDTH
    }

    fn default_voltage() -> f64 {
        Self::DEFAULT_VOLTAGE
    }

    pub fn new(t_start: f64, width: f64, voltage: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(domain!("drive width must be positive, got {width}"));
        }
        if !(voltage >= 0.0 && voltage.is_finite()) {
            return Err(domain!("drive voltage must be non-negative, got {voltage}"));
        }
        if !t_start.is_finite() {
            return Err(domain!("drive start must be finite"));
        }
        Ok(Self { t_start, width, voltage })
    }

    pub fn end(&self) -> f64 {
        self.t_start + self.width
    }

    /// Length of the overlap between the drive window and `[start, start + width]`.
    pub fn overlap(&self, start: f64, width: f64) -> f64 {
        (self.end().min(start + width) - self.t_start.max(start)).max(0.0)
    }
}

/// `n` identical pulses at `k / rep_rate`, ids `0..n`.
pub fn generate_pulse_train(
    rep_rate: f64,
    pulse_width: f64,
    mu: f64,
    n: usize,
    pol: PolState,
) -> Result<Vec<PulseRecord>> {
    if !(rep_rate > 0.0 && rep_rate.is_finite()) {
        return Err(domain!("repetition rate must be positive, got {rep_rate}"));
    }
    if n == 0 {
        return Err(domain!("pulse train needs at least one pulse"));
    }
    (0..n).map(|k| PulseRecord::new(k as PulseId, k as f64 / rep_rate, pulse_width, mu, pol)).collect()
}

/// Scales `mu` by `10^(-loss_db / 10)`; polarization is untouched.
pub fn attenuate(pulse: &PulseRecord, loss_db: f64) -> Result<PulseRecord> {
    if !(loss_db >= 0.0) {
        return Err(domain!("loss must be non-negative, got {loss_db} dB"));
    }
    Ok(PulseRecord { mu: pulse.mu * db_to_transmission(loss_db), ..pulse.clone() })
}

pub fn db_to_transmission(loss_db: f64) -> f64 {
    libm::pow(10.0, -loss_db / 10.0)
}

/// Group delay of `length_m` of fiber, seconds.
pub fn fiber_delay(length_m: f64, group_index: f64) -> Result<f64> {
    if !(length_m >= 0.0 && length_m.is_finite()) {
        return Err(domain!("fiber length must be non-negative, got {length_m}"));
    }
    if !(group_index >= 1.0 && group_index.is_finite()) {
        return Err(domain!("group index must be at least 1, got {group_index}"));
    }
    Ok(length_m * group_index / SPEED_OF_LIGHT)
}

/// Phase written onto a passage by a drive pulse: `π (V / Vπ) f` with `f` the
/// fraction of the passage covered by the drive window.
pub fn modulator_phase(
    drive: Option<&DrivePulse>,
    passage_start: f64,
    passage_width: f64,
    v_pi: f64,
) -> Result<f64> {
    if !(passage_width > 0.0) {
        return Err(domain!("passage width must be positive, got {passage_width}"));
    }
    Ok(match drive {
        None => 0.0,
        Some(d) => {
            let f = (d.overlap(passage_start, passage_width) / passage_width).clamp(0.0, 1.0);
            PI * (d.voltage / v_pi) * f
        }
    })
}

/// Reflectance and transmittance of a balanced Sagnac loop for a phase
/// difference `delta_phi` between its counter-propagating halves.
pub fn sagnac_transfer(delta_phi: f64) -> (f64, f64) {
    let c = libm::cos(0.5 * delta_phi);
    let r = c * c;
    (r, 1.0 - r)
}

/// Splits a pulse on a PBS preceded by the basis rotation `basis_unitary`.
///
/// Port 1 receives the |H> component of the rotated state, port 2 the |V>
/// component. Each output is left in the corresponding pure state.
pub fn pbs_project(pulse: &PulseRecord, basis_unitary: &JonesOp) -> Result<(PulseRecord, PulseRecord)> {
    basis_unitary.require_unitary()?;
    let rotated = conjugate(&pulse.pol, basis_unitary);
    let m = rotated.matrix();
    let p_h = m[0][0].re.clamp(0.0, 1.0);
    let p_v = m[1][1].re.clamp(0.0, 1.0);
    let first = PulseRecord {
        mu: pulse.mu * p_h,
        pol: PolState::horizontal(),
        port: Port::Detector(0),
        ..pulse.clone()
    };
    let second = PulseRecord {
        mu: pulse.mu * p_v,
        pol: PolState::vertical(),
        port: Port::Detector(1),
        ..pulse.clone()
    };
    Ok((first, second))
}

pub(crate) fn depolarize(pol: &PolState, p: f64) -> PolState {
    if p == 0.0 {
        *pol
    } else {
        // validated against [0, 1] by `BufferTopology::validate`
        apply_depolarizing(pol, p).unwrap_or(*pol)
    }
}
