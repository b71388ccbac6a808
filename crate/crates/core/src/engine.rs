//! Discrete-event propagation of pulse records through the buffer.
//!
//! A pulse enters the Sagnac loop through the circulator. With no drive the loop
//! is a mirror and the pulse heads straight back to the measurement stage. A
//! drive pulse that covers exactly one of the two counter-propagating halves
//! writes a π phase difference and routes the pulse into the storage line, where
//! it bounces between the FBG and the (again mirroring) loop until a second drive
//! routes it out.
//!
//! Events are processed in global time order, ties broken by pulse id and then
//! by insertion order, so a run is bit-for-bit reproducible.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use serde::{Deserialize, Serialize};

use crate::components::{
    db_to_transmission, depolarize, modulator_phase, sagnac_transfer, BufferTopology, Direction, DrivePulse,
    Passage, Port, PulseId, PulseRecord,
};
use crate::error::domain;
use crate::polarization::conjugate;
use crate::Result;

/// Time-ordered, non-overlapping drive pulses.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DriveSchedule {
    pulses: Vec<DrivePulse>,
}

impl DriveSchedule {
    pub fn new(pulses: Vec<DrivePulse>) -> Result<Self> {
        for w in pulses.windows(2) {
            if !(w[1].t_start > w[0].t_start) {
                return Err(domain!("drive pulses must have strictly increasing start times"));
            }
            if w[1].t_start < w[0].end() {
                return Err(domain!("drive pulses at {:e} s and {:e} s overlap", w[0].t_start, w[1].t_start));
            }
        }
        Ok(Self { pulses })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn pulses(&self) -> &[DrivePulse] {
        &self.pulses
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    /// Total phase written onto one modulator passage.
    pub fn phase(&self, passage: &Passage, v_pi: f64) -> f64 {
        self.pulses
            .iter()
            .filter(|d| d.overlap(passage.start, passage.width) > 0.0)
            .map(|d| modulator_phase(Some(d), passage.start, passage.width, v_pi).unwrap_or(0.0))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub max_cycles: u32,
    /// Split descendants below this mean photon number are dropped.
    pub mu_floor: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_cycles: 64, mu_floor: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardReason {
    CycleLimit,
    Negligible,
    /// Light leaking through a partially reflecting FBG.
    FbgTransmission,
}

impl DiscardReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::CycleLimit => "cycle limit",
            DiscardReason::Negligible => "negligible",
            DiscardReason::FbgTransmission => "fbg transmission",
        }
    }
}

/// One component traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub time: f64,
    pub pulse_id: PulseId,
    pub component: &'static str,
    pub port: &'static str,
    pub mu: f64,
    pub cycles: u32,
}

/// Mean-photon-number bookkeeping for one source pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineageAudit {
    pub source_id: PulseId,
    pub source_mu: f64,
    pub retrieved: f64,
    pub discarded: f64,
    /// Lost to insertion losses along the way.
    pub absorbed: f64,
}

impl LineageAudit {
    /// What is left unaccounted for; zero up to rounding.
    pub fn residual(&self) -> f64 {
        self.source_mu - self.retrieved - self.discarded - self.absorbed
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationResult {
    /// Pulses leaving toward the measurement stage, in exit order.
    pub retrieved: Vec<PulseRecord>,
    pub discarded: Vec<(PulseRecord, DiscardReason)>,
    pub event_log: Vec<LogEntry>,
    sources: BTreeMap<PulseId, f64>,
    absorbed: BTreeMap<PulseId, f64>,
}

impl SimulationResult {
    pub fn audit(&self) -> Vec<LineageAudit> {
        let mut out: BTreeMap<PulseId, LineageAudit> = self
            .sources
            .iter()
            .map(|(&id, &mu)| {
                let absorbed = self.absorbed.get(&id).copied().unwrap_or(0.0);
                (id, LineageAudit { source_id: id, source_mu: mu, retrieved: 0.0, discarded: 0.0, absorbed })
            })
            .collect();
        for p in &self.retrieved {
            if let Some(a) = out.get_mut(&p.source_id) {
                a.retrieved += p.mu;
            }
        }
        for (p, _) in &self.discarded {
            if let Some(a) = out.get_mut(&p.source_id) {
                a.discarded += p.mu;
            }
        }
        out.into_values().collect()
    }
}

/// Time for one stored cycle: loop traversal plus storage-line round trip.
pub fn storage_period(topology: &BufferTopology) -> f64 {
    topology.loop_delay() + topology.storage_round_trip()
}

/// Exit time of a pulse that entered at `t_in` and was never stored.
pub fn direct_exit_time(topology: &BufferTopology, t_in: f64) -> f64 {
    t_in + topology.loop_delay()
}

struct Pending {
    pulse: PulseRecord,
    seq: u64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.pulse
            .t
            .total_cmp(&other.pulse.t)
            .then(self.pulse.id.cmp(&other.pulse.id))
            .then(self.seq.cmp(&other.seq))
    }
}

struct Engine<'a> {
    topology: &'a BufferTopology,
    schedule: &'a DriveSchedule,
    limits: Limits,
    queue: BinaryHeap<Reverse<Pending>>,
    seq: u64,
    next_id: PulseId,
    result: SimulationResult,
}

impl Engine<'_> {
    fn push(&mut self, pulse: PulseRecord) {
        self.seq += 1;
        self.queue.push(Reverse(Pending { pulse, seq: self.seq }));
    }

    fn log(&mut self, p: &PulseRecord) {
        self.result.event_log.push(LogEntry {
            time: p.t,
            pulse_id: p.id,
            component: p.port.component(),
            port: p.port.name(),
            mu: p.mu,
            cycles: p.cycles,
        });
    }

    fn attenuate(&mut self, p: &mut PulseRecord, loss_db: f64) {
        if loss_db == 0.0 {
            return;
        }
        let after = p.mu * db_to_transmission(loss_db);
        *self.result.absorbed.entry(p.source_id).or_insert(0.0) += p.mu - after;
        p.mu = after;
    }

    fn discard(&mut self, p: PulseRecord, reason: DiscardReason) {
        self.result.discarded.push((p, reason));
    }

    fn step(&mut self, mut p: PulseRecord) {
        self.log(&p);
        match p.port {
            Port::Source | Port::CirculatorIn => {
                let loss = self.topology.per_element_loss_db.circulator_db;
                self.attenuate(&mut p, loss);
                p.port = Port::LoopFromCirculator;
                self.push(p);
            }
            Port::LoopFromCirculator | Port::LoopFromStorage => self.loop_pass(p),
            Port::StorageLine => self.storage_round_trip(p),
            Port::Measurement => {
                let loss = self.topology.per_element_loss_db.circulator_db;
                self.attenuate(&mut p, loss);
                p.pol = depolarize(&p.pol, self.topology.prep_error_depol);
                self.result.retrieved.push(p);
            }
            Port::Detector(_) => self.result.retrieved.push(p),
        }
    }

    fn loop_pass(&mut self, mut p: PulseRecord) {
        let topo = self.topology;
        let [near, far] = topo.modulator_passages(p.t, p.width);
        let delta = self.schedule.phase(&near, topo.v_pi) - self.schedule.phase(&far, topo.v_pi);
        let (reflect, transmit) = sagnac_transfer(delta);

        self.attenuate(&mut p, topo.loop_pass_loss_db());
        if let Some(u) = &topo.birefringence.loop_fiber {
            p.pol = conjugate(&p.pol, u);
        }
        p.t += topo.loop_delay();

        let (reflect_port, transmit_port) = match p.port {
            Port::LoopFromCirculator => (Port::Measurement, Port::StorageLine),
            _ => (Port::StorageLine, Port::Measurement),
        };

        if p.mu == 0.0 || transmit == 0.0 || reflect == 0.0 {
            p.port = if reflect >= transmit { reflect_port } else { transmit_port };
            self.push(p);
            return;
        }

        let mut second = p.clone();
        second.id = self.next_id;
        self.next_id += 1;
        second.mu = p.mu * transmit;
        second.port = transmit_port;
        p.mu *= reflect;
        p.port = reflect_port;
        for branch in [p, second] {
            if branch.mu < self.limits.mu_floor {
                self.discard(branch, DiscardReason::Negligible);
            } else {
                self.push(branch);
            }
        }
    }

    fn storage_round_trip(&mut self, mut p: PulseRecord) {
        let topo = self.topology;
        if p.cycles >= self.limits.max_cycles {
            self.discard(p, DiscardReason::CycleLimit);
            return;
        }
        let fiber = topo.per_element_loss_db.storage_fiber_db;
        self.attenuate(&mut p, fiber);
        if topo.fbg_reflectivity < 1.0 {
            let leaked = PulseRecord { mu: p.mu * (1.0 - topo.fbg_reflectivity), ..p.clone() };
            p.mu *= topo.fbg_reflectivity;
            if leaked.mu > 0.0 {
                self.discard(leaked, DiscardReason::FbgTransmission);
            }
        }
        self.attenuate(&mut p, fiber);
        p.cycles += 1;
        p.pol = depolarize(&p.pol, topo.depol_per_cycle.for_cycle(p.cycles));
        if let Some(u) = &topo.birefringence.storage_line {
            p.pol = conjugate(&p.pol, u);
        }
        p.t += topo.storage_round_trip();
        p.port = Port::LoopFromStorage;
        self.push(p);
    }
}

/// Propagates `inputs` (time-ordered pulses arriving at the circulator) through
/// the buffer under `schedule`.
pub fn simulate(
    topology: &BufferTopology,
    schedule: &DriveSchedule,
    inputs: &[PulseRecord],
    limits: Limits,
) -> Result<SimulationResult> {
    topology.validate()?;
    if !(limits.mu_floor >= 0.0) {
        return Err(domain!("mu_floor must be non-negative"));
    }
    if inputs.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(domain!("input pulses must be time-ordered"));
    }
    let ids: BTreeSet<PulseId> = inputs.iter().map(|p| p.id).collect();
    if ids.len() != inputs.len() {
        return Err(domain!("input pulse ids must be unique"));
    }
    // re-validate in case the schedule was assembled by hand
    let schedule_checked = DriveSchedule::new(schedule.pulses.clone())?;

    let mut engine = Engine {
        topology,
        schedule: &schedule_checked,
        limits,
        queue: BinaryHeap::new(),
        seq: 0,
        next_id: ids.last().map_or(0, |m| m + 1),
        result: SimulationResult::default(),
    };
    for p in inputs {
        let mut p = p.clone();
        p.source_id = p.id;
        p.port = Port::CirculatorIn;
        engine.result.sources.insert(p.id, p.mu);
        engine.push(p);
    }
    while let Some(Reverse(Pending { pulse, .. })) = engine.queue.pop() {
        engine.step(pulse);
    }
    Ok(engine.result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ViolationKind {
    /// Drive still open when a stored pulse comes back from the FBG.
    ReadoutOnReturn,
    /// Drive covers both counter-propagating halves of one loop pass.
    BothDirections,
    /// Drive touches no optical passage.
    NoOverlap,
}

impl ViolationKind {
    pub fn label(self) -> &'static str {
        match self {
            ViolationKind::ReadoutOnReturn => "a",
            ViolationKind::BothDirections => "b",
            ViolationKind::NoOverlap => "c",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub severity: Severity,
    pub drive_index: usize,
    pub pulse_id: Option<PulseId>,
    pub message: String,
}

#[derive(Debug, Clone, Copy)]
struct TracedPassage {
    pass: u32,
    passage: Passage,
}

/// Modulator passages along the dominant routing path of one pulse.
fn trace_passages(
    topology: &BufferTopology,
    schedule: &DriveSchedule,
    pulse: &PulseRecord,
) -> Vec<TracedPassage> {
    let horizon = schedule.pulses.iter().map(DrivePulse::end).fold(f64::NEG_INFINITY, f64::max);
    let cycle = storage_period(topology);
    let mut out = Vec::new();
    let mut t = pulse.t;
    let mut from_storage = false;
    for pass in 0..=Limits::default().max_cycles {
        let passages = topology.modulator_passages(t, pulse.width);
        out.extend(passages.iter().map(|&passage| TracedPassage { pass, passage }));
        if passages.iter().all(|p| p.start > horizon) {
            break;
        }
        let delta = schedule.phase(&passages[0], topology.v_pi) - schedule.phase(&passages[1], topology.v_pi);
        let (r, tr) = sagnac_transfer(delta);
        let routed = tr > r;
        if routed == from_storage {
            // reflected from the circulator side or routed out of the storage side
            break;
        }
        from_storage = true;
        t += cycle;
    }
    out
}

/// Checks drive timing against the optical passages of `inputs`.
///
/// Errors: (a) a drive still open when the pulse returns from the FBG, (b) a
/// drive covering both halves of one loop pass. Warning: (c) a drive that never
/// meets any passage.
pub fn validate_schedule(
    topology: &BufferTopology,
    schedule: &DriveSchedule,
    inputs: &[PulseRecord],
) -> Vec<Violation> {
    let mut out = Vec::new();
    if schedule.is_empty() {
        return out;
    }
    let traces: Vec<(PulseId, Vec<TracedPassage>)> =
        inputs.iter().map(|p| (p.id, trace_passages(topology, schedule, p))).collect();

    for (i, drive) in schedule.pulses.iter().enumerate() {
        let mut touched_any = false;
        for (id, trace) in &traces {
            let hits: Vec<&TracedPassage> =
                trace.iter().filter(|tp| drive.overlap(tp.passage.start, tp.passage.width) > 0.0).collect();
            if hits.is_empty() {
                continue;
            }
            touched_any = true;
            let passes: BTreeSet<u32> = hits.iter().map(|tp| tp.pass).collect();
            if passes.len() > 1 {
                let first = *passes.iter().next().unwrap_or(&0);
                let returning = hits.iter().find(|tp| tp.pass != first).map(|tp| tp.passage.start);
                out.push(Violation {
                    kind: ViolationKind::ReadoutOnReturn,
                    severity: Severity::Error,
                    drive_index: i,
                    pulse_id: Some(*id),
                    message: format!(
                        "(a) drive {i} [{:.4e} s, {:.4e} s] is still open when pulse {id} returns from the FBG at {:.4e} s",
                        drive.t_start,
                        drive.end(),
                        returning.unwrap_or(f64::NAN)
                    ),
                });
            }
            for pass in &passes {
                let dirs: BTreeSet<Direction> =
                    hits.iter().filter(|tp| tp.pass == *pass).map(|tp| tp.passage.direction).collect();
                if dirs.len() > 1 {
                    out.push(Violation {
                        kind: ViolationKind::BothDirections,
                        severity: Severity::Error,
                        drive_index: i,
                        pulse_id: Some(*id),
                        message: format!(
                            "(b) drive {i} covers both propagation directions of pulse {id} on loop pass {pass}"
                        ),
                    });
                }
            }
        }
        if !touched_any {
            out.push(Violation {
                kind: ViolationKind::NoOverlap,
                severity: Severity::Warning,
                drive_index: i,
                pulse_id: None,
                message: format!("(c) drive {i} at {:.4e} s overlaps no optical passage", drive.t_start),
            });
        }
    }
    out
}

/// Timing of a storage/retrieval drive pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveTiming {
    #[serde(rename = "width_s")]
    pub width: f64,
    #[serde(rename = "voltage_v")]
    pub voltage: f64,
    /// How long before the passage's leading edge the drive opens.
    #[serde(rename = "lead_s")]
    pub lead: f64,
}

impl Default for DriveTiming {
    fn default() -> Self {
        Self { width: DrivePulse::DEFAULT_WIDTH, voltage: DrivePulse::DEFAULT_VOLTAGE, lead: 65e-9 }
    }
}

/// Drives that store a pulse entering at `t_in` and release it after `cycles`
/// storage cycles. Zero cycles is direct reflection: no drive at all.
///
/// Both drives target the far passage, the last one before the pulse leaves
/// the loop, so the storage line round trip separates the drive from the
/// returning pulse.
pub fn storage_schedule(
    topology: &BufferTopology,
    t_in: f64,
    pulse_width: f64,
    cycles: u32,
    timing: &DriveTiming,
) -> Result<DriveSchedule> {
    if cycles == 0 {
        return Ok(DriveSchedule::empty());
    }
    let period = storage_period(topology);
    let drive_at = |pass: u32| -> Result<DrivePulse> {
        let [_, far] = topology.modulator_passages(t_in + pass as f64 * period, pulse_width);
        DrivePulse::new(far.start - timing.lead, timing.width, timing.voltage)
    };
    DriveSchedule::new(alloc::vec![drive_at(0)?, drive_at(cycles)?])
}
