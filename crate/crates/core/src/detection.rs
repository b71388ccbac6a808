//! Click statistics of weak coherent pulses on SNSPDs.
//!
//! A coherent pulse with mean photon number `mu` clicks a detector of
//! efficiency `η` with probability `1 - exp(-mu η)`. Dark counts arrive as a
//! Poisson process. Detectors are non-paralyzable: a click is lost when it
//! falls within the dead time of the previous recorded click.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::domain;
use crate::rng::{substream, tag};
use crate::Result;

pub type DetectorId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorModel {
    pub efficiency: f64,
    /// Hz
    pub dark_rate: f64,
    /// s
    pub dead_time: f64,
    /// Gaussian timing jitter, standard deviation in s.
    pub jitter_sigma: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self { efficiency: 0.90, dark_rate: 100.0, dead_time: 50e-9, jitter_sigma: 50e-12 }
    }
}

impl DetectorModel {
    /// Unit efficiency, no darks, no dead time, no jitter.
    pub fn ideal() -> Self {
        Self { efficiency: 1.0, dark_rate: 0.0, dead_time: 0.0, jitter_sigma: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(domain!("detector efficiency must lie in [0, 1], got {}", self.efficiency));
        }
        for (name, v) in [
            ("dark_rate", self.dark_rate),
            ("dead_time", self.dead_time),
            ("jitter_sigma", self.jitter_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(domain!("detector {name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Probability of at least one click within `window` seconds around a pulse
/// carrying `mu` photons, signal and darks combined.
pub fn click_probability(mu: f64, det: &DetectorModel, window: f64) -> Result<f64> {
    det.validate()?;
    if !(mu >= 0.0) {
        return Err(domain!("mean photon number must be non-negative, got {mu}"));
    }
    if !(window >= 0.0) {
        return Err(domain!("detection window must be non-negative, got {window}"));
    }
    let no_click = libm::exp(-mu * det.efficiency - det.dark_rate * window);
    Ok((1.0 - no_click).clamp(0.0, 1.0))
}

/// Inverse of [`click_probability`]: the mean number of detected signal photons
/// per pulse implied by a click fraction, with the dark contribution removed.
///
/// Clamped at zero; a click fraction of one maps to infinity.
pub fn detected_photons(click_fraction: f64, det: &DetectorModel, window: f64) -> f64 {
    let f = click_fraction.clamp(0.0, 1.0);
    (-libm::log1p(-f) - det.dark_rate * window).max(0.0)
}

/// `n_reps * click_probability` per pulse.
pub fn expected_counts(mus: &[f64], det: &DetectorModel, n_reps: u64, window: f64) -> Result<Vec<f64>> {
    mus.iter().map(|&mu| click_probability(mu, det, window).map(|p| n_reps as f64 * p)).collect()
}

/// A pulse arriving at a detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Click {
    pub time: f64,
    pub detector: DetectorId,
}

/// `t` reduced into `[0, period)`.
pub fn fold(t: f64, period: f64) -> f64 {
    let r = libm::fmod(t, period);
    if r < 0.0 {
        r + period
    } else {
        r
    }
}

/// Detector clicks sorted by time, then detector id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClickSet {
    clicks: Vec<Click>,
}

impl ClickSet {
    pub fn from_clicks(mut clicks: Vec<Click>) -> Self {
        clicks.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.detector.cmp(&b.detector)));
        Self { clicks }
    }

    pub fn clicks(&self) -> &[Click] {
        &self.clicks
    }

    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    pub fn merge(self, other: ClickSet) -> ClickSet {
        let mut all = self.clicks;
        all.extend(other.clicks);
        ClickSet::from_clicks(all)
    }

    pub fn on_detector(&self, detector: DetectorId) -> impl Iterator<Item = &Click> + '_ {
        self.clicks.iter().filter(move |c| c.detector == detector)
    }

    /// Clicks of `detector` whose time modulo `period` falls in `[lo, hi)`.
    pub fn count_gated(&self, detector: DetectorId, period: f64, lo: f64, hi: f64) -> u64 {
        self.on_detector(detector)
            .filter(|c| {
                let phase = fold(c.time, period);
                phase >= lo && phase < hi
            })
            .count() as u64
    }

    /// A copy with every time folded into `[0, period)`.
    pub fn folded(&self, period: f64) -> ClickSet {
        ClickSet::from_clicks(
            self.clicks.iter().map(|c| Click { time: fold(c.time, period), ..*c }).collect(),
        )
    }

    pub fn shifted(&self, offset: f64) -> ClickSet {
        ClickSet { clicks: self.clicks.iter().map(|c| Click { time: c.time + offset, ..*c }).collect() }
    }
}

/// Monte Carlo clicks of one detector channel over `[0, acquisition)`.
///
/// Each arrival draws from its own substream `(seed, SIGNAL, detector, index)`,
/// dark counts from `(seed, DARK, detector)`, so the outcome is fixed by the seed
/// regardless of how repetitions are scheduled.
pub fn sample_channel(
    detector: DetectorId,
    pulses: &[Arrival],
    det: &DetectorModel,
    acquisition: f64,
    seed: u64,
) -> Result<ClickSet> {
    det.validate()?;
    if !(acquisition >= 0.0 && acquisition.is_finite()) {
        return Err(domain!("acquisition time must be non-negative, got {acquisition}"));
    }
    if let Some(p) = pulses.iter().find(|p| !(p.time >= 0.0 && p.time < acquisition) || !(p.mu >= 0.0)) {
        return Err(domain!(
            "pulse at {} s with mu {} lies outside the acquisition window [0, {acquisition})",
            p.time,
            p.mu
        ));
    }
    let jitter = Normal::new(0.0, det.jitter_sigma).map_err(|_| domain!("invalid jitter"))?;
    let mut raw = Vec::new();
    for (i, p) in pulses.iter().enumerate() {
        let p_click = 1.0 - libm::exp(-p.mu * det.efficiency);
        if p_click <= 0.0 {
            continue;
        }
        let mut rng = substream(seed, &[tag::SIGNAL, detector as u64, i as u64]);
        if rng.random::<f64>() < p_click {
            let dt = if det.jitter_sigma > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
            raw.push(Click { time: p.time + dt, detector });
        }
    }
    let mean_darks = det.dark_rate * acquisition;
    if mean_darks > 0.0 {
        let mut rng = substream(seed, &[tag::DARK, detector as u64]);
        let n =
            Poisson::new(mean_darks).map_err(|_| domain!("invalid dark count mean"))?.sample(&mut rng) as u64;
        for _ in 0..n {
            raw.push(Click { time: rng.random::<f64>() * acquisition, detector });
        }
    }
    raw.sort_by(|a, b| a.time.total_cmp(&b.time));

    let mut kept: Vec<Click> = Vec::with_capacity(raw.len());
    for c in raw {
        match kept.last() {
            Some(last) if c.time - last.time < det.dead_time => {}
            _ => kept.push(c),
        }
    }
    Ok(ClickSet { clicks: kept })
}

/// Single-detector form of [`sample_channel`], detector id 0.
pub fn sample_clicks(
    pulses: &[Arrival],
    det: &DetectorModel,
    acquisition: f64,
    seed: u64,
) -> Result<ClickSet> {
    sample_channel(0, pulses, det, acquisition, seed)
}

/// Time-binned clicks. Bins are left-closed, right-open.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub t0: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
    /// Clicks before `t0`.
    pub underflow: u64,
    /// Clicks at or after `t0 + n_bins * bin_width`.
    pub overflow: u64,
}

impl Histogram {
    pub fn new(t0: f64, bin_width: f64, n_bins: usize) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(domain!("bin width must be positive, got {bin_width}"));
        }
        if n_bins == 0 {
            return Err(domain!("histogram needs at least one bin"));
        }
        Ok(Self { t0, bin_width, counts: alloc::vec![0; n_bins], underflow: 0, overflow: 0 })
    }

    pub fn bin_start(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.bin_width
    }

    /// Bin index of `t`, exact at bin boundaries.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let mut k = libm::floor((t - self.t0) / self.bin_width);
        if self.t0 + (k + 1.0) * self.bin_width <= t {
            k += 1.0;
        } else if self.t0 + k * self.bin_width > t {
            k -= 1.0;
        }
        (k >= 0.0 && k < self.counts.len() as f64).then_some(k as usize)
    }

    pub fn add(&mut self, t: f64) {
        match self.index_of(t) {
            Some(k) => self.counts[k] += 1,
            None if t < self.t0 => self.underflow += 1,
            None => self.overflow += 1,
        }
    }

    pub fn out_of_range(&self) -> u64 {
        self.underflow + self.overflow
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.out_of_range()
    }
}

pub fn histogram(clicks: &ClickSet, t0: f64, bin_width: f64, n_bins: usize) -> Result<Histogram> {
    let mut h = Histogram::new(t0, bin_width, n_bins)?;
    for c in clicks.clicks() {
        h.add(c.time);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;
    use alloc::vec;
    use proptest::prelude::*;

    fn no_darks() -> DetectorModel {
        DetectorModel { dark_rate: 0.0, ..DetectorModel::default() }
    }

    #[test]
    fn click_probability_examples() {
        assert_eq!(click_probability(0.0, &no_darks(), 50e-9).unwrap(), 0.0);
        // 1 - e^(-0.09)
        let p = click_probability(0.1, &no_darks(), 50e-9).unwrap();
        assert!((p - 0.086_068_815).abs() < 1e-8);
        assert!(click_probability(1e3, &no_darks(), 0.0).unwrap() > 1.0 - 1e-12);
        assert!(matches!(click_probability(-0.1, &no_darks(), 0.0), Err(Error::Domain(_))));
        assert!(matches!(click_probability(0.1, &no_darks(), -1.0), Err(Error::Domain(_))));
        let bad = DetectorModel { efficiency: 1.1, ..DetectorModel::default() };
        assert!(click_probability(0.1, &bad, 0.0).is_err());
    }

    #[test]
    fn dark_only_probability() {
        let det = DetectorModel::default();
        let p = click_probability(0.0, &det, 50e-9).unwrap();
        assert!((p - (1.0 - libm::exp(-100.0 * 50e-9))).abs() < 1e-18);
    }

    #[test]
    fn detected_photons_inverts_click_probability() {
        let det = DetectorModel::default();
        for mu in [0.0, 1e-4, 0.05, 0.3, 2.0] {
            let p = click_probability(mu, &det, 50e-9).unwrap();
            assert!((detected_photons(p, &det, 50e-9) - mu * det.efficiency).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_count_examples() {
        let det = no_darks();
        assert_eq!(expected_counts(&[0.1, 0.2], &det, 0, 0.0).unwrap(), vec![0.0, 0.0]);
        let e = expected_counts(&[0.1], &det, 100_000, 0.0).unwrap();
        assert!((e[0] - 8606.88).abs() < 0.01);
        let e = expected_counts(&[1e-4, 3e-4], &det, 1_000_000, 0.0).unwrap();
        assert!((e[1] / e[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let det = DetectorModel::default();
        let pulses: Vec<Arrival> = (0..2000).map(|k| Arrival { time: k as f64 * 1e-3, mu: 0.3 }).collect();
        let a = sample_clicks(&pulses, &det, 2.0, 11).unwrap();
        let b = sample_clicks(&pulses, &det, 2.0, 11).unwrap();
        let c = sample_clicks(&pulses, &det, 2.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn blind_detector_sees_nothing() {
        let det = DetectorModel { efficiency: 0.0, dark_rate: 0.0, ..DetectorModel::default() };
        let pulses: Vec<Arrival> = (0..100).map(|k| Arrival { time: k as f64, mu: 5.0 }).collect();
        assert!(sample_clicks(&pulses, &det, 100.0, 1).unwrap().is_empty());
    }

    #[test]
    fn million_pulse_click_count_matches_binomial() {
        let det = no_darks();
        let n = 1_000_000u64;
        let pulses: Vec<Arrival> = (0..n).map(|k| Arrival { time: k as f64 * 1e-3, mu: 0.1 }).collect();
        let clicks = sample_clicks(&pulses, &det, n as f64 * 1e-3, 5).unwrap();
        let p = 1.0 - libm::exp(-0.09);
        let mean = n as f64 * p;
        let sigma = libm::sqrt(n as f64 * p * (1.0 - p));
        assert!((sigma - 280.2).abs() < 0.5);
        assert!((clicks.len() as f64 - mean).abs() < 5.0 * sigma);
    }

    #[test]
    fn dead_time_suppresses_close_clicks() {
        let det = DetectorModel { efficiency: 1.0, dark_rate: 0.0, dead_time: 50e-9, jitter_sigma: 0.0 };
        let pulses = [
            Arrival { time: 0.0, mu: 100.0 },
            Arrival { time: 20e-9, mu: 100.0 },
            Arrival { time: 60e-9, mu: 100.0 },
        ];
        let clicks = sample_clicks(&pulses, &det, 1e-6, 0).unwrap();
        let t: Vec<f64> = clicks.clicks().iter().map(|c| c.time).collect();
        assert_eq!(t, [0.0, 60e-9]);
    }

    #[test]
    fn rejects_pulses_outside_acquisition() {
        let det = DetectorModel::default();
        assert!(sample_clicks(&[Arrival { time: 2.0, mu: 0.1 }], &det, 1.0, 0).is_err());
    }

    #[test]
    fn histogram_conventions() {
        let clicks = ClickSet::from_clicks(vec![
            Click { time: 1.0 + 3.0 * 0.1, detector: 0 },
            Click { time: 0.5, detector: 0 },
            Click { time: 5.0, detector: 0 },
        ]);
        let h = histogram(&clicks, 1.0, 0.1, 10).unwrap();
        assert_eq!(h.counts[3], 1);
        assert_eq!(h.underflow, 1);
        assert_eq!(h.overflow, 1);
        assert_eq!(h.total(), 3);

        let empty = histogram(&ClickSet::default(), 0.0, 1.0, 4).unwrap();
        assert_eq!(empty.counts, vec![0; 4]);
        assert!(histogram(&clicks, 0.0, 0.0, 4).is_err());
        assert!(histogram(&clicks, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn boundaries_are_left_closed_for_awkward_widths() {
        let h = Histogram::new(0.3, 0.1, 100).unwrap();
        for k in 0..100 {
            assert_eq!(h.index_of(0.3 + k as f64 * 0.1), Some(k));
        }
    }

    #[test]
    fn retrieved_peak_spacing_in_bins() {
        let period = 5.876_065e-6;
        let clicks =
            ClickSet::from_clicks((1..=8).map(|k| Click { time: k as f64 * period, detector: 0 }).collect());
        let h = histogram(&clicks, 0.0, 100e-9, 600).unwrap();
        let nz: Vec<usize> = (0..600).filter(|&k| h.counts[k] > 0).collect();
        assert_eq!(nz.len(), 8);
        for w in nz.windows(2) {
            assert!((58..=59).contains(&(w[1] - w[0])));
        }
    }

    proptest! {
        #[test]
        fn histogram_conserves_clicks(times in proptest::collection::vec(-5.0f64..15.0, 0..200),
                                      t0 in -1.0f64..1.0, bw in 0.01f64..1.0, n in 1usize..50) {
            let clicks = ClickSet::from_clicks(times.iter().map(|&t| Click { time: t, detector: 0 }).collect());
            let h = histogram(&clicks, t0, bw, n).unwrap();
            prop_assert_eq!(h.total(), times.len() as u64);
        }

        #[test]
        fn click_probability_is_monotone(mu in 0.0f64..5.0, d in 0.0f64..1.0, eff in 0.0f64..=1.0) {
            let det = DetectorModel { efficiency: eff, ..DetectorModel::default() };
            let p = click_probability(mu, &det, 50e-9).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!(click_probability(mu + d, &det, 50e-9).unwrap() >= p);
            let more_eff = DetectorModel { efficiency: (eff + d).min(1.0), ..det };
            prop_assert!(click_probability(mu, &more_eff, 50e-9).unwrap() >= p);
            let darker = DetectorModel { dark_rate: det.dark_rate + d * 1e6, ..det };
            prop_assert!(click_probability(mu, &darker, 50e-9).unwrap() >= p);
        }

        #[test]
        fn dead_time_is_respected(seed in 0u64..1000) {
            let det = DetectorModel { dark_rate: 5e6, ..DetectorModel::default() };
            let pulses: Vec<Arrival> = (0..200).map(|k| Arrival { time: k as f64 * 30e-9, mu: 2.0 }).collect();
            let clicks = sample_clicks(&pulses, &det, 1e-5, seed).unwrap();
            for w in clicks.clicks().windows(2) {
                prop_assert!(w[1].time - w[0].time >= det.dead_time);
            }
        }
    }
}
