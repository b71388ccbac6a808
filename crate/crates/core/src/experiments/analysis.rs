use alloc::vec::Vec;

use crate::error::domain;
use crate::{Error, Result};

/// `(c_max - c_min) / (c_max + c_min)`
pub fn visibility(c_max: f64, c_min: f64) -> Result<f64> {
    if c_max == 0.0 && c_min == 0.0 {
        return Err(Error::UndefinedVisibility);
    }
    if !(c_min >= 0.0 && c_max >= c_min) {
        return Err(domain!("visibility needs c_max >= c_min >= 0, got ({c_max}, {c_min})"));
    }
    Ok(((c_max - c_min) / (c_max + c_min)).clamp(0.0, 1.0))
}

/// `mean + a cos 4θ + b sin 4θ`, the shape of a Malus curve under HWP rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MalusFit {
    pub mean: f64,
    pub cos_coeff: f64,
    pub sin_coeff: f64,
}

impl MalusFit {
    pub fn amplitude(&self) -> f64 {
        libm::hypot(self.cos_coeff, self.sin_coeff)
    }

    pub fn extrema(&self) -> (f64, f64) {
        (self.mean + self.amplitude(), (self.mean - self.amplitude()).max(0.0))
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.mean + self.cos_coeff * libm::cos(4.0 * theta) + self.sin_coeff * libm::sin(4.0 * theta)
    }
}

/// Least-squares fit of [`MalusFit`] to `(angle, value)` samples.
pub fn fit_malus(angles: &[f64], values: &[f64]) -> Result<MalusFit> {
    if angles.len() != values.len() || angles.len() < 3 {
        return Err(domain!("Malus fit needs at least 3 paired samples"));
    }
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (&th, &y) in angles.iter().zip(values) {
        let row = [1.0, libm::cos(4.0 * th), libm::sin(4.0 * th)];
        for i in 0..3 {
            atb[i] += row[i] * y;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let x = solve3(ata, atb).ok_or_else(|| domain!("HWP angles do not determine a Malus curve"))?;
    Ok(MalusFit { mean: x[0], cos_coeff: x[1], sin_coeff: x[2] })
}

/// Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col];
        for row in col + 1..3 {
            let f = a[row][col] / pivot_row[col];
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let tail: f64 = (i + 1..3).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - tail) / a[i][i];
    }
    Some(x)
}

/// Number of samples from which extrema come from a fit instead of raw max/min.
pub const FIT_THRESHOLD: usize = 8;

/// Visibility of one detector curve over an HWP sweep.
pub fn curve_visibility(angles: &[f64], values: &[f64]) -> Result<f64> {
    if angles.len() >= FIT_THRESHOLD {
        let (hi, lo) = fit_malus(angles, values)?.extrema();
        visibility(hi, lo)
    } else {
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        visibility(hi, lo.max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Loss per storage cycle, dB.
    pub loss_db_per_cycle: f64,
    /// Fitted count level at zero cycles.
    pub intercept: f64,
    /// RMS deviation of the data from the fitted line, dB.
    pub residual_db: f64,
}

/// Least-squares slope of `10 log10(counts)` against storage cycles (`eta - 1`).
///
/// Peaks with non-positive counts are skipped.
pub fn fit_decay(peaks: &[(u32, f64)]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = peaks
        .iter()
        .filter(|(_, c)| *c > 0.0 && c.is_finite())
        .map(|&(eta, c)| (eta as f64 - 1.0, 10.0 * libm::log10(c)))
        .collect();
    if pts.len() < 2 {
        return Err(domain!("decay fit needs at least two peaks with positive counts"));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(domain!("decay fit needs peaks at two or more distinct cycle counts"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let sse: f64 = pts
        .iter()
        .map(|p| {
            let r = p.1 - icpt - slope * p.0;
            r * r
        })
        .sum();
    Ok(DecayFit {
        loss_db_per_cycle: -slope,
        intercept: libm::pow(10.0, icpt / 10.0),
        residual_db: libm::sqrt(sse / n),
    })
}
