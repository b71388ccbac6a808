//! Exact 2x2 polarization algebra in the {|H>, |V>} basis.
//!
//! States are density matrices so that pure and depolarized light share one
//! representation. Optical elements are Jones matrices acting by conjugation.

use core::ops::Mul;

pub use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::domain;
use crate::{Error, Result, ALGEBRA_TOL, INPUT_TOL};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Row-major 2x2 complex matrix.
pub type Mat2 = [[Complex64; 2]; 2];

fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn adjoint(a: &Mat2) -> Mat2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

fn max_abs_diff(a: &Mat2, b: &Mat2) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            worst = worst.max((a[i][j] - b[i][j]).norm());
        }
    }
    worst
}

/// Eigenvalues of a 2x2 Hermitian matrix, ascending.
fn hermitian_eigenvalues(m: &Mat2) -> [f64; 2] {
    let a = m[0][0].re;
    let d = m[1][1].re;
    let b = m[0][1];
    let mean = 0.5 * (a + d);
    let half_gap = libm::sqrt(0.25 * (a - d) * (a - d) + b.norm_sqr());
    [mean - half_gap, mean + half_gap]
}

/// A two-component Jones vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JonesVector(pub [Complex64; 2]);

impl JonesVector {
    pub fn new(h: Complex64, v: Complex64) -> Self {
        Self([h, v])
    }

    pub fn horizontal() -> Self {
        Self([ONE, ZERO])
    }

    pub fn vertical() -> Self {
        Self([ZERO, ONE])
    }

    /// (|H> + |V>) / sqrt(2)
    pub fn diagonal() -> Self {
        let s = Complex64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self([s, s])
    }

    /// (|H> - |V>) / sqrt(2)
    pub fn antidiagonal() -> Self {
        let s = Complex64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self([s, -s])
    }

    /// Linear polarization at `angle` radians from horizontal.
    pub fn linear(angle: f64) -> Self {
        Self([Complex64::new(libm::cos(angle), 0.0), Complex64::new(libm::sin(angle), 0.0)])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0[0].norm_sqr() + self.0[1].norm_sqr()
    }

    /// The orthogonal partner, `(-b*, a*)`.
    pub fn orthogonal(&self) -> Self {
        Self([-self.0[1].conj(), self.0[0].conj()])
    }
}

/// A 2x2 Jones matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JonesOp {
    pub m: Mat2,
}

impl JonesOp {
    pub const fn new(m: Mat2) -> Self {
        Self { m }
    }

    pub const fn identity() -> Self {
        Self { m: [[ONE, ZERO], [ZERO, ONE]] }
    }

    pub fn adjoint(&self) -> Self {
        Self { m: adjoint(&self.m) }
    }

    /// Deviation of `m m†` from the identity, as a max-abs element norm.
    pub fn unitarity_error(&self) -> f64 {
        max_abs_diff(&matmul(&self.m, &adjoint(&self.m)), &Self::identity().m)
    }

    pub fn is_unitary(&self) -> bool {
        self.unitarity_error() <= ALGEBRA_TOL
    }

    /// Largest singular value; at most one for a passive element.
    pub fn max_singular_value(&self) -> f64 {
        let gram = matmul(&adjoint(&self.m), &self.m);
        libm::sqrt(hermitian_eigenvalues(&gram)[1].max(0.0))
    }

    pub fn apply(&self, v: &JonesVector) -> JonesVector {
        JonesVector([
            self.m[0][0] * v.0[0] + self.m[0][1] * v.0[1],
            self.m[1][0] * v.0[0] + self.m[1][1] * v.0[1],
        ])
    }

    pub(crate) fn require_unitary(&self) -> Result<()> {
        let err = self.unitarity_error();
        if err.is_finite() && err <= ALGEBRA_TOL {
            Ok(())
        } else {
            Err(Error::Contract(alloc::format!("matrix is not unitary (|U U^dagger - I| = {err:e})")))
        }
    }
}

impl Mul for JonesOp {
    type Output = JonesOp;

    fn mul(self, rhs: JonesOp) -> JonesOp {
        JonesOp { m: matmul(&self.m, &rhs.m) }
    }
}

/// Half-wave plate with its fast axis at `theta` radians from horizontal.
///
/// `[[cos 2θ, sin 2θ], [sin 2θ, -cos 2θ]]`: real, symmetric and its own inverse.
pub fn hwp_matrix(theta: f64) -> Result<JonesOp> {
    if !theta.is_finite() {
        return Err(domain!("HWP angle must be finite, got {theta}"));
    }
    let c = Complex64::new(libm::cos(2.0 * theta), 0.0);
    let s = Complex64::new(libm::sin(2.0 * theta), 0.0);
    Ok(JonesOp::new([[c, s], [s, -c]]))
}

/// A polarization state as a 2x2 density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolState {
    rho: Mat2,
}

impl PolState {
    /// Builds a state from an explicit matrix, checking trace, hermiticity and positivity.
    pub fn from_matrix(rho: Mat2) -> Result<Self> {
        let state = Self { rho };
        let herm = max_abs_diff(&rho, &adjoint(&rho));
        if !(herm <= INPUT_TOL) {
            return Err(domain!("density matrix is not Hermitian (deviation {herm:e})"));
        }
        let tr = state.trace();
        if !((tr - 1.0).abs() <= INPUT_TOL) {
            return Err(domain!("density matrix trace is {tr}, expected 1"));
        }
        let min_eig = state.eigenvalues()[0];
        if min_eig < -INPUT_TOL {
            return Err(domain!("density matrix has negative eigenvalue {min_eig:e}"));
        }
        Ok(state)
    }

    /// Projector onto a pure Jones vector. The vector is normalized first.
    pub fn pure(v: &JonesVector) -> Result<Self> {
        let n = v.norm_sqr();
        if !(n > 0.0 && n.is_finite()) {
            return Err(domain!("cannot build a pure state from a zero or non-finite vector"));
        }
        let inv = 1.0 / n;
        let a = v.0[0];
        let b = v.0[1];
        Ok(Self {
            rho: [
                [Complex64::new(a.norm_sqr() * inv, 0.0), a * b.conj() * inv],
                [b * a.conj() * inv, Complex64::new(b.norm_sqr() * inv, 0.0)],
            ],
        })
    }

    pub fn horizontal() -> Self {
        Self { rho: [[ONE, ZERO], [ZERO, ZERO]] }
    }

    pub fn vertical() -> Self {
        Self { rho: [[ZERO, ZERO], [ZERO, ONE]] }
    }

    pub fn diagonal() -> Self {
        let h = Complex64::new(0.5, 0.0);
        Self { rho: [[h, h], [h, h]] }
    }

    pub fn antidiagonal() -> Self {
        let h = Complex64::new(0.5, 0.0);
        Self { rho: [[h, -h], [-h, h]] }
    }

    /// I / 2
    pub fn maximally_mixed() -> Self {
        let h = Complex64::new(0.5, 0.0);
        Self { rho: [[h, ZERO], [ZERO, h]] }
    }

    /// Builds `(I + r·σ) / 2`. Fails when `|r| > 1`.
    pub fn from_bloch(r: [f64; 3]) -> Result<Self> {
        let len = libm::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        if !(len <= 1.0 + INPUT_TOL) {
            return Err(domain!("Bloch vector length {len} exceeds 1"));
        }
        Ok(Self {
            rho: [
                [Complex64::new(0.5 * (1.0 + r[2]), 0.0), Complex64::new(0.5 * r[0], -0.5 * r[1])],
                [Complex64::new(0.5 * r[0], 0.5 * r[1]), Complex64::new(0.5 * (1.0 - r[2]), 0.0)],
            ],
        })
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.rho
    }

    pub fn trace(&self) -> f64 {
        self.rho[0][0].re + self.rho[1][1].re
    }

    /// Tr(ρ²)
    pub fn purity(&self) -> f64 {
        let sq = matmul(&self.rho, &self.rho);
        sq[0][0].re + sq[1][1].re
    }

    pub fn bloch_vector(&self) -> [f64; 3] {
        [2.0 * self.rho[0][1].re, -2.0 * self.rho[0][1].im, self.rho[0][0].re - self.rho[1][1].re]
    }

    pub fn bloch_length(&self) -> f64 {
        let r = self.bloch_vector();
        libm::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> [f64; 2] {
        hermitian_eigenvalues(&self.rho)
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs_diff(&self.rho, &adjoint(&self.rho))
    }

    pub fn max_abs_diff(&self, other: &PolState) -> f64 {
        max_abs_diff(&self.rho, &other.rho)
    }
}

/// ρ → U ρ U†. Requires `u` unitary within 1e-12.
pub fn apply_unitary(state: &PolState, u: &JonesOp) -> Result<PolState> {
    u.require_unitary()?;
    Ok(conjugate(state, u))
}

pub(crate) fn conjugate(state: &PolState, u: &JonesOp) -> PolState {
    PolState { rho: matmul(&matmul(&u.m, &state.rho), &adjoint(&u.m)) }
}

/// ρ → (1 - p) ρ + p I/2. Shrinks the Bloch vector by exactly `1 - p`.
pub fn apply_depolarizing(state: &PolState, p: f64) -> Result<PolState> {
    if !(0.0..=1.0).contains(&p) {
        return Err(domain!("depolarizing probability must lie in [0, 1], got {p}"));
    }
    let keep = 1.0 - p;
    let mix = Complex64::new(0.5 * p, 0.0);
    let r = &state.rho;
    Ok(PolState { rho: [[r[0][0] * keep + mix, r[0][1] * keep], [r[1][0] * keep, r[1][1] * keep + mix]] })
}

/// ⟨axis| ρ |axis⟩ for a unit Jones vector `axis`.
pub fn projection_probability(state: &PolState, axis: &JonesVector) -> Result<f64> {
    let n = axis.norm_sqr();
    if !((n - 1.0).abs() <= INPUT_TOL) {
        return Err(domain!("projection axis must be normalized, |axis|^2 = {n}"));
    }
    let a = axis.0;
    let r = &state.rho;
    let value =
        a[0].conj() * (r[0][0] * a[0] + r[0][1] * a[1]) + a[1].conj() * (r[1][0] * a[0] + r[1][1] * a[1]);
    Ok(value.re.clamp(0.0, 1.0))
}
