//! Finite tail representation of truncated Gaussian density estimates.
//!
//! Near a shared right cutoff `a`, the tail order between two truncated
//! densities is decided by the first derivative at `a` where they differ:
//! store `d_k = (-1)^k f^(k)(a)` for `k = 0..=t` and compare the vectors
//! lexicographically (smaller wins). The sign twist makes "smaller vector"
//! line up with "lighter tail" at every order, and the representation is
//! linear, so the averaging steps of fictitious play act componentwise.

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::kde::{KdeModel, Kernel};
use crate::preference::PreferenceOutcome;

#[derive(Debug, Error)]
pub enum TailrepError {
    #[error("closed-form derivatives require a Gaussian kernel")]
    KernelMismatch,
    #[error("derivative vectors are only comparable at the same cutoff and order")]
    Incompatible,
    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("derivative vector needs at least one finite coefficient and a finite cutoff")]
    InvalidVector,
}

/// Sign-alternating derivative vector `(d_0, ..., d_t)` of a density at a
/// cutoff, `d_k = (-1)^k f^(k)(a)`.
///
/// Immutable value type; `order` is implied by the coefficient count.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivVector {
    cutoff: f64,
    coeffs: Vec<f64>,
}

impl DerivVector {
    pub fn new(cutoff: f64, coeffs: Vec<f64>) -> Result<Self, TailrepError> {
        if !cutoff.is_finite() || coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(TailrepError::InvalidVector);
        }
        Ok(DerivVector { cutoff, coeffs })
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Highest derivative order stored (`t`).
    pub fn order(&self) -> u32 {
        (self.coeffs.len() - 1) as u32
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Two vectors compare only at identical cutoff and order.
    pub fn compatible(&self, other: &Self) -> bool {
        self.cutoff == other.cutoff && self.coeffs.len() == other.coeffs.len()
    }

    /// Componentwise positive scaling.
    pub fn scale(&self, c: f64) -> Result<Self, TailrepError> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(TailrepError::NonPositiveScale(c));
        }
        Ok(DerivVector {
            cutoff: self.cutoff,
            coeffs: self.coeffs.iter().map(|d| c * d).collect(),
        })
    }

    /// Componentwise sum (densities add before scaling, so mixtures of
    /// vectors are vectors of mixtures).
    pub fn add(&self, other: &Self) -> Result<Self, TailrepError> {
        if !self.compatible(other) {
            return Err(TailrepError::Incompatible);
        }
        Ok(DerivVector {
            cutoff: self.cutoff,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Taylor polynomial of the underlying density around the cutoff:
    /// `sum_k f^(k)(a)/k! (x-a)^k`, undoing the stored sign alternation.
    /// Intended for `x` at or below the cutoff; accuracy decays with
    /// distance.
    pub fn taylor_eval(&self, x: f64) -> f64 {
        let dx = x - self.cutoff;
        let mut term = 1.0; // (x-a)^k / k!
        let mut acc = 0.0;
        let mut sign = 1.0;
        for (k, d) in self.coeffs.iter().enumerate() {
            if k > 0 {
                term *= dx / k as f64;
                sign = -sign;
            }
            acc += sign * d * term;
        }
        acc
    }
}

impl Serialize for DerivVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("DerivVector", 3)?;
        st.serialize_field("cutoff", &self.cutoff)?;
        st.serialize_field("order", &self.order())?;
        st.serialize_field("coeffs", &self.coeffs)?;
        st.end()
    }
}

/// Lexicographic comparison policy for derivative vectors.
///
/// The per-component tie tolerance is `tolerance * max(1, |u_k|, |v_k|)`:
/// absolute for small coefficients, relative for large ones, so exact ties
/// survive floating-point noise at any magnitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LexOrdering {
    pub tolerance: f64,
}

impl LexOrdering {
    pub const DEFAULT_TOLERANCE: f64 = 1e-12;

    pub fn new(tolerance: f64) -> Self {
        assert!(tolerance >= 0.0, "tie tolerance must be nonnegative");
        LexOrdering { tolerance }
    }

    fn component_tol(&self, u: f64, v: f64) -> f64 {
        self.tolerance * 1.0f64.max(u.abs()).max(v.abs())
    }
}

impl Default for LexOrdering {
    fn default() -> Self {
        LexOrdering { tolerance: Self::DEFAULT_TOLERANCE }
    }
}

/// First differing component decides; all-tied vectors are equivalent.
pub fn lex_compare(
    u: &DerivVector,
    v: &DerivVector,
    ord: &LexOrdering,
) -> Result<PreferenceOutcome, TailrepError> {
    if !u.compatible(v) {
        return Err(TailrepError::Incompatible);
    }
    for (a, b) in u.coeffs.iter().zip(&v.coeffs) {
        if (a - b).abs() > ord.component_tol(*a, *b) {
            return Ok(if a < b {
                PreferenceOutcome::FirstPreferred { strict: true }
            } else {
                PreferenceOutcome::SecondPreferred { strict: true }
            });
        }
    }
    Ok(PreferenceOutcome::Equivalent)
}

/// Physicists' Hermite polynomial `H_n(x)` by the three-term recursion
/// `H_{n+1} = 2x H_n - 2n H_{n-1}`.
pub fn hermite(n: u32, x: f64) -> f64 {
    let mut prev = 1.0; // H_0
    if n == 0 {
        return prev;
    }
    let mut cur = 2.0 * x; // H_1
    for k in 1..n {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Derivative vector of a Gaussian kernel density at `a`, all orders up to
/// `t` in closed form.
///
/// Each kernel contributes `(-1)^k phi^(k)(u) = phi(u) 2^(-k/2) H_k(u/sqrt 2)`
/// with `u = (a - x_i)/h`; summing over samples in input order and dividing
/// by `n h^(k+1)` gives the density derivatives. Any truncation scale on
/// the model multiplies through, so the vector describes the renormalized
/// density the model actually exposes.
pub fn gaussian_kde_derivs(
    model: &KdeModel,
    a: f64,
    t: u32,
) -> Result<DerivVector, TailrepError> {
    if model.kernel() != Kernel::Gaussian {
        return Err(TailrepError::KernelMismatch);
    }
    let h = model.bandwidth();
    let n = model.samples().len() as f64;
    let inv_sqrt_tau = 1.0 / std::f64::consts::TAU.sqrt();
    let sqrt_2 = std::f64::consts::SQRT_2;
    let mut sums = vec![0.0; (t + 1) as usize];
    for &xi in model.samples().values() {
        let u = (a - xi) / h;
        let phi = (-0.5 * u * u).exp() * inv_sqrt_tau;
        let z = u / sqrt_2;
        let mut h_prev = 0.0;
        let mut h_cur = 1.0; // H_0(z)
        let mut half_pow = 1.0; // 2^(-k/2)
        for (k, sum) in sums.iter_mut().enumerate() {
            *sum += phi * half_pow * h_cur;
            let h_next = 2.0 * z * h_cur - 2.0 * k as f64 * h_prev;
            h_prev = h_cur;
            h_cur = h_next;
            half_pow /= sqrt_2;
        }
    }
    let scale = model.scale_factor();
    let mut hpow = h;
    let coeffs = sums
        .into_iter()
        .map(|s| {
            let d = scale * s / (n * hpow);
            hpow *= h;
            d
        })
        .collect();
    DerivVector::new(a, coeffs)
}

/// Uniform bound on Taylor-evaluation error when every stored coefficient
/// carries machine rounding `eps`: the factorial-weighted series sums to
/// `eps * e^a`.
pub fn roundoff_bound(eps_machine: f64, a: f64) -> f64 {
    eps_machine * a.exp()
}
