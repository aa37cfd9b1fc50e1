//! Kernel density estimation of loss distributions.
//!
//! A [`KdeModel`] is the kernel-sum estimator `f(x) = 1/(n*h) * sum_i
//! k((x_i - x)/h)` over a sorted [`SampleSet`], with either the compactly
//! supported Epanechnikov kernel or the Gaussian kernel, and an optional
//! right-tail truncation at a cutoff point. Truncation is what makes
//! full-support estimates comparable under the tail order and is also used
//! to discard paradoxical far-tail mass (see [`crate::preference`]).
//!
//! Cumulative probabilities use the kernels' exact antiderivatives; the
//! adaptive-quadrature route in [`crate::quad`] serves as an independent
//! check in the test suite.

use serde::{Deserialize, Serialize};
use statrs::function::erf;
use thiserror::Error;

use std::f64::consts::{FRAC_1_SQRT_2, PI};

#[derive(Debug, Error)]
pub enum KdeError {
    #[error("sample set must contain at least one value")]
    EmptySampleSet,
    #[error("sample values must be finite, got {0}")]
    NonFiniteSample(f64),
    #[error("invalid bandwidth rule: {0}")]
    InvalidBandwidth(String),
    #[error("quantile probability must lie strictly between 0 and 1, got {0}")]
    QuantileProbability(f64),
    #[error("truncation level alpha must lie strictly between 0 and 1, got {0}")]
    TruncationLevel(f64),
    #[error("cutoff {cutoff} leaves no probability mass below it")]
    EmptyTruncation { cutoff: f64 },
    #[error("cutoff {cutoff} must be finite and not exceed an existing cutoff")]
    InvalidCutoff { cutoff: f64 },
    #[error("histogram must be non-empty with positive counts")]
    InvalidHistogram,
}

/// Smoothing kernel shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `3/4 * (1 - u^2)` on `[-1, 1]`, zero outside: compact support.
    Epanechnikov,
    /// Standard normal density: full support.
    Gaussian,
}

impl Kernel {
    /// Kernel value at `u`.
    pub fn value(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    0.75 * (1.0 - u * u)
                }
            }
            Kernel::Gaussian => (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
        }
    }

    /// Exact antiderivative `K(u) = integral of the kernel up to u`.
    pub fn antiderivative(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => {
                if u <= -1.0 {
                    0.0
                } else if u >= 1.0 {
                    1.0
                } else {
                    0.5 + 0.75 * u - 0.25 * u * u * u
                }
            }
            Kernel::Gaussian => 0.5 * (1.0 + erf::erf(u * FRAC_1_SQRT_2)),
        }
    }

    /// Support radius in kernel units; `None` for full support.
    pub fn support_radius(self) -> Option<f64> {
        match self {
            Kernel::Epanechnikov => Some(1.0),
            Kernel::Gaussian => None,
        }
    }
}

/// Sorted, finite, non-empty loss observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    values: Vec<f64>,
}

impl SampleSet {
    pub fn new(mut values: Vec<f64>) -> Result<Self, KdeError> {
        if values.is_empty() {
            return Err(KdeError::EmptySampleSet);
        }
        if let Some(&bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(KdeError::NonFiniteSample(bad));
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
        Ok(SampleSet { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty sets
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sample standard deviation (n-1 denominator); `None` for n = 1.
    pub fn std_dev(&self) -> Option<f64> {
        let n = self.values.len();
        if n < 2 {
            return None;
        }
        let mean = self.mean();
        let ss: f64 = self.values.iter().map(|v| (v - mean) * (v - mean)).sum();
        Some((ss / (n - 1) as f64).sqrt())
    }
}

/// How to pick the smoothing bandwidth `h`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BandwidthRule {
    Explicit { h: f64 },
    /// `h = c * n^(-alpha)`, shrinking with the sample count.
    PowerLaw { c: f64, alpha: f64 },
}

/// Resolve a bandwidth rule for a sample count.
pub fn bandwidth(rule: BandwidthRule, n: usize) -> Result<f64, KdeError> {
    if n == 0 {
        return Err(KdeError::InvalidBandwidth("sample count must be >= 1".into()));
    }
    match rule {
        BandwidthRule::Explicit { h } => {
            if h > 0.0 && h.is_finite() {
                Ok(h)
            } else {
                Err(KdeError::InvalidBandwidth(format!("explicit h must be > 0, got {h}")))
            }
        }
        BandwidthRule::PowerLaw { c, alpha } => {
            if !(c > 0.0 && c.is_finite()) {
                Err(KdeError::InvalidBandwidth(format!("power-law c must be > 0, got {c}")))
            } else if !(alpha > 0.0 && alpha < 0.5) {
                Err(KdeError::InvalidBandwidth(format!(
                    "power-law alpha must lie in (0, 1/2), got {alpha}"
                )))
            } else {
                Ok(c * (n as f64).powf(-alpha))
            }
        }
    }
}

/// Right-tail truncation of a model.
///
/// `scale` multiplies the density below the cutoff; it is `1/(1-alpha)` when
/// truncating at the `(1-alpha)`-quantile with renormalization, or the exact
/// reciprocal of the retained mass when truncating at a shared cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub cutoff: f64,
    pub renormalize: bool,
    pub scale: f64,
}

/// Kernel density estimate of one loss distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeModel {
    kernel: Kernel,
    samples: SampleSet,
    bandwidth: f64,
    truncation: Option<Truncation>,
}

/// Build a kernel density estimate from samples.
pub fn estimate(samples: SampleSet, kernel: Kernel, rule: BandwidthRule) -> Result<KdeModel, KdeError> {
    let h = bandwidth(rule, samples.len())?;
    Ok(KdeModel { kernel, samples, bandwidth: h, truncation: None })
}

impl KdeModel {
    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn truncation(&self) -> Option<&Truncation> {
        self.truncation.as_ref()
    }

    /// Density multiplier from truncation (1 when untruncated).
    pub fn scale_factor(&self) -> f64 {
        self.truncation.map_or(1.0, |t| t.scale)
    }

    /// Support interval `(lo, hi)`; infinite endpoints for the Gaussian
    /// kernel, with `hi` clipped by any truncation cutoff.
    pub fn support(&self) -> (f64, f64) {
        let (lo, hi) = match self.kernel.support_radius() {
            Some(r) => {
                let reach = r * self.bandwidth;
                (self.samples.min() - reach, self.samples.max() + reach)
            }
            None => (f64::NEG_INFINITY, f64::INFINITY),
        };
        match self.truncation {
            Some(t) => (lo, hi.min(t.cutoff)),
            None => (lo, hi),
        }
    }

    /// Whether the right tail ends at a finite point (natively or by
    /// truncation). This is the property the tail order cares about.
    pub fn has_bounded_tail(&self) -> bool {
        self.support().1.is_finite()
    }

    /// Pointwise density.
    pub fn density(&self, x: f64) -> f64 {
        if let Some(t) = self.truncation {
            if x > t.cutoff {
                return 0.0;
            }
        }
        let h = self.bandwidth;
        let mut acc = 0.0;
        for &xi in self.samples.values() {
            acc += self.kernel.value((x - xi) / h);
        }
        self.scale_factor() * acc / (self.samples.len() as f64 * h)
    }

    /// Cumulative probability, via the kernels' exact antiderivatives.
    pub fn cdf(&self, x: f64) -> f64 {
        let x_eff = match self.truncation {
            Some(t) => x.min(t.cutoff),
            None => x,
        };
        self.scale_factor() * self.raw_cdf(x_eff)
    }

    fn raw_cdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let mut acc = 0.0;
        for &xi in self.samples.values() {
            acc += self.kernel.antiderivative((x - xi) / h);
        }
        acc / self.samples.len() as f64
    }

    /// Invert the cdf by bracketing bisection; the result satisfies
    /// `|cdf(x) - p| <= 1e-8` (far tighter in practice).
    pub fn quantile(&self, p: f64) -> Result<f64, KdeError> {
        if !(p > 0.0 && p < 1.0) {
            return Err(KdeError::QuantileProbability(p));
        }
        let h = self.bandwidth;
        let (slo, shi) = self.support();
        let mut lo = if slo.is_finite() { slo } else { self.samples.min() - 10.0 * h };
        let mut hi = if shi.is_finite() { shi } else { self.samples.max() + 10.0 * h };
        // Expand until the bracket encloses p (only needed for the Gaussian
        // kernel's unbounded tails).
        let mut guard = 0;
        while self.cdf(lo) > p {
            lo -= 8.0 * h;
            guard += 1;
            if guard > 200 {
                break;
            }
        }
        guard = 0;
        while self.cdf(hi) < p {
            if shi.is_finite() {
                // Total mass below the cutoff cannot reach p.
                return Err(KdeError::QuantileProbability(p));
            }
            hi += 8.0 * h;
            guard += 1;
            if guard > 200 {
                break;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * (1.0 + lo.abs().max(hi.abs())) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Cut the right tail at the `(1-alpha)`-quantile; with `renormalize`,
    /// the remaining density is scaled by `1/(1-alpha)` so it stays a
    /// probability density.
    pub fn truncate(&self, alpha: f64, renormalize: bool) -> Result<KdeModel, KdeError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(KdeError::TruncationLevel(alpha));
        }
        let cutoff = self.quantile(1.0 - alpha)?;
        let scale = self.scale_factor() * if renormalize { 1.0 / (1.0 - alpha) } else { 1.0 };
        Ok(KdeModel {
            kernel: self.kernel,
            samples: self.samples.clone(),
            bandwidth: self.bandwidth,
            truncation: Some(Truncation { cutoff, renormalize, scale }),
        })
    }

    /// Cut the right tail at an externally chosen point (the shared cutoff
    /// of a whole game matrix); with `renormalize`, scale by the reciprocal
    /// of the mass actually retained.
    pub fn truncate_at_cutoff(&self, cutoff: f64, renormalize: bool) -> Result<KdeModel, KdeError> {
        if !cutoff.is_finite() || self.truncation.is_some_and(|t| cutoff > t.cutoff) {
            return Err(KdeError::InvalidCutoff { cutoff });
        }
        let mass = self.cdf(cutoff);
        if mass <= 0.0 {
            return Err(KdeError::EmptyTruncation { cutoff });
        }
        let scale = self.scale_factor() * if renormalize { 1.0 / mass } else { 1.0 };
        Ok(KdeModel {
            kernel: self.kernel,
            samples: self.samples.clone(),
            bandwidth: self.bandwidth,
            truncation: Some(Truncation { cutoff, renormalize, scale }),
        })
    }
}

/// Expand an integer-valued histogram into samples placed half a unit left
/// of each integer point, ready for Gaussian estimation.
pub fn discretize_counts(histogram: &[(u64, u64)]) -> Result<SampleSet, KdeError> {
    if histogram.is_empty() || histogram.iter().any(|&(_, c)| c == 0) {
        return Err(KdeError::InvalidHistogram);
    }
    let mut values = Vec::new();
    for &(point, count) in histogram {
        for _ in 0..count {
            values.push(point as f64 - 0.5);
        }
    }
    SampleSet::new(values)
}
