//! The tail order on loss distributions.
//!
//! A distribution is preferred over another when all of its sufficiently
//! high moments are smaller; high moments amplify the right tail, so the
//! preferred distribution is the one whose extreme losses are less likely.
//! Formally: `F1` precedes `F2` iff there is some `K` with
//! `m1(k) <= m2(k)` for every `k >= K` (strict with `<`, equivalent when
//! both directions hold).
//!
//! Deciding the order from the definition means scanning moment sequences,
//! which is the [`compare_by_moments`] oracle here — exact enough for
//! ground truth, too blunt for hot paths. The specialized procedures
//! ([`compare_epanechnikov`], [`compare_det_vs_random`],
//! [`compare_compact_vs_infinite`], [`compare_mixtures`]) decide common
//! shapes directly from support endpoints and sample order statistics.

use serde::Serialize;
use thiserror::Error;

use crate::kde::{KdeModel, Kernel};
use crate::quad;

#[derive(Debug, Error)]
pub enum PreferenceError {
    #[error("no eventual moment dominance detected by k = {k_max}; raise k_max or use a specialized procedure")]
    Undecidable { k_max: u32 },
    #[error("model has an unbounded right tail; truncate first")]
    UnboundedSupport,
    #[error("procedure precondition violated: {0}")]
    ProcedureMismatch(String),
    #[error("mixture weights must be positive, match the component count, and sum to 1 within 1e-12")]
    InvalidMixture,
}

/// Result of comparing two distributions under the tail order.
///
/// `strict` distinguishes `<` from `<=`; equivalence is its own variant so
/// it can never carry a strict flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "relation", rename_all = "snake_case")]
pub enum PreferenceOutcome {
    FirstPreferred { strict: bool },
    SecondPreferred { strict: bool },
    Equivalent,
}

impl PreferenceOutcome {
    /// The outcome seen from the other side of the comparison.
    pub fn swapped(self) -> Self {
        match self {
            PreferenceOutcome::FirstPreferred { strict } => {
                PreferenceOutcome::SecondPreferred { strict }
            }
            PreferenceOutcome::SecondPreferred { strict } => {
                PreferenceOutcome::FirstPreferred { strict }
            }
            PreferenceOutcome::Equivalent => PreferenceOutcome::Equivalent,
        }
    }

    pub fn is_strict(self) -> bool {
        matches!(
            self,
            PreferenceOutcome::FirstPreferred { strict: true }
                | PreferenceOutcome::SecondPreferred { strict: true }
        )
    }
}

/// A loss distribution in any of the shapes the comparison procedures
/// accept: a deterministic outcome, a kernel density estimate, or a finite
/// mixture of those.
#[derive(Clone, Debug, PartialEq)]
pub enum DistModel {
    PointMass(f64),
    Kde(KdeModel),
    Mixture(MixtureModel),
}

impl From<KdeModel> for DistModel {
    fn from(m: KdeModel) -> Self {
        DistModel::Kde(m)
    }
}

impl DistModel {
    /// Right end of the support; `+inf` for untruncated Gaussian models.
    pub fn upper_support(&self) -> f64 {
        match self {
            DistModel::PointMass(a) => *a,
            DistModel::Kde(m) => m.support().1,
            DistModel::Mixture(mix) => mix
                .components
                .iter()
                .map(|c| c.upper_support())
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Whether the right tail ends at a finite point.
    pub fn has_bounded_tail(&self) -> bool {
        self.upper_support().is_finite()
    }

    /// Density of the absolutely continuous part (point masses contribute
    /// no density anywhere; callers plotting mixtures of KDE cells are
    /// unaffected).
    pub fn density(&self, x: f64) -> f64 {
        match self {
            DistModel::PointMass(_) => 0.0,
            DistModel::Kde(m) => m.density(x),
            DistModel::Mixture(mix) => mix
                .weights
                .iter()
                .zip(&mix.components)
                .map(|(w, c)| w * c.density(x))
                .sum(),
        }
    }

    /// Finite lower bound below which the model carries no mass worth
    /// integrating or plotting (exact for compact kernels, 16 bandwidths
    /// of slack for Gaussian tails).
    pub fn integration_lower(&self) -> f64 {
        match self {
            DistModel::PointMass(a) => *a,
            DistModel::Kde(m) => {
                let (lo, hi) = m.support();
                if lo.is_finite() {
                    lo
                } else {
                    m.samples().min().min(hi) - 16.0 * m.bandwidth()
                }
            }
            DistModel::Mixture(mix) => mix
                .components
                .iter()
                .map(|c| c.integration_lower())
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Quadrature decomposition: nodes `(x, w)` with
    /// `integral of g dF = sum w * g(x)` exact to machine precision for the
    /// polynomial integrands the moment scan uses.
    fn moment_nodes(&self) -> Result<Vec<(f64, f64)>, PreferenceError> {
        match self {
            DistModel::PointMass(a) => Ok(vec![(*a, 1.0)]),
            DistModel::Kde(m) => kde_moment_nodes(m),
            DistModel::Mixture(mix) => {
                let mut nodes = Vec::new();
                for (w, comp) in mix.weights.iter().zip(&mix.components) {
                    for (x, wt) in comp.moment_nodes()? {
                        nodes.push((x, w * wt));
                    }
                }
                Ok(nodes)
            }
        }
    }
}

fn kde_moment_nodes(m: &KdeModel) -> Result<Vec<(f64, f64)>, PreferenceError> {
    let h = m.bandwidth();
    let n = m.samples().len() as f64;
    let scale = m.scale_factor();
    let cutoff = m.truncation().map(|t| t.cutoff);
    match m.kernel() {
        Kernel::Epanechnikov => {
            // One polynomial segment per sample kernel; GL128 integrates
            // x^k * (quadratic) exactly for k <= 253.
            let rule = quad::gl128();
            let mut nodes = Vec::with_capacity(m.samples().len() * rule.0.len());
            for &xi in m.samples().values() {
                let lo = xi - h;
                let hi = cutoff.map_or(xi + h, |c| (xi + h).min(c));
                if hi <= lo {
                    continue;
                }
                let c = 0.5 * (lo + hi);
                let r = 0.5 * (hi - lo);
                for (t, w) in rule.0.iter().zip(&rule.1) {
                    let x = c + r * t;
                    let dens = scale * Kernel::Epanechnikov.value((x - xi) / h) / (n * h);
                    nodes.push((x, w * r * dens));
                }
            }
            Ok(nodes)
        }
        Kernel::Gaussian => {
            let Some(hi) = cutoff else {
                return Err(PreferenceError::UnboundedSupport);
            };
            let lo = m.samples().min().min(hi) - 16.0 * h;
            // Composite GL64 segments no wider than one bandwidth resolve
            // the Gaussian bumps to machine precision.
            let segments = (((hi - lo) / h).ceil() as usize).clamp(1, 2048);
            let width = (hi - lo) / segments as f64;
            let rule = quad::gl64();
            let mut nodes = Vec::with_capacity(segments * rule.0.len());
            for s in 0..segments {
                let a = lo + s as f64 * width;
                let c = a + 0.5 * width;
                let r = 0.5 * width;
                for (t, w) in rule.0.iter().zip(&rule.1) {
                    let x = c + r * t;
                    nodes.push((x, w * r * m.density(x)));
                }
            }
            Ok(nodes)
        }
    }
}

/// Convex combination of component distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureModel {
    weights: Vec<f64>,
    components: Vec<DistModel>,
}

impl MixtureModel {
    /// Build a mixture; nested mixtures are flattened (weights multiply).
    pub fn new(weights: Vec<f64>, components: Vec<DistModel>) -> Result<Self, PreferenceError> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(PreferenceError::InvalidMixture);
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(PreferenceError::InvalidMixture);
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(PreferenceError::InvalidMixture);
        }
        let mut flat_w = Vec::with_capacity(weights.len());
        let mut flat_c = Vec::with_capacity(components.len());
        for (w, comp) in weights.into_iter().zip(components) {
            match comp {
                DistModel::Mixture(inner) => {
                    for (iw, ic) in inner.weights.into_iter().zip(inner.components) {
                        flat_w.push(w * iw);
                        flat_c.push(ic);
                    }
                }
                other => {
                    flat_w.push(w);
                    flat_c.push(other);
                }
            }
        }
        Ok(MixtureModel { weights: flat_w, components: flat_c })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DistModel] {
        &self.components
    }
}

/// Moment sequence `m(1..=k_max)` of one distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSequence {
    moments: Vec<f64>,
}

impl MomentSequence {
    pub fn k_max(&self) -> u32 {
        self.moments.len() as u32
    }

    /// `m(k)`, 1-based.
    pub fn get(&self, k: u32) -> f64 {
        self.moments[(k - 1) as usize]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.moments
    }
}

/// k-th raw moment `E[X^k]` of a model with a bounded right tail.
pub fn moment(model: &DistModel, k: u32) -> Result<f64, PreferenceError> {
    assert!(k >= 1, "moment order must be >= 1");
    let nodes = model.moment_nodes()?;
    Ok(nodes.iter().map(|(x, w)| w * x.powi(k as i32)).sum())
}

/// All moments up to `k_max` in one pass (running powers over a fixed node
/// decomposition).
pub fn moment_sequence(model: &DistModel, k_max: u32) -> Result<MomentSequence, PreferenceError> {
    assert!(k_max >= 1, "moment order cap must be >= 1");
    let nodes = model.moment_nodes()?;
    let mut powers: Vec<f64> = nodes.iter().map(|_| 1.0).collect();
    let mut moments = Vec::with_capacity(k_max as usize);
    for _ in 1..=k_max {
        let mut acc = 0.0;
        for (p, (x, w)) in powers.iter_mut().zip(&nodes) {
            *p *= x;
            acc += w * *p;
        }
        moments.push(acc);
    }
    Ok(MomentSequence { moments })
}

/// Number of consecutive same-sign moment differences required before the
/// oracle declares eventual dominance.
const DOMINANCE_WINDOW: u32 = 10;
/// Relative tolerance under which two moments count as tied.
const MOMENT_REL_TOL: f64 = 1e-9;

/// Oracle decision with the order at which the final stable sign run
/// begins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentDecision {
    pub outcome: PreferenceOutcome,
    /// First k of the run that decided the comparison.
    pub onset: u32,
}

/// Direct implementation of the tail order's definition: scan the two
/// moment sequences and look for a stable sign of their difference.
///
/// This is a semi-decision — a sign flip beyond `k_max` is invisible — so a
/// final run shorter than the dominance window is an explicit
/// [`PreferenceError::Undecidable`], never silently `Equivalent`.
pub fn compare_by_moments(
    model1: &DistModel,
    model2: &DistModel,
    k_max: u32,
) -> Result<PreferenceOutcome, PreferenceError> {
    moment_decision(model1, model2, k_max).map(|d| d.outcome)
}

/// [`compare_by_moments`] plus the dominance onset, for reporting.
pub fn moment_decision(
    model1: &DistModel,
    model2: &DistModel,
    k_max: u32,
) -> Result<MomentDecision, PreferenceError> {
    let s1 = moment_sequence(model1, k_max)?;
    let s2 = moment_sequence(model2, k_max)?;
    let mut run_sign = 2i8; // sentinel: no run yet
    let mut run_start = 1u32;
    let mut run_len = 0u32;
    for k in 1..=k_max {
        let (m1, m2) = (s1.get(k), s2.get(k));
        let tol = MOMENT_REL_TOL * m1.abs().max(m2.abs());
        let sign: i8 = if (m1 - m2).abs() <= tol {
            0
        } else if m1 < m2 {
            -1
        } else {
            1
        };
        if sign == run_sign {
            run_len += 1;
        } else {
            run_sign = sign;
            run_start = k;
            run_len = 1;
        }
    }
    if run_len < DOMINANCE_WINDOW {
        return Err(PreferenceError::Undecidable { k_max });
    }
    let outcome = match run_sign {
        -1 => PreferenceOutcome::FirstPreferred { strict: true },
        1 => PreferenceOutcome::SecondPreferred { strict: true },
        _ => PreferenceOutcome::Equivalent,
    };
    Ok(MomentDecision { outcome, onset: run_start })
}

/// Absolute tolerance for support-endpoint ties: endpoints are exact
/// arithmetic on sample + bandwidth, so anything beyond noise is a real
/// difference.
const ENDPOINT_TOL: f64 = 1e-12;

/// Sorted-sample comparison of two untruncated Epanechnikov estimates.
///
/// Walk both sample lists from the top: whichever density reaches farther
/// right is worse; at equal reach the higher top sample is worse (its
/// kernel is narrower, so it packs more mass against the shared endpoint);
/// full ties are discarded pairwise. If one list empties first it has
/// strictly less high-end mass left, so it wins; two simultaneous empties
/// mean the estimates are identical.
pub fn compare_epanechnikov(
    model1: &KdeModel,
    model2: &KdeModel,
) -> Result<PreferenceOutcome, PreferenceError> {
    for m in [model1, model2] {
        if m.kernel() != Kernel::Epanechnikov {
            return Err(PreferenceError::ProcedureMismatch(
                "sorted-sample rule requires Epanechnikov kernels".into(),
            ));
        }
        if m.truncation().is_some() {
            return Err(PreferenceError::ProcedureMismatch(
                "sorted-sample rule requires untruncated models".into(),
            ));
        }
    }
    let xs = model1.samples().values();
    let ys = model2.samples().values();
    let (h1, h2) = (model1.bandwidth(), model2.bandwidth());
    let mut i = xs.len();
    let mut j = ys.len();
    loop {
        match (i, j) {
            (0, 0) => return Ok(PreferenceOutcome::Equivalent),
            (0, _) => return Ok(PreferenceOutcome::FirstPreferred { strict: true }),
            (_, 0) => return Ok(PreferenceOutcome::SecondPreferred { strict: true }),
            _ => {
                let (x, y) = (xs[i - 1], ys[j - 1]);
                let (e1, e2) = (x + h1, y + h2);
                if (e1 - e2).abs() > ENDPOINT_TOL {
                    return Ok(if e1 < e2 {
                        PreferenceOutcome::FirstPreferred { strict: true }
                    } else {
                        PreferenceOutcome::SecondPreferred { strict: true }
                    });
                }
                if (x - y).abs() > ENDPOINT_TOL {
                    return Ok(if x < y {
                        PreferenceOutcome::FirstPreferred { strict: true }
                    } else {
                        PreferenceOutcome::SecondPreferred { strict: true }
                    });
                }
                i -= 1;
                j -= 1;
            }
        }
    }
}

/// Deterministic outcome `a` against a random loss on `[0, b]`: the point
/// mass wins strictly below the support's end, loses strictly above it,
/// and at `a = b` the random loss is (non-strictly) preferred because it
/// also admits smaller outcomes.
pub fn compare_det_vs_random(
    a: f64,
    model: &DistModel,
) -> Result<PreferenceOutcome, PreferenceError> {
    if !(a >= 0.0) {
        return Err(PreferenceError::ProcedureMismatch(
            "deterministic outcome must be nonnegative".into(),
        ));
    }
    let b = model.upper_support();
    if !b.is_finite() {
        return Err(PreferenceError::UnboundedSupport);
    }
    let tol = 1e-9 * 1.0f64.max(a.abs()).max(b.abs());
    if a < b - tol {
        Ok(PreferenceOutcome::FirstPreferred { strict: true })
    } else if a > b + tol {
        Ok(PreferenceOutcome::SecondPreferred { strict: true })
    } else {
        Ok(PreferenceOutcome::SecondPreferred { strict: false })
    }
}

/// A bounded right tail beats an unbounded one outright: every moment of
/// the unbounded model eventually dominates.
pub fn compare_compact_vs_infinite(
    model1: &DistModel,
    model2: &DistModel,
) -> Result<PreferenceOutcome, PreferenceError> {
    match (model1.has_bounded_tail(), model2.has_bounded_tail()) {
        (true, false) => Ok(PreferenceOutcome::FirstPreferred { strict: true }),
        (false, true) => Ok(PreferenceOutcome::SecondPreferred { strict: true }),
        _ => Err(PreferenceError::ProcedureMismatch(
            "exactly one model must have a bounded tail".into(),
        )),
    }
}

/// Compare two mixtures: componentwise dominance when the weights line up,
/// otherwise the moment oracle on the mixed sequences.
pub fn compare_mixtures(
    mix1: &MixtureModel,
    mix2: &MixtureModel,
    k_max: u32,
) -> Result<PreferenceOutcome, PreferenceError> {
    if let Some(outcome) = componentwise_dominance(mix1, mix2, k_max) {
        return Ok(outcome);
    }
    compare_by_moments(
        &DistModel::Mixture(mix1.clone()),
        &DistModel::Mixture(mix2.clone()),
        k_max,
    )
}

fn componentwise_dominance(
    mix1: &MixtureModel,
    mix2: &MixtureModel,
    k_max: u32,
) -> Option<PreferenceOutcome> {
    if mix1.weights.len() != mix2.weights.len() {
        return None;
    }
    if mix1
        .weights
        .iter()
        .zip(&mix2.weights)
        .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return None;
    }
    let mut first_ok = true;
    let mut second_ok = true;
    let mut any_strict = false;
    for (c1, c2) in mix1.components.iter().zip(&mix2.components) {
        let outcome = compare_models(c1, c2, k_max).ok()?.outcome;
        match outcome {
            PreferenceOutcome::FirstPreferred { strict } => {
                second_ok = false;
                any_strict |= strict;
            }
            PreferenceOutcome::SecondPreferred { strict } => {
                first_ok = false;
                any_strict |= strict;
            }
            PreferenceOutcome::Equivalent => {}
        }
        if !first_ok && !second_ok {
            return None;
        }
    }
    Some(match (first_ok, second_ok) {
        (true, true) => PreferenceOutcome::Equivalent,
        (true, false) => PreferenceOutcome::FirstPreferred { strict: any_strict },
        (false, true) => PreferenceOutcome::SecondPreferred { strict: any_strict },
        (false, false) => unreachable!(),
    })
}

/// Which procedure decided a comparison (surfaced by the CLI report).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    EpanechnikovTail,
    DetVsRandom,
    CompactVsInfinite,
    Mixture,
    MomentOracle,
}

impl std::fmt::Display for Procedure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Procedure::EpanechnikovTail => "epanechnikov-tail",
            Procedure::DetVsRandom => "det-vs-random",
            Procedure::CompactVsInfinite => "compact-vs-infinite",
            Procedure::Mixture => "mixture",
            Procedure::MomentOracle => "moment-oracle",
        };
        f.write_str(name)
    }
}

/// A decided comparison plus how it was decided.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComparisonReport {
    pub outcome: PreferenceOutcome,
    pub procedure: Procedure,
    /// Dominance onset, present when the moment oracle decided.
    pub onset: Option<u32>,
}

/// Dispatch to the most specific applicable procedure.
pub fn compare_models(
    model1: &DistModel,
    model2: &DistModel,
    k_max: u32,
) -> Result<ComparisonReport, PreferenceError> {
    use DistModel::*;
    let report = |outcome, procedure| ComparisonReport { outcome, procedure, onset: None };
    match (model1, model2) {
        (PointMass(a), PointMass(b)) => {
            let tol = ENDPOINT_TOL * 1.0f64.max(a.abs()).max(b.abs());
            let outcome = if (a - b).abs() <= tol {
                PreferenceOutcome::Equivalent
            } else if a < b {
                PreferenceOutcome::FirstPreferred { strict: true }
            } else {
                PreferenceOutcome::SecondPreferred { strict: true }
            };
            Ok(report(outcome, Procedure::DetVsRandom))
        }
        (PointMass(a), other) if other.has_bounded_tail() => {
            Ok(report(compare_det_vs_random(*a, other)?, Procedure::DetVsRandom))
        }
        (other, PointMass(a)) if other.has_bounded_tail() => Ok(report(
            compare_det_vs_random(*a, other)?.swapped(),
            Procedure::DetVsRandom,
        )),
        (Kde(k1), Kde(k2))
            if k1.kernel() == Kernel::Epanechnikov
                && k2.kernel() == Kernel::Epanechnikov
                && k1.truncation().is_none()
                && k2.truncation().is_none() =>
        {
            Ok(report(compare_epanechnikov(k1, k2)?, Procedure::EpanechnikovTail))
        }
        (m1, m2) if m1.has_bounded_tail() != m2.has_bounded_tail() => {
            Ok(report(compare_compact_vs_infinite(m1, m2)?, Procedure::CompactVsInfinite))
        }
        (Mixture(m1), Mixture(m2)) => {
            if let Some(outcome) = componentwise_dominance(m1, m2, k_max) {
                return Ok(report(outcome, Procedure::Mixture));
            }
            let decision = moment_decision(model1, model2, k_max)?;
            Ok(ComparisonReport {
                outcome: decision.outcome,
                procedure: Procedure::Mixture,
                onset: Some(decision.onset),
            })
        }
        _ => {
            let decision = moment_decision(model1, model2, k_max)?;
            Ok(ComparisonReport {
                outcome: decision.outcome,
                procedure: Procedure::MomentOracle,
                onset: Some(decision.onset),
            })
        }
    }
}
