//! Fictitious play over ordered linear payoff spaces.
//!
//! The solver never looks inside a payoff value: it only adds values,
//! scales them by positive reals, and compares them under a total
//! preorder. Plain numbers, tail derivative vectors, and whole density
//! mixtures all satisfy that contract, so one loop serves the numeric
//! oracle, the production tail pipeline, and the deliberately naive
//! density-space run that demonstrates the absorption failure mode.
//!
//! Orientation: the row player picks rows to *minimize* loss, the column
//! player picks columns to *maximize* damage, and `pref_cmp` returning
//! `Less` means "preferred" (lighter tail, smaller loss).

use std::cmp::Ordering;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::preference::{
    moment_sequence, DistModel, MixtureModel, PreferenceError, PreferenceOutcome,
};
use crate::tailrep::{lex_compare, DerivVector, LexOrdering};

#[derive(Debug, Error)]
pub enum FpError {
    #[error("game matrix must be non-empty and rectangular")]
    InvalidMatrix,
    #[error("matrix cells are not mutually comparable")]
    IncompatibleCells,
    #[error("cell ({row}, {col}) holds a non-finite value")]
    NonFiniteCell { row: usize, col: usize },
    #[error("epsilon must be positive and max_iters at least 1")]
    InvalidOptions,
    #[error("goal weights must be strictly positive and sum to 1 within 1e-12")]
    InvalidWeights,
    #[error("strategy weights must be nonnegative, match the matrix shape, and sum to 1 within 1e-9")]
    InvalidStrategy,
    #[error("empty payoff list")]
    EmptyList,
    #[error("count vectors must share a length")]
    LengthMismatch,
    #[error(transparent)]
    Preference(#[from] PreferenceError),
}

/// Operations fictitious play needs from a payoff value.
///
/// `pref_cmp` must be a total preorder whose argmin/argmax over any finite
/// set is unchanged by scaling every element with the same `c > 0`; `Less`
/// means the receiver is preferred. Add/scale misuse on incompatible
/// values is a programming error and panics — [`GameMatrix`] construction
/// guarantees compatibility for everything the solver touches.
pub trait Payoff: Clone {
    /// Additive zero sharing the receiver's comparison parameters.
    fn zero_like(&self) -> Self;
    /// Accumulate `other` into `self`.
    fn add_assign(&mut self, other: &Self);
    /// Scaled copy, `c > 0`.
    fn scaled(&self, c: f64) -> Self;
    /// Total preorder; `Less` = preferred.
    fn pref_cmp(&self, other: &Self) -> Ordering;
    /// Whether two values live in the same comparison space.
    fn compatible(&self, _other: &Self) -> bool {
        true
    }
    /// Numeric view, when one exists (used by zero-sum verification).
    fn as_real(&self) -> Option<f64> {
        None
    }
}

impl Payoff for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }

    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }

    fn scaled(&self, c: f64) -> Self {
        debug_assert!(c > 0.0);
        self * c
    }

    fn pref_cmp(&self, other: &Self) -> Ordering {
        self.partial_cmp(other).expect("payoff values must be finite")
    }

    fn as_real(&self) -> Option<f64> {
        Some(*self)
    }
}

impl Payoff for DerivVector {
    fn zero_like(&self) -> Self {
        DerivVector::new(self.cutoff(), vec![0.0; self.coeffs().len()])
            .expect("zero vector is always valid")
    }

    fn add_assign(&mut self, other: &Self) {
        *self = self.add(other).expect("incompatible derivative vectors");
    }

    fn scaled(&self, c: f64) -> Self {
        self.scale(c).expect("scale factor must be positive")
    }

    fn pref_cmp(&self, other: &Self) -> Ordering {
        match lex_compare(self, other, &LexOrdering::default())
            .expect("incompatible derivative vectors")
        {
            PreferenceOutcome::FirstPreferred { .. } => Ordering::Less,
            PreferenceOutcome::SecondPreferred { .. } => Ordering::Greater,
            PreferenceOutcome::Equivalent => Ordering::Equal,
        }
    }

    fn compatible(&self, other: &Self) -> bool {
        DerivVector::compatible(self, other)
    }
}

/// Precomputed per-cell data shared by every [`DensityMix`] of one game:
/// support endpoints and raw moment tables of the cell distributions.
#[derive(Debug)]
pub struct MixCells {
    endpoints: Vec<f64>,
    // moments[cell][k-1] = k-th raw moment of that cell's distribution
    moments: Vec<Vec<f64>>,
    k_table: u32,
}

/// A nonnegative linear combination of the game's cell distributions,
/// tracked by its coefficient vector.
///
/// This is the payoff value for running fictitious play directly in
/// density space (the naive path that absorbs on compact supports).
/// Comparison follows the tail order: support endpoints first, then raw
/// moments scanned from the highest tabulated order downward, so the
/// asymptotically dominant difference decides.
#[derive(Clone, Debug)]
pub struct DensityMix {
    cells: Arc<MixCells>,
    coeffs: Vec<f64>,
}

impl DensityMix {
    /// Default moment-table depth.
    pub const DEFAULT_K_TABLE: u32 = 200;

    /// Build the game matrix of unit mixes for a grid of cell
    /// distributions. Every cell needs a bounded right tail, and moments
    /// up to `k_table` must stay finite.
    pub fn matrix(
        models: &[Vec<DistModel>],
        k_table: u32,
    ) -> Result<GameMatrix<DensityMix>, FpError> {
        let mut games = Self::matrices(&[models], k_table)?;
        Ok(games.pop().expect("one goal in, one game out"))
    }

    /// Build one matrix per goal over a single shared cell table. Mixing
    /// across goals (as the compound defender matrix does) requires the
    /// cells to share a table, so per-goal [`DensityMix::matrix`] calls
    /// would not interoperate. All goals must have the same shape.
    pub fn matrices(
        goals: &[&[Vec<DistModel>]],
        k_table: u32,
    ) -> Result<Vec<GameMatrix<DensityMix>>, FpError> {
        if goals.is_empty() || goals[0].is_empty() || goals[0][0].is_empty() {
            return Err(FpError::InvalidMatrix);
        }
        let rows_n = goals[0].len();
        let cols = goals[0][0].len();
        for goal in goals {
            if goal.len() != rows_n || goal.iter().any(|r| r.len() != cols) {
                return Err(FpError::InvalidMatrix);
            }
        }
        let mut endpoints = Vec::new();
        let mut moments = Vec::new();
        for goal in goals {
            for row in *goal {
                for model in row {
                    endpoints.push(model.upper_support());
                    moments.push(moment_sequence(model, k_table)?.as_slice().to_vec());
                }
            }
        }
        let ctx = Arc::new(MixCells { endpoints, moments, k_table });
        let n_cells = ctx.endpoints.len();
        goals
            .iter()
            .enumerate()
            .map(|(g, goal)| {
                let rows = goal
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        (0..row.len())
                            .map(|j| {
                                let mut coeffs = vec![0.0; n_cells];
                                coeffs[(g * rows_n + i) * cols + j] = 1.0;
                                DensityMix { cells: Arc::clone(&ctx), coeffs }
                            })
                            .collect()
                    })
                    .collect();
                GameMatrix::from_rows(rows)
            })
            .collect()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Right end of the mix's support: the largest endpoint among cells
    /// actually present. Empty mixes report negative infinity.
    pub fn support_end(&self) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.cells.endpoints)
            .filter(|(c, _)| **c > 0.0)
            .map(|(_, e)| *e)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn moment(&self, k: u32) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.cells.moments)
            .map(|(c, m)| c * m[(k - 1) as usize])
            .sum()
    }
}

impl PartialEq for DensityMix {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.cells, &other.cells) && self.coeffs == other.coeffs
    }
}

impl Payoff for DensityMix {
    fn zero_like(&self) -> Self {
        DensityMix {
            cells: Arc::clone(&self.cells),
            coeffs: vec![0.0; self.coeffs.len()],
        }
    }

    fn add_assign(&mut self, other: &Self) {
        debug_assert!(Arc::ptr_eq(&self.cells, &other.cells));
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
    }

    fn scaled(&self, c: f64) -> Self {
        debug_assert!(c > 0.0);
        DensityMix {
            cells: Arc::clone(&self.cells),
            coeffs: self.coeffs.iter().map(|w| c * w).collect(),
        }
    }

    fn pref_cmp(&self, other: &Self) -> Ordering {
        let (ea, eb) = (self.support_end(), other.support_end());
        if ea.is_finite() || eb.is_finite() {
            if ea - eb > 1e-12 {
                return Ordering::Greater;
            }
            if eb - ea > 1e-12 {
                return Ordering::Less;
            }
        }
        for k in (1..=self.cells.k_table).rev() {
            let (ma, mb) = (self.moment(k), other.moment(k));
            if !ma.is_finite() || !mb.is_finite() {
                continue;
            }
            let tol = 1e-9 * ma.abs().max(mb.abs());
            if (ma - mb).abs() > tol {
                return if ma < mb { Ordering::Less } else { Ordering::Greater };
            }
        }
        Ordering::Equal
    }

    fn compatible(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.cells, &other.cells)
    }
}

/// Rectangular payoff matrix: rows belong to the minimizing player,
/// columns to the maximizing one.
#[derive(Clone, Debug, PartialEq)]
pub struct GameMatrix<P: Payoff> {
    rows: usize,
    cols: usize,
    cells: Vec<P>, // row-major
}

impl<P: Payoff> GameMatrix<P> {
    pub fn from_rows(rows: Vec<Vec<P>>) -> Result<Self, FpError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(FpError::InvalidMatrix);
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(FpError::InvalidMatrix);
        }
        let n = rows.len();
        let cells: Vec<P> = rows.into_iter().flatten().collect();
        for (idx, cell) in cells.iter().enumerate() {
            if !cell.compatible(&cells[0]) {
                return Err(FpError::IncompatibleCells);
            }
            if let Some(v) = cell.as_real() {
                if !v.is_finite() {
                    return Err(FpError::NonFiniteCell { row: idx / cols, col: idx % cols });
                }
            }
        }
        Ok(GameMatrix { rows: n, cols, cells })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell(&self, row: usize, col: usize) -> &P {
        &self.cells[row * self.cols + col]
    }
}

/// Vector norm for the convergence criterion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Norm {
    #[default]
    LInf,
    L1,
    L2,
}

impl Norm {
    fn eval(self, diffs: impl Iterator<Item = f64>) -> f64 {
        match self {
            Norm::LInf => diffs.fold(0.0, |m, d| m.max(d.abs())),
            Norm::L1 => diffs.map(f64::abs).sum(),
            Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        }
    }

    fn counts_diff(self, prev: &[u64], next: &[u64]) -> f64 {
        self.eval(
            prev.iter()
                .zip(next)
                .map(|(a, b)| *b as f64 - *a as f64),
        )
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub epsilon: f64,
    pub max_iters: u64,
    pub norm: Norm,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { epsilon: 1e-3, max_iters: 100_000, norm: Norm::LInf }
    }
}

/// One solver iteration, as exported to trace files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: u64,
    pub row_choice: usize,
    pub col_choice: usize,
    pub criterion_value: f64,
    pub vup_updated: bool,
    pub vlow_updated: bool,
}

#[derive(Clone, Debug)]
pub struct EquilibriumResult<P: Payoff> {
    pub p_star: Vec<f64>,
    pub q_star: Vec<f64>,
    pub x_counts: Vec<u64>,
    pub y_counts: Vec<u64>,
    pub v_low: P,
    pub v_up: P,
    /// Mixture of all cells weighted by `p_star[i] * q_star[j]`.
    pub equilibrium_payoff: P,
    pub iterations: u64,
    pub converged: bool,
    pub trace: Vec<TraceRecord>,
}

fn pref_argmin<P: Payoff>(values: &[P]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i].pref_cmp(&values[best]) == Ordering::Less {
            best = i;
        }
    }
    best
}

fn pref_argmax<P: Payoff>(values: &[P]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i].pref_cmp(&values[best]) == Ordering::Greater {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

/// Index of the preferred (`Min`) or worst (`Max`) element; ties break
/// toward the lowest index. The caller may pass raw accumulated sums — a
/// common positive factor like `1/k` never moves the arg-extreme.
pub fn best_response<P: Payoff>(accumulated: &[P], direction: Direction) -> Result<usize, FpError> {
    if accumulated.is_empty() {
        return Err(FpError::EmptyList);
    }
    Ok(match direction {
        Direction::Min => pref_argmin(accumulated),
        Direction::Max => pref_argmax(accumulated),
    })
}

/// The termination test: `(1/k) * ||x_next - x_prev|| < epsilon` on the
/// raw choice counts.
pub fn convergence_check(
    x_prev: &[u64],
    x_next: &[u64],
    k: u64,
    epsilon: f64,
    norm: Norm,
) -> Result<bool, FpError> {
    if x_prev.len() != x_next.len() {
        return Err(FpError::LengthMismatch);
    }
    debug_assert!(k >= 1);
    Ok(norm.counts_diff(x_prev, x_next) / (k as f64) < epsilon)
}

/// Stuck-run diagnostic: reports the row if the last `window` iterations
/// all chose it and the upper bound saw no update in that span. Purely
/// observational; the solver's behavior never depends on it.
pub fn detect_absorption(trace: &[TraceRecord], window: usize) -> Option<usize> {
    assert!(window >= 2, "absorption window must be at least 2");
    if trace.len() < window {
        return None;
    }
    let tail = &trace[trace.len() - window..];
    let row = tail[0].row_choice;
    if tail.iter().all(|t| t.row_choice == row && !t.vup_updated) {
        Some(row)
    } else {
        None
    }
}

fn check_strategy(weights: &[f64], len: usize) -> Result<(), FpError> {
    if weights.len() != len || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(FpError::InvalidStrategy);
    }
    if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(FpError::InvalidStrategy);
    }
    Ok(())
}

/// The payoff under mixed strategies `(p, q)`: the cellwise mixture
/// `sum_ij p_i q_j F_ij`, computed in payoff space by linearity.
pub fn mixture_payoff<P: Payoff>(
    matrix: &GameMatrix<P>,
    p: &[f64],
    q: &[f64],
) -> Result<P, FpError> {
    check_strategy(p, matrix.rows())?;
    check_strategy(q, matrix.cols())?;
    let mut acc = matrix.cell(0, 0).zero_like();
    for (i, pi) in p.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            let w = pi * qj;
            if w > 0.0 {
                acc.add_assign(&matrix.cell(i, j).scaled(w));
            }
        }
    }
    Ok(acc)
}

/// Same mixture as a reportable distribution model, built from the game's
/// cell distributions. Zero-weight cells are dropped.
pub fn mixture_model(
    cells: &[Vec<DistModel>],
    p: &[f64],
    q: &[f64],
) -> Result<MixtureModel, FpError> {
    if cells.is_empty() || cells.iter().any(|r| r.len() != cells[0].len()) {
        return Err(FpError::InvalidMatrix);
    }
    check_strategy(p, cells.len())?;
    check_strategy(q, cells[0].len())?;
    let mut weights = Vec::new();
    let mut comps = Vec::new();
    for (i, pi) in p.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            let w = pi * qj;
            if w > 0.0 {
                weights.push(w);
                comps.push(cells[i][j].clone());
            }
        }
    }
    // Rounding in the products can leave the total a few ulps off 1.
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(MixtureModel::new(weights, comps)?)
}

/// State produced by the shared multi-adversary loop.
pub(crate) struct CompoundOutcome<P: Payoff> {
    pub x_counts: Vec<u64>,
    pub y_counts: Vec<Vec<u64>>,
    pub v_up: P,
    pub v_lows: Vec<P>,
    pub iterations: u64,
    pub converged: bool,
    pub trace: Vec<TraceRecord>,
}

/// Fictitious play against one hypothetical adversary per goal.
///
/// The defender best-responds to the weight-scaled sum of all adversaries'
/// accumulated columns; adversary `g` best-responds on its own goal matrix
/// to the defender's accumulated rows. With a single goal of weight 1 this
/// is exactly the classic loop: scan for the bounds, seed the first
/// column, then alternate row argmin / column argmax, pulling `v_up`
/// toward worse values and `v_low` toward better ones.
///
/// The termination criterion is only consulted on iterations that touched
/// a bound (reached or moved it). An absorbed run — one whose averages
/// stay strictly inside the bounds forever, as compact-support density
/// payoffs force — therefore never terminates early, which is the honest
/// outcome: its empirical frequencies stabilize on a spurious pure
/// strategy.
pub(crate) fn run_compound<P: Payoff>(
    goals: &[&GameMatrix<P>],
    weights: &[f64],
    opts: &SolveOptions,
) -> Result<CompoundOutcome<P>, FpError> {
    if !(opts.epsilon > 0.0) || opts.max_iters == 0 {
        return Err(FpError::InvalidOptions);
    }
    if goals.is_empty() || weights.len() != goals.len() {
        return Err(FpError::InvalidWeights);
    }
    if weights.iter().any(|w| !(*w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(FpError::InvalidWeights);
    }
    let (n, m) = (goals[0].rows(), goals[0].cols());
    if goals.iter().any(|g| g.rows() != n || g.cols() != m) {
        return Err(FpError::InvalidMatrix);
    }
    for g in goals.iter().skip(1) {
        if !g.cell(0, 0).compatible(goals[0].cell(0, 0)) {
            return Err(FpError::IncompatibleCells);
        }
    }
    let d = goals.len();

    // Defender-side accumulation uses the weight-scaled cells; weight 1
    // skips the multiplication so the single-goal path is bit-identical
    // to unscaled arithmetic.
    let scaled_cell = |g: usize, i: usize, j: usize| -> P {
        if weights[g] == 1.0 {
            goals[g].cell(i, j).clone()
        } else {
            goals[g].cell(i, j).scaled(weights[g])
        }
    };

    // Upper bound: worst row of the defender's weighted per-goal row
    // minima; remember each goal's minimizing column of that row.
    let mut row_min_cols = vec![vec![0usize; n]; d];
    let mut combined_row_min: Vec<P> = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc: Option<P> = None;
        for g in 0..d {
            let mut best = 0;
            for j in 1..m {
                if goals[g].cell(i, j).pref_cmp(goals[g].cell(i, best)) == Ordering::Less {
                    best = j;
                }
            }
            row_min_cols[g][i] = best;
            let contribution = scaled_cell(g, i, best);
            match &mut acc {
                None => acc = Some(contribution),
                Some(a) => a.add_assign(&contribution),
            }
        }
        combined_row_min.push(acc.expect("at least one goal"));
    }
    let r_init = pref_argmax(&combined_row_min);
    let mut v_up = combined_row_min[r_init].clone();

    // Per-goal lower bounds: each adversary's best column of the column
    // maxima on its own (unscaled) matrix.
    let mut v_lows: Vec<P> = (0..d)
        .map(|g| {
            let col_max: Vec<P> = (0..m)
                .map(|j| {
                    let mut best = 0;
                    for i in 1..n {
                        if goals[g].cell(i, j).pref_cmp(goals[g].cell(best, j))
                            == Ordering::Greater
                        {
                            best = i;
                        }
                    }
                    goals[g].cell(best, j).clone()
                })
                .collect();
            col_max[pref_argmin(&col_max)].clone()
        })
        .collect();

    // Seed each adversary's first column and the defender's belief u.
    let mut y_counts = vec![vec![0u64; m]; d];
    let mut u: Vec<P> = (0..n)
        .map(|i| {
            let mut acc: Option<P> = None;
            for g in 0..d {
                let contribution = scaled_cell(g, i, row_min_cols[g][r_init]);
                match &mut acc {
                    None => acc = Some(contribution),
                    Some(a) => a.add_assign(&contribution),
                }
            }
            acc.expect("at least one goal")
        })
        .collect();
    for g in 0..d {
        y_counts[g][row_min_cols[g][r_init]] += 1;
    }

    // Adversary beliefs about the defender, per goal and column.
    let mut v: Vec<Vec<P>> = (0..d)
        .map(|g| (0..m).map(|j| goals[g].cell(0, j).zero_like()).collect())
        .collect();

    let mut x_counts = vec![0u64; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=opts.max_iters {
        iterations = k;
        let inv_k = 1.0 / k as f64;

        let r = pref_argmin(&u);
        let u_avg = u[r].scaled(inv_k);
        let cmp_up = u_avg.pref_cmp(&v_up);
        let vup_touched = cmp_up != Ordering::Less;
        if cmp_up == Ordering::Greater {
            v_up = u_avg;
        }

        let prev_x = x_counts.clone();
        x_counts[r] += 1;

        let mut first_col = 0;
        let mut vlow_touched = false;
        for g in 0..d {
            for j in 0..m {
                v[g][j].add_assign(goals[g].cell(r, j));
            }
            let c = pref_argmax(&v[g]);
            if g == 0 {
                first_col = c;
            }
            let v_avg = v[g][c].scaled(inv_k);
            let cmp_low = v_avg.pref_cmp(&v_lows[g]);
            vlow_touched |= cmp_low != Ordering::Greater;
            if cmp_low == Ordering::Less {
                v_lows[g] = v_avg;
            }
            for (i, ui) in u.iter_mut().enumerate() {
                ui.add_assign(&scaled_cell(g, i, c));
            }
            y_counts[g][c] += 1;
        }

        let criterion_value = opts.norm.counts_diff(&prev_x, &x_counts) / k as f64;
        trace.push(TraceRecord {
            iter: k,
            row_choice: r,
            col_choice: first_col,
            criterion_value,
            vup_updated: vup_touched,
            vlow_updated: vlow_touched,
        });

        if (vup_touched || vlow_touched)
            && convergence_check(&prev_x, &x_counts, k, opts.epsilon, opts.norm)?
        {
            converged = true;
            break;
        }
    }

    Ok(CompoundOutcome { x_counts, y_counts, v_up, v_lows, iterations, converged, trace })
}

fn normalize_counts(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    counts.iter().map(|c| *c as f64 / total as f64).collect()
}

/// Run fictitious play on a single matrix.
///
/// A hit of the iteration cap is reported through `converged = false`
/// with the state reached so far, not as an error.
pub fn solve<P: Payoff>(
    matrix: &GameMatrix<P>,
    opts: &SolveOptions,
) -> Result<EquilibriumResult<P>, FpError> {
    let outcome = run_compound(&[matrix], &[1.0], opts)?;
    let p_star = normalize_counts(&outcome.x_counts);
    let q_star = normalize_counts(&outcome.y_counts[0]);
    let equilibrium_payoff = mixture_payoff(matrix, &p_star, &q_star)?;
    Ok(EquilibriumResult {
        p_star,
        q_star,
        x_counts: outcome.x_counts,
        y_counts: outcome.y_counts.into_iter().next().expect("one goal"),
        v_low: outcome.v_lows.into_iter().next().expect("one goal"),
        v_up: outcome.v_up,
        equilibrium_payoff,
        iterations: outcome.iterations,
        converged: outcome.converged,
        trace: outcome.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kde::{estimate, BandwidthRule, Kernel, SampleSet};
    use approx::assert_relative_eq;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn real_matrix(rows: &[&[f64]]) -> GameMatrix<f64> {
        GameMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn crisp_game_reaches_known_equilibrium() {
        let game = real_matrix(&[&[2.0, 5.0], &[3.0, 1.0]]);
        let opts = SolveOptions { epsilon: 1e-4, max_iters: 200_000, norm: Norm::LInf };
        let result = solve(&game, &opts).unwrap();
        assert!(result.converged);
        assert!((result.equilibrium_payoff - 2.6).abs() <= 0.05);
        assert!((result.p_star[0] - 0.4).abs() <= 0.05);
        assert!((result.p_star[1] - 0.6).abs() <= 0.05);
        assert!((result.q_star[0] - 0.8).abs() <= 0.05);
        assert!((result.q_star[1] - 0.2).abs() <= 0.05);
    }

    #[test]
    fn single_cell_game_is_exact() {
        let game = real_matrix(&[&[7.0]]);
        let result = solve(&game, &SolveOptions::default()).unwrap();
        assert!(result.converged);
        assert_eq!(result.p_star, vec![1.0]);
        assert_eq!(result.q_star, vec![1.0]);
        assert_relative_eq!(result.equilibrium_payoff, 7.0, max_relative = 1e-12);
    }

    #[test]
    fn saddle_point_game_locks_pure_strategies() {
        let game = real_matrix(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let result = solve(&game, &SolveOptions::default()).unwrap();
        assert!(result.converged);
        assert_relative_eq!(result.p_star[0], 1.0, epsilon = 1e-12);
        assert!(result.q_star[1] > 0.95);
        assert!((result.equilibrium_payoff - 2.0).abs() <= 0.05);
    }

    #[test]
    fn empty_matrices_are_rejected() {
        assert!(GameMatrix::<f64>::from_rows(vec![]).is_err());
        assert!(GameMatrix::<f64>::from_rows(vec![vec![]]).is_err());
        assert!(GameMatrix::from_rows(vec![vec![1.0], vec![2.0, 3.0]]).is_err());
        assert!(GameMatrix::from_rows(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn best_response_picks_extremes_with_low_index_ties() {
        assert_eq!(best_response(&[3.0, 1.0, 2.0], Direction::Min).unwrap(), 1);
        assert_eq!(best_response(&[3.0, 1.0, 2.0], Direction::Max).unwrap(), 0);
        assert_eq!(best_response(&[5.0, 5.0, 5.0], Direction::Min).unwrap(), 0);
        assert!(best_response::<f64>(&[], Direction::Min).is_err());

        // Equal leading components: the second entry wins on the next
        // component (smaller stored value is preferred).
        let u = DerivVector::new(1.0, vec![0.2, 1.0]).unwrap();
        let v = DerivVector::new(1.0, vec![0.2, -1.0]).unwrap();
        assert_eq!(best_response(&[u, v], Direction::Min).unwrap(), 1);
    }

    #[test]
    fn convergence_check_examples() {
        assert!(convergence_check(&[10, 20], &[10, 21], 31, 0.05, Norm::LInf).unwrap());
        assert!(convergence_check(&[4, 4], &[4, 4], 1, 1e-9, Norm::LInf).unwrap());
        assert!(!convergence_check(&[1, 0], &[2, 0], 1, 0.5, Norm::LInf).unwrap());
        assert!(convergence_check(&[1], &[2, 0], 1, 0.5, Norm::LInf).is_err());

        // Norms only differ once more than one component moves.
        assert_relative_eq!(Norm::L1.counts_diff(&[1, 2], &[2, 4]), 3.0);
        assert_relative_eq!(Norm::L2.counts_diff(&[1, 2], &[2, 4]), 5.0f64.sqrt());
        assert_relative_eq!(Norm::LInf.counts_diff(&[1, 2], &[2, 4]), 2.0);
    }

    fn trace_row(iter: u64, row: usize, vup: bool) -> TraceRecord {
        TraceRecord {
            iter,
            row_choice: row,
            col_choice: 0,
            criterion_value: 1.0 / iter as f64,
            vup_updated: vup,
            vlow_updated: false,
        }
    }

    #[test]
    fn absorption_detector_requires_constant_quiet_tail() {
        let stuck: Vec<TraceRecord> = (1..=1000).map(|k| trace_row(k, 0, false)).collect();
        assert_eq!(detect_absorption(&stuck, 1000), Some(0));

        let alternating: Vec<TraceRecord> =
            (1..=200).map(|k| trace_row(k, (k % 2) as usize, false)).collect();
        assert_eq!(detect_absorption(&alternating, 100), None);

        let mut touched = stuck.clone();
        touched[990].vup_updated = true;
        assert_eq!(detect_absorption(&touched, 100), None);
        // ...but a touch before the window does not mask the stuck tail.
        assert_eq!(detect_absorption(&touched, 5), Some(0));

        assert_eq!(detect_absorption(&stuck[..3], 100), None);
    }

    #[test]
    fn mixture_payoff_matches_bilinear_form() {
        let game = real_matrix(&[&[2.0, 5.0], &[3.0, 1.0]]);
        let p = [0.4, 0.6];
        let q = [0.8, 0.2];
        let value = mixture_payoff(&game, &p, &q).unwrap();
        let manual = 0.4 * (0.8 * 2.0 + 0.2 * 5.0) + 0.6 * (0.8 * 3.0 + 0.2 * 1.0);
        assert_relative_eq!(value, manual, max_relative = 1e-14);
        assert!(mixture_payoff(&game, &[0.7, 0.7], &q).is_err());
        assert!(mixture_payoff(&game, &[0.4], &q).is_err());
    }

    fn epa_cell(center: f64, h: f64) -> DistModel {
        DistModel::Kde(
            estimate(
                SampleSet::new(vec![center - 0.02, center, center + 0.02]).unwrap(),
                Kernel::Epanechnikov,
                BandwidthRule::Explicit { h },
            )
            .unwrap(),
        )
    }

    #[test]
    fn mixture_model_follows_the_strategy_weights() {
        let cells = vec![
            vec![epa_cell(2.0, 0.2), epa_cell(5.0, 0.2)],
            vec![epa_cell(3.0, 0.2), epa_cell(1.0, 0.2)],
        ];

        // Pure strategies pick out a single cell.
        let pure = mixture_model(&cells, &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(pure.components().len(), 1);
        assert_eq!(&pure.components()[0], &cells[0][0]);

        // Half/half row mix over the first column averages densities.
        let mix = mixture_model(&cells, &[0.5, 0.5], &[1.0, 0.0]).unwrap();
        let model = DistModel::Mixture(mix);
        for x in [1.9, 2.5, 3.1] {
            let expect = 0.5 * cells[0][0].density(x) + 0.5 * cells[1][0].density(x);
            assert_relative_eq!(model.density(x), expect, max_relative = 1e-12);
        }

        // Moments are the weight-mixed cell moments.
        use crate::preference::moment;
        let p = [0.3, 0.7];
        let q = [0.6, 0.4];
        let mix = DistModel::Mixture(mixture_model(&cells, &p, &q).unwrap());
        for k in 1..=10u32 {
            let expect: f64 = (0..2)
                .flat_map(|i| (0..2).map(move |j| (i, j)))
                .map(|(i, j)| p[i] * q[j] * moment(&cells[i][j], k).unwrap())
                .sum();
            assert_relative_eq!(moment(&mix, k).unwrap(), expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn counts_are_conserved_and_normalization_keeps_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..5 {
            let n = rng.gen_range(2..5);
            let m = rng.gen_range(2..5);
            let mut values: Vec<f64> = (1..=(n * m) as i64).map(|v| v as f64 * 0.7).collect();
            values.shuffle(&mut rng);
            let rows: Vec<Vec<f64>> =
                (0..n).map(|i| values[i * m..(i + 1) * m].to_vec()).collect();
            let game = GameMatrix::from_rows(rows).unwrap();
            let opts = SolveOptions { epsilon: 1e-3, max_iters: 20_000, norm: Norm::LInf };
            let result = solve(&game, &opts).unwrap();
            assert_eq!(result.x_counts.iter().sum::<u64>(), result.iterations);
            assert_eq!(result.y_counts.iter().sum::<u64>(), result.iterations + 1);
            let argmax_counts =
                (0..n).max_by_key(|&i| result.x_counts[i]).unwrap();
            let argmax_p = (0..n)
                .max_by(|&a, &b| result.p_star[a].partial_cmp(&result.p_star[b]).unwrap())
                .unwrap();
            assert_eq!(argmax_counts, argmax_p);
            assert_relative_eq!(result.p_star.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(result.q_star.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let game = real_matrix(&[&[2.0, 5.0], &[3.0, 1.0]]);
        let opts = SolveOptions::default();
        let a = solve(&game, &opts).unwrap();
        let b = solve(&game, &opts).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.p_star, b.p_star);
        assert_eq!(a.q_star, b.q_star);
        assert_eq!(a.v_up, b.v_up);
        assert_eq!(a.v_low, b.v_low);
    }

    #[test]
    fn common_positive_scaling_leaves_the_trajectory_unchanged() {
        let base = real_matrix(&[&[2.0, 5.0], &[3.0, 1.0]]);
        let opts = SolveOptions { epsilon: 1e-3, max_iters: 5_000, norm: Norm::LInf };
        let a = solve(&base, &opts).unwrap();
        let choices =
            |r: &EquilibriumResult<f64>| -> Vec<(usize, usize)> {
                r.trace.iter().map(|t| (t.row_choice, t.col_choice)).collect()
            };

        // Power-of-two factor: rounding commutes with the scaling, so the
        // run is reproduced bit for bit, ties included.
        let doubled = real_matrix(&[&[4.0, 10.0], &[6.0, 2.0]]);
        let b = solve(&doubled, &opts).unwrap();
        assert_eq!(choices(&a), choices(&b));
        assert_eq!(a.p_star, b.p_star);
        assert_eq!(a.q_star, b.q_star);

        // A non-dyadic factor may resolve bound-touch ties differently,
        // shifting the stopping iteration, but not the equilibrium.
        let tripled = real_matrix(&[&[6.0, 15.0], &[9.0, 3.0]]);
        let c = solve(&tripled, &opts).unwrap();
        assert!((c.p_star[0] - a.p_star[0]).abs() < 0.05);
        assert!((c.q_star[0] - a.q_star[0]).abs() < 0.05);
    }

    /// Straight-line reimplementation of the loop for plain numbers, used
    /// as an independent oracle for the generic engine.
    fn reference_real_fp(
        rows: &[Vec<f64>],
        epsilon: f64,
        max_iters: u64,
    ) -> (Vec<(usize, usize)>, Vec<f64>, Vec<f64>, Vec<u64>, Vec<u64>, bool) {
        let n = rows.len();
        let m = rows[0].len();
        let row_min_col = |i: usize| -> usize {
            (0..m).fold(0, |best, j| if rows[i][j] < rows[i][best] { j } else { best })
        };
        let r0 = (0..n).fold(0, |best, i| {
            if rows[i][row_min_col(i)] > rows[best][row_min_col(best)] {
                i
            } else {
                best
            }
        });
        let mut v_up = rows[r0][row_min_col(r0)];
        let mut v_low = (0..m)
            .map(|j| (0..n).map(|i| rows[i][j]).fold(f64::NEG_INFINITY, f64::max))
            .fold(f64::INFINITY, f64::min);
        let c0 = row_min_col(r0);
        let mut u: Vec<f64> = (0..n).map(|i| rows[i][c0]).collect();
        let mut x = vec![0u64; n];
        let mut y = vec![0u64; m];
        y[c0] += 1;
        let mut v = vec![0.0f64; m];
        let mut ups = vec![v_up];
        let mut lows = vec![v_low];
        let mut choices = Vec::new();
        let mut converged = false;
        for k in 1..=max_iters {
            // Mirror the engine's arithmetic exactly: averages are formed
            // by multiplying with the reciprocal, not by dividing.
            let inv_k = 1.0 / k as f64;
            let r = (0..n).fold(0, |b, i| if u[i] < u[b] { i } else { b });
            let u_avg = u[r] * inv_k;
            let touched_up = u_avg >= v_up;
            if u_avg > v_up {
                v_up = u_avg;
            }
            x[r] += 1;
            for j in 0..m {
                v[j] += rows[r][j];
            }
            let c = (0..m).fold(0, |b, j| if v[j] > v[b] { j } else { b });
            let v_avg = v[c] * inv_k;
            let touched_low = v_avg <= v_low;
            if v_avg < v_low {
                v_low = v_avg;
            }
            for i in 0..n {
                u[i] += rows[i][c];
            }
            y[c] += 1;
            ups.push(v_up);
            lows.push(v_low);
            choices.push((r, c));
            if (touched_up || touched_low) && 1.0 / (k as f64) < epsilon {
                converged = true;
                break;
            }
        }
        (choices, ups, lows, x, y, converged)
    }

    #[test]
    fn engine_matches_reference_and_bounds_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..6 {
            let n = rng.gen_range(2..5);
            let m = rng.gen_range(2..5);
            let mut values: Vec<f64> = (1..=(n * m) as i64).map(|v| v as f64 * 0.31).collect();
            values.shuffle(&mut rng);
            let rows: Vec<Vec<f64>> =
                (0..n).map(|i| values[i * m..(i + 1) * m].to_vec()).collect();
            let opts = SolveOptions { epsilon: 5e-3, max_iters: 2_000, norm: Norm::LInf };
            let result = solve(&GameMatrix::from_rows(rows.clone()).unwrap(), &opts).unwrap();
            let (choices, ups, lows, x, y, converged) =
                reference_real_fp(&rows, opts.epsilon, opts.max_iters);
            let engine_choices: Vec<(usize, usize)> =
                result.trace.iter().map(|t| (t.row_choice, t.col_choice)).collect();
            assert_eq!(engine_choices, choices);
            assert_eq!(result.x_counts, x);
            assert_eq!(result.y_counts, y);
            assert_eq!(result.converged, converged);
            assert_eq!(result.v_up, *ups.last().unwrap());
            assert_eq!(result.v_low, *lows.last().unwrap());
            // The upper bound only ever rises, the lower only ever falls.
            assert!(ups.windows(2).all(|w| w[1] >= w[0]));
            assert!(lows.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn density_space_play_absorbs_on_compact_supports() {
        let cells = vec![
            vec![epa_cell(2.0, 0.2), epa_cell(5.0, 0.2)],
            vec![epa_cell(3.0, 0.2), epa_cell(1.0, 0.2)],
        ];
        let game = DensityMix::matrix(&cells, DensityMix::DEFAULT_K_TABLE).unwrap();
        let opts = SolveOptions { epsilon: 1e-3, max_iters: 3_000, norm: Norm::LInf };
        let result = solve(&game, &opts).unwrap();
        assert!(!result.converged);
        assert_eq!(result.iterations, 3_000);
        // The run walks into the pure profile (second row, second column)
        // and the bounds go quiet.
        assert_eq!(detect_absorption(&result.trace, 1000), Some(1));
        assert!(result.p_star[1] > 0.99);
        assert!(result.q_star[1] > 0.99);
        assert!(result.trace[5..].iter().all(|t| t.row_choice == 1 && t.col_choice == 1));
        assert!(result.trace[2..].iter().all(|t| !t.vup_updated && !t.vlow_updated));
    }

    #[test]
    fn density_mix_comparison_follows_supports_then_moments() {
        let cells = vec![vec![epa_cell(1.0, 0.2), epa_cell(3.0, 0.2)]];
        let game = DensityMix::matrix(&cells, 200).unwrap();
        let low = game.cell(0, 0);
        let high = game.cell(0, 1);
        assert_eq!(low.pref_cmp(high), Ordering::Less);
        assert_eq!(high.pref_cmp(low), Ordering::Greater);
        assert_eq!(low.pref_cmp(&low.clone()), Ordering::Equal);

        // Same support end, different weight on the heavy cell: the
        // lighter combination is preferred.
        let mut heavy = high.clone();
        heavy.add_assign(high);
        heavy.add_assign(low);
        let mut light = high.clone();
        light.add_assign(low);
        light.add_assign(low);
        assert_eq!(light.scaled(1.0 / 3.0).pref_cmp(&heavy.scaled(1.0 / 3.0)), Ordering::Less);

        // Mixes over different games never compare.
        let other = DensityMix::matrix(&cells, 200).unwrap();
        assert!(!game.cell(0, 0).compatible(other.cell(0, 0)));
    }

    #[test]
    fn shared_cell_table_spans_goals() {
        let g0 = vec![
            vec![epa_cell(1.0, 0.2), epa_cell(3.0, 0.2)],
            vec![epa_cell(2.0, 0.2), epa_cell(1.5, 0.2)],
        ];
        let g1 = vec![
            vec![epa_cell(4.0, 0.2), epa_cell(2.5, 0.2)],
            vec![epa_cell(1.2, 0.2), epa_cell(3.5, 0.2)],
        ];
        let games = DensityMix::matrices(&[&g0, &g1], 100).unwrap();
        assert_eq!(games.len(), 2);

        // Cells from different goals combine, which is what the compound
        // defender matrix needs.
        assert!(games[0].cell(0, 0).compatible(games[1].cell(1, 1)));
        let mut acc = games[0].cell(0, 0).zero_like();
        acc.add_assign(&games[0].cell(0, 0).scaled(0.5));
        acc.add_assign(&games[1].cell(1, 1).scaled(0.5));
        assert_relative_eq!(acc.support_end(), 3.5 + 0.02 + 0.2, max_relative = 1e-12);

        // Per-goal comparisons match the singly built game.
        let single = DensityMix::matrix(&g0, 100).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for i2 in 0..2 {
                    for j2 in 0..2 {
                        assert_eq!(
                            games[0].cell(i, j).pref_cmp(games[0].cell(i2, j2)),
                            single.cell(i, j).pref_cmp(single.cell(i2, j2))
                        );
                    }
                }
            }
        }
    }
}
