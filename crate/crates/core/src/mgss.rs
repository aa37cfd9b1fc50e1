//! Multi-goal security strategies via a one-against-all compound game.
//!
//! With `d` goals the defender faces `d` hypothetical adversaries at
//! once: each adversary best-responds on its own goal matrix, while the
//! defender best-responds to the weight-scaled sum of all their
//! accumulated payoffs. One fictitious-play run over that compound game
//! yields a single defender strategy `x*` together with one worst-case
//! strategy and one assurance payoff per goal.
//!
//! Adversary `g`'s formal payoff is `-α_g · u_g`, but distributions have
//! no negation; maximizing `-α_g · u_g` is realized as direction-flipped
//! comparisons on goal matrix `g` itself.

use thiserror::Error;

use crate::fp::{
    mixture_payoff, run_compound, FpError, GameMatrix, Payoff, SolveOptions, TraceRecord,
};

#[derive(Debug, Error)]
pub enum MgssError {
    #[error("a multi-goal game needs at least one goal matrix")]
    EmptyGame,
    #[error("goal matrices must share dimensions and payoff space")]
    ShapeMismatch,
    #[error("goal weights must be strictly positive and sum to 1 within 1e-12")]
    InvalidWeights,
    #[error(transparent)]
    Fp(#[from] FpError),
}

/// `d` goal matrices over shared strategy spaces, plus the positive
/// unit-sum priority weights of the goals.
#[derive(Clone, Debug)]
pub struct MultiGoalGame<P: Payoff> {
    goals: Vec<GameMatrix<P>>,
    weights: Vec<f64>,
}

impl<P: Payoff> MultiGoalGame<P> {
    /// `weights = None` assigns the uniform priority `1/d` to every goal.
    pub fn new(
        goal_matrices: Vec<GameMatrix<P>>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self, MgssError> {
        if goal_matrices.is_empty() {
            return Err(MgssError::EmptyGame);
        }
        let (n, m) = (goal_matrices[0].rows(), goal_matrices[0].cols());
        for g in &goal_matrices {
            if g.rows() != n || g.cols() != m {
                return Err(MgssError::ShapeMismatch);
            }
            if !g.cell(0, 0).compatible(goal_matrices[0].cell(0, 0)) {
                return Err(MgssError::ShapeMismatch);
            }
        }
        let d = goal_matrices.len();
        let weights = weights.unwrap_or_else(|| vec![1.0 / d as f64; d]);
        if weights.len() != d
            || weights.iter().any(|w| !(*w > 0.0))
            || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(MgssError::InvalidWeights);
        }
        Ok(MultiGoalGame { goals: goal_matrices, weights })
    }

    pub fn d(&self) -> usize {
        self.goals.len()
    }

    pub fn goals(&self) -> &[GameMatrix<P>] {
        &self.goals
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// The scalarized compound game in reduced two-player form: the
/// defender's payoff matrix is the weight-mixed cellwise combination of
/// the goals, and each adversary keeps its own goal matrix.
#[derive(Clone, Debug)]
pub struct CompoundGame<P: Payoff> {
    pub defender: GameMatrix<P>,
    pub goals: Vec<GameMatrix<P>>,
    pub weights: Vec<f64>,
}

pub fn build_compound<P: Payoff>(game: &MultiGoalGame<P>) -> Result<CompoundGame<P>, MgssError> {
    let (n, m) = (game.goals[0].rows(), game.goals[0].cols());
    let rows: Vec<Vec<P>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let mut acc = if game.weights[0] == 1.0 {
                        game.goals[0].cell(i, j).clone()
                    } else {
                        game.goals[0].cell(i, j).scaled(game.weights[0])
                    };
                    for g in 1..game.goals.len() {
                        acc.add_assign(&game.goals[g].cell(i, j).scaled(game.weights[g]));
                    }
                    acc
                })
                .collect()
        })
        .collect();
    Ok(CompoundGame {
        defender: GameMatrix::from_rows(rows)?,
        goals: game.goals.clone(),
        weights: game.weights.clone(),
    })
}

#[derive(Clone, Debug)]
pub struct MgssResult<P: Payoff> {
    pub x_star: Vec<f64>,
    pub y_stars: Vec<Vec<f64>>,
    pub x_counts: Vec<u64>,
    pub y_counts: Vec<Vec<u64>>,
    pub v_up: P,
    pub v_lows: Vec<P>,
    /// Per-goal payoff under `(x_star, y_stars[g])`: the mixture of goal
    /// `g`'s cells with weights `x*_i · y*_{g,j}`.
    pub assurance_payoffs: Vec<P>,
    pub iterations: u64,
    pub converged: bool,
    pub trace: Vec<TraceRecord>,
}

/// Run multi-adversary fictitious play. Convergence is gated on the
/// defender's empirical frequencies only; hitting the iteration cap
/// reports `converged = false` instead of failing.
pub fn solve_mgss<P: Payoff>(
    game: &MultiGoalGame<P>,
    opts: &SolveOptions,
) -> Result<MgssResult<P>, MgssError> {
    let goal_refs: Vec<&GameMatrix<P>> = game.goals.iter().collect();
    let outcome = run_compound(&goal_refs, &game.weights, opts)?;
    let total_x: u64 = outcome.x_counts.iter().sum();
    let x_star: Vec<f64> =
        outcome.x_counts.iter().map(|c| *c as f64 / total_x as f64).collect();
    let y_stars: Vec<Vec<f64>> = outcome
        .y_counts
        .iter()
        .map(|counts| {
            let total: u64 = counts.iter().sum();
            counts.iter().map(|c| *c as f64 / total as f64).collect()
        })
        .collect();
    let assurance_payoffs = game
        .goals
        .iter()
        .zip(&y_stars)
        .map(|(goal, y)| mixture_payoff(goal, &x_star, y))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MgssResult {
        x_star,
        y_stars,
        x_counts: outcome.x_counts,
        y_counts: outcome.y_counts,
        v_up: outcome.v_up,
        v_lows: outcome.v_lows,
        assurance_payoffs,
        iterations: outcome.iterations,
        converged: outcome.converged,
        trace: outcome.trace,
    })
}

/// Outcome of the zero-sum sanity check on a compound game.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZeroSumCheck {
    Holds,
    Violated,
    /// Payoffs carry no numeric view; the identity is not verifiable in
    /// distribution space.
    NotVerifiable,
}

/// Check that the defender's payoff cancels the adversaries' combined
/// payoff: `f_0 - Σ_g α_g · u_g = 0` cellwise within `1e-10`, evaluated
/// through the payoffs' numeric view.
pub fn verify_zero_sum<P: Payoff>(compound: &CompoundGame<P>) -> ZeroSumCheck {
    for i in 0..compound.defender.rows() {
        for j in 0..compound.defender.cols() {
            let Some(f0) = compound.defender.cell(i, j).as_real() else {
                return ZeroSumCheck::NotVerifiable;
            };
            let mut opponents = 0.0;
            for (goal, alpha) in compound.goals.iter().zip(&compound.weights) {
                let Some(v) = goal.cell(i, j).as_real() else {
                    return ZeroSumCheck::NotVerifiable;
                };
                opponents += alpha * v;
            }
            if (f0 - opponents).abs() > 1e-10 {
                return ZeroSumCheck::Violated;
            }
        }
    }
    ZeroSumCheck::Holds
}
