//! Matrix games whose payoffs are probability distributions rather than
//! numbers.
//!
//! The row player picks a row to *minimize* loss, the column player picks a
//! column to *maximize* damage, and each cell of the game holds an empirical
//! loss distribution estimated from simulation samples. Distributions are
//! ranked by a tail order: one distribution precedes another when all of its
//! sufficiently high moments are smaller, which means its right tail carries
//! less risk mass.
//!
//! The crate is organized along the processing pipeline:
//!
//! * [`kde`] — kernel density estimation (Epanechnikov and Gaussian),
//!   bandwidth rules, cdf/quantile evaluation, and quantile truncation.
//! * [`preference`] — the tail order itself: moment-sequence comparison,
//!   the sorted-sample rule for Epanechnikov estimates, deterministic vs.
//!   random and compact vs. infinite support cases, and mixtures.
//! * [`tailrep`] — a finite representation of a smooth density's right tail
//!   as sign-adjusted derivatives at a cutoff, compared lexicographically;
//!   closed-form Gaussian KDE derivatives via Hermite polynomials.
//! * [`fp`] — fictitious play over any payoff space with add/scale/compare,
//!   including bound bookkeeping, convergence checking, and detection of the
//!   absorption failure mode that plain density payoffs can trigger.
//! * [`mgss`] — multi-goal security strategies: one defender against one
//!   hypothetical adversary per goal, on a weighted compound game.
//! * [`quad`] — the numeric integration routines shared by the above.
//!
//! # Example
//!
//! Solve a 2x2 game with plain numeric payoffs:
//!
//! ```
//! use distgame::fp::{solve, GameMatrix, SolveOptions};
//!
//! let game = GameMatrix::from_rows(vec![vec![2.0, 5.0], vec![3.0, 1.0]]).unwrap();
//! let result = solve(&game, &SolveOptions::default()).unwrap();
//! assert!((result.p_star[0] - 0.4).abs() < 0.05);
//! assert!((result.q_star[0] - 0.8).abs() < 0.05);
//! ```

pub mod fp;
pub mod kde;
pub mod mgss;
pub mod preference;
pub mod quad;
pub mod tailrep;

pub use fp::{EquilibriumResult, GameMatrix, Norm, Payoff, SolveOptions, TraceRecord};
pub use kde::{BandwidthRule, KdeModel, Kernel, SampleSet};
pub use mgss::{CompoundGame, MgssResult, MultiGoalGame};
pub use preference::{DistModel, MixtureModel, PreferenceOutcome};
pub use tailrep::{DerivVector, LexOrdering};
