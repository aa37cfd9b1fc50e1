//! End-to-end acceptance checks, one test per shipping criterion.
//!
//! Each test prints a single `criterion N ... PASS` line (visible with
//! `--nocapture`); the harness itself reports one ok/FAILED line per
//! criterion either way.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use distgame::fp::{
    detect_absorption, solve, DensityMix, GameMatrix, Norm, SolveOptions,
};
use distgame::kde::{estimate, BandwidthRule, KdeModel, Kernel, SampleSet};
use distgame::mgss::{
    build_compound, solve_mgss, verify_zero_sum, MultiGoalGame, ZeroSumCheck,
};
use distgame::preference::{
    compare_by_moments, compare_det_vs_random, compare_epanechnikov, compare_models, moment,
    DistModel, MixtureModel, PreferenceOutcome, Procedure,
};
use distgame::tailrep::{gaussian_kde_derivs, hermite};

const FIRST: PreferenceOutcome = PreferenceOutcome::FirstPreferred { strict: true };
const SECOND: PreferenceOutcome = PreferenceOutcome::SecondPreferred { strict: true };

fn epa(values: &[f64], h: f64) -> KdeModel {
    estimate(
        SampleSet::new(values.to_vec()).unwrap(),
        Kernel::Epanechnikov,
        BandwidthRule::Explicit { h },
    )
    .unwrap()
}

fn gauss(values: &[f64], h: f64) -> KdeModel {
    estimate(
        SampleSet::new(values.to_vec()).unwrap(),
        Kernel::Gaussian,
        BandwidthRule::Explicit { h },
    )
    .unwrap()
}

fn cluster(v: f64) -> Vec<f64> {
    vec![v - 0.01, v, v + 0.01]
}

const GAME_VALUES: [[f64; 2]; 2] = [[2.0, 5.0], [3.0, 1.0]];

fn choices(trace: &[distgame::fp::TraceRecord]) -> Vec<(usize, usize)> {
    trace.iter().map(|t| (t.row_choice, t.col_choice)).collect()
}

#[test]
fn criterion_01_crisp_game_equilibrium() {
    let start = Instant::now();
    let game = GameMatrix::from_rows(GAME_VALUES.iter().map(|r| r.to_vec()).collect()).unwrap();
    let opts = SolveOptions { epsilon: 1e-4, max_iters: 200_000, norm: Norm::LInf };
    let result = solve(&game, &opts).unwrap();
    assert!(result.converged, "must converge within 200000 iterations");
    assert!((result.equilibrium_payoff - 2.6).abs() <= 0.05);
    assert!((result.p_star[0] - 0.4).abs() <= 0.05);
    assert!((result.p_star[1] - 0.6).abs() <= 0.05);
    assert!((result.q_star[0] - 0.8).abs() <= 0.05);
    assert!((result.q_star[1] - 0.2).abs() <= 0.05);
    assert!(start.elapsed() < Duration::from_secs(5));
    println!("criterion 1 (crisp-game equilibrium): PASS");
}

#[test]
fn criterion_02_density_space_absorption() {
    let cells: Vec<Vec<DistModel>> = GAME_VALUES
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| DistModel::Kde(epa(&cluster(*v), 0.2)))
                .collect()
        })
        .collect();
    let game = DensityMix::matrix(&cells, DensityMix::DEFAULT_K_TABLE).unwrap();
    let opts = SolveOptions { epsilon: 1e-3, max_iters: 10_000, norm: Norm::LInf };
    let result = solve(&game, &opts).unwrap();
    assert!(!result.converged, "compact-support play must never satisfy the criterion");
    assert_eq!(result.iterations, 10_000);
    // The run walks into a pure profile and the bounds never move again:
    // the stuck row is index 1 (the row whose worst cell looked best when
    // whole densities were compared), mirroring the known failure where
    // play degenerates to a spurious pure strategy.
    assert_eq!(detect_absorption(&result.trace, 1_000), Some(1));
    println!("criterion 2 (compact-support absorption): PASS");
}

#[test]
fn criterion_03_tail_pipeline_matches_density_oracle() {
    let models: Vec<Vec<KdeModel>> = GAME_VALUES
        .iter()
        .map(|row| row.iter().map(|v| gauss(&cluster(*v), 1.0)).collect())
        .collect();
    let a = models
        .iter()
        .flatten()
        .map(|m| m.quantile(0.95).unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let vectors: Vec<Vec<_>> = models
        .iter()
        .map(|row| {
            row.iter()
                .map(|m| {
                    let t = m.truncate_at_cutoff(a, true).unwrap();
                    gaussian_kde_derivs(&t, a, 8).unwrap()
                })
                .collect()
        })
        .collect();

    // Tie-free precondition: the four density-at-cutoff values are far
    // apart, so no lexicographic comparison in the run sits inside the
    // comparison tolerance.
    let d0: Vec<f64> = vectors.iter().flatten().map(|v| v.coeffs()[0]).collect();
    for i in 0..d0.len() {
        for j in (i + 1)..d0.len() {
            assert!((d0[i] - d0[j]).abs() > 1e-9);
        }
    }

    let oracle_rows: Vec<Vec<f64>> = vectors
        .iter()
        .map(|row| row.iter().map(|v| v.coeffs()[0]).collect())
        .collect();
    let tail_game = GameMatrix::from_rows(vectors).unwrap();
    let oracle_game = GameMatrix::from_rows(oracle_rows).unwrap();

    let opts = SolveOptions { epsilon: 1e-3, max_iters: 100_000, norm: Norm::LInf };
    let tail_run = solve(&tail_game, &opts).unwrap();
    let oracle_run = solve(&oracle_game, &opts).unwrap();
    assert!(tail_run.converged, "truncated tail game must converge");
    assert_eq!(choices(&tail_run.trace), choices(&oracle_run.trace));
    assert_eq!(tail_run.x_counts, oracle_run.x_counts);
    assert_eq!(tail_run.y_counts, oracle_run.y_counts);
    assert_eq!(tail_run.converged, oracle_run.converged);
    println!("criterion 3 (tail pipeline vs density-at-cutoff oracle): PASS");
}

#[test]
fn criterion_04_endpoint_rule_matches_moment_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let grid_model = |rng: &mut ChaCha8Rng| -> KdeModel {
        let n = rng.gen_range(1..=4);
        let vals: Vec<f64> = (0..n)
            .map(|_| 0.5 + rng.gen_range(0..=40) as f64 * 0.05)
            .collect();
        let h = 0.4 + rng.gen_range(0..=2) as f64 * 0.05;
        epa(&vals, h)
    };
    let mut checked = 0;
    while checked < 200 {
        let x = grid_model(&mut rng);
        let y = grid_model(&mut rng);
        let gap = (x.support().1 - y.support().1).abs();
        if gap <= 1e-3 {
            continue;
        }
        let fast = compare_epanechnikov(&x, &y).unwrap();
        let slow =
            compare_by_moments(&DistModel::Kde(x), &DistModel::Kde(y), 200).unwrap();
        assert_eq!(fast, slow, "pair {checked} disagreed");
        checked += 1;
    }
    assert!(start.elapsed() < Duration::from_secs(30));
    println!("criterion 4 (endpoint rule vs moment oracle, 200/200): PASS");
}

#[test]
fn criterion_05_point_mass_versus_bounded_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..50 {
        let n = rng.gen_range(1..=6);
        let vals: Vec<f64> = (0..n)
            .map(|_| 0.5 + rng.gen_range(0..=60) as f64 * 0.05)
            .collect();
        let h = 0.2 + rng.gen_range(0..=8) as f64 * 0.05;
        let model = DistModel::Kde(epa(&vals, h));
        let b = model.upper_support();

        // Below the support end: certain loss smaller than any possible
        // draw beyond it, the point mass is preferred.
        let a_low = b * rng.gen_range(0.05..0.95);
        assert_eq!(compare_det_vs_random(a_low, &model).unwrap(), FIRST);

        // Above the support end: the bounded model is preferred.
        let a_high = b + rng.gen_range(0.01..2.0);
        assert_eq!(compare_det_vs_random(a_high, &model).unwrap(), SECOND);

        // Exactly at the end: the model is weakly preferred.
        assert_eq!(
            compare_det_vs_random(b, &model).unwrap(),
            PreferenceOutcome::SecondPreferred { strict: false }
        );
    }
    println!("criterion 5 (point mass vs bounded model, 3x50): PASS");
}

#[test]
fn criterion_06_truncation_flips_the_preference() {
    // A mostly harmless model with one rare far-tail sample...
    let mut low = vec![1.0; 29];
    for (i, v) in low.iter_mut().enumerate() {
        *v += (i % 5) as f64 * 0.01;
    }
    low.push(8.0);
    let f1 = epa(&low, 0.3);
    // ...versus a model concentrated at a higher but bounded loss.
    let mid: Vec<f64> = (0..30).map(|i| 4.0 + (i % 7) as f64 * 0.02).collect();
    let f2 = epa(&mid, 0.3);

    let untruncated =
        compare_models(&DistModel::Kde(f1.clone()), &DistModel::Kde(f2.clone()), 200).unwrap();
    assert_eq!(untruncated.outcome, SECOND);
    assert_eq!(untruncated.procedure, Procedure::EpanechnikovTail);

    let t1 = DistModel::Kde(f1.truncate(0.05, true).unwrap());
    let t2 = DistModel::Kde(f2.truncate(0.05, true).unwrap());
    let truncated = compare_models(&t1, &t2, 200).unwrap();
    assert_eq!(truncated.outcome, FIRST);
    println!("criterion 6 (truncation flips the tail-driven preference): PASS");
}

/// Central finite difference of order k (second-order accurate) with two
/// Richardson steps; independent of the closed-form derivative route. The
/// double extrapolation keeps the truncation error well under the test
/// tolerance without shrinking the finest evaluation step below `step / 4`,
/// where cancellation noise would start to matter for k = 5.
fn fd_derivative(f: &dyn Fn(f64) -> f64, x: f64, k: u32, step: f64) -> f64 {
    fn central(f: &dyn Fn(f64) -> f64, x: f64, k: u32, s: f64) -> f64 {
        match k {
            0 => f(x),
            1 => (f(x + s) - f(x - s)) / (2.0 * s),
            2 => (f(x + s) - 2.0 * f(x) + f(x - s)) / (s * s),
            3 => (f(x + 2.0 * s) - 2.0 * f(x + s) + 2.0 * f(x - s) - f(x - 2.0 * s))
                / (2.0 * s.powi(3)),
            4 => (f(x + 2.0 * s) - 4.0 * f(x + s) + 6.0 * f(x) - 4.0 * f(x - s)
                + f(x - 2.0 * s))
                / s.powi(4),
            5 => (f(x + 3.0 * s) - 4.0 * f(x + 2.0 * s) + 5.0 * f(x + s) - 5.0 * f(x - s)
                + 4.0 * f(x - 2.0 * s)
                - f(x - 3.0 * s))
                / (2.0 * s.powi(5)),
            _ => unreachable!("oracle only covers k <= 5"),
        }
    }
    let a0 = central(f, x, k, step);
    let a1 = central(f, x, k, step / 2.0);
    let a2 = central(f, x, k, step / 4.0);
    let r0 = (4.0 * a1 - a0) / 3.0;
    let r1 = (4.0 * a2 - a1) / 3.0;
    (16.0 * r1 - r0) / 15.0
}

#[test]
fn criterion_07_closed_form_derivatives_match_finite_differences() {
    assert_eq!(hermite(2, 1.0), 2.0);
    assert_eq!(hermite(3, 1.0), -4.0);

    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for _ in 0..50 {
        let n = rng.gen_range(1..7);
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(0..13) as f64 * 0.25).collect();
        let h = rng.gen_range(0.4..1.0);
        let a = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.3 * h;
        let model = gauss(&vals, h);
        let derivs = gaussian_kde_derivs(&model, a, 5).unwrap();
        let f = |x: f64| model.density(x);
        for k in 0..=5u32 {
            let expected = fd_derivative(&f, a, k, 0.1 * h);
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let got = sign * derivs.coeffs()[k as usize];
            let rel = (got - expected).abs() / expected.abs().max(1e-12);
            assert!(
                rel <= 1e-4,
                "order {k}: closed form {got} vs finite difference {expected}"
            );
        }
    }
    println!("criterion 7 (derivatives vs finite differences, k <= 5): PASS");
}

#[test]
fn criterion_08_mixture_moment_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for _ in 0..20 {
        let n_comp = rng.gen_range(2..5);
        let comps: Vec<DistModel> = (0..n_comp)
            .map(|i| {
                if i % 2 == 0 {
                    DistModel::PointMass(rng.gen_range(0.5..4.0))
                } else {
                    let m = rng.gen_range(1..5);
                    let vals: Vec<f64> =
                        (0..m).map(|_| rng.gen_range(0.5..3.5)).collect();
                    DistModel::Kde(epa(&vals, rng.gen_range(0.2..0.6)))
                }
            })
            .collect();
        let raw: Vec<f64> = (0..n_comp).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mix = DistModel::Mixture(MixtureModel::new(weights.clone(), comps.clone()).unwrap());
        for k in 1..=10u32 {
            let by_parts: f64 = weights
                .iter()
                .zip(&comps)
                .map(|(w, c)| w * moment(c, k).unwrap())
                .sum();
            let direct = moment(&mix, k).unwrap();
            assert!(
                (direct - by_parts).abs() <= 1e-8,
                "k={k}: {direct} vs {by_parts}"
            );
        }
    }
    println!("criterion 8 (mixture moment identity, k <= 10): PASS");
}

#[test]
fn criterion_09_multi_goal_degeneracy_and_zero_sum() {
    let matrix = GameMatrix::from_rows(GAME_VALUES.iter().map(|r| r.to_vec()).collect()).unwrap();
    let opts = SolveOptions::default();

    // One goal: the compound run must be the single-goal run, trace and all.
    let single = solve(&matrix, &opts).unwrap();
    let one_goal = MultiGoalGame::new(vec![matrix.clone()], None).unwrap();
    let multi = solve_mgss(&one_goal, &opts).unwrap();
    assert_eq!(multi.trace, single.trace);
    assert_eq!(multi.x_star, single.p_star);
    assert_eq!(multi.y_stars[0], single.q_star);

    // Two identical goals at uniform weights: same equilibrium strategy.
    let two_goals = MultiGoalGame::new(vec![matrix.clone(), matrix.clone()], None).unwrap();
    let opts2 = SolveOptions { epsilon: 1e-4, max_iters: 200_000, norm: Norm::LInf };
    let dup = solve_mgss(&two_goals, &opts2).unwrap();
    let reference = solve(&matrix, &opts2).unwrap();
    for i in 0..2 {
        assert!((dup.x_star[i] - reference.p_star[i]).abs() <= 0.05);
    }

    // The compound defender payoff cancels the weighted adversary payoffs
    // on every real-valued compound built here.
    let other = GameMatrix::from_rows(vec![vec![1.0, 4.0], vec![2.0, 6.0]]).unwrap();
    let mixed =
        MultiGoalGame::new(vec![matrix.clone(), other], Some(vec![0.7, 0.3])).unwrap();
    for game in [&one_goal, &two_goals, &mixed] {
        assert_eq!(
            verify_zero_sum(&build_compound(game).unwrap()),
            ZeroSumCheck::Holds
        );
    }
    println!("criterion 9 (multi-goal degeneracy and zero-sum checks): PASS");
}

#[test]
fn criterion_10_scope_note() {
    // No assertion by design: equilibrium quality against the unknown true
    // loss distributions cannot be measured from data alone, so confidence
    // rests on the oracle-equivalence and invariant checks above.
    println!(
        "criterion 10 (scope): distributional ground truth is out of reach; \
         covered by oracle equivalence and invariants. PASS (informational)"
    );
}
