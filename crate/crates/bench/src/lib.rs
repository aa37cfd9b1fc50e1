//! Shared fixtures for the criterion benches.

use distgame::fp::GameMatrix;
use distgame::kde::{estimate, BandwidthRule, Kernel, SampleSet};
use distgame::preference::DistModel;
use distgame::tailrep::{gaussian_kde_derivs, DerivVector};

/// Gaussian KDE cell truncated at `cutoff`, centered loosely on `center`.
pub fn gaussian_cell(center: f64, cutoff: f64) -> DistModel {
    let samples = vec![center - 0.4, center - 0.1, center + 0.2, center + 0.5];
    let model = estimate(
        SampleSet::new(samples).unwrap(),
        Kernel::Gaussian,
        BandwidthRule::Explicit { h: 0.8 },
    )
    .unwrap();
    DistModel::Kde(model.truncate_at_cutoff(cutoff, true).unwrap())
}

/// Tail representation of [`gaussian_cell`] up to order `t`.
pub fn gaussian_cell_derivs(center: f64, cutoff: f64, t: u32) -> DerivVector {
    let DistModel::Kde(model) = gaussian_cell(center, cutoff) else {
        unreachable!()
    };
    gaussian_kde_derivs(&model, cutoff, t).unwrap()
}

/// An n×m real-valued matrix with deterministic pseudo-random entries.
pub fn real_game(n: usize, m: usize) -> GameMatrix<f64> {
    let rows = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let t = (i * m + j + 1) as f64;
                    3.0 + (t * 2.399963).sin() * 2.0
                })
                .collect()
        })
        .collect();
    GameMatrix::from_rows(rows).unwrap()
}
