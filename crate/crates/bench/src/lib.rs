//! Fixtures shared by the solver benchmarks.

use goa_core::datasets::Dataset;
use goa_core::problems::{build_svm_problem, RobustLossParams};
use goa_core::smoothing::BallSampler;
use goa_core::CompositeProblem;

/// A reproducible synthetic classification problem with `n` dense rows.
pub fn synthetic_svm(n: usize, d: usize, seed: u64) -> CompositeProblem {
    let mut s = BallSampler::new(d, seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let x = s.sample();
        labels.push(if x[0] + 0.1 * (i % 3) as f64 > 0.0 { 1.0 } else { -1.0 });
        rows.push(x.into_iter().enumerate().collect());
    }
    let data = Dataset {
        name: format!("synthetic-{n}x{d}"),
        dim: d,
        rows,
        labels,
    };
    build_svm_problem(data, RobustLossParams::new(0.9, 1e-3)).expect("valid synthetic data")
}
