//! Shipped objectives: the 1-D and 2-D bump test functions, the robust
//! least-squares SVM, and a brute-force grid oracle for global minima.

use std::sync::OnceLock;

use crate::datasets::Dataset;
use crate::error::{GoaError, Result};
use crate::geometry::ConvexSet;
use crate::problem::{CompositeProblem, NonconvexPart, SquaredNorm};
use crate::smoothing::BallSampler;
use crate::vecops;

/// Gaussian bump `a·exp(−(x − m)²/s)` and its first two derivatives.
#[derive(Debug, Clone, Copy)]
struct Bump {
    amp: f64,
    mean: f64,
    width: f64,
}

impl Bump {
    fn value(&self, x: f64) -> f64 {
        let d = x - self.mean;
        self.amp * (-d * d / self.width).exp()
    }

    fn derivative(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -2.0 * d / self.width * self.value(x)
    }

    /// `max |g''| = 2a/s`, attained at the center.
    fn curvature_bound(&self) -> f64 {
        2.0 * self.amp.abs() / self.width
    }
}

/// `f(w) = −0.3[exp(−(w−1)²/0.02) − exp(−(w+1.3)²/0.045)]`
#[derive(Debug, Clone, Copy)]
pub struct BumpPair1d {
    well: Bump,
    ridge: Bump,
}

impl Default for BumpPair1d {
    fn default() -> Self {
        BumpPair1d {
            well: Bump { amp: 0.3, mean: 1.0, width: 0.02 },
            ridge: Bump { amp: 0.3, mean: -1.3, width: 0.045 },
        }
    }
}

impl NonconvexPart for BumpPair1d {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, w: &[f64]) -> f64 {
        -(self.well.value(w[0]) - self.ridge.value(w[0]))
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        vec![-(self.well.derivative(w[0]) - self.ridge.derivative(w[0]))]
    }

    fn smoothness(&self) -> f64 {
        self.well.curvature_bound() + self.ridge.curvature_bound()
    }
}

/// `f(w) = −0.3[exp(−(w₁−1)²/0.02) − exp(−(w₂−1)²/0.02)]`
#[derive(Debug, Clone, Copy)]
pub struct BumpPair2d {
    bump: Bump,
}

impl Default for BumpPair2d {
    fn default() -> Self {
        BumpPair2d {
            bump: Bump { amp: 0.3, mean: 1.0, width: 0.02 },
        }
    }
}

impl NonconvexPart for BumpPair2d {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, w: &[f64]) -> f64 {
        -(self.bump.value(w[0]) - self.bump.value(w[1]))
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        vec![-self.bump.derivative(w[0]), self.bump.derivative(w[1])]
    }

    // the Hessian is diagonal
    fn smoothness(&self) -> f64 {
        self.bump.curvature_bound()
    }
}

/// Grid settings used to fill in the known optimum of the test problems.
pub const TEST_BOX: (f64, f64) = (-3.0, 3.0);
pub const TEST1D_GRID: usize = 1_000_001;
pub const TEST2D_GRID: usize = 2001;

/// `F(w) = w²/2 − 0.3[exp(−(w−1)²/0.02) − exp(−(w+1.3)²/0.045)]`
pub fn test1d() -> CompositeProblem {
    static OPT: OnceLock<(Vec<f64>, f64)> = OnceLock::new();
    let p = CompositeProblem::new("test1d", SquaredNorm::new(1.0), BumpPair1d::default());
    let (w, v) = OPT
        .get_or_init(|| {
            global_min_oracle(&p, &[TEST_BOX.0], &[TEST_BOX.1], TEST1D_GRID)
                .expect("1-D oracle")
        })
        .clone();
    p.with_optimum(w, v)
}

/// `F(w) = ‖w‖²/2 − 0.3[exp(−(w₁−1)²/0.02) − exp(−(w₂−1)²/0.02)]`
pub fn test2d() -> CompositeProblem {
    static OPT: OnceLock<(Vec<f64>, f64)> = OnceLock::new();
    let p = CompositeProblem::new("test2d", SquaredNorm::new(1.0), BumpPair2d::default());
    let (w, v) = OPT
        .get_or_init(|| {
            let lo = [TEST_BOX.0; 2];
            let hi = [TEST_BOX.1; 2];
            global_min_oracle(&p, &lo, &hi, TEST2D_GRID).expect("2-D oracle")
        })
        .clone();
    p.with_optimum(w, v)
}

pub const DEFAULT_SHARPNESS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustLossParams {
    /// truncation `τ`
    pub tau: f64,
    /// sharpness `p` of the smooth truncation
    pub p: f64,
    /// regularization `λ`
    pub lambda: f64,
}

impl RobustLossParams {
    pub fn new(tau: f64, lambda: f64) -> Self {
        RobustLossParams {
            tau,
            p: DEFAULT_SHARPNESS,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.tau.is_finite() && self.p.is_finite() && self.lambda.is_finite();
        if !(finite && self.tau > 0.0 && self.p > 0.0 && self.lambda > 0.0) {
            return Err(GoaError::usage(format!(
                "robust loss needs finite tau, p, lambda > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `L(ξ) = ½[ξ² − max{0, ξ² − τ²}] − (1/2p)·log(1 + exp(−p|ξ² − τ²|))`
pub fn robust_loss(xi: f64, params: &RobustLossParams) -> f64 {
    let sq = xi * xi;
    let s = sq - params.tau * params.tau;
    // ξ² − max{0, ξ² − τ²} = min{ξ², τ²}, without the cancellation at large ξ
    0.5 * sq.min(params.tau * params.tau) - (-params.p * s.abs()).exp().ln_1p() / (2.0 * params.p)
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `L'(ξ) = ξ / (1 + exp(p(ξ² − τ²)))`.
///
/// Both branches of the formula reduce to `½τ² − (1/2p)·log(1 + exp(−p(ξ² − τ²)))`,
/// whose derivative this is.
pub fn robust_loss_gradient(xi: f64, params: &RobustLossParams) -> f64 {
    let s = xi * xi - params.tau * params.tau;
    xi * logistic(-params.p * s)
}

/// `L''(ξ) = q − 2pξ²q(1 − q)` with `q = 1/(1 + exp(p(ξ² − τ²)))`.
pub fn robust_loss_curvature(xi: f64, params: &RobustLossParams) -> f64 {
    let s = xi * xi - params.tau * params.tau;
    let q = logistic(-params.p * s);
    q - 2.0 * params.p * xi * xi * q * (1.0 - q)
}

/// `sup |L''|` probed on a dense grid; `L''` vanishes away from `|ξ| ≤ τ`.
pub fn robust_loss_curvature_bound(params: &RobustLossParams) -> f64 {
    let reach = 3.0 * params.tau + 10.0 / params.p.sqrt();
    let n = 200_000;
    (0..=n)
        .map(|k| robust_loss_curvature(reach * k as f64 / n as f64, params).abs())
        .fold(0.0, f64::max)
}

/// `f(w) = (1/n) Σ L(y_i − wᵀx_i)` as a finite sum.
#[derive(Debug, Clone)]
pub struct RobustSvmLoss {
    data: Dataset,
    params: RobustLossParams,
    smoothness: f64,
}

impl RobustSvmLoss {
    pub fn new(data: Dataset, params: RobustLossParams) -> Self {
        let max_sq = (0..data.n())
            .map(|i| data.row_norm_sq(i))
            .fold(0.0, f64::max);
        let smoothness = (max_sq * robust_loss_curvature_bound(&params)).max(f64::MIN_POSITIVE);
        RobustSvmLoss {
            data,
            params,
            smoothness,
        }
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn params(&self) -> &RobustLossParams {
        &self.params
    }

    #[inline]
    fn residual(&self, i: usize, w: &[f64]) -> f64 {
        self.data.labels[i] - self.data.row_dot(i, w)
    }
}

impl NonconvexPart for RobustSvmLoss {
    fn dim(&self) -> usize {
        self.data.dim
    }

    fn value(&self, w: &[f64]) -> f64 {
        let n = self.data.n();
        (0..n)
            .map(|i| robust_loss(self.residual(i, w), &self.params))
            .sum::<f64>()
            / n as f64
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let n = self.data.n();
        let mut g = vec![0.0; self.data.dim];
        for i in 0..n {
            let coeff = -robust_loss_gradient(self.residual(i, w), &self.params) / n as f64;
            self.data.row_axpy(i, coeff, &mut g);
        }
        g
    }

    fn components(&self) -> usize {
        self.data.n()
    }

    fn component_gradient(&self, i: usize, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.data.dim];
        let coeff = -robust_loss_gradient(self.residual(i, w), &self.params);
        self.data.row_axpy(i, coeff, &mut g);
        g
    }

    /// `max_i ‖x_i‖² · sup |L''|`
    fn smoothness(&self) -> f64 {
        self.smoothness
    }
}

/// `h(w) = (λ/2)‖w‖²`, `f_i(w) = L(y_i − wᵀx_i)`.
pub fn build_svm_problem(data: Dataset, params: RobustLossParams) -> Result<CompositeProblem> {
    params.validate()?;
    if data.n() == 0 {
        return Err(GoaError::usage(format!("dataset `{}` is empty", data.name)));
    }
    let name = data.name.clone();
    Ok(CompositeProblem::new(
        name,
        SquaredNorm::new(params.lambda),
        RobustSvmLoss::new(data, params),
    ))
}

/// Projected gradient descent with Armijo backtracking inside a box.
/// Deterministic; used to refine grid minima and to locate basins.
pub fn descend(
    problem: &CompositeProblem,
    start: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let clamp = |v: Vec<f64>| -> Vec<f64> {
        v.into_iter()
            .zip(lower.iter().zip(upper))
            .map(|(x, (l, u))| x.clamp(*l, *u))
            .collect()
    };
    let mut w = clamp(start.to_vec());
    let mut fw = problem.value(&w);
    let mut step = 1.0;
    for _ in 0..max_iter {
        let g = problem.grad(&w);
        let mut accepted = false;
        while step > 1e-16 {
            let cand = clamp(vecops::add_scaled(&w, -step, &g));
            let d = vecops::sub(&cand, &w);
            let fc = problem.value(&cand);
            if fc <= fw + vecops::dot(&g, &d) + vecops::norm_sq(&d) / (2.0 * step) {
                let moved = vecops::norm(&d);
                w = cand;
                fw = fc;
                accepted = true;
                if moved < 1e-14 {
                    return (w, fw);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (step * 2.0).min(1.0);
    }
    (w, fw)
}

fn grid_coords(lo: f64, hi: f64, n: usize, k: usize) -> f64 {
    if n == 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * k as f64 / (n - 1) as f64
    }
}

/// Brute-force minimum over a `points_per_dim`-point grid on a box, refined
/// by descent from the best grid point. Only `d ≤ 2` is supported.
pub fn global_min_oracle(
    problem: &CompositeProblem,
    lower: &[f64],
    upper: &[f64],
    points_per_dim: usize,
) -> Result<(Vec<f64>, f64)> {
    let d = problem.dim();
    if d > 2 {
        return Err(GoaError::usage(format!(
            "grid oracle supports dimension <= 2, problem has {d}"
        )));
    }
    if lower.len() != d || upper.len() != d {
        return Err(GoaError::usage("oracle box does not match problem dimension"));
    }
    if points_per_dim == 0 || lower.iter().chain(upper).any(|x| !x.is_finite()) {
        return Err(GoaError::usage("oracle needs a bounded box and at least one grid point"));
    }
    let n = points_per_dim;
    let mut best = (vec![0.0; d], f64::INFINITY);
    let mut w = vec![0.0; d];
    let total = n.pow(d as u32);
    for idx in 0..total {
        let mut rem = idx;
        for j in 0..d {
            w[j] = grid_coords(lower[j], upper[j], n, rem % n);
            rem /= n;
        }
        let v = problem.value(&w);
        if v < best.1 {
            best = (w.clone(), v);
        }
    }
    let refined = descend(problem, &best.0, lower, upper, 10_000);
    if refined.1 <= best.1 {
        best = refined;
    }
    Ok(best)
}

/// Local minima reached by descent from a grid of starts, deduplicated and
/// sorted by value.
pub fn local_minima(
    problem: &CompositeProblem,
    lower: &[f64],
    upper: &[f64],
    starts_per_dim: usize,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let d = problem.dim();
    if d > 2 {
        return Err(GoaError::usage("local minimum search supports dimension <= 2"));
    }
    let n = starts_per_dim;
    let mut found: Vec<(Vec<f64>, f64)> = Vec::new();
    for idx in 0..n.pow(d as u32) {
        let mut rem = idx;
        let w: Vec<f64> = (0..d)
            .map(|j| {
                let x = grid_coords(lower[j], upper[j], n, rem % n);
                rem /= n;
                x
            })
            .collect();
        let (m, v) = descend(problem, &w, lower, upper, 20_000);
        let on_boundary = m
            .iter()
            .zip(lower.iter().zip(upper))
            .any(|(x, (l, u))| (x - l).abs() < 1e-9 || (x - u).abs() < 1e-9);
        if on_boundary || found.iter().any(|(p, _)| vecops::dist(p, &m) < 1e-4) {
            continue;
        }
        found.push((m, v));
    }
    found.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(found)
}

/// Best value of unconstrained descent from the origin and from `starts`
/// points drawn uniformly from `set`. A reference optimum for problems too
/// large for the grid oracle.
pub fn multistart_reference(
    problem: &CompositeProblem,
    set: &ConvexSet,
    starts: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64)> {
    let d = problem.dim();
    let lo = vec![f64::NEG_INFINITY; d];
    let hi = vec![f64::INFINITY; d];
    let mut sampler = BallSampler::new(d, seed);
    let mut best = descend(problem, &vec![0.0; d], &lo, &hi, max_iter);
    for _ in 0..starts {
        let w0 = set.sample_uniform(sampler.rng())?;
        let cand = descend(problem, &w0, &lo, &hi, max_iter);
        if cand.1 < best.1 {
            best = cand;
        }
    }
    Ok(best)
}
