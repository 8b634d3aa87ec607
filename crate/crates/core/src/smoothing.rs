//! Partial smoothing of the nonconvex part over a Euclidean ball and the
//! variance-reduced gradient samples built on it.
//!
//! Only `f` is smoothed: `F̂_δ(w) = h(w) + E_{u∼B}[f(w + δu)]` with `u`
//! uniform on the unit ball `B`, for which `E[u] = 0` and
//! `E[uuᵀ] = I/(d+2)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GoaError, Result};
use crate::geometry::unit_ball_point;
use crate::problem::CompositeProblem;
use crate::vecops;

/// Tolerance on `‖u‖ ≤ 1` for caller-supplied perturbations.
const UNIT_NORM_TOL: f64 = 1e-12;

/// Seeded source of unit-ball perturbations, and of every other random
/// choice made by a solver run.
#[derive(Debug, Clone)]
pub struct BallSampler {
    dim: usize,
    rng: ChaCha8Rng,
}

impl BallSampler {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "ball sampler needs dimension >= 1");
        BallSampler {
            dim,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// A point uniform on the unit ball.
    pub fn sample(&mut self) -> Vec<f64> {
        unit_ball_point(&mut self.rng, self.dim)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// `E[u_i u_i]` for `u` uniform on the unit ball.
    pub fn second_moment(&self) -> f64 {
        1.0 / (self.dim as f64 + 2.0)
    }
}

/// How the anchor gradient `g̃ = E_u[∇f(w̃ + δu)]` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorMode {
    MonteCarlo {
        samples: usize,
    },
    /// `g̃ = ∇f(w̃)`, the first-order approximation of the expectation.
    #[default]
    PointApprox,
}

impl AnchorMode {
    pub const DEFAULT_MC_SAMPLES: usize = 100;

    pub fn monte_carlo() -> Self {
        AnchorMode::MonteCarlo {
            samples: Self::DEFAULT_MC_SAMPLES,
        }
    }
}

/// Constants of an `(a, c, σ)`-nice function. Recorded only; the runtime
/// uses the fixed shrink radius `1.5 δ_m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NiceParams {
    pub a: f64,
    pub sigma: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingParams {
    pub delta: f64,
    pub anchor: AnchorMode,
    pub shrink: f64,
    pub nice: Option<NiceParams>,
}

impl SmoothingParams {
    pub fn new(delta: f64) -> Self {
        SmoothingParams {
            delta,
            anchor: AnchorMode::default(),
            shrink: 0.9,
            nice: None,
        }
    }

    pub fn with_anchor(mut self, anchor: AnchorMode) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(GoaError::usage(format!("delta must be >= 0, got {}", self.delta)));
        }
        if !(0.5..1.0).contains(&self.shrink) {
            return Err(GoaError::usage(format!(
                "shrink factor must lie in [0.5, 1), got {}",
                self.shrink
            )));
        }
        if let AnchorMode::MonteCarlo { samples: 0 } = self.anchor {
            return Err(GoaError::usage("Monte Carlo anchor needs at least one sample"));
        }
        if let Some(n) = self.nice {
            if !(n.a > 0.0 && n.sigma > 0.0 && n.r >= 1.5) {
                return Err(GoaError::usage("nice parameters need a > 0, sigma > 0, r >= 1.5"));
            }
        }
        Ok(())
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Anchor of an SVRG epoch: `w̃`, `g̃` and the smoothing radius they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct VrAnchor {
    pub point: Vec<f64>,
    pub gradient: Vec<f64>,
    pub delta: f64,
}

/// Monte Carlo estimate of `F̂_δ(w)`.
pub fn smoothed_value(
    problem: &CompositeProblem,
    w: &[f64],
    params: &SmoothingParams,
    n_samples: usize,
    sampler: &mut BallSampler,
) -> Result<Estimate> {
    problem.check_point(w)?;
    params.validate()?;
    if n_samples == 0 {
        return Err(GoaError::usage("smoothed_value needs at least one sample"));
    }
    let h = problem.h.value(w);
    let (mut mean, mut m2) = (0.0, 0.0);
    for j in 0..n_samples {
        let u = sampler.sample();
        let x = problem.f.value(&vecops::add_scaled(w, params.delta, &u));
        let d = x - mean;
        mean += d / (j + 1) as f64;
        m2 += d * (x - mean);
    }
    let std_err = if n_samples > 1 {
        (m2 / (n_samples - 1) as f64 / n_samples as f64).sqrt()
    } else {
        0.0
    };
    Ok(Estimate {
        mean: h + mean,
        std_err,
    })
}

/// Computes `g̃` at `w̃` according to the anchor mode.
pub fn anchor_gradient(
    problem: &CompositeProblem,
    anchor_point: &[f64],
    params: &SmoothingParams,
    sampler: &mut BallSampler,
) -> Result<VrAnchor> {
    problem.check_point(anchor_point)?;
    params.validate()?;
    Ok(anchor_unchecked(
        problem,
        anchor_point,
        params.delta,
        params.anchor,
        sampler,
    ))
}

pub(crate) fn anchor_unchecked(
    problem: &CompositeProblem,
    anchor_point: &[f64],
    delta: f64,
    mode: AnchorMode,
    sampler: &mut BallSampler,
) -> VrAnchor {
    let gradient = match mode {
        AnchorMode::PointApprox => problem.f.gradient(anchor_point),
        AnchorMode::MonteCarlo { samples } => {
            let mut acc = vec![0.0; anchor_point.len()];
            for _ in 0..samples {
                let u = sampler.sample();
                let g = problem.f.gradient(&vecops::add_scaled(anchor_point, delta, &u));
                vecops::axpy(&mut acc, 1.0, &g);
            }
            vecops::scale(&acc, 1.0 / samples as f64)
        }
    };
    VrAnchor {
        point: anchor_point.to_vec(),
        gradient,
        delta,
    }
}

#[inline]
fn component_grad(problem: &CompositeProblem, i: Option<usize>, w: &[f64]) -> Vec<f64> {
    match i {
        Some(i) => problem.f.component_gradient(i, w),
        None => problem.f.gradient(w),
    }
}

/// `∇f(w + δu) − ∇f(w̃ + δu)`, or the same with `∇f_i`.
fn perturbed_difference(
    problem: &CompositeProblem,
    w: &[f64],
    anchor: &VrAnchor,
    u: &[f64],
    component: Option<usize>,
) -> Vec<f64> {
    let mut g = component_grad(problem, component, &vecops::add_scaled(w, anchor.delta, u));
    let g_anchor = component_grad(
        problem,
        component,
        &vecops::add_scaled(&anchor.point, anchor.delta, u),
    );
    vecops::axpy(&mut g, -1.0, &g_anchor);
    g
}

fn finish(problem: &CompositeProblem, w: &[f64], anchor: &VrAnchor, mut v: Vec<f64>, include_h: bool) -> Vec<f64> {
    vecops::axpy(&mut v, 1.0, &anchor.gradient);
    if include_h {
        vecops::axpy(&mut v, 1.0, &problem.h.gradient(w));
    }
    v
}

fn check_sample_args(
    problem: &CompositeProblem,
    w: &[f64],
    anchor: &VrAnchor,
    u: &[f64],
    component: Option<usize>,
) -> Result<()> {
    problem.check_point(w)?;
    if anchor.point.len() != w.len() || anchor.gradient.len() != w.len() || u.len() != w.len() {
        return Err(GoaError::usage("anchor, perturbation and point differ in dimension"));
    }
    if vecops::norm(u) > 1.0 + UNIT_NORM_TOL {
        return Err(GoaError::usage("perturbation must lie in the unit ball"));
    }
    if let Some(i) = component {
        if i >= problem.f.components() {
            return Err(GoaError::usage(format!(
                "component index {i} out of range for {} components",
                problem.f.components()
            )));
        }
    }
    Ok(())
}

/// Variance-reduced sample
/// `v = [∇h(w)] + ∇f(w + δu) − ∇f(w̃ + δu) + g̃`.
///
/// `include_h` selects the gradient form (SVRG-GOA); without it `h` is left to
/// a proximal step. With `component`, `∇f` is replaced by `∇f_i`.
pub fn vr_sample(
    problem: &CompositeProblem,
    w: &[f64],
    anchor: &VrAnchor,
    u: &[f64],
    include_h: bool,
    component: Option<usize>,
) -> Result<Vec<f64>> {
    check_sample_args(problem, w, anchor, u, component)?;
    Ok(vr_sample_unchecked(problem, w, anchor, u, include_h, component))
}

pub(crate) fn vr_sample_unchecked(
    problem: &CompositeProblem,
    w: &[f64],
    anchor: &VrAnchor,
    u: &[f64],
    include_h: bool,
    component: Option<usize>,
) -> Vec<f64> {
    let diff = perturbed_difference(problem, w, anchor, u, component);
    finish(problem, w, anchor, diff, include_h)
}

/// Mini-batch variant: the perturbed differences are averaged over the batch
/// before `g̃` (and `∇h(w)`) is added. `components`, when given, pairs each
/// batch member with its own component index.
pub fn vr_sample_minibatch(
    problem: &CompositeProblem,
    w: &[f64],
    anchor: &VrAnchor,
    batch: &[Vec<f64>],
    include_h: bool,
    components: Option<&[usize]>,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(GoaError::usage("mini-batch must not be empty"));
    }
    if let Some(c) = components {
        if c.len() != batch.len() {
            return Err(GoaError::usage("one component index per batch member is required"));
        }
    }
    for (j, u) in batch.iter().enumerate() {
        check_sample_args(problem, w, anchor, u, components.map(|c| c[j]))?;
    }
    Ok(vr_minibatch_unchecked(problem, w, anchor, batch, include_h, components))
}

pub(crate) fn vr_minibatch_unchecked(
    problem: &CompositeProblem,
    w: &[f64],
    anchor: &VrAnchor,
    batch: &[Vec<f64>],
    include_h: bool,
    components: Option<&[usize]>,
) -> Vec<f64> {
    // running mean: exact for b = 1 and for repeated members
    let mut mean = vec![0.0; w.len()];
    for (j, u) in batch.iter().enumerate() {
        let diff = perturbed_difference(problem, w, anchor, u, components.map(|c| c[j]));
        let k = (j + 1) as f64;
        for (m, x) in mean.iter_mut().zip(&diff) {
            *m += (x - *m) / k;
        }
    }
    finish(problem, w, anchor, mean, include_h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{QuadraticPart, SquaredNorm, ZeroPart};
    use crate::problems;

    fn half_sq(dim: usize) -> CompositeProblem {
        CompositeProblem::new(
            "half-sq",
            SquaredNorm::new(0.0),
            QuadraticPart {
                center: vec![0.0; dim],
                curvature: 1.0,
            },
        )
    }

    #[test]
    fn one_dimensional_samples_lie_in_interval() {
        let mut s = BallSampler::new(1, 3);
        for _ in 0..1000 {
            let u = s.sample();
            assert!(u.len() == 1 && (-1.0..=1.0).contains(&u[0]));
        }
    }

    #[test]
    fn squared_radius_mean_in_three_dimensions() {
        // E‖u‖² = d/(d+2) = 3/5
        let mut s = BallSampler::new(3, 11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| vecops::norm_sq(&s.sample())).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 0.6).abs() <= 5.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn zero_delta_gives_exact_objective() {
        let p = problems::test2d();
        let mut s = BallSampler::new(2, 1);
        let w = [0.4, 0.9];
        let est = smoothed_value(&p, &w, &SmoothingParams::new(0.0), 10, &mut s).unwrap();
        assert_eq!(est.mean, p.evaluate(&w).unwrap());
        assert_eq!(est.std_err, 0.0);
    }

    #[test]
    fn smoothed_half_square_at_origin() {
        let p = half_sq(2);
        let mut s = BallSampler::new(2, 7);
        let est = smoothed_value(&p, &[0.0, 0.0], &SmoothingParams::new(1.0), 100_000, &mut s).unwrap();
        assert!((est.mean - 0.25).abs() <= 5.0 * est.std_err, "{est:?}");
    }

    #[test]
    fn smoothing_raises_convex_parts() {
        // tr ∇²f ≥ 0 everywhere, so smoothing can only increase the value
        let p = half_sq(2);
        let mut s = BallSampler::new(2, 9);
        for w in [[0.0, 0.0], [1.0, -2.0], [3.0, 0.5]] {
            let est = smoothed_value(&p, &w, &SmoothingParams::new(0.5), 20_000, &mut s).unwrap();
            assert!(est.mean + 3.0 * est.std_err >= p.evaluate(&w).unwrap());
        }
    }

    #[test]
    fn point_approx_anchor_is_plain_gradient() {
        let p = problems::test2d();
        let mut s = BallSampler::new(2, 1);
        let w = [0.95, 0.2];
        let a = anchor_gradient(&p, &w, &SmoothingParams::new(0.7), &mut s).unwrap();
        assert_eq!(a.gradient, p.f.gradient(&w));
    }

    #[test]
    fn monte_carlo_anchor_matches_quadratic_gradient() {
        // for quadratic f, E ∇f(w + δu) = ∇f(w) exactly
        let p = half_sq(2);
        let mut s = BallSampler::new(2, 13);
        let n = 20_000;
        let params = SmoothingParams::new(1.0).with_anchor(AnchorMode::MonteCarlo { samples: n });
        let w = [0.3, -1.2];
        let a = anchor_gradient(&p, &w, &params, &mut s).unwrap();
        // per-coordinate sd of δu_i is sqrt(1/(d+2)) = 0.5
        let se = 0.5 / (n as f64).sqrt();
        for (g, e) in a.gradient.iter().zip(&w) {
            assert!((g - e).abs() <= 5.0 * se);
        }
    }

    #[test]
    fn perturbed_terms_cancel_at_anchor() {
        let p = problems::test2d();
        let mut s = BallSampler::new(2, 5);
        let w = vec![0.8, 1.1];
        let a = anchor_gradient(&p, &w, &SmoothingParams::new(1.0), &mut s).unwrap();
        let expect = p.gradient(&w).unwrap();
        for _ in 0..50 {
            let u = s.sample();
            let v = vr_sample(&p, &w, &a, &u, true, None).unwrap();
            assert_eq!(v, expect);
        }
    }

    #[test]
    fn perturbation_outside_unit_ball_rejected() {
        let p = problems::test2d();
        let a = VrAnchor {
            point: vec![0.0, 0.0],
            gradient: vec![0.0, 0.0],
            delta: 1.0,
        };
        let r = vr_sample(&p, &[0.0, 0.0], &a, &[1.0, 0.1], true, None);
        assert!(matches!(r, Err(GoaError::Usage(_))));
    }

    #[test]
    fn component_index_out_of_range_rejected() {
        let p = CompositeProblem::new("z", SquaredNorm::new(1.0), ZeroPart { dim: 1 });
        let a = VrAnchor {
            point: vec![0.0],
            gradient: vec![0.0],
            delta: 0.5,
        };
        assert!(vr_sample(&p, &[0.0], &a, &[0.0], true, Some(1)).is_err());
        assert!(vr_sample(&p, &[0.0], &a, &[0.0], true, Some(0)).is_ok());
    }

    #[test]
    fn minibatch_of_one_is_single_sample() {
        let p = problems::test2d();
        let mut s = BallSampler::new(2, 21);
        let a = anchor_gradient(&p, &[0.9, 0.0], &SmoothingParams::new(0.6), &mut s).unwrap();
        for _ in 0..100 {
            let u = s.sample();
            let w = [0.5 * u[1] + 0.8, u[0]];
            for include_h in [true, false] {
                let one = vr_sample(&p, &w, &a, &u, include_h, None).unwrap();
                let batch = vr_sample_minibatch(&p, &w, &a, std::slice::from_ref(&u), include_h, None).unwrap();
                assert_eq!(one, batch);
                let dup = vec![u.clone(); 7];
                let many = vr_sample_minibatch(&p, &w, &a, &dup, include_h, None).unwrap();
                assert_eq!(one, many);
            }
        }
    }

    #[test]
    fn empty_minibatch_rejected() {
        let p = problems::test2d();
        let a = VrAnchor {
            point: vec![0.0, 0.0],
            gradient: vec![0.0, 0.0],
            delta: 1.0,
        };
        assert!(vr_sample_minibatch(&p, &[0.0, 0.0], &a, &[], true, None).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(SmoothingParams::new(-1.0).validate().is_err());
        let mut p = SmoothingParams::new(1.0);
        p.shrink = 0.4;
        assert!(p.validate().is_err());
        p.shrink = 0.5;
        assert!(p.validate().is_ok());
        p.shrink = 1.0;
        assert!(p.validate().is_err());
    }
}
