//! Inner solvers: projected SVRG over the smoothed objective, its proximal
//! variant, suffix-averaged SGD for the GradOpt baseline, and plain
//! nonconvex Prox-SVRG. Also the linear-rate constants that size the epochs.

use crate::error::{GoaError, Result};
use crate::geometry::ConvexSet;
use crate::problem::CompositeProblem;
use crate::smoothing::{anchor_unchecked, vr_minibatch_unchecked, AnchorMode, BallSampler, VrAnchor};
use crate::vecops;

/// Per-epoch contraction of projected SVRG:
/// `ρ = 1/(ση(1−2Lη)T) + 2Lη/(1−2Lη)`.
pub fn rho_svrg(sigma: f64, eta: f64, l: f64, t: usize) -> Result<f64> {
    check_rate_args(sigma, eta, l, t)?;
    let q = 1.0 - 2.0 * l * eta;
    if q <= 0.0 {
        return Err(GoaError::usage(format!(
            "step too large for rate formula: 1 - 2*L*eta = {q}"
        )));
    }
    Ok(1.0 / (sigma * eta * q * t as f64) + 2.0 * l * eta / q)
}

/// `ση(1−2Lη)T / (1 + 2Lη²σT)`, the reciprocal of [`rho_svrg`] written the
/// way the outer loop uses it.
pub fn svrg_rate_inverse(sigma: f64, eta: f64, l: f64, t: usize) -> f64 {
    let t = t as f64;
    sigma * eta * (1.0 - 2.0 * l * eta) * t / (1.0 + 2.0 * l * eta * eta * sigma * t)
}

/// Proximal counterpart:
/// `ρ = 1/(ση(1−4Lη)T) + 4Lη(T+1)/((1−4Lη)T)`.
pub fn rho_prox_svrg(sigma: f64, eta: f64, l: f64, t: usize) -> Result<f64> {
    check_rate_args(sigma, eta, l, t)?;
    let q = 1.0 - 4.0 * l * eta;
    if q <= 0.0 {
        return Err(GoaError::usage(format!(
            "step too large for rate formula: 1 - 4*L*eta = {q}"
        )));
    }
    let tf = t as f64;
    Ok(1.0 / (sigma * eta * q * tf) + 4.0 * l * eta * (tf + 1.0) / (q * tf))
}

fn check_rate_args(sigma: f64, eta: f64, l: f64, t: usize) -> Result<()> {
    if !(sigma > 0.0 && eta > 0.0 && l > 0.0) || t == 0 {
        return Err(GoaError::usage(format!(
            "rate needs sigma, eta, L > 0 and T >= 1 (sigma={sigma}, eta={eta}, L={l}, T={t})"
        )));
    }
    Ok(())
}

/// Epochs needed to shrink a gap `delta_f` below `eps` at rate `rho`:
/// `⌈log(ΔF/ε)/log(1/ρ)⌉`, at least 1.
pub fn stage_count(delta_f: f64, eps: f64, rho: f64) -> Result<usize> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(GoaError::usage(format!("inner solver not contracting (rho = {rho})")));
    }
    if !(eps > 0.0) {
        return Err(GoaError::usage("target accuracy must be positive"));
    }
    if !(delta_f > eps) {
        return Ok(1);
    }
    let s = ((delta_f / eps).ln() / (1.0 / rho).ln()).ceil();
    Ok((s as usize).max(1))
}

/// How an epoch picks `w̃_s` from its iterates `w_0, …, w_T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputRule {
    /// `w_k` with `k` uniform in `{0, …, T−1}`
    #[default]
    RandomK,
    /// `w_T`
    Last,
    /// mean of `w_1, …, w_T`
    Average,
    /// mean of the last half, `w_{⌊T/2⌋+1}, …, w_T`
    SuffixAverage,
}

impl std::str::FromStr for OutputRule {
    type Err = GoaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-k" | "random" => Ok(OutputRule::RandomK),
            "last" => Ok(OutputRule::Last),
            "average" => Ok(OutputRule::Average),
            "suffix-average" => Ok(OutputRule::SuffixAverage),
            _ => Err(GoaError::usage(format!(
                "unknown output rule `{s}` (random-k, last, average, suffix-average)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrgConfig {
    pub eta: f64,
    pub inner_iters: usize,
    pub epochs: usize,
    pub batch: usize,
    pub output: OutputRule,
    /// sample one component `f_i` per perturbation instead of the full `f`
    pub finite_sum: bool,
}

impl SvrgConfig {
    pub fn new(eta: f64, inner_iters: usize, epochs: usize) -> Self {
        SvrgConfig {
            eta,
            inner_iters,
            epochs,
            batch: 1,
            output: OutputRule::default(),
            finite_sum: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(GoaError::usage(format!("step size must lie in (0, 1), got {}", self.eta)));
        }
        if self.inner_iters == 0 || self.epochs == 0 || self.batch == 0 {
            return Err(GoaError::usage("T, S and batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochResult {
    pub output: Vec<f64>,
    /// component-gradient evaluations in this epoch; a full gradient of an
    /// `n`-term sum counts `n`
    pub grad_evals: u64,
    /// unsmoothed `F` at the output
    pub objective: f64,
}

fn non_finite(what: &str, w: &[f64]) -> GoaError {
    GoaError::Numerical {
        message: format!("{what} produced a non-finite iterate"),
        residual: vecops::norm(w),
    }
}

fn check_start(problem: &CompositeProblem, set: &ConvexSet, start: &[f64]) -> Result<()> {
    problem.check_point(start)?;
    if set.dim() != start.len() {
        return Err(GoaError::usage("feasible set and start differ in dimension"));
    }
    if !set.contains(start) {
        return Err(GoaError::usage("start point lies outside the feasible set"));
    }
    Ok(())
}

/// Picks the epoch output incrementally.
struct OutputTracker {
    rule: OutputRule,
    pick: usize,
    t: usize,
    acc: Vec<f64>,
    count: usize,
}

impl OutputTracker {
    fn new(rule: OutputRule, t: usize, start: &[f64], sampler: &mut BallSampler) -> Self {
        let pick = match rule {
            OutputRule::RandomK => sampler.index(t),
            _ => 0,
        };
        let mut tr = OutputTracker {
            rule,
            pick,
            t,
            acc: vec![0.0; start.len()],
            count: 0,
        };
        tr.observe(0, start);
        tr
    }

    fn observe(&mut self, k: usize, w: &[f64]) {
        let keep = match self.rule {
            OutputRule::RandomK => k == self.pick,
            OutputRule::Last => k == self.t,
            OutputRule::Average => k >= 1,
            OutputRule::SuffixAverage => k > self.t / 2,
        };
        if keep {
            match self.rule {
                OutputRule::RandomK | OutputRule::Last => self.acc.copy_from_slice(w),
                _ => vecops::axpy(&mut self.acc, 1.0, w),
            }
            self.count += 1;
        }
    }

    fn finish(self) -> Vec<f64> {
        match self.rule {
            OutputRule::RandomK | OutputRule::Last => self.acc,
            _ => vecops::scale(&self.acc, 1.0 / self.count as f64),
        }
    }
}

struct StepDraw {
    batch: Vec<Vec<f64>>,
    components: Option<Vec<usize>>,
}

fn draw(problem: &CompositeProblem, cfg: &SvrgConfig, sampler: &mut BallSampler) -> StepDraw {
    let n = problem.f.components();
    let mut batch = Vec::with_capacity(cfg.batch);
    let mut components = cfg.finite_sum.then(|| Vec::with_capacity(cfg.batch));
    for _ in 0..cfg.batch {
        batch.push(sampler.sample());
        if let Some(c) = components.as_mut() {
            c.push(sampler.index(n));
        }
    }
    StepDraw { batch, components }
}

fn anchor_cost(problem: &CompositeProblem, mode: AnchorMode) -> u64 {
    let n = problem.f.components() as u64;
    match mode {
        AnchorMode::PointApprox => n,
        AnchorMode::MonteCarlo { samples } => n * samples as u64,
    }
}

fn step_cost(problem: &CompositeProblem, cfg: &SvrgConfig) -> u64 {
    let per = if cfg.finite_sum { 1 } else { problem.f.components() as u64 };
    2 * cfg.batch as u64 * per
}

#[derive(Clone, Copy)]
enum Update {
    Projected,
    Proximal,
}

#[allow(clippy::too_many_arguments)]
fn run_svrg_family(
    problem: &CompositeProblem,
    set: &ConvexSet,
    start: &[f64],
    anchor_mode: AnchorMode,
    delta: f64,
    cfg: &SvrgConfig,
    sampler: &mut BallSampler,
    update: Update,
) -> Result<Vec<EpochResult>> {
    cfg.validate()?;
    check_start(problem, set, start)?;
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(GoaError::usage(format!("delta must be >= 0, got {delta}")));
    }
    if let Update::Proximal = update {
        if problem.h.prox(start, cfg.eta).is_none() {
            return Err(GoaError::usage("the convex part has no proximal operator"));
        }
    }
    let include_h = matches!(update, Update::Projected);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut w_tilde = start.to_vec();
    for _ in 0..cfg.epochs {
        let anchor: VrAnchor = anchor_unchecked(problem, &w_tilde, delta, anchor_mode, sampler);
        let mut grad_evals = anchor_cost(problem, anchor_mode);
        let mut tracker = OutputTracker::new(cfg.output, cfg.inner_iters, &w_tilde, sampler);
        let mut w = w_tilde.clone();
        for k in 1..=cfg.inner_iters {
            let d = draw(problem, cfg, sampler);
            let v = vr_minibatch_unchecked(
                problem,
                &w,
                &anchor,
                &d.batch,
                include_h,
                d.components.as_deref(),
            );
            let stepped = vecops::add_scaled(&w, -cfg.eta, &v);
            let moved = match update {
                Update::Projected => stepped,
                Update::Proximal => problem.h.prox(&stepped, cfg.eta).expect("checked above"),
            };
            w = set.project(&moved)?;
            if !vecops::all_finite(&w) {
                return Err(non_finite("SVRG step", &w));
            }
            grad_evals += step_cost(problem, cfg);
            tracker.observe(k, &w);
        }
        w_tilde = tracker.finish();
        epochs.push(EpochResult {
            objective: problem.value(&w_tilde),
            output: w_tilde.clone(),
            grad_evals,
        });
    }
    Ok(epochs)
}

/// `S` epochs of projected SVRG on `F̂_δ` restricted to `set`:
/// `w_k = Π(w_{k−1} − η v_k)` with `v_k` including `∇h(w_{k−1})`.
pub fn run_projected_svrg(
    problem: &CompositeProblem,
    set: &ConvexSet,
    start: &[f64],
    anchor_mode: AnchorMode,
    delta: f64,
    cfg: &SvrgConfig,
    sampler: &mut BallSampler,
) -> Result<Vec<EpochResult>> {
    run_svrg_family(problem, set, start, anchor_mode, delta, cfg, sampler, Update::Projected)
}

/// Proximal variant: `w_k = Π[prox_{ηh}(w_{k−1} − η v_k)]` with `v_k` free of
/// `∇h` and the anchor gradient taken at the point, `g̃ = ∇f(w̃)`.
pub fn run_projected_prox_svrg(
    problem: &CompositeProblem,
    set: &ConvexSet,
    start: &[f64],
    delta: f64,
    cfg: &SvrgConfig,
    sampler: &mut BallSampler,
) -> Result<Vec<EpochResult>> {
    run_svrg_family(
        problem,
        set,
        start,
        AnchorMode::PointApprox,
        delta,
        cfg,
        sampler,
        Update::Proximal,
    )
}

/// Which parts of `F` the suffix-SGD gradient perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmoothingMode {
    /// only `f`
    Partial,
    /// `h` and `f`, as in the original GradOpt
    #[default]
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuffixSgdResult {
    /// mean of the iterates `w_k`, `k ∈ (T/2, T]`
    pub output: Vec<f64>,
    /// suffix average and its `F` after each `checkpoint` steps
    pub checkpoints: Vec<EpochResult>,
    pub grad_evals: u64,
}

/// SGD with `η_k = 1/(σk)` on the smoothed objective, projected onto `set`,
/// returning the average of the last half of the iterates.
#[allow(clippy::too_many_arguments)]
pub fn run_suffix_sgd(
    problem: &CompositeProblem,
    set: &ConvexSet,
    start: &[f64],
    delta: f64,
    sigma: f64,
    steps: usize,
    checkpoint: usize,
    mode: SmoothingMode,
    finite_sum: bool,
    sampler: &mut BallSampler,
) -> Result<SuffixSgdResult> {
    check_start(problem, set, start)?;
    if !(sigma > 0.0) || steps == 0 || checkpoint == 0 {
        return Err(GoaError::usage("suffix SGD needs sigma > 0 and positive step counts"));
    }
    let n = problem.f.components();
    let per_step = if finite_sum { 1 } else { n as u64 };
    let mut iterates: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    iterates.push(start.to_vec());
    let mut checkpoints = Vec::new();
    let suffix = |its: &[Vec<f64>], k: usize| -> Vec<f64> {
        let from = k / 2 + 1;
        let mut acc = vec![0.0; start.len()];
        for w in &its[from.min(k)..=k] {
            vecops::axpy(&mut acc, 1.0, w);
        }
        vecops::scale(&acc, 1.0 / (k + 1 - from.min(k)) as f64)
    };
    let mut evals = 0u64;
    for k in 1..=steps {
        let w = &iterates[k - 1];
        let u = sampler.sample();
        let i = finite_sum.then(|| sampler.index(n));
        let wp = vecops::add_scaled(w, delta, &u);
        let mut g = match i {
            Some(i) => problem.f.component_gradient(i, &wp),
            None => problem.f.gradient(&wp),
        };
        let h_at = match mode {
            SmoothingMode::Partial => problem.h.gradient(w),
            SmoothingMode::Full => problem.h.gradient(&wp),
        };
        vecops::axpy(&mut g, 1.0, &h_at);
        evals += per_step;
        let eta = 1.0 / (sigma * k as f64);
        let next = set.project(&vecops::add_scaled(w, -eta, &g))?;
        if !vecops::all_finite(&next) {
            return Err(non_finite("suffix SGD step", &next));
        }
        iterates.push(next);
        if k % checkpoint == 0 || k == steps {
            let out = suffix(&iterates, k);
            checkpoints.push(EpochResult {
                objective: problem.value(&out),
                output: out,
                grad_evals: evals,
            });
        }
    }
    Ok(SuffixSgdResult {
        output: suffix(&iterates, steps),
        checkpoints,
        grad_evals: evals,
    })
}

/// Nonconvex Prox-SVRG on the unsmoothed objective: no projection, constant
/// step, batch size one, each epoch anchored at the previous epoch's last
/// iterate.
pub fn run_nonconvex_prox_svrg(
    problem: &CompositeProblem,
    start: &[f64],
    eta: f64,
    inner_iters: usize,
    epochs: usize,
    finite_sum: bool,
    sampler: &mut BallSampler,
) -> Result<Vec<EpochResult>> {
    problem.check_point(start)?;
    if !(eta > 0.0) || inner_iters == 0 || epochs == 0 {
        return Err(GoaError::usage("Prox-SVRG needs eta > 0 and positive T, S"));
    }
    if problem.h.prox(start, eta).is_none() {
        return Err(GoaError::usage("the convex part has no proximal operator"));
    }
    let n = problem.f.components();
    let per_step = if finite_sum { 2 } else { 2 * n as u64 };
    let mut w = start.to_vec();
    let mut out = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let w_tilde = w.clone();
        let g_tilde = problem.f.gradient(&w_tilde);
        let mut evals = n as u64;
        for _ in 0..inner_iters {
            let mut v = match finite_sum.then(|| sampler.index(n)) {
                Some(i) => {
                    let mut v = problem.f.component_gradient(i, &w);
                    vecops::axpy(&mut v, -1.0, &problem.f.component_gradient(i, &w_tilde));
                    v
                }
                None => {
                    let mut v = problem.f.gradient(&w);
                    vecops::axpy(&mut v, -1.0, &g_tilde);
                    v
                }
            };
            vecops::axpy(&mut v, 1.0, &g_tilde);
            w = problem
                .h
                .prox(&vecops::add_scaled(&w, -eta, &v), eta)
                .expect("checked above");
            if !vecops::all_finite(&w) {
                return Err(non_finite("Prox-SVRG step", &w));
            }
            evals += per_step;
        }
        out.push(EpochResult {
            objective: problem.value(&w),
            output: w.clone(),
            grad_evals: evals,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{SquaredNorm, ZeroPart};
    use crate::problems::test1d;

    fn bowl(dim: usize) -> CompositeProblem {
        CompositeProblem::new("bowl", SquaredNorm::new(1.0), ZeroPart { dim })
    }

    #[test]
    fn rho_reference_values() {
        assert!((rho_svrg(1.0, 0.2, 1.0, 100).unwrap() - 0.75).abs() < 1e-12);
        assert!((rho_svrg(2.0, 0.2, 1.0, 50).unwrap() - 0.75).abs() < 1e-12);
        let lim = rho_svrg(1.0, 0.1, 1.0, 1_000_000_000_000).unwrap();
        assert!((lim - 0.25).abs() < 1e-10);
        let p = rho_prox_svrg(1.0, 0.05, 1.0, 1000).unwrap();
        let expect = 1.0 / (0.05 * 0.8 * 1000.0) + 0.2 * 1001.0 / (0.8 * 1000.0);
        assert!((p - expect).abs() < 1e-12);
        assert!((p - 0.27525).abs() < 1e-12);
    }

    #[test]
    fn rho_limit_two_thirds() {
        let r = rho_svrg(1.0, 0.2, 1.0, 1_000_000_000_000).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn rho_rejects_large_steps() {
        assert!(matches!(rho_svrg(1.0, 0.5, 1.0, 10), Err(GoaError::Usage(_))));
        assert!(matches!(rho_prox_svrg(1.0, 0.25, 1.0, 10), Err(GoaError::Usage(_))));
        assert!(rho_svrg(1.0, 0.2, 1.0, 0).is_err());
    }

    #[test]
    fn stage_counts() {
        assert_eq!(stage_count(0.5, 1.0, 0.75).unwrap(), 1);
        assert_eq!(stage_count(16.0, 1.0, 0.75).unwrap(), 10);
        assert!(stage_count(16.0, 1.0, 1.0).is_err());
        let inv = svrg_rate_inverse(1.0, 0.2, 1.0, 100);
        assert!((1.0 / inv - 0.75).abs() < 1e-12);
    }

    #[test]
    fn convex_contraction_is_deterministic() {
        let p = bowl(2);
        let set = ConvexSet::ball(vec![0.0; 2], 10.0).unwrap();
        let mut cfg = SvrgConfig::new(0.2, 50, 1);
        cfg.output = OutputRule::Last;
        let mut s = BallSampler::new(2, 1);
        let r = run_projected_svrg(&p, &set, &[4.0, 0.0], AnchorMode::PointApprox, 0.7, &cfg, &mut s)
            .unwrap();
        let expect = 4.0 * 0.8f64.powi(50);
        assert!((r[0].output[0] - expect).abs() < 1e-15);
        assert!(vecops::norm(&r[0].output) < 1e-4);
    }

    #[test]
    fn constrained_minimizer_on_boundary() {
        let p = bowl(2);
        let set = ConvexSet::ball(vec![3.0, 0.0], 1.0).unwrap();
        let mut cfg = SvrgConfig::new(0.2, 100, 2);
        cfg.output = OutputRule::Last;
        let mut s = BallSampler::new(2, 1);
        let r = run_projected_svrg(&p, &set, &[3.5, 0.5], AnchorMode::PointApprox, 0.5, &cfg, &mut s)
            .unwrap();
        let out = &r.last().unwrap().output;
        assert!((vecops::dist(out, &[3.0, 0.0]) - 1.0).abs() < 1e-9);
        assert!(vecops::dist(out, &[2.0, 0.0]) < 1e-6);
    }

    #[test]
    fn prox_contraction_closed_form() {
        let p = bowl(2);
        let set = ConvexSet::ball(vec![0.0; 2], 10.0).unwrap();
        let mut cfg = SvrgConfig::new(0.5, 7, 1);
        cfg.output = OutputRule::Last;
        let mut s = BallSampler::new(2, 3);
        let r = run_projected_prox_svrg(&p, &set, &[3.0, -1.0], 0.4, &cfg, &mut s).unwrap();
        let k = 1.5f64.powi(7);
        assert!((r[0].output[0] - 3.0 / k).abs() < 1e-12);
        assert!((r[0].output[1] + 1.0 / k).abs() < 1e-12);
    }

    #[test]
    fn start_must_be_feasible() {
        let p = bowl(1);
        let set = ConvexSet::ball(vec![0.0], 1.0).unwrap();
        let cfg = SvrgConfig::new(0.2, 5, 1);
        let mut s = BallSampler::new(1, 0);
        let r = run_projected_svrg(&p, &set, &[2.0], AnchorMode::PointApprox, 0.0, &cfg, &mut s);
        assert!(matches!(r, Err(GoaError::Usage(_))));
    }

    #[test]
    fn iterates_stay_feasible() {
        let p = test1d();
        let set = ConvexSet::ball(vec![0.5], 0.4).unwrap();
        for rule in [OutputRule::RandomK, OutputRule::Last, OutputRule::Average, OutputRule::SuffixAverage] {
            let mut cfg = SvrgConfig::new(0.2, 30, 3);
            cfg.output = rule;
            let mut s = BallSampler::new(1, 9);
            let r = run_projected_svrg(&p, &set, &[0.5], AnchorMode::PointApprox, 1.0, &cfg, &mut s)
                .unwrap();
            assert!(r.iter().all(|e| set.contains(&e.output)));
        }
    }

    #[test]
    fn suffix_sgd_contracts() {
        let p = bowl(2);
        let set = ConvexSet::ball(vec![0.0; 2], 10.0).unwrap();
        let mut s = BallSampler::new(2, 5);
        let r = run_suffix_sgd(&p, &set, &[3.0, 4.0], 0.0, 1.0, 200, 50, SmoothingMode::Full, false, &mut s)
            .unwrap();
        assert!(vecops::norm(&r.output) < 5.0);
        assert_eq!(r.checkpoints.len(), 4);
        assert_eq!(r.checkpoints.last().unwrap().output, r.output);
    }

    #[test]
    fn nonconvex_prox_svrg_convex_case() {
        let p = bowl(2);
        let mut s = BallSampler::new(2, 5);
        let r = run_nonconvex_prox_svrg(&p, &[3.0, 4.0], 0.5, 20, 3, false, &mut s).unwrap();
        assert!(r.last().unwrap().objective < 1e-6);
    }

    #[test]
    fn determinism() {
        let p = test1d();
        let set = ConvexSet::ball(vec![0.0], 3.0).unwrap();
        let cfg = SvrgConfig::new(0.2, 40, 3);
        let run = || {
            let mut s = BallSampler::new(1, 77);
            run_projected_svrg(&p, &set, &[-2.0], AnchorMode::monte_carlo(), 1.0, &cfg, &mut s).unwrap()
        };
        assert_eq!(run(), run());
    }
}
