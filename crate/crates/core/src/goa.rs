//! The graduated outer loop: a geometric δ-schedule, per-stage accuracy
//! targets, shrinking trust sets, and the inner solver for each stage.

use std::time::Instant;

use crate::error::{GoaError, Result};
use crate::geometry::ConvexSet;
use crate::harness::PassRecord;
use crate::problem::CompositeProblem;
use crate::smoothing::{AnchorMode, BallSampler};
use crate::solvers::{
    rho_prox_svrg, rho_svrg, run_projected_prox_svrg, run_projected_svrg, run_suffix_sgd,
    stage_count, EpochResult, OutputRule, SmoothingMode, SvrgConfig,
};

/// Radius multiplier of the trust set `C_m = C ∩ B(w_m, 1.5 δ_m)`.
pub const SHRINK_RADIUS: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnerSolver {
    #[default]
    Svrg,
    ProxSvrg,
    SuffixSgd,
}

/// Which gap `ΔF_m` sizes the epoch count of stage `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapEstimate {
    /// `F(w_m) − F_lb` at the start of each stage
    #[default]
    Current,
    /// `F(w_1) − F_lb`, fixed for the whole run
    Initial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpochBudget {
    /// `S_m` from the linear rate; `lower_bound` stands in for the unknown
    /// optimum and `cap` bounds runaway counts when `ρ` is near one.
    Rate {
        lower_bound: f64,
        cap: usize,
        gap: GapEstimate,
    },
    /// the same `S` in every stage
    Fixed(usize),
}

impl Default for EpochBudget {
    fn default() -> Self {
        EpochBudget::Rate {
            lower_bound: 0.0,
            cap: 100,
            gap: GapEstimate::Current,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoaConfig {
    /// target accuracy `ε`; sets `M = ⌈√(1/ε)⌉` unless `stages` is given
    pub epsilon: f64,
    pub shrink: f64,
    pub eta: f64,
    /// `T`; defaults to `⌈100·L/σ⌉`
    pub inner_iters: Option<usize>,
    pub stages: Option<usize>,
    pub sigma: f64,
    /// the `L` used in the rate formulas; one by default, so `η` plays the
    /// role of the normalized step `θ = ηL`
    pub rate_smoothness: f64,
    /// `δ_1`; defaults to `diam(C)`
    pub initial_delta: Option<f64>,
    pub solver: InnerSolver,
    pub anchor: AnchorMode,
    pub batch: usize,
    pub output: OutputRule,
    pub finite_sum: bool,
    pub budget: EpochBudget,
    /// smoothing used by the suffix-SGD inner solver
    pub sgd_smoothing: SmoothingMode,
    /// fixed first iterate instead of a uniform draw from `C`
    pub start: Option<Vec<f64>>,
    pub wall_time: bool,
}

impl Default for GoaConfig {
    fn default() -> Self {
        GoaConfig {
            epsilon: 1e-2,
            shrink: 0.9,
            eta: 0.2,
            inner_iters: None,
            stages: None,
            sigma: 1.0,
            rate_smoothness: 1.0,
            initial_delta: None,
            solver: InnerSolver::Svrg,
            anchor: AnchorMode::PointApprox,
            batch: 1,
            output: OutputRule::RandomK,
            finite_sum: false,
            budget: EpochBudget::default(),
            sgd_smoothing: SmoothingMode::Full,
            start: None,
            wall_time: false,
        }
    }
}

impl GoaConfig {
    pub fn stage_total(&self) -> usize {
        self.stages
            .unwrap_or_else(|| (1.0 / self.epsilon).sqrt().ceil() as usize)
            .max(1)
    }

    pub fn inner_total(&self) -> usize {
        self.inner_iters
            .unwrap_or_else(|| (100.0 * self.rate_smoothness / self.sigma).ceil() as usize)
            .max(1)
    }

    /// The contraction factor of the configured inner solver.
    pub fn rho(&self) -> Result<f64> {
        let t = self.inner_total();
        match self.solver {
            InnerSolver::ProxSvrg => rho_prox_svrg(self.sigma, self.eta, self.rate_smoothness, t),
            _ => rho_svrg(self.sigma, self.eta, self.rate_smoothness, t),
        }
    }

    /// Checks everything that can be checked before any iteration; in rate
    /// mode this includes `ρ < 1`.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(GoaError::usage("epsilon must be positive"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(GoaError::usage(format!("shrink factor must lie in (0, 1), got {}", self.shrink)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(GoaError::usage(format!("step size must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.sigma > 0.0 && self.rate_smoothness > 0.0) {
            return Err(GoaError::usage("sigma and L must be positive"));
        }
        if self.batch == 0 || self.stages == Some(0) || self.inner_iters == Some(0) {
            return Err(GoaError::usage("batch size, T and M must be at least 1"));
        }
        if let Some(d) = self.initial_delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(GoaError::usage("initial delta must be positive"));
            }
        }
        if let AnchorMode::MonteCarlo { samples: 0 } = self.anchor {
            return Err(GoaError::usage("Monte Carlo anchor needs at least one sample"));
        }
        match self.budget {
            EpochBudget::Fixed(0) => return Err(GoaError::usage("epoch count must be at least 1")),
            EpochBudget::Rate { cap: 0, .. } => return Err(GoaError::usage("epoch cap must be at least 1")),
            EpochBudget::Rate { .. } => {
                let rho = self.rho()?;
                if rho >= 1.0 {
                    return Err(GoaError::usage(format!(
                        "inner solver not contracting: rho = {rho} for sigma={}, eta={}, L={}, T={}",
                        self.sigma,
                        self.eta,
                        self.rate_smoothness,
                        self.inner_total()
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Per-stage bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub delta: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub inner_steps: usize,
    pub start: Vec<f64>,
    pub set: ConvexSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoaRun {
    pub point: Vec<f64>,
    pub value: f64,
    pub passes: Vec<PassRecord>,
    pub stages: Vec<StageRecord>,
    pub grad_evals: u64,
}

/// `Σ_m S_m·T` over the stages of a run.
pub fn total_inner_steps(run: &GoaRun) -> usize {
    run.stages.iter().map(|s| s.inner_steps).sum()
}

/// `C ∩ B(w, 1.5 δ)`, simplified to whichever set is contained in the other
/// when that can be decided exactly.
pub fn shrink_set(set: &ConvexSet, w: &[f64], delta: f64) -> Result<ConvexSet> {
    if w.len() != set.dim() {
        return Err(GoaError::usage("shrink center has the wrong dimension"));
    }
    if !set.contains(w) {
        return Err(GoaError::usage("shrink center lies outside the decision set"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(GoaError::usage(format!("delta must be positive, got {delta}")));
    }
    let r = SHRINK_RADIUS * delta;
    if set.inside_ball(w, r) {
        Ok(set.clone())
    } else if set.contains_ball(w, r) {
        ConvexSet::ball(w.to_vec(), r)
    } else {
        ConvexSet::intersection(set.clone(), w.to_vec(), r)
    }
}

/// SVRG-GOA, PSVRG-GOA, or GradOpt, depending on `cfg.solver`.
pub fn run_goa(
    problem: &CompositeProblem,
    set: &ConvexSet,
    cfg: &GoaConfig,
    sampler: &mut BallSampler,
) -> Result<GoaRun> {
    cfg.validate()?;
    if set.dim() != problem.dim() {
        return Err(GoaError::usage("decision set and problem differ in dimension"));
    }
    let diameter = set.diameter()?;
    let mut w = match &cfg.start {
        Some(s) => {
            problem.check_point(s)?;
            if !set.contains(s) {
                return Err(GoaError::usage("start point lies outside the decision set"));
            }
            s.clone()
        }
        None => set.sample_uniform(sampler.rng())?,
    };
    let t = cfg.inner_total();
    let m_total = cfg.stage_total();
    let rho = match cfg.budget {
        EpochBudget::Rate { .. } => Some(cfg.rho()?),
        EpochBudget::Fixed(_) => None,
    };
    let initial_value = problem.value(&w);
    let clock = Instant::now();
    let mut delta = cfg.initial_delta.unwrap_or(diameter);
    let mut passes: Vec<PassRecord> = Vec::new();
    let mut stages = Vec::with_capacity(m_total);
    let mut grad_evals = 0u64;
    for m in 1..=m_total {
        let eps_m = cfg.sigma * cfg.shrink * cfg.shrink * delta * delta / 8.0;
        let epochs = match (cfg.budget, rho) {
            (EpochBudget::Fixed(s), _) => s,
            (EpochBudget::Rate { lower_bound, cap, gap }, Some(rho)) => {
                let from = match gap {
                    GapEstimate::Current => problem.value(&w),
                    GapEstimate::Initial => initial_value,
                };
                stage_count(from - lower_bound, eps_m, rho)?.min(cap)
            }
            _ => unreachable!("rate budget always has rho"),
        };
        let c_m = shrink_set(set, &w, delta)?;
        let results: Vec<EpochResult> = match cfg.solver {
            InnerSolver::Svrg | InnerSolver::ProxSvrg => {
                let inner = SvrgConfig {
                    eta: cfg.eta,
                    inner_iters: t,
                    epochs,
                    batch: cfg.batch,
                    output: cfg.output,
                    finite_sum: cfg.finite_sum,
                };
                if cfg.solver == InnerSolver::Svrg {
                    run_projected_svrg(problem, &c_m, &w, cfg.anchor, delta, &inner, sampler)?
                } else {
                    run_projected_prox_svrg(problem, &c_m, &w, delta, &inner, sampler)?
                }
            }
            InnerSolver::SuffixSgd => {
                let r = run_suffix_sgd(
                    problem,
                    &c_m,
                    &w,
                    delta,
                    cfg.sigma,
                    epochs * t,
                    t,
                    cfg.sgd_smoothing,
                    cfg.finite_sum,
                    sampler,
                )?;
                let mut prev = 0;
                r.checkpoints
                    .into_iter()
                    .map(|mut e| {
                        let total = e.grad_evals;
                        e.grad_evals -= prev;
                        prev = total;
                        e
                    })
                    .collect()
            }
        };
        for e in &results {
            if !e.objective.is_finite() {
                return Err(GoaError::Numerical {
                    message: format!("objective became non-finite in stage {m}"),
                    residual: e.objective,
                });
            }
            grad_evals += e.grad_evals;
            passes.push(PassRecord {
                pass: passes.len() + 1,
                objective: e.objective,
                delta,
                wall_ms: if cfg.wall_time { clock.elapsed().as_millis() as u64 } else { 0 },
            });
        }
        stages.push(StageRecord {
            stage: m,
            delta,
            epsilon: eps_m,
            epochs,
            inner_steps: epochs * t,
            start: w.clone(),
            set: c_m,
        });
        w = results.last().expect("at least one epoch").output.clone();
        delta *= cfg.shrink;
    }
    Ok(GoaRun {
        value: problem.value(&w),
        point: w,
        passes,
        stages,
        grad_evals,
    })
}

/// GradOpt: the same schedule with suffix-averaged SGD, `η_k = 1/(σk)`, on
/// the fully smoothed objective.
pub fn run_gradopt_baseline(
    problem: &CompositeProblem,
    set: &ConvexSet,
    cfg: &GoaConfig,
    sampler: &mut BallSampler,
) -> Result<GoaRun> {
    let cfg = GoaConfig {
        solver: InnerSolver::SuffixSgd,
        ..cfg.clone()
    };
    run_goa(problem, set, &cfg, sampler)
}
