//! A self-contained invariant suite: projection properties, gradient checks
//! on every shipped problem, sampler moments, finite-sum consistency, CSV
//! round-trips and deterministic replay. Used by the `validate` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::Dataset;
use crate::geometry::ConvexSet;
use crate::goa::{EpochBudget, GoaConfig};
use crate::harness::{mean_trace, read_csv, run_experiment, write_csv, Algorithm, ExperimentConfig, PassRecord};
use crate::problem::CompositeProblem;
use crate::problems::{build_svm_problem, robust_loss, test1d, test2d, RobustLossParams};
use crate::smoothing::BallSampler;
use crate::vecops;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: impl Into<String>, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.into(),
        passed,
        detail,
    }
}

/// `‖∇F(w) − ∇_h F(w)‖ / max(‖∇F(w)‖, floor)`, where `∇_h` is the
/// Richardson extrapolation of central differences with steps `h` and `h/2`
/// (fourth-order accurate, so the check stays tight near stationary points).
pub fn gradient_fd_error(problem: &CompositeProblem, w: &[f64], h: f64, floor: f64) -> f64 {
    let g = problem.grad(w);
    let mut wp = w.to_vec();
    let mut central = |j: usize, step: f64| {
        wp[j] = w[j] + step;
        let up = problem.value(&wp);
        wp[j] = w[j] - step;
        let down = problem.value(&wp);
        wp[j] = w[j];
        (up - down) / (2.0 * step)
    };
    let fd: Vec<f64> = (0..w.len())
        .map(|j| (4.0 * central(j, 0.5 * h) - central(j, h)) / 3.0)
        .collect();
    vecops::dist(&g, &fd) / vecops::norm(&g).max(floor)
}

/// A small random classification set for checks that need a finite sum.
pub fn toy_dataset(n: usize, d: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::new();
        for j in 0..d {
            if rng.random_bool(0.7) {
                row.push((j, rng.random_range(-1.0..1.0)));
            }
        }
        rows.push(row);
    }
    let labels = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    Dataset {
        name: "toy".into(),
        dim: d,
        rows,
        labels,
    }
}

fn random_point(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-scale..scale)).collect()
}

fn projection_checks(rng: &mut ChaCha8Rng) -> CheckOutcome {
    let sets = [
        ConvexSet::ball(vec![0.5, -0.5, 0.0], 1.2).unwrap(),
        ConvexSet::boxed(vec![-1.0, 0.0, -2.0], vec![1.0, 0.5, 2.0]).unwrap(),
        ConvexSet::intersection(
            ConvexSet::boxed(vec![-1.0; 3], vec![1.0; 3]).unwrap(),
            vec![0.9, 0.9, 0.0],
            0.5,
        )
        .unwrap(),
        ConvexSet::intersection(ConvexSet::ball(vec![0.0; 3], 1.0).unwrap(), vec![1.0, 0.5, 0.0], 0.8)
            .unwrap(),
    ];
    let (mut member, mut idem, mut expand) = (0.0f64, 0.0f64, 0.0f64);
    for set in &sets {
        for _ in 0..300 {
            let u = random_point(rng, 3, 4.0);
            let v = random_point(rng, 3, 4.0);
            let (pu, pv) = match (set.project(&u), set.project(&v)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => {
                    return outcome("projection", false, format!("projection failed: {e}"))
                }
            };
            if !set.contains(&pu) {
                member = member.max(1.0);
            }
            let ppu = set.project(&pu).unwrap_or_default();
            idem = idem.max(vecops::dist(&ppu, &pu));
            expand = expand.max(vecops::dist(&pu, &pv) - vecops::dist(&u, &v));
        }
    }
    let passed = member == 0.0 && idem < 1e-12 && expand <= 1e-12;
    outcome(
        "projection membership / idempotence / nonexpansiveness",
        passed,
        format!("idempotence drift {idem:.1e}, max expansion {expand:.1e}"),
    )
}

fn additivity_check(problems: &[&CompositeProblem], rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut ok = true;
    for p in problems {
        for _ in 0..1000 {
            let w = random_point(rng, p.dim(), 3.0);
            let total = p.value(&w);
            ok &= total == p.h.value(&w) + p.f.value(&w);
            let g = p.grad(&w);
            let mut sum = p.h.gradient(&w);
            vecops::axpy(&mut sum, 1.0, &p.f.gradient(&w));
            ok &= g == sum;
        }
    }
    outcome("additivity F = h + f", ok, "1000 points per problem".into())
}

fn gradient_checks(problems: &[&CompositeProblem], rng: &mut ChaCha8Rng) -> Vec<CheckOutcome> {
    problems
        .iter()
        .map(|p| {
            let scale = if p.dim() <= 2 { 2.0 } else { 0.5 };
            let worst = (0..10)
                .map(|_| gradient_fd_error(p, &random_point(rng, p.dim(), scale), 1e-4, 1e-3))
                .fold(0.0, f64::max);
            outcome(
                format!("gradient vs central differences: {}", p.name),
                worst < 1e-6,
                format!("max relative error {worst:.2e}"),
            )
        })
        .collect()
}

fn sampler_checks(seed: u64) -> CheckOutcome {
    const N: usize = 100_000;
    let mut ok = true;
    let mut detail = String::new();
    for d in [1usize, 2, 3, 10] {
        let mut s = BallSampler::new(d, seed + d as u64);
        let mut mean = vec![0.0; d];
        let mut second = vec![vec![0.0; d]; d];
        let mut second_sq = vec![vec![0.0; d]; d];
        let mut max_norm: f64 = 0.0;
        for _ in 0..N {
            let u = s.sample();
            max_norm = max_norm.max(vecops::norm(&u));
            for i in 0..d {
                mean[i] += u[i] / N as f64;
                for j in 0..d {
                    let x = u[i] * u[j];
                    second[i][j] += x / N as f64;
                    second_sq[i][j] += x * x / N as f64;
                }
            }
        }
        let target = s.second_moment();
        let mut worst_z: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let m = second[i][j];
                let se = ((second_sq[i][j] - m * m) / N as f64).sqrt();
                let expect = if i == j { target } else { 0.0 };
                worst_z = worst_z.max((m - expect).abs() / se);
            }
        }
        let mean_ok = vecops::norm(&mean) <= 4.0 / (N as f64).sqrt();
        ok &= max_norm <= 1.0 && mean_ok && worst_z <= 5.0;
        detail.push_str(&format!("d={d}: |mean|={:.1e} z={worst_z:.2}; ", vecops::norm(&mean)));
    }
    outcome("unit-ball sampler moments", ok, detail)
}

fn finite_sum_check(problems: &[&CompositeProblem], rng: &mut ChaCha8Rng) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for p in problems.iter().filter(|p| p.is_finite_sum()) {
        let n = p.f.components();
        for _ in 0..10 {
            let w = random_point(rng, p.dim(), 1.0);
            let mut avg = vec![0.0; p.dim()];
            for i in 0..n {
                vecops::axpy(&mut avg, 1.0 / n as f64, &p.f.component_gradient(i, &w));
            }
            worst = worst.max(vecops::dist(&avg, &p.f.gradient(&w)));
        }
    }
    outcome(
        "finite-sum consistency",
        worst < 1e-10,
        format!("max |mean component gradient - gradient| {worst:.1e}"),
    )
}

fn loss_checks() -> CheckOutcome {
    let prm = RobustLossParams::new(0.9, 1e-3);
    let cap = 0.5 * prm.tau * prm.tau;
    let floor = -(2f64.ln()) / (2.0 * prm.p);
    let h = 1e-7;
    let (mut kink, mut above, mut below) = (0.0f64, false, false);
    for k in 0..=100_000 {
        let xi = -5.0 + 10.0 * k as f64 / 100_000.0;
        let left = (robust_loss(xi, &prm) - robust_loss(xi - h, &prm)) / h;
        let right = (robust_loss(xi + h, &prm) - robust_loss(xi, &prm)) / h;
        kink = kink.max((left - right).abs());
        above |= robust_loss(xi, &prm) > cap + 1e-12;
        below |= robust_loss(xi, &prm) < floor;
    }
    outcome(
        "robust loss smooth and bounded",
        kink < 1e-6 && !above && !below,
        format!("max derivative mismatch {kink:.1e}"),
    )
}

fn replay_and_csv(seed: u64) -> Vec<CheckOutcome> {
    let p = test2d();
    let set = ConvexSet::ball(vec![0.0; 2], 3.0).unwrap();
    let goa = GoaConfig {
        budget: EpochBudget::Fixed(2),
        stages: Some(4),
        ..GoaConfig::default()
    };
    let mut replay_ok = true;
    let mut roundtrip = 0.0f64;
    for a in Algorithm::ALL {
        let mut cfg = ExperimentConfig::new(a, goa.clone(), set.clone());
        cfg.trials = 3;
        cfg.master_seed = seed;
        let csv = |cfg: &ExperimentConfig| -> Option<Vec<u8>> {
            let r = run_experiment(&p, cfg).ok()?;
            let mut buf = Vec::new();
            write_csv(&mut buf, None, std::slice::from_ref(&r)).ok()?;
            Some(buf)
        };
        let (a1, a2) = (csv(&cfg), csv(&cfg));
        replay_ok &= a1.is_some() && a1 == a2;
        if let Some(bytes) = a1 {
            let Ok(rows) = read_csv(bytes.as_slice()) else {
                return vec![outcome("CSV round-trip", false, "reparse failed".into())];
            };
            let per_trial: Vec<Vec<PassRecord>> = (0..cfg.trials)
                .map(|k| rows.iter().filter(|r| r.trial == Some(k)).map(|r| r.record).collect())
                .collect();
            let again = mean_trace(per_trial.iter().map(|t| t.as_slice()));
            let stored: Vec<PassRecord> = rows.iter().filter(|r| r.trial.is_none()).map(|r| r.record).collect();
            if again.len() != stored.len() {
                roundtrip = f64::INFINITY;
            }
            for (x, y) in again.iter().zip(&stored) {
                roundtrip = roundtrip.max((x.objective - y.objective).abs());
            }
        }
    }
    vec![
        outcome("deterministic replay (all algorithms)", replay_ok, "two runs, same seed".into()),
        outcome(
            "CSV round-trip re-averaging",
            roundtrip <= 1e-15,
            format!("max mean deviation {roundtrip:.1e}"),
        ),
    ]
}

/// Runs every check; `extra` problems (for example loaded datasets) join the
/// gradient and finite-sum checks.
pub fn run_invariant_suite(seed: u64, extra: &[CompositeProblem]) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t1 = test1d();
    let t2 = test2d();
    let toy = build_svm_problem(toy_dataset(40, 5, seed), RobustLossParams::new(0.9, 1e-3))
        .expect("toy data is valid");
    let mut problems: Vec<&CompositeProblem> = vec![&t1, &t2, &toy];
    problems.extend(extra.iter());
    let mut out = vec![projection_checks(&mut rng), additivity_check(&problems, &mut rng)];
    out.extend(gradient_checks(&problems, &mut rng));
    out.push(sampler_checks(seed));
    out.push(finite_sum_check(&problems, &mut rng));
    out.push(loss_checks());
    out.extend(replay_and_csv(seed));
    out
}
