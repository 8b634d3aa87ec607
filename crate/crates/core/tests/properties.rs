use goa_core::datasets::{parse_libsvm_str, Dataset};
use goa_core::goa::shrink_set;
use goa_core::harness::{derive_seed, read_csv, write_csv, ExperimentResult};
use goa_core::problem::SquaredNorm;
use goa_core::problems::{build_svm_problem, test1d, test2d, RobustLossParams};
use goa_core::smoothing::vr_sample;
use goa_core::solvers::{rho_prox_svrg, rho_svrg, stage_count, svrg_rate_inverse};
use goa_core::validate::gradient_fd_error;
use goa_core::{Algorithm, ConvergenceTrace, ConvexPart, ConvexSet, PassRecord, VrAnchor};
use proptest::prelude::*;

const TOL: f64 = 1e-9;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 3)
}

fn ball() -> impl Strategy<Value = ConvexSet> {
    (vec3(), 0.1..5.0f64).prop_map(|(c, r)| ConvexSet::ball(c, r).unwrap())
}

fn boxed() -> impl Strategy<Value = ConvexSet> {
    (vec3(), prop::collection::vec(0.1..4.0f64, 3)).prop_map(|(lo, w)| {
        let hi = lo.iter().zip(&w).map(|(l, w)| l + w).collect();
        ConvexSet::boxed(lo, hi).unwrap()
    })
}

/// Balls, boxes, and ball∩ball or box∩ball intersections in three dimensions.
fn convex_set() -> impl Strategy<Value = ConvexSet> {
    let outer = prop_oneof![ball(), boxed()];
    // the second ball is centered inside the outer set so the intersection is non-empty
    let lens = (outer, vec3(), 0.1..5.0f64).prop_map(|(outer, v, r)| {
        let c = outer.project(&v).unwrap();
        ConvexSet::intersection(outer, c, r).unwrap()
    });
    prop_oneof![ball(), boxed(), lens]
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (2usize..12, 1usize..6).prop_flat_map(|(n, d)| {
        let row = prop::collection::vec(prop::option::of(-5.0..5.0f64), d);
        (prop::collection::vec(row, n), prop::collection::vec(any::<bool>(), n)).prop_map(move |(rows, labels)| {
            let rows = rows
                .into_iter()
                .map(|r| r.into_iter().enumerate().filter_map(|(j, x)| x.map(|x| (j, x))).collect())
                .collect();
            // both classes present so the label remap is the identity
            let mut labels: Vec<f64> = labels.into_iter().map(|b| if b { 1.0 } else { -1.0 }).collect();
            labels[0] = -1.0;
            labels[1] = 1.0;
            Dataset { name: "prop".into(), dim: d, rows, labels }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_lands_in_set(set in convex_set(), v in vec3()) {
        let p = set.project(&v).unwrap();
        prop_assert!(set.contains_tol(&p, 1e-7), "{p:?} outside {set:?}");
    }

    #[test]
    fn projection_is_idempotent(set in convex_set(), v in vec3()) {
        let p = set.project(&v).unwrap();
        let pp = set.project(&p).unwrap();
        prop_assert!(dist(&p, &pp) <= 1e-7);
    }

    #[test]
    fn projection_is_nonexpansive(set in convex_set(), a in vec3(), b in vec3()) {
        let (pa, pb) = (set.project(&a).unwrap(), set.project(&b).unwrap());
        prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-7);
    }

    #[test]
    fn shrunk_set_lies_in_both(set in convex_set(), v in vec3(), delta in 0.05..3.0f64, probe in vec3()) {
        let w = set.project(&v).unwrap();
        let shrunk = shrink_set(&set, &w, delta).unwrap();
        let p = shrunk.project(&probe).unwrap();
        prop_assert!(set.contains_tol(&p, 1e-7));
        prop_assert!(dist(&p, &w) <= 1.5 * delta + 1e-7);
    }

    #[test]
    fn prox_solves_its_optimality_condition(lambda in 1e-4..10.0f64, eta in 1e-3..1.0f64, v in vec3()) {
        // w − v + ηλw = 0 at the minimizer
        let w = SquaredNorm::new(lambda).prox(&v, eta).unwrap();
        for j in 0..3 {
            prop_assert!((w[j] - v[j] + eta * lambda * w[j]).abs() <= TOL * (1.0 + v[j].abs()));
        }
    }

    #[test]
    fn rate_inverse_identity(sigma in 0.01..2.0f64, l in 0.1..10.0f64, frac in 0.01..0.99f64, t in 1usize..5000) {
        let eta = frac / (2.0 * l);
        let inv = svrg_rate_inverse(sigma, eta, l, t);
        let rho = rho_svrg(sigma, eta, l, t).unwrap();
        prop_assert!((rho * inv - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn proximal_rate_is_slower(sigma in 0.01..2.0f64, l in 0.1..10.0f64, frac in 0.01..0.99f64, t in 1usize..5000) {
        let eta = frac / (4.0 * l);
        prop_assert!(rho_prox_svrg(sigma, eta, l, t).unwrap() >= rho_svrg(sigma, eta, l, t).unwrap());
    }

    #[test]
    fn stage_count_reaches_target(gap in 1e-6..1e3f64, eps in 1e-6..1.0f64, rho in 0.05..0.99f64) {
        let s = stage_count(gap, eps, rho).unwrap();
        prop_assert!(s >= 1);
        prop_assert!(gap * rho.powi(s as i32) <= eps * (1.0 + 1e-12) || gap <= eps);
        if s > 1 {
            prop_assert!(gap * rho.powi(s as i32 - 1) > eps);
        }
    }

    #[test]
    fn objective_is_additive(x in -3.0..3.0f64, y in -3.0..3.0f64) {
        for p in [test1d(), test2d()] {
            let w: Vec<f64> = [x, y][..p.dim()].to_vec();
            let total = p.evaluate(&w).unwrap();
            prop_assert!((total - p.h.value(&w) - p.f.value(&w)).abs() <= 1e-14);
        }
    }

    #[test]
    fn test_problem_gradients_match_differences(x in -3.0..3.0f64, y in -3.0..3.0f64) {
        for p in [test1d(), test2d()] {
            let w: Vec<f64> = [x, y][..p.dim()].to_vec();
            prop_assert!(gradient_fd_error(&p, &w, 1e-4, 1e-3) < 1e-6);
        }
    }

    #[test]
    fn finite_sum_is_consistent(data in dataset(), w in prop::collection::vec(-1.0..1.0f64, 6)) {
        let d = data.dim;
        let w = &w[..d];
        let p = build_svm_problem(data, RobustLossParams::new(0.9, 1e-3)).unwrap();
        let n = p.f.components();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, g) in mean.iter_mut().zip(p.f.component_gradient(i, w)) {
                *m += g / n as f64;
            }
        }
        let full = p.f.gradient(w);
        prop_assert!(dist(&mean, &full) <= 1e-10 * (1.0 + full.iter().map(|x| x.abs()).sum::<f64>()));
        prop_assert!(gradient_fd_error(&p, w, 1e-4, 1e-3) < 1e-6);
    }

    #[test]
    fn variance_reduced_sample_is_exact_at_anchor(x in -3.0..3.0f64, y in -3.0..3.0f64, g in vec3(), u in prop::collection::vec(-0.5..0.5f64, 2)) {
        // at w = w̃ the perturbed terms cancel whatever u is
        let p = test2d();
        let w = vec![x, y];
        let anchor = VrAnchor { point: w.clone(), gradient: g[..2].to_vec(), delta: 0.7 };
        let v = vr_sample(&p, &w, &anchor, &u, true, None).unwrap();
        let hg = p.h.gradient(&w);
        for j in 0..2 {
            prop_assert!((v[j] - hg[j] - g[j]).abs() <= 1e-12 * (1.0 + g[j].abs() + hg[j].abs()));
        }
    }

    #[test]
    fn libsvm_round_trip(data in dataset()) {
        let text = data.to_libsvm();
        let back = parse_libsvm_str(&text, "prop", Some(data.dim)).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn csv_round_trip(objs in prop::collection::vec(-1e6..1e6f64, 1..8), deltas in prop::collection::vec(0.0..10.0f64, 8), trial in 0usize..50) {
        let passes: Vec<PassRecord> = objs
            .iter()
            .enumerate()
            .map(|(k, &o)| PassRecord { pass: k + 1, objective: o, delta: deltas[k], wall_ms: 0 })
            .collect();
        let trace = ConvergenceTrace {
            trial,
            seed: derive_seed(0, trial),
            passes: passes.clone(),
            final_point: vec![0.0],
            final_objective: *objs.last().unwrap(),
            inner_steps: 1,
            failure: None,
        };
        let result = ExperimentResult {
            algorithm: Algorithm::SvrgGoa,
            problem: "test1d".into(),
            traces: vec![trace],
            mean: passes.clone(),
            summary: None,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, Some("echo line"), &[result]).unwrap();
        let rows = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(rows.len(), 2 * passes.len());
        for (row, rec) in rows.iter().zip(passes.iter().chain(passes.iter())) {
            prop_assert_eq!(&row.record, rec);
            prop_assert_eq!(row.algorithm.as_str(), "svrg-goa");
        }
        prop_assert_eq!(rows[0].trial, Some(trial));
        prop_assert_eq!(rows[passes.len()].trial, None);
    }

    #[test]
    fn derived_seeds_differ(master in any::<u64>(), a in 0usize..10_000, b in 0usize..10_000) {
        prop_assume!(a != b);
        prop_assert_ne!(derive_seed(master, a), derive_seed(master, b));
    }
}
