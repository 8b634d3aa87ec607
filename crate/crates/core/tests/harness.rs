use goa_core::goa::EpochBudget;
use goa_core::harness::{compare, read_csv, run_experiment, write_csv, Reference, CSV_HEADER};
use goa_core::problems::test2d;
use goa_core::{Algorithm, ConvexSet, ExperimentConfig, GoaConfig};

fn small_config(algorithm: Algorithm, trials: usize) -> ExperimentConfig {
    let goa = GoaConfig { stages: Some(3), budget: EpochBudget::Fixed(2), inner_iters: Some(50), ..GoaConfig::default() };
    let mut cfg = ExperimentConfig::new(algorithm, goa, ConvexSet::ball(vec![0.0; 2], 3.0).unwrap());
    cfg.trials = trials;
    cfg.master_seed = 5;
    cfg
}

fn csv_bytes(cfg: &ExperimentConfig) -> Vec<u8> {
    let res = run_experiment(&test2d(), cfg).unwrap();
    let mut buf = Vec::new();
    write_csv(&mut buf, None, &[res]).unwrap();
    buf
}

#[test]
fn single_trial_replays_bit_identically() {
    let cfg = small_config(Algorithm::SvrgGoa, 1);
    assert_eq!(csv_bytes(&cfg), csv_bytes(&cfg));
}

#[test]
fn parallel_trials_do_not_change_results() {
    // trial k sees the same seed whether it runs alone or among others
    let many = run_experiment(&test2d(), &small_config(Algorithm::SvrgGoa, 6)).unwrap();
    let one = run_experiment(&test2d(), &small_config(Algorithm::SvrgGoa, 1)).unwrap();
    assert_eq!(many.traces[0].passes, one.traces[0].passes);
}

#[test]
fn two_trials_three_passes_give_nine_rows() {
    let mut cfg = small_config(Algorithm::SvrgGoa, 2);
    cfg.goa.stages = Some(3);
    cfg.goa.budget = EpochBudget::Fixed(1);
    let text = String::from_utf8(csv_bytes(&cfg)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 1 + 6 + 3);
    assert_eq!(lines.iter().filter(|l| l.contains(",mean,")).count(), 3);
}

#[test]
fn reloaded_csv_reproduces_the_mean() {
    let cfg = small_config(Algorithm::SvrgGoa, 5);
    let rows = read_csv(csv_bytes(&cfg).as_slice()).unwrap();
    let (trials, means): (Vec<_>, Vec<_>) = rows.iter().partition(|r| r.trial.is_some());
    for m in means {
        let at: Vec<f64> =
            trials.iter().filter(|r| r.record.pass == m.record.pass).map(|r| r.record.objective).collect();
        let avg = at.iter().sum::<f64>() / at.len() as f64;
        assert!((avg - m.record.objective).abs() <= 1e-15 * avg.abs().max(1.0), "pass {}", m.record.pass);
    }
}

#[test]
fn compare_matches_inner_step_budgets() {
    let base = small_config(Algorithm::SvrgGoa, 2);
    let res = compare(&test2d(), &base, &Algorithm::ALL).unwrap();
    let steps: Vec<usize> = res.iter().map(|r| r.traces[0].inner_steps).collect();
    assert!(steps.iter().all(|&s| s == steps[0]), "{steps:?}");
    let passes: Vec<usize> = res.iter().map(|r| r.mean.len()).collect();
    assert!(passes.iter().all(|&p| p == 6), "{passes:?}");
}

#[test]
fn compare_rejects_rate_budgets() {
    let mut base = small_config(Algorithm::SvrgGoa, 1);
    base.goa.budget = EpochBudget::default();
    assert!(compare(&test2d(), &base, &Algorithm::ALL).is_err());
}

#[test]
fn success_rate_is_a_fraction() {
    let p = test2d();
    let o = p.optimum.clone().unwrap();
    let mut cfg = small_config(Algorithm::GradOpt, 4);
    cfg.reference = Some(Reference { point: Some(o.point), value: o.value });
    let s = run_experiment(&p, &cfg).unwrap().summary.unwrap();
    assert_eq!(s.trials, 4);
    assert!(s.successes <= 4 && (0.0..=1.0).contains(&s.rate));
    assert_eq!(s.rate, s.successes as f64 / 4.0);
}
