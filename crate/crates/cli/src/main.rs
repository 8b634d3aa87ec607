use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use goa_core::datasets::FileFormat;
use goa_core::goa::{EpochBudget, GapEstimate};
use goa_core::harness::{
    compare, load_problem, reference_optimum, run_experiment, write_csv, ExperimentResult, ProblemOptions,
    Reference, SuccessRule,
};
use goa_core::problems::{global_min_oracle, TEST_BOX};
use goa_core::validate::run_invariant_suite;
use goa_core::{
    Algorithm, AnchorMode, CompositeProblem, ConvexSet, ExperimentConfig, GoaConfig, GoaError, OutputRule, Result,
};

#[derive(Parser, Debug)]
#[command(name = "goa", version, about = "Graduated optimization with variance-reduced inner solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one algorithm for several seeded trials and write a CSV trace
    Run(RunArgs),
    /// Brute-force grid minimum of a 1-D or 2-D problem
    Oracle(OracleArgs),
    /// Run several algorithms under one inner-step budget
    Compare(CompareArgs),
    /// Run the invariant suite
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AnchorArg {
    Mc,
    Point,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Libsvm,
    Dense,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GapArg {
    Current,
    Initial,
}

#[derive(Args, Debug, Clone)]
struct ProblemArgs {
    /// test1d, test2d, or a dataset name such as "breast cancer"
    #[arg(long)]
    problem: String,
    /// dataset file (libsvm format unless --format dense)
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "libsvm")]
    format: FormatArg,
    /// divide each feature column by its largest absolute value
    #[arg(long)]
    scale: bool,
    /// sharpness p of the robust loss
    #[arg(long, default_value_t = 10.0)]
    p: f64,
    /// override the regularization λ
    #[arg(long)]
    lambda: Option<f64>,
    /// override the truncation τ
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 0.2)]
    eta: f64,
    /// shrink factor of the smoothing radius
    #[arg(long, default_value_t = 0.9)]
    c: f64,
    /// initial smoothing radius; defaults to the diameter of C
    #[arg(long)]
    delta0: Option<f64>,
    /// target accuracy; sets the stage count to ceil(sqrt(1/epsilon))
    #[arg(long, default_value_t = 1e-2)]
    epsilon: f64,
    /// inner iterations per epoch; defaults to n for datasets, 100 L/sigma otherwise
    #[arg(long = "T")]
    t: Option<usize>,
    /// override the stage count
    #[arg(long)]
    stages: Option<usize>,
    /// fixed epochs per stage instead of the rate-derived count
    #[arg(long)]
    epochs: Option<usize>,
    /// strong-convexity constant; defaults to the modulus of h
    #[arg(long)]
    sigma: Option<f64>,
    /// smoothness constant used in the rate formulas
    #[arg(long = "L", default_value_t = 1.0)]
    l: f64,
    /// lower bound on the optimum used to size epochs
    #[arg(long, default_value_t = 0.0)]
    lower_bound: f64,
    /// cap on rate-derived epochs per stage
    #[arg(long, default_value_t = 100)]
    epoch_cap: usize,
    #[arg(long, value_enum, default_value = "current")]
    gap: GapArg,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, value_enum, default_value = "point")]
    anchor: AnchorArg,
    #[arg(long, default_value_t = 100)]
    mc_samples: usize,
    /// random-k, last, average or suffix-average
    #[arg(long, default_value = "random-k")]
    output_rule: String,
    /// use full gradients even when the problem is a finite sum
    #[arg(long)]
    full_gradient: bool,
    /// radius of the decision set C = ball(0, R)
    #[arg(long, default_value_t = 10.0)]
    radius: f64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// reference optimum value for success counting
    #[arg(long)]
    fstar: Option<f64>,
    /// success threshold on |F - F*|; default 1e-3 max(1, |F*|)
    #[arg(long)]
    threshold: Option<f64>,
    /// count success by distance to the reference point instead of value
    #[arg(long)]
    success_radius: Option<f64>,
    /// record wall-clock milliseconds (makes CSVs machine-dependent)
    #[arg(long)]
    wall_time: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value = "svrg-goa")]
    algo: String,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// comma-separated algorithm list
    #[arg(long, default_value = "svrg-goa,psvrg-goa,gradopt,ncvx-prox-svrg")]
    algos: String,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    problem: String,
    /// grid points per dimension
    #[arg(long, default_value_t = 10_001)]
    grid: usize,
    /// half-width of the search box [-R, R]^d
    #[arg(long, default_value_t = TEST_BOX.1)]
    radius: f64,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// optional dataset to include in the gradient and finite-sum checks
    #[arg(long)]
    data: Option<PathBuf>,
    /// registry name of --data
    #[arg(long, default_value = "breast cancer")]
    problem: String,
}

fn problem_from(args: &ProblemArgs) -> Result<CompositeProblem> {
    let opts = ProblemOptions {
        data: args.data.clone(),
        format: match args.format {
            FormatArg::Libsvm => FileFormat::Libsvm,
            FormatArg::Dense => FileFormat::Dense,
        },
        scale: args.scale,
        sharpness: args.p,
        lambda: args.lambda,
        tau: args.tau,
    };
    load_problem(&args.problem, &opts)
}

fn experiment_from(problem: &CompositeProblem, algorithm: Algorithm, s: &SolverArgs) -> Result<ExperimentConfig> {
    let output: OutputRule = s.output_rule.parse()?;
    let finite_sum = problem.is_finite_sum() && !s.full_gradient;
    let inner_iters = s.t.or(finite_sum.then(|| problem.f.components()));
    let budget = match s.epochs {
        Some(e) => EpochBudget::Fixed(e),
        None => EpochBudget::Rate {
            lower_bound: s.lower_bound,
            cap: s.epoch_cap,
            gap: match s.gap {
                GapArg::Current => GapEstimate::Current,
                GapArg::Initial => GapEstimate::Initial,
            },
        },
    };
    let goa = GoaConfig {
        epsilon: s.epsilon,
        shrink: s.c,
        eta: s.eta,
        inner_iters,
        stages: s.stages,
        sigma: s.sigma.unwrap_or_else(|| problem.modulus()),
        rate_smoothness: s.l,
        initial_delta: s.delta0,
        anchor: match s.anchor {
            AnchorArg::Point => AnchorMode::PointApprox,
            AnchorArg::Mc => AnchorMode::MonteCarlo { samples: s.mc_samples },
        },
        batch: s.batch,
        output,
        finite_sum,
        budget,
        wall_time: s.wall_time,
        ..GoaConfig::default()
    };
    if !(s.radius > 0.0) {
        return Err(GoaError::Usage("--radius must be positive".into()));
    }
    let set = ConvexSet::ball(vec![0.0; problem.dim()], s.radius)?;
    let mut cfg = ExperimentConfig::new(algorithm, goa, set);
    cfg.trials = s.trials;
    cfg.master_seed = s.seed;
    cfg.success = match s.success_radius {
        Some(r) => SuccessRule::Distance(r),
        None => SuccessRule::Value(s.threshold),
    };
    Ok(cfg)
}

/// The reference optimum: `--fstar`, the problem's known optimum, or a
/// multistart search. Computed only after the configuration validated.
fn attach_reference(problem: &CompositeProblem, cfg: &mut ExperimentConfig, s: &SolverArgs) -> Result<()> {
    cfg.reference = match (s.fstar, &problem.optimum) {
        (Some(v), _) => Some(Reference { point: None, value: v }),
        (None, Some(_)) => None,
        (None, None) => Some(reference_optimum(problem, &cfg.set, s.seed)?),
    };
    Ok(())
}

fn config_echo(argv: &[String], cfg: &ExperimentConfig) -> String {
    format!(
        "goa {}\nconfig: trials={} seed={} set={:?} {:?}",
        argv[1..].join(" "),
        cfg.trials,
        cfg.master_seed,
        cfg.set,
        cfg.goa
    )
}

fn report(results: &[ExperimentResult]) {
    for r in results {
        let failed = r.traces.iter().filter(|t| t.failure.is_some()).count();
        print!(
            "{} on {}: mean final F = {:.10}, passes = {}",
            r.algorithm,
            r.problem,
            r.mean_final(),
            r.mean.len()
        );
        if let Some(s) = &r.summary {
            print!(", success {}/{} (threshold {:.3e})", s.successes, s.trials, s.threshold);
        }
        if failed > 0 {
            print!(", {failed} failed trials");
        }
        println!();
    }
}

/// Every trial diverging is a numerical failure of the whole command.
fn check_failures(results: &[ExperimentResult]) -> Result<()> {
    for r in results {
        if r.traces.iter().all(|t| t.failure.is_some()) {
            return Err(GoaError::Numerical {
                message: format!("all {} trials of {} failed", r.traces.len(), r.algorithm),
                residual: f64::NAN,
            });
        }
    }
    Ok(())
}

fn emit(path: &Option<PathBuf>, comment: &str, results: &[ExperimentResult]) -> Result<()> {
    if let Some(p) = path {
        let file = File::create(p)?;
        write_csv(BufWriter::new(file), Some(comment), results)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_run(args: &RunArgs, argv: &[String]) -> Result<()> {
    let algorithm: Algorithm = args.algo.parse()?;
    let problem = problem_from(&args.problem)?;
    let mut cfg = experiment_from(&problem, algorithm, &args.solver)?;
    cfg.validate(&problem)?;
    attach_reference(&problem, &mut cfg, &args.solver)?;
    let result = run_experiment(&problem, &cfg)?;
    let results = [result];
    report(&results);
    emit(&args.solver.out, &config_echo(argv, &cfg), &results)?;
    check_failures(&results)
}

fn cmd_compare(args: &CompareArgs, argv: &[String]) -> Result<()> {
    let algorithms = args
        .algos
        .split(',')
        .map(|a| a.trim().parse())
        .collect::<Result<Vec<Algorithm>>>()?;
    let problem = problem_from(&args.problem)?;
    let mut solver = args.solver.clone();
    // one budget for everyone requires a fixed per-stage epoch count
    solver.epochs = solver.epochs.or(Some(3));
    let mut cfg = experiment_from(&problem, algorithms[0], &solver)?;
    for &a in &algorithms {
        ExperimentConfig { algorithm: a, ..cfg.clone() }.validate(&problem)?;
    }
    attach_reference(&problem, &mut cfg, &solver)?;
    let results = compare(&problem, &cfg, &algorithms)?;
    report(&results);
    emit(&solver.out, &config_echo(argv, &cfg), &results)?;
    check_failures(&results)
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let problem = problem_from(&ProblemArgs {
        problem: args.problem.clone(),
        data: None,
        format: FormatArg::Libsvm,
        scale: false,
        p: 10.0,
        lambda: None,
        tau: None,
    })?;
    let d = problem.dim();
    let lo = vec![-args.radius; d];
    let hi = vec![args.radius; d];
    let (w, v) = global_min_oracle(&problem, &lo, &hi, args.grid)?;
    let coords: Vec<String> = w.iter().map(|x| format!("{x:.17e}")).collect();
    println!("w* = ({})", coords.join(", "));
    println!("F* = {v:.17e}");
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<bool> {
    let extra = match &args.data {
        Some(path) => vec![load_problem(
            &args.problem,
            &ProblemOptions {
                data: Some(path.clone()),
                ..ProblemOptions::default()
            },
        )?],
        None => Vec::new(),
    };
    let results = run_invariant_suite(args.seed, &extra);
    let mut stdout = std::io::stdout().lock();
    for r in &results {
        writeln!(stdout, "{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail)?;
    }
    Ok(results.iter().all(|r| r.passed))
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a, &argv),
        Command::Compare(a) => cmd_compare(a, &argv),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Validate(a) => cmd_validate(a).and_then(|ok| {
            if ok {
                Ok(())
            } else {
                Err(GoaError::Numerical {
                    message: "invariant suite reported failures".into(),
                    residual: f64::NAN,
                })
            }
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
