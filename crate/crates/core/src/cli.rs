//! Command-line front end. `run` parses arguments, dispatches to the library, writes
//! artifacts with a manifest and returns the process exit code.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::decomp::Decomposition;
use crate::error::{HjbError, Result};
use crate::expect::{consistency_study, fmt17, ConsistencyReport, ConsistencySetup, Engine, EstimatorKind, TestFunction};
use crate::gridsolve::{convergence_study, solve_grid, Extrapolation, GridSpec};
use crate::maxplus::{solve_maxplus, MaxPlusValue, SamplePlan, TargetMode};
use crate::problem::{registry, ControlProblem};
use crate::schemes::{check_monotone, check_subhomogeneous, kappa_consistency, DeltaMode, Scheme, SchemeConfig, Variant};

pub const EXIT_OK: i32 = 0;
/// Runtime failure that is not a validation error.
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
/// A property the configuration guarantees was observed to fail.
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "hjb", version, about = "Monotone probabilistic schemes and max-plus solvers for HJB equations")]
struct Cli {
    /// Cap on worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Underlying/residual decomposition of every mode.
    Decompose {
        #[command(flatten)]
        problem: ProblemArg,
        /// Also print per-mode residual traces and the reconstruction error.
        #[arg(long)]
        report: bool,
    },
    /// Empirical consistency order of an estimator or of the full scheme residual.
    Consistency(ConsistencyArgs),
    /// Randomized monotonicity audit of a scheme.
    CheckMonotone(AuditArgs),
    /// Randomized additive subhomogeneity audit of a scheme.
    CheckSubhomogeneous(AuditArgs),
    /// Backward grid solve; CSV `t,x1..xd,v`.
    SolveGrid(GridArgs),
    /// Probabilistic max-plus solve; JSON list of quadratic forms per time.
    SolveMaxplus(MaxPlusArgs),
    /// Grid-solver error against the Riccati oracle over a list of step sizes.
    Convergence(ConvergenceArgs),
    /// Evaluates a stored max-plus value function.
    Eval {
        #[arg(long)]
        forms: PathBuf,
        #[arg(long)]
        t: f64,
        /// Comma-separated state.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
    },
    /// Names and descriptions of the built-in problems.
    ListProblems,
}

#[derive(Args, Debug, Clone)]
struct ProblemArg {
    /// Built-in name or path to a JSON configuration.
    #[arg(long, default_value = "lq1d")]
    problem: String,
}

#[derive(Args, Debug, Clone)]
struct SchemeArgs {
    #[arg(long, default_value = "new_upwind")]
    variant: String,
    /// Weight order; defaults to the smallest admissible one.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[arg(long, default_value = "lower_bounded")]
    delta_mode: String,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args, Debug, Clone)]
struct EngineArgs {
    #[arg(long, value_enum, default_value_t = EngineKind::Quad)]
    engine: EngineKind,
    /// Nodes per half-axis (quadrature) or sample count (Monte Carlo).
    #[arg(long)]
    nodes: Option<usize>,
    /// Seed of the Monte Carlo table.
    #[arg(long)]
    engine_seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EngineKind {
    Quad,
    Hermite,
    Mc,
    Analytic,
    Rademacher,
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a gnuplot script next to the CSV.
    #[arg(long)]
    emit_gnuplot: bool,
}

#[derive(Args, Debug)]
struct ConsistencyArgs {
    /// d0, d1, d2, ftw1, ftw2 or k (full scheme residual on --problem).
    #[arg(long)]
    estimator: String,
    #[arg(long, default_value = "sin_exp")]
    testfn: String,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.05,0.025,0.0125,0.00625")]
    h_list: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[command(flatten)]
    problem: ProblemArg,
    #[arg(long, default_value = "new_upwind")]
    variant: String,
    #[arg(long)]
    k: Option<u32>,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    xmin: f64,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    xmax: f64,
    /// Core points per axis.
    #[arg(long, default_value_t = 41)]
    nx: usize,
    #[arg(long, default_value = "linear")]
    extrapolation: String,
    /// Padding width overriding the automatic choice.
    #[arg(long)]
    pad: Option<f64>,
    #[arg(long)]
    allow_high_dim: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct MaxPlusArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[command(flatten)]
    scheme: SchemeArgs,
    #[arg(long, default_value_t = 500)]
    n_in: usize,
    #[arg(long, default_value_t = 25)]
    n_x: usize,
    #[arg(long, default_value_t = 25)]
    n_w: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// sampled, quadrature or per_sample.
    #[arg(long, default_value = "sampled")]
    targets: String,
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    init_lo: f64,
    #[arg(long, default_value_t = 1.5, allow_hyphen_values = true)]
    init_hi: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[command(flatten)]
    problem: ProblemArg,
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05,0.025")]
    h_list: Vec<f64>,
    #[arg(long, default_value = "riccati")]
    oracle: String,
    #[arg(long, default_value = "new_upwind")]
    variant: String,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
    xmin: f64,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    xmax: f64,
    /// Grid spacing as a multiple of h.
    #[arg(long, default_value_t = 1.0)]
    dx_ratio: f64,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    out: OutArgs,
}

/// Record written next to every output file.
#[derive(Serialize)]
struct RunManifest {
    command_line: Vec<String>,
    config_hash: String,
    seeds: Vec<u64>,
    version: &'static str,
    wall_time_s: f64,
    outputs: Vec<OutputDigest>,
}

#[derive(Serialize)]
struct OutputDigest {
    path: String,
    sha256: String,
}

/// Accumulates what a subcommand produced.
struct Run {
    args: Vec<String>,
    start: Instant,
    config: String,
    seeds: Vec<u64>,
    outputs: Vec<PathBuf>,
    stdout: String,
    code: i32,
}

impl Run {
    fn say(&mut self, line: impl AsRef<str>) {
        self.stdout.push_str(line.as_ref());
        self.stdout.push('\n');
    }

    fn write(&mut self, path: &Path, text: &str) -> Result<()> {
        std::fs::write(path, text)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn manifest(&self, primary: &Path) -> Result<()> {
        let outputs = self
            .outputs
            .iter()
            .map(|p| {
                Ok(OutputDigest {
                    path: p.display().to_string(),
                    sha256: hex(&Sha256::digest(std::fs::read(p)?)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = RunManifest {
            command_line: self.args.clone(),
            config_hash: hex(&Sha256::digest(self.config.as_bytes())),
            seeds: self.seeds.clone(),
            version: env!("CARGO_PKG_VERSION"),
            wall_time_s: self.start.elapsed().as_secs_f64(),
            outputs,
        };
        let mut path = primary.as_os_str().to_owned();
        path.push(".manifest.json");
        std::fs::write(PathBuf::from(path), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let mut run = Run {
        args,
        start: Instant::now(),
        config: String::new(),
        seeds: Vec::new(),
        outputs: Vec::new(),
        stdout: String::new(),
        code: EXIT_OK,
    };
    let result = match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| HjbError::Config(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| dispatch(cli.command, &mut run))),
        None => dispatch(cli.command, &mut run),
    };
    let _ = std::io::stdout().write_all(run.stdout.as_bytes());
    match result {
        Ok(()) => run.code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn dispatch(cmd: Command, run: &mut Run) -> Result<()> {
    match cmd {
        Command::Decompose { problem, report } => decompose(&problem, report, run),
        Command::Consistency(a) => consistency(a, run),
        Command::CheckMonotone(a) => audit(a, true, run),
        Command::CheckSubhomogeneous(a) => audit(a, false, run),
        Command::SolveGrid(a) => grid(a, run),
        Command::SolveMaxplus(a) => maxplus(a, run),
        Command::Convergence(a) => convergence(a, run),
        Command::Eval { forms, t, x } => {
            let v = MaxPlusValue::from_json(&std::fs::read_to_string(&forms)?)?;
            let x = parse_list(&x)?;
            run.say(format!("{:.16e}", v.eval(t, &x)?));
            Ok(())
        }
        Command::ListProblems => {
            for name in registry::BUILTIN_NAMES {
                run.say(format!("{name}\t{}", registry::describe(name).unwrap_or("")));
            }
            Ok(())
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| HjbError::Config(format!("'{p}' is not a number"))))
        .collect()
}

/// Loads a built-in by name or a JSON configuration by path, recording its canonical text.
fn load_problem(arg: &ProblemArg, run: &mut Run) -> Result<ControlProblem> {
    let prob = if registry::BUILTIN_NAMES.contains(&arg.problem.as_str()) {
        registry::builtin(&arg.problem)?
    } else if Path::new(&arg.problem).is_file() {
        ControlProblem::from_json(&std::fs::read_to_string(&arg.problem)?)?
    } else {
        return Err(HjbError::Config(format!(
            "'{}' is neither a built-in problem nor a readable file",
            arg.problem
        )));
    };
    run.config.push_str(&serde_json::to_string(prob.config())?);
    Ok(prob)
}

/// Explicit flag, then `HJB_SEED`, then the problem's seed, then 0.
fn resolve_seed(flag: Option<u64>, prob: Option<&ControlProblem>, run: &mut Run) -> Result<u64> {
    let seed = match flag {
        Some(s) => s,
        None => match std::env::var("HJB_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| HjbError::Config(format!("HJB_SEED='{v}' is not an unsigned integer")))?,
            Err(_) => prob.and_then(|p| p.config().seed).unwrap_or(0),
        },
    };
    run.seeds.push(seed);
    Ok(seed)
}

fn engine(a: &EngineArgs, run: &mut Run) -> Result<Engine> {
    Ok(match a.engine {
        EngineKind::Quad => Engine::Quadrature {
            nodes_per_dim: a.nodes.unwrap_or(7),
            split: true,
        },
        EngineKind::Hermite => Engine::Quadrature {
            nodes_per_dim: a.nodes.unwrap_or(20),
            split: false,
        },
        EngineKind::Mc => {
            let seed = resolve_seed(a.engine_seed, None, run)?;
            Engine::MonteCarlo {
                samples: a.nodes.unwrap_or(100_000),
                seed,
            }
        }
        EngineKind::Analytic => Engine::Analytic,
        EngineKind::Rademacher => Engine::Rademacher,
    })
}

fn scheme_config(variant: &str, k: Option<u32>, h: f64, delta_mode: &str, decomp: &Decomposition) -> Result<SchemeConfig> {
    Ok(SchemeConfig {
        delta_mode: delta_mode.parse::<DeltaMode>()?,
        ..SchemeConfig::new(variant.parse::<Variant>()?, k.unwrap_or_else(|| decomp.min_k()), h)
    })
}

fn build_scheme(prob: &ControlProblem, decomp: &Decomposition, a: &SchemeArgs, run: &mut Run) -> Result<Scheme> {
    let cfg = scheme_config(&a.variant, a.k, a.h, &a.delta_mode, decomp)?;
    let engine = engine(&a.engine, run)?;
    Scheme::new(prob, decomp, cfg, &engine)
}

fn decompose(p: &ProblemArg, report: bool, run: &mut Run) -> Result<()> {
    let prob = load_problem(p, run)?;
    let d = Decomposition::from_problem(&prob)?;
    run.say("mode\tname\tclass\trank\ttr(SS^T)");
    for m in 0..d.num_modes() {
        run.say(format!(
            "{m}\t{}\t{}\t{}\t{:.16e}",
            prob.mode(m).name,
            d.projection()[m],
            d.rank(m),
            d.residual_trace(m)
        ));
    }
    run.say(format!("a_bar\t{:.16e}", d.a_bar()));
    run.say(format!("min_k\t{}", d.min_k()));
    if report {
        run.say(format!("reconstruction_error\t{:.16e}", d.reconstruction_error(&prob)));
        for m in 0..d.num_modes() {
            let s = d.sigma_under(m);
            run.say(format!("sigma_under[{m}]\t{:?}", crate::linalg::matrix_to_row_major(s)));
        }
    }
    Ok(())
}

/// `n` points per axis over the problem's audit window.
fn window_points(prob: &ControlProblem, n: usize) -> Vec<Vec<f64>> {
    let w = prob.audit_window();
    let axis: Vec<f64> = (0..n).map(|i| w.lo + (w.hi - w.lo) * i as f64 / (n - 1) as f64).collect();
    let mut pts = vec![Vec::new()];
    for _ in 0..prob.dim() {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |a| {
                    let mut q = p.clone();
                    q.push(*a);
                    q
                })
            })
            .collect();
    }
    pts
}

fn consistency(a: ConsistencyArgs, run: &mut Run) -> Result<()> {
    let testfn = TestFunction::parse(&a.testfn)?;
    let engine = engine(&a.engine, run)?;
    let report: ConsistencyReport = if a.estimator == "k" {
        let prob = load_problem(&a.problem, run)?;
        let decomp = Decomposition::from_problem(&prob)?;
        let cfg = scheme_config(&a.variant, a.k, a.h_list[0], "lower_bounded", &decomp)?;
        let n = if prob.dim() == 1 { 17 } else { 9 };
        kappa_consistency(&prob, &decomp, &cfg, &engine, testfn, 0.2, &window_points(&prob, n), &a.h_list)?
    } else {
        let kind = EstimatorKind::parse(&a.estimator)?;
        let setup = ConsistencySetup {
            k: a.k.unwrap_or(0),
            ..ConsistencySetup::standard(a.dim)
        };
        consistency_study(kind, &setup, testfn, &engine, &a.h_list)?
    };
    for r in &report.rows {
        run.say(format!("h={:.16e} error={:.16e}", r.h, r.error));
    }
    run.say(format!("p_hat={:.16e}", report.p_hat));
    emit_csv(&a.out, &report.to_csv(), "h", "error", run)
}

fn emit_csv(out: &OutArgs, csv: &str, xcol: &str, ycol: &str, run: &mut Run) -> Result<()> {
    let Some(path) = &out.out else {
        return Ok(());
    };
    run.write(path, csv)?;
    if out.emit_gnuplot {
        let mut gp = path.as_os_str().to_owned();
        gp.push(".gp");
        let script = format!(
            "set datafile separator ','\nset key autotitle columnhead\nset logscale xy\nset xlabel '{xcol}'\nset ylabel '{ycol}'\nplot '{}' using '{xcol}':'{ycol}' with linespoints\n",
            path.display()
        );
        run.write(Path::new(&gp), &script)?;
    }
    run.manifest(path)
}

fn audit(a: AuditArgs, monotone: bool, run: &mut Run) -> Result<()> {
    let prob = load_problem(&a.problem, run)?;
    let decomp = Decomposition::from_problem(&prob)?;
    let scheme = build_scheme(&prob, &decomp, &a.scheme, run)?;
    let seed = resolve_seed(a.seed, Some(&prob), run)?;
    let guaranteed = scheme.monotone_guaranteed();
    let (csv, failed) = if monotone {
        let r = check_monotone(&scheme, a.trials, seed)?;
        run.say(format!("{} violations", r.total_violations()));
        run.say(format!("worst_margin={:.16e}", r.worst_margin));
        run.say(format!("min_node_weight={:.16e}", r.min_node_weight));
        run.say(format!("guaranteed={}", r.guaranteed));
        (
            format!(
                "variant,trials,violations,probe_trials,probe_violations,worst_margin,min_node_weight,guaranteed\n{},{},{},{},{},{},{},{}\n",
                r.variant,
                r.trials,
                r.violations,
                r.probe_trials,
                r.probe_violations,
                fmt17(r.worst_margin),
                fmt17(r.min_node_weight),
                r.guaranteed
            ),
            r.total_violations() > 0,
        )
    } else {
        let r = check_subhomogeneous(&scheme, a.trials, seed)?;
        let total = r.violations + r.passthrough_violations;
        run.say(format!("{total} violations"));
        run.say(format!("alpha={:.16e}", r.alpha));
        run.say(format!("worst_excess={:.16e}", r.worst_excess));
        run.say(format!("passthrough_checked={}", r.passthrough_checked));
        (
            format!(
                "trials,alpha,violations,worst_excess,passthrough_checked,passthrough_violations\n{},{},{},{},{},{}\n",
                r.trials,
                fmt17(r.alpha),
                r.violations,
                fmt17(r.worst_excess),
                r.passthrough_checked,
                r.passthrough_violations
            ),
            total > 0,
        )
    };
    if failed && guaranteed {
        run.code = EXIT_INVARIANT;
    }
    emit_csv(&a.out, &csv, "trials", "violations", run)
}

fn grid(a: GridArgs, run: &mut Run) -> Result<()> {
    let prob = load_problem(&a.problem, run)?;
    let decomp = Decomposition::from_problem(&prob)?;
    let scheme = build_scheme(&prob, &decomp, &a.scheme, run)?;
    let d = prob.dim();
    let spec = GridSpec {
        extrapolation: a.extrapolation.parse::<Extrapolation>()?,
        pad: a.pad,
        allow_high_dim: a.allow_high_dim,
        ..GridSpec::cube(d, a.xmin, a.xmax, a.nx)
    };
    let vg = solve_grid(&scheme, &spec)?;
    for w in vg.warnings() {
        eprintln!("warning: {w}");
    }
    run.say(format!("nodes={} pad={:.16e} steps={}", vg.grid().len(), vg.pad(), vg.times().len() - 1));
    let origin = vec![0.5 * (a.xmin + a.xmax); d];
    run.say(format!("v(0,center)={:.16e}", vg.eval(0.0, &origin)?));
    emit_csv(&a.out, &vg.to_csv(), "x1", "v", run)
}

fn maxplus(a: MaxPlusArgs, run: &mut Run) -> Result<()> {
    let prob = load_problem(&a.problem, run)?;
    let decomp = Decomposition::from_problem(&prob)?;
    let scheme = build_scheme(&prob, &decomp, &a.scheme, run)?;
    let seed = resolve_seed(a.seed, Some(&prob), run)?;
    let plan = SamplePlan {
        target: a.targets.parse::<TargetMode>()?,
        init_lo: a.init_lo,
        init_hi: a.init_hi,
        ..SamplePlan::new(a.n_in, a.n_x, a.n_w, seed)
    };
    let v = solve_maxplus(&scheme, &plan)?;
    for w in &v.warnings {
        eprintln!("warning: {w}");
    }
    let bound = decomp.classes().len() * plan.n_in;
    let nsd = v.layers.iter().all(|l| l.forms.iter().all(|f| f.largest_eigenvalue() <= crate::maxplus::NSD_TOL));
    if v.max_forms() > bound || !nsd {
        run.code = EXIT_INVARIANT;
    }
    run.say(format!("layers={} max_forms={} bound={bound}", v.layers.len(), v.max_forms()));
    run.say(format!("max_rms={:.16e}", v.layers.iter().map(|l| l.max_rms).fold(0.0, f64::max)));
    run.say(format!("epsilon={:.16e}", v.epsilon));
    run.say(format!("v(0,0)={:.16e}", v.eval(0.0, &vec![0.0; prob.dim()])?));
    if let Some(path) = &a.out {
        run.write(path, &v.to_json()?)?;
        run.manifest(path)?;
    }
    Ok(())
}

fn convergence(a: ConvergenceArgs, run: &mut Run) -> Result<()> {
    if a.oracle != "riccati" {
        return Err(HjbError::UnsupportedOracle(a.oracle));
    }
    let prob = load_problem(&a.problem, run)?;
    let decomp = Decomposition::from_problem(&prob)?;
    let cfg = scheme_config(&a.variant, a.k, a.h_list[0], "lower_bounded", &decomp)?;
    let engine = engine(&a.engine, run)?;
    let report = convergence_study(&prob, &decomp, &cfg, &engine, (a.xmin, a.xmax), a.dx_ratio, &a.h_list)?;
    for r in &report.rows {
        run.say(format!("h={:.16e} n={} sup_error={:.16e}", r.h, r.n, r.sup_error));
    }
    run.say(format!("p_hat={:.16e}", report.p_hat));
    if !report.strictly_decreasing() {
        eprintln!("warning: sup error is not strictly decreasing in h");
    }
    emit_csv(&a.out, &report.to_csv(), "h", "sup_error", run)
}
