use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bmcumulant::approx::{approximate, ApproxFamily};
use bmcumulant::decimation::{elimination_order, Structure};
use bmcumulant::estimators::{estimate_moments, MomentConfig, MomentEstimate, MomentMethod};
use bmcumulant::exact::{self, DEFAULT_ENUMERATION_CAP};
use bmcumulant::experiment::{self, csv_writer, finish_csv, format_sig, ExperimentConfig};
use bmcumulant::format;
use bmcumulant::learning::{self, BatchMode, FreeStatistics, LearningConfig};
use bmcumulant::meanfield::{self, Criterion, Init, Schedule, SolverConfig};
use bmcumulant::model::{random_model, PatternSet, Topology};
use bmcumulant::Error;

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NONCONVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "bmcumulant", version, about = "Cumulant expansions for Boltzmann machine normalizing constants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random model with Normal(0, sigma^2) biases and couplings.
    Gen(GenArgs),
    /// Exact log Z and means by enumeration.
    Exact(ExactArgs),
    /// Fit a tractable model and expand log Z to first or second order.
    Mf(MfArgs),
    /// Estimate means and pair moments.
    Moments(MomentsArgs),
    /// Train a visible/hidden machine on a pattern set and write its bound trace.
    Learn(LearnArgs),
    /// Sweep random models and score first- and second-order estimates.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Full,
    Chain,
    Custom,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long, value_enum, default_value = "full")]
    topology: TopologyArg,
    /// Edge list for `--topology custom`, as a model or structure file.
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExactArgs {
    model: PathBuf,
    /// Largest model to enumerate.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Bound,
    Tap,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Sync,
    Async,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Default,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Factorised,
    Decimatable,
}

#[derive(clap::Args)]
struct SolverArgs {
    #[arg(long, value_enum)]
    updates: Option<ScheduleArg>,
    #[arg(long, default_value_t = 1.0)]
    damping: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, value_enum, default_value = "default")]
    init: InitArg,
    /// Seed for `--init random` and for extra restarts.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Exit with status 4 when a fixed point is not reached.
    #[arg(long)]
    strict: bool,
}

impl SolverArgs {
    fn config(&self, default_schedule: Schedule) -> SolverConfig {
        SolverConfig {
            schedule: match self.updates {
                Some(ScheduleArg::Sync) => Schedule::Sync,
                Some(ScheduleArg::Async) => Schedule::Async,
                None => default_schedule,
            },
            damping: self.damping,
            tol: self.tol,
            max_iter: self.max_iter,
            init: match self.init {
                InitArg::Default => Init::Bias,
                InitArg::Random => Init::Random { seed: self.init_seed },
            },
            restarts: self.restarts,
            ..SolverConfig::default()
        }
    }
}

#[derive(clap::Args)]
struct FamilyArgs {
    #[arg(long, value_enum, default_value = "factorised")]
    approx: FamilyArg,
    /// Structure file for `--approx decimatable`; a chain when omitted.
    #[arg(long)]
    structure: Option<PathBuf>,
}

impl FamilyArgs {
    fn family(&self, n: usize) -> Result<ApproxFamily, CliError> {
        match self.approx {
            FamilyArg::Factorised => Ok(ApproxFamily::Factorised),
            FamilyArg::Decimatable => {
                let s = match &self.structure {
                    Some(p) => {
                        let s = format::read_structure(p).map_err(|e| CliError::input(p, e))?;
                        if s.n() != n {
                            return Err(CliError::Usage(format!(
                                "--structure {} has {} nodes, expected {n}",
                                p.display(),
                                s.n()
                            )));
                        }
                        s
                    }
                    None => Structure::chain(n),
                };
                elimination_order(&s).map_err(|e| CliError::Usage(format!("--structure: {e}")))?;
                Ok(ApproxFamily::Decimatable(s))
            }
        }
    }
}

#[derive(clap::Args)]
struct MfArgs {
    model: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=2))]
    order: u32,
    #[arg(long, value_enum, default_value = "bound")]
    criterion: CriterionArg,
    #[command(flatten)]
    family: FamilyArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Variational,
    Ratio1,
    Ratio2,
    All,
}

#[derive(clap::Args)]
struct MomentsArgs {
    model: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    method: MethodArg,
    /// Clip estimates to [0, 1]; flags still mark the raw values.
    #[arg(long)]
    clamp_physical: bool,
    /// Start each clamped fit from the full model's fit.
    #[arg(long)]
    warm_start: bool,
    #[command(flatten)]
    family: FamilyArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FreeStatsArg {
    Factorised,
    Ratio2,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Batch,
    PerPattern,
}

#[derive(clap::Args)]
struct LearnArgs {
    #[arg(long, default_value_t = 4)]
    visible: usize,
    #[arg(long, default_value_t = 3)]
    hidden: usize,
    /// Pattern file; random patterns are drawn when omitted.
    #[arg(long)]
    patterns: Option<PathBuf>,
    /// Number of random patterns.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// On-probability of random pattern entries.
    #[arg(long, default_value_t = 0.4)]
    p_on: f64,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 200)]
    updates: usize,
    #[arg(long, value_enum, default_value = "factorised")]
    free_stats: FreeStatsArg,
    #[arg(long, value_enum, default_value = "batch")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0.1)]
    init_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trace CSV; stdout when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the trained model.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long, default_value_t = 550)]
    trials: usize,
    #[arg(long, default_value_t = 8)]
    nodes: usize,
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(short, long)]
    output: PathBuf,
    /// SVG histograms of the relative errors and their paired difference.
    #[arg(long)]
    hist: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    bins: usize,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_enum)]
    updates: Option<ScheduleArg>,
    #[arg(long, default_value_t = 1.0)]
    damping: f64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Input(String),
    NotConverged(String),
    Other(String),
}

impl CliError {
    fn input(path: &Path, e: Error) -> Self {
        match e {
            Error::Parse { .. } => CliError::Input(format!("{}: {e}", path.display())),
            Error::Io(_) => CliError::Input(format!("{}: {e}", path.display())),
            other => CliError::Input(format!("{}: {other}", path.display())),
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::NotConverged(_) => EXIT_NONCONVERGED,
            CliError::Other(_) => EXIT_OTHER,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::NotConverged(m) | CliError::Other(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::TooLarge { .. } | Error::NotDecimatable { .. } => {
                CliError::Usage(e.to_string())
            }
            Error::Parse { .. } => CliError::Input(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

fn g(x: f64) -> String {
    format_sig(x, 12)
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Other(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_model(path: &Path) -> Result<format::ModelFile, CliError> {
    format::read_model(path).map_err(|e| CliError::input(path, e))
}

fn cmd_gen(a: &GenArgs) -> Result<(), CliError> {
    if a.nodes == 0 {
        return Err(CliError::Usage("--nodes must be >= 1".into()));
    }
    let topology = match a.topology {
        TopologyArg::Full => Topology::Full,
        TopologyArg::Chain => Topology::Chain,
        TopologyArg::Custom => {
            let p = a
                .edges
                .as_ref()
                .ok_or_else(|| CliError::Usage("--topology custom needs --edges FILE".into()))?;
            let s = format::read_structure(p).map_err(|e| CliError::input(p, e))?;
            if s.n() != a.nodes {
                return Err(CliError::Usage(format!(
                    "--edges {} has {} nodes, --nodes is {}",
                    p.display(),
                    s.n(),
                    a.nodes
                )));
            }
            Topology::Custom(s.edges().to_vec())
        }
    };
    let model = random_model(a.nodes, &topology, a.sigma, a.seed)?;
    emit(a.output.as_deref(), &format::write_model(&model))
}

fn cmd_exact(a: &ExactArgs) -> Result<(), CliError> {
    let file = read_model(&a.model)?;
    let s = exact::enumerate_with_cap(&file.model, a.cap)?;
    let mut out = format!("log_z {}\n", g(s.log_z));
    for (i, m) in s.means.iter().enumerate() {
        let _ = writeln!(out, "mean {i} {}", g(*m));
    }
    emit(None, &out)
}

fn cmd_mf(a: &MfArgs) -> Result<(), CliError> {
    let model = read_model(&a.model)?.model;
    let cfg = a.solver.config(Schedule::Sync);
    cfg.validate()?;
    let mut out = String::new();
    let converged = match (a.criterion, a.family.family(model.n())?) {
        (CriterionArg::Tap, ApproxFamily::Decimatable(_)) => {
            return Err(CliError::Usage("--criterion tap needs --approx factorised".into()));
        }
        (CriterionArg::Tap, ApproxFamily::Factorised) => {
            let report = meanfield::solve(&model, Criterion::Tap, &cfg)?;
            let est = meanfield::second_order_bound_criterion(&model, &report.params)?;
            let _ = writeln!(out, "converged {}\niterations {}", report.converged, report.iterations);
            let _ = writeln!(out, "first_order {}", g(est.log_z0 + est.term1));
            if a.order == 2 {
                let _ = writeln!(out, "correction {}\ntotal {}", g(est.term2), g(est.total));
            }
            for (i, m) in report.params.means().iter().enumerate() {
                let _ = writeln!(out, "mean {i} {}", g(*m));
            }
            report.converged
        }
        (CriterionArg::Bound, family) => {
            let ap = approximate(&model, &family, &cfg)?;
            let _ = writeln!(out, "converged {}\niterations {}", ap.converged, ap.iterations);
            let _ = writeln!(out, "first_order {}", g(ap.first));
            if a.order == 2 {
                let _ = writeln!(out, "correction {}\ntotal {}", g(ap.second - ap.first), g(ap.second));
            }
            for (i, m) in ap.means.iter().enumerate() {
                let _ = writeln!(out, "mean {i} {}", g(*m));
            }
            ap.converged
        }
    };
    emit(None, &out)?;
    if a.solver.strict && !converged {
        return Err(CliError::NotConverged("fixed point not reached".into()));
    }
    Ok(())
}

fn cmd_moments(a: &MomentsArgs) -> Result<(), CliError> {
    let model = read_model(&a.model)?.model;
    let n = model.n();
    let cfg = MomentConfig {
        family: a.family.family(n)?,
        solver: a.solver.config(Schedule::Async),
        clamp_physical: a.clamp_physical,
        warm_start: a.warm_start,
    };
    cfg.solver.validate()?;
    let methods = [
        (MethodArg::Variational, MomentMethod::Variational, "variational"),
        (MethodArg::Ratio1, MomentMethod::Ratio1, "ratio1"),
        (MethodArg::Ratio2, MomentMethod::Ratio2, "ratio2"),
    ];
    let mut estimates: Vec<(Option<MomentEstimate>, &str)> = Vec::new();
    for (arg, method, name) in methods {
        let e = (a.method == MethodArg::All || a.method == arg)
            .then(|| estimate_moments(&model, method, &cfg))
            .transpose()?;
        estimates.push((e, name));
    }
    let oracle = if n <= DEFAULT_ENUMERATION_CAP {
        Some(exact::enumerate(&model)?)
    } else {
        None
    };

    let mut w = csv_writer();
    let write_err = |e: csv::Error| CliError::Other(e.to_string());
    w.write_record(["i", "j", "exact", "variational", "ratio1", "ratio2", "flags"])
        .map_err(write_err)?;
    let mut any_nonconverged = false;
    for i in 0..n {
        for j in i..n {
            let mut rec = vec![i.to_string(), j.to_string()];
            rec.push(oracle.as_ref().map_or(String::new(), |s| g(s.pair(i, j))));
            let mut flags = Vec::new();
            for (e, name) in &estimates {
                match e {
                    Some(e) => {
                        rec.push(g(e.correlation(i, j)));
                        if e.unphysical[i * n + j] {
                            flags.push(format!("unphysical:{name}"));
                        }
                        if e.nonconverged[i * n + j] {
                            flags.push(format!("nonconverged:{name}"));
                            any_nonconverged = true;
                        }
                    }
                    None => rec.push(String::new()),
                }
            }
            rec.push(flags.join(";"));
            w.write_record(&rec).map_err(write_err)?;
        }
    }
    emit(a.output.as_deref(), &finish_csv(w))?;
    if a.solver.strict && any_nonconverged {
        return Err(CliError::NotConverged("a fit behind the estimates did not converge".into()));
    }
    Ok(())
}

fn cmd_learn(a: &LearnArgs) -> Result<(), CliError> {
    let patterns = match &a.patterns {
        Some(p) => format::read_patterns(p).map_err(|e| CliError::input(p, e))?,
        None => {
            if !(0.0..=1.0).contains(&a.p_on) {
                return Err(CliError::Usage(format!("--p-on must lie in [0, 1], got {}", a.p_on)));
            }
            PatternSet::random(a.visible, a.count, a.p_on, a.seed)
        }
    };
    if patterns.visible_count() != a.visible {
        return Err(CliError::Usage(format!(
            "patterns have {} entries, --visible is {}",
            patterns.visible_count(),
            a.visible
        )));
    }
    let cfg = LearningConfig {
        n_visible: a.visible,
        n_hidden: a.hidden,
        eta: a.eta,
        updates: a.updates,
        free_stats: match a.free_stats {
            FreeStatsArg::Factorised => FreeStatistics::Factorised,
            FreeStatsArg::Ratio2 => FreeStatistics::Ratio2,
        },
        batch_mode: match a.mode {
            ModeArg::Batch => BatchMode::Batch,
            ModeArg::PerPattern => BatchMode::PerPattern,
        },
        init_sigma: a.init_sigma,
        seed: a.seed,
        ..LearningConfig::default()
    };
    let (model, trace) = learning::train(&cfg, &patterns)?;

    let mut w = csv_writer();
    let write_err = |e: csv::Error| CliError::Other(e.to_string());
    w.write_record([
        "update",
        "exact_bound",
        "first_bound",
        "second_bound",
        "grad_norm",
        "clamped_nonconv",
        "free_nonconv",
    ])
    .map_err(write_err)?;
    for r in &trace.records {
        w.write_record([
            r.update.to_string(),
            r.bounds.exact.map_or(String::new(), g),
            g(r.bounds.first),
            g(r.bounds.second),
            g(r.grad_norm),
            r.clamped_nonconverged.to_string(),
            r.free_nonconverged.to_string(),
        ])
        .map_err(write_err)?;
    }
    emit(a.output.as_deref(), &finish_csv(w))?;
    if let Some(p) = &a.model_out {
        emit(Some(p), &format::write_model(&model))?;
    }
    Ok(())
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig {
        trials: a.trials,
        nodes: a.nodes,
        family: a.family.family(a.nodes)?,
        seed: a.seed,
        sigma: a.sigma,
        jobs: a.jobs,
        solver: SolverConfig {
            schedule: match a.updates {
                Some(ScheduleArg::Async) => Schedule::Async,
                _ => Schedule::Sync,
            },
            damping: a.damping,
            tol: a.tol,
            max_iter: a.max_iter,
            ..SolverConfig::default()
        },
    };
    cfg.solver.validate()?;
    if a.nodes == 0 {
        return Err(CliError::Usage("--nodes must be >= 1".into()));
    }
    let rows = experiment::run_experiment(&cfg)?;
    emit(Some(&a.output), &experiment::write_csv(&rows))?;
    if let Some(h) = &a.hist {
        emit(Some(h), &experiment::experiment_histograms(&rows, a.bins))?;
    }
    print!("{}", experiment::format_summary(&experiment::summarize(&rows)));
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Exact(a) => cmd_exact(a),
        Command::Mf(a) => cmd_mf(a),
        Command::Moments(a) => cmd_moments(a),
        Command::Learn(a) => cmd_learn(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
