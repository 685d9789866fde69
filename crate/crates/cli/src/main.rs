//! `epp`: simulate, fit, sample, evaluate and inspect excursion point
//! processes from the command line.
//!
//! Exit status is 0 on success, 2 for bad arguments or missing inputs and 1
//! for failures while running. Failures are reported on stderr as one JSON
//! object with `error` and `message` fields.

mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use excursion_pp::arrivals::{FirstGap, MarkedArrivals};
use excursion_pp::drift::DriftSpec;
use excursion_pp::error::Error;
use excursion_pp::eval::{
    empirical_quantile, fit_log_transform, interpolate, ks_statistic, ks_two_sample, mean_abs_path, qq_points, w1_distance,
    w1_to_reference, Renewal,
};
use excursion_pp::excursions::{PathLaw, SamplerConfig};
use excursion_pp::grid::TimeGrid;
use excursion_pp::inference::{
    load_checkpoint, save_checkpoint, FitConfig, Gaps, Objective, Problem, Sampler, SignMode,
};
use excursion_pp::likelihood::conditional_intensity;
use excursion_pp::rng::RngSeed;
use excursion_pp::sim::{simulate, MarkRule, SimConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "epp", version, about = "Point processes as excursion lengths of a latent diffusion")]
struct Cli {
    /// Worker threads. Outputs do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a drift and record its arrivals.
    Simulate(SimulateArgs),
    /// Fit a drift to arrival sequences.
    Fit(FitArgs),
    /// Draw arrivals from a fitted checkpoint.
    Sample(SampleArgs),
    /// Compare interarrival samples, or align a learned stimulus.
    Eval(EvalArgs),
    /// Conditional intensity of a fitted checkpoint.
    Intensity(IntensityArgs),
}

#[derive(Args, Debug, Serialize)]
struct RunArgs {
    /// Initial state, one value per coordinate (default: the origin).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 100_000)]
    steps: usize,
    /// Independent runs, written as sequences `0`, `1`, ...
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Use the height threshold as given, without the discrete-monitoring
    /// shift.
    #[arg(long)]
    literal: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Arrivals CSV (`seq_id,time,mark`).
    #[arg(long)]
    out: PathBuf,
    /// Path CSV of run 0 (`t,x1,..,xd`).
    #[arg(long)]
    path: Option<PathBuf>,
    /// Exogenous events (`seq_id,time`); all rows are used.
    #[arg(long)]
    exogenous: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Drift spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Drift parameters in canonical order.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    params: Vec<f64>,
    /// Minimum excursion height.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug, Serialize)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum ObjectiveArg {
    Elbo,
    LogLikelihood,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum GapsArg {
    PerMark,
    Sequential,
}

impl From<GapsArg> for Gaps {
    fn from(g: GapsArg) -> Self {
        match g {
            GapsArg::PerMark => Gaps::PerMark,
            GapsArg::Sequential => Gaps::Sequential,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum PathsArg {
    Excursion,
    Passage,
}

impl From<PathsArg> for PathLaw {
    fn from(p: PathsArg) -> Self {
        match p {
            PathsArg::Excursion => PathLaw::Excursion,
            PathsArg::Passage => PathLaw::Passage,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum SignsArg {
    Auto,
    Random,
    ByMark,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum Estimator {
    Excursion,
    Bridge,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    /// Arrivals CSV (`seq_id,time,mark`).
    #[arg(long)]
    arrivals: PathBuf,
    /// Drift spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Fit configuration JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Exogenous events (`seq_id,time`) matched to arrival sequences by id.
    #[arg(long)]
    exogenous: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    lr_drift: Option<f64>,
    #[arg(long)]
    lr_delta: Option<f64>,
    #[arg(long)]
    delta_init: Option<f64>,
    /// Keep δ at its initial value.
    #[arg(long)]
    fixed_delta: bool,
    #[arg(long)]
    lambda_reg: Option<f64>,
    #[arg(long)]
    resample_every: Option<usize>,
    /// Draw batches once and keep them.
    #[arg(long, conflicts_with = "resample_every")]
    frozen_batches: bool,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    #[arg(long, value_enum)]
    gaps: Option<GapsArg>,
    /// Path law of the expectations (default: passages for per-mark gaps,
    /// excursions for sequential gaps).
    #[arg(long, value_enum)]
    paths: Option<PathsArg>,
    #[arg(long, value_enum)]
    signs: Option<SignsArg>,
    /// Score the gap from the origin to the first arrival.
    #[arg(long)]
    include_first_gap: bool,
    #[arg(long)]
    penalty_k: Option<usize>,
    #[arg(long)]
    penalty_points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Estimator::Excursion)]
    estimator: Estimator,
    /// Checkpoint JSON to write.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Loss history CSV (`epoch,loss,grad_norm,penalty`).
    #[arg(long)]
    loss: Option<PathBuf>,
    /// Full fit report JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
enum ReferenceArg {
    Exponential,
    Gamma,
    Weibull,
    Lognormal,
}

impl ReferenceArg {
    fn renewal(self) -> Renewal {
        let name = match self {
            ReferenceArg::Exponential => "exponential",
            ReferenceArg::Gamma => "gamma",
            ReferenceArg::Weibull => "weibull",
            ReferenceArg::Lognormal => "lognormal",
        };
        Renewal::standard(name).expect("known family")
    }
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Arrivals CSV whose interarrivals are evaluated.
    #[arg(long, required_unless_present = "stimulus")]
    a: Option<PathBuf>,
    /// Second arrivals CSV to compare against.
    #[arg(long, conflicts_with_all = ["reference", "stimulus"])]
    b: Option<PathBuf>,
    /// Named reference law (benchmark parameters).
    #[arg(long, value_enum, conflicts_with = "stimulus")]
    reference: Option<ReferenceArg>,
    #[arg(long, value_enum, default_value_t = GapsArg::PerMark)]
    gaps: GapsArg,
    #[arg(long)]
    include_first_gap: bool,
    #[arg(long, default_value_t = 100)]
    quantiles: usize,
    /// QQ pairs CSV (`theoretical,empirical`).
    #[arg(long)]
    qq: Option<PathBuf>,
    /// Metrics JSON.
    #[arg(long)]
    out: PathBuf,
    /// Align a checkpoint's mean path with a reference signal instead.
    #[arg(long, requires_all = ["checkpoint", "signal", "aligned"])]
    stimulus: bool,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Reference signal CSV (`t,value`).
    #[arg(long)]
    signal: Option<PathBuf>,
    /// Aligned signal CSV (`t,reference,aligned`).
    #[arg(long)]
    aligned: Option<PathBuf>,
    /// Paths averaged for the mean path.
    #[arg(long, default_value_t = 100)]
    paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct IntensityArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Largest time since the last arrival.
    #[arg(long, default_value_t = 5.0)]
    t_max: f64,
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 128)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    n_steps: usize,
    #[arg(long, value_enum, default_value_t = PathsArg::Passage)]
    paths: PathsArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Intensity CSV (`t,lambda`).
    #[arg(long)]
    out: PathBuf,
}

fn log_config<T: Serialize>(command: &str, args: &T) {
    info!(
        "{command} config: {}",
        serde_json::to_string(args).unwrap_or_else(|e| format!("<unserializable: {e}>"))
    );
}

fn first_gap(include: bool) -> FirstGap {
    if include {
        FirstGap::Include
    } else {
        FirstGap::Drop
    }
}

fn run_arrivals(spec: &DriftSpec, params: &[f64], delta: f64, args: &RunArgs) -> CliResult {
    spec.check_params(params)?;
    let drift = spec.bind(params);
    let d = spec.dim();
    let x0 = args.x0.clone().unwrap_or_else(|| vec![0.0; d]);
    let grid = TimeGrid::new(0.0, args.dt, args.steps)?;
    let mut cfg = SimConfig::new(delta).with_sigma(args.sigma);
    if args.literal {
        cfg = cfg.literal();
    }
    if d > 1 {
        cfg.marks = MarkRule::Coordinate;
    }
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    let exogenous: Vec<f64> = match &args.exogenous {
        Some(p) => {
            let mut all: Vec<f64> = io::read_events(p)?.into_iter().flat_map(|(_, v)| v).collect();
            all.sort_by(f64::total_cmp);
            all
        }
        None => Vec::new(),
    };
    let seed = RngSeed::new(args.seed);
    let keep = args.path.is_some();
    let sims = (0..args.runs)
        .into_par_iter()
        .map(|r| simulate(&drift, &x0, grid, &cfg, seed.derive(r as u64), &exogenous, keep && r == 0))
        .collect::<Result<Vec<_>, _>>()?;
    if let (Some(p), Some(path)) = (&args.path, &sims[0].path) {
        io::write_path(p, path)?;
    }
    let seqs: Vec<(String, MarkedArrivals)> = sims
        .into_iter()
        .enumerate()
        .map(|(r, s)| (r.to_string(), s.arrivals))
        .collect();
    info!(
        "{} arrivals in {} runs",
        seqs.iter().map(|(_, s)| s.len()).sum::<usize>(),
        seqs.len()
    );
    io::write_arrivals(&args.out, &seqs)
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult {
    log_config("simulate", args);
    let spec = io::read_spec(&args.spec)?;
    run_arrivals(&spec, &args.params, args.delta, &args.run)
}

fn cmd_sample(args: &SampleArgs) -> CliResult {
    log_config("sample", args);
    io::open(&args.checkpoint)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    run_arrivals(&ck.spec, ck.params.as_slice(), ck.delta, &args.run)
}

fn fit_config(args: &FitArgs) -> CliResult<FitConfig> {
    let mut cfg: FitConfig = match &args.config {
        Some(p) => serde_json::from_reader(io::open(p)?).map_err(Error::from)?,
        None => FitConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = args.$field {
                cfg.$field = v;
            }
        )*};
    }
    set!(epochs, k, n_steps, lr_drift, lr_delta, lambda_reg, penalty_k, penalty_points);
    if args.delta_init.is_some() {
        cfg.delta_init = args.delta_init;
    }
    if args.fixed_delta {
        cfg.train_delta = false;
    }
    if args.resample_every.is_some() {
        cfg.resample_every = args.resample_every;
    }
    if args.frozen_batches {
        cfg.resample_every = None;
    }
    if let Some(o) = args.objective {
        cfg.objective = match o {
            ObjectiveArg::Elbo => Objective::Elbo,
            ObjectiveArg::LogLikelihood => Objective::LogLikelihood,
        };
    }
    if let Some(g) = args.gaps {
        cfg.gaps = g.into();
    }
    if let Some(p) = args.paths {
        cfg.paths = Some(p.into());
    }
    if let Some(s) = args.signs {
        cfg.signs = match s {
            SignsArg::Auto => SignMode::Auto,
            SignsArg::Random => SignMode::Random,
            SignsArg::ByMark => SignMode::ByMark,
        };
    }
    if args.include_first_gap {
        cfg.first_gap = FirstGap::Include;
    }
    if let Some(s) = args.seed {
        cfg.seed = RngSeed::new(s);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_fit(args: &FitArgs) -> CliResult {
    log_config("fit", args);
    let cfg = fit_config(args)?;
    log_config("fit resolved", &cfg);
    let spec = io::read_spec(&args.spec)?;
    let seqs = io::read_arrivals(&args.arrivals)?;
    let data: Vec<MarkedArrivals> = seqs.iter().map(|(_, s)| s.clone()).collect();
    let sampler = match args.estimator {
        Estimator::Excursion => Sampler::Excursion,
        Estimator::Bridge => Sampler::Bridge,
    };
    let mut problem = Problem::new(&data, &spec, &cfg, sampler)?;
    if let Some(p) = &args.exogenous {
        let events = io::read_events(p)?;
        let per_seq: Vec<Vec<f64>> = seqs
            .iter()
            .map(|(id, _)| {
                events
                    .iter()
                    .find(|(e, _)| e == id)
                    .map_or_else(Vec::new, |(_, v)| v.clone())
            })
            .collect();
        problem = problem.with_exogenous(&per_seq)?;
    }
    info!("fitting {} interarrivals", problem.n_data());
    let report = problem.fit()?;
    info!(
        "final loss {} delta {} penalty {}",
        report.diagnostics.final_loss, report.final_delta, report.diagnostics.final_penalty
    );
    save_checkpoint(&report, &spec, &cfg, &args.checkpoint)?;
    if let Some(p) = &args.loss {
        report.write_loss_csv(io::create(p)?)?;
    }
    if let Some(p) = &args.report {
        serde_json::to_writer_pretty(io::create(p)?, &report).map_err(Error::from)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> CliResult {
    log_config("eval", args);
    if args.stimulus {
        return eval_stimulus(args);
    }
    let a_path = args.a.as_ref().expect("clap requires --a");
    let gaps: Gaps = args.gaps.into();
    let first = first_gap(args.include_first_gap);
    let a = io::durations(&io::read_arrivals(a_path)?, gaps, first);
    if a.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no interarrivals", a_path.display())).into());
    }
    let (ks, w1, n_b, qq) = match (&args.b, args.reference) {
        (Some(b_path), None) => {
            let b = io::durations(&io::read_arrivals(b_path)?, gaps, first);
            if b.is_empty() {
                return Err(Error::InvalidInput(format!("{} has no interarrivals", b_path.display())).into());
            }
            let mut sorted_b = b.clone();
            sorted_b.sort_by(f64::total_cmp);
            let qb = |p: f64| empirical_quantile(&sorted_b, p);
            (
                ks_two_sample(&a, &b)?,
                w1_distance(&a, &b)?,
                Some(b.len()),
                qq_points(&a, qb, args.quantiles)?,
            )
        }
        (None, Some(r)) => {
            let law = r.renewal();
            (
                ks_statistic(&a, |x| law.cdf(x))?,
                w1_to_reference(&a, |p| law.quantile(p), 16)?,
                None,
                qq_points(&a, |p| law.quantile(p), args.quantiles)?,
            )
        }
        _ => return Err(CliError::Usage("eval needs exactly one of --b or --reference".into())),
    };
    if let Some(p) = &args.qq {
        io::write_table(p, &["theoretical", "empirical"], qq.iter().map(|&(t, e)| vec![t, e]))?;
    }
    info!("ks {ks} w1 {w1}");
    write_json(
        &args.out,
        &json!({
            "ks": ks,
            "w1": w1,
            "n_a": a.len(),
            "n_b": n_b,
            "qq_file": args.qq.as_ref().map(|p| p.display().to_string()),
        }),
    )
}

fn eval_stimulus(args: &EvalArgs) -> CliResult {
    let ck_path = args.checkpoint.as_ref().expect("clap requires --checkpoint");
    io::open(ck_path)?;
    let ck = load_checkpoint(ck_path)?;
    if ck.spec.dim() != 1 {
        return Err(Error::InvalidInput("stimulus alignment needs a scalar drift".into()).into());
    }
    let (t, reference) = io::read_signal(args.signal.as_ref().expect("clap requires --signal"))?;
    let span = t[t.len() - 1] - t[0];
    let steps = (span / args.dt).ceil().max(1.0) as usize;
    let grid = TimeGrid::new(t[0], args.dt, steps)?;
    let drift = ck.spec.bind(ck.params.as_slice());
    let mean = mean_abs_path(&drift, 0.0, grid, &SimConfig::new(ck.delta), RngSeed::new(args.seed), args.paths)?;
    let knots: Vec<f64> = (0..mean.len()).map(|i| grid.time(i)).collect();
    let at_signal = interpolate(&knots, &mean, &t)?;
    let fit = fit_log_transform(&at_signal, &reference)?;
    let aligned_path = args.aligned.as_ref().expect("clap requires --aligned");
    io::write_table(
        aligned_path,
        &["t", "reference", "aligned"],
        t.iter()
            .zip(&reference)
            .zip(&fit.aligned)
            .map(|((&t, &r), &a)| vec![t, r, a]),
    )?;
    info!("a {} b {} residual {}", fit.a, fit.b, fit.residual_norm);
    write_json(
        &args.out,
        &json!({
            "a": fit.a,
            "b": fit.b,
            "residual_norm": fit.residual_norm,
            "aligned_file": aligned_path.display().to_string(),
        }),
    )
}

fn cmd_intensity(args: &IntensityArgs) -> CliResult {
    log_config("intensity", args);
    io::open(&args.checkpoint)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    if ck.spec.dim() != 1 {
        return Err(Error::InvalidInput("intensity needs a scalar drift".into()).into());
    }
    if args.points == 0 || !(args.t_max > 0.0) {
        return Err(CliError::Usage("--points and --t-max must be positive".into()));
    }
    let grid: Vec<f64> = (1..=args.points)
        .map(|i| args.t_max * i as f64 / args.points as f64)
        .collect();
    let drift = ck.spec.bind(ck.params.as_slice());
    let lambda = conditional_intensity(
        &drift,
        ck.delta,
        &grid,
        &SamplerConfig::new(args.k, args.n_steps).with_law(args.paths.into()),
        RngSeed::new(args.seed),
    )?;
    io::write_table(
        &args.out,
        &["t", "lambda"],
        grid.iter().zip(&lambda).map(|(&t, &l)| vec![t, l]),
    )
}

fn run(cli: &Cli) -> CliResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Intensity(a) => cmd_intensity(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("{}", json!({ "error": "usage", "message": msg }));
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(1)
        }
    }
}
