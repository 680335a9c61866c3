use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use trajedit::checkpoint::Checkpoint;
use trajedit::config::{DataSpec, FieldSpec, RewardSpec, SourceSpec};
use trajedit::harness::{self, SweepOptions, SweepSpec};
use trajedit::plots;
use trajedit::report::{RunReport, SourceResult};
use trajedit::{trajectory_io, verify};
use trajedit_core::baselines::{guided_sample, BaselineConfig, Method};
use trajedit_core::control::{edit, EditConfig, Optimizer};
use trajedit_core::dynamics::{initial_trajectory, Injection, Sampler};
use trajedit_core::field::{train_classifier, train_dsm, train_flow, AnyField, Field, TrainHyper};
use trajedit_core::math::distance;
use trajedit_core::rewards::Reward;
use trajedit_core::rng::mix_seed;
use trajedit_core::schedule::{AlphaBar, DiffusionSchedule, Mode, Schedule};

/// Reward-guided editing of generative samples by trajectory optimal control.
///
/// Logs go to standard error; results are written only to files.
#[derive(Parser)]
#[command(name = "trajedit", version)]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an ε-network (dsm), a velocity network (flow) or a classifier.
    Train(TrainArgs),
    /// Edit source samples by iterating the Pontryagin conditions.
    Edit(EditArgs),
    /// Run a comparison method: gradient ascent or inversion + guided sampling.
    Baseline(BaselineArgs),
    /// Run a method × scale sweep and write cells, Pareto fronts and plots.
    Sweep(SweepArgs),
    /// Run the oracle suite and print a pass/fail table.
    Verify(VerifyArgs),
    /// Render SVG figures from a run or sweep directory.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainTarget {
    /// Denoising score matching of an ε-prediction network.
    Dsm,
    /// Conditional flow matching of a velocity network.
    Flow,
    /// Cross-entropy classifier on labelled data.
    Classifier,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Cosine,
    Linear,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(value_enum)]
    target: TrainTarget,
    /// Training data: `moons:N[:noise]`, `ring:K:R:VAR:N[:parity]`, or a CSV
    /// file (classifiers: last column is the label).
    #[arg(long)]
    data: String,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    /// Training seed; the data seed is derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hyperparameter file (JSON or TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hidden layer widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Noise schedule ᾱ_t of a dsm field.
    #[arg(long, value_enum, default_value = "cosine")]
    schedule: ScheduleArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Deterministic sampler; sources are mapped back by exact inversion.
    Det,
    /// Stochastic sampler; the forward process fixes the Brownian residuals.
    Markov,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Det => Mode::Deterministic,
            ModeArg::Markov => Mode::Markovian,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectionArg {
    /// Control enters as `+ u dt`.
    Additive,
    /// Control enters as `+ σ_t u dt` (no effect in det mode).
    Sigma,
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside the open interval (0, 1)"))
    }
}

fn step_size(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is outside (0, 1]"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and non-negative"))
    }
}

fn positive_count(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(format!("{e}")),
    }
}

#[derive(Args)]
struct Inputs {
    /// Field checkpoint, or `ring:K:R:VAR[:diffusion|flow]` for the exact
    /// field of a ring of Gaussians.
    #[arg(long, allow_hyphen_values = true)]
    field: String,
    /// Terminal reward r: `quadratic:Y[:scale]`, `linear:A`,
    /// `density:ring:K:R:VAR` or `logit:CHECKPOINT:CLASS`.
    #[arg(long, allow_hyphen_values = true)]
    reward: String,
    /// Source sample x_1 as `a,b,...`, or a CSV file with one sample per row.
    #[arg(long, allow_hyphen_values = true)]
    source: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EditArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Edit settings file (JSON or TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Depth T: the source is mapped back to time T, 0 < T < 1.
    #[arg(long, value_parser = open_unit)]
    t_start: Option<f64>,
    /// Number of grid steps n between T and 1.
    #[arg(long, value_parser = positive_count)]
    steps: Option<usize>,
    /// Outer iterations N of the adjoint/update/rollout loop.
    #[arg(long, value_parser = positive_count)]
    iters: Option<usize>,
    /// Control step size λ in u ← u − λ(u + p), 0 < λ ≤ 1.
    #[arg(long, value_parser = step_size)]
    lr: Option<f64>,
    /// Reward weight w in the cost ∫½|u|² dt − w·r(x_1).
    #[arg(long, value_parser = non_negative)]
    w: Option<f64>,
    /// Sampler mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Seed of the Markovian forward process.
    #[arg(long)]
    seed: Option<u64>,
    /// Use momentum β on the stationarity residual instead of plain steps.
    #[arg(long)]
    momentum: Option<f64>,
    /// Stop once the PMP residual max|u + p| falls below this value.
    #[arg(long, value_parser = non_negative)]
    early_stop: Option<f64>,
    /// How the control enters the dynamics.
    #[arg(long, value_enum)]
    injection: Option<InjectionArg>,
    /// Sanity bound on Markovian residuals, in multiples of the step noise
    /// scale times √d.
    #[arg(long, value_parser = non_negative)]
    residual_bound: Option<f64>,
    /// Disable the residual sanity bound.
    #[arg(long, conflicts_with = "residual_bound")]
    no_residual_bound: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Gradient ascent on the sample itself.
    Ga,
    /// Inversion, then DPS-guided sampling.
    Dps,
    /// Inversion, then FreeDoM-guided sampling with step repetition.
    Freedom,
    /// Inversion, then training-free guidance (ρ and μ terms).
    Tfg,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ga => Method::Ga,
            MethodArg::Dps => Method::Dps,
            MethodArg::Freedom => Method::FreeDoM,
            MethodArg::Tfg => Method::Tfg,
        }
    }
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[command(flatten)]
    inputs: Inputs,
    /// Baseline settings file (JSON or TOML); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inversion depth T before guided sampling, 0 < T < 1.
    #[arg(long, value_parser = open_unit)]
    depth: Option<f64>,
    /// Number of sampling steps n between T and 1.
    #[arg(long, value_parser = positive_count)]
    steps: Option<usize>,
    /// ρ_t: strength on ∇_{x_t} r(x̂_{1|t}).
    #[arg(long, value_parser = non_negative)]
    rho: Option<f64>,
    /// μ_t: strength on ∇_{x̂_{1|t}} r(x̂_{1|t}) (TFG).
    #[arg(long, value_parser = non_negative)]
    mu: Option<f64>,
    /// N_recur: repetitions of each step with forward re-noising (FreeDoM, TFG).
    #[arg(long, value_parser = positive_count)]
    n_recur: Option<usize>,
    /// N_iter: inner updates of the clean estimate (TFG).
    #[arg(long, value_parser = positive_count)]
    n_iter: Option<usize>,
    /// γ̄: noise scale added to x̂_{1|t} before the ρ gradient (TFG).
    #[arg(long, value_parser = non_negative)]
    gamma_bar: Option<f64>,
    /// Gradient-ascent steps N.
    #[arg(long)]
    ga_steps: Option<usize>,
    /// Gradient-ascent step size λ.
    #[arg(long, value_parser = non_negative)]
    ga_lr: Option<f64>,
    /// Seed of the re-noising and γ̄ draws.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep file (JSON or TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; a matching earlier run there is resumed.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, value_parser = positive_count)]
    workers: Option<usize>,
    /// Record per-cell wall time (makes outputs run-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Fewer instances per oracle; tolerances are unchanged.
    #[arg(long)]
    quick: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Run or sweep directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Directory for the SVG files.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
    }
}

/// `Ok(false)` means the command ran but something in it failed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Edit(a) => run_edit(a),
        Command::Baseline(a) => run_baseline(a),
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => Ok(run_verify(a)),
        Command::Plot(a) => plot(a).map(|_| true),
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut hyper: TrainHyper = load_config(a.config.as_deref())?;
    hyper.seed = a.seed;
    if let Some(h) = a.hidden {
        hyper.hidden = h;
    }
    if let Some(v) = a.epochs {
        hyper.epochs = v;
    }
    if let Some(v) = a.steps_per_epoch {
        hyper.steps_per_epoch = v;
    }
    if let Some(v) = a.batch_size {
        hyper.batch_size = v;
    }
    if let Some(v) = a.lr {
        hyper.learning_rate = v;
    }
    let data = DataSpec::parse_arg(&a.data)?;
    let labelled = matches!(a.target, TrainTarget::Classifier);
    let set = data.load(mix_seed(a.seed, 0xda7a), Path::new("."), labelled)?;
    log::info!("training on {} points", set.points.len());
    let mut ckpt = match a.target {
        TrainTarget::Dsm => {
            let alpha_bar = match a.schedule {
                ScheduleArg::Cosine => AlphaBar::Cosine,
                ScheduleArg::Linear => AlphaBar::Linear,
            };
            let schedule = DiffusionSchedule::new(alpha_bar);
            let (field, log) = train_dsm(&set.points, &schedule, &hyper)?;
            log::info!("final loss {:.5}", log.final_loss);
            let mut c =
                Checkpoint::field(AnyField::Mlp(field), Schedule::Diffusion(schedule), a.seed);
            c.training = Some(log);
            c
        }
        TrainTarget::Flow => {
            let (field, log) = train_flow(&set.points, &hyper)?;
            log::info!("final loss {:.5}", log.final_loss);
            let schedule = Schedule::for_kind(field.kind(), AlphaBar::Cosine);
            let mut c = Checkpoint::field(AnyField::Mlp(field), schedule, a.seed);
            c.training = Some(log);
            c
        }
        TrainTarget::Classifier => {
            let (clf, report) = train_classifier(&set.points, &set.labels, None, &hyper)?;
            if report.degenerate {
                log::warn!("training data holds a single class; logits carry no contrast");
            }
            log::info!("train accuracy {:.4}", report.train_accuracy);
            let mut c = Checkpoint::classifier(clf, a.seed);
            c.training = Some(report.log);
            c.train_accuracy = Some(report.train_accuracy);
            c
        }
    };
    ckpt.hyper = Some(hyper);
    ckpt.save(&a.out)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

struct Resolved {
    field_spec: FieldSpec,
    reward_spec: RewardSpec,
    source_spec: SourceSpec,
    field: AnyField,
    schedule: Schedule,
    reward: Reward,
    sources: Vec<Vec<f64>>,
}

fn resolve_inputs(i: &Inputs) -> Result<Resolved> {
    let base = Path::new(".");
    let field_spec = FieldSpec::parse_arg(&i.field)?;
    let reward_spec = RewardSpec::parse_arg(&i.reward)?;
    let source_spec = SourceSpec::parse_arg(&i.source)?;
    let (field, schedule) = field_spec.resolve(base)?;
    let reward = reward_spec.resolve(base)?;
    let sources = source_spec.resolve(base)?;
    let d = field.dim();
    ensure!(
        sources[0].len() == d,
        "sources have dimension {}, the field {d}",
        sources[0].len()
    );
    reward.validate(d)?;
    fs::create_dir_all(&i.out).with_context(|| format!("creating {}", i.out.display()))?;
    Ok(Resolved {
        field_spec,
        reward_spec,
        source_spec,
        field,
        schedule,
        reward,
        sources,
    })
}

fn run_edit(a: EditArgs) -> Result<bool> {
    let mut c: EditConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.t_start {
        c.t_start = v;
    }
    if let Some(v) = a.steps {
        c.n_steps = v;
    }
    if let Some(v) = a.iters {
        c.iterations = v;
    }
    if let Some(v) = a.lr {
        c.learning_rate = v;
    }
    if let Some(v) = a.w {
        c.reward_weight = v;
    }
    if let Some(v) = a.mode {
        c.mode = v.into();
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(beta) = a.momentum {
        c.optimizer = Optimizer::Momentum { beta };
    }
    if a.early_stop.is_some() {
        c.early_stop = a.early_stop;
    }
    if let Some(v) = a.injection {
        c.injection = match v {
            InjectionArg::Additive => Injection::Additive,
            InjectionArg::Sigma => Injection::SigmaScaled,
        };
    }
    if a.residual_bound.is_some() {
        c.markov.residual_bound = a.residual_bound;
    }
    if a.no_residual_bound {
        c.markov.residual_bound = None;
    }
    c.validate()?;
    let r = resolve_inputs(&a.inputs)?;
    let out = &a.inputs.out;
    let mut report = RunReport::new(
        "oc",
        r.field_spec.clone(),
        r.reward_spec.clone(),
        r.source_spec.clone(),
        serde_json::to_value(&c)?,
        c.seed,
    );
    let sampler = Sampler::new(&r.field, r.schedule, c.grid()?, c.mode)?;
    for (i, x1) in r.sources.iter().enumerate() {
        let before = r.reward.value(x1);
        let mut res = SourceResult {
            source_id: i,
            source: x1.clone(),
            edited: None,
            reward_before: before,
            reward_after: None,
            distance: None,
            iterations: Vec::new(),
            stopped_early: false,
            error: None,
        };
        match edit(&r.field, r.schedule, &r.reward, x1, &c) {
            Ok(rep) => {
                let initial = initial_trajectory(&sampler, x1, c.seed, c.inversion, c.markov)?;
                trajectory_io::write(&initial, &out.join(format!("trajectory_{i}_initial.csv")))?;
                trajectory_io::write(
                    &rep.trajectory,
                    &out.join(format!("trajectory_{i}_edited.csv")),
                )?;
                let last = rep.last();
                log::info!(
                    "source {i}: reward {before:.4} -> {:.4}, distance {:.4}, pmp residual {:.2e}",
                    last.reward,
                    last.distance,
                    last.pmp_residual
                );
                res.reward_after = Some(last.reward);
                res.distance = Some(last.distance);
                res.edited = Some(rep.edited().to_vec());
                res.iterations = std::iter::once(rep.initial)
                    .chain(rep.records.iter().copied())
                    .collect();
                res.stopped_early = rep.stopped_early;
            }
            Err(e) => {
                log::error!("source {i}: {e}");
                if let Some(last) = &e.last {
                    res.iterations = std::iter::once(last.initial)
                        .chain(last.records.iter().copied())
                        .collect();
                }
                res.error = Some(e.to_string());
            }
        }
        report.results.push(res);
    }
    report.save(&out.join("report.json"))?;
    log::info!("wrote {}", out.join("report.json").display());
    Ok(report.failures() == 0)
}

fn run_baseline(a: BaselineArgs) -> Result<bool> {
    let mut c: BaselineConfig = load_config(a.config.as_deref())?;
    c.method = a.method.into();
    if let Some(v) = a.depth {
        c.inversion_depth = v;
    }
    if let Some(v) = a.steps {
        c.n_steps = v;
    }
    if let Some(v) = a.rho {
        c.rho = v;
    }
    if let Some(v) = a.mu {
        c.mu = v;
    }
    if let Some(v) = a.n_recur {
        c.n_recur = v;
    }
    if let Some(v) = a.n_iter {
        c.n_iter = v;
    }
    if let Some(v) = a.gamma_bar {
        c.gamma_bar = v;
    }
    if let Some(v) = a.ga_steps {
        c.ga_steps = v;
    }
    if let Some(v) = a.ga_lr {
        c.ga_lr = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    c.validate()?;
    let r = resolve_inputs(&a.inputs)?;
    let mut report = RunReport::new(
        c.method.as_str(),
        r.field_spec.clone(),
        r.reward_spec.clone(),
        r.source_spec.clone(),
        serde_json::to_value(&c)?,
        c.seed,
    );
    for (i, x1) in r.sources.iter().enumerate() {
        let before = r.reward.value(x1);
        let mut res = SourceResult {
            source_id: i,
            source: x1.clone(),
            edited: None,
            reward_before: before,
            reward_after: None,
            distance: None,
            iterations: Vec::new(),
            stopped_early: false,
            error: None,
        };
        match guided_sample(&r.field, r.schedule, &r.reward, x1, &c) {
            Ok(x) => {
                let after = r.reward.value(&x);
                log::info!(
                    "source {i}: reward {before:.4} -> {after:.4}, distance {:.4}",
                    distance(&x, x1)
                );
                res.reward_after = Some(after);
                res.distance = Some(distance(&x, x1));
                res.edited = Some(x);
            }
            Err(e) => {
                log::error!("source {i}: {e}");
                res.error = Some(e.to_string());
            }
        }
        report.results.push(res);
    }
    let path = a.inputs.out.join("report.json");
    report.save(&path)?;
    log::info!("wrote {}", path.display());
    Ok(report.failures() == 0)
}

fn sweep(a: SweepArgs) -> Result<bool> {
    let spec = SweepSpec::load(&a.spec)?;
    let base = a.spec.parent().map(Path::to_path_buf).unwrap_or_default();
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let opts = SweepOptions {
        workers,
        timing: a.timing,
        plots: true,
    };
    let outcome = harness::run_sweep(&spec, &base, &a.out, &opts)?;
    for (m, c) in &outcome.summary.oc_coverage {
        log::info!("OC covers {:.0}% of {m} points", 100.0 * c);
    }
    if outcome.failures > 0 {
        log::error!(
            "{} of {} cells failed; see cells.csv",
            outcome.failures,
            outcome.records.len()
        );
    }
    log::info!("wrote {}", a.out.display());
    Ok(outcome.failures == 0)
}

fn run_verify(a: VerifyArgs) -> bool {
    let results = verify::run_suite(a.quick);
    print!("{}", verify::table(&results));
    let ok = results.iter().all(|g| g.passed());
    println!(
        "{}",
        if ok {
            "all oracles passed"
        } else {
            "some oracles FAILED"
        }
    );
    ok
}

fn plot(a: PlotArgs) -> Result<()> {
    ensure!(a.input.is_dir(), "{} is not a directory", a.input.display());
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let pareto = a.input.join("pareto.json");
    let summary = if pareto.exists() {
        harness::load_summary(&pareto)?
    } else {
        harness::ParetoSummary {
            fidelity_metric: trajedit::report::FIDELITY_METRIC.into(),
            spec_hash: String::new(),
            points: Vec::new(),
            fronts: Default::default(),
            oc_coverage: Default::default(),
        }
    };
    plots::scatter(&summary, &a.out.join("scatter.svg"))?;
    let mut names: Vec<String> = fs::read_dir(&a.input)?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .collect();
    names.sort();
    for name in &names {
        let path = a.input.join(name);
        if let Some(stem) = name.strip_suffix(".json") {
            if let Ok(report) = RunReport::load(&path) {
                if report.results.iter().any(|r| !r.iterations.is_empty()) {
                    plots::cost_curves(&report, &a.out.join(format!("cost_{stem}.svg")))?;
                }
            }
        }
        if let Some(id) = name
            .strip_prefix("trajectory_")
            .and_then(|s| s.strip_suffix("_initial.csv"))
        {
            let edited = a.input.join(format!("trajectory_{id}_edited.csv"));
            if edited.exists() {
                let (t0, t1) = (trajectory_io::read(&path)?, trajectory_io::read(&edited)?);
                if t0.dim() >= 2 {
                    plots::trajectory_overlay(&t0, &t1, &a.out.join(format!("overlay_{id}.svg")))?;
                }
            }
        }
    }
    log::info!("wrote figures to {}", a.out.display());
    Ok(())
}
