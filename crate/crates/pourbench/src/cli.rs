//! The `pourbench` command line.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pourbench_core::data::DEFAULT_TRIALS;
use pourbench_core::eval::{default_liquids, plan_container_sweep, plan_viscosity_sweep, SweepPlan, SweepSettings, DEFAULT_POURS};
use pourbench_core::policy::PolicyParams;
use pourbench_core::rnn::gradcheck::{check_gradients, random_problem, FD_STEP, GRAD_CHECK_TOL};
use pourbench_core::rnn::{TrainConfig, INPUT_DIM};
use pourbench_core::{
    error_stats, BaselineController, ContainerRegistry, Controller, LiquidSpec, LstmController, RunConfig,
};

use crate::checkpoint::ModelCheckpoint;
use crate::config::FileConfig;
use crate::parallel::{generate_dataset_parallel, run_plan_parallel, with_threads};
use crate::registry::{default_registry, load_registry, training_container};
use crate::report::{self, ControllerInfo, ReportDocument, ReportRow};
use crate::server::{self, ServeOptions};
use crate::trace::{run_traced, save_trace};
use crate::training::train_checkpoint;
use crate::trials::{load_trials, manifest_path, save_manifest, save_trials, DatasetManifest};

pub const DEFAULT_EPOCHS: usize = 300;
pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Parser)]
#[command(name = "pourbench", version, about = "Simulated accurate pouring with a peephole LSTM velocity generator")]
pub struct Cli {
    /// Master seed for every stochastic step [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config file; flags override its values
    #[arg(long, global = true, env = "POURBENCH_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output file or directory (meaning depends on the subcommand)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Only print errors
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Worker threads, 0 for one per core; results do not depend on it [default: 0]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic water demonstrations (writes trials.jsonl and a manifest)
    GenData(GenDataArgs),
    /// Train the LSTM on a trial file (writes model.json)
    Train(TrainArgs),
    /// Run a container or viscosity sweep (writes report.csv and report.json)
    Eval(EvalArgs),
    /// Run one closed-loop pour
    Simulate(SimulateArgs),
    /// Compare BPTT gradients with central finite differences
    GradCheck(GradCheckArgs),
    /// Serve interactive pouring sessions and the static UI
    Serve(ServeArgs),
    /// Summarise recorded interactive sessions (writes human.csv and human.json)
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of trials [default: 284]
    #[arg(long)]
    pub n: Option<usize>,
    /// Container registry JSON [default: shipped registry]
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Trial JSON-lines file
    #[arg(long)]
    pub data: PathBuf,
    /// Training epochs [default: 300]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Sequences per mini-batch [default: 8]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Global gradient-norm clip [default: 5]
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Hidden units [default: 16]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Validation fraction [default: 0.1]
    #[arg(long)]
    pub val_frac: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepArg {
    Containers,
    Viscosity,
}

#[derive(Debug, Args)]
#[group(id = "controller", required = true, multiple = false, args = ["model", "baseline"])]
pub struct ControllerArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use the fixed-parameter scripted controller
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub controller: ControllerArgs,
    #[arg(long, value_enum)]
    pub sweep: SweepArg,
    /// Container registry JSON [default: shipped registry]
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Liquid for the container sweep [default: water]
    #[arg(long)]
    pub liquid: Option<String>,
    /// Container for the viscosity sweep [default: first training container]
    #[arg(long)]
    pub container: Option<String>,
    /// Pours per condition [default: 15]
    #[arg(long)]
    pub pours: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub controller: ControllerArgs,
    /// Initial volume in the source container (mL)
    #[arg(long)]
    pub vol_total: f64,
    /// Volume to pour (mL)
    #[arg(long = "vol-2pour")]
    pub vol_2pour: f64,
    /// Registry container name [default: first training container]
    #[arg(long)]
    pub container: Option<String>,
    /// water, oil or syrup [default: water]
    #[arg(long)]
    pub liquid: Option<String>,
    /// Container registry JSON [default: shipped registry]
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Per-step JSON-lines trace
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Hidden units of the test network
    #[arg(long, default_value_t = 2)]
    pub hidden: usize,
    /// Sequence length
    #[arg(long, default_value_t = 5)]
    pub len: usize,
    /// Finite-difference step
    #[arg(long, default_value_t = FD_STEP)]
    pub step: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = GRAD_CHECK_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TCP port, 0 picks a free one [default: 8080]
    #[arg(long)]
    pub port: Option<u16>,
    /// Bind address [default: 127.0.0.1]
    #[arg(long)]
    pub host: Option<String>,
    /// Container registry JSON [default: shipped registry]
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Directory with the built UI bundle
    #[arg(long)]
    pub ui: Option<PathBuf>,
    /// Simulated seconds per wall-clock second
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Directory written by `serve --out`
    #[arg(long)]
    pub sessions: PathBuf,
}

struct Ctx {
    file: FileConfig,
    seed: u64,
    out: Option<PathBuf>,
    quiet: bool,
    jobs: usize,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn registry(&self, flag: &Option<PathBuf>) -> Result<ContainerRegistry> {
        match flag.as_ref().or(self.file.registry.as_ref()) {
            Some(p) => Ok(load_registry(p)?),
            None => Ok(default_registry()),
        }
    }

    /// `--out`, or `default` inside it when it names a directory.
    fn out_file(&self, default: &str) -> PathBuf {
        match &self.out {
            Some(p) if p.is_dir() => p.join(default),
            Some(p) => p.clone(),
            None => PathBuf::from(default),
        }
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).with_context(|| format!("cannot load config {}", p.display()))?,
        None => FileConfig::default(),
    };
    let ctx = Ctx { seed: cli.seed.or(file.seed).unwrap_or(0), file, out: cli.out, quiet: cli.quiet, jobs: cli.jobs.unwrap_or(0) };
    let jobs = ctx.jobs;
    match cli.command {
        Command::GenData(a) => with_threads(jobs, || gen_data(&ctx, a)),
        Command::Train(a) => with_threads(jobs, || train(&ctx, a)),
        Command::Eval(a) => with_threads(jobs, || eval(&ctx, a)),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::GradCheck(a) => grad_check(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
        Command::Summarize(a) => summarize(&ctx, a),
    }
}

fn gen_data(ctx: &Ctx, a: GenDataArgs) -> Result<ExitCode> {
    let n = a.n.or(ctx.file.gen_data.n).unwrap_or(DEFAULT_TRIALS);
    if n == 0 {
        bail!("--n must be at least 1");
    }
    let registry = ctx.registry(&a.registry)?;
    let containers = registry.training();
    let (sim, sensor) = (ctx.file.sim(), ctx.file.sensor());
    let trials = generate_dataset_parallel(n, &containers, ctx.seed, &sim, &sensor)?;
    let path = ctx.out_file("trials.jsonl");
    save_trials(&path, &trials)?;
    let manifest = DatasetManifest::new(n, ctx.seed, containers, sim, sensor);
    save_manifest(&manifest_path(&path), &manifest)?;
    ctx.say(format!("wrote {n} trials to {}", path.display()));
    Ok(ExitCode::SUCCESS)
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<ExitCode> {
    let t = &ctx.file.train;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        lr: a.lr.or(t.lr).unwrap_or(defaults.lr),
        epochs: a.epochs.or(t.epochs).unwrap_or(DEFAULT_EPOCHS),
        batch: a.batch.or(t.batch).unwrap_or(defaults.batch),
        clip_norm: a.clip_norm.or(t.clip_norm).unwrap_or(defaults.clip_norm),
        seed: ctx.seed,
        val_frac: a.val_frac.or(t.val_frac).unwrap_or(defaults.val_frac),
        hidden: a.hidden.or(t.hidden).unwrap_or(defaults.hidden),
    };
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) || cfg.batch == 0 || cfg.hidden == 0 || !(0.0..1.0).contains(&cfg.val_frac) {
        bail!("invalid training settings: lr > 0, batch >= 1, hidden >= 1 and 0 <= val_frac < 1 are required");
    }
    let trials = load_trials(&a.data)?;
    ctx.say("epoch,train_mse,val_mse");
    let cp = train_checkpoint(&trials, &cfg, |e| ctx.say(format!("{},{},{}", e.epoch, e.train_mse, e.val_mse)))?;
    let path = ctx.out_file("model.json");
    cp.save(&path)?;
    let best = &cp.metadata.losses[cp.metadata.best_epoch];
    ctx.say(format!("best epoch {} val_mse {} written to {}", best.epoch, best.val_mse, path.display()));
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone)]
enum AnyController {
    Lstm(LstmController),
    Baseline(BaselineController),
}

impl Controller for AnyController {
    fn reset(&mut self, rc: &RunConfig) -> Result<(), pourbench_core::ControlError> {
        match self {
            AnyController::Lstm(c) => c.reset(rc),
            AnyController::Baseline(c) => c.reset(rc),
        }
    }

    fn command(&mut self, obs: &pourbench_core::Observation) -> f64 {
        match self {
            AnyController::Lstm(c) => c.command(obs),
            AnyController::Baseline(c) => c.command(obs),
        }
    }
}

fn controller(a: &ControllerArgs) -> Result<(AnyController, ControllerInfo)> {
    match &a.model {
        Some(path) => {
            let cp = ModelCheckpoint::load(path)?;
            let info = ControllerInfo::Lstm {
                hidden: cp.params.hidden,
                seed: cp.metadata.seed,
                best_epoch: cp.metadata.best_epoch,
                trials: cp.metadata.trials,
            };
            let c = LstmController::new(cp.params, cp.norm).with_context(|| format!("checkpoint {}", path.display()))?;
            Ok((AnyController::Lstm(c), info))
        }
        None => Ok((AnyController::Baseline(BaselineController::new()), ControllerInfo::Baseline {
            params: PolicyParams::mid_range(),
        })),
    }
}

pub fn liquid_by_name(name: &str) -> Result<LiquidSpec> {
    default_liquids()
        .into_iter()
        .find(|l| l.name == name)
        .ok_or_else(|| anyhow!("unknown liquid `{name}` (expected water, oil or syrup)"))
}

fn default_container(registry: &ContainerRegistry, flag: &Option<String>) -> Result<String> {
    match flag {
        Some(c) => Ok(c.clone()),
        None => training_container(registry)
            .map(|e| e.container.name.clone())
            .ok_or_else(|| anyhow!("registry has no training container; pass --container")),
    }
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<ExitCode> {
    let registry = ctx.registry(&a.registry)?;
    let (proto, info) = controller(&a.controller)?;
    let settings = SweepSettings {
        pours: a.pours.or(ctx.file.eval.pours).unwrap_or(DEFAULT_POURS),
        seed: ctx.seed,
        sim: ctx.file.sim(),
        sensor: ctx.file.sensor(),
        timeout: ctx.file.eval.timeout.unwrap_or(pourbench_core::control::DEFAULT_TIMEOUT),
    };
    if settings.pours == 0 {
        bail!("--pours must be at least 1");
    }
    let (plan, stem): (SweepPlan, &str) = match a.sweep {
        SweepArg::Containers => {
            let liquid = liquid_by_name(a.liquid.as_deref().unwrap_or("water"))?;
            (plan_container_sweep(&registry, &liquid, &settings)?, "containers")
        }
        SweepArg::Viscosity => {
            let container = default_container(&registry, &a.container)?;
            (plan_viscosity_sweep(&registry, &container, &default_liquids(), &settings)?, "viscosity")
        }
    };
    let result = run_plan_parallel(&plan, || proto.clone())?;
    let doc = report::report_document(&result, info, &registry);
    let base = ctx.out.clone().unwrap_or_else(|| PathBuf::from("report"));
    for (path, fmt) in report::report_targets(&base, stem) {
        report::emit_report(&doc, &path, fmt)?;
        ctx.say(format!("wrote {}", path.display()));
    }
    ctx.say(report::render_table(&doc).trim_end());
    Ok(ExitCode::SUCCESS)
}

fn simulate(ctx: &Ctx, a: SimulateArgs) -> Result<ExitCode> {
    let registry = ctx.registry(&a.registry)?;
    let container = default_container(&registry, &a.container)?;
    let entry = registry.get(&container)?;
    let liquid = liquid_by_name(a.liquid.as_deref().unwrap_or("water"))?;
    let mut rc = RunConfig::new(entry.container.clone(), liquid, a.vol_total, a.vol_2pour);
    rc.sim = ctx.file.sim();
    rc.sensor = ctx.file.sensor().with_seed(ctx.seed);
    rc.validate()?;
    let (mut c, _) = controller(&a.controller)?;
    let (result, trace) = run_traced(&mut c, &rc)?;
    if let Some(path) = &a.trace {
        save_trace(path, &trace)?;
    }
    if let Some(path) = &ctx.out {
        save_trials(path, std::slice::from_ref(&result.trajectory))?;
    }
    ctx.say(format!(
        "container={} liquid={} vol_total={} vol_2pour={} poured={:.3} error={:.3} overpoured={} stop={:?} steps={}",
        rc.container.name,
        rc.liquid.name,
        rc.vol_total,
        rc.vol_2pour,
        result.v_poured,
        result.final_error,
        result.overpoured,
        result.stop_reason,
        result.steps
    ));
    Ok(ExitCode::SUCCESS)
}

fn grad_check(ctx: &Ctx, a: GradCheckArgs) -> Result<ExitCode> {
    if a.hidden == 0 || a.len == 0 || !(a.step > 0.0) {
        bail!("--hidden, --len and --step must be positive");
    }
    let (p, seq) = random_problem(ctx.seed, INPUT_DIM, a.hidden, a.len)?;
    let report = check_gradients(&p, &[&seq], a.step)?;
    ctx.say(format!("{:<6} {:>7} {:>14} {:>14}", "tensor", "entries", "max_rel_error", "max_abs_error"));
    for t in &report.tensors {
        ctx.say(format!("{:<6} {:>7} {:>14.3e} {:>14.3e}", t.name, t.entries, t.max_rel_error, t.max_abs_error));
    }
    let worst = report.max_rel_error();
    println!("max_relative_error {worst:e}");
    if worst <= a.tol {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: gradient check failed: {worst:e} > {:e}", a.tol);
        Ok(ExitCode::FAILURE)
    }
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Result<ExitCode> {
    if !(a.speed.is_finite() && a.speed > 0.0) {
        bail!("--speed must be positive");
    }
    let s = &ctx.file.serve;
    let host = a.host.or(s.host.clone()).unwrap_or_else(|| "127.0.0.1".into());
    let port = a.port.or(s.port).unwrap_or(DEFAULT_PORT);
    let addr: SocketAddr = format!("{host}:{port}").parse().with_context(|| format!("invalid address {host}:{port}"))?;
    let opts = ServeOptions {
        registry: ctx.registry(&a.registry)?,
        liquids: default_liquids().to_vec(),
        sim: ctx.file.sim(),
        sensor: ctx.file.sensor(),
        timeout: ctx.file.eval.timeout.unwrap_or(pourbench_core::control::DEFAULT_TIMEOUT),
        out: ctx.out.clone().unwrap_or_else(|| PathBuf::from("sessions")),
        seed: ctx.seed,
        speed: a.speed,
        ui: a.ui.or(s.ui.clone()),
    };
    let rt = tokio::runtime::Runtime::new().context("cannot start async runtime")?;
    rt.block_on(async {
        let listener = server::bind(addr).await.with_context(|| format!("cannot bind {addr}"))?;
        let local = listener.local_addr()?;
        // Always printed: callers using --port 0 read the address from here.
        println!("listening on http://{local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        server::serve(listener, opts, shutdown).await.context("server failed")
    })?;
    Ok(ExitCode::SUCCESS)
}

/// One "human" row over every recorded interactive trial.
pub fn human_report(sessions_dir: &Path, registry: &ContainerRegistry, seed: u64) -> Result<ReportDocument> {
    let sessions = server::collect_session_errors(sessions_dir)?;
    let trials: Vec<_> = sessions.iter().flat_map(|s| s.trials.iter()).collect();
    if trials.is_empty() {
        bail!("no recorded trials under {}", sessions_dir.display());
    }
    let errors: Vec<f64> = trials.iter().map(|t| t.error).collect();
    let stats = error_stats(&errors)?;
    let common = |values: Vec<&String>| {
        if values.iter().all(|v| *v == values[0]) {
            values[0].clone()
        } else {
            "mixed".to_string()
        }
    };
    let container = common(trials.iter().map(|t| &t.container).collect());
    let liquid = common(trials.iter().map(|t| &t.liquid).collect());
    let in_training = registry.get(&container).map(|e| e.in_training).unwrap_or(false);
    let viscosity = liquid_by_name(&liquid).map(|l| l.viscosity).unwrap_or(f64::NAN);
    Ok(ReportDocument {
        format_version: crate::FORMAT_VERSION,
        kind: pourbench_core::eval::SweepKind::Containers,
        seed,
        rows: vec![ReportRow {
            condition: "human".into(),
            container,
            liquid,
            viscosity,
            in_training,
            n: stats.n,
            mu_e_ml: stats.mu_e,
            sigma_e_ml: stats.sigma_e,
            errors,
            pours: Vec::new(),
        }],
        physical_reference: report::physical_reference(pourbench_core::eval::SweepKind::Containers),
        config: report::ReportConfig {
            controller: ControllerInfo::Human { sessions: sessions.len() },
            settings: SweepSettings { pours: trials.len(), seed, ..SweepSettings::default() },
            registry_note: crate::registry::INVENTED_DIMENSIONS_NOTE.into(),
            registry: registry.containers.clone(),
        },
    })
}

fn summarize(ctx: &Ctx, a: SummarizeArgs) -> Result<ExitCode> {
    let registry = ctx.registry(&None)?;
    let doc = human_report(&a.sessions, &registry, ctx.seed)?;
    let base = ctx.out.clone().unwrap_or_else(|| PathBuf::from("human"));
    for (path, fmt) in report::report_targets(&base, "human") {
        report::emit_report(&doc, &path, fmt)?;
        ctx.say(format!("wrote {}", path.display()));
    }
    ctx.say(report::render_table(&doc).trim_end());
    Ok(ExitCode::SUCCESS)
}
