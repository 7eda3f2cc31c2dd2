//! Command-line front end. The binary only forwards its arguments here.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    empirical_lyapunov_check, latent_probes, lipschitz_diagnostic, robustness_experiment, NoiseKind, Probes,
};
use crate::config::{loss_curve_csv, with_echo, write_json, MetricsRecord, RunConfig};
use crate::datagen::{generate_dataset, load_dataset, write_dataset, Dataset, System};
use crate::error::{Error, Result};
use crate::model::{Model, Variant};
use crate::seed::tagged_rng;
use crate::train::{copy_last_baseline, evaluate, train};

#[derive(Debug, Parser)]
#[command(name = "tiode", version, about = "Graph neural ODE forecaster with time-weighted basis interactions")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for per-example work.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a particle dataset.
    Generate(GenerateArgs),
    /// Train a model and write its checkpoint, metrics and loss curve.
    Train(TrainArgs),
    /// Score a checkpoint on the test split.
    Eval(EvalArgs),
    /// Train an ablated variant.
    Ablate(TrainArgs),
    /// Perturb initial states and track the divergence of trajectories.
    Robustness(RobustnessArgs),
    /// Lipschitz constants, growth bounds and the Lyapunov check.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub system: Option<System>,
    /// Training examples; validation and test get a fifth each (at least 1).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long)]
    pub condition_len: Option<usize>,
    #[arg(long)]
    pub prediction_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub variant: Variant,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Forecast length; defaults to the dataset's prediction length.
    #[arg(long)]
    pub pred_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint of the model under study.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Checkpoint of the unified-interaction baseline.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_enum)]
    pub noise_kind: Option<NoiseKind>,
    /// Test examples to average over; 0 means all.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Unified-interaction checkpoint for the verdict.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub probes: Option<usize>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.sim.seed = s;
    }
    Ok(cfg)
}

/// Creates `dir`, refusing a non-empty one unless `force` is set.
pub fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(Error::Usage(format!(
                "output directory {} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.jobs == 0 {
        return Err(Error::Usage("--jobs must be at least 1".into()));
    }
    let mut cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Generate(a) => cmd_generate(cli, &mut cfg, a),
        Command::Train(a) | Command::Ablate(a) => cmd_train(cli, &mut cfg, a),
        Command::Eval(a) => cmd_eval(cli, &cfg, a),
        Command::Robustness(a) => cmd_robustness(cli, &mut cfg, a),
        Command::Diagnose(a) => cmd_diagnose(cli, &mut cfg, a),
    }
}

fn cmd_generate(cli: &Cli, cfg: &mut RunConfig, a: &GenerateArgs) -> Result<()> {
    if let Some(s) = a.system {
        cfg.sim.system = s;
    }
    if let Some(n) = a.samples {
        if n == 0 {
            return Err(Error::Usage("--samples must be positive".into()));
        }
        cfg.splits.train = n;
        cfg.splits.valid = (n / 5).max(1);
        cfg.splits.test = (n / 5).max(1);
    }
    if let Some(n) = a.particles {
        cfg.sim.n_particles = n;
    }
    if let Some(t) = a.timesteps {
        cfg.sim.n_timesteps = t;
    }
    if let Some(c) = a.condition_len {
        cfg.condition_len = c;
    }
    if let Some(p) = a.prediction_len {
        cfg.prediction_len = p;
    }
    cfg.validate()?;
    prepare_out(&cli.out, cli.force)?;
    let ds = generate_dataset(&cfg.sim, cfg.splits, cfg.condition_len, cfg.prediction_len)?;
    write_dataset(&ds, &cli.out)?;
    println!(
        "wrote {} to {}: S={}/{}/{} T={} N={} d={}",
        cfg.sim.system.name(),
        cli.out.display(),
        ds.train.samples,
        ds.valid.samples,
        ds.test.samples,
        ds.train.timesteps,
        ds.train.nodes,
        ds.train.features
    );
    Ok(())
}

fn load_data(path: &Path, cfg: &mut RunConfig) -> Result<Dataset> {
    let ds = load_dataset(path)?;
    cfg.condition_len = ds.condition_len;
    cfg.prediction_len = ds.prediction_len;
    if let Some(sim) = &ds.sim {
        cfg.sim = sim.clone();
    }
    Ok(ds)
}

fn cmd_train(cli: &Cli, cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.validate()?;
    let ds = load_data(&a.data, cfg)?;
    prepare_out(&cli.out, cli.force)?;
    let outcome = train(&ds, &cfg.model.variant(a.variant), &cfg.train, cfg.seed, cli.jobs)?;
    outcome.model.save(&cli.out.join("checkpoint"))?;
    fs::write(cli.out.join("loss_curve.csv"), loss_curve_csv(&outcome.curve))?;
    let m = evaluate(&outcome.model, &ds, ds.prediction_len, cli.jobs)?;
    let base = copy_last_baseline(&ds, ds.prediction_len)?;
    let mut record = MetricsRecord::new(cfg, a.variant.name(), ds.prediction_len, m, base);
    record.best_epoch = Some(outcome.best_epoch);
    write_json(&cli.out.join("metrics.json"), &record)?;
    println!(
        "{}: test mse {:.6} mae {:.6} (copy-last mse {:.6}), best epoch {}",
        a.variant.name(),
        m.mse,
        m.mae,
        base.mse,
        outcome.best_epoch
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, cfg: &RunConfig, a: &EvalArgs) -> Result<()> {
    let mut cfg = cfg.clone();
    let ds = load_data(&a.data, &mut cfg)?;
    let model = Model::load(&a.checkpoint)?;
    let pred = a.pred_len.unwrap_or(ds.prediction_len);
    let m = evaluate(&model, &ds, pred, cli.jobs)?;
    let base = copy_last_baseline(&ds, pred)?;
    cfg.model = model.cfg.clone();
    prepare_out(&cli.out, cli.force)?;
    let variant = variant_name(&model);
    write_json(&cli.out.join("metrics.json"), &MetricsRecord::new(&cfg, variant, pred, m, base))?;
    println!("test mse {:.6} mae {:.6} over {pred} steps", m.mse, m.mae);
    Ok(())
}

fn variant_name(model: &Model) -> &'static str {
    use crate::dynamics::FieldMode;
    match model.cfg.dynamics.mode {
        FieldMode::Unified => "unified",
        FieldMode::NoW => "no_w",
        FieldMode::TiOde if model.cfg.dynamics.bases == 1 => "no_o",
        FieldMode::TiOde if model.cfg.encoder.randnets == 0 => "no_r",
        FieldMode::TiOde => "full",
    }
}

fn cmd_robustness(cli: &Cli, cfg: &mut RunConfig, a: &RobustnessArgs) -> Result<()> {
    if let Some(n) = a.noise {
        cfg.robustness.noise = n;
    }
    if let Some(h) = a.horizon {
        cfg.robustness.horizon = h;
    }
    if let Some(k) = a.noise_kind {
        cfg.robustness.noise_kind = k;
    }
    if let Some(s) = a.samples {
        cfg.robustness.samples = s;
    }
    cfg.validate()?;
    let ds = load_data(&a.data, cfg)?;
    let model = Model::load(&a.checkpoint)?;
    cfg.model = model.cfg.clone();
    let reference = a.reference.as_deref().map(Model::load).transpose()?;
    let mut models = vec![(variant_name(&model), &model)];
    if let Some(r) = &reference {
        models.push(("reference", r));
    }
    let (report, _) = robustness_experiment(&models, &ds, &cfg.robustness, cfg.seed)?;
    prepare_out(&cli.out, cli.force)?;
    fs::write(cli.out.join("robustness.csv"), report.to_csv())?;
    write_json(&cli.out.join("robustness.json"), &with_echo(cfg, &report)?)?;
    println!(
        "noise {} horizon {} ({:?})",
        report.config.noise, report.config.horizon, report.config.noise_kind
    );
    for s in &report.series {
        println!("{}: cumulative latent error {:.6}", s.model, s.latent_cumulative);
    }
    Ok(())
}

fn cmd_diagnose(cli: &Cli, cfg: &mut RunConfig, a: &DiagnoseArgs) -> Result<()> {
    if let Some(p) = a.probes {
        cfg.diagnostic.probes = p;
    }
    cfg.validate()?;
    let ds = load_data(&a.data, cfg)?;
    let model = Model::load(&a.checkpoint)?;
    cfg.model = model.cfg.clone();
    let reference = a.reference.as_deref().map(Model::load).transpose()?;
    let (_, trajs) = robustness_experiment(&[("model", &model)], &ds, &cfg.robustness, cfg.seed)?;
    let d = &cfg.diagnostic;
    let mut probes = latent_probes(
        &model,
        &ds,
        d.box_samples,
        d.probes,
        d.margin,
        &mut tagged_rng(cfg.seed, "probes", 0),
    )?;
    for t in &trajs[0] {
        probes.extend(&Probes::from_trajectory(t));
    }
    let report = lipschitz_diagnostic(&model, ds.train.nodes, &probes, reference.as_ref())?;
    let checks = trajs[0]
        .iter()
        .map(|t| empirical_lyapunov_check(&model, t, &report))
        .collect::<Result<Vec<_>>>()?;
    let passed = checks.iter().all(|c| c.passed);
    let worst = checks.iter().map(|c| c.worst_margin).fold(f64::INFINITY, f64::min);
    prepare_out(&cli.out, cli.force)?;
    let body = serde_json::json!({
        "variant": variant_name(&model),
        "report": report,
        "lyapunov": {
            "trajectories": checks.len(),
            "passed": passed,
            "worst_margin": worst,
        },
    });
    write_json(&cli.out.join("diagnostic.json"), &with_echo(cfg, &body)?)?;
    println!(
        "sum L^k {:.4}, sum alpha {:.4}, verdict {}, lyapunov check {}",
        report.sum_l_k,
        report.sum_alpha,
        match report.verdict {
            Some(true) => "holds",
            Some(false) => "fails",
            None => "omitted",
        },
        if passed { "passed" } else { "FAILED" }
    );
    Ok(())
}
