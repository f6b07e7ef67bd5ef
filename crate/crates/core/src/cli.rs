//! The `symtaylor` command-line runner.
//!
//! Every command reads one JSON run configuration laid over the built-in
//! defaults for the chosen system, then writes its outputs into `--out`.
//! Outputs depend only on the configuration and the seed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::{flow_endpoints, sample_test_states, write_csv_file, TestDomain};
use crate::error::{Error, Result};
use crate::eval::{
    energy_series, linear_trend, prediction_errors, symplectic_step_map, symplecticity_defect, write_report_csv,
    PredictionReport, ReportSummary,
};
use crate::integrators::IntegrationPlan;
use crate::nbody::{
    compose_pairwise, mean_l1_error, nbody_system, pairwise_config, predict_nbody, ring_state, sample_nbody_state,
    train_pairwise, Composition, NBodyConfig,
};
use crate::phase::{GradientField, PhaseState};
use crate::rng::{stream_seed, Stream};
use crate::systems::{builtin_system, HamiltonianSystem, SystemName};
use crate::taylor::Activation;
use crate::training::{
    make_datasets, train, write_history_csv, Checkpoint, EpochRecord, GradEngine, LossKind, ModelPair, TrainConfig,
    GT_DT,
};

const TAU: f64 = 2.0 * std::f64::consts::PI;

#[derive(Debug, Parser)]
#[command(name = "symtaylor", version, about = "Learn separable Hamiltonian dynamics with symmetric Taylor networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration overriding the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum)]
    pub grad_engine: Option<GradEngine>,
    #[arg(long, global = true, value_enum)]
    pub system: Option<SystemName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write train, validation and test datasets as CSV.
    Gen,
    /// Train a model and write its checkpoint and loss history.
    Train,
    /// Evaluate a checkpoint over the prediction horizon.
    Eval,
    /// Train once per value of one setting and merge the histories.
    Ablate,
    /// Train a two-body model and predict an N-body system with it.
    Nbody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_test: usize,
    pub t_predict: f64,
    /// Noise added to training targets.
    pub noise_std_q: f64,
    pub noise_std_p: f64,
    pub test_domain: TestDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Prediction step.
    pub dt: f64,
    /// Checkpoint to evaluate; `<out>/checkpoint.json` when unset.
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the analytic fields instead of a checkpoint.
    pub oracle: bool,
    /// Start of the energy probe; the first test state when unset.
    pub energy_state: Option<PhaseState>,
    pub energy_horizon: f64,
    /// Finite-difference step for the symplecticity check.
    pub fd_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Activation,
    Loss,
    HiddenWidth,
    Dt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub axis: AblationAxis,
    /// Values to sweep; axis defaults when empty.
    pub values: Vec<Value>,
    /// Trailing epochs averaged into the converged summaries.
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NBodyInitial {
    /// Bodies on a rotating regular polygon.
    Ring { radius: f64 },
    /// A separated random draw with momenta in `[-p_max, p_max]`.
    Random { p_max: f64, index: u64 },
    Explicit { state: PhaseState },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NBodyRun {
    pub bodies: NBodyConfig,
    pub t_predict: f64,
    pub dt: f64,
    pub initial: NBodyInitial,
    pub composition: Composition,
    /// Two-body training settings.
    pub pair: TrainConfig,
    /// Pre-trained pair model; trained from `pair` when unset.
    pub checkpoint: Option<PathBuf>,
    pub fd_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemName,
    pub seed: u64,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
    pub nbody: NBodyRun,
}

impl RunConfig {
    pub fn defaults(system: SystemName, seed: u64) -> Self {
        let mut train = TrainConfig::for_system(system);
        train.seed = seed;
        let t_predict = if system == SystemName::HenonHeiles { 10.0 } else { 10.0 * TAU };
        let test_domain = if builtin_system(system).bodies().is_some() { TestDomain::Box } else { TestDomain::Contained };
        let energy_state = (system == SystemName::Pendulum).then(|| PhaseState::new(vec![1.0], vec![1.0]).expect("valid"));
        RunConfig {
            system,
            seed,
            train,
            data: DataConfig { n_test: 100, t_predict, noise_std_q: 0.0, noise_std_p: 0.0, test_domain },
            eval: EvalConfig {
                dt: 0.01,
                checkpoint: None,
                oracle: false,
                energy_state,
                energy_horizon: 6.0 * TAU,
                fd_h: 1e-5,
            },
            ablate: AblateConfig { axis: AblationAxis::Activation, values: Vec::new(), window: 20 },
            nbody: NBodyRun {
                bodies: NBodyConfig::unit(3),
                t_predict: TAU,
                dt: 0.01,
                initial: NBodyInitial::Ring { radius: 2.5 },
                composition: Composition::invariant(),
                pair: pairwise_config(seed),
                checkpoint: None,
                fd_h: 1e-5,
            },
        }
    }

    /// Builds the configuration for a run: defaults for the system, then
    /// the JSON document, then the command-line overrides. The top-level
    /// `system` and `seed` are copied into the training settings.
    pub fn resolve(
        document: Option<&str>,
        system: Option<SystemName>,
        seed: Option<u64>,
        grad_engine: Option<GradEngine>,
    ) -> Result<Self> {
        let doc: Value = match document {
            Some(text) => serde_json::from_str(text)?,
            None => Value::Object(Default::default()),
        };
        if !doc.is_object() {
            return Err(Error::Config("run configuration must be a JSON object".into()));
        }
        let system = match system {
            Some(s) => s,
            None => match doc.get("system") {
                Some(v) => serde_json::from_value(v.clone())?,
                None => SystemName::Pendulum,
            },
        };
        let seed = match seed {
            Some(s) => s,
            None => match doc.get("seed") {
                Some(v) => serde_json::from_value(v.clone())?,
                None => 0,
            },
        };
        let mut merged = serde_json::to_value(RunConfig::defaults(system, seed))?;
        overlay(&mut merged, doc);
        let mut cfg: RunConfig = serde_json::from_value(merged)?;
        cfg.system = system;
        cfg.seed = seed;
        cfg.train.system = system;
        cfg.train.seed = seed;
        cfg.nbody.pair.seed = seed;
        if let Some(engine) = grad_engine {
            cfg.train.grad_engine = engine;
            cfg.nbody.pair.grad_engine = engine;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.nbody.pair.validate()?;
        self.nbody.bodies.validate()?;
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("data.t_predict", self.data.t_predict)?;
        positive("eval.dt", self.eval.dt)?;
        positive("eval.energy_horizon", self.eval.energy_horizon)?;
        positive("nbody.t_predict", self.nbody.t_predict)?;
        positive("nbody.dt", self.nbody.dt)?;
        if self.data.n_test == 0 {
            return Err(Error::Config("data.n_test must be at least 1".into()));
        }
        if self.ablate.window == 0 {
            return Err(Error::Config("ablate.window must be at least 1".into()));
        }
        Ok(())
    }
}

fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn test_states(system: &HamiltonianSystem, cfg: &RunConfig) -> Result<Vec<PhaseState>> {
    sample_test_states(
        system,
        cfg.data.n_test,
        cfg.data.test_domain,
        cfg.data.t_predict,
        cfg.eval.dt,
        stream_seed(cfg.seed, Stream::Test),
    )
}

/// Writes `train.csv`, `validation.csv` and `test.csv`. Test rows pair each
/// test state with its analytic state at the prediction horizon.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let system = builtin_system(cfg.system);
    let (train_set, validation_set) = make_datasets(&system, &cfg.train, (cfg.data.noise_std_q, cfg.data.noise_std_p))?;
    let test_set = flow_endpoints(&system, test_states(&system, cfg)?, cfg.data.t_predict, GT_DT)?;
    write_csv_file(&out.join("train.csv"), &train_set)?;
    write_csv_file(&out.join("validation.csv"), &validation_set)?;
    write_csv_file(&out.join("test.csv"), &test_set)?;
    Ok(())
}

fn train_model(cfg: &TrainConfig, noise: (f64, f64)) -> Result<(ModelPair, Vec<EpochRecord>)> {
    let system = builtin_system(cfg.system);
    let (train_set, validation_set) = make_datasets(&system, cfg, noise)?;
    let model = ModelPair::from_config(system.dim(), cfg)?;
    train(&system, model, &train_set, &validation_set, cfg)
}

/// Writes `checkpoint.json` and `history.csv`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (model, history) = train_model(&cfg.train, (cfg.data.noise_std_q, cfg.data.noise_std_p))?;
    Checkpoint::new(model, cfg.train.clone()).save(&out.join("checkpoint.json"))?;
    write_history_csv(fs::File::create(out.join("history.csv"))?, &history)?;
    Ok(())
}

fn evaluate<T, V>(gt: &T, gv: &V, system: &HamiltonianSystem, cfg: &RunConfig) -> Result<(PredictionReport, ReportSummary)>
where
    T: GradientField + ?Sized,
    V: GradientField + ?Sized,
{
    let tests = test_states(system, cfg)?;
    let report = prediction_errors(gt, gv, system, &tests, cfg.data.t_predict, cfg.eval.dt)?;
    let probe = cfg.eval.energy_state.clone().unwrap_or_else(|| tests[0].clone());
    let plan = IntegrationPlan::new(0.0, cfg.eval.energy_horizon, cfg.eval.dt)?;
    let (probe_energy_dev, probe_energy_slope) = match energy_series(gt, gv, system, &probe, &plan) {
        Ok(h) => {
            let dev = h.iter().map(|e| (e - h[0]).abs()).fold(0.0, f64::max);
            (dev, linear_trend(&h, cfg.eval.dt))
        }
        Err(Error::NumericFailure { .. }) => (f64::INFINITY, f64::NAN),
        Err(e) => return Err(e),
    };
    let defect = symplecticity_defect(symplectic_step_map(gt, gv, cfg.eval.dt), &probe.to_flat(), cfg.eval.fd_h)?;
    let summary = ReportSummary {
        epsilon_mean: report.epsilon_mean,
        max_energy_dev: report.max_energy_dev,
        symplecticity_defect: defect,
        steps: report.steps(),
        complete: report.complete,
        failure: report.failure.clone(),
        probe_energy_dev,
        probe_energy_slope,
    };
    Ok((report, summary))
}

/// Evaluates a checkpoint (or the analytic fields) and writes `report.csv`
/// and `summary.json`.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<ReportSummary> {
    let system = builtin_system(cfg.system);
    let (report, summary) = if cfg.eval.oracle {
        evaluate(&system.kinetic_field(), &system.potential_field(), &system, cfg)?
    } else {
        let path = cfg.eval.checkpoint.clone().unwrap_or_else(|| out.join("checkpoint.json"));
        let model = Checkpoint::load(&path)?.model()?;
        if model.dim() != system.dim() {
            return Err(Error::DimensionMismatch { expected: system.dim(), got: model.dim() });
        }
        evaluate(&model.tp, &model.vq, &system, cfg)?
    };
    write_report_csv(fs::File::create(out.join("report.csv"))?, &report)?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Converged means of one ablation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub label: String,
    pub train_loss: f64,
    pub validation_l1: f64,
    pub validation_mse: f64,
}

fn ablation_values(cfg: &RunConfig) -> Vec<Value> {
    if !cfg.ablate.values.is_empty() {
        return cfg.ablate.values.clone();
    }
    let t = cfg.train.t_train;
    match cfg.ablate.axis {
        AblationAxis::Activation => vec!["taylor_term".into(), "relu".into()],
        AblationAxis::Loss => vec!["l1".into(), "mse".into()],
        AblationAxis::HiddenWidth => vec![8.into(), 16.into(), 32.into()],
        AblationAxis::Dt => [20.0, 10.0, 5.0, 2.0].iter().map(|n| Value::from(t / n)).collect(),
    }
}

fn ablation_variant(base: &TrainConfig, axis: AblationAxis, value: &Value) -> Result<(String, TrainConfig)> {
    let mut cfg = base.clone();
    let label = match axis {
        AblationAxis::Activation => {
            cfg.activation = serde_json::from_value::<Activation>(value.clone())?;
            serde_json::to_value(cfg.activation)?.as_str().unwrap_or_default().to_owned()
        }
        AblationAxis::Loss => {
            cfg.loss = serde_json::from_value::<LossKind>(value.clone())?;
            cfg.loss.as_str().to_owned()
        }
        AblationAxis::HiddenWidth => {
            cfg.hidden = serde_json::from_value(value.clone())?;
            format!("h{}", cfg.hidden)
        }
        AblationAxis::Dt => {
            cfg.dt = serde_json::from_value(value.clone())?;
            format!("dt{}", cfg.dt)
        }
    };
    cfg.validate()?;
    Ok((label, cfg))
}

fn tail_mean(history: &[EpochRecord], window: usize, f: impl Fn(&EpochRecord) -> f64) -> f64 {
    let tail = &history[history.len().saturating_sub(window)..];
    tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
}

/// Trains one model per axis value from the same seed and writes
/// `ablation.csv` (one column group per value) and `ablation_summary.json`.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<AblationSummary>> {
    let noise = (cfg.data.noise_std_q, cfg.data.noise_std_p);
    let mut runs = Vec::new();
    for value in ablation_values(cfg) {
        let (label, variant) = ablation_variant(&cfg.train, cfg.ablate.axis, &value)?;
        let (_, history) = train_model(&variant, noise)?;
        runs.push((label, history));
    }
    let mut w = csv::Writer::from_path(out.join("ablation.csv"))?;
    let mut header = vec!["epoch".to_owned()];
    for (label, _) in &runs {
        for col in ["train_loss", "validation_l1", "validation_mse"] {
            header.push(format!("{label}_{col}"));
        }
    }
    w.write_record(&header)?;
    for epoch in 0..cfg.train.epochs {
        let mut row = vec![epoch.to_string()];
        for (_, h) in &runs {
            let r = &h[epoch];
            row.extend([r.train_loss, r.validation_l1, r.validation_mse].iter().map(|v| format!("{v:.16e}")));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    let window = cfg.ablate.window;
    let summary: Vec<AblationSummary> = runs
        .iter()
        .map(|(label, h)| AblationSummary {
            label: label.clone(),
            train_loss: tail_mean(h, window, |r| r.train_loss),
            validation_l1: tail_mean(h, window, |r| r.validation_l1),
            validation_mse: tail_mean(h, window, |r| r.validation_mse),
        })
        .collect();
    write_json(&out.join("ablation_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBodyReport {
    pub n_body: usize,
    pub steps: usize,
    pub mean_l1_error: f64,
    pub final_l1_error: f64,
    pub symplecticity_defect: f64,
    pub pair_train_loss: Option<f64>,
}

fn nbody_initial(run: &NBodyRun, seed: u64) -> Result<PhaseState> {
    let s = match &run.initial {
        NBodyInitial::Ring { radius } => {
            if run.bodies.space_dim != 2 {
                return Err(Error::Config("ring initial states are planar".into()));
            }
            ring_state(run.bodies.n_body, *radius)?
        }
        NBodyInitial::Random { p_max, index } => {
            sample_nbody_state(&run.bodies, *p_max, stream_seed(seed, Stream::Test), *index)?
        }
        NBodyInitial::Explicit { state } => state.clone(),
    };
    if s.dim() != run.bodies.dim() {
        return Err(Error::DimensionMismatch { expected: run.bodies.dim(), got: s.dim() });
    }
    Ok(s)
}

fn write_trajectory(path: &Path, states: &[PhaseState], dt: f64, bodies: &NBodyConfig) -> Result<()> {
    let d = bodies.space_dim;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_owned()];
    for j in 0..bodies.n_body {
        header.extend((0..d).map(|c| format!("q{j}_{c}")));
        header.extend((0..d).map(|c| format!("p{j}_{c}")));
    }
    w.write_record(&header)?;
    for (k, s) in states.iter().enumerate() {
        let mut row = vec![format!("{:.16e}", k as f64 * dt)];
        for j in 0..bodies.n_body {
            let block = |x: &[f64]| x[j * d..(j + 1) * d].iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>();
            row.extend(block(s.q()));
            row.extend(block(s.p()));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains (or loads) the pair model, predicts the configured N-body state
/// and writes `pair_checkpoint.json`, `trajectory.csv`, `truth.csv` and
/// `report.json`.
pub fn cmd_nbody(cfg: &RunConfig, out: &Path) -> Result<NBodyReport> {
    let run = &cfg.nbody;
    let (model, pair_train_loss) = match &run.checkpoint {
        Some(path) => (Checkpoint::load(path)?.model()?, None),
        None => {
            let (model, history) = train_pairwise(&run.pair)?;
            Checkpoint::new(model.clone(), run.pair.clone()).save(&out.join("pair_checkpoint.json"))?;
            (model, history.last().map(|r| r.train_loss))
        }
    };
    let system = nbody_system(&run.bodies)?;
    let s0 = nbody_initial(run, cfg.seed)?;
    let plan = IntegrationPlan::new(0.0, run.t_predict, run.dt)?;
    let predicted = predict_nbody(&model, &run.bodies, run.composition, &s0, &plan)?;
    let truth = crate::nbody::true_nbody(&system, &s0, &plan)?;
    let (gt, gv) = compose_pairwise(&model, &run.bodies, run.composition)?;
    let defect = symplecticity_defect(symplectic_step_map(&gt, &gv, run.dt), &s0.to_flat(), run.fd_h)?;
    write_trajectory(&out.join("trajectory.csv"), &predicted, run.dt, &run.bodies)?;
    write_trajectory(&out.join("truth.csv"), &truth, run.dt, &run.bodies)?;
    let report = NBodyReport {
        n_body: run.bodies.n_body,
        steps: plan.steps(),
        mean_l1_error: mean_l1_error(&predicted[1..], &truth[1..])?,
        final_l1_error: predicted.last().zip(truth.last()).map(|(a, b)| a.l1_distance(b)).unwrap_or(0.0),
        symplecticity_defect: defect,
        pair_train_loss,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Caps the global thread pool at `SYMTAYLOR_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(text) = std::env::var("SYMTAYLOR_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("SYMTAYLOR_THREADS must be a positive integer, got {text:?}")))?;
    if n == 0 {
        return Err(Error::Config("SYMTAYLOR_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Runs one parsed command line. The resolved configuration is written to
/// `<out>/config.json` next to the outputs.
pub fn run(cli: &Cli) -> Result<()> {
    let document = cli.config.as_deref().map(fs::read_to_string).transpose()?;
    let cfg = RunConfig::resolve(document.as_deref(), cli.system, cli.seed, cli.grad_engine)?;
    fs::create_dir_all(&cli.out)?;
    write_json(&cli.out.join("config.json"), &cfg)?;
    match cli.command {
        Command::Gen => cmd_gen(&cfg, &cli.out),
        Command::Train => cmd_train(&cfg, &cli.out),
        Command::Eval => cmd_eval(&cfg, &cli.out).map(drop),
        Command::Ablate => cmd_ablate(&cfg, &cli.out).map(drop),
        Command::Nbody => cmd_nbody(&cfg, &cli.out).map(drop),
    }
}

/// The JSON object printed on stderr when a command fails.
pub fn error_json(err: &Error) -> String {
    serde_json::json!({ "error": err.kind(), "message": err.to_string() }).to_string()
}
