//! Training the two gradient networks from endpoint pairs.

mod adam;
mod adjoint;
mod backprop;
mod checkpoint;
mod loss;
mod schedule;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use adjoint::{adjoint_gradients, adjoint_gradients_with, AdjointCoupling, AdjointState};
pub use backprop::{backprop_gradients, rollout, Rollout};
pub use checkpoint::Checkpoint;
pub use loss::{loss, LossKind};
pub use schedule::step_decay;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_for, SamplePair};
use crate::error::{check_dim, Error, Result};
use crate::integrators::IntegrationPlan;
use crate::rng::{stream_seed, Stream};
use crate::systems::{HamiltonianSystem, SystemName};
use crate::taylor::{init_net_with, Activation, TaylorGradNet};

/// The learned kinetic gradient `T_p(p)` and potential gradient `V_q(q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPair {
    pub tp: TaylorGradNet,
    pub vq: TaylorGradNet,
}

impl ModelPair {
    pub fn new(tp: TaylorGradNet, vq: TaylorGradNet) -> Result<Self> {
        check_dim(tp.dim(), vq.dim())?;
        Ok(ModelPair { tp, vq })
    }

    /// Fresh random networks seeded from the `InitKinetic`/`InitPotential`
    /// sub-streams of `seed`.
    pub fn init(dim: usize, hidden: usize, terms: usize, activation: Activation, seed: u64) -> Result<Self> {
        Ok(ModelPair {
            tp: init_net_with(dim, hidden, terms, activation, stream_seed(seed, Stream::InitKinetic))?,
            vq: init_net_with(dim, hidden, terms, activation, stream_seed(seed, Stream::InitPotential))?,
        })
    }

    /// Random model shaped by `cfg`.
    pub fn from_config(dim: usize, cfg: &TrainConfig) -> Result<Self> {
        Self::init(dim, cfg.hidden, cfg.terms, cfg.activation, cfg.seed)
    }

    pub fn dim(&self) -> usize {
        self.tp.dim()
    }
}

/// Gradients for both parameter groups, laid out like
/// [`TaylorGradNet::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub tp: Vec<f64>,
    pub vq: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros(model: &ModelPair) -> Self {
        ModelGrads { tp: vec![0.0; model.tp.n_params()], vq: vec![0.0; model.vq.n_params()] }
    }

    fn add(&mut self, other: &ModelGrads) {
        for (a, b) in self.tp.iter_mut().zip(&other.tp) {
            *a += b;
        }
        for (a, b) in self.vq.iter_mut().zip(&other.vq) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tp.iter().chain(&self.vq).fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GradEngine {
    #[default]
    Backprop,
    Adjoint,
}

/// Loss and gradients with the selected engine.
pub fn gradients(
    engine: GradEngine,
    model: &ModelPair,
    batch: &[SamplePair],
    plan: &IntegrationPlan,
    kind: LossKind,
) -> Result<(f64, ModelGrads)> {
    match engine {
        GradEngine::Backprop => backprop_gradients(model, batch, plan, kind),
        GradEngine::Adjoint => adjoint_gradients(model, batch, plan, kind),
    }
}

/// Ground-truth integrator step for generated data.
pub const GT_DT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub system: SystemName,
    pub t_train: f64,
    /// Integrator step inside training rollouts.
    pub dt: f64,
    pub epochs: usize,
    pub lr0: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub loss: LossKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    pub terms: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub grad_engine: GradEngine,
    /// Samples per optimizer step, taken in dataset order; `None` trains
    /// full-batch with one step per epoch.
    pub batch_size: Option<usize>,
}

impl TrainConfig {
    /// Default settings for each benchmark system.
    pub fn for_system(system: SystemName) -> Self {
        let (n_train, epochs, lr0, terms, hidden) = match system {
            SystemName::Pendulum => (15, 100, 0.002, 8, 16),
            SystemName::LotkaVolterra => (25, 150, 0.003, 8, 8),
            SystemName::Kepler => (25, 50, 0.001, 20, 8),
            SystemName::HenonHeiles => (25, 100, 0.001, 12, 16),
        };
        let t_train = 0.01;
        TrainConfig {
            system,
            t_train,
            dt: t_train / 10.0,
            epochs,
            lr0,
            step_size: 10,
            gamma: 0.8,
            loss: LossKind::L1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            n_train,
            n_validation: 100,
            terms,
            hidden,
            activation: Activation::TaylorTerm,
            grad_engine: GradEngine::Backprop,
            batch_size: Some(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.t_train.is_finite() && self.t_train > 0.0) {
            return bad(format!("t_train must be positive, got {}", self.t_train));
        }
        if !(self.dt.is_finite() && self.dt > 0.0 && self.dt <= self.t_train) {
            return bad(format!("dt must be in (0, t_train], got {}", self.dt));
        }
        let n = (self.t_train / self.dt).round();
        if (n * self.dt - self.t_train).abs() > 1e-12 * self.t_train.max(1.0) {
            return bad(format!("dt {} does not divide t_train {}", self.dt, self.t_train));
        }
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if self.step_size == 0 {
            return bad("step_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<IntegrationPlan> {
        IntegrationPlan::new(0.0, self.t_train, self.dt)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(epoch, self)
    }
}

/// Learning rate for a 0-based epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    step_decay(epoch, cfg.lr0, cfg.step_size, cfg.gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch, each batch measured before its step.
    pub train_loss: f64,
    /// Validation loss after the epoch's update, under the training loss kind.
    pub validation_loss: f64,
    pub validation_l1: f64,
    pub validation_mse: f64,
    pub lr: f64,
}

/// L1 and MSE losses of the model over `data` (NaN for an empty set).
pub fn evaluate_losses(model: &ModelPair, data: &[SamplePair], plan: &IntegrationPlan) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let parts: Vec<(f64, f64)> = data
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let ro = rollout(model, &pair.initial, plan).map_err(|e| e.at_sample(i))?;
            check_dim(ro.final_state.dim(), pair.final_state.dim())?;
            Ok((
                loss::sample_loss(&ro.final_state, &pair.final_state, LossKind::L1),
                loss::sample_loss(&ro.final_state, &pair.final_state, LossKind::Mse),
            ))
        })
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    let (l1, mse) = parts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    Ok((l1 / n, mse / n))
}

/// Loss of the model over `data` under `kind`.
pub fn evaluate_loss(model: &ModelPair, data: &[SamplePair], plan: &IntegrationPlan, kind: LossKind) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (l1, mse) = evaluate_losses(model, data, plan)?;
    Ok(match kind {
        LossKind::L1 => l1,
        LossKind::Mse => mse,
    })
}

/// Training and validation sets for `cfg`, drawn from the `Train` and
/// `Validation` streams. Noise is added to the training targets only.
pub fn make_datasets(
    system: &HamiltonianSystem,
    cfg: &TrainConfig,
    noise: (f64, f64),
) -> Result<(Vec<SamplePair>, Vec<SamplePair>)> {
    cfg.validate()?;
    let gt_dt = GT_DT.min(cfg.dt);
    let train = generate_for(system, cfg.n_train, cfg.t_train, gt_dt, noise, stream_seed(cfg.seed, Stream::Train))?;
    let validation = generate_for(
        system,
        cfg.n_validation,
        cfg.t_train,
        gt_dt,
        (0.0, 0.0),
        stream_seed(cfg.seed, Stream::Validation),
    )?;
    Ok((train, validation))
}

/// Trains for `cfg.epochs` passes over `train_set`. Each pass walks the
/// samples in order in batches of `cfg.batch_size` (all of them when
/// unset) and takes one Adam step per batch for each parameter group.
pub fn train(
    system: &HamiltonianSystem,
    mut model: ModelPair,
    train_set: &[SamplePair],
    validation_set: &[SamplePair],
    cfg: &TrainConfig,
) -> Result<(ModelPair, Vec<EpochRecord>)> {
    cfg.validate()?;
    check_dim(system.dim(), model.dim())?;
    if cfg.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    if train_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let plan = cfg.plan()?;
    let adam = cfg.adam();
    let mut st_tp = AdamState::new(model.tp.n_params());
    let mut st_vq = AdamState::new(model.vq.n_params());
    let batch_size = cfg.batch_size.unwrap_or(train_set.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut step = |model: &mut ModelPair| -> Result<EpochRecord> {
            let mut train_loss = 0.0;
            for batch in train_set.chunks(batch_size) {
                let (l, grads) = gradients(cfg.grad_engine, model, batch, &plan, cfg.loss)?;
                train_loss += l * batch.len() as f64;
                adam_step(model.tp.params_mut(), &grads.tp, &mut st_tp, lr, &adam)?;
                adam_step(model.vq.params_mut(), &grads.vq, &mut st_vq, lr, &adam)?;
                if model.tp.params().iter().chain(model.vq.params()).any(|v| !v.is_finite()) {
                    return Err(Error::NumericFailure { step: 0, substep: 0 });
                }
            }
            let train_loss = train_loss / train_set.len() as f64;
            let (validation_l1, validation_mse) = evaluate_losses(model, validation_set, &plan)?;
            let validation_loss = match cfg.loss {
                LossKind::L1 => validation_l1,
                LossKind::Mse => validation_mse,
            };
            Ok(EpochRecord { epoch, train_loss, validation_loss, validation_l1, validation_mse, lr })
        };
        history.push(step(&mut model).map_err(|e| e.at_epoch(epoch))?);
    }
    Ok((model, history))
}

/// Writes `epoch,train_loss,validation_loss,validation_l1,validation_mse,lr` rows.
pub fn write_history_csv<W: std::io::Write>(writer: W, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "train_loss", "validation_loss", "validation_l1", "validation_mse", "lr"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            format!("{:.16e}", r.train_loss),
            format!("{:.16e}", r.validation_loss),
            format!("{:.16e}", r.validation_l1),
            format!("{:.16e}", r.validation_mse),
            format!("{:.16e}", r.lr),
        ])?;
    }
    w.flush()?;
    Ok(())
}
