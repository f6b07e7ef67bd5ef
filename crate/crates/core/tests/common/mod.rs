//! Helpers shared by the gradient tests and the acceptance run.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use symtaylor::datagen::{generate_dataset, DatasetSpec, SamplePair};
use symtaylor::training::{evaluate_loss, LossKind, ModelGrads, ModelPair};
use symtaylor::{Activation, IntegrationPlan, PhaseState, SystemName, TaylorGradNet};

pub fn random_model(rng: &mut ChaCha8Rng, n: usize, h: usize, m: usize, weight: f64) -> ModelPair {
    let mut model = ModelPair::init(n, h, m, Activation::TaylorTerm, rng.random()).unwrap();
    for net in [&mut model.tp, &mut model.vq] {
        for w in net.params_mut() {
            *w = rng.random_range(-weight..weight);
        }
    }
    model
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<SamplePair> {
    let v = |r: &mut ChaCha8Rng| (0..n).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    (0..len)
        .map(|_| {
            let a = PhaseState::new(v(rng), v(rng)).unwrap();
            let b = PhaseState::new(v(rng), v(rng)).unwrap();
            SamplePair::new(a, b).unwrap()
        })
        .collect()
}

pub fn net_mut(m: &mut ModelPair, which: usize) -> &mut TaylorGradNet {
    if which == 0 {
        &mut m.tp
    } else {
        &mut m.vq
    }
}

/// Central differences of the batch loss for every parameter of both nets.
pub fn fd_gradients(model: &ModelPair, batch: &[SamplePair], plan: &IntegrationPlan, kind: LossKind, h: f64) -> ModelGrads {
    let probe = |m: &ModelPair| evaluate_loss(m, batch, plan, kind).unwrap();
    let mut g = ModelGrads::zeros(model);
    for which in 0..2 {
        let len = if which == 0 { model.tp.n_params() } else { model.vq.n_params() };
        for k in 0..len {
            let mut plus = model.clone();
            let mut minus = model.clone();
            net_mut(&mut plus, which).params_mut()[k] += h;
            net_mut(&mut minus, which).params_mut()[k] -= h;
            let d = (probe(&plus) - probe(&minus)) / (2.0 * h);
            if which == 0 {
                g.tp[k] = d;
            } else {
                g.vq[k] = d;
            }
        }
    }
    g
}

/// Largest `|x − y| / (max(|x|, |y|) + floor)` over all parameters.
pub fn worst_mismatch(a: &ModelGrads, b: &ModelGrads, floor: f64) -> f64 {
    a.tp.iter()
        .zip(&b.tp)
        .chain(a.vq.iter().zip(&b.vq))
        .map(|(x, y)| (x - y).abs() / (x.abs().max(y.abs()) + floor))
        .fold(0.0, f64::max)
}

/// Roundoff bound of a central difference of a loss of size `loss` with step `h`.
pub fn fd_noise(loss: f64, h: f64) -> f64 {
    4.0 * f64::EPSILON * (1.0 + loss.abs()) / h
}

/// Passes when `|an − fd| ≤ 1e-5·max(|an|, |fd|) + noise` for every parameter;
/// returns the worst ratio of the error to that bound.
pub fn fd_check(an: &ModelGrads, fd: &ModelGrads, noise: f64) -> f64 {
    an.tp
        .iter()
        .zip(&fd.tp)
        .chain(an.vq.iter().zip(&fd.vq))
        .map(|(x, y)| (x - y).abs() / (1e-5 * x.abs().max(y.abs()) + noise))
        .fold(0.0, f64::max)
}

pub fn pendulum_batch(seed: u64) -> Vec<SamplePair> {
    generate_dataset(&DatasetSpec {
        system: SystemName::Pendulum,
        n_samples: 6,
        horizon: 0.01,
        gt_dt: 1e-3,
        noise_std_q: 0.0,
        noise_std_p: 0.0,
        seed,
    })
    .unwrap()
}

/// Per network, the largest absolute difference relative to the largest
/// entry of `b`; the worse of the two.
pub fn group_discrepancy(a: &ModelGrads, b: &ModelGrads) -> f64 {
    let rel = |x: &[f64], y: &[f64]| {
        let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max) / scale
    };
    rel(&a.tp, &b.tp).max(rel(&a.vq, &b.vq))
}
