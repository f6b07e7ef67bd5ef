mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use common::*;
use symtaylor::cli::{cmd_ablate, cmd_eval, cmd_gen, cmd_nbody, cmd_train, AblationAxis, AblationSummary, RunConfig};
use symtaylor::eval::{rk4_step_map, symmetry_defect, symplectic_step_map, symplecticity_defect};
use symtaylor::integrators::Separable;
use symtaylor::training::{adjoint_gradients, backprop_gradients, LossKind};
use symtaylor::{
    builtin_system, init_net, integrate, rk4_integrate, IntegrationPlan, PhaseState, Result, SystemName,
};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

type Check<'a> = Box<dyn Fn() -> Result<Outcome> + 'a>;

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

fn symmetry() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let h = rng.random_range(1..=16);
        let m = rng.random_range(1..=8);
        let mut net = init_net(n, h, m, rng.random())?;
        let scale = rng.random_range(0.5..3.0);
        net.params_mut().iter_mut().for_each(|w| *w *= scale);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let jmax = net.jacobian(&x)?.amax();
        worst = worst.max(symmetry_defect(&net, &x)? / (1.0 + jmax));
    }
    Ok(Outcome::new(worst < 1e-12, format!("worst normalized defect {worst:.2e}")))
}

fn symplecticity() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    let mut rk4_worse = [0usize; 2];
    for _ in 0..100 {
        let n = rng.random_range(1..=3);
        let mut tp = init_net(n, 8, 4, rng.random())?;
        let mut vq = init_net(n, 8, 4, rng.random())?;
        for w in tp.params_mut().iter_mut().chain(vq.params_mut()) {
            *w *= 3.0;
        }
        let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let field = Separable { grad_t: &tp, grad_v: &vq };
        for (k, dt) in [0.1, 0.01].into_iter().enumerate() {
            let sym = symplecticity_defect(symplectic_step_map(&tp, &vq, dt), &x, 1e-5)?;
            let rk = symplecticity_defect(rk4_step_map(&field, dt), &x, 1e-5)?;
            worst = worst.max(sym);
            rk4_worse[k] += usize::from(rk >= 10.0 * sym);
        }
    }
    // At dt = 0.01 the RK4 defect is O(dt^5) and sits near the finite-difference floor.
    Ok(Outcome::new(
        worst < 1e-6 && rk4_worse[0] >= 90,
        format!(
            "worst defect {worst:.2e}, rk4 at least 10x worse on {}/100 at dt 0.1 ({}/100 at dt 0.01)",
            rk4_worse[0], rk4_worse[1]
        ),
    ))
}

fn integrator_order() -> Result<Outcome> {
    let sys = builtin_system(SystemName::Pendulum);
    let s0 = PhaseState::new(vec![1.0], vec![1.0])?;
    let field = Separable { grad_t: sys.kinetic_field(), grad_v: sys.potential_field() };
    let reference = rk4_integrate(&field, &s0, &IntegrationPlan::new(0.0, 1.0, 1e-4)?)?;
    let error = |dt: f64, rk4: bool| -> Result<f64> {
        let plan = IntegrationPlan::new(0.0, 1.0, dt)?;
        let end = if rk4 {
            rk4_integrate(&field, &s0, &plan)?
        } else {
            integrate(&sys.kinetic_field(), &sys.potential_field(), &s0, &plan, false)?.final_state
        };
        Ok(end.l1_distance(&reference))
    };
    let mut ratios = Vec::new();
    for rk4 in [false, true] {
        for dt in [0.1, 0.05, 0.025] {
            ratios.push(error(dt, rk4)? / error(dt / 2.0, rk4)?);
        }
    }
    let pass = ratios.iter().all(|r| (12.0..=20.0).contains(r));
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    Ok(Outcome::new(pass, format!("ratios symplectic/rk4 [{}]", shown.join(", "))))
}

fn gradient_exactness() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let n = rng.random_range(1..=3);
        let h = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let steps = rng.random_range(1..=5);
        let model = random_model(&mut rng, n, h, m, 1.0);
        let plan = IntegrationPlan::with_steps(0.0, 0.1, steps)?;
        let batch = random_batch(&mut rng, n, 3);
        let kind = if case % 2 == 0 { LossKind::L1 } else { LossKind::Mse };
        let (l, an) = backprop_gradients(&model, &batch, &plan, kind)?;
        let fd = fd_gradients(&model, &batch, &plan, kind, 1e-6);
        worst = worst.max(fd_check(&an, &fd, fd_noise(l, 1e-6)));
    }
    let model = random_model(&mut rng, 1, 16, 8, 0.3);
    let plan = IntegrationPlan::new(0.0, 0.01, 1e-3)?;
    let batch = pendulum_batch(4);
    let (_, gb) = backprop_gradients(&model, &batch, &plan, LossKind::L1)?;
    let (_, ga) = adjoint_gradients(&model, &batch, &plan, LossKind::L1)?;
    let adjoint = group_discrepancy(&ga, &gb);
    Ok(Outcome::new(
        worst <= 1.0 && adjoint < 1e-4,
        format!("worst fd error/bound {worst:.2e}, adjoint vs backprop {adjoint:.2e}"),
    ))
}

fn last_history_row(dir: &Path) -> Result<(f64, f64)> {
    let mut reader = csv::Reader::from_path(dir.join("history.csv"))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).expect("history column");
    let (train, validation) = (col("train_loss"), col("validation_loss"));
    let last = reader.records().last().expect("history rows")?;
    let parse = |i: usize| last[i].parse::<f64>().expect("number");
    Ok((parse(train), parse(validation)))
}

fn pendulum_training(seed0: &Path) -> Result<Outcome> {
    let mut passed = 0;
    let mut details = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..5u64 {
        let scratch = tempdir();
        let dir = if seed == 0 { seed0 } else { scratch.path() };
        let cfg = RunConfig::resolve(None, Some(SystemName::Pendulum), Some(seed), None)?;
        let start = Instant::now();
        cmd_train(&cfg, dir)?;
        slowest = slowest.max(start.elapsed());
        let (train, validation) = last_history_row(dir)?;
        passed += usize::from(train <= 1e-3 && validation <= 1e-3);
        details.push(format!("seed {seed}: {train:.2e}/{validation:.2e}"));
    }
    Ok(Outcome::new(
        passed >= 4 && slowest < minutes(5),
        format!("{passed}/5 seeds pass, slowest run {slowest:.1?}; {}", details.join(", ")),
    ))
}

fn long_horizon(seed0: &Path) -> Result<Outcome> {
    let cfg = RunConfig::resolve(None, Some(SystemName::Pendulum), Some(0), None)?;
    let s = cmd_eval(&cfg, seed0)?;
    let pass = s.complete
        && s.epsilon_mean <= 1.0
        && s.probe_energy_dev < 0.1
        && s.probe_energy_slope.abs() < 1e-3;
    Ok(Outcome::new(
        pass,
        format!(
            "eps {:.3}, probe |H-H0| {:.2e}, slope {:.2e}, {} steps",
            s.epsilon_mean, s.probe_energy_dev, s.probe_energy_slope, s.steps
        ),
    ))
}

fn ablation(axis: AblationAxis, epochs: Option<usize>) -> Result<Vec<AblationSummary>> {
    let dir = tempdir();
    let mut cfg = RunConfig::resolve(None, Some(SystemName::Pendulum), Some(0), None)?;
    cfg.ablate.axis = axis;
    if let Some(epochs) = epochs {
        cfg.train.epochs = epochs;
    }
    cmd_ablate(&cfg, dir.path())
}

fn activation_ablation() -> Result<Outcome> {
    let runs = ablation(AblationAxis::Activation, Some(300))?;
    let (taylor, relu) = (runs[0].train_loss, runs[1].train_loss);
    Ok(Outcome::new(
        3.0 * taylor <= relu,
        format!("{} {taylor:.2e}, {} {relu:.2e}, ratio {:.2}", runs[0].label, runs[1].label, relu / taylor),
    ))
}

fn loss_ablation() -> Result<Outcome> {
    let runs = ablation(AblationAxis::Loss, None)?;
    let (l1, mse) = (&runs[0], &runs[1]);
    Ok(Outcome::new(
        l1.validation_l1 <= mse.validation_l1 && l1.validation_mse <= mse.validation_mse,
        format!(
            "l1-trained {:.2e}/{:.2e}, mse-trained {:.2e}/{:.2e} (val l1/mse)",
            l1.validation_l1, l1.validation_mse, mse.validation_l1, mse.validation_mse
        ),
    ))
}

fn noise_robustness() -> Result<Outcome> {
    let mut pass = true;
    let mut details = Vec::new();
    for (sigma, t_train) in [(0.1, 0.5), (0.5, 1.0)] {
        let dir = tempdir();
        let mut cfg = RunConfig::resolve(None, Some(SystemName::Pendulum), Some(0), None)?;
        cfg.train.t_train = t_train;
        cfg.train.dt = t_train / 10.0;
        cfg.train.n_train = 50;
        cfg.data.noise_std_q = sigma;
        cfg.data.noise_std_p = sigma;
        cmd_train(&cfg, dir.path())?;
        let s = cmd_eval(&cfg, dir.path())?;
        pass &= s.complete && s.epsilon_mean.is_finite() && s.epsilon_mean <= 5.0;
        details.push(format!("sigma {sigma}: eps {:.3}", s.epsilon_mean));
    }
    Ok(Outcome::new(pass, details.join(", ")))
}

fn other_systems() -> Result<Outcome> {
    let mut pass = true;
    let mut details = Vec::new();
    for system in [SystemName::LotkaVolterra, SystemName::Kepler, SystemName::HenonHeiles] {
        let dir = tempdir();
        let cfg = RunConfig::resolve(None, Some(system), Some(0), None)?;
        let start = Instant::now();
        cmd_train(&cfg, dir.path())?;
        let elapsed = start.elapsed();
        let (train, _) = last_history_row(dir.path())?;
        pass &= train <= 1e-2 && elapsed < minutes(15);
        details.push(format!("{system} {train:.2e} in {elapsed:.1?}"));
    }
    Ok(Outcome::new(pass, details.join(", ")))
}

fn nbody() -> Result<Outcome> {
    let dir = tempdir();
    let cfg = RunConfig::resolve(None, Some(SystemName::Kepler), Some(0), None)?;
    let r = cmd_nbody(&cfg, dir.path())?;
    Ok(Outcome::new(
        r.mean_l1_error <= 0.5 && r.symplecticity_defect < 1e-6,
        format!(
            "{} bodies over {} steps: mean L1 {:.3}, defect {:.2e}",
            r.n_body, r.steps, r.mean_l1_error, r.symplecticity_defect
        ),
    ))
}

fn run_pipeline(dir: &Path) -> Result<()> {
    let cfg = RunConfig::resolve(None, Some(SystemName::Pendulum), Some(7), None)?;
    cmd_gen(&cfg, dir)?;
    cmd_train(&cfg, dir)?;
    cmd_eval(&cfg, dir)?;
    Ok(())
}

fn determinism() -> Result<Outcome> {
    let (a, b) = (tempdir(), tempdir());
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let files = ["train.csv", "validation.csv", "test.csv", "checkpoint.json", "history.csv", "report.csv", "summary.json"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .collect();
    let summary: Value = serde_json::from_slice(&std::fs::read(a.path().join("summary.json"))?)?;
    Ok(Outcome::new(
        differing.is_empty(),
        format!("{} files compared, differing {differing:?}, eps {}", files.len(), summary["epsilon_mean"]),
    ))
}

fn main() -> ExitCode {
    let seed0 = tempdir();
    let checks: Vec<(&str, Duration, Check)> = vec![
        ("A1", Duration::from_secs(10), Box::new(symmetry)),
        ("A2", minutes(1), Box::new(symplecticity)),
        ("A3", Duration::from_secs(10), Box::new(integrator_order)),
        ("A4", minutes(2), Box::new(gradient_exactness)),
        ("A5", minutes(25), Box::new(|| pendulum_training(seed0.path()))),
        ("A6", minutes(1), Box::new(|| long_horizon(seed0.path()))),
        ("A7", minutes(15), Box::new(activation_ablation)),
        ("A8", minutes(15), Box::new(loss_ablation)),
        ("A9", minutes(20), Box::new(noise_robustness)),
        ("A10", minutes(45), Box::new(other_systems)),
        ("A11", minutes(20), Box::new(nbody)),
        ("A12", minutes(30), Box::new(determinism)),
    ];
    let mut failed = 0;
    for (id, budget, check) in &checks {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(o) => (o.pass && elapsed < *budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("{id} {} {detail} [{elapsed:.1?} of {budget:?}]", if pass { "PASS" } else { "FAIL" });
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
