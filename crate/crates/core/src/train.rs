//! ComplexLoss training: loss and gradient, Adam, the epoch loop and
//! finite-difference gradient verification.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Pair;
use crate::error::{Error, Result};
use crate::net::{Gradients, Model, Tensor};
use crate::par::{self, Exec};

/// Weights of `alpha * MSE + beta * MAE + gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.3,
            gamma: 0.2,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(
                "loss alpha and beta must be >= 0, gamma finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "estimate {:?} vs target {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn complex_loss(estimate: &Tensor, target: &Tensor, cfg: &LossConfig) -> Result<f64> {
    check_same_shape(estimate, target)?;
    let n = estimate.len().max(1) as f64;
    let (sq, abs) = estimate
        .data()
        .iter()
        .zip(target.data())
        .fold((0.0, 0.0), |(sq, abs), (e, t)| {
            let d = e - t;
            (sq + d * d, abs + d.abs())
        });
    Ok(cfg.alpha * sq / n + cfg.beta * abs / n + cfg.gamma)
}

/// `alpha * 2(e - t)/N + beta * sign(e - t)/N`, with `sign(0) = 0`.
pub fn complex_loss_grad(estimate: &Tensor, target: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    check_same_shape(estimate, target)?;
    let n = estimate.len().max(1) as f64;
    let data = estimate
        .data()
        .iter()
        .zip(target.data())
        .map(|(e, t)| {
            let d = e - t;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            cfg.alpha * 2.0 * d / n + cfg.beta * sign / n
        })
        .collect();
    Tensor::new(data, estimate.shape().to_vec())
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &OptimConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters, {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != grads.len() || state.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
        return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Loss and parameter gradients for one noisy/clean pair.
pub fn pair_gradients(model: &Model, pair: &Pair, loss_cfg: &LossConfig) -> Result<(f64, Gradients)> {
    let input = Tensor::from_signal(&pair.noisy);
    let target = Tensor::from_signal(&pair.clean);
    let (estimate, cache) = model.forward_cached(&input)?;
    let loss = complex_loss(&estimate, &target, loss_cfg)?;
    let grad = complex_loss_grad(&estimate, &target, loss_cfg)?;
    Ok((loss, model.backward(&cache, &grad)?))
}

/// Mean loss over `pairs` without updating the model.
pub fn evaluate_loss(model: &Model, pairs: &[Pair], loss_cfg: &LossConfig, exec: Exec) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let losses = par::try_map(exec, pairs, |_, p| {
        let est = model.forward(&Tensor::from_signal(&p.noisy))?;
        complex_loss(&est, &Tensor::from_signal(&p.clean), loss_cfg)
    })?;
    Ok(losses.iter().sum::<f64>() / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainStats {
    pub epochs: Vec<EpochStats>,
    pub wall_seconds: f64,
    pub checkpoint: Option<std::path::PathBuf>,
}

impl TrainStats {
    /// `epoch,mean_loss,seconds` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{:.9},{:.3}\n", e.epoch, e.mean_loss, e.seconds));
        }
        out
    }
}

/// Seeded shuffle, batches of `batch_size` (last one may be short), forward,
/// loss, backward and one Adam step per batch. Per-pair gradients may be
/// computed in parallel; they are summed in batch order. Returns the mean of
/// the per-pair losses seen during the epoch.
pub fn train_epoch(
    model: &mut Model,
    pairs: &[Pair],
    loss_cfg: &LossConfig,
    optim_cfg: &OptimConfig,
    state: &mut AdamState,
    epoch: usize,
    exec: Exec,
) -> Result<EpochStats> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    loss_cfg.validate()?;
    optim_cfg.validate()?;
    let start = Instant::now();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(optim_cfg.seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);

    let mut loss_sum = 0.0;
    for batch in order.chunks(optim_cfg.batch_size) {
        let snapshot: &Model = model;
        let results = par::try_map(exec, batch, |_, &i| pair_gradients(snapshot, &pairs[i], loss_cfg))?;
        let mut total = Gradients::zeros_like(model);
        for (loss, g) in &results {
            loss_sum += loss;
            total.accumulate(g);
        }
        total.scale(1.0 / batch.len() as f64);
        adam_step(&mut model.tensors_mut(), &total.params, state, optim_cfg)?;
    }
    let mean_loss = loss_sum / pairs.len() as f64;
    if !mean_loss.is_finite() {
        return Err(Error::Invariant(format!("epoch {epoch} loss is not finite")));
    }
    Ok(EpochStats {
        epoch,
        mean_loss,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs `optim_cfg.epochs` epochs, calling `on_epoch` after each.
pub fn fit(
    model: &mut Model,
    pairs: &[Pair],
    loss_cfg: &LossConfig,
    optim_cfg: &OptimConfig,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainStats> {
    let start = Instant::now();
    let mut state = AdamState::default();
    let mut stats = TrainStats::default();
    for epoch in 1..=optim_cfg.epochs {
        let row = train_epoch(model, pairs, loss_cfg, optim_cfg, &mut state, epoch, exec)?;
        on_epoch(&row);
        stats.epochs.push(row);
    }
    stats.wall_seconds = start.elapsed().as_secs_f64();
    Ok(stats)
}

/// Denominator floor for relative errors; gradients both below it compare as
/// absolute differences.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Shifts ReLU-layer biases until no pre-activation lies within `margin` of
/// zero, so finite differences of size well below `margin` never cross a kink.
/// Gives up after a bounded number of passes and returns whether it succeeded.
pub fn nudge_off_kinks(model: &mut Model, input: &Tensor, margin: f64) -> Result<bool> {
    for _ in 0..64 {
        let pre = model.relu_preactivations(input)?;
        let mut shifts: Vec<(usize, usize)> = Vec::new();
        for (n, p) in pre.iter().enumerate() {
            for ch in 0..p.dim(0) {
                if p.row(ch).iter().any(|v| v.abs() < margin) {
                    shifts.push((model.relu_bias_index(n), ch));
                }
            }
        }
        if shifts.is_empty() {
            return Ok(true);
        }
        let mut tensors = model.tensors_mut();
        for (idx, ch) in shifts {
            tensors[idx].data_mut()[ch] += 2.5 * margin;
        }
    }
    Ok(false)
}

/// Max relative error between backpropagated and central-difference
/// gradients over every parameter of `model` for one pair.
///
/// A copy of the model is first passed through [`nudge_off_kinks`] with a
/// margin of `20 * epsilon`; the check runs on that copy.
pub fn gradient_check(model: &Model, sample: &Pair, loss_cfg: &LossConfig, epsilon: f64) -> Result<f64> {
    let mut m = model.clone();
    let input = Tensor::from_signal(&sample.noisy);
    nudge_off_kinks(&mut m, &input, 20.0 * epsilon)?;
    let (_, grads) = pair_gradients(&m, sample, loss_cfg)?;
    let target = Tensor::from_signal(&sample.clean);
    let loss_at = |m: &Model| -> Result<f64> { complex_loss(&m.forward(&input)?, &target, loss_cfg) };
    let mut worst = 0.0f64;
    let n_tensors = grads.params.len();
    for ti in 0..n_tensors {
        for ei in 0..grads.params[ti].len() {
            let original = m.tensors()[ti].data()[ei];
            m.tensors_mut()[ti].data_mut()[ei] = original + epsilon;
            let plus = loss_at(&m)?;
            m.tensors_mut()[ti].data_mut()[ei] = original - epsilon;
            let minus = loss_at(&m)?;
            m.tensors_mut()[ti].data_mut()[ei] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            worst = worst.max(relative_error(grads.params[ti].data()[ei], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use rand::Rng;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_signal(v)
    }

    #[test]
    fn loss_examples() {
        let cfg = LossConfig::default();
        let x = t(&[0.1, -0.4, 0.9]);
        assert_eq!(complex_loss(&x, &x, &cfg).unwrap(), 0.2);
        let y = t(&[1.1, 0.6, 1.9]);
        assert!((complex_loss(&y, &x, &cfg).unwrap() - 1.0).abs() < 1e-12);
        let no_floor = LossConfig { gamma: 0.0, ..cfg };
        assert_eq!(complex_loss(&x, &x, &no_floor).unwrap(), 0.0);
        assert!(matches!(
            complex_loss(&x, &t(&[0.0]), &cfg),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn loss_grad_examples() {
        let cfg = LossConfig::default();
        let x = t(&[0.3, -0.2]);
        assert!(complex_loss_grad(&x, &x, &cfg).unwrap().data().iter().all(|&g| g == 0.0));
        let g = complex_loss_grad(&t(&[3.0]), &t(&[1.0]), &cfg).unwrap();
        assert!((g.data()[0] - 2.3).abs() < 1e-12);
    }

    #[test]
    fn loss_grad_matches_central_differences() {
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let est: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tgt: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = complex_loss_grad(&t(&est), &t(&tgt), &cfg).unwrap();
        let eps = 1e-6;
        for i in 0..est.len() {
            assert!((est[i] - tgt[i]).abs() > 10.0 * eps);
            let mut p = est.clone();
            p[i] += eps;
            let mut m = est.clone();
            m[i] -= eps;
            let num = (complex_loss(&t(&p), &t(&tgt), &cfg).unwrap()
                - complex_loss(&t(&m), &t(&tgt), &cfg).unwrap())
                / (2.0 * eps);
            assert!(relative_error(g.data()[i], num) < 1e-5);
        }
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut p = t(&[0.5, -0.25]);
        let mut state = AdamState::default();
        adam_step(&mut [&mut p], &[t(&[0.0, 0.0])], &mut state, &OptimConfig::default()).unwrap();
        assert_eq!(p.data(), &[0.5, -0.25]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_hand_formula() {
        let cfg = OptimConfig {
            learning_rate: 1e-3,
            ..OptimConfig::default()
        };
        let g = 0.37;
        let mut p = t(&[1.0]);
        let mut state = AdamState::default();
        adam_step(&mut [&mut p], &[t(&[g])], &mut state, &cfg).unwrap();
        // m_hat = g, v_hat = g^2 after bias correction
        let m = (1.0 - 0.9) * g / (1.0 - 0.9);
        let v = (1.0 - 0.999) * g * g / (1.0 - 0.999);
        let expected = 1.0 - 1e-3 * m / (v.sqrt() + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-9);
        assert!(((1.0 - p.data()[0]) - 1e-3).abs() < 1e-9);

        let mut p2 = t(&[1.0]);
        let mut s2 = AdamState::default();
        adam_step(&mut [&mut p2], &[t(&[g])], &mut s2, &cfg).unwrap();
        assert_eq!(p, p2);
        assert_eq!(state, s2);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = t(&[1.0, 2.0]);
        let r = adam_step(&mut [&mut p], &[t(&[1.0])], &mut AdamState::default(), &OptimConfig::default());
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }

    fn check_config() -> ModelConfig {
        ModelConfig {
            depth: 1,
            base_channels: 2,
            kernel_size: 4,
            stride: 2,
            lstm_layers: 1,
            lstm_hidden: 2,
            ..ModelConfig::default()
        }
    }

    fn random_pair(seed: u64, len: usize) -> Pair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Pair {
            id: "p".into(),
            snr_db: 0.0,
            sample_rate_hz: 16_000,
            noisy: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            clean: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn gradient_check_depth_one() {
        let model = Model::init(check_config(), 4).unwrap();
        let err = gradient_check(&model, &random_pair(5, 8), &LossConfig::default(), 1e-4).unwrap();
        assert!(err < 1e-3, "max relative error {err}");
    }

    #[test]
    fn gradient_check_zero_model_is_zero() {
        let mut model = Model::init(check_config(), 4).unwrap();
        for t in model.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let pair = Pair {
            id: "z".into(),
            snr_db: 0.0,
            sample_rate_hz: 16_000,
            noisy: vec![0.0; 8],
            clean: vec![0.0; 8],
        };
        // estimate equals target everywhere: MAE sits on its kink, but with
        // sign(0) = 0 and a symmetric difference both sides agree on 0
        let cfg = LossConfig { beta: 0.0, ..LossConfig::default() };
        assert_eq!(gradient_check(&model, &pair, &cfg, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn nudging_clears_kinks() {
        let mut model = Model::init(ModelConfig::tiny(), 2).unwrap();
        let input = Tensor::from_signal(&random_pair(1, 64).noisy);
        assert!(nudge_off_kinks(&mut model, &input, 1e-3).unwrap());
        let pre = model.relu_preactivations(&input).unwrap();
        assert!(pre.iter().all(|p| p.data().iter().all(|v| v.abs() >= 1e-3)));
    }

    fn toy_pairs(n: usize, len: usize) -> Vec<Pair> {
        (0..n).map(|i| random_pair(100 + i as u64, len)).collect()
    }

    #[test]
    fn zero_lr_epoch_matches_evaluation() {
        let mut model = Model::init(ModelConfig::tiny(), 1).unwrap();
        let pairs = toy_pairs(5, 256);
        let eval = evaluate_loss(&model, &pairs, &LossConfig::default(), Exec::Sequential).unwrap();
        let cfg = OptimConfig {
            learning_rate: 0.0,
            batch_size: 2,
            ..OptimConfig::default()
        };
        let before = model.clone();
        let row = train_epoch(
            &mut model,
            &pairs,
            &LossConfig::default(),
            &cfg,
            &mut AdamState::default(),
            1,
            Exec::Parallel,
        )
        .unwrap();
        assert!((row.mean_loss - eval).abs() < 1e-12);
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_deterministic_across_exec_modes() {
        let pairs = toy_pairs(6, 200);
        let cfg = OptimConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 2,
            seed: 9,
            ..OptimConfig::default()
        };
        let run = |exec| {
            let mut m = Model::init(ModelConfig::tiny(), 7).unwrap();
            let stats = fit(&mut m, &pairs, &LossConfig::default(), &cfg, exec, |_| {}).unwrap();
            (m, stats.epochs.iter().map(|e| e.mean_loss).collect::<Vec<_>>())
        };
        let (a, la) = run(Exec::Parallel);
        let (b, lb) = run(Exec::Sequential);
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut model = Model::init(ModelConfig::tiny(), 1).unwrap();
        let r = train_epoch(
            &mut model,
            &[],
            &LossConfig::default(),
            &OptimConfig::default(),
            &mut AdamState::default(),
            1,
            Exec::Sequential,
        );
        assert!(matches!(r, Err(Error::EmptyDataset)));
    }
}
