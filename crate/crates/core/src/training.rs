//! Learning objective with elastic-net regularization, momentum SGD and the
//! continual update that mixes previously labeled data with a new batch.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::layer::log_softmax_at;
use crate::{cast, Error, Network, ParameterVector, Result, Scalar, Tensor};

/// A labeled example borrowed from a sample store.
pub type Labeled<'a, T> = (&'a Tensor<T>, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `−ln f_y(x)`.
    #[default]
    SoftmaxCrossEntropy,
    /// `½ ‖f(x) − e_y‖²`.
    Quadratic,
}

/// Elastic net `ω(θ) = l2·‖θ‖₂² + l1·‖θ‖₁`. Its gradient is
/// `2·l2·θ + l1·sign(θ)`, with `sign(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegularizerConfig {
    pub l2: f64,
    pub l1: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self { l2: 0.0005, l1: 0.0 }
    }
}

impl RegularizerConfig {
    pub const NONE: Self = Self { l2: 0.0, l1: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !(self.l2.is_finite() && self.l2 >= 0.0 && self.l1.is_finite() && self.l1 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "regularizer coefficients must be finite and non-negative, got l2={} l1={}",
                self.l2, self.l1
            )));
        }
        Ok(())
    }

    pub fn value<T: Scalar>(&self, params: &ParameterVector<T>) -> T {
        let mut v = T::zero();
        if self.l2 != 0.0 {
            v += cast::<T>(self.l2) * params.squared_l2_norm();
        }
        if self.l1 != 0.0 {
            v += cast::<T>(self.l1) * params.l1_norm();
        }
        v
    }

    /// Adds `∇ω(θ)` to `grad`.
    pub fn add_gradient<T: Scalar>(&self, params: &ParameterVector<T>, grad: &mut ParameterVector<T>) {
        if self.l2 == 0.0 && self.l1 == 0.0 {
            return;
        }
        let two_l2: T = cast(2.0 * self.l2);
        let l1: T = cast(self.l1);
        for (g, &t) in grad.as_mut_slice().iter_mut().zip(params.as_slice()) {
            *g += two_l2 * t;
            if t != T::zero() {
                *g += l1 * t.signum();
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub mini_batch_size: usize,
    pub iterations_per_update: usize,
    /// Iterations used to fit the initial model on the starting labeled set.
    pub initial_iterations: usize,
    /// Probability `λ` that a mini-batch slot is filled from old data.
    pub old_data_weight: f64,
    pub loss: LossKind,
    pub regularizer: RegularizerConfig,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            mini_batch_size: 64,
            iterations_per_update: 1000,
            initial_iterations: 2000,
            old_data_weight: 0.9,
            loss: LossKind::SoftmaxCrossEntropy,
            regularizer: RegularizerConfig::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.mini_batch_size == 0 {
            return Err(Error::InvalidConfig("mini-batch size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.old_data_weight) {
            return Err(Error::InvalidConfig(format!(
                "old-data weight must lie in [0, 1], got {}",
                self.old_data_weight
            )));
        }
        self.regularizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub velocity: ParameterVector<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(net: &Network<T>) -> Self {
        Self {
            velocity: net.params().zeros_like(),
        }
    }
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

fn sample_loss<T: Scalar>(net: &Network<T>, x: &Tensor<T>, y: usize, loss: LossKind) -> Result<T> {
    check_label(y, net.num_classes())?;
    let trace = net.forward_trace(x)?;
    Ok(match loss {
        LossKind::SoftmaxCrossEntropy => -log_softmax_at(trace.logits(), y),
        LossKind::Quadratic => {
            let half: T = cast(0.5);
            trace
                .output()
                .iter()
                .enumerate()
                .map(|(c, &p)| {
                    let d = if c == y { p - T::one() } else { p };
                    half * d * d
                })
                .sum()
        }
    })
}

/// `J(θ; D) = (1/N) Σ ℒ(f(x_i; θ), y_i) + ω(θ)`.
pub fn objective<T: Scalar>(
    net: &Network<T>,
    data: &[Labeled<'_, T>],
    loss: LossKind,
    reg: &RegularizerConfig,
) -> Result<T> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut total = T::zero();
    for &(x, y) in data {
        total += sample_loss(net, x, y, loss)?;
    }
    Ok(total / cast(data.len() as f64) + reg.value(net.params()))
}

/// `∇_θ J(θ; (x, y))` for a single example, regularizer included.
pub fn sample_gradient<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: usize,
    loss: LossKind,
    reg: &RegularizerConfig,
) -> Result<ParameterVector<T>> {
    check_label(y, net.num_classes())?;
    let trace = net.forward_trace(x)?;
    let mut residual = trace.output().to_vec();
    residual[y] -= T::one();
    let mut grad = match loss {
        // d(−ln p_y)/dz = p − e_y
        LossKind::SoftmaxCrossEntropy => net.backward_from_logits(&trace, residual),
        // d(½‖p − e_y‖²)/dp = p − e_y
        LossKind::Quadratic => net.backward_scalar_from(&trace, &residual)?,
    };
    reg.add_gradient(net.params(), &mut grad);
    Ok(grad)
}

/// Mean of per-sample gradients. Samples are differentiated in parallel and
/// reduced in input order, so the result does not depend on thread count.
pub fn batch_gradient<T: Scalar>(
    net: &Network<T>,
    batch: &[Labeled<'_, T>],
    loss: LossKind,
    reg: &RegularizerConfig,
) -> Result<ParameterVector<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("mini-batch"));
    }
    let grads = batch
        .par_iter()
        .map(|&(x, y)| sample_gradient(net, x, y, loss, reg))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = net.params().zeros_like();
    for g in &grads {
        mean.axpy(T::one(), g)?;
    }
    mean.scale(T::one() / cast(batch.len() as f64));
    Ok(mean)
}

/// `v ← μ·v − η·g; θ ← θ + v`.
pub fn sgd_step<T: Scalar>(
    net: &mut Network<T>,
    state: &mut OptimizerState<T>,
    gradient: &ParameterVector<T>,
    cfg: &TrainingConfig,
) -> Result<()> {
    if gradient.len() != net.num_params() || state.velocity.len() != net.num_params() {
        return Err(Error::Shape(format!(
            "gradient of length {} and velocity of length {} for {} parameters",
            gradient.len(),
            state.velocity.len(),
            net.num_params()
        )));
    }
    let mu: T = cast(cfg.momentum);
    let lr: T = cast(cfg.learning_rate);
    for ((v, &g), t) in state
        .velocity
        .as_mut_slice()
        .iter_mut()
        .zip(gradient.as_slice())
        .zip(net.params_mut().as_mut_slice())
    {
        *v = mu * *v - lr * g;
        *t += *v;
    }
    Ok(())
}

/// Which pool a mini-batch slot was filled from, and the index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotSource {
    Old(usize),
    New(usize),
}

/// Per-slot Bernoulli(λ) choice between old and new data, uniform with
/// replacement inside the chosen pool.
#[derive(Debug, Clone, Copy)]
pub struct MixtureSampler {
    old_weight: f64,
    old_len: usize,
    new_len: usize,
}

impl MixtureSampler {
    pub fn new(old_weight: f64, old_len: usize, new_len: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&old_weight) {
            return Err(Error::InvalidConfig(format!(
                "old-data weight {old_weight} outside [0, 1]"
            )));
        }
        if old_weight > 0.0 && old_len == 0 {
            return Err(Error::Empty("old data pool"));
        }
        if old_weight < 1.0 && new_len == 0 {
            return Err(Error::Empty("new data batch"));
        }
        Ok(Self {
            old_weight,
            old_len,
            new_len,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> SlotSource {
        if rng.random_bool(self.old_weight) {
            SlotSource::Old(rng.random_range(0..self.old_len))
        } else {
            SlotSource::New(rng.random_range(0..self.new_len))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_iterations<'a, T: Scalar, R: Rng + ?Sized>(
    net: &mut Network<T>,
    state: &mut OptimizerState<T>,
    old: &[Labeled<'a, T>],
    new: &[Labeled<'a, T>],
    old_weight: f64,
    iterations: usize,
    cfg: &TrainingConfig,
    rng: &mut R,
    observe: &mut dyn FnMut(SlotSource),
) -> Result<()> {
    cfg.validate()?;
    let sampler = MixtureSampler::new(old_weight, old.len(), new.len())?;
    let mut batch = Vec::with_capacity(cfg.mini_batch_size);
    for _ in 0..iterations {
        batch.clear();
        for _ in 0..cfg.mini_batch_size {
            let slot = sampler.draw(rng);
            observe(slot);
            batch.push(match slot {
                SlotSource::Old(i) => old[i],
                SlotSource::New(i) => new[i],
            });
        }
        let g = batch_gradient(net, &batch, cfg.loss, &cfg.regularizer)?;
        sgd_step(net, state, &g, cfg)?;
    }
    Ok(())
}

/// Runs `cfg.iterations_per_update` momentum-SGD steps on mini-batches whose
/// slots come from `old` with probability `cfg.old_data_weight` and from
/// `new` otherwise.
pub fn continual_update<T: Scalar, R: Rng + ?Sized>(
    net: &mut Network<T>,
    state: &mut OptimizerState<T>,
    old: &[Labeled<'_, T>],
    new: &[Labeled<'_, T>],
    cfg: &TrainingConfig,
    rng: &mut R,
) -> Result<()> {
    continual_update_observed(net, state, old, new, cfg, rng, &mut |_| {})
}

/// [`continual_update`] reporting every slot draw to `observe`.
pub fn continual_update_observed<T: Scalar, R: Rng + ?Sized>(
    net: &mut Network<T>,
    state: &mut OptimizerState<T>,
    old: &[Labeled<'_, T>],
    new: &[Labeled<'_, T>],
    cfg: &TrainingConfig,
    rng: &mut R,
    observe: &mut dyn FnMut(SlotSource),
) -> Result<()> {
    run_iterations(
        net,
        state,
        old,
        new,
        cfg.old_data_weight,
        cfg.iterations_per_update,
        cfg,
        rng,
        observe,
    )
}

/// Plain mini-batch training on one data set for `iterations` steps.
pub fn train<T: Scalar, R: Rng + ?Sized>(
    net: &mut Network<T>,
    state: &mut OptimizerState<T>,
    data: &[Labeled<'_, T>],
    iterations: usize,
    cfg: &TrainingConfig,
    rng: &mut R,
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    run_iterations(net, state, data, &[], 1.0, iterations, cfg, rng, &mut |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::LayerSpec;

    fn linear(inputs: usize, classes: usize, seed: u64) -> Network<f64> {
        Network::seeded(
            vec![inputs],
            vec![
                LayerSpec::FullyConnected {
                    inputs,
                    outputs: classes,
                },
                LayerSpec::Softmax,
            ],
            seed,
        )
        .unwrap()
    }

    /// Net whose posterior is exactly one-hot at class 0: logits (1000, 0).
    fn saturated() -> Network<f64> {
        let mut net = linear(1, 2, 0);
        net.params_mut().as_mut_slice().copy_from_slice(&[0.0, 0.0, 1000.0, 0.0]);
        net
    }

    #[test]
    fn quadratic_loss_of_perfect_fit_is_zero() {
        let net = saturated();
        let x = Tensor::from_vec(vec![1.0]);
        let j = objective(&net, &[(&x, 0)], LossKind::Quadratic, &RegularizerConfig::NONE).unwrap();
        assert_eq!(j, 0.0);
        let g = sample_gradient(&net, &x, 0, LossKind::Quadratic, &RegularizerConfig::NONE).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn regularizer_of_zero_parameters_is_zero() {
        let net = Network::<f64>::new(
            vec![2],
            vec![LayerSpec::FullyConnected { inputs: 2, outputs: 2 }, LayerSpec::Softmax],
        )
        .unwrap();
        let reg = RegularizerConfig { l2: 1.0, l1: 1.0 };
        assert_eq!(reg.value(net.params()), 0.0);
        let x = Tensor::from_vec(vec![0.0, 0.0]);
        let j = objective(&net, &[(&x, 1)], LossKind::SoftmaxCrossEntropy, &reg).unwrap();
        assert!((j - 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn l2_gradient_is_twice_coefficient_times_theta() {
        let net = saturated();
        let x = Tensor::from_vec(vec![1.0]);
        let reg = RegularizerConfig { l2: 0.0005, l1: 0.0 };
        let g = sample_gradient(&net, &x, 0, LossKind::Quadratic, &reg).unwrap();
        for (gi, ti) in g.as_slice().iter().zip(net.params().as_slice()) {
            assert_eq!(*gi, 0.001 * ti);
        }
    }

    #[test]
    fn objective_errors() {
        let net = linear(2, 2, 1);
        let x = Tensor::from_vec(vec![0.0, 1.0]);
        let reg = RegularizerConfig::default();
        assert_eq!(
            objective(&net, &[], LossKind::Quadratic, &reg),
            Err(Error::Empty("training data"))
        );
        assert_eq!(
            objective(&net, &[(&x, 2)], LossKind::Quadratic, &reg),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        );
        assert!(sample_gradient(&net, &x, 5, LossKind::Quadratic, &reg).is_err());
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let mut net = linear(3, 2, 2);
        let before = net.params().clone();
        let mut state = OptimizerState::new(&net);
        let g = before.zeros_like();
        sgd_step(&mut net, &mut state, &g, &TrainingConfig::default()).unwrap();
        assert_eq!(net.params(), &before);
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        let mut net = linear(1, 2, 0);
        let theta0 = net.params().clone();
        let mut state = OptimizerState::new(&net);
        let mut g = theta0.zeros_like();
        g.as_mut_slice().copy_from_slice(&[1.0, -2.0, 0.5, 4.0]);
        let cfg = TrainingConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            ..Default::default()
        };
        sgd_step(&mut net, &mut state, &g, &cfg).unwrap();
        for j in 0..4 {
            assert!((net.params()[j] - theta0[j] - (-0.1 * g[j])).abs() < 1e-15);
        }
        let theta1 = net.params().clone();
        sgd_step(&mut net, &mut state, &g, &cfg).unwrap();
        for j in 0..4 {
            assert!((net.params()[j] - theta1[j] - (-0.19 * g[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut net = linear(1, 2, 3);
        let theta0 = net.params().clone();
        let mut state = OptimizerState::new(&net);
        let mut g = theta0.zeros_like();
        g.as_mut_slice().copy_from_slice(&[0.3, 0.1, -0.7, 2.0]);
        let cfg = TrainingConfig {
            learning_rate: 0.05,
            momentum: 0.0,
            ..Default::default()
        };
        for _ in 0..3 {
            let before = net.params().clone();
            sgd_step(&mut net, &mut state, &g, &cfg).unwrap();
            for j in 0..4 {
                assert_eq!(net.params()[j], before[j] - 0.05 * g[j]);
            }
        }
    }

    #[test]
    fn sgd_rejects_length_mismatch() {
        let mut net = linear(1, 2, 0);
        let other = linear(2, 2, 0);
        let mut state = OptimizerState::new(&net);
        assert!(sgd_step(&mut net, &mut state, other.params(), &TrainingConfig::default()).is_err());
    }

    #[test]
    fn mixture_sampler_edge_weights() {
        let mut rng = seeded(5);
        let all_old = MixtureSampler::new(1.0, 3, 0).unwrap();
        assert!((0..1000).all(|_| matches!(all_old.draw(&mut rng), SlotSource::Old(_))));
        let all_new = MixtureSampler::new(0.0, 0, 2).unwrap();
        assert!((0..1000).all(|_| matches!(all_new.draw(&mut rng), SlotSource::New(i) if i < 2)));
        assert!(MixtureSampler::new(0.5, 0, 2).is_err());
        assert!(MixtureSampler::new(0.5, 2, 0).is_err());
        assert!(MixtureSampler::new(1.5, 2, 2).is_err());
    }

    #[test]
    fn zero_iterations_leave_parameters_unchanged() {
        let mut net = linear(2, 2, 4);
        let before = net.params().clone();
        let mut state = OptimizerState::new(&net);
        let x = Tensor::from_vec(vec![1.0, 0.0]);
        let cfg = TrainingConfig {
            iterations_per_update: 0,
            ..Default::default()
        };
        continual_update(&mut net, &mut state, &[(&x, 0)], &[(&x, 1)], &cfg, &mut seeded(0)).unwrap();
        assert_eq!(net.params(), &before);
    }

    #[test]
    fn invalid_training_config_rejected() {
        let bad = [
            TrainingConfig { learning_rate: 0.0, ..Default::default() },
            TrainingConfig { mini_batch_size: 0, ..Default::default() },
            TrainingConfig { old_data_weight: 1.2, ..Default::default() },
            TrainingConfig {
                regularizer: RegularizerConfig { l2: -1.0, l1: 0.0 },
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
