//! Robust training with the polyhedral envelope regularizer.
//!
//! The loss of a mini-batch is the mean cross-entropy plus the mean envelope
//! hinge term over a random subsample of the batch. Gradients flow through the
//! forward pass, both bound propagators, the closed-form linearizations and the
//! distance formulas, all evaluated on a [`Tape`].

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{cross_entropy, pgd_attack, AttackConfig};
use crate::autodiff::Tape;
use crate::bounds::{margin_bounds, Propagator};
use crate::envelope::{box_offsets, signed_distance, DEFAULT_GREEDY_ITERATIONS};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{AdversarialBudget, Dataset, NeuralNetwork, Network};
use crate::scalar::{dot_const, Real};

/// Hinge on the `top` smallest signed distances: `γ·Σ max(0, 1 − d̃/α)`.
pub fn per_regularizer<T: Real>(distances: &[T], alpha: f64, gamma: f64, top: usize) -> T {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&i, &j| distances[i].value().total_cmp(&distances[j].value()));
    let mut total = T::zero();
    for &i in order.iter().take(top) {
        let d = distances[i];
        if !d.value().is_finite() && d.value() > 0.0 {
            continue;
        }
        total += (T::constant(1.0) - d / alpha).relu();
    }
    total * gamma
}

/// Signed distances from `anchor` to the `K − 1` envelope hyperplanes built
/// from the budget around `center`.
pub fn signed_distances<T: Real>(
    net: &Network<T>,
    anchor: &[f64],
    center: &[f64],
    label: usize,
    budget: &AdversarialBudget,
    propagator: Propagator,
) -> Result<Vec<T>> {
    let margins = margin_bounds(net, center, label, budget, propagator)?;
    let offsets = box_offsets(anchor, budget)?;
    let offsets_ref = offsets.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
    let mut out = Vec::with_capacity(net.num_classes().saturating_sub(1));
    for i in 0..net.num_classes() {
        if i == label {
            continue;
        }
        let a = margins.lower_coef.row(i);
        let b = dot_const(a, anchor) + margins.lower_offset[i];
        out.push(signed_distance(a, b, offsets_ref, budget.norm, DEFAULT_GREEDY_ITERATIONS)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub top: usize,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            alpha: 0.15,
            gamma: 0.1,
            top: 4,
        }
    }
}

/// PER+at on one point: attack first, then measure from the adversarial point.
/// Bounds are built around the adversarial point unless `bounds_at_clean`.
#[allow(clippy::too_many_arguments)]
pub fn per_at_regularizer(
    net: &NeuralNetwork,
    x: &[f64],
    label: usize,
    budget: &AdversarialBudget,
    attack: &AttackConfig,
    reg: &RegularizerConfig,
    propagator: Propagator,
    bounds_at_clean: bool,
) -> Result<f64> {
    let adv = pgd_attack(net, x, label, budget, attack)?;
    let center = if bounds_at_clean { x } else { &adv };
    let d = signed_distances::<f64>(net, &adv, center, label, budget, propagator)?;
    Ok(per_regularizer(&d, reg.alpha, reg.gamma, reg.top))
}

/// How ε evolves over epochs; the budget's ε is the target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EpsilonSchedule {
    #[default]
    Constant,
    /// Start at `initial`, double every `every` epochs, never above the target.
    Doubling { initial: f64, every: usize },
}

impl EpsilonSchedule {
    pub fn at(&self, epoch: usize, target: f64) -> f64 {
        match *self {
            EpsilonSchedule::Constant => target,
            EpsilonSchedule::Doubling { initial, every } => {
                let doublings = epoch / every.max(1);
                let factor = 2f64.powi(doublings.min(1000) as i32);
                (initial * factor).min(target)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Instances per batch that get the regularizer.
    pub subsample: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Number of smallest distances entering the hinge.
    pub top: usize,
    pub schedule: EpsilonSchedule,
    pub warmup_epochs: usize,
    /// Cross-entropy and regularizer at PGD points.
    pub use_at: bool,
    /// With `use_at`, build the envelope around the clean input instead of the
    /// adversarial one.
    pub at_bounds_at_clean: bool,
    pub propagator: Propagator,
    pub attack: AttackConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 100,
            subsample: 20,
            learning_rate: 1e-3,
            alpha: 0.15,
            gamma: 0.1,
            top: 4,
            schedule: EpsilonSchedule::Constant,
            warmup_epochs: 0,
            use_at: false,
            at_bounds_at_clean: false,
            propagator: Propagator::Backward,
            attack: AttackConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn regularizer(&self) -> RegularizerConfig {
        RegularizerConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            top: self.top,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.subsample > self.batch_size {
            return bad(format!(
                "subsample ({}) exceeds batch_size ({})",
                self.subsample, self.batch_size
            ));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if self.top == 0 || self.top + 1 > classes {
            return bad(format!(
                "top must lie in [1, {}] for {classes} classes, got {}",
                classes.saturating_sub(1),
                self.top
            ));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }
}

/// The training loss of a batch with all anchors fixed: mean cross-entropy at
/// the anchors plus mean regularizer over `regularized`.
#[derive(Clone, Debug)]
pub struct TrainingObjective<'a> {
    /// Points the loss is evaluated at (clean or adversarial).
    pub anchors: Vec<Vec<f64>>,
    /// Centers of the budgets the envelopes are built on.
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Positions into `anchors` that receive the regularizer.
    pub regularized: Vec<usize>,
    pub regularizer: RegularizerConfig,
    pub budget: &'a AdversarialBudget,
    pub propagator: Propagator,
    pub include_cross_entropy: bool,
}

/// A scalar function of the network parameters that can be evaluated on any
/// [`Real`] scalar.
pub trait Objective {
    fn eval<T: Real>(&self, net: &Network<T>) -> Result<T>;
}

impl Objective for TrainingObjective<'_> {
    fn eval<T: Real>(&self, net: &Network<T>) -> Result<T> {
        let mut total = T::zero();
        if self.include_cross_entropy && !self.anchors.is_empty() {
            let mut ce = T::zero();
            for (x, &y) in self.anchors.iter().zip(&self.labels) {
                ce += cross_entropy(&net.forward(x)?, y);
            }
            total += ce / self.anchors.len() as f64;
        }
        if !self.regularized.is_empty() && self.regularizer.gamma > 0.0 {
            let mut per = T::zero();
            for &i in &self.regularized {
                let d = signed_distances(
                    net,
                    &self.anchors[i],
                    &self.centers[i],
                    self.labels[i],
                    self.budget,
                    self.propagator,
                )?;
                per += per_regularizer(&d, self.regularizer.alpha, self.regularizer.gamma, self.regularizer.top);
            }
            total += per / self.regularized.len() as f64;
        }
        Ok(total)
    }
}

/// d(loss)/d(parameter), shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGradients {
    pub weights: Vec<Matrix<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ParameterGradients {
    pub fn from_flat(net: &NeuralNetwork, flat: &[f64]) -> Self {
        let shaped = net.with_parameters(flat);
        ParameterGradients {
            weights: shaped.layers().iter().map(|l| l.weight.clone()).collect(),
            biases: shaped.layers().iter().map(|l| l.bias.clone()).collect(),
        }
    }

    /// Same order as [`NeuralNetwork::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Value and flat parameter gradient of an objective by reverse mode.
pub fn objective_gradient(net: &NeuralNetwork, objective: &impl Objective) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let params: Vec<_> = net.parameters().into_iter().map(|v| tape.var(v)).collect();
    let mut it = params.iter().copied();
    let lifted = net.map_parameters(|_| it.next().unwrap());
    let loss = objective.eval(&lifted)?;
    let grad = tape.gradient(loss);
    Ok((loss.value(), params.iter().map(|&p| grad.wrt(p)).collect()))
}

/// Builds the objective for one batch: runs the attack when training
/// adversarially and draws the regularized subsample.
pub fn batch_objective<'a>(
    net: &NeuralNetwork,
    inputs: &[&[f64]],
    labels: &[usize],
    config: &TrainConfig,
    budget: &'a AdversarialBudget,
    regularize: bool,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingObjective<'a>> {
    let mut anchors = Vec::with_capacity(inputs.len());
    let mut centers = Vec::with_capacity(inputs.len());
    for (x, &y) in inputs.iter().zip(labels) {
        if config.use_at && budget.epsilon > 0.0 {
            let attack = AttackConfig {
                seed: rng.gen(),
                ..config.attack
            };
            let adv = pgd_attack(net, x, y, budget, &attack)?;
            centers.push(if config.at_bounds_at_clean { x.to_vec() } else { adv.clone() });
            anchors.push(adv);
        } else {
            anchors.push(x.to_vec());
            centers.push(x.to_vec());
        }
    }
    let regularized = if regularize && config.gamma > 0.0 && budget.epsilon > 0.0 {
        let k = config.subsample.min(inputs.len());
        let mut picked = index::sample(rng, inputs.len(), k).into_vec();
        picked.sort_unstable();
        picked
    } else {
        Vec::new()
    };
    Ok(TrainingObjective {
        anchors,
        centers,
        labels: labels.to_vec(),
        regularized,
        regularizer: config.regularizer(),
        budget,
        propagator: config.propagator,
        include_cross_entropy: true,
    })
}

/// Loss and gradients for one batch. `regularize` is false during warm-up.
pub fn loss_and_grad(
    net: &NeuralNetwork,
    inputs: &[&[f64]],
    labels: &[usize],
    config: &TrainConfig,
    budget: &AdversarialBudget,
    regularize: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ParameterGradients)> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let objective = batch_objective(net, inputs, labels, config, budget, regularize, rng)?;
    let (loss, flat) = objective_gradient(net, &objective)?;
    if !loss.is_finite() || !flat.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    Ok((loss, ParameterGradients::from_flat(net, &flat)))
}

/// Adaptive-moment optimizer over the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, n: usize) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub epsilon: f64,
    pub regularized: bool,
    pub mean_loss: f64,
}

pub fn train(
    initial: &NeuralNetwork,
    data: &Dataset,
    config: &TrainConfig,
    budget: &AdversarialBudget,
) -> Result<NeuralNetwork> {
    Ok(train_with_log(initial, data, config, budget)?.0)
}

pub fn train_with_log(
    initial: &NeuralNetwork,
    data: &Dataset,
    config: &TrainConfig,
    budget: &AdversarialBudget,
) -> Result<(NeuralNetwork, Vec<EpochRecord>)> {
    config.validate(initial.num_classes())?;
    data.validate(initial.input_dim(), initial.num_classes(), budget.bounds)?;
    let mut params = initial.parameters();
    let mut net = initial.clone();
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let eps = config.schedule.at(epoch, budget.epsilon);
        let epoch_budget = budget.with_epsilon(eps);
        let regularize = epoch >= config.warmup_epochs;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| data.inputs[i].as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (loss, grads) = match loss_and_grad(&net, &inputs, &labels, config, &epoch_budget, regularize, &mut rng) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss) | Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged { epoch, step })
                }
                Err(e) => return Err(e),
            };
            adam.step(&mut params, &grads.flatten());
            net = initial.with_parameters(&params);
            if !params.iter().all(|p| p.is_finite()) {
                return Err(Error::Diverged { epoch, step });
            }
            loss_sum += loss;
            batches += 1;
        }
        log.push(EpochRecord {
            epoch,
            epsilon: eps,
            regularized: regularize,
            mean_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
        });
    }
    Ok((net, log))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Parameter index of the worst coordinate.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because the one-sided slopes disagree (a kink
    /// within `h`).
    pub skipped_kinks: usize,
}

impl GradientCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

/// Compares the reverse-mode gradient with central differences of step `h`.
/// Relative error is `|g − g_fd| / max(|g|, |g_fd|, 1e-6)`.
pub fn finite_diff_check(net: &NeuralNetwork, objective: &impl Objective, h: f64) -> Result<GradientCheck> {
    let (f0, grad) = objective_gradient(net, objective)?;
    let params = net.parameters();
    let mut report = GradientCheck {
        max_relative_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut shifted = params.clone();
    for i in 0..params.len() {
        shifted[i] = params[i] + h;
        let fp = objective.eval(&net.with_parameters(&shifted))?;
        shifted[i] = params[i] - h;
        let fm = objective.eval(&net.with_parameters(&shifted))?;
        shifted[i] = params[i];
        let forward = (fp - f0) / h;
        let backward = (f0 - fm) / h;
        let central = (fp - fm) / (2.0 * h);
        let scale = forward.abs().max(backward.abs()).max(1.0);
        if (forward - backward).abs() > 1e-2 * scale {
            report.skipped_kinks += 1;
            continue;
        }
        let denom = grad[i].abs().max(central.abs()).max(1e-6);
        let rel = (grad[i] - central).abs() / denom;
        report.checked += 1;
        if rel > report.max_relative_error || report.worst_index.is_none() {
            report.max_relative_error = report.max_relative_error.max(rel);
            if rel >= report.max_relative_error {
                report.worst_index = Some(i);
            }
        }
    }
    Ok(report)
}
