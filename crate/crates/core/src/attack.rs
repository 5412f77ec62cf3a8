//! Projected gradient ascent on the cross-entropy, inside the budget.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::Result;
use crate::model::{argmax, AdversarialBudget, Dataset, NeuralNetwork, Norm};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub steps: usize,
    /// Defaults to `2.5·ε/steps` when unset.
    pub step_size: Option<f64>,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            steps: 40,
            step_size: None,
            restarts: 1,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn step_size_for(&self, epsilon: f64) -> f64 {
        self.step_size
            .unwrap_or_else(|| 2.5 * epsilon / self.steps.max(1) as f64)
    }
}

/// `logsumexp(z) − z_label`, shifted by the largest logit for stability.
pub fn cross_entropy<T: Real>(logits: &[T], label: usize) -> T {
    let shift = logits
        .iter()
        .map(|v| v.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = T::zero();
    for &z in logits {
        total += (z - shift).exp();
    }
    total.ln() + shift - logits[label]
}

/// Loss, logits and d(loss)/d(input) at `x`.
pub fn input_gradient(net: &NeuralNetwork, x: &[f64], label: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let tape = Tape::new();
    let inputs: Vec<_> = x.iter().map(|&v| tape.var(v)).collect();
    let lifted = net.lift();
    let logits = lifted.forward_lifted(&inputs)?;
    let loss = cross_entropy(&logits, label);
    let grad = tape.gradient(loss);
    Ok((
        loss.value(),
        inputs.iter().map(|&v| grad.wrt(v)).collect(),
        logits.iter().map(|v| v.value()).collect(),
    ))
}

/// Projects onto the budget ball around `center`, then onto the box. The box
/// step cannot leave the ball because `center` lies in the box.
pub fn project(point: &mut [f64], center: &[f64], budget: &AdversarialBudget) {
    let eps = budget.epsilon;
    match budget.norm {
        Norm::Inf => {
            for (p, &c) in point.iter_mut().zip(center) {
                *p = p.clamp(c - eps, c + eps);
            }
        }
        Norm::Two => {
            let dist = point
                .iter()
                .zip(center)
                .map(|(p, c)| (p - c) * (p - c))
                .sum::<f64>()
                .sqrt();
            if dist > eps {
                let scale = if dist > 0.0 { eps / dist } else { 0.0 };
                for (p, &c) in point.iter_mut().zip(center) {
                    *p = c + (*p - c) * scale;
                }
            }
        }
    }
    if let Some(b) = budget.bounds {
        for p in point.iter_mut() {
            *p = p.clamp(b.min, b.max);
        }
    }
}

fn random_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn random_start(rng: &mut ChaCha8Rng, x: &[f64], budget: &AdversarialBudget) -> Vec<f64> {
    let eps = budget.epsilon;
    let mut start: Vec<f64> = match budget.norm {
        Norm::Inf => x.iter().map(|&v| v + rng.gen_range(-1.0..=1.0) * eps).collect(),
        Norm::Two => {
            let dir = random_direction(rng, x.len());
            let r = eps * rng.gen::<f64>().powf(1.0 / x.len() as f64);
            x.iter().zip(dir).map(|(&v, d)| v + r * d).collect()
        }
    };
    project(&mut start, x, budget);
    start
}

/// Best point found by projected gradient ascent. Restart 0 starts from `x`,
/// later restarts from uniform points of the ball. Points that flip the
/// prediction away from `label` beat points that do not; ties go to the
/// higher loss.
pub fn pgd_attack(
    net: &NeuralNetwork,
    x: &[f64],
    label: usize,
    budget: &AdversarialBudget,
    config: &AttackConfig,
) -> Result<Vec<f64>> {
    net.check_input(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let step = config.step_size_for(budget.epsilon);

    let score = |logits: &[f64], loss: f64| (argmax(logits) != label, loss);
    let (loss0, _, logits0) = input_gradient(net, x, label)?;
    let mut best = x.to_vec();
    let mut best_score = score(&logits0, loss0);
    if config.steps == 0 || budget.epsilon == 0.0 {
        return Ok(best);
    }

    for restart in 0..config.restarts.max(1) {
        let mut point = if restart == 0 {
            x.to_vec()
        } else {
            random_start(&mut rng, x, budget)
        };
        for _ in 0..config.steps {
            let (loss, grad, logits) = input_gradient(net, &point, label)?;
            let s = score(&logits, loss);
            if s > best_score {
                best_score = s;
                best = point.clone();
            }
            let mut direction = match budget.norm {
                Norm::Inf => grad.iter().map(|g| if *g > 0.0 { 1.0 } else if *g < 0.0 { -1.0 } else { 0.0 }).collect::<Vec<_>>(),
                Norm::Two => {
                    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                    if n > 0.0 {
                        grad.iter().map(|g| g / n).collect()
                    } else {
                        vec![0.0; grad.len()]
                    }
                }
            };
            if direction.iter().all(|d| *d == 0.0) {
                direction = random_direction(&mut rng, x.len());
                if budget.norm == Norm::Inf {
                    for d in &mut direction {
                        *d = d.signum();
                    }
                }
            }
            for (p, d) in point.iter_mut().zip(&direction) {
                *p += step * d;
            }
            project(&mut point, x, budget);
        }
        let (loss, _, logits) = input_gradient(net, &point, label)?;
        let s = score(&logits, loss);
        if s > best_score {
            best_score = s;
            best = point;
        }
    }
    Ok(best)
}

/// Per-row: true when the row is misclassified cleanly or after the attack.
/// Row `i` seeds its attack with `config.seed + i`.
pub fn attack_dataset(
    net: &NeuralNetwork,
    data: &Dataset,
    budget: &AdversarialBudget,
    config: &AttackConfig,
) -> Result<Vec<bool>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = (&data.inputs[i], data.labels[i]);
            if net.predict(x)? != y {
                return Ok(true);
            }
            let cfg = AttackConfig {
                seed: config.seed.wrapping_add(i as u64),
                ..*config
            };
            let adv = pgd_attack(net, x, y, budget, &cfg)?;
            Ok(net.predict(&adv)? != y)
        })
        .collect()
}

pub fn empirical_robust_error(
    net: &NeuralNetwork,
    data: &Dataset,
    budget: &AdversarialBudget,
    config: &AttackConfig,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let flags = attack_dataset(net, data, budget, config)?;
    Ok(flags.iter().filter(|&&f| f).count() as f64 / data.len() as f64)
}

pub fn clean_error(net: &NeuralNetwork, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut wrong = 0;
    for (x, y) in data.iter() {
        if net.predict(x)? != y {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / data.len() as f64)
}
