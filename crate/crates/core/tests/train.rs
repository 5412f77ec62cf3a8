mod common;

use polyenv::attack::{clean_error, pgd_attack, AttackConfig};
use polyenv::bounds::Propagator;
use polyenv::model::{Activation, AdversarialBudget, Dataset, NeuralNetwork, Norm};
use polyenv::synthetic::{blobs, random_network};
use polyenv::train::{
    batch_objective, finite_diff_check, loss_and_grad, objective_gradient, per_regularizer, train,
    train_with_log, EpsilonSchedule, Objective, RegularizerConfig, TrainConfig, TrainingObjective,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn per_examples() {
    let alpha = 0.15;
    assert_eq!(per_regularizer(&[alpha, 2.0 * alpha, 1.0], alpha, 0.1, 2), 0.0);
    // (0, α/2, 3α), T = 2, γ = 2: 2·(1 + 0.5)
    let v = per_regularizer(&[0.0, alpha / 2.0, 3.0 * alpha], alpha, 2.0, 2);
    assert!((v - 3.0).abs() < 1e-12);
    // K = 10 gives nine distances; T = 4 keeps the four smallest.
    let d: Vec<f64> = (0..9).map(|i| i as f64 * 0.01).collect();
    let expected: f64 = (0..4).map(|i| 1.0 - i as f64 * 0.01 / alpha).sum::<f64>() * 0.1;
    assert!((per_regularizer(&d, alpha, 0.1, 4) - expected).abs() < 1e-12);
    // Unreachable hyperplanes contribute nothing; negative distances more than one.
    assert_eq!(per_regularizer(&[f64::INFINITY], alpha, 1.0, 1), 0.0);
    assert!((per_regularizer(&[-alpha], alpha, 1.0, 1) - 2.0).abs() < 1e-12);
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn objective<'a>(
    anchors: Vec<Vec<f64>>,
    centers: Vec<Vec<f64>>,
    labels: Vec<usize>,
    regularized: Vec<usize>,
    reg: RegularizerConfig,
    budget: &'a AdversarialBudget,
) -> TrainingObjective<'a> {
    TrainingObjective {
        anchors,
        centers,
        labels,
        regularized,
        regularizer: reg,
        budget,
        propagator: Propagator::Backward,
        include_cross_entropy: true,
    }
}

#[test]
fn zero_gamma_reduces_to_cross_entropy_gradient() {
    let net = random_network(&[3, 4], Activation::Relu, 1);
    let x = vec![0.2, -0.4, 0.7];
    let budget = AdversarialBudget::new(Norm::Inf, 0.1).unwrap();
    let cfg = TrainConfig { gamma: 0.0, top: 3, ..TrainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (loss, grads) = loss_and_grad(&net, &[&x], &[2], &cfg, &budget, true, &mut rng).unwrap();
    let z = common::forward_oracle(&net, &x);
    let p = softmax(&z);
    assert!((loss + p[2].ln()).abs() < 1e-12);
    for i in 0..4 {
        let r = p[i] - if i == 2 { 1.0 } else { 0.0 };
        assert!((grads.biases[0][i] - r).abs() < 1e-12);
        for j in 0..3 {
            assert!((grads.weights[0].get(i, j) - r * x[j]).abs() < 1e-12);
        }
    }
}

fn check(net: &NeuralNetwork, obj: &impl Objective, what: &str) {
    let report = finite_diff_check(net, obj, 1e-5).unwrap();
    assert!(report.checked > 0, "{what}: everything skipped");
    assert!(report.passes(1e-4), "{what}: {report:?}");
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = common::rng(8);
    let reg = RegularizerConfig { alpha: 0.5, gamma: 1.0, top: 2 };
    for seed in 0..5u64 {
        for &kind in &Activation::ALL {
            let net = random_network(&[2, 5, 4, 3], kind, seed);
            let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..3)).collect();
            for norm in [Norm::Two, Norm::Inf] {
                let budget = AdversarialBudget::new(norm, 0.1).unwrap();
                let ce = objective(xs.clone(), xs.clone(), labels.clone(), vec![], reg, &budget);
                check(&net, &ce, "cross-entropy");
                let per = objective(xs.clone(), xs.clone(), labels.clone(), vec![0, 1, 2], reg, &budget);
                check(&net, &per, "per");
                let adv: Vec<Vec<f64>> = xs
                    .iter()
                    .zip(&labels)
                    .map(|(x, &y)| pgd_attack(&net, x, y, &budget, &AttackConfig::default()).unwrap())
                    .collect();
                let at = objective(adv.clone(), adv, labels.clone(), vec![0, 1, 2], reg, &budget);
                check(&net, &at, "per+at");
            }
        }
    }
}

#[test]
fn ibp_gradients_match_finite_differences() {
    let reg = RegularizerConfig { alpha: 0.5, gamma: 1.0, top: 2 };
    let budget = AdversarialBudget::new(Norm::Two, 0.1).unwrap();
    for &kind in &Activation::ALL {
        let net = random_network(&[2, 6, 3], kind, 3);
        let mut obj = objective(vec![vec![0.1, 0.3]], vec![vec![0.1, 0.3]], vec![1], vec![0], reg, &budget);
        obj.propagator = Propagator::Ibp;
        check(&net, &obj, "ibp");
    }
}

#[test]
fn identical_batch_matches_single_point() {
    let net = random_network(&[2, 6, 3], Activation::Tanh, 2);
    let budget = AdversarialBudget::new(Norm::Inf, 0.2).unwrap();
    let reg = RegularizerConfig { alpha: 0.3, gamma: 0.5, top: 2 };
    let x = vec![0.3, -0.1];
    let single = objective(vec![x.clone()], vec![x.clone()], vec![1], vec![0], reg, &budget);
    let batch = objective(vec![x.clone(); 5], vec![x; 5], vec![1; 5], (0..5).collect(), reg, &budget);
    let (l1, g1) = objective_gradient(&net, &single).unwrap();
    let (l5, g5) = objective_gradient(&net, &batch).unwrap();
    assert!((l1 - l5).abs() < 1e-12);
    for (a, b) in g1.iter().zip(&g5) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn separable() -> Dataset {
    blobs(100, &[vec![0.25, 0.25], vec![0.75, 0.75]], 0.05, 1)
}

#[test]
fn zero_epochs_returns_initial_network() {
    let net = random_network(&[2, 8, 2], Activation::Relu, 0);
    let cfg = TrainConfig { epochs: 0, top: 1, ..TrainConfig::default() };
    let budget = AdversarialBudget::new(Norm::Inf, 0.1).unwrap();
    assert_eq!(train(&net, &separable(), &cfg, &budget).unwrap(), net);
}

#[test]
fn separable_data_is_fit() {
    let net = random_network(&[2, 8, 2], Activation::Relu, 0);
    let data = separable();
    let cfg = TrainConfig { epochs: 50, batch_size: 20, subsample: 5, learning_rate: 1e-2, top: 1, ..TrainConfig::default() };
    let budget = AdversarialBudget::new(Norm::Inf, 0.05).unwrap();
    let trained = train(&net, &data, &cfg, &budget).unwrap();
    assert_eq!(clean_error(&trained, &data).unwrap(), 0.0);
}

#[test]
fn training_is_deterministic() {
    let net = random_network(&[2, 8, 2], Activation::Sigmoid, 5);
    let data = separable();
    let cfg = TrainConfig { epochs: 3, batch_size: 25, subsample: 5, top: 1, use_at: true, seed: 9, ..TrainConfig::default() };
    let budget = AdversarialBudget::new(Norm::Two, 0.1).unwrap();
    let a = train(&net, &data, &cfg, &budget).unwrap();
    let b = train(&net, &data, &cfg, &budget).unwrap();
    assert_eq!(a.parameters(), b.parameters());
}

#[test]
fn warmup_disables_the_regularizer() {
    let net = random_network(&[2, 8, 2], Activation::Relu, 5);
    let data = separable();
    let budget = AdversarialBudget::new(Norm::Inf, 0.1).unwrap();
    let base = TrainConfig { epochs: 4, batch_size: 25, subsample: 10, top: 1, ..TrainConfig::default() };
    let warm = TrainConfig { warmup_epochs: 4, gamma: 5.0, ..base.clone() };
    let plain = TrainConfig { gamma: 0.0, ..base };
    let (a, log) = train_with_log(&net, &data, &warm, &budget).unwrap();
    let b = train(&net, &data, &plain, &budget).unwrap();
    assert_eq!(a.parameters(), b.parameters());
    assert!(log.iter().all(|r| !r.regularized));
}

#[test]
fn subsampled_regularizer_is_unbiased() {
    let net = random_network(&[2, 6, 3], Activation::Relu, 4);
    let budget = AdversarialBudget::new(Norm::Two, 0.3).unwrap();
    let mut rng = common::rng(10);
    let xs: Vec<Vec<f64>> = (0..10).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<usize> = (0..10).map(|_| rng.gen_range(0..3)).collect();
    let cfg = TrainConfig { batch_size: 10, subsample: 3, alpha: 1.0, gamma: 1.0, top: 2, ..TrainConfig::default() };
    let inputs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();

    let reg = cfg.regularizer();
    let mut full = objective(xs.clone(), xs.clone(), labels.clone(), (0..10).collect(), reg, &budget);
    full.include_cross_entropy = false;
    let target = full.eval::<f64>(&net).unwrap();
    assert!(target > 0.0);

    let n = 10_000;
    let mut draw = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            let mut obj = batch_objective(&net, &inputs, &labels, &cfg, &budget, true, &mut draw).unwrap();
            assert_eq!(obj.regularized.len(), 3);
            obj.include_cross_entropy = false;
            obj.eval::<f64>(&net).unwrap()
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - target).abs() <= 3.0 * se, "mean {mean} target {target} se {se}");
}

#[test]
fn doubling_schedule_is_capped() {
    let s = EpsilonSchedule::Doubling { initial: 0.01, every: 2 };
    let got: Vec<f64> = (0..12).map(|e| s.at(e, 0.1)).collect();
    assert_eq!(got[0], 0.01);
    assert_eq!(got[2], 0.02);
    assert_eq!(got[6], 0.08);
    assert_eq!(got[8], 0.1);
    assert!(got.windows(2).all(|w| w[1] >= w[0]));
    assert!(got.iter().all(|&e| e <= 0.1));
    assert_eq!(EpsilonSchedule::Constant.at(7, 0.3), 0.3);
}

#[test]
fn invalid_configs_are_rejected() {
    let net = random_network(&[2, 4, 2], Activation::Relu, 0);
    let budget = AdversarialBudget::new(Norm::Inf, 0.1).unwrap();
    let data = separable();
    for cfg in [
        TrainConfig { top: 2, ..TrainConfig::default() },
        TrainConfig { top: 1, subsample: 200, ..TrainConfig::default() },
        TrainConfig { top: 1, batch_size: 0, ..TrainConfig::default() },
        TrainConfig { top: 1, alpha: 0.0, ..TrainConfig::default() },
    ] {
        assert!(train(&net, &data, &cfg, &budget).is_err());
    }
}

#[test]
fn divergence_is_reported() {
    let net = random_network(&[2, 4, 2], Activation::Relu, 0);
    let budget = AdversarialBudget::new(Norm::Inf, 0.1).unwrap();
    let cfg = TrainConfig { epochs: 50, top: 1, learning_rate: 1e300, ..TrainConfig::default() };
    match train(&net, &separable(), &cfg, &budget) {
        Err(polyenv::Error::Diverged { .. }) => {}
        other => panic!("expected divergence, got {other:?}"),
    }
}
