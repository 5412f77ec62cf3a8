mod common;

use common::{kkt_l2_oracle, linf_threshold_oracle, lp};
use polyenv::bounds::Propagator;
use polyenv::envelope::{
    certify_point, constrained_distance, greedy_distance, holder_optimal_delta, search_with,
    signed_distance, unconstrained_distance, Phase,
};
use polyenv::linalg::Matrix;
use polyenv::model::{Activation, AdversarialBudget, Dense, InputBox, Network, NeuralNetwork, Norm};
use polyenv::synthetic::random_network;
use rand::Rng;

/// Smallest t along sampled directions u with a·(t·u) + b = 0.
fn direction_search(a: &[f64; 2], b: f64, norm: Norm) -> f64 {
    let n = 200_000;
    let mut best = f64::INFINITY;
    for k in 0..n {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let (c, s) = (theta.cos(), theta.sin());
        let u = match norm {
            Norm::Two => [c, s],
            Norm::Inf => {
                let m = c.abs().max(s.abs());
                [c / m, s / m]
            }
        };
        let slope = a[0] * u[0] + a[1] * u[1];
        if slope < 0.0 {
            best = best.min(-b / slope);
        }
    }
    best
}

#[test]
fn unconstrained_distance_examples() {
    let a = [3.0, 4.0];
    let d2 = unconstrained_distance(&a, 5.0, &[0.0, 0.0], Norm::Two);
    assert!((d2 - direction_search(&a, 5.0, Norm::Two)).abs() < 1e-6);
    assert!((d2 - 1.0).abs() < 1e-15);
    let dinf = unconstrained_distance(&a, 5.0, &[0.0, 0.0], Norm::Inf);
    assert!((dinf - direction_search(&a, 5.0, Norm::Inf)).abs() < 1e-6);
    assert!((dinf - 5.0 / 7.0).abs() < 1e-15);
    assert_eq!(unconstrained_distance(&a, -2.0, &[0.0, 0.0], Norm::Two), 0.0);
    assert_eq!(unconstrained_distance(&[0.0, 0.0], 1.0, &[0.0, 0.0], Norm::Two), f64::INFINITY);
    assert_eq!(unconstrained_distance(&[0.0, 0.0], -1.0, &[0.0, 0.0], Norm::Two), 0.0);
}

#[test]
fn holder_examples() {
    let d = holder_optimal_delta(&[3.0, 4.0], 5.0, Norm::Two).unwrap();
    assert!((d[0] + 0.6).abs() < 1e-15 && (d[1] + 0.8).abs() < 1e-15);
    let d = holder_optimal_delta(&[3.0, -4.0], 7.0, Norm::Inf).unwrap();
    assert_eq!(d, vec![-1.0, 1.0]);
    assert!(holder_optimal_delta(&[0.0, 0.0], 1.0, Norm::Two).is_err());
}

#[test]
fn holder_identity_on_random_instances() {
    let mut rng = common::rng(4);
    for _ in 0..500 {
        let n = rng.gen_range(1..8);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b = rng.gen_range(0.01..5.0);
        for norm in [Norm::Two, Norm::Inf] {
            let d = holder_optimal_delta(&a, b, norm).unwrap();
            let residual: f64 = a.iter().zip(&d).map(|(x, y)| x * y).sum::<f64>() + b;
            assert!(residual.abs() < 1e-12);
            let dual = match norm {
                Norm::Two => lp(&a, Norm::Two),
                Norm::Inf => a.iter().map(|v| v.abs()).sum(),
            };
            assert!((lp(&d, norm) - b / dual).abs() < 1e-12);
        }
    }
}

#[test]
fn constrained_distance_examples() {
    let wide = ([-1.0, -1.0], [1.0, 1.0]);
    assert_eq!(constrained_distance(&[3.0, 1.0], -0.5, &wide.0, &wide.1, Norm::Two, 20).unwrap(), 0.0);

    let g = greedy_distance(&[3.0, 1.0], 3.0, &wide.0, &wide.1, Norm::Two, 20).unwrap();
    assert!((g.delta[0] + 0.9).abs() < 1e-12 && (g.delta[1] + 0.3).abs() < 1e-12);
    assert!((g.distance - 0.9f64.sqrt()).abs() < 1e-12);
    assert!((g.distance - kkt_l2_oracle(&[3.0, 1.0], 3.0, &wide.0, &wide.1)).abs() < 1e-12);
    assert!((g.distance - 0.94868).abs() < 1e-5);

    let (lo, hi) = ([-0.8, -2.0], [0.8, 2.0]);
    let g = greedy_distance(&[3.0, 1.0], 3.0, &lo, &hi, Norm::Two, 20).unwrap();
    assert!((g.delta[0] + 0.8).abs() < 1e-12 && (g.delta[1] + 0.6).abs() < 1e-12);
    assert!((g.distance - 1.0).abs() < 1e-12);
    assert!((g.distance - kkt_l2_oracle(&[3.0, 1.0], 3.0, &lo, &hi)).abs() < 1e-12);

    let (lo, hi) = ([-0.3, -0.3], [0.3, 0.3]);
    assert_eq!(constrained_distance(&[1.0, 0.0], 1.0, &lo, &hi, Norm::Two, 20).unwrap(), f64::INFINITY);
    assert_eq!(constrained_distance(&[1.0, 0.0], 1.0, &lo, &hi, Norm::Inf, 20).unwrap(), f64::INFINITY);
}

#[test]
fn constrained_distance_rejects_mismatched_box() {
    assert!(constrained_distance(&[1.0, 2.0], 1.0, &[-1.0], &[1.0, 1.0], Norm::Two, 20).is_err());
}

fn random_instance(rng: &mut rand_chacha::ChaCha8Rng) -> (Vec<f64>, f64, Vec<f64>, Vec<f64>) {
    let n = rng.gen_range(1..=4);
    let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let b = rng.gen_range(-0.2..2.0);
    let lo: Vec<f64> = (0..n).map(|_| -rng.gen_range(0.0..1.5)).collect();
    let hi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.5)).collect();
    (a, b, lo, hi)
}

#[test]
fn greedy_matches_exact_oracles() {
    let mut rng = common::rng(17);
    for _ in 0..500 {
        let (a, b, lo, hi) = random_instance(&mut rng);
        let g2 = constrained_distance(&a, b, &lo, &hi, Norm::Two, 20).unwrap();
        let o2 = kkt_l2_oracle(&a, b, &lo, &hi);
        assert!(g2 == o2 || (g2 - o2).abs() < 1e-6, "l2 greedy {g2} oracle {o2} for {a:?} {b} {lo:?} {hi:?}");
        let gi = constrained_distance(&a, b, &lo, &hi, Norm::Inf, 20).unwrap();
        let oi = linf_threshold_oracle(&a, b, &lo, &hi);
        assert!(gi == oi || (gi - oi).abs() < 1e-6, "linf greedy {gi} oracle {oi}");
    }
}

#[test]
fn greedy_rounds_never_decrease_and_dominate_unconstrained() {
    let mut rng = common::rng(23);
    for _ in 0..500 {
        let (a, b, lo, hi) = random_instance(&mut rng);
        for norm in [Norm::Two, Norm::Inf] {
            let g = greedy_distance(&a, b, &lo, &hi, norm, 20).unwrap();
            for w in g.round_distances.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{:?}", g.round_distances);
            }
            let x = vec![0.0; a.len()];
            let free = unconstrained_distance(&a, b, &x, norm);
            assert!(g.distance >= free - 1e-12);
        }
    }
}

#[test]
fn capped_greedy_is_a_lower_bound() {
    let mut rng = common::rng(29);
    for _ in 0..300 {
        let (a, b, lo, hi) = random_instance(&mut rng);
        let full = constrained_distance(&a, b, &lo, &hi, Norm::Two, 20).unwrap();
        let capped = greedy_distance(&a, b, &lo, &hi, Norm::Two, 1).unwrap();
        assert!(capped.distance <= full + 1e-12);
    }
}

#[test]
fn signed_distance_examples() {
    let a = [1.0, 1.0];
    assert!((signed_distance(&a, -1.0, None, Norm::Two, 20).unwrap() + 1.0 / 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(signed_distance(&a, 0.0, None, Norm::Two, 20).unwrap(), 0.0);
    let x = [0.0, 0.0];
    assert_eq!(
        signed_distance(&[3.0, 4.0], 5.0, None, Norm::Inf, 20).unwrap(),
        unconstrained_distance(&[3.0, 4.0], 5.0, &x, Norm::Inf)
    );
    // Boxed, positive side: identical to the constrained distance.
    let (lo, hi) = ([-0.8, -2.0], [0.8, 2.0]);
    let s = signed_distance(&[3.0, 1.0], 3.0, Some((&lo, &hi)), Norm::Two, 20).unwrap();
    assert!((s - 1.0).abs() < 1e-12);
    // Boxed, violating side: reflected problem, same oracle.
    let s = signed_distance(&[3.0, 1.0], -3.0, Some((&lo, &hi)), Norm::Two, 20).unwrap();
    assert!((s + kkt_l2_oracle(&[-3.0, -1.0], 3.0, &lo, &hi)).abs() < 1e-12);
    assert!(s < 0.0);
}

fn identity_net() -> NeuralNetwork {
    Network::new(
        2,
        Activation::Relu,
        vec![Dense {
            weight: Matrix::identity(2),
            bias: vec![0.0, 0.0],
        }],
    )
    .unwrap()
}

#[test]
fn certify_affine_examples() {
    let net = identity_net();
    let x = [1.0, 0.0];
    for prop in [Propagator::Backward, Propagator::Ibp] {
        let c = certify_point(&net, &x, 0, &AdversarialBudget::new(Norm::Two, 0.3).unwrap(), prop).unwrap();
        assert!((c.envelope_distance - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.radius, 0.3);
        assert_eq!(c.phase, Phase::Full);
        assert_eq!(c.class_distances[0], f64::INFINITY);

        let c = certify_point(&net, &x, 0, &AdversarialBudget::new(Norm::Two, 1.0).unwrap(), prop).unwrap();
        assert!((c.radius - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert_eq!(c.phase, Phase::Partial);

        let c = certify_point(&net, &x, 1, &AdversarialBudget::new(Norm::Two, 0.3).unwrap(), prop).unwrap();
        assert_eq!(c.radius, 0.0);
        assert_eq!(c.phase, Phase::None);
        assert_eq!(c.prediction, 0);
    }
}

#[test]
fn certify_with_box_uses_box_distances() {
    let net = identity_net();
    let x = [0.9, 0.1];
    let budget = AdversarialBudget::new(Norm::Two, 2.0).unwrap().with_box(InputBox::new(0.0, 1.0).unwrap());
    let c = certify_point(&net, &x, 0, &budget, Propagator::Backward).unwrap();
    // Margin x0 − x1 = 0.8, boxed problem: Δ ∈ [−0.9, 0.1] × [−0.1, 0.9].
    let oracle = kkt_l2_oracle(&[1.0, -1.0], 0.8, &[-0.9, -0.1], &[0.1, 0.9]);
    assert!((c.envelope_distance - oracle).abs() < 1e-12);
    let free = certify_point(&net, &x, 0, &AdversarialBudget::new(Norm::Two, 2.0).unwrap(), Propagator::Backward).unwrap();
    assert!(c.envelope_distance >= free.envelope_distance - 1e-12, "{} {}", c.envelope_distance, free.envelope_distance);
    assert!(certify_point(&net, &[1.5, 0.0], 0, &budget, Propagator::Backward).is_err());
}

#[test]
fn certificate_invariants_on_random_nets() {
    let mut rng = common::rng(41);
    for seed in 0..20u64 {
        let widths = common::random_widths(&mut rng);
        let net = random_network(&widths, Activation::ALL[seed as usize % 4], seed);
        for _ in 0..10 {
            let x: Vec<f64> = (0..widths[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let label = net.predict(&x).unwrap();
            let eps = rng.gen_range(0.0..0.5);
            let c = certify_point(&net, &x, label, &AdversarialBudget::new(Norm::Inf, eps).unwrap(), Propagator::Backward).unwrap();
            assert!(c.radius <= eps);
            assert_eq!(c.radius == eps, c.phase == Phase::Full);
            let min = c.class_distances.iter().enumerate().filter(|(i, _)| *i != label).map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
            assert_eq!(min, c.envelope_distance);
        }
    }
}

#[test]
fn search_stub_fully_robust_tracks_hi() {
    let out = search_with(0.0, 0.4, 1e-3, Ok).unwrap();
    assert!((out.epsilon - 0.4).abs() <= 1e-3);
}

#[test]
fn search_stub_never_certified_tracks_lo() {
    let out = search_with(0.1, 0.4, 1e-3, |_| Ok(0.0)).unwrap();
    assert!((out.epsilon - 0.1).abs() <= 1e-3);
}

#[test]
fn search_partial_credit_beats_bisection() {
    let tol = 0.4 / 4096.0;
    let mut probes = Vec::new();
    let pec = search_with(0.0, 0.4, tol, |eps| {
        probes.push(eps);
        Ok(eps.min(0.1))
    })
    .unwrap();
    // first probe 0.2 certifies 0.1: bracket [0.1, 0.2] after one call
    assert_eq!(probes[0], 0.2);
    let binary = search_with(0.0, 0.4, tol, |eps| Ok(if eps <= 0.1 { eps } else { 0.0 })).unwrap();
    assert!((pec.epsilon - 0.1).abs() <= tol);
    assert!((binary.epsilon - 0.1).abs() <= tol);
    assert_eq!(binary.iterations, 12);
    assert!(pec.iterations < binary.iterations, "{} vs {}", pec.iterations, binary.iterations);
}

#[test]
fn search_rejects_bad_interval() {
    assert!(search_with(0.4, 0.1, 1e-3, Ok).is_err());
    assert!(search_with(-0.1, 0.1, 1e-3, Ok).is_err());
    assert!(search_with(0.0, 0.1, 0.0, Ok).is_err());
}

#[test]
fn bisection_count_is_twelve_on_the_reference_interval() {
    let tol = 9.765625e-5;
    let mut rng = common::rng(5);
    for _ in 0..2000 {
        let target: f64 = rng.gen_range(0.0..0.4);
        let out = search_with(0.0, 0.4, tol, |eps| Ok(if eps <= target { eps } else { 0.0 })).unwrap();
        assert_eq!(out.iterations, 12, "target {target}");
    }
}

/// margin(x) = relu(x) + 0.15 at x = 0.1. Once the neuron is unstable the
/// shared slope is s = (0.1 + ε)/(2ε) and the envelope distance is 0.1 + 0.15/s,
/// which grows with ε.
#[test]
fn envelope_distance_can_grow_with_eps() {
    let net = Network::new(
        1,
        Activation::Relu,
        vec![
            Dense { weight: Matrix::from_rows(&[vec![1.0]]), bias: vec![0.0] },
            Dense { weight: Matrix::from_rows(&[vec![1.0], vec![0.0]]), bias: vec![0.15, 0.0] },
        ],
    )
    .unwrap();
    let d = |eps: f64| {
        certify_point(&net, &[0.1], 0, &AdversarialBudget::new(Norm::Two, eps).unwrap(), Propagator::Backward)
            .unwrap()
            .envelope_distance
    };
    let oracle = |eps: f64| 0.1 + 0.15 * 2.0 * eps / (0.1 + eps);
    assert!((d(0.05) - 0.25).abs() < 1e-12);
    assert!((d(0.5) - oracle(0.5)).abs() < 1e-12);
    assert!((d(1.0) - oracle(1.0)).abs() < 1e-12);
    assert!(d(1.0) > d(0.5) && d(0.5) < 0.5);
}
