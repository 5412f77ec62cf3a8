//! Independent oracles shared by the integration tests. Nothing here calls the
//! code paths it is used to check.
#![allow(dead_code)]

use polyenv::model::{Activation, NeuralNetwork, Norm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn act(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => x.max(0.0),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Tanh => x.tanh(),
        Activation::Arctan => x.atan(),
    }
}

/// Straight-line evaluation with explicit index loops.
pub fn forward_oracle(net: &NeuralNetwork, x: &[f64]) -> Vec<f64> {
    let layers = net.layers();
    let mut h = x.to_vec();
    for (k, layer) in layers.iter().enumerate() {
        let mut z = vec![0.0; layer.weight.rows()];
        for i in 0..layer.weight.rows() {
            let mut acc = layer.bias[i];
            for j in 0..layer.weight.cols() {
                acc += layer.weight.get(i, j) * h[j];
            }
            z[i] = acc;
        }
        h = if k + 1 == layers.len() {
            z
        } else {
            z.into_iter().map(|v| act(net.activation(), v)).collect()
        };
    }
    h
}

/// Uniform sample from the ball of radius `eps` around `x` (no box).
pub fn sample_ball(rng: &mut ChaCha8Rng, x: &[f64], eps: f64, norm: Norm) -> Vec<f64> {
    match norm {
        Norm::Inf => x.iter().map(|&v| v + eps * rng.gen_range(-1.0..=1.0)).collect(),
        Norm::Two => {
            let dir = unit_direction(rng, x.len());
            let r = eps * rng.gen::<f64>().powf(1.0 / x.len() as f64);
            x.iter().zip(dir).map(|(&v, d)| v + r * d).collect()
        }
    }
}

/// Sample from the sphere of radius `eps` (l∞: a random face point).
pub fn sample_sphere(rng: &mut ChaCha8Rng, x: &[f64], eps: f64, norm: Norm) -> Vec<f64> {
    match norm {
        Norm::Inf => {
            let face = rng.gen_range(0..x.len());
            let mut p: Vec<f64> = x.iter().map(|&v| v + eps * rng.gen_range(-1.0..=1.0)).collect();
            p[face] = x[face] + if rng.gen::<bool>() { eps } else { -eps };
            p
        }
        Norm::Two => {
            let dir = unit_direction(rng, x.len());
            x.iter().zip(dir).map(|(&v, d)| v + eps * d).collect()
        }
    }
}

pub fn unit_direction(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = v.iter().map(|a| a * a).sum::<f64>();
        if s > 1e-6 && s <= 1.0 {
            let s = s.sqrt();
            return v.into_iter().map(|a| a / s).collect();
        }
    }
}

pub fn lp(v: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::Two => v.iter().map(|a| a * a).sum::<f64>().sqrt(),
        Norm::Inf => v.iter().fold(0.0f64, |m, a| m.max(a.abs())),
    }
}

/// Exact minimum of `‖Δ‖₂` s.t. `a·Δ + b ≤ 0`, `lo ≤ Δ ≤ hi`, by enumerating
/// every assignment of coordinates to {free, at lo, at hi} and solving the
/// least-norm equality problem on the free ones (KKT active-set brute force).
pub fn kkt_l2_oracle(a: &[f64], b: f64, lo: &[f64], hi: &[f64]) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    let n = a.len();
    let mut best = f64::INFINITY;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut delta = vec![0.0; n];
        let mut free = Vec::new();
        for i in 0..n {
            match c % 3 {
                0 => free.push(i),
                1 => delta[i] = lo[i],
                _ => delta[i] = hi[i],
            }
            c /= 3;
        }
        let fixed_sum: f64 = (0..n).filter(|i| !free.contains(i)).map(|i| a[i] * delta[i]).sum();
        let residual = b + fixed_sum;
        if residual > 0.0 {
            let s: f64 = free.iter().map(|&i| a[i] * a[i]).sum();
            if s == 0.0 {
                continue;
            }
            for &i in &free {
                delta[i] = -residual * a[i] / s;
            }
        }
        let feasible = (0..n).all(|i| delta[i] >= lo[i] - 1e-12 && delta[i] <= hi[i] + 1e-12)
            && a.iter().zip(&delta).map(|(x, y)| x * y).sum::<f64>() + b <= 1e-9;
        if feasible {
            best = best.min(lp(&delta, Norm::Two));
        }
    }
    best
}

/// Exact minimum of `‖Δ‖∞` under the same constraints: the smallest `t` for
/// which the box `[max(lo,−t), min(hi,t)]` reaches the halfspace, by bisection
/// on the monotone feasibility test.
pub fn linf_threshold_oracle(a: &[f64], b: f64, lo: &[f64], hi: &[f64]) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    let reach = |t: f64| -> f64 {
        b + a
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&ai, (&l, &h))| {
                let (l, h) = (l.max(-t), h.min(t));
                (ai * l).min(ai * h)
            })
            .sum::<f64>()
    };
    let t_max = lo.iter().chain(hi).fold(0.0f64, |m, v| m.max(v.abs()));
    if reach(t_max) > 1e-12 {
        return f64::INFINITY;
    }
    let (mut low, mut high) = (0.0, t_max);
    for _ in 0..200 {
        let mid = 0.5 * (low + high);
        if reach(mid) <= 0.0 {
            high = mid;
        } else {
            low = mid;
        }
    }
    high
}

/// Random widths: input ≤ 6, 1..=3 hidden layers of ≤ 6, output 2..=4.
pub fn random_widths(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let depth = rng.gen_range(2..=4);
    let mut w = vec![rng.gen_range(1..=6)];
    for _ in 1..depth - 1 {
        w.push(rng.gen_range(1..=6));
    }
    w.push(rng.gen_range(2..=4));
    w
}

/// Maximum of σ(x) − d·x over x ≥ 0 on a fine grid, refined by golden section.
pub fn upper_tangent_oracle(kind: Activation, d: f64) -> f64 {
    let f = |x: f64| act(kind, x) - d * x;
    let (mut best_x, mut best) = (0.0, f(0.0));
    let n = 20_000;
    for k in 0..=n {
        let x = 60.0 * k as f64 / n as f64;
        if f(x) > best {
            best = f(x);
            best_x = x;
        }
    }
    let (mut a, mut b) = ((best_x - 0.003f64).max(0.0), best_x + 0.003);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - g * (b - a);
        let e = a + g * (b - a);
        if f(c) > f(e) {
            b = e;
        } else {
            a = c;
        }
    }
    f(0.5 * (a + b)).max(best)
}
