//! Small seeded toy datasets and random networks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::model::{Activation, Dataset, Dense, NeuralNetwork, Network};

/// Two interleaving half circles with Gaussian-ish noise, labels 0 and 1.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let t = std::f64::consts::PI * rng.gen::<f64>();
        let (x, y) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        inputs.push(vec![x + noise * gaussian(&mut rng), y + noise * gaussian(&mut rng)]);
        labels.push(label);
    }
    Dataset { inputs, labels }
}

/// Isotropic clusters around the given centers, one class per center.
pub fn blobs(n: usize, centers: &[Vec<f64>], spread: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % centers.len();
        inputs.push(centers[label].iter().map(|c| c + spread * gaussian(&mut rng)).collect());
        labels.push(label);
    }
    Dataset { inputs, labels }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Dense network with uniform `±sqrt(6/(fan_in+fan_out))` weights and small
/// uniform biases. `widths` lists every layer width, input first.
pub fn random_network(widths: &[usize], activation: Activation, seed: u64) -> NeuralNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = widths
        .windows(2)
        .map(|w| {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            Dense {
                weight: Matrix::from_fn(n_out, n_in, |_, _| rng.gen_range(-limit..limit)),
                bias: (0..n_out).map(|_| rng.gen_range(-0.1..0.1)).collect(),
            }
        })
        .collect();
    Network::new(widths[0], activation, layers).expect("widths chain")
}
