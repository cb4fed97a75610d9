// Central finite differences against backprop, shared with the acceptance
// suite.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use weightscope::nn::{init_network, InitScheme, Network, NetworkSpec};
use weightscope::Matrix;

/// Largest `|g_backprop - g_fd| / max(1, |g_backprop|)` over every weight.
pub fn max_relative_error(net: &Network, batch: &Matrix, labels: &[usize], h: f64) -> f64 {
    let analytic = net.loss_and_grad(batch, labels).unwrap().grads;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (l, grad) in analytic.iter().enumerate() {
        for i in 0..grad.as_slice().len() {
            let w = net.weights[l].as_slice()[i];
            probe.weights[l].as_mut_slice()[i] = w + h;
            let up = probe.loss_and_grad(batch, labels).unwrap().loss;
            probe.weights[l].as_mut_slice()[i] = w - h;
            let down = probe.loss_and_grad(batch, labels).unwrap().loss;
            probe.weights[l].as_mut_slice()[i] = w;
            let fd = (up - down) / (2.0 * h);
            let g = grad.as_slice()[i];
            worst = worst.max((g - fd).abs() / g.abs().max(1.0));
        }
    }
    worst
}

/// A random network no larger than 6-5-4 with a batch of three.
pub fn random_instance(seed: u64) -> (Network, Matrix, Vec<usize>) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sizes = vec![rng.random_range(1..=6), rng.random_range(1..=5), rng.random_range(2..=4)];
    let spec = NetworkSpec::new(sizes.clone()).unwrap();
    let net = init_network(&spec, &InitScheme::normal(0.0, 1.0), seed).unwrap();
    let batch = Matrix::from_vec(3, sizes[0], (0..3 * sizes[0]).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let labels = (0..3).map(|_| rng.random_range(0..sizes[2])).collect();
    (net, batch, labels)
}
