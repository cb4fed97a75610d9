mod support {
    pub mod gradcheck;
}

use rand::{Rng, SeedableRng};
use weightscope::analysis;
use weightscope::dataset::{ImageSet, LabelSet, LabeledImages};
use weightscope::nn::{self, init_network, InitScheme, NetworkSpec, TrainConfig};
use weightscope::Matrix;

#[test]
fn backprop_matches_finite_differences_5_4_3() {
    let spec = NetworkSpec::new(vec![5, 4, 3]).unwrap();
    let net = init_network(&spec, &InitScheme::normal(0.0, 0.7), 42).unwrap();
    let batch = Matrix::from_vec(4, 5, (0..20).map(|i| (i as f64 * 0.37).sin().abs()).collect()).unwrap();
    let err = support::gradcheck::max_relative_error(&net, &batch, &[0, 2, 1, 2], 1e-5);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn backprop_matches_finite_differences_random() {
    for seed in 0..20 {
        let (net, batch, labels) = support::gradcheck::random_instance(seed);
        let err = support::gradcheck::max_relative_error(&net, &batch, &labels, 1e-5);
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn deeper_network_gradients() {
    let spec = NetworkSpec::new(vec![6, 5, 4, 3]).unwrap();
    let net = init_network(&spec, &InitScheme::normal(0.1, 0.5), 5).unwrap();
    let batch = Matrix::from_vec(3, 6, (0..18).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
    assert!(support::gradcheck::max_relative_error(&net, &batch, &[2, 0, 1], 1e-5) < 1e-6);
}

#[test]
fn step_and_inverse_step_cancel() {
    let spec = NetworkSpec::new(vec![5, 4, 3]).unwrap();
    let net = init_network(&spec, &InitScheme::normal(0.0, 1.0), 1).unwrap();
    let batch = Matrix::from_vec(2, 5, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.9, 0.8, 0.7, 0.6, 0.5]).unwrap();
    let g = net.loss_and_grad(&batch, &[0, 1]).unwrap().grads;
    let neg: Vec<Matrix> = g.iter().map(|m| m.scale(-1.0)).collect();
    let mut moved = net.clone();
    moved.sgd_step(&g, 0.3).unwrap();
    moved.sgd_step(&neg, 0.3).unwrap();
    for (a, b) in moved.weights.iter().zip(&net.weights) {
        assert!(a.max_abs_diff(b) <= 1e-15);
    }
}

fn random_images(n: usize, side: usize, classes: usize, seed: u64) -> LabeledImages {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // sparse bytes, like handwriting on a blank background
    let bytes = (0..n * side * side)
        .map(|_| if rng.random_bool(0.3) { rng.random_range(1..=255u8) } else { 0 })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    LabeledImages::new(
        ImageSet::from_bytes(n, side, side, bytes).unwrap(),
        LabelSet::new(labels, classes).unwrap(),
    )
    .unwrap()
}

#[test]
fn zero_init_hidden_neurons_stay_bitwise_identical() {
    let data = random_images(200, 4, 3, 9);
    let spec = NetworkSpec::new(vec![16, 8, 3]).unwrap();
    let net = init_network(&spec, &InitScheme::zero(), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 10,
        snapshot_every: 2,
        shuffle: false,
        ..TrainConfig::default()
    };
    let out = nn::train(net, &data, &data, &cfg).unwrap();
    let hidden = &out.clouds[0];
    assert_eq!(hidden.steps, 1 + 3 * 20 / 2);
    let mut moved = false;
    for s in 0..hidden.steps {
        let first: Vec<u64> = hidden.point(s, 0).iter().map(|v| v.to_bits()).collect();
        for n in 1..hidden.neurons {
            let other: Vec<u64> = hidden.point(s, n).iter().map(|v| v.to_bits()).collect();
            assert_eq!(first, other, "step {s} neuron {n}");
        }
        moved |= hidden.point(s, 0).iter().any(|&v| v != 0.0);
    }
    assert!(moved, "hidden layer never left zero");
    let tau = analysis::default_tau(hidden);
    assert!(analysis::branching_times(hidden, tau).unwrap().is_empty());
}

#[test]
fn seeded_training_is_reproducible() {
    let data = random_images(120, 3, 4, 2);
    let spec = NetworkSpec::new(vec![9, 6, 4]).unwrap();
    let run = || {
        let net = init_network(&spec, &InitScheme::normal(0.0, 0.1).with_jitter(1e-3), 17).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 17,
            ..TrainConfig::default()
        };
        nn::train(net, &data, &data, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.clouds, b.clouds);
    assert_eq!(a.log, b.log);
}

#[test]
fn normal_init_statistics() {
    let spec = NetworkSpec::new(vec![784, 100, 10]).unwrap();
    let net = init_network(&spec, &InitScheme::normal(0.0, 1e-6), 3).unwrap();
    let w = net.weights[0].as_slice();
    assert_eq!(w.len(), 78400);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
    assert!(mean.abs() < 5e-8, "{mean}");
    assert!((var.sqrt() / 1e-6 - 1.0).abs() < 0.1);
}

#[test]
fn confusion_rows_sum_to_class_counts() {
    let data = random_images(150, 3, 5, 4);
    let spec = NetworkSpec::new(vec![9, 5]).unwrap();
    let net = init_network(&spec, &InitScheme::normal(0.0, 0.5), 4).unwrap();
    let eval = net.evaluate(&data).unwrap();
    let counts = data.labels.class_counts();
    for (row, &c) in eval.confusion.iter().zip(&counts) {
        assert_eq!(row.iter().sum::<u64>(), c as u64);
    }
}
