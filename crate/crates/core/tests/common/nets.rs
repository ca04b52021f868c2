//! Small random networks for gradient and forward-pass checks.

use insnsim::predictor::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config() -> CnnConfig {
    CnnConfig {
        input_channels: 6,
        sequence_length: 8,
        conv_channels: vec![5, 4, 3],
        fc_hidden: 7,
        class_counts: [4, 3, 3],
    }
}

pub fn random_net(cfg: &CnnConfig, seed: u64) -> Network<f64> {
    let mut net = cfg.network::<f64>().unwrap();
    init_params(&mut net, seed);
    // Shift biases up so fewer ReLUs sit exactly at their kink.
    let layers = net.layers.clone();
    for l in &layers {
        for b in &mut net.params[l.b_offset..l.b_offset + l.output] {
            *b += 0.05;
        }
    }
    net
}

pub fn random_input(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}
