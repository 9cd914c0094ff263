//! Shared inputs for the criterion benchmarks.

use neurolens_core::rng::SplitMix64;
use neurolens_core::{generate, ActivationDataset, Representation, SynthConfig};

/// `n` draws from a two-component Gaussian mixture.
pub fn mixture_values(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|i| {
            let center = if i % 3 == 0 { 4.0 } else { 0.0 };
            center + rng.next_normal()
        })
        .collect()
}

/// A sparse SAE-style dataset with concept-dependent means.
pub fn layer_dataset(n_neurons: usize, k: usize, per_concept: usize) -> ActivationDataset {
    let mut cfg = SynthConfig::uniform(per_concept, n_neurons, k, 1.0, 1.0, 0.4, Representation::Sae, 5);
    for (j, row) in cfg.means.iter_mut().enumerate() {
        for (i, m) in row.iter_mut().enumerate() {
            *m = ((i * 7 + j * 3) % 5) as f64;
        }
    }
    generate(&cfg).expect("benchmark config is valid")
}
