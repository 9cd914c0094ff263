//! Seeded synthetic activation datasets.
//!
//! Every (neuron, concept) pair is a zero-inflated Gaussian: with probability
//! `1 - fire_prob` the activation is exactly 0, otherwise it is drawn from
//! `N(mean, std)`. SAE-kind data additionally clamps negative draws to 0.
//!
//! Draw order is part of the output contract: concepts in index order, then
//! samples, then neurons; for each entry one uniform decides firing and, if
//! it fires, one normal (two uniforms) follows. See [`crate::rng`] for the
//! stream itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::store::{ActivationDataset, Manifest, Representation};

/// Generator parameters. Matrices are indexed `[neuron][concept]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples_per_concept: usize,
    pub n_neurons: usize,
    pub k: usize,
    pub means: Vec<Vec<f64>>,
    pub stds: Vec<Vec<f64>>,
    pub fire_probs: Vec<Vec<f64>>,
    pub representation: Representation,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_names: Option<Vec<String>>,
}

impl SynthConfig {
    /// Config where every (neuron, concept) pair shares the same parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        n_samples_per_concept: usize,
        n_neurons: usize,
        k: usize,
        mean: f64,
        std: f64,
        fire_prob: f64,
        representation: Representation,
        seed: u64,
    ) -> Self {
        SynthConfig {
            n_samples_per_concept,
            n_neurons,
            k,
            means: vec![vec![mean; k]; n_neurons],
            stds: vec![vec![std; k]; n_neurons],
            fire_probs: vec![vec![fire_prob; k]; n_neurons],
            representation,
            seed,
            concept_names: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_samples_per_concept == 0 {
            return Err(Error::InvalidArgument(
                "k and n_samples_per_concept must be positive".into(),
            ));
        }
        for (name, m) in [
            ("means", &self.means),
            ("stds", &self.stds),
            ("fire_probs", &self.fire_probs),
        ] {
            if m.len() != self.n_neurons || m.iter().any(|row| row.len() != self.k) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be {} x {} (neurons x concepts)",
                    self.n_neurons, self.k
                )));
            }
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
            }
        }
        if self.stds.iter().flatten().any(|&s| s < 0.0) {
            return Err(Error::InvalidArgument("stds must be >= 0".into()));
        }
        if self
            .fire_probs
            .iter()
            .flatten()
            .any(|&p| !(0.0..=1.0).contains(&p))
        {
            return Err(Error::InvalidArgument("fire_probs must lie in [0, 1]".into()));
        }
        if let Some(names) = &self.concept_names {
            if names.len() != self.k {
                return Err(Error::InvalidArgument(format!(
                    "concept_names has {} entries, expected {}",
                    names.len(),
                    self.k
                )));
            }
        }
        Ok(())
    }
}

/// Draws a dataset of `n_samples_per_concept * k` rows, labels in
/// generation order.
pub fn generate(config: &SynthConfig) -> Result<ActivationDataset> {
    config.validate()?;
    let sae = config.representation == Representation::Sae;
    let mut rng = SplitMix64::new(config.seed);
    let n_rows = config.n_samples_per_concept * config.k;
    let mut labels = Vec::with_capacity(n_rows);
    let mut values = Vec::with_capacity(n_rows * config.n_neurons);
    for concept in 0..config.k {
        for _ in 0..config.n_samples_per_concept {
            labels.push(concept as u32);
            for j in 0..config.n_neurons {
                let fires = rng.next_f64() < config.fire_probs[j][concept];
                let v = if fires {
                    let draw = config.means[j][concept] + config.stds[j][concept] * rng.next_normal();
                    if sae && draw < 0.0 {
                        0.0
                    } else {
                        draw
                    }
                } else {
                    0.0
                };
                values.push(v as f32);
            }
        }
    }
    let mut manifest = Manifest::synthetic(config.representation, config.k);
    if let Some(names) = &config.concept_names {
        manifest.concept_names = names.clone();
    }
    ActivationDataset::new(config.n_neurons, config.k, labels, values, manifest)
}

/// One dataset per gap: concept `i` of neuron `j` gets its mean shifted by
/// `i * gap * std[j][i]` from the base config. All datasets share `seed`.
pub fn separability_sweep(
    base: &SynthConfig,
    gaps: &[f64],
    seed: u64,
) -> Result<Vec<(f64, ActivationDataset)>> {
    if gaps.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("gaps must be sorted ascending".into()));
    }
    gaps.iter()
        .map(|&gap| {
            let cfg = spread_config(base, gap, seed);
            Ok((gap, generate(&cfg)?))
        })
        .collect()
}

/// The config [`separability_sweep`] uses for one gap.
pub fn spread_config(base: &SynthConfig, gap: f64, seed: u64) -> SynthConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    for (mrow, srow) in cfg.means.iter_mut().zip(&base.stds) {
        for (i, (m, s)) in mrow.iter_mut().zip(srow).enumerate() {
            *m += i as f64 * gap * s;
        }
    }
    cfg
}
