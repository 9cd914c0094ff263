use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::DensityBank;
use crate::error::{Error, Result};
use crate::intervention::InterventionPlan;
use crate::store::ActivationDataset;

/// Variance smoothing relative to the largest per-neuron variance, as in
/// common Gaussian naive Bayes implementations.
pub const VAR_SMOOTHING: f64 = 1e-9;
/// Absolute floor on every class-conditional standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-9;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian naive Bayes over activation vectors with a uniform class prior.
/// Stands in for the model's output head when scoring interventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    n_neurons: usize,
    n_concepts: usize,
    // concept-major: [concept * n_neurons + neuron]
    means: Vec<f64>,
    stds: Vec<f64>,
}

/// Per-concept accuracy and mean probability assigned to the true concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptResults {
    pub accuracy: Vec<f64>,
    pub confidence: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ReadoutModel {
    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn mean(&self, concept: usize, neuron: usize) -> f64 {
        self.means[concept * self.n_neurons + neuron]
    }

    pub fn std(&self, concept: usize, neuron: usize) -> f64 {
        self.stds[concept * self.n_neurons + neuron]
    }

    /// Unnormalized log-likelihood of `x` under each concept.
    pub fn log_scores(&self, x: &[f32]) -> Vec<f64> {
        (0..self.n_concepts)
            .map(|c| {
                let base = c * self.n_neurons;
                x.iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let s = self.stds[base + j];
                        let z = (v as f64 - self.means[base + j]) / s;
                        -LN_SQRT_2PI - s.ln() - 0.5 * z * z
                    })
                    .sum()
            })
            .collect()
    }

    /// Softmax of the class scores.
    pub fn confidences(&self, x: &[f32]) -> Vec<f64> {
        let scores = self.log_scores(x);
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }

    /// Most likely concept (lowest index on ties) and the confidences.
    pub fn predict(&self, x: &[f32]) -> (usize, Vec<f64>) {
        let conf = self.confidences(x);
        let mut best = 0;
        for (c, &p) in conf.iter().enumerate() {
            if p > conf[best] {
                best = c;
            }
        }
        (best, conf)
    }
}

/// Fits per-(concept, neuron) Gaussians; every concept needs 2+ samples.
pub fn train_readout(dataset: &ActivationDataset) -> Result<ReadoutModel> {
    let d = dataset.n_neurons();
    let k = dataset.n_concepts();
    let mut counts = vec![0usize; k];
    for &l in dataset.labels() {
        counts[l as usize] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(Error::InvalidArgument(format!(
            "readout needs at least 2 samples per concept; concept {c} has {}",
            counts[c]
        )));
    }
    let mut sums = vec![0.0; k * d];
    for (s, row) in dataset.rows().enumerate() {
        let base = dataset.label(s) * d;
        for (j, &v) in row.iter().enumerate() {
            sums[base + j] += v as f64;
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .enumerate()
        .map(|(idx, s)| s / counts[idx / d.max(1)] as f64)
        .collect();
    let mut sq = vec![0.0; k * d];
    for (s, row) in dataset.rows().enumerate() {
        let base = dataset.label(s) * d;
        for (j, &v) in row.iter().enumerate() {
            let dev = v as f64 - means[base + j];
            sq[base + j] += dev * dev;
        }
    }
    let vars: Vec<f64> = sq
        .iter()
        .enumerate()
        .map(|(idx, s)| s / counts[idx / d.max(1)] as f64)
        .collect();

    // pooled per-neuron variance sets the smoothing scale
    let n = dataset.n_samples() as f64;
    let mut max_var: f64 = 0.0;
    for j in 0..d {
        let mean = (0..dataset.n_samples())
            .map(|s| dataset.value(s, j) as f64)
            .sum::<f64>()
            / n;
        let var = (0..dataset.n_samples())
            .map(|s| (dataset.value(s, j) as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        max_var = max_var.max(var);
    }
    let eps = VAR_SMOOTHING * max_var;
    let stds = vars
        .iter()
        .map(|v| (v + eps).sqrt().max(SIGMA_FLOOR))
        .collect();
    Ok(ReadoutModel {
        n_neurons: d,
        n_concepts: k,
        means,
        stds,
    })
}

/// Runs the readout over `dataset`, optionally rewriting each sample with an
/// intervention first.
pub fn evaluate_readout(
    model: &ReadoutModel,
    dataset: &ActivationDataset,
    intervention: Option<(&InterventionPlan, Option<&DensityBank>)>,
) -> Result<ConceptResults> {
    if model.n_neurons != dataset.n_neurons() || model.n_concepts != dataset.n_concepts() {
        return Err(Error::InvalidArgument(format!(
            "readout is {} neurons x {} concepts, dataset is {} x {}",
            model.n_neurons,
            model.n_concepts,
            dataset.n_neurons(),
            dataset.n_concepts()
        )));
    }
    let per_sample: Vec<(bool, f64)> = (0..dataset.n_samples())
        .into_par_iter()
        .map(|s| {
            let label = dataset.label(s);
            let (pred, conf) = match intervention {
                Some((plan, bank)) => model.predict(&plan.apply(dataset.row(s), bank)?),
                None => model.predict(dataset.row(s)),
            };
            Ok((pred == label, conf[label]))
        })
        .collect::<Result<_>>()?;

    // sequential fold keeps the floating-point sums order-independent of
    // the thread schedule
    let k = dataset.n_concepts();
    let mut hits = vec![0usize; k];
    let mut conf = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (s, (hit, c)) in per_sample.into_iter().enumerate() {
        let label = dataset.label(s);
        counts[label] += 1;
        hits[label] += hit as usize;
        conf[label] += c;
    }
    Ok(ConceptResults {
        accuracy: hits
            .iter()
            .zip(&counts)
            .map(|(&h, &n)| h as f64 / n as f64)
            .collect(),
        confidence: conf.iter().zip(&counts).map(|(&c, &n)| c / n as f64).collect(),
        counts,
    })
}
