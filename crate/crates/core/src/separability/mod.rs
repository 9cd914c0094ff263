//! Concept separability of neurons.
//!
//! A neuron's concept-conditioned densities are discretized onto their shared
//! bin grid and compared with the generalized Jensen-Shannon divergence (in
//! bits). The square root of the divergence, normalized by `sqrt(log2 k)`, is
//! a distance in `[0, 1]`; averaging it over a layer gives the layer score.

mod overlap;

pub use overlap::{
    active_neuron_overlap, iou, top_k_neurons, topk_salient_overlap, OverlapMode, OverlapReport,
    DEFAULT_TOP_K,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{DensityBank, HistogramDensity};
use crate::error::{Error, Result};

const MASS_TOLERANCE: f64 = 1e-9;

/// Base-2 Shannon entropy of a discrete distribution, with `0 log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.log2())
        .sum::<f64>()
}

/// Generalized Jensen-Shannon divergence `H(M) - mean_i H(p_i)` of `k >= 2`
/// distributions on a common grid, where `M` is their uniform mixture.
/// The result lies in `[0, log2 k]`.
pub fn jsd<D: AsRef<[f64]>>(dists: &[D]) -> Result<f64> {
    let k = dists.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "jsd needs at least 2 distributions, got {k}"
        )));
    }
    let len = dists[0].as_ref().len();
    for (i, d) in dists.iter().enumerate() {
        let d = d.as_ref();
        if d.len() != len {
            return Err(Error::InvalidArgument(format!(
                "distribution {i} has {} bins, expected {len}",
                d.len()
            )));
        }
        let mass: f64 = d.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE || d.iter().any(|&q| q.is_nan() || q < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "distribution {i} is not normalized (mass {mass})"
            )));
        }
    }
    let mut mixture = vec![0.0; len];
    for d in dists {
        for (m, &q) in mixture.iter_mut().zip(d.as_ref()) {
            *m += q;
        }
    }
    for m in &mut mixture {
        *m /= k as f64;
    }
    let mean_entropy = dists.iter().map(|d| entropy_bits(d.as_ref())).sum::<f64>() / k as f64;
    let value = entropy_bits(&mixture) - mean_entropy;
    // rounding can push the extremes a few ulps outside the bounds
    Ok(value.clamp(0.0, (k as f64).log2()))
}

/// Normalized Jensen-Shannon distance over the concepts that are present.
///
/// `None` entries are concepts with no activation on this neuron. With no
/// present concept the neuron is unscored (`Ok(None)`); with exactly one,
/// all of its activity belongs to that concept and the distance is 1.
/// Otherwise it is `sqrt(jsd) / sqrt(log2 k')` over the `k'` present ones.
pub fn js_distance<D: AsRef<[f64]>>(dists: &[Option<D>]) -> Result<Option<f64>> {
    let present: Vec<&[f64]> = dists.iter().flatten().map(|d| d.as_ref()).collect();
    match present.len() {
        0 => Ok(None),
        1 => Ok(Some(1.0)),
        k => {
            let d = (jsd(&present)?.sqrt() / (k as f64).log2().sqrt()).min(1.0);
            Ok(Some(d))
        }
    }
}

/// Probability mass per bin, proportional to the density at each bin
/// center. Falls back to raw bin frequencies if every evaluation underflows.
pub fn discretize_density(density: &HistogramDensity) -> Vec<f64> {
    let b = density.n_bins();
    let h = density.bandwidth();
    let width = density.bin_width();
    // Kernel weight between two bin centers depends only on their offset.
    let mut kernel = Vec::with_capacity(b);
    for offset in 0..b {
        let z = offset as f64 * width / h;
        let w = (-0.5 * z * z).exp();
        if w == 0.0 {
            break;
        }
        kernel.push(w);
    }
    let counts = density.counts();
    let mut mass = vec![0.0; b];
    for &src in density.support() {
        let src = src as usize;
        let c = counts[src] as f64;
        let reach = kernel.len() - 1;
        let first = src.saturating_sub(reach);
        let last = (src + reach).min(b - 1);
        for (dst, m) in mass.iter_mut().enumerate().take(last + 1).skip(first) {
            *m += c * kernel[src.abs_diff(dst)];
        }
    }
    let total: f64 = mass.iter().sum();
    if total > 0.0 && total.is_finite() {
        mass.iter_mut().for_each(|m| *m /= total);
    } else {
        let n = density.n() as f64;
        mass = counts.iter().map(|&c| c as f64 / n).collect();
    }
    mass
}

/// Per-neuron separability and its layer average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    /// Mean distance over scored neurons.
    pub layer_score: f64,
    /// Mean distance over all `d` neurons, skipped ones counting as 0.
    pub layer_score_all_neurons: f64,
    /// Per-neuron distance; skipped neurons hold 0 and are listed below.
    pub per_neuron: Vec<f64>,
    /// Neurons with no nonzero activation under any concept.
    pub skipped: Vec<usize>,
    pub k: usize,
}

impl SeparabilityReport {
    pub fn n_scored(&self) -> usize {
        self.per_neuron.len() - self.skipped.len()
    }
}

/// Distance for one neuron of a bank; `None` if the neuron never activates.
///
/// A concept counts as present when the neuron has at least one nonzero
/// activation on it. Absent concepts carry no evidence and are left out.
pub fn neuron_separability(bank: &DensityBank, neuron: usize) -> Result<Option<f64>> {
    let stats = bank.stats();
    let dists: Vec<Option<Vec<f64>>> = bank
        .neuron(neuron)
        .iter()
        .enumerate()
        .map(|(i, d)| match d {
            Some(d) if stats.get(neuron, i).mean_abs > 0.0 => Some(discretize_density(d)),
            _ => None,
        })
        .collect();
    js_distance(&dists)
}

/// Scores every neuron of the bank and averages over the scored ones.
pub fn layer_separability(bank: &DensityBank) -> Result<SeparabilityReport> {
    if bank.n_neurons() == 0 {
        return Err(Error::InvalidArgument("density bank has no neurons".into()));
    }
    let scores: Vec<Option<f64>> = (0..bank.n_neurons())
        .into_par_iter()
        .map(|j| neuron_separability(bank, j))
        .collect::<Result<_>>()?;
    let skipped: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none())
        .map(|(j, _)| j)
        .collect();
    let per_neuron: Vec<f64> = scores.iter().map(|s| s.unwrap_or(0.0)).collect();
    let total: f64 = per_neuron.iter().sum();
    let scored = per_neuron.len() - skipped.len();
    Ok(SeparabilityReport {
        layer_score: if scored > 0 { total / scored as f64 } else { 0.0 },
        layer_score_all_neurons: total / per_neuron.len() as f64,
        per_neuron,
        skipped,
        k: bank.n_concepts(),
    })
}
