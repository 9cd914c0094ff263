//! Scoring interventions: a readout classifier standing in for the model
//! head, before/after erasure metrics, a perplexity differencer and an
//! off-target distortion proxy, plus Pearson correlation with a t-test.

mod correlation;
mod readout;

pub use correlation::{correlate_by_method, pearson, CorrelationRow, MethodCorrelation, Pearson};
pub use readout::{evaluate_readout, train_readout, ConceptResults, ReadoutModel};

use serde::{Deserialize, Serialize};

use crate::density::DensityBank;
use crate::error::{Error, Result};
use crate::intervention::InterventionPlan;
use crate::store::ActivationDataset;

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptBreakdown {
    pub concept: usize,
    pub acc_before: f64,
    pub acc_after: f64,
    pub conf_before: f64,
    pub conf_after: f64,
}

/// Target-vs-auxiliary drops in accuracy and confidence.
///
/// `d_*` is the target concept's drop, `d_*_aux` the unweighted mean drop
/// over the other concepts; `delta_* = d_* - d_*_aux`. Higher deltas mean a
/// more precise erasure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErasureReport {
    pub target: usize,
    pub d_acc: f64,
    pub d_acc_aux: f64,
    pub d_conf: f64,
    pub d_conf_aux: f64,
    pub delta_acc: f64,
    pub delta_conf: f64,
    pub dppl: Option<f64>,
    pub distortion: f64,
    pub per_concept: Vec<ConceptBreakdown>,
}

impl ErasureReport {
    /// Report from the four drops alone; deltas are their differences.
    pub fn from_drops(target: usize, d_acc: f64, d_acc_aux: f64, d_conf: f64, d_conf_aux: f64) -> Self {
        ErasureReport {
            target,
            d_acc,
            d_acc_aux,
            d_conf,
            d_conf_aux,
            delta_acc: d_acc - d_acc_aux,
            delta_conf: d_conf - d_conf_aux,
            dppl: None,
            distortion: 0.0,
            per_concept: Vec::new(),
        }
    }

    pub fn with_distortion(mut self, distortion: f64) -> Self {
        self.distortion = distortion;
        self
    }

    pub fn with_dppl(mut self, dppl: Option<f64>) -> Self {
        self.dppl = dppl;
        self
    }
}

/// Compares readout results before and after an intervention on `target`.
pub fn erasure_metrics(
    before: &ConceptResults,
    after: &ConceptResults,
    target: usize,
) -> Result<ErasureReport> {
    let k = before.accuracy.len();
    if after.accuracy.len() != k || before.confidence.len() != k || after.confidence.len() != k {
        return Err(Error::InvalidArgument(
            "before/after results cover different concept sets".into(),
        ));
    }
    if k < 2 {
        return Err(Error::InvalidArgument(
            "erasure metrics need at least 2 concepts".into(),
        ));
    }
    if target >= k {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {k} concepts"
        )));
    }
    let acc_drop = |c: usize| before.accuracy[c] - after.accuracy[c];
    let conf_drop = |c: usize| before.confidence[c] - after.confidence[c];
    let aux = (0..k).filter(|&c| c != target);
    let n_aux = (k - 1) as f64;
    let d_acc_aux = aux.clone().map(acc_drop).sum::<f64>() / n_aux;
    let d_conf_aux = aux.map(conf_drop).sum::<f64>() / n_aux;
    let mut report =
        ErasureReport::from_drops(target, acc_drop(target), d_acc_aux, conf_drop(target), d_conf_aux);
    report.per_concept = (0..k)
        .map(|c| ConceptBreakdown {
            concept: c,
            acc_before: before.accuracy[c],
            acc_after: after.accuracy[c],
            conf_before: before.confidence[c],
            conf_after: after.confidence[c],
        })
        .collect();
    Ok(report)
}

/// Perplexity increase caused by an intervention.
pub fn dppl(ppl_base: f64, ppl_post: f64) -> Result<f64> {
    if !(ppl_base > 0.0 && ppl_post > 0.0) || !ppl_base.is_finite() || !ppl_post.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "perplexities must be positive and finite, got {ppl_base} and {ppl_post}"
        )));
    }
    Ok(ppl_post - ppl_base)
}

/// Mean relative change `|x' - x| / |x|` over samples of every concept other
/// than the plan's target. Zero means non-target samples are never touched.
pub fn offtarget_distortion(
    dataset: &ActivationDataset,
    plan: &InterventionPlan,
    bank: Option<&DensityBank>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (s, row) in dataset.rows().enumerate() {
        if dataset.label(s) == plan.target {
            continue;
        }
        let out = plan.apply(row, bank)?;
        let diff: f64 = row
            .iter()
            .zip(&out)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = row.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
        total += diff / norm.max(NORM_FLOOR);
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}
