use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{ActivationDataset, StatsTable};

/// Default number of salient neurons compared per concept.
pub const DEFAULT_TOP_K: usize = 80;

/// Subset-size breakdowns enumerate every concept subset; beyond this many
/// concepts only the pairwise and all-k figures are produced.
const MAX_SUBSET_CONCEPTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    TopKSalient,
    AllActive,
}

/// Intersection-over-union statistics of per-concept neuron sets, as
/// percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub mode: OverlapMode,
    #[serde(rename = "K")]
    pub top_k: Option<usize>,
    pub n_concepts: usize,
    /// `(i, j, pct)` for every concept pair `i < j`.
    pub pairwise: Vec<(usize, usize, f64)>,
    /// IoU of all `k` sets at once.
    pub all_k_pct: f64,
    /// `(m, pct)`: mean IoU over all concept subsets of size `m`.
    pub by_subset_size: Vec<(usize, f64)>,
    /// Concepts whose neuron set is empty.
    pub empty_concepts: Vec<usize>,
}

#[derive(Clone)]
struct BitSet {
    words: Vec<u64>,
}

impl BitSet {
    fn from_indices(n: usize, idx: &[usize]) -> Self {
        let mut words = vec![0u64; n.div_ceil(64)];
        for &i in idx {
            words[i / 64] |= 1 << (i % 64);
        }
        BitSet { words }
    }

    fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

fn iou_bits(sets: &[&BitSet]) -> f64 {
    let len = sets[0].words.len();
    let mut inter = 0usize;
    let mut union = 0usize;
    for w in 0..len {
        let mut a = !0u64;
        let mut o = 0u64;
        for s in sets {
            a &= s.words[w];
            o |= s.words[w];
        }
        inter += a.count_ones() as usize;
        union += o.count_ones() as usize;
    }
    if union == 0 {
        0.0
    } else {
        100.0 * inter as f64 / union as f64
    }
}

/// IoU (percent) of several neuron index sets; 0 when all are empty.
pub fn iou(sets: &[&[usize]]) -> f64 {
    if sets.is_empty() {
        return 0.0;
    }
    let n = sets
        .iter()
        .flat_map(|s| s.iter())
        .max()
        .map_or(0, |&m| m + 1);
    let bits: Vec<BitSet> = sets.iter().map(|s| BitSet::from_indices(n, s)).collect();
    let refs: Vec<&BitSet> = bits.iter().collect();
    iou_bits(&refs)
}

fn build_report(
    mode: OverlapMode,
    top_k: Option<usize>,
    n_neurons: usize,
    sets: &[Vec<usize>],
) -> OverlapReport {
    let k = sets.len();
    let bits: Vec<BitSet> = sets
        .iter()
        .map(|s| BitSet::from_indices(n_neurons, s))
        .collect();
    let mut pairwise = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            pairwise.push((i, j, iou_bits(&[&bits[i], &bits[j]])));
        }
    }
    let all: Vec<&BitSet> = bits.iter().collect();
    let all_k_pct = iou_bits(&all);

    let mut by_subset_size = Vec::new();
    if (2..=MAX_SUBSET_CONCEPTS).contains(&k) {
        let mut sums = vec![0.0; k + 1];
        let mut counts = vec![0usize; k + 1];
        for mask in 1u32..(1u32 << k) {
            let m = mask.count_ones() as usize;
            if m < 2 {
                continue;
            }
            let members: Vec<&BitSet> = (0..k)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| &bits[i])
                .collect();
            sums[m] += iou_bits(&members);
            counts[m] += 1;
        }
        for m in 2..=k {
            by_subset_size.push((m, sums[m] / counts[m] as f64));
        }
    }

    OverlapReport {
        mode,
        top_k,
        n_concepts: k,
        pairwise,
        all_k_pct,
        by_subset_size,
        empty_concepts: bits
            .iter()
            .enumerate()
            .filter(|(_, b)| b.count() == 0)
            .map(|(i, _)| i)
            .collect(),
    }
}

/// The `top_k` neurons with highest mean activation on `concept`, ties to
/// the lower index.
pub fn top_k_neurons(stats: &StatsTable, concept: usize, top_k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..stats.n_neurons()).collect();
    order.sort_by(|&a, &b| {
        stats
            .get(b, concept)
            .mean
            .total_cmp(&stats.get(a, concept).mean)
            .then(a.cmp(&b))
    });
    order.truncate(top_k);
    order.sort_unstable();
    order
}

/// Overlap of each concept's top-K salient neurons (by mean activation).
pub fn topk_salient_overlap(dataset: &ActivationDataset, top_k: usize) -> Result<OverlapReport> {
    if top_k == 0 || top_k > dataset.n_neurons() {
        return Err(Error::InvalidArgument(format!(
            "K must lie in [1, {}], got {top_k}",
            dataset.n_neurons()
        )));
    }
    let stats = StatsTable::from_dataset(dataset);
    let sets: Vec<Vec<usize>> = (0..dataset.n_concepts())
        .map(|c| top_k_neurons(&stats, c, top_k))
        .collect();
    Ok(build_report(
        OverlapMode::TopKSalient,
        Some(top_k),
        dataset.n_neurons(),
        &sets,
    ))
}

/// Overlap of each concept's active neurons: those with any activation
/// above zero on the concept's samples.
pub fn active_neuron_overlap(dataset: &ActivationDataset) -> Result<OverlapReport> {
    let d = dataset.n_neurons();
    let k = dataset.n_concepts();
    let mut active = vec![vec![false; d]; k];
    for (s, row) in dataset.rows().enumerate() {
        let flags = &mut active[dataset.label(s)];
        for (flag, &v) in flags.iter_mut().zip(row) {
            *flag |= v > 0.0;
        }
    }
    let sets: Vec<Vec<usize>> = active
        .iter()
        .map(|flags| (0..d).filter(|&j| flags[j]).collect())
        .collect();
    let report = build_report(OverlapMode::AllActive, None, d, &sets);
    if !report.empty_concepts.is_empty() {
        log::warn!(
            "concepts with no active neurons: {:?}",
            report.empty_concepts
        );
    }
    Ok(report)
}
