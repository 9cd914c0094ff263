//! Concept erasure as activation-vector rewrites.
//!
//! Five methods are provided. APP (attenuation via posterior probabilities)
//! scales an activation by `1 - p(target | x)` when `x` lies inside the
//! target's `mean +/- 2.5 sd` window, so only the part of the distribution
//! attributable to the target is suppressed. The baselines are:
//!
//! - AURA: uniform per-neuron damping `2 (1 - AUROC)` for neurons with AUROC > 0.5
//! - Range: zero salient neurons inside the target window
//! - Adaptive: damp salient neurons in proportion to their distance from the target mean
//! - Full: zero salient neurons unconditionally
//!
//! On SAE-kind data every method first drops neurons that fire on fewer
//! than a `tau` fraction of the target's samples.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::density::DensityBank;
use crate::error::{Error, Result};
use crate::store::{ActivationDataset, Representation, StatsTable};

pub const DEFAULT_WINDOW_MULT: f64 = 2.5;
pub const DEFAULT_TAU: f64 = 0.1;
/// Posterior denominators below this are treated as underflow.
pub const DENOMINATOR_FLOOR: f64 = 1e-300;
/// Standard deviation floor for the adaptive slope.
pub const SIGMA_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    App,
    Aura,
    Range,
    Adaptive,
    Full,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::App,
        Method::Aura,
        Method::Range,
        Method::Adaptive,
        Method::Full,
    ];

    /// Whether the method selects neurons by top-p saliency.
    pub fn uses_saliency(self) -> bool {
        matches!(self, Method::Range | Method::Adaptive | Method::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::App => "app",
            Method::Aura => "aura",
            Method::Range => "range",
            Method::Adaptive => "adaptive",
            Method::Full => "full",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "app" => Ok(Method::App),
            "aura" => Ok(Method::Aura),
            "range" => Ok(Method::Range),
            "adaptive" => Ok(Method::Adaptive),
            "full" => Ok(Method::Full),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// Target-concept mean and standard deviation of one neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub mean: f64,
    pub std: f64,
}

impl Window {
    pub fn contains(&self, x: f64, mult: f64) -> bool {
        (x - self.mean).abs() <= mult * self.std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    pub p: Option<f64>,
    pub tau: f64,
    pub window_mult: f64,
    pub aurocs: Option<BTreeMap<usize, f64>>,
}

/// A fully resolved intervention: which neurons to touch and how.
///
/// `windows` is parallel to `neurons`. APP plans additionally need the
/// density bank they were built from; `densities` records where its cache
/// lives when the plan is written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub method: Method,
    pub target: usize,
    pub n_neurons: usize,
    pub neurons: Vec<usize>,
    pub params: PlanParams,
    pub windows: Vec<Window>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub densities: Option<String>,
}

/// The `ceil(p * d)` neurons with highest mean activation on `concept`,
/// ties to the lower index. Returned in ascending index order.
pub fn select_salient(dataset: &ActivationDataset, concept: usize, p: f64) -> Result<Vec<usize>> {
    dataset.check_concept(concept)?;
    let stats = StatsTable::from_dataset(dataset);
    select_salient_from_stats(&stats, concept, p)
}

pub fn select_salient_from_stats(stats: &StatsTable, concept: usize, p: f64) -> Result<Vec<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 1], got {p}")));
    }
    let d = stats.n_neurons();
    // 0.3 * 10 is 3.0000000000000004 in binary; keep it at 3
    let count = ((p * d as f64 - 1e-9).ceil().max(1.0) as usize).min(d);
    Ok(crate::separability::top_k_neurons(stats, concept, count))
}

/// Neurons firing on at least a `tau` fraction of `concept`'s samples.
/// Base-kind representations are dense, so every neuron passes.
pub fn firing_filter(dataset: &ActivationDataset, concept: usize, tau: f64) -> Result<Vec<usize>> {
    dataset.check_concept(concept)?;
    let stats = StatsTable::from_dataset(dataset);
    firing_filter_from_stats(&stats, dataset.representation(), concept, tau)
}

pub fn firing_filter_from_stats(
    stats: &StatsTable,
    representation: Representation,
    concept: usize,
    tau: f64,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    let all = 0..stats.n_neurons();
    Ok(match representation {
        Representation::Base => all.collect(),
        Representation::Sae => all
            .filter(|&j| stats.get(j, concept).firing_freq >= tau)
            .collect(),
    })
}

/// Flat-prior posterior that activation `x` of `neuron` came from `target`.
///
/// Concepts without a density for this neuron are left out of the
/// denominator. If every density underflows at `x` the uninformative
/// `1 / k'` is returned.
pub fn posterior(bank: &DensityBank, neuron: usize, target: usize, x: f64) -> Result<f64> {
    if neuron >= bank.n_neurons() || target >= bank.n_concepts() {
        return Err(Error::InvalidArgument(format!(
            "(neuron {neuron}, concept {target}) outside the bank"
        )));
    }
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let mut present = 0usize;
    for (i, d) in bank.neuron(neuron).iter().enumerate() {
        if let Some(d) = d {
            let f = d.evaluate(x);
            denominator += f;
            present += 1;
            if i == target {
                numerator = f;
            }
        }
    }
    if present == 0 {
        return Err(Error::InvalidArgument(format!(
            "neuron {neuron} has no densities in the bank"
        )));
    }
    if denominator < DENOMINATOR_FLOOR {
        log::debug!("posterior underflow at neuron {neuron}, x = {x}; using 1/{present}");
        return Ok(if bank.density(neuron, target).is_some() {
            1.0 / present as f64
        } else {
            0.0
        });
    }
    Ok((numerator / denominator).min(1.0))
}

/// APP on one coordinate given its posterior.
pub fn app_damp(x: f32, window: &Window, window_mult: f64, pi: f64) -> f32 {
    let xf = x as f64;
    if window.contains(xf, window_mult) {
        ((1.0 - pi) * xf) as f32
    } else {
        x
    }
}

/// AURA damping factor: 1 at AUROC 0.5, falling linearly to 0 at AUROC 1.
pub fn aura_factor(auroc: f64) -> f64 {
    (2.0 * (1.0 - auroc)).clamp(0.0, 1.0)
}

pub fn range_damp(x: f32, window: &Window, window_mult: f64) -> f32 {
    if window.contains(x as f64, window_mult) {
        0.0
    } else {
        x
    }
}

/// Scales by `min(1, |x - mean| / (mult * sd))`: zero at the mean, untouched
/// from the window edge outwards.
pub fn adaptive_damp(x: f32, window: &Window, window_mult: f64) -> f32 {
    let xf = x as f64;
    let factor = (xf - window.mean).abs() / (window_mult * window.std.max(SIGMA_FLOOR));
    if factor >= 1.0 {
        x
    } else {
        (factor * xf) as f32
    }
}

/// Probability that a random target activation exceeds a random other one,
/// ties counting one half (Mann-Whitney U over `n1 * n2`).
pub fn auroc(target: &[f64], other: &[f64]) -> Result<f64> {
    if target.is_empty() || other.is_empty() {
        return Err(Error::InvalidArgument("auroc needs two non-empty samples".into()));
    }
    let mut pooled: Vec<(f64, bool)> = target
        .iter()
        .map(|&v| (v, true))
        .chain(other.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of midranks of the target sample
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let hits = pooled[i..=j].iter().filter(|p| p.1).count();
        rank_sum += midrank * hits as f64;
        i = j + 1;
    }
    let n1 = target.len() as f64;
    let n2 = other.len() as f64;
    let u = rank_sum - n1 * (n1 + 1.0) / 2.0;
    Ok(u / (n1 * n2))
}

impl InterventionPlan {
    /// Rewrites one activation vector. APP plans require `bank`.
    pub fn apply(&self, x: &[f32], bank: Option<&DensityBank>) -> Result<Vec<f32>> {
        let mut out = x.to_vec();
        self.apply_in_place(&mut out, bank)?;
        Ok(out)
    }

    pub fn apply_in_place(&self, x: &mut [f32], bank: Option<&DensityBank>) -> Result<()> {
        if x.len() != self.n_neurons {
            return Err(Error::InvalidArgument(format!(
                "activation vector has {} entries, plan expects {}",
                x.len(),
                self.n_neurons
            )));
        }
        let mult = self.params.window_mult;
        match self.method {
            Method::App => {
                let bank = self.check_bank(bank)?;
                for (&j, w) in self.neurons.iter().zip(&self.windows) {
                    if w.contains(x[j] as f64, mult) {
                        let pi = posterior(bank, j, self.target, x[j] as f64)?;
                        x[j] = app_damp(x[j], w, mult, pi);
                    }
                }
            }
            Method::Aura => {
                let aurocs = self.params.aurocs.as_ref().ok_or_else(|| {
                    Error::Validation("AURA plan carries no AUROC values".into())
                })?;
                for &j in &self.neurons {
                    let a = aurocs.get(&j).ok_or_else(|| {
                        Error::Validation(format!("AURA plan has no AUROC for neuron {j}"))
                    })?;
                    x[j] = (aura_factor(*a) * x[j] as f64) as f32;
                }
            }
            Method::Range => {
                for (&j, w) in self.neurons.iter().zip(&self.windows) {
                    x[j] = range_damp(x[j], w, mult);
                }
            }
            Method::Adaptive => {
                for (&j, w) in self.neurons.iter().zip(&self.windows) {
                    x[j] = adaptive_damp(x[j], w, mult);
                }
            }
            Method::Full => {
                for &j in &self.neurons {
                    x[j] = 0.0;
                }
            }
        }
        Ok(())
    }

    /// Applies the plan to every row of a dataset.
    pub fn apply_dataset(
        &self,
        dataset: &ActivationDataset,
        bank: Option<&DensityBank>,
    ) -> Result<ActivationDataset> {
        let mut values = dataset.values().to_vec();
        for row in values.chunks_exact_mut(dataset.n_neurons().max(1)) {
            self.apply_in_place(row, bank)?;
        }
        dataset.with_values(values)
    }

    fn check_bank<'a>(&self, bank: Option<&'a DensityBank>) -> Result<&'a DensityBank> {
        let bank = bank.ok_or_else(|| {
            Error::InvalidArgument("APP plans need the density bank they were built from".into())
        })?;
        if bank.n_neurons() != self.n_neurons || self.target >= bank.n_concepts() {
            return Err(Error::Validation(format!(
                "density bank ({} neurons, {} concepts) does not match the plan",
                bank.n_neurons(),
                bank.n_concepts()
            )));
        }
        Ok(bank)
    }

    pub fn validate(&self) -> Result<()> {
        if self.neurons.iter().any(|&j| j >= self.n_neurons) {
            return Err(Error::Validation("plan neuron index out of range".into()));
        }
        if self.neurons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("plan neurons must be strictly ascending".into()));
        }
        let needs_windows = matches!(self.method, Method::App | Method::Range | Method::Adaptive);
        if needs_windows && self.windows.len() != self.neurons.len() {
            return Err(Error::Validation("plan windows do not match its neurons".into()));
        }
        if self.method == Method::Aura {
            let aurocs = self.params.aurocs.as_ref().ok_or_else(|| {
                Error::Validation("AURA plan carries no AUROC values".into())
            })?;
            if self.neurons.iter().any(|j| aurocs.get(j).is_none_or(|&a| a <= 0.5)) {
                return Err(Error::Validation(
                    "AURA plans may only hold neurons with AUROC > 0.5".into(),
                ));
            }
        }
        Ok(())
    }
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    let keep: std::collections::HashSet<usize> = b.iter().copied().collect();
    a.iter().copied().filter(|j| keep.contains(j)).collect()
}

/// Builds a plan for erasing `target`.
///
/// `p` is required by the saliency-based methods (Range, Adaptive, Full);
/// `bank` is required by APP. The firing filter with `tau` applies to every
/// method on SAE-kind data.
pub fn build_plan(
    dataset: &ActivationDataset,
    bank: Option<&DensityBank>,
    method: Method,
    target: usize,
    p: Option<f64>,
    tau: f64,
) -> Result<InterventionPlan> {
    if dataset.n_concepts() < 2 {
        return Err(Error::InvalidArgument(format!(
            "concept erasure needs at least 2 concepts, dataset has {}",
            dataset.n_concepts()
        )));
    }
    dataset.check_concept(target)?;
    let owned_stats;
    let stats = match bank {
        Some(b) => {
            if b.n_neurons() != dataset.n_neurons() || b.n_concepts() != dataset.n_concepts() {
                return Err(Error::Validation(
                    "density bank geometry does not match the dataset".into(),
                ));
            }
            b.stats()
        }
        None => {
            owned_stats = StatsTable::from_dataset(dataset);
            &owned_stats
        }
    };
    let fireable = firing_filter_from_stats(stats, dataset.representation(), target, tau)?;

    let mut aurocs = None;
    let neurons = match method {
        Method::App => {
            if bank.is_none() {
                return Err(Error::InvalidArgument("APP requires a density bank".into()));
            }
            fireable
        }
        Method::Aura => {
            let mut selected = Vec::new();
            let mut map = BTreeMap::new();
            for &j in &fireable {
                let by_concept = dataset.neuron_values_by_concept(j);
                let others: Vec<f64> = by_concept
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != target)
                    .flat_map(|(_, v)| v.iter().copied())
                    .collect();
                let a = auroc(&by_concept[target], &others)?;
                if a > 0.5 {
                    selected.push(j);
                    map.insert(j, a);
                }
            }
            aurocs = Some(map);
            selected
        }
        Method::Range | Method::Adaptive | Method::Full => {
            let p = p.ok_or_else(|| {
                Error::InvalidArgument(format!("method {method} requires p (top-p saliency)"))
            })?;
            let salient = select_salient_from_stats(stats, target, p)?;
            intersect(&salient, &fireable)
        }
    };
    let windows = neurons
        .iter()
        .map(|&j| {
            let s = stats.get(j, target);
            Window {
                mean: s.mean,
                std: s.std,
            }
        })
        .collect();
    let plan = InterventionPlan {
        method,
        target,
        n_neurons: dataset.n_neurons(),
        neurons,
        params: PlanParams {
            p: if method.uses_saliency() { p } else { None },
            tau,
            window_mult: DEFAULT_WINDOW_MULT,
            aurocs,
        },
        windows,
        densities: None,
    };
    plan.validate()?;
    Ok(plan)
}
