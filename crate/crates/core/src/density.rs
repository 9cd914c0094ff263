//! Histogram-backed Gaussian kernel density estimates.
//!
//! Each (neuron, concept) activation sample is tallied into `B` uniform bins
//! over a range shared by every concept of that neuron. Evaluation then sums
//! one Gaussian kernel per occupied bin center instead of one per sample,
//! which costs `O(B)` per query rather than `O(N)`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::{ActivationDataset, ByteCursor, NeuronConceptStats, StatsTable};

pub const DEFAULT_BINS: usize = 2048;
pub const DENS_MAGIC: [u8; 4] = *b"DENS";
pub const DENS_VERSION: u32 = 1;

/// Kernels further than this many bandwidths from the query underflow to
/// exactly zero in f64 (exp(-x) is 0 for x > ~745), so skipping them does
/// not change the sum.
const KERNEL_CUTOFF: f64 = 40.0;

/// Binned KDE of one activation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramDensity {
    lo: f64,
    hi: f64,
    counts: Vec<u64>,
    bandwidth: f64,
    n: u64,
    // occupied bin indices, ascending
    support: Vec<u32>,
}

impl HistogramDensity {
    /// Rebuilds a density from stored parts (e.g. a cache file).
    pub fn from_parts(lo: f64, hi: f64, bandwidth: f64, counts: Vec<u64>) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Validation(format!("invalid range [{lo}, {hi}]")));
        }
        if counts.len() < 2 {
            return Err(Error::Validation("a density needs at least 2 bins".into()));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::Validation(format!("invalid bandwidth {bandwidth}")));
        }
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::Validation("density has no samples".into()));
        }
        let support = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(b, _)| b as u32)
            .collect();
        Ok(HistogramDensity {
            lo,
            hi,
            counts,
            bandwidth,
            n,
            support,
        })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn normalizer(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.bin_width()
    }

    /// Occupied bins in ascending order.
    pub fn support(&self) -> &[u32] {
        &self.support
    }

    /// `(1/N) * sum_b counts_b * K_h(x - center_b)` with a Gaussian kernel.
    pub fn evaluate(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let reach = KERNEL_CUTOFF * h;
        let start = self
            .support
            .partition_point(|&b| self.center(b as usize) < x - reach);
        let mut acc = 0.0;
        for &b in &self.support[start..] {
            let c = self.center(b as usize);
            if c > x + reach {
                break;
            }
            let z = (x - c) / h;
            acc += self.counts[b as usize] as f64 * (-0.5 * z * z).exp();
        }
        acc / (self.n as f64 * h * (2.0 * PI).sqrt())
    }
}

/// Gaussian kernel `exp(-u^2 / (2h^2)) / (h sqrt(2 pi))`.
pub fn gaussian_kernel(u: f64, h: f64) -> f64 {
    let z = u / h;
    (-0.5 * z * z).exp() / (h * (2.0 * PI).sqrt())
}

/// Bandwidth floor `1e-6 * max(1, hi - lo)`.
pub fn bandwidth_floor(lo: f64, hi: f64) -> f64 {
    1e-6 * (hi - lo).abs().max(1.0)
}

/// Silverman's rule `0.9 * min(sd, IQR/1.34) * n^(-1/5)`, floored.
///
/// When the interquartile range collapses to zero (e.g. sparse latents that
/// are mostly exact zeros) the standard deviation alone is used, otherwise
/// any sample with more than half its mass on one value would get the floor.
pub fn silverman_bandwidth(values: &[f64], lo: f64, hi: f64) -> f64 {
    let floor = bandwidth_floor(lo, hi);
    let n = values.len();
    if n < 2 {
        return floor;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
        .sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if h.is_finite() && h > floor {
        h
    } else {
        floor
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

fn bin_index(v: f64, lo: f64, hi: f64, n_bins: usize) -> usize {
    let pos = ((v - lo) / (hi - lo) * n_bins as f64).floor();
    if pos < 0.0 {
        0
    } else if pos >= n_bins as f64 {
        n_bins - 1
    } else {
        pos as usize
    }
}

/// Tallies `values` into `n_bins` uniform bins over `[lo, hi]` (out-of-range
/// values land in the edge bins) and picks a Silverman bandwidth.
pub fn fit_histogram_density(
    values: &[f64],
    lo: f64,
    hi: f64,
    n_bins: usize,
) -> Result<HistogramDensity> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a density to no values".into()));
    }
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(Error::InvalidArgument(format!(
            "density range requires lo < hi, got [{lo}, {hi}]"
        )));
    }
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 bins, got {n_bins}"
        )));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite value {bad}")));
    }
    let mut counts = vec![0u64; n_bins];
    for &v in values {
        counts[bin_index(v, lo, hi, n_bins)] += 1;
    }
    let bandwidth = silverman_bandwidth(values, lo, hi);
    HistogramDensity::from_parts(lo, hi, bandwidth, counts)
}

/// Exact per-sample Gaussian KDE. Reference implementation for tests and
/// benchmarks; pipelines use [`HistogramDensity::evaluate`].
pub fn kde_exact(values: &[f64], bandwidth: f64, x: f64) -> f64 {
    let sum: f64 = values
        .iter()
        .map(|&v| {
            let z = (x - v) / bandwidth;
            (-0.5 * z * z).exp()
        })
        .sum();
    sum / (values.len() as f64 * bandwidth * (2.0 * PI).sqrt())
}

/// Densities for every (neuron, concept) pair of a dataset, plus the
/// per-pair summary statistics they were fitted alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityBank {
    n_neurons: usize,
    n_concepts: usize,
    n_bins: usize,
    // neuron-major, concept-minor
    densities: Vec<Option<HistogramDensity>>,
    stats: StatsTable,
}

impl DensityBank {
    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn stats(&self) -> &StatsTable {
        &self.stats
    }

    pub fn density(&self, neuron: usize, concept: usize) -> Option<&HistogramDensity> {
        self.densities[neuron * self.n_concepts + concept].as_ref()
    }

    /// Densities of one neuron, indexed by concept.
    pub fn neuron(&self, neuron: usize) -> &[Option<HistogramDensity>] {
        let start = neuron * self.n_concepts;
        &self.densities[start..start + self.n_concepts]
    }

    /// Writes the bank in the `DENS` cache layout.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&DENS_MAGIC);
        buf.extend_from_slice(&DENS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n_neurons as u64).to_le_bytes());
        buf.extend_from_slice(&(self.n_concepts as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_bins as u32).to_le_bytes());
        for slot in &self.densities {
            match slot {
                None => buf.push(0),
                Some(d) => {
                    buf.push(1);
                    buf.extend_from_slice(&d.lo.to_le_bytes());
                    buf.extend_from_slice(&d.hi.to_le_bytes());
                    buf.extend_from_slice(&d.bandwidth.to_le_bytes());
                    buf.extend_from_slice(&d.n.to_le_bytes());
                    for c in &d.counts {
                        buf.extend_from_slice(&c.to_le_bytes());
                    }
                }
            }
        }
        buf
    }

    /// Loads a `DENS` cache and re-attaches statistics from the dataset it
    /// was fitted on. Geometry and per-concept sample counts must agree.
    pub fn read_cache(path: &Path, dataset: &ActivationDataset) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, dataset)
    }

    pub fn decode(bytes: &[u8], dataset: &ActivationDataset) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        let magic = cur.array::<4>("magic")?;
        if magic != DENS_MAGIC {
            return Err(Error::BadMagic {
                expected: DENS_MAGIC,
                found: magic,
            });
        }
        let version = cur.u32("version")?;
        if version != DENS_VERSION {
            return Err(Error::VersionMismatch {
                expected: DENS_VERSION,
                found: version,
            });
        }
        let n_neurons = cur.u64("n_neurons")? as usize;
        let n_concepts = cur.u32("n_concepts")? as usize;
        let n_bins = cur.u32("B")? as usize;
        if n_neurons != dataset.n_neurons() || n_concepts != dataset.n_concepts() {
            return Err(Error::Validation(format!(
                "density cache is {n_neurons} neurons x {n_concepts} concepts, dataset is {} x {}",
                dataset.n_neurons(),
                dataset.n_concepts()
            )));
        }
        let stats = StatsTable::from_dataset(dataset);
        let mut densities = Vec::with_capacity(n_neurons * n_concepts);
        for j in 0..n_neurons {
            for i in 0..n_concepts {
                let present = cur.u8("present flag")?;
                if present == 0 {
                    densities.push(None);
                    continue;
                }
                let lo = cur.f64("lo")?;
                let hi = cur.f64("hi")?;
                let bandwidth = cur.f64("bandwidth")?;
                let n = cur.u64("n")?;
                let mut counts = Vec::with_capacity(n_bins);
                for _ in 0..n_bins {
                    counts.push(cur.u64("counts")?);
                }
                let d = HistogramDensity::from_parts(lo, hi, bandwidth, counts)?;
                if d.n != n {
                    return Err(Error::Validation(format!(
                        "density ({j}, {i}) stores n = {n} but counts sum to {}",
                        d.n
                    )));
                }
                if n as usize != stats.get(j, i).sample_count {
                    return Err(Error::Validation(format!(
                        "density ({j}, {i}) was fitted on {n} samples, dataset has {}",
                        stats.get(j, i).sample_count
                    )));
                }
                densities.push(Some(d));
            }
        }
        if cur.remaining() != 0 {
            return Err(Error::Validation(format!(
                "{} trailing bytes in density cache",
                cur.remaining()
            )));
        }
        Ok(DensityBank {
            n_neurons,
            n_concepts,
            n_bins,
            densities,
            stats,
        })
    }
}

/// Shared fitting range of a neuron: pooled min/max over all concepts,
/// widened to unit width around the value when the neuron is constant.
fn pooled_range(per_concept: &[Vec<f64>]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in per_concept.iter().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if lo < hi {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

/// Fits one density per (neuron, concept), all concepts of a neuron sharing
/// the neuron's pooled activation range. Neurons are fitted in parallel.
pub fn fit_density_bank(dataset: &ActivationDataset, n_bins: usize) -> Result<DensityBank> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 bins, got {n_bins}"
        )));
    }
    let k = dataset.n_concepts();
    type NeuronFit = Vec<(Option<HistogramDensity>, NeuronConceptStats)>;
    let per_neuron: Vec<Result<NeuronFit>> = (0..dataset.n_neurons())
        .into_par_iter()
        .map(|j| {
            let by_concept = dataset.neuron_values_by_concept(j);
            let (lo, hi) = pooled_range(&by_concept);
            by_concept
                .iter()
                .map(|vals| {
                    let stats = NeuronConceptStats::from_values(vals)?;
                    let density = if vals.is_empty() {
                        None
                    } else {
                        Some(fit_histogram_density(vals, lo, hi, n_bins)?)
                    };
                    Ok((density, stats))
                })
                .collect()
        })
        .collect();

    let mut densities = Vec::with_capacity(dataset.n_neurons() * k);
    let mut stats = Vec::with_capacity(dataset.n_neurons() * k);
    for neuron in per_neuron {
        for (d, s) in neuron? {
            densities.push(d);
            stats.push(s);
        }
    }
    Ok(DensityBank {
        n_neurons: dataset.n_neurons(),
        n_concepts: k,
        n_bins,
        densities,
        stats: StatsTable::from_entries(dataset.n_neurons(), k, stats),
    })
}
