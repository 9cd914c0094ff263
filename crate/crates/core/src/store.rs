//! Activation datasets: the in-memory model, the `ACTV` on-disk format with
//! its JSON sidecar manifest, and per-(neuron, concept) summary statistics.
//!
//! An `ACTV` file is little-endian:
//!
//! ```text
//! "ACTV" | version u32 = 1 | n_samples u64 | n_neurons u64 | n_concepts u32
//!        | labels: n_samples x u32 | values: n_samples x n_neurons x f32 (row-major)
//! ```
//!
//! The manifest lives next to it at `<path>.manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ACTV_MAGIC: [u8; 4] = *b"ACTV";
pub const ACTV_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4;

/// Which representation the activations were captured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Dense hidden state of the model.
    Base,
    /// Sparse autoencoder latents (nonnegative, post-nonlinearity).
    Sae,
}

/// Source descriptor stored in the sidecar manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub layer: u32,
    pub hook_point: String,
    pub representation: Representation,
    pub concept_names: Vec<String>,
}

impl Manifest {
    /// A manifest for generated data with concepts named `c0..c{k-1}`.
    pub fn synthetic(representation: Representation, k: usize) -> Self {
        Manifest {
            model: "synthetic".to_string(),
            layer: 0,
            hook_point: "synthetic".to_string(),
            representation,
            concept_names: (0..k).map(|i| format!("c{i}")).collect(),
        }
    }
}

/// A samples x neurons activation matrix with one concept label per sample.
///
/// Construction validates every invariant, so a value of this type is always
/// well formed: labels are in range, each concept has at least one sample,
/// all activations are finite and the manifest names every concept.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    n_samples: usize,
    n_neurons: usize,
    n_concepts: usize,
    labels: Vec<u32>,
    values: Vec<f32>,
    manifest: Manifest,
}

impl ActivationDataset {
    pub fn new(
        n_neurons: usize,
        n_concepts: usize,
        labels: Vec<u32>,
        values: Vec<f32>,
        manifest: Manifest,
    ) -> Result<Self> {
        let n_samples = labels.len();
        if n_concepts == 0 {
            return Err(Error::Validation("n_concepts must be at least 1".into()));
        }
        if n_concepts > u32::MAX as usize {
            return Err(Error::Validation("n_concepts does not fit in u32".into()));
        }
        let expected = n_samples
            .checked_mul(n_neurons)
            .ok_or_else(|| Error::Validation("matrix size overflows".into()))?;
        if values.len() != expected {
            return Err(Error::Validation(format!(
                "values matrix has {} entries, expected n_samples x n_neurons = {expected}",
                values.len()
            )));
        }
        if manifest.concept_names.len() != n_concepts {
            return Err(Error::Manifest(format!(
                "concept_names has {} entries, expected n_concepts = {n_concepts}",
                manifest.concept_names.len()
            )));
        }
        let mut seen = vec![false; n_concepts];
        for (sample, &label) in labels.iter().enumerate() {
            if label as usize >= n_concepts {
                return Err(Error::LabelOutOfRange {
                    sample,
                    label,
                    n_concepts: n_concepts as u32,
                });
            }
            seen[label as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "concept {missing} has no samples"
            )));
        }
        // a non-empty matrix implies n_neurons > 0
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                sample: pos / n_neurons,
                neuron: pos % n_neurons,
            });
        }
        Ok(ActivationDataset {
            n_samples,
            n_neurons,
            n_concepts,
            labels,
            values,
            manifest,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn representation(&self) -> Representation {
        self.manifest.representation
    }

    pub fn label(&self, sample: usize) -> usize {
        self.labels[sample] as usize
    }

    /// Activation vector of one sample.
    pub fn row(&self, sample: usize) -> &[f32] {
        let start = sample * self.n_neurons;
        &self.values[start..start + self.n_neurons]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size
        self.values.chunks_exact(self.n_neurons.max(1)).take(self.n_samples)
    }

    pub fn value(&self, sample: usize, neuron: usize) -> f32 {
        self.values[sample * self.n_neurons + neuron]
    }

    /// Activations of `neuron` split by concept, widened to f64.
    pub fn neuron_values_by_concept(&self, neuron: usize) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.n_concepts];
        for (s, &label) in self.labels.iter().enumerate() {
            out[label as usize].push(self.value(s, neuron) as f64);
        }
        out
    }

    /// Same dataset with a different activation matrix (e.g. after an
    /// intervention). The new matrix goes through full validation.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        ActivationDataset::new(
            self.n_neurons,
            self.n_concepts,
            self.labels.clone(),
            values,
            self.manifest.clone(),
        )
    }

    fn check_indices(&self, neuron: usize, concept: usize) -> Result<()> {
        if neuron >= self.n_neurons {
            return Err(Error::InvalidArgument(format!(
                "neuron {neuron} out of range (n_neurons = {})",
                self.n_neurons
            )));
        }
        if concept >= self.n_concepts {
            return Err(Error::InvalidArgument(format!(
                "concept {concept} out of range (n_concepts = {})",
                self.n_concepts
            )));
        }
        Ok(())
    }

    pub(crate) fn check_concept(&self, concept: usize) -> Result<()> {
        if concept >= self.n_concepts {
            return Err(Error::InvalidArgument(format!(
                "concept {concept} out of range (n_concepts = {})",
                self.n_concepts
            )));
        }
        Ok(())
    }
}

/// Path of the sidecar manifest for an `ACTV` file.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Serializes the matrix and labels into the `ACTV` byte layout.
pub fn encode_actv(dataset: &ActivationDataset) -> Vec<u8> {
    let mut buf =
        Vec::with_capacity(HEADER_LEN + dataset.n_samples * (4 + 4 * dataset.n_neurons));
    buf.extend_from_slice(&ACTV_MAGIC);
    buf.extend_from_slice(&ACTV_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.n_samples as u64).to_le_bytes());
    buf.extend_from_slice(&(dataset.n_neurons as u64).to_le_bytes());
    buf.extend_from_slice(&(dataset.n_concepts as u32).to_le_bytes());
    for label in &dataset.labels {
        buf.extend_from_slice(&label.to_le_bytes());
    }
    for v in &dataset.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Parses an `ACTV` body, pairing it with an already-read manifest.
pub fn decode_actv(bytes: &[u8], manifest: Manifest) -> Result<ActivationDataset> {
    let mut cursor = ByteCursor::new(bytes);
    let magic = cursor.array::<4>("magic")?;
    if magic != ACTV_MAGIC {
        return Err(Error::BadMagic {
            expected: ACTV_MAGIC,
            found: magic,
        });
    }
    let version = cursor.u32("version")?;
    if version != ACTV_VERSION {
        return Err(Error::VersionMismatch {
            expected: ACTV_VERSION,
            found: version,
        });
    }
    let n_samples = cursor.u64("n_samples")?;
    let n_neurons = cursor.u64("n_neurons")?;
    let n_concepts = cursor.u32("n_concepts")? as usize;

    let n_samples = usize::try_from(n_samples)
        .map_err(|_| Error::Validation("n_samples does not fit in memory".into()))?;
    let n_neurons = usize::try_from(n_neurons)
        .map_err(|_| Error::Validation("n_neurons does not fit in memory".into()))?;
    let body_len = n_neurons
        .checked_add(1)
        .and_then(|w| w.checked_mul(4))
        .and_then(|w| w.checked_mul(n_samples))
        .ok_or_else(|| Error::Validation("declared payload size overflows".into()))?;
    let remaining = cursor.remaining();
    if remaining < body_len {
        return Err(Error::Truncated {
            context: format!("payload has {remaining} bytes, header declares {body_len}"),
        });
    }
    if remaining > body_len {
        return Err(Error::Validation(format!(
            "{} trailing bytes after payload",
            remaining - body_len
        )));
    }

    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        labels.push(cursor.u32("labels")?);
    }
    let mut values = Vec::with_capacity(n_samples * n_neurons);
    for _ in 0..n_samples * n_neurons {
        values.push(f32::from_le_bytes(cursor.array::<4>("values")?));
    }
    ActivationDataset::new(n_neurons, n_concepts, labels, values, manifest)
}

/// Writes the dataset to `path` and its manifest to `<path>.manifest.json`.
pub fn write_dataset(dataset: &ActivationDataset, path: &Path) -> Result<()> {
    fs::write(path, encode_actv(dataset)).map_err(|e| Error::io(path, e))?;
    let manifest_file = manifest_path(path);
    let json = serde_json::to_vec_pretty(&dataset.manifest)?;
    fs::write(&manifest_file, json).map_err(|e| Error::io(&manifest_file, e))?;
    Ok(())
}

/// Loads and validates an `ACTV` file and its required sidecar manifest.
pub fn load_dataset(path: &Path) -> Result<ActivationDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let manifest_file = manifest_path(path);
    let manifest_bytes = fs::read(&manifest_file).map_err(|e| Error::io(&manifest_file, e))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Manifest(format!("{}: {e}", manifest_file.display())))?;
    decode_actv(&bytes, manifest)
}

pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteCursor { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        if self.remaining() < N {
            return Err(Error::Truncated {
                context: format!("reading {what} at byte {}", self.pos),
            });
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.array::<1>(what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }
}

/// Summary of one neuron's activations over the samples of one concept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronConceptStats {
    /// Sample mean.
    pub mean: f64,
    /// Population (1/n) standard deviation.
    pub std: f64,
    /// Fraction of samples with activation strictly above zero.
    pub firing_freq: f64,
    pub sample_count: usize,
    pub mean_abs: f64,
}

impl NeuronConceptStats {
    /// Two-pass statistics over a slice of activations.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot summarize an empty concept slice".into(),
            ));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let firing = values.iter().filter(|&&v| v > 0.0).count() as f64 / n;
        let mean_abs = values.iter().map(|v| v.abs()).sum::<f64>() / n;
        // Identical values can still leave a rounding residue in the
        // deviations; report an exact zero for them.
        let all_equal = values.iter().all(|&v| v == values[0]);
        Ok(NeuronConceptStats {
            mean: if all_equal { values[0] } else { mean },
            std: if all_equal { 0.0 } else { var.sqrt() },
            firing_freq: firing,
            sample_count: values.len(),
            mean_abs,
        })
    }
}

/// Statistics for one (neuron, concept) pair.
pub fn concept_stats(
    dataset: &ActivationDataset,
    neuron: usize,
    concept: usize,
) -> Result<NeuronConceptStats> {
    dataset.check_indices(neuron, concept)?;
    let values: Vec<f64> = dataset
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l as usize == concept)
        .map(|(s, _)| dataset.value(s, neuron) as f64)
        .collect();
    NeuronConceptStats::from_values(&values)
}

/// Dense neuron-major table of [`NeuronConceptStats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    n_neurons: usize,
    n_concepts: usize,
    entries: Vec<NeuronConceptStats>,
}

impl StatsTable {
    pub fn from_dataset(dataset: &ActivationDataset) -> Self {
        let entries = (0..dataset.n_neurons)
            .flat_map(|j| {
                dataset
                    .neuron_values_by_concept(j)
                    .into_iter()
                    .map(|vals| {
                        NeuronConceptStats::from_values(&vals)
                            .expect("valid datasets have samples for every concept")
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        StatsTable {
            n_neurons: dataset.n_neurons,
            n_concepts: dataset.n_concepts,
            entries,
        }
    }

    pub(crate) fn from_entries(
        n_neurons: usize,
        n_concepts: usize,
        entries: Vec<NeuronConceptStats>,
    ) -> Self {
        debug_assert_eq!(entries.len(), n_neurons * n_concepts);
        StatsTable {
            n_neurons,
            n_concepts,
            entries,
        }
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn n_concepts(&self) -> usize {
        self.n_concepts
    }

    pub fn get(&self, neuron: usize, concept: usize) -> &NeuronConceptStats {
        &self.entries[neuron * self.n_concepts + concept]
    }
}

/// Sample indices per concept, in dataset order. Index `i` of the result
/// holds the samples labelled `i`.
pub fn partition_by_concept(dataset: &ActivationDataset) -> Vec<Vec<usize>> {
    let mut parts = vec![Vec::new(); dataset.n_concepts];
    for (s, &label) in dataset.labels.iter().enumerate() {
        parts[label as usize].push(s);
    }
    parts
}
