//! Concept separability scoring and distribution-aware concept erasure for
//! recorded neuron activations.
//!
//! The pipeline runs bottom-up through the modules:
//!
//! - [`store`]: activation datasets, the `ACTV` file format, per-concept stats
//! - [`density`]: histogram-backed Gaussian KDE per (neuron, concept)
//! - [`separability`]: Jensen-Shannon separability per neuron and per layer,
//!   plus salient/active neuron overlap
//! - [`intervention`]: posterior attenuation (APP) and baseline erasure methods
//! - [`evaluation`]: readout classifier, erasure metrics, Pearson correlation
//! - [`synth`]: seeded synthetic activation datasets

pub mod density;
pub mod error;
pub mod evaluation;
pub mod intervention;
pub mod rng;
pub mod separability;
pub mod store;
pub mod synth;

pub use density::{
    fit_density_bank, fit_histogram_density, kde_exact, DensityBank, HistogramDensity,
    DEFAULT_BINS,
};
pub use error::{Error, Result};
pub use evaluation::{
    dppl, erasure_metrics, evaluate_readout, offtarget_distortion, pearson, train_readout,
    ConceptResults, ErasureReport, ReadoutModel,
};
pub use intervention::{
    build_plan, InterventionPlan, Method, DEFAULT_TAU, DEFAULT_WINDOW_MULT,
};
pub use separability::{
    active_neuron_overlap, layer_separability, topk_salient_overlap, OverlapReport,
    SeparabilityReport, DEFAULT_TOP_K,
};
pub use store::{
    concept_stats, load_dataset, partition_by_concept, write_dataset, ActivationDataset, Manifest,
    NeuronConceptStats, Representation, StatsTable,
};
pub use synth::{generate, separability_sweep, SynthConfig};
