//! Desk-scale benchmark on a procedural shapes corpus with known content:
//! corpus generation, candidate-level selection metrics, ε sweeps and the
//! three-way augmentation ablation.

mod corpus;
mod experiment;
mod metrics;

pub use corpus::{make_corpus, manifest_of, render_corpus, write_images, ShapesCorpusConfig};
pub use experiment::{
    ablate, evaluate, prepare, run_sweep, training_set, AblationMode, AblationReport, AblationRow,
    ExperimentConfig, Prepared, DOWNSTREAM_THRESHOLD,
};
pub use metrics::{
    epsilon_sweep, read_truth, selection_metrics, sweep_csv, write_truth, GroundTruth, SelectionMetrics,
    DownstreamHook, SweepRow, TruthEntry,
};
