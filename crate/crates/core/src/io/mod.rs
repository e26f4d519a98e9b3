//! Files and runs: the bundle format, the synthetic generator, CSV tables
//! and the experiment drivers behind the command line.

pub mod bundle;
pub mod experiment;
pub mod maps;
pub mod synth;
pub mod tables;

pub use bundle::{read_dataset, write_dataset, Manifest, VolumeBundle};
pub use experiment::{
    inspect, replay, run_compare, run_friedman, run_permtest, run_searchlight_experiment, CompareSpec, RunManifest,
    RunSpec, SearchlightSpec,
};
pub use maps::{read_pvalue_map, read_score_map, write_pvalue_map, write_score_map};
pub use synth::{generate_synth, GroundTruth, ShiftDescriptor, SynthConfig};
pub use tables::{read_results_csv, results_csv};
