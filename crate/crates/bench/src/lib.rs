//! Benchmark fixtures shared by the criterion targets.

use tfn_core::data::{synth_generate, Dataset, SynthSpec};
use tfn_core::model::ArchConfig;

/// A small synthetic dataset with the default feature sizes.
pub fn dataset(n: usize) -> Dataset {
    synth_generate(&SynthSpec {
        n_utterances: n,
        ..SynthSpec::default()
    })
    .expect("valid spec")
}

/// Narrow architecture for fast end-to-end steps.
pub fn reduced_arch() -> ArchConfig {
    ArchConfig {
        projection_dim: 32,
        lstm_hidden: 32,
        language_dim: 16,
        t_max: 10,
        subnet_width: 16,
        trunk_width: 128,
    }
}
