#![allow(dead_code)]

use otafl::harness::{DataSource, ExperimentConfig, StepsizeSpec};
use otafl::model::SyntheticSpec;

/// Four devices, 20 pixels, 60 rounds: fast enough for exhaustive checks.
pub fn small_config(seed: u64) -> ExperimentConfig {
    let spec = SyntheticSpec {
        input_dim: 20,
        num_classes: 4,
        ..SyntheticSpec::default()
    };
    let dim = 4 * 21;
    ExperimentConfig {
        num_devices: 4,
        data: DataSource::Synthetic { spec },
        samples_per_class: 6,
        test_size: 200,
        budget_ms: 60.0 * dim as f64 / 1e6 * 1000.0 + 1e-9,
        stepsize: StepsizeSpec::Fixed { eta: 0.05 },
        replicates: 4,
        grid_replicates: 2,
        seed,
        log_every: 1,
        ..ExperimentConfig::default()
    }
}
