//! Fixtures shared by the benchmarks.

use mgeal_core::experiment::ExperimentConfig;
use mgeal_core::{Archive, ModelParams, Sample, TrainConfig};

/// Reference-shaped data with `size` samples in total.
pub fn archive(size: usize) -> Archive {
    let config = ExperimentConfig {
        size,
        ..ExperimentConfig::reference()
    };
    mgeal_core::dataset::generate_synthetic(&config.synthetic()).expect("reference config is valid")
}

/// A classifier briefly fitted on the first `labeled` samples.
pub fn fitted(archive: &Archive, labeled: usize) -> ModelParams {
    let params =
        ModelParams::init(archive.dim(), &[32], archive.num_classes(), 0).expect("valid shape");
    let samples: Vec<&Sample> = archive.samples().iter().take(labeled).collect();
    let config = TrainConfig {
        epochs: 10,
        lr_decay_epoch: 8,
        ..TrainConfig::default()
    };
    mgeal_core::model::train(&params, &samples, &config).expect("training succeeds")
}
