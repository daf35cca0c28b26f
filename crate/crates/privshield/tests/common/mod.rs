#![allow(dead_code)]

use std::path::Path;

use privshield::ExperimentConfig;

/// A config small enough to train and attack in well under a second.
pub const TINY: &str = r#"
seed = 4
[data]
fractions = [0.4, 0.4, 0.2]
[data.synth]
n_identities = 6
samples_per_identity = 8
k_attributes = 3
image_size = 16
seed = 1
[train]
batch_size = 8
total_alternations = 4
checkpoint_every = 2
[train.hp]
lambda1 = 1.0
[private]
steps = 5
batch_size = 8
[attack]
steps = 5
mapper_steps = 5
batch_size = 8
[eval]
grid_size = 4
[sweep]
seeds = 1
"#;

pub fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml(TINY).unwrap()
}

pub fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}
