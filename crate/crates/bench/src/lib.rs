//! Shared fixtures for the pipeline benchmarks.

use tba_core::{generate_scenario, ExperimentConfig, Scene};

/// The default config with a fixed bench seed.
pub fn bench_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 0xBE9C,
        ..ExperimentConfig::default()
    }
}

/// One default-parameter scene for episode and metrics benchmarks.
pub fn bench_scene(config: &ExperimentConfig) -> Scene {
    let seed = tba_core::rng::substream(config.seed, tba_core::rng::TAG_SCENE);
    generate_scenario(&config.scenario, seed).expect("valid default scenario")
}
