//! Experiment orchestration: configuration, episode execution, strategy
//! comparison, and report rendering.

pub mod compare;
pub mod config;
pub mod episode;
pub mod report;

pub use compare::{run_comparison, run_training, ComparisonReport, StrategyDelta, StrategyReport};
pub use config::{ExperimentConfig, Strategy, TrainingConfig};
pub use episode::{
    labeled_examples, outputs_from_log, run_episode, run_episode_with, Branch, EpisodeMode,
    EpisodeRunner,
};
pub use report::{report, ReportFormat, COMPARISON_CSV_HEADER};
