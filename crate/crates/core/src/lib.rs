//! Desk-scale simulator for query-based tracking supervision.
//!
//! The crate pairs a deterministic synthetic BEV scene generator with the
//! training-time machinery of tracking-by-attention: bipartite ground-truth
//! assignment (baseline and second-chance variants), track-query lifecycle
//! with dropout groups, a parameterized decoder oracle hosting a small
//! learnable confidence model, and an AMOTA-family metrics suite. Everything
//! is a pure function of configuration and seed, so the new-instance
//! suppression phenomenon and its repair can be reproduced and compared
//! without training a neural network.
//!
//! Modules follow the pipeline order:
//!
//! - [`world`]: scenes, clips, class-balanced clip sampling
//! - [`assignment`]: match costs, Hungarian matching, assignment strategies
//! - [`lifecycle`]: query groups, dropout, propagation
//! - [`oracle`]: decoder stand-in and logistic confidence model
//! - [`metrics`]: CLEAR-MOT accumulation, AMOTA/AMOTP, TQ recall
//! - [`harness`]: experiment configuration, episode runner, comparisons
//! - [`check`]: brute-force oracles used by tests and `selftest`

pub mod assignment;
pub mod check;
pub mod error;
pub mod harness;
pub mod lifecycle;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod world;

pub use assignment::{
    baseline_assign, detection_assign, hungarian, match_cost, second_chance_assign,
    supervision_labels, AssignedPair, AssignmentResult, CostParams, Prediction, QueryLabel, Stage,
};
pub use error::{Error, Result};
pub use harness::{
    labeled_examples, outputs_from_log, report, run_comparison, run_episode, run_episode_with,
    run_training, ComparisonReport, EpisodeMode, EpisodeRunner, ExperimentConfig, ReportFormat,
    Strategy, StrategyDelta, StrategyReport, TrainingConfig,
};
pub use lifecycle::{
    dropout_groups, first_frame_gate, inference_mode, propagate, sample_queries, select_top_n,
    spawn_proposals, EpisodeLog, EpisodeRecord, LabeledQuery, LifecycleConfig, QueryGroup,
    QueryKind, QueryState,
};
pub use metrics::{
    accumulate_clearmot, amota_amotp, confidence_stats, match_frame, motar, tq_recall,
    AmotaResult, MetricsReport, MotAccumulator, SceneEval, TrackedOutput,
};
pub use oracle::{
    decode, features, predict_confidence, sgd_step, train_confidence_model, ConfidenceModel,
    LabeledExample, OracleParams, FEATURE_DIM, FEATURE_NAMES,
};
pub use world::{
    class_balanced_clip_sampler, generate_scenario, normalize_yaw, split_clips, BevBox, Clip,
    Frame, GtObject, Scene, ScenarioParams,
};

/// Identifier of a query within an episode.
pub type QueryId = u64;
/// Identifier of a ground-truth track within a scene.
pub type TrackId = u64;
