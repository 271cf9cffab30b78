//! Frame-by-frame episode execution.
//!
//! An episode walks a window of scene frames with one or more query-group
//! branches. Each frame, per branch: spawn grid proposals, gate, decode
//! through the oracle, assign ground truth per the configured strategy, log,
//! then build the propagation set (top-N for the main branch, a random subset
//! for auxiliary dropout branches). Branches are fully independent: each owns
//! its queries and its random stream, so mutating one cannot change another.

use serde::{Deserialize, Serialize};

use crate::assignment::{
    baseline_assign, detection_assign, second_chance_assign, supervision_labels, AssignmentResult,
};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Strategy};
use crate::lifecycle::{
    dropout_groups, first_frame_gate, propagate, sample_queries, select_top_n, spawn_proposals,
    EpisodeLog, EpisodeRecord, LabeledQuery, QueryGroup, QueryKind, QueryState,
};
use crate::metrics::TrackedOutput;
use crate::oracle::{decode, features, ConfidenceModel, LabeledExample};
use crate::rng::{self, Stream};
use crate::world::Scene;
use crate::QueryId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeMode {
    Training,
    Inference,
}

impl std::str::FromStr for EpisodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training" => Ok(EpisodeMode::Training),
            "inference" => Ok(EpisodeMode::Inference),
            other => Err(Error::parameter(
                "mode",
                format!("unknown mode `{other}` (expected training or inference)"),
            )),
        }
    }
}

/// Proposal ids partition by (episode frame offset, group): 12 bits of local
/// index, 12 bits of group, the rest frame offset. Propagated queries keep
/// their id, so ids stay unique across an episode.
fn query_id_base(frame_offset: usize, group_id: u32) -> QueryId {
    ((frame_offset as QueryId) << 24) | ((group_id as QueryId) << 12)
}

/// One independent query-group branch.
pub struct Branch {
    pub group_id: u32,
    pub is_main: bool,
    /// Track queries carried into the next frame.
    pub queries: Vec<QueryState>,
    stream: Stream,
}

/// Stepwise episode executor. [`run_episode`] drives it to completion; tests
/// that perturb branch state between frames step it manually.
pub struct EpisodeRunner<'a> {
    config: &'a ExperimentConfig,
    scene: &'a Scene,
    frame_range: (usize, usize),
    mode: EpisodeMode,
    model: Option<&'a ConfidenceModel>,
    /// Fraction of training already processed; drives the dropout schedule.
    progress: f64,
    episode_seed: u64,
    split_stream: Stream,
    branches: Vec<Branch>,
    cursor: usize,
    records: Vec<EpisodeRecord>,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(
        config: &'a ExperimentConfig,
        scene: &'a Scene,
        frame_range: (usize, usize),
        mode: EpisodeMode,
        model: Option<&'a ConfidenceModel>,
        progress: f64,
        episode_seed: u64,
    ) -> Result<EpisodeRunner<'a>> {
        config.validate()?;
        if scene.params.arena_half_extent != config.scenario.arena_half_extent {
            return Err(Error::parameter(
                "scenario.arena_half_extent",
                format!(
                    "scene was generated with extent {}, config says {}",
                    scene.params.arena_half_extent, config.scenario.arena_half_extent
                ),
            ));
        }
        if scene.params.num_classes != config.scenario.num_classes {
            return Err(Error::parameter(
                "scenario.num_classes",
                "scene and config disagree on the class count",
            ));
        }
        let (start, end) = frame_range;
        if start >= end || end > scene.frames.len() {
            return Err(Error::parameter(
                "frame_range",
                format!("[{start}, {end}) is not a valid window of {} frames", scene.frames.len()),
            ));
        }
        Ok(EpisodeRunner {
            config,
            scene,
            frame_range,
            mode,
            model,
            progress,
            episode_seed,
            split_stream: rng::stream(episode_seed, rng::TAG_GROUP ^ u64::MAX),
            branches: vec![Branch {
                group_id: 0,
                is_main: true,
                queries: Vec::new(),
                stream: rng::stream(episode_seed, rng::TAG_GROUP),
            }],
            cursor: 0,
            records: Vec::new(),
        })
    }

    pub fn branches_mut(&mut self) -> &mut [Branch] {
        &mut self.branches
    }

    pub fn records(&self) -> &[EpisodeRecord] {
        &self.records
    }

    fn assign(
        &self,
        decoded: &QueryGroup,
        frame: &crate::world::Frame,
    ) -> Result<AssignmentResult> {
        let strategy = self.config.strategy;
        if strategy == Strategy::Detection {
            return detection_assign(&decoded.queries, frame, &self.config.cost);
        }
        let tracks: Vec<QueryState> = decoded
            .queries
            .iter()
            .filter(|q| q.kind == QueryKind::Track)
            .cloned()
            .collect();
        let proposals: Vec<QueryState> = decoded
            .queries
            .iter()
            .filter(|q| q.kind == QueryKind::Proposal)
            .cloned()
            .collect();
        let second_chance =
            strategy.uses_second_chance() && self.mode == EpisodeMode::Training;
        if second_chance {
            second_chance_assign(&tracks, &proposals, frame, &self.config.cost)
        } else {
            baseline_assign(&tracks, &proposals, frame, &self.config.cost)
        }
    }

    /// Process one frame across all branches. Returns false once the window
    /// is exhausted.
    pub fn step(&mut self) -> Result<bool> {
        let (start, end) = self.frame_range;
        if start + self.cursor >= end {
            return Ok(false);
        }
        let frame = &self.scene.frames[start + self.cursor];
        let lc = &self.config.lifecycle;
        let gate_radius = self.config.cost.gate_radius;

        let mut decoded_groups: Vec<QueryGroup> = Vec::with_capacity(self.branches.len());
        for branch in self.branches.iter_mut() {
            let proposals = spawn_proposals(
                self.config.scenario.arena_half_extent,
                lc,
                frame.index,
                query_id_base(self.cursor, branch.group_id),
                self.config.scenario.num_classes,
            )?;
            // Detection stage: decode all proposals in isolation (no track
            // queries in context, so no suppression) to get the confidences
            // the top-N forwarding gate ranks by.
            let detection_group = QueryGroup {
                group_id: branch.group_id,
                is_main: branch.is_main,
                queries: proposals,
            };
            let detected = decode(
                &detection_group,
                frame,
                &self.config.oracle,
                self.model,
                gate_radius,
                &mut branch.stream,
            )?;
            // Track stage: the forwarded set decodes together, so proposal
            // confidences now see the track queries they compete with.
            let forwarded = first_frame_gate(&branch.queries, &detected.queries, lc);
            let group = QueryGroup {
                group_id: branch.group_id,
                is_main: branch.is_main,
                queries: forwarded,
            };
            decoded_groups.push(decode(
                &group,
                frame,
                &self.config.oracle,
                self.model,
                gate_radius,
                &mut branch.stream,
            )?);
        }

        let mut assignments: Vec<AssignmentResult> = Vec::with_capacity(decoded_groups.len());
        for decoded in &decoded_groups {
            let assignment = self.assign(decoded, frame)?;
            let labels = supervision_labels(&assignment, &decoded.queries)?;
            let labeled: Vec<LabeledQuery> = decoded
                .queries
                .iter()
                .zip(labels)
                .map(|(q, label)| LabeledQuery {
                    query_id: label.query_id,
                    gt_track_id: label.gt_track_id,
                    features: features(q, decoded, frame, &self.config.oracle, gate_radius)
                        .to_vec(),
                })
                .collect();
            self.records.push(EpisodeRecord {
                frame: frame.index,
                group_id: decoded.group_id,
                queries: decoded.queries.clone(),
                assignment: assignment.clone(),
                labels: labeled,
            });
            assignments.push(assignment);
        }

        let last_frame = start + self.cursor + 1 == end;
        if !last_frame {
            let want_dropout = self.mode == EpisodeMode::Training
                && lc.num_aux_groups > 0
                && self.cursor == 0
                && self.branches.len() == 1;
            if want_dropout {
                let decoded = &decoded_groups[0];
                let assignment = &assignments[0];
                let groups =
                    dropout_groups(&decoded.queries, lc, &mut self.split_stream, self.progress);
                let mut main_stream = Some(self.branches.pop().expect("bootstrap branch").stream);
                self.branches = groups
                    .iter()
                    .map(|g| Branch {
                        group_id: g.group_id,
                        is_main: g.is_main,
                        queries: propagate(g, assignment).queries,
                        stream: if g.is_main {
                            main_stream.take().expect("exactly one main group")
                        } else {
                            rng::stream(self.episode_seed, rng::TAG_GROUP ^ g.group_id as u64)
                        },
                    })
                    .collect();
            } else {
                for (branch, (decoded, assignment)) in self
                    .branches
                    .iter_mut()
                    .zip(decoded_groups.iter().zip(assignments.iter()))
                {
                    let selected = if branch.is_main {
                        select_top_n(&decoded.queries, lc.n_tq)
                    } else {
                        sample_queries(&decoded.queries, lc.n_tq, &mut branch.stream)
                    };
                    let group = QueryGroup {
                        group_id: branch.group_id,
                        is_main: branch.is_main,
                        queries: selected,
                    };
                    branch.queries = propagate(&group, assignment).queries;
                }
            }
        }
        self.cursor += 1;
        Ok(true)
    }

    pub fn into_log(self) -> EpisodeLog {
        EpisodeLog {
            scene_id: self.scene.scene_id,
            frame_range: self.frame_range,
            records: self.records,
        }
    }
}

/// Run one episode over an explicit frame window.
pub fn run_episode_with(
    config: &ExperimentConfig,
    scene: &Scene,
    frame_range: (usize, usize),
    mode: EpisodeMode,
    model: Option<&ConfidenceModel>,
    progress: f64,
    episode_seed: u64,
) -> Result<EpisodeLog> {
    let mut runner =
        EpisodeRunner::new(config, scene, frame_range, mode, model, progress, episode_seed)?;
    while runner.step()? {}
    Ok(runner.into_log())
}

/// Run one full-scene episode with heuristic confidences (no trained model).
pub fn run_episode(
    config: &ExperimentConfig,
    scene: &Scene,
    mode: EpisodeMode,
) -> Result<EpisodeLog> {
    let tag = match mode {
        EpisodeMode::Training => rng::TAG_TRAIN_EPISODE,
        EpisodeMode::Inference => rng::TAG_INFER_EPISODE,
    };
    run_episode_with(
        config,
        scene,
        (0, scene.frames.len()),
        mode,
        None,
        0.0,
        rng::substream(scene.seed, tag),
    )
}

/// Flatten an episode's per-query labels into confidence-model examples.
pub fn labeled_examples(log: &EpisodeLog) -> Vec<LabeledExample> {
    let mut examples = Vec::new();
    for record in &log.records {
        for label in &record.labels {
            let mut features = [0.0; crate::oracle::FEATURE_DIM];
            if label.features.len() == features.len() {
                features.copy_from_slice(&label.features);
            }
            examples.push(LabeledExample {
                features,
                label: label.gt_track_id.is_some(),
            });
        }
    }
    examples
}

/// Tracker outputs of an inference episode: every main-group query becomes a
/// box with the query id as the output identity.
pub fn outputs_from_log(log: &EpisodeLog) -> Vec<TrackedOutput> {
    let mut outputs = Vec::new();
    for record in log.main_records() {
        for query in &record.queries {
            outputs.push(TrackedOutput {
                frame: record.frame,
                pred_track_id: query.query_id,
                bev_box: query.prediction.bev_box,
                class_id: query.prediction.top_class(),
                confidence: query.prediction.confidence,
            });
        }
    }
    outputs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::generate_scenario;

    fn test_config() -> ExperimentConfig {
        ExperimentConfig {
            strategy: Strategy::ScaDropout,
            ..ExperimentConfig::default()
        }
    }

    fn test_scene(config: &ExperimentConfig, seed: u64) -> Scene {
        let mut scene = generate_scenario(&config.scenario, seed).unwrap();
        scene.scene_id = seed;
        scene
    }

    #[test]
    fn inference_logs_one_group_per_frame() {
        let config = test_config();
        let scene = test_scene(&config, 3);
        let log = run_episode(&config, &scene, EpisodeMode::Inference).unwrap();
        assert_eq!(log.records.len(), scene.frames.len());
        assert!(log.records.iter().all(|r| r.group_id == 0));
    }

    #[test]
    fn training_with_aux_group_logs_two_groups_after_frame_zero() {
        let config = test_config();
        let scene = test_scene(&config, 4);
        let log = run_episode(&config, &scene, EpisodeMode::Training).unwrap();
        let frame0: Vec<_> = log.records.iter().filter(|r| r.frame == 0).collect();
        assert_eq!(frame0.len(), 1, "groups do not exist before the first propagation");
        for frame in 1..scene.frames.len() {
            let records: Vec<_> = log.records.iter().filter(|r| r.frame == frame).collect();
            assert_eq!(records.len(), 2, "frame {frame}");
            assert_eq!(records[0].group_id, 0);
            assert_eq!(records[1].group_id, 1);
        }
    }

    #[test]
    fn baseline_strategy_still_honors_configured_aux_groups() {
        // Dropout grouping is a lifecycle concern: a baseline-assignment
        // training episode with one aux group configured logs two groups per
        // frame after frame zero.
        let config = ExperimentConfig {
            strategy: Strategy::Baseline,
            ..ExperimentConfig::default()
        };
        assert_eq!(config.lifecycle.num_aux_groups, 1);
        let scene = test_scene(&config, 21);
        let log = run_episode(&config, &scene, EpisodeMode::Training).unwrap();
        for frame in 1..scene.frames.len() {
            let records = log.records.iter().filter(|r| r.frame == frame).count();
            assert_eq!(records, 2, "frame {frame}");
        }
        // Baseline assignment never produces second-chance pairs even with
        // dropout groups present.
        assert!(log.records.iter().all(|r| {
            r.assignment
                .pairs
                .iter()
                .all(|p| p.stage != crate::assignment::Stage::SecondChance)
        }));
    }

    #[test]
    fn frame_zero_has_no_continuations() {
        let config = test_config();
        let scene = test_scene(&config, 5);
        let log = run_episode(&config, &scene, EpisodeMode::Training).unwrap();
        let frame0 = &log.records[0];
        assert!(frame0
            .assignment
            .pairs
            .iter()
            .all(|p| p.stage != crate::assignment::Stage::Continuation));
    }

    #[test]
    fn inference_never_emits_second_chance() {
        let config = test_config();
        let scene = test_scene(&config, 6);
        let log = run_episode(&config, &scene, EpisodeMode::Inference).unwrap();
        for record in &log.records {
            assert!(record
                .assignment
                .pairs
                .iter()
                .all(|p| p.stage != crate::assignment::Stage::SecondChance));
        }
    }

    #[test]
    fn training_does_emit_second_chance_somewhere() {
        // With dropout active, freed objects regularly meet leftover track
        // queries; over a few seeds at least one second-chance pair appears.
        let config = test_config();
        let mut saw = false;
        for seed in 0..6u64 {
            let scene = test_scene(&config, seed);
            let log = run_episode(&config, &scene, EpisodeMode::Training).unwrap();
            saw |= log.records.iter().any(|r| {
                r.assignment
                    .pairs
                    .iter()
                    .any(|p| p.stage == crate::assignment::Stage::SecondChance)
            });
        }
        assert!(saw, "no second-chance assignment in any training episode");
    }

    #[test]
    fn episodes_are_deterministic() {
        let config = test_config();
        let scene = test_scene(&config, 7);
        let a = run_episode(&config, &scene, EpisodeMode::Training).unwrap();
        let b = run_episode(&config, &scene, EpisodeMode::Training).unwrap();
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
    }

    #[test]
    fn first_frame_forwards_every_proposal() {
        let config = test_config();
        let scene = test_scene(&config, 8);
        let log = run_episode(&config, &scene, EpisodeMode::Inference).unwrap();
        // 2 * 20 m arena at 5 m pitch: 9x9 grid.
        let frame0 = &log.records[0];
        assert_eq!(frame0.queries.len(), 81);
        // Later frames carry at most n_pq proposals plus n_tq tracks.
        for record in log.records.iter().filter(|r| r.frame > 0) {
            let proposals = record
                .queries
                .iter()
                .filter(|q| q.kind == QueryKind::Proposal)
                .count();
            let tracks = record.queries.len() - proposals;
            assert!(proposals <= config.lifecycle.n_pq);
            assert!(tracks <= config.lifecycle.n_tq);
        }
    }

    #[test]
    fn query_ids_are_unique_within_episode_groups() {
        let config = test_config();
        let scene = test_scene(&config, 9);
        let log = run_episode(&config, &scene, EpisodeMode::Training).unwrap();
        for record in &log.records {
            let mut ids: Vec<QueryId> = record.queries.iter().map(|q| q.query_id).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), record.queries.len());
        }
    }

    #[test]
    fn ages_increase_monotonically() {
        let config = test_config();
        let scene = test_scene(&config, 10);
        let log = run_episode(&config, &scene, EpisodeMode::Inference).unwrap();
        let mut last_age: std::collections::BTreeMap<QueryId, u32> = Default::default();
        for record in &log.records {
            for q in &record.queries {
                if let Some(prev) = last_age.get(&q.query_id) {
                    assert_eq!(q.age, prev + 1, "query {} age jumped", q.query_id);
                }
                last_age.insert(q.query_id, q.age);
            }
        }
    }

    #[test]
    fn detection_strategy_reassigns_every_frame() {
        let config = ExperimentConfig {
            strategy: Strategy::Detection,
            ..ExperimentConfig::default()
        };
        let scene = test_scene(&config, 11);
        let log = run_episode(&config, &scene, EpisodeMode::Inference).unwrap();
        for record in &log.records {
            assert!(record
                .assignment
                .pairs
                .iter()
                .all(|p| p.stage == crate::assignment::Stage::FirstStage));
        }
    }

    #[test]
    fn mismatched_scene_is_a_parameter_error() {
        let config = test_config();
        let mut other = config.clone();
        other.scenario.arena_half_extent = 10.0;
        let scene = test_scene(&other, 12);
        assert!(matches!(
            run_episode(&config, &scene, EpisodeMode::Inference),
            Err(Error::Parameter { .. })
        ));
    }
}
