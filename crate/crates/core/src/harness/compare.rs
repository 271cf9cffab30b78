//! Strategy comparison: identical scenes, per-strategy training and
//! evaluation, one report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Strategy};
use crate::harness::episode::{
    labeled_examples, outputs_from_log, run_episode_with, EpisodeMode,
};
use crate::lifecycle::EpisodeLog;
use crate::metrics::{
    amota_amotp, confidence_stats, tq_recall, MetricsReport, SceneEval, TrackedOutput,
    DEFAULT_DIST_THRESHOLD_M, DEFAULT_NUM_THRESHOLDS,
};
use crate::oracle::train_confidence_model;
use crate::rng;
use crate::world::{class_balanced_clip_sampler, generate_scenario, split_clips, Clip, Scene};

/// One strategy's column in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub config_hash: String,
    pub metrics: MetricsReport,
    /// Fraction of proposal-query labels that were positive during training.
    pub proposal_positive_rate: Option<f64>,
    /// Fraction of track-query labels that were positive during training.
    pub track_positive_rate: Option<f64>,
    pub final_train_loss: Option<f64>,
}

/// Differences of a strategy against the comparison's first strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyDelta {
    pub strategy: Strategy,
    pub amota: f64,
    pub amotp: f64,
    pub fp: i64,
    #[serde(rename = "fn")]
    pub fn_: i64,
    pub ids: i64,
    pub tq_recall: Option<f64>,
    pub nb_conf: Option<f64>,
    pub trk_conf: Option<f64>,
    pub proposal_positive_rate: Option<f64>,
}

/// Full ablation result over a shared scene suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub seed: u64,
    pub num_scenes: usize,
    pub strategies: Vec<StrategyReport>,
    /// Deltas of `strategies[1..]` against `strategies[0]`.
    pub deltas: Vec<StrategyDelta>,
}

impl ComparisonReport {
    /// Mixed-provenance reports are invalid: every column must embed the same
    /// configuration hash.
    pub fn validate(&self) -> Result<()> {
        for report in &self.strategies {
            if report.config_hash != self.config_hash {
                return Err(Error::Data(format!(
                    "strategy {} was produced under config {} but the report is {}",
                    report.strategy, report.config_hash, self.config_hash
                )));
            }
        }
        Ok(())
    }
}

fn option_delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    }
}

/// Training/evaluation split: first ~70% of scenes train the confidence
/// model, the rest are evaluated.
fn split_counts(num_scenes: usize) -> Result<usize> {
    let train = ((num_scenes as f64) * 0.7).round().max(1.0) as usize;
    let train = train.min(num_scenes);
    if train == num_scenes {
        return Err(Error::parameter(
            "num_scenes",
            "need at least 2 scenes to split into training and evaluation",
        ));
    }
    Ok(train)
}

fn run_strategy(
    base: &ExperimentConfig,
    strategy: Strategy,
    config_hash: &str,
    train_scenes: &[Scene],
    sampled_clips: &[Clip],
    eval_scenes: &[Scene],
    seed: u64,
) -> Result<StrategyReport> {
    let mut config = base.clone();
    config.strategy = strategy;
    config.lifecycle.num_aux_groups = if strategy.uses_dropout() {
        base.lifecycle.num_aux_groups.max(1)
    } else {
        0
    };

    let by_id: BTreeMap<u64, &Scene> = train_scenes.iter().map(|s| (s.scene_id, s)).collect();

    // Training pass: clip episodes in the shared sampled order.
    let mut examples = Vec::new();
    let mut proposal_counts = (0u64, 0u64); // (positive, total)
    let mut track_counts = (0u64, 0u64);
    let train_tag = rng::substream(seed, rng::TAG_TRAIN_EPISODE);
    for (k, clip) in sampled_clips.iter().enumerate() {
        let scene = by_id
            .get(&clip.scene_id)
            .ok_or_else(|| Error::State(format!("clip references unknown scene {}", clip.scene_id)))?;
        let progress = k as f64 / sampled_clips.len() as f64;
        let log = run_episode_with(
            &config,
            scene,
            clip.frame_range,
            EpisodeMode::Training,
            None,
            progress,
            rng::substream(train_tag, k as u64),
        )?;
        for record in &log.records {
            for label in &record.labels {
                let Some(query) = record.queries.iter().find(|q| q.query_id == label.query_id)
                else {
                    continue;
                };
                let counts = match query.kind {
                    crate::lifecycle::QueryKind::Proposal => &mut proposal_counts,
                    crate::lifecycle::QueryKind::Track => &mut track_counts,
                };
                counts.1 += 1;
                if label.gt_track_id.is_some() {
                    counts.0 += 1;
                }
            }
        }
        examples.extend(labeled_examples(&log));
    }

    let (model, curve) = train_confidence_model(
        &examples,
        config.training.epochs,
        config.training.lr,
        config.training.batch_size,
        config.training.positive_weight,
        rng::substream(seed, rng::TAG_MODEL_TRAINING),
    )?;

    // Evaluation pass: full-scene inference with the trained model.
    let mut logs: Vec<EpisodeLog> = Vec::with_capacity(eval_scenes.len());
    for scene in eval_scenes {
        logs.push(run_episode_with(
            &config,
            scene,
            (0, scene.frames.len()),
            EpisodeMode::Inference,
            Some(&model),
            1.0,
            rng::substream(scene.seed, rng::TAG_INFER_EPISODE),
        )?);
    }
    let outputs: Vec<Vec<TrackedOutput>> = logs.iter().map(outputs_from_log).collect();
    let evals: Vec<SceneEval> = eval_scenes
        .iter()
        .zip(outputs.iter())
        .map(|(scene, outputs)| SceneEval { scene, outputs })
        .collect();
    let amota = amota_amotp(&evals, DEFAULT_NUM_THRESHOLDS, DEFAULT_DIST_THRESHOLD_M)?;
    let episode_pairs: Vec<(&EpisodeLog, &Scene)> = logs.iter().zip(eval_scenes.iter()).collect();
    let tq = tq_recall(&episode_pairs);
    let (nb_conf, trk_conf) = confidence_stats(&episode_pairs);

    let rate = |(pos, total): (u64, u64)| (total > 0).then(|| pos as f64 / total as f64);
    Ok(StrategyReport {
        strategy,
        config_hash: config_hash.to_string(),
        metrics: MetricsReport {
            amota: amota.amota,
            amotp: amota.amotp,
            motar_curve: amota.curve,
            fp: amota.best.false_positives,
            fn_: amota.best.false_negatives,
            ids: amota.best.id_switches,
            tq_recall: tq,
            nb_conf_mean: nb_conf,
            trk_conf_mean: trk_conf,
        },
        proposal_positive_rate: rate(proposal_counts),
        track_positive_rate: rate(track_counts),
        final_train_loss: curve.last().copied(),
    })
}

/// Generate the configured strategy's training logs and fit its confidence
/// model: scenes from the config seed, training split, class-balanced clip
/// sampling, one training episode per sampled clip. Returns the model and the
/// per-epoch loss curve.
pub fn run_training(
    config: &ExperimentConfig,
) -> Result<(crate::oracle::ConfidenceModel, Vec<f64>)> {
    config.validate()?;
    let seed = config.seed;
    let mut scenes = Vec::with_capacity(config.num_scenes);
    for i in 0..config.num_scenes as u64 {
        let scene_seed = rng::substream(seed, rng::TAG_SCENE ^ i);
        let mut scene = generate_scenario(&config.scenario, scene_seed)?;
        scene.scene_id = i;
        scenes.push(scene);
    }
    let train_count = split_counts(config.num_scenes)?;
    let train_scenes = &scenes[..train_count];

    let mut clips = Vec::new();
    for scene in train_scenes {
        clips.extend(split_clips(scene, config.training.clip_len)?);
    }
    let sampled = class_balanced_clip_sampler(
        &clips,
        clips.len(),
        rng::substream(seed, rng::TAG_CLIP_SAMPLER),
    )?;

    let by_id: BTreeMap<u64, &Scene> = train_scenes.iter().map(|s| (s.scene_id, s)).collect();
    let train_tag = rng::substream(seed, rng::TAG_TRAIN_EPISODE);
    let mut examples = Vec::new();
    for (k, clip) in sampled.iter().enumerate() {
        let scene = by_id
            .get(&clip.scene_id)
            .ok_or_else(|| Error::State(format!("clip references unknown scene {}", clip.scene_id)))?;
        let log = run_episode_with(
            config,
            scene,
            clip.frame_range,
            EpisodeMode::Training,
            None,
            k as f64 / sampled.len() as f64,
            rng::substream(train_tag, k as u64),
        )?;
        examples.extend(labeled_examples(&log));
    }
    train_confidence_model(
        &examples,
        config.training.epochs,
        config.training.lr,
        config.training.batch_size,
        config.training.positive_weight,
        rng::substream(seed, rng::TAG_MODEL_TRAINING),
    )
}

/// Evaluate every strategy on identical scenes (same seeds, same clip
/// schedule): generate training logs, fit a confidence model per strategy,
/// run inference with it, and aggregate metrics plus label-rate statistics.
pub fn run_comparison(
    config_base: &ExperimentConfig,
    strategies: &[Strategy],
    num_scenes: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    if strategies.is_empty() {
        return Err(Error::parameter("strategies", "need at least one strategy"));
    }
    let mut effective = config_base.clone();
    effective.num_scenes = num_scenes;
    effective.seed = seed;
    effective.validate()?;
    let config_hash = effective.canonical_hash();

    let mut scenes = Vec::with_capacity(num_scenes);
    for i in 0..num_scenes as u64 {
        let scene_seed = rng::substream(seed, rng::TAG_SCENE ^ i);
        let mut scene = generate_scenario(&effective.scenario, scene_seed)?;
        scene.scene_id = i;
        scenes.push(scene);
    }
    let train_count = split_counts(num_scenes)?;
    let (train_scenes, eval_scenes) = scenes.split_at(train_count);

    let mut clips = Vec::new();
    for scene in train_scenes {
        clips.extend(split_clips(scene, effective.training.clip_len)?);
    }
    let sampled = class_balanced_clip_sampler(
        &clips,
        clips.len(),
        rng::substream(seed, rng::TAG_CLIP_SAMPLER),
    )?;

    let mut reports = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        reports.push(run_strategy(
            &effective,
            strategy,
            &config_hash,
            train_scenes,
            &sampled,
            eval_scenes,
            seed,
        )?);
    }

    let deltas = reports[1..]
        .iter()
        .map(|r| {
            let base = &reports[0];
            StrategyDelta {
                strategy: r.strategy,
                amota: r.metrics.amota - base.metrics.amota,
                amotp: r.metrics.amotp - base.metrics.amotp,
                fp: r.metrics.fp as i64 - base.metrics.fp as i64,
                fn_: r.metrics.fn_ as i64 - base.metrics.fn_ as i64,
                ids: r.metrics.ids as i64 - base.metrics.ids as i64,
                tq_recall: option_delta(r.metrics.tq_recall, base.metrics.tq_recall),
                nb_conf: option_delta(r.metrics.nb_conf_mean, base.metrics.nb_conf_mean),
                trk_conf: option_delta(r.metrics.trk_conf_mean, base.metrics.trk_conf_mean),
                proposal_positive_rate: option_delta(
                    r.proposal_positive_rate,
                    base.proposal_positive_rate,
                ),
            }
        })
        .collect();

    let report = ComparisonReport {
        config_hash,
        seed,
        num_scenes,
        strategies: reports,
        deltas,
    };
    report.validate()?;
    Ok(report)
}
