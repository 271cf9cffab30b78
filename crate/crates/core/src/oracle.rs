//! Parameterized stand-in for the transformer decoder.
//!
//! Instead of attention, queries read ground truth through an evidence model:
//! a track query bound to a live object re-predicts its box with Gaussian
//! noise; unbound queries capture the nearest visible object within a radius;
//! everything else predicts background. Suppression of proposals whose object
//! already has an active track query is an explicit knob, so the pathology
//! under study can be switched on and measured. Confidence comes either from
//! a hand-set heuristic or from a small logistic model trained on supervision
//! labels.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::lifecycle::{QueryGroup, QueryKind, QueryState};
use crate::rng::Stream;
use crate::world::{Frame, GtObject};

/// Evidence-model knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleParams {
    /// Std of the Gaussian center noise on track-query predictions (meters).
    /// Proposals read their captured object exactly.
    pub pos_noise_std: f64,
    /// An unbound query sees the nearest visible object within this radius.
    pub proposal_capture_radius: f64,
    /// Multiplies a capturing proposal's heuristic confidence by `1 - s` when
    /// an active track query is bound to the same object. 0 disables it.
    pub suppression_strength: f64,
    /// Evidence multiplier for occluded bound objects.
    pub occluded_evidence_scale: f64,
    /// Probability that a query's class scores peak on a wrong class.
    pub class_confusion: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            pos_noise_std: 0.3,
            proposal_capture_radius: 3.0,
            suppression_strength: 0.8,
            occluded_evidence_scale: 0.3,
            class_confusion: 0.05,
        }
    }
}

impl OracleParams {
    pub fn validate(&self) -> Result<()> {
        if self.pos_noise_std < 0.0 {
            return Err(Error::parameter("pos_noise_std", "must be >= 0"));
        }
        if !(self.proposal_capture_radius > 0.0) {
            return Err(Error::parameter("proposal_capture_radius", "must be > 0"));
        }
        for (field, v) in [
            ("suppression_strength", self.suppression_strength),
            ("occluded_evidence_scale", self.occluded_evidence_scale),
            ("class_confusion", self.class_confusion),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::parameter(field, format!("{v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

pub const FEATURE_DIM: usize = 5;
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "is_track_query",
    "age_normalized",
    "dist_to_nearest_gt_normalized",
    "same_gt_track_query_present",
    "evidence_strength",
];

/// Age saturates in the feature encoding after this many propagations.
const AGE_NORM_FRAMES: f64 = 10.0;

/// Logistic confidence head over the five query features.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceModel {
    pub weights: [f64; FEATURE_DIM],
    pub bias: f64,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        ConfidenceModel {
            weights: [0.0; FEATURE_DIM],
            bias: 0.0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelWire {
    weights: Vec<f64>,
    bias: f64,
    feature_names: Vec<String>,
}

impl Serialize for ConfidenceModel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ModelWire {
            weights: self.weights.to_vec(),
            bias: self.bias,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ConfidenceModel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = ModelWire::deserialize(deserializer)?;
        if wire.weights.len() != FEATURE_DIM {
            return Err(D::Error::custom(format!(
                "expected {FEATURE_DIM} weights, got {}",
                wire.weights.len()
            )));
        }
        if !wire.feature_names.is_empty()
            && wire.feature_names != FEATURE_NAMES.map(|s| s.to_string())
        {
            return Err(D::Error::custom("unexpected feature names"));
        }
        let mut weights = [0.0; FEATURE_DIM];
        weights.copy_from_slice(&wire.weights);
        Ok(ConfidenceModel {
            weights,
            bias: wire.bias,
        })
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ConfidenceModel {
    pub fn raw_score(&self, features: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias
    }

    /// Weighted mean binary cross-entropy over a batch (positives weighted by
    /// `positive_weight`). Used both by training and by the gradient oracle.
    pub fn mean_loss(&self, batch: &[LabeledExample], positive_weight: f64) -> f64 {
        let mut loss_sum = 0.0;
        let mut weight_sum = 0.0;
        for example in batch {
            let p = sigmoid(self.raw_score(&example.features)).clamp(1e-12, 1.0 - 1e-12);
            let (weight, term) = if example.label {
                (positive_weight, -p.ln())
            } else {
                (1.0, -(1.0 - p).ln())
            };
            loss_sum += weight * term;
            weight_sum += weight;
        }
        loss_sum / weight_sum
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ConfidenceModel> {
        Ok(serde_json::from_str(text)?)
    }
}

/// One training example for the confidence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: [f64; FEATURE_DIM],
    pub label: bool,
}

/// `sigma(w . x + b)`; strict interior of (0, 1) for finite inputs.
pub fn predict_confidence(model: &ConfidenceModel, features: &[f64]) -> Result<f64> {
    if features.len() != FEATURE_DIM {
        return Err(Error::Data(format!(
            "expected {FEATURE_DIM} features, got {}",
            features.len()
        )));
    }
    Ok(sigmoid(model.raw_score(features)))
}

/// The evidence a query has about the scene: the object it is bound to or
/// captures, together with the evidence strength.
fn evidence_target<'a>(
    query: &QueryState,
    frame: &'a Frame,
    params: &OracleParams,
) -> Option<(&'a GtObject, f64)> {
    if query.kind == QueryKind::Track {
        if let Some(g) = query.prior_gt {
            if let Some(gt) = frame.object(g) {
                let strength = if gt.visible {
                    1.0
                } else {
                    params.occluded_evidence_scale
                };
                return Some((gt, strength));
            }
        }
    }
    // Unbound (or orphaned) query: capture the nearest visible object.
    let center = &query.prediction.bev_box;
    frame
        .objects
        .iter()
        .filter(|g| g.visible)
        .map(|g| (g, center.center_distance(&g.bev_box)))
        .filter(|(_, d)| *d <= params.proposal_capture_radius)
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(g, _)| (g, 1.0))
}

/// The five model features of a decoded query, each in `[0, 1]`.
///
/// Distance normalizes against the matching gate radius; the same-object
/// feature fires when another track query in the group is bound to the object
/// this query's evidence points at.
pub fn features(
    query: &QueryState,
    group: &QueryGroup,
    frame: &Frame,
    params: &OracleParams,
    gate_radius: f64,
) -> [f64; FEATURE_DIM] {
    let is_track = if query.kind == QueryKind::Track { 1.0 } else { 0.0 };
    let age_norm = (query.age as f64 / AGE_NORM_FRAMES).min(1.0);
    let dist_norm = frame
        .objects
        .iter()
        .map(|g| query.prediction.bev_box.center_distance(&g.bev_box))
        .fold(f64::INFINITY, f64::min)
        .min(gate_radius)
        / gate_radius;
    let dist_norm = if frame.objects.is_empty() { 1.0 } else { dist_norm };
    let target = evidence_target(query, frame, params);
    let same_gt = match target {
        Some((gt, _)) => {
            let other_bound = group.queries.iter().any(|q| {
                q.query_id != query.query_id
                    && q.kind == QueryKind::Track
                    && q.prior_gt == Some(gt.track_id)
            });
            if other_bound {
                1.0
            } else {
                0.0
            }
        }
        None => 0.0,
    };
    let evidence = target.map_or(0.0, |(_, strength)| strength);
    [is_track, age_norm, dist_norm, same_gt, evidence]
}

/// Fill every query's prediction from ground truth through the evidence
/// model. Confidence comes from `model` when given, otherwise from the
/// heuristic `evidence * (1 - suppression)` where suppression applies only to
/// proposals whose object already has an active track query in the group.
pub fn decode(
    group: &QueryGroup,
    frame: &Frame,
    params: &OracleParams,
    model: Option<&ConfidenceModel>,
    gate_radius: f64,
    stream: &mut Stream,
) -> Result<QueryGroup> {
    params.validate()?;
    let noise = if params.pos_noise_std > 0.0 {
        Some(Normal::new(0.0, params.pos_noise_std).expect("validated std"))
    } else {
        None
    };

    let mut decoded_queries = Vec::with_capacity(group.queries.len());
    for query in &group.queries {
        let mut decoded = query.clone();
        let num_classes = query.prediction.class_scores.len().max(1);

        match evidence_target(query, frame, params) {
            Some((gt, _)) => {
                let mut bev_box = gt.bev_box;
                // Box noise models the staleness of propagated state, so it
                // applies to track queries only; a fresh proposal reads the
                // captured object exactly.
                if query.kind == QueryKind::Track {
                    if let Some(noise) = &noise {
                        bev_box.cx += noise.sample(stream);
                        bev_box.cy += noise.sample(stream);
                    }
                }
                decoded.prediction.bev_box = bev_box;
                let mut peak_class = gt.class_id.min(num_classes - 1);
                if num_classes > 1 && stream.gen::<f64>() < params.class_confusion {
                    let wrong = stream.gen_range(0..num_classes - 1);
                    peak_class = if wrong >= peak_class { wrong + 1 } else { wrong };
                }
                decoded.prediction.class_scores =
                    crate::check::peaked_scores(peak_class, num_classes);
            }
            None => {
                // Background: keep the anchor box, flat class belief.
                decoded.prediction.class_scores = vec![1.0 / num_classes as f64; num_classes];
            }
        }

        let feats = features(&decoded, group, frame, params, gate_radius);
        decoded.prediction.confidence = match model {
            Some(model) => predict_confidence(model, &feats)?,
            None => {
                let suppression = if decoded.kind == QueryKind::Proposal {
                    params.suppression_strength * feats[3]
                } else {
                    0.0
                };
                feats[4] * (1.0 - suppression)
            }
        };
        decoded_queries.push(decoded);
    }

    Ok(QueryGroup {
        group_id: group.group_id,
        is_main: group.is_main,
        queries: decoded_queries,
    })
}

/// One SGD step of weighted binary cross-entropy. Returns the updated model
/// and the pre-update mean loss.
pub fn sgd_step(
    model: &ConfidenceModel,
    batch: &[LabeledExample],
    lr: f64,
    positive_weight: f64,
) -> Result<(ConfidenceModel, f64)> {
    if !(lr > 0.0) {
        return Err(Error::parameter("lr", "must be > 0"));
    }
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    if !(positive_weight > 0.0) {
        return Err(Error::parameter("positive_weight", "must be > 0"));
    }

    let loss = model.mean_loss(batch, positive_weight);
    let mut grad_w = [0.0; FEATURE_DIM];
    let mut grad_b = 0.0;
    let mut weight_sum = 0.0;
    for example in batch {
        let p = sigmoid(model.raw_score(&example.features));
        let y = if example.label { 1.0 } else { 0.0 };
        let weight = if example.label { positive_weight } else { 1.0 };
        let residual = weight * (p - y);
        for (g, x) in grad_w.iter_mut().zip(example.features.iter()) {
            *g += residual * x;
        }
        grad_b += residual;
        weight_sum += weight;
    }

    let mut updated = model.clone();
    for (w, g) in updated.weights.iter_mut().zip(grad_w) {
        *w -= lr * g / weight_sum;
    }
    updated.bias -= lr * grad_b / weight_sum;
    Ok((updated, loss))
}

/// Shuffled mini-batch SGD from zero initialization. Returns the fitted model
/// and the per-epoch mean loss curve.
pub fn train_confidence_model(
    examples: &[LabeledExample],
    epochs: usize,
    lr: f64,
    batch_size: usize,
    positive_weight: f64,
    seed: u64,
) -> Result<(ConfidenceModel, Vec<f64>)> {
    if examples.is_empty() {
        return Err(Error::Data("no labeled examples to train on".into()));
    }
    if batch_size == 0 {
        return Err(Error::parameter("batch_size", "must be >= 1"));
    }
    let mut stream = crate::rng::stream(seed, crate::rng::TAG_MODEL_TRAINING);
    let mut model = ConfidenceModel::default();
    let mut curve = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..epochs {
        for i in (1..order.len()).rev() {
            let j = stream.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<LabeledExample> =
                chunk.iter().map(|&i| examples[i].clone()).collect();
            let (updated, loss) = sgd_step(&model, &batch, lr, positive_weight)?;
            model = updated;
            epoch_loss += loss * batch.len() as f64;
        }
        curve.push(epoch_loss / examples.len() as f64);
    }
    Ok((model, curve))
}
