//! Query-set evolution across an episode.
//!
//! Each frame, fresh proposal queries spawn on a grid, pass the first-frame
//! gate together with carried track queries, get decoded, assigned, and a
//! subset is propagated to the next frame as track queries. During training,
//! auxiliary dropout groups propagate a random subset instead of the top-N,
//! exposing supervision to missing-query configurations. Groups are
//! independent branches: nothing a group does can influence another.

use serde::{Deserialize, Serialize};

use crate::assignment::{AssignmentResult, Prediction};
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::{QueryId, TrackId};

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryKind {
    /// Fresh per-frame query eligible to initialize a new track.
    Proposal,
    /// Query propagated from a previous frame, carrying an object identity.
    Track,
}

/// One proposal or track query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryState {
    pub query_id: QueryId,
    pub kind: QueryKind,
    pub prediction: Prediction,
    /// Assignment carried from previous frames; `None` for proposals and for
    /// propagated queries that never won an object.
    pub prior_gt: Option<TrackId>,
    /// Frames since first propagation; 0 for proposals.
    pub age: u32,
    pub origin_frame: usize,
}

/// A set of queries evolving together. Group 0 is the main group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryGroup {
    pub group_id: u32,
    pub is_main: bool,
    pub queries: Vec<QueryState>,
}

/// Query budget and dropout schedule. Desk-scale defaults; the reference
/// full-scale values are 300 forwarded proposals and 600 propagated track
/// queries with one auxiliary group, dropout disabled after 75% of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifecycleConfig {
    /// Top proposals forwarded after the detection stage.
    pub n_pq: usize,
    /// Track queries propagated to the next frame.
    pub n_tq: usize,
    /// Auxiliary dropout groups during training.
    pub num_aux_groups: usize,
    /// Fraction of training after which dropout stops.
    pub dropout_disable_after_frac: f64,
    /// Proposal grid pitch in meters.
    pub proposal_grid_spacing: f64,
}

impl Default for LifecycleConfig {
    fn default() -> Self {
        LifecycleConfig {
            n_pq: 8,
            n_tq: 8,
            num_aux_groups: 1,
            dropout_disable_after_frac: 0.75,
            proposal_grid_spacing: 5.0,
        }
    }
}

impl LifecycleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pq < 1 {
            return Err(Error::parameter("n_pq", "must be >= 1"));
        }
        if self.n_tq < 1 {
            return Err(Error::parameter("n_tq", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.dropout_disable_after_frac) {
            return Err(Error::parameter(
                "dropout_disable_after_frac",
                "must lie in [0, 1]",
            ));
        }
        if !(self.proposal_grid_spacing > 0.0) {
            return Err(Error::parameter("proposal_grid_spacing", "must be > 0"));
        }
        Ok(())
    }
}

/// Spawn proposal queries on a regular grid centered on the arena.
///
/// The grid has `floor(2e / spacing) + 1` points per axis, symmetric around
/// the origin (a spacing wider than the arena degenerates to one centered
/// proposal). Ordering is row-major by `(y index, x index)`; ids count up
/// from `id_base`. Predictions start as zero-confidence placeholders at the
/// grid point; the decoder fills them.
pub fn spawn_proposals(
    arena_half_extent: f64,
    cfg: &LifecycleConfig,
    origin_frame: usize,
    id_base: QueryId,
    num_classes: usize,
) -> Result<Vec<QueryState>> {
    if !(cfg.proposal_grid_spacing > 0.0) {
        return Err(Error::parameter("proposal_grid_spacing", "must be > 0"));
    }
    if !(arena_half_extent > 0.0) {
        return Err(Error::parameter("arena_half_extent", "must be > 0"));
    }
    let spacing = cfg.proposal_grid_spacing;
    let per_axis = ((2.0 * arena_half_extent) / spacing).floor() as usize + 1;
    let offset = (per_axis - 1) as f64 * spacing / 2.0;
    let uniform = vec![1.0 / num_classes as f64; num_classes];
    let mut proposals = Vec::with_capacity(per_axis * per_axis);
    for row in 0..per_axis {
        for col in 0..per_axis {
            let x = -offset + col as f64 * spacing;
            let y = -offset + row as f64 * spacing;
            proposals.push(QueryState {
                query_id: id_base + (row * per_axis + col) as QueryId,
                kind: QueryKind::Proposal,
                prediction: Prediction {
                    bev_box: crate::world::BevBox::new(x, y, 4.0, 2.0, 0.0),
                    class_scores: uniform.clone(),
                    confidence: 0.0,
                },
                prior_gt: None,
                age: 0,
                origin_frame,
            });
        }
    }
    Ok(proposals)
}

/// The `n` highest-confidence queries, sorted by descending confidence with
/// ties broken by ascending query id.
pub fn select_top_n(queries: &[QueryState], n: usize) -> Vec<QueryState> {
    let mut sorted: Vec<&QueryState> = queries.iter().collect();
    sorted.sort_by(|a, b| {
        b.prediction
            .confidence
            .partial_cmp(&a.prediction.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.query_id.cmp(&b.query_id))
    });
    sorted.into_iter().take(n).cloned().collect()
}

/// Build the query set forwarded to the decoder.
///
/// With no track queries (the first frame of a clip, or a propagation that
/// came back empty) every proposal is forwarded unfiltered; otherwise the
/// top-`n_pq` proposals are concatenated with the track queries.
pub fn first_frame_gate(
    track_queries: &[QueryState],
    proposal_queries: &[QueryState],
    cfg: &LifecycleConfig,
) -> Vec<QueryState> {
    if track_queries.is_empty() {
        return proposal_queries.to_vec();
    }
    let mut forwarded = select_top_n(proposal_queries, cfg.n_pq);
    forwarded.extend(track_queries.iter().cloned());
    forwarded
}

/// Uniform sample of `n` queries without replacement (partial Fisher-Yates),
/// returned in the same canonical order the main group uses.
pub fn sample_queries(queries: &[QueryState], n: usize, stream: &mut Stream) -> Vec<QueryState> {
    let n = n.min(queries.len());
    let mut indices: Vec<usize> = (0..queries.len()).collect();
    for i in 0..n {
        let j = stream.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    let picked: Vec<QueryState> = indices[..n].iter().map(|&i| queries[i].clone()).collect();
    select_top_n(&picked, n)
}

/// Build the propagation groups for the next frame from one post-decode set.
///
/// Group 0 (main) always takes the top-`n_tq` by confidence. Auxiliary groups
/// take uniform random subsets of the same size, drawn from the full
/// post-decode set. Past the disable fraction of training only the main group
/// is produced.
pub fn dropout_groups(
    post_decode_queries: &[QueryState],
    cfg: &LifecycleConfig,
    stream: &mut Stream,
    progress: f64,
) -> Vec<QueryGroup> {
    let mut groups = vec![QueryGroup {
        group_id: 0,
        is_main: true,
        queries: select_top_n(post_decode_queries, cfg.n_tq),
    }];
    if progress > cfg.dropout_disable_after_frac {
        return groups;
    }
    for aux in 1..=cfg.num_aux_groups {
        groups.push(QueryGroup {
            group_id: aux as u32,
            is_main: false,
            queries: sample_queries(post_decode_queries, cfg.n_tq, stream),
        });
    }
    groups
}

/// Turn a propagation set into next-frame track queries: age advances, kind
/// becomes `Track`, and `prior_gt` picks up this frame's assignment (second
/// chance wins rebind the query permanently). Queries outside the group are
/// gone; group identity is preserved.
pub fn propagate(group: &QueryGroup, assignment: &AssignmentResult) -> QueryGroup {
    let queries = group
        .queries
        .iter()
        .map(|q| {
            let prior_gt = assignment.gt_for(q.query_id).or(q.prior_gt);
            QueryState {
                query_id: q.query_id,
                kind: QueryKind::Track,
                prediction: q.prediction.clone(),
                prior_gt,
                age: q.age + 1,
                origin_frame: q.origin_frame,
            }
        })
        .collect();
    QueryGroup {
        group_id: group.group_id,
        is_main: group.is_main,
        queries,
    }
}

/// Inference uses only the main group.
pub fn inference_mode(groups: &[QueryGroup]) -> Result<&QueryGroup> {
    groups
        .iter()
        .find(|g| g.is_main)
        .ok_or_else(|| Error::State("no main query group present".into()))
}

// ---------------------------------------------------------------------------
// Episode log (external interface)
// ---------------------------------------------------------------------------

/// Supervision label plus the features the confidence model trains on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query_id: QueryId,
    /// `Some(track)` when the query was assigned (positive label).
    pub gt_track_id: Option<TrackId>,
    pub features: Vec<f64>,
}

/// One record per `(frame, group)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub frame: usize,
    pub group_id: u32,
    pub queries: Vec<QueryState>,
    pub assignment: AssignmentResult,
    pub labels: Vec<LabeledQuery>,
}

/// A complete episode: which scene window it covered plus per-(frame, group)
/// records. Serializes as JSON lines: one header line with the episode
/// metadata, then one line per record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scene_id: u64,
    /// `[start, end)` window of scene frames this episode covered.
    pub frame_range: (usize, usize),
    pub records: Vec<EpisodeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeHeader {
    scene_id: u64,
    frame_range: (usize, usize),
}

impl EpisodeLog {
    pub fn start(&self) -> usize {
        self.frame_range.0
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&EpisodeHeader {
            scene_id: self.scene_id,
            frame_range: self.frame_range,
        })?;
        out.push('\n');
        for record in &self.records {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<EpisodeLog> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Data("empty episode log".into()))?;
        let header: EpisodeHeader = serde_json::from_str(header_line)?;
        let mut records = Vec::new();
        for line in lines {
            records.push(serde_json::from_str(line)?);
        }
        Ok(EpisodeLog {
            scene_id: header.scene_id,
            frame_range: header.frame_range,
            records,
        })
    }

    /// Records belonging to the main group, in frame order.
    pub fn main_records(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.records.iter().filter(|r| r.group_id == 0)
    }
}
