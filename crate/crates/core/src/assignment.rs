//! Cost construction, optimal bipartite matching, and ground-truth
//! assignment strategies.
//!
//! Assignment runs in two stages. Stage 1 (continuation) gives every track
//! query its previously owned object back by identity, never by cost. Stage 2
//! matches the remaining ground truth against candidate queries with the
//! Hungarian algorithm over [`match_cost`]:
//!
//! - baseline: candidates are proposal queries only, so tracked objects whose
//!   query vanished can only be picked up by proposals;
//! - second chance: track queries left unassigned by stage 1 are appended to
//!   the candidate pool and may claim unmatched objects, rebinding to the new
//!   track id from then on.
//!
//! A detection-style variant with no continuation stage exists for the
//! TBA-vs-TBD comparison; every query competes for every object each frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifecycle::{QueryKind, QueryState};
use crate::world::{BevBox, Frame, GtObject};
use crate::{QueryId, TrackId};

/// What a decoded query claims about the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub bev_box: BevBox,
    /// Probability vector over classes, summing to 1 within 1e-9.
    pub class_scores: Vec<f64>,
    pub confidence: f64,
}

impl Prediction {
    pub fn validate(&self) -> Result<()> {
        if self.class_scores.is_empty() {
            return Err(Error::Data("prediction has no class scores".into()));
        }
        if self
            .class_scores
            .iter()
            .any(|p| !(0.0..=1.0).contains(p) || !p.is_finite())
        {
            return Err(Error::Data("class score outside [0, 1]".into()));
        }
        let sum: f64 = self.class_scores.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("class scores sum to {sum}, not 1")));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Data("confidence outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Highest-probability class; ties resolve to the lowest class id.
    pub fn top_class(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.class_scores.iter().enumerate() {
            if *p > self.class_scores[best] {
                best = i;
            }
        }
        best
    }
}

/// Matching-cost weights. The linear form and these defaults are ours; both
/// are config-overridable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub w_class: f64,
    /// Cost per meter of center distance.
    pub w_center: f64,
    /// Pairs farther apart than this never match.
    pub gate_radius: f64,
    /// Sentinel cost for gated (and unmatched) pairs.
    pub big_m: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            w_class: 1.0,
            w_center: 0.25,
            gate_radius: 4.0,
            big_m: 1e6,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if self.w_class < 0.0 || !self.w_class.is_finite() {
            return Err(Error::parameter("w_class", "must be finite and >= 0"));
        }
        if self.w_center < 0.0 || !self.w_center.is_finite() {
            return Err(Error::parameter("w_center", "must be finite and >= 0"));
        }
        if !(self.gate_radius > 0.0) {
            return Err(Error::parameter("gate_radius", "must be > 0"));
        }
        if !(self.big_m > 0.0) || !self.big_m.is_finite() {
            return Err(Error::parameter("big_m", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Which rule produced an assignment pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Stage 1: a track query kept the object it already owned.
    Continuation,
    /// Stage 2: a proposal query won an unclaimed object.
    FirstStage,
    /// Stage 2: an unassigned track query won an unclaimed object.
    SecondChance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignedPair {
    pub query_id: QueryId,
    pub gt_track_id: TrackId,
    pub stage: Stage,
}

/// Per-frame query-to-ground-truth mapping with stage provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub pairs: Vec<AssignedPair>,
    pub unassigned_queries: Vec<QueryId>,
    pub unassigned_gt: Vec<TrackId>,
    /// Optimal stage-2 value: matched costs plus `big_m` for every stage-2
    /// object left unmatched. Counting unmatched objects at the sentinel keeps
    /// the value comparable across candidate sets of different sizes.
    pub total_second_stage_cost: f64,
}

impl AssignmentResult {
    pub fn gt_for(&self, query_id: QueryId) -> Option<TrackId> {
        self.pairs
            .iter()
            .find(|p| p.query_id == query_id)
            .map(|p| p.gt_track_id)
    }
}

/// Matching cost between one prediction and one ground-truth object.
///
/// Beyond `gate_radius` the pair is unmatchable and costs `big_m`; inside the
/// gate the cost is `w_class * (1 - p(class)) + w_center * distance`.
pub fn match_cost(pred: &Prediction, gt: &GtObject, cp: &CostParams) -> f64 {
    let d = pred.bev_box.center_distance(&gt.bev_box);
    if d > cp.gate_radius {
        return cp.big_m;
    }
    let class_prob = pred.class_scores.get(gt.class_id).copied().unwrap_or(0.0);
    cp.w_class * (1.0 - class_prob) + cp.w_center * d
}

// ---------------------------------------------------------------------------
// Hungarian matching
// ---------------------------------------------------------------------------

/// Minimum-cost bipartite matching of size `min(rows, cols)`.
///
/// Deterministic: among all optimal matchings the lexicographically smallest
/// `(row, col)` pair list is returned. Exact ties are resolved by re-solving
/// with candidate pairs forced in and accepting a candidate only when its
/// completion reproduces the optimal total exactly, so the tie-break never
/// trades away optimality.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let rows = cost.len();
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cols = cost[0].len();
    for (i, row) in cost.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Data(format!(
                "ragged cost matrix: row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
        for (j, x) in row.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Data(format!("non-finite cost at ({i}, {j})")));
            }
        }
    }
    if cols == 0 {
        return Ok(Vec::new());
    }
    Ok(lex_smallest_optimal(cost))
}

/// Total cost of a matching, summed in ascending row order. All optimality
/// comparisons in this module use this one summation order.
fn canonical_total(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    debug_assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0));
    pairs.iter().map(|&(r, c)| cost[r][c]).sum()
}

/// Jonker-Volgenant style shortest augmenting path solver for `n <= m`.
/// Returns `row -> col`, matching every row. Column scans run in ascending
/// order with strict improvement, so equal alternatives resolve low.
fn jv_rows_le_cols(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut matched_row = vec![0usize; m + 1]; // col j (1-based) -> row, 0 = free
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if matched_row[j] > 0 {
            row_to_col[matched_row[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Solve either orientation; pairs come back sorted by row.
fn jv_pairs(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost[0].len();
    let mut pairs: Vec<(usize, usize)> = if rows <= cols {
        jv_rows_le_cols(cost)
            .iter()
            .enumerate()
            .map(|(r, &c)| (r, c))
            .collect()
    } else {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        jv_rows_le_cols(&transposed)
            .iter()
            .enumerate()
            .map(|(c, &r)| (r, c))
            .collect()
    };
    pairs.sort_unstable();
    pairs
}

/// Optimal completion after forcing prefix pairs: only rows after `row` and
/// columns not in `used_cols` (nor `col`) may participate, and exactly `need`
/// pairs must come back. `None` when no completion of that size exists.
fn complete(
    cost: &[Vec<f64>],
    row: usize,
    col: usize,
    used_cols: &[bool],
    need: usize,
) -> Option<Vec<(usize, usize)>> {
    if need == 0 {
        return Some(Vec::new());
    }
    let rows = cost.len();
    let row_map: Vec<usize> = (row + 1..rows).collect();
    let col_map: Vec<usize> = (0..cost[0].len())
        .filter(|&j| !used_cols[j] && j != col)
        .collect();
    // A valid completion uses every remaining row (rows <= cols) or every
    // remaining column (rows > cols); any other size cannot extend the prefix
    // to a matching of the required total size.
    if row_map.len().min(col_map.len()) != need {
        return None;
    }
    let sub: Vec<Vec<f64>> = row_map
        .iter()
        .map(|&r| col_map.iter().map(|&c| cost[r][c]).collect())
        .collect();
    let pairs = jv_pairs(&sub);
    Some(
        pairs
            .into_iter()
            .map(|(r, c)| (row_map[r], col_map[c]))
            .collect(),
    )
}

fn lex_smallest_optimal(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost[0].len();
    let k = rows.min(cols);
    let mut incumbent = jv_pairs(cost);
    let target = canonical_total(cost, &incumbent);
    let mut committed: Vec<(usize, usize)> = Vec::with_capacity(k);
    let mut used_cols = vec![false; cols];

    while committed.len() < k {
        let pos = committed.len();
        let (inc_r, inc_c) = incumbent[pos];
        let start_row = committed.last().map_or(0, |&(r, _)| r + 1);
        let mut adopted = false;
        'candidates: for r in start_row..=inc_r {
            let col_end = if r == inc_r { inc_c } else { cols };
            for c in 0..col_end {
                if used_cols[c] {
                    continue;
                }
                let Some(sub) = complete(cost, r, c, &used_cols, k - pos - 1) else {
                    continue;
                };
                let mut full = committed.clone();
                full.push((r, c));
                full.extend(sub);
                if canonical_total(cost, &full) == target {
                    committed.push((r, c));
                    used_cols[c] = true;
                    incumbent = full;
                    adopted = true;
                    break 'candidates;
                }
            }
        }
        if !adopted {
            committed.push((inc_r, inc_c));
            used_cols[inc_c] = true;
        }
    }
    committed
}

// ---------------------------------------------------------------------------
// Assignment strategies
// ---------------------------------------------------------------------------

fn validate_queries(track_queries: &[QueryState], proposal_queries: &[QueryState]) -> Result<()> {
    let mut claimed: Vec<TrackId> = Vec::new();
    for tq in track_queries {
        if tq.kind != QueryKind::Track {
            return Err(Error::Data(format!(
                "query {} passed as track query but has kind {:?}",
                tq.query_id, tq.kind
            )));
        }
        if let Some(g) = tq.prior_gt {
            if claimed.contains(&g) {
                return Err(Error::Data(format!(
                    "two track queries claim gt track {g}"
                )));
            }
            claimed.push(g);
        }
    }
    for pq in proposal_queries {
        if pq.kind != QueryKind::Proposal || pq.prior_gt.is_some() {
            return Err(Error::Data(format!(
                "query {} passed as proposal but carries track state",
                pq.query_id
            )));
        }
    }
    Ok(())
}

/// Stage 2 matching over an explicit candidate list. Gated pairs (cost at or
/// above `big_m`) are dropped after matching; each remaining object then
/// counts `big_m` toward the stage total.
fn second_stage(
    candidates: &[&QueryState],
    gt: &[&GtObject],
    cp: &CostParams,
) -> Result<(Vec<(QueryId, TrackId, f64)>, f64)> {
    if candidates.is_empty() || gt.is_empty() {
        return Ok((Vec::new(), cp.big_m * gt.len() as f64));
    }
    let matrix: Vec<Vec<f64>> = candidates
        .iter()
        .map(|q| gt.iter().map(|g| match_cost(&q.prediction, g, cp)).collect())
        .collect();
    let matched = hungarian(&matrix)?;
    let mut kept = Vec::new();
    for (r, c) in matched {
        let cost = matrix[r][c];
        if cost < cp.big_m {
            kept.push((candidates[r].query_id, gt[c].track_id, cost));
        }
    }
    let total =
        kept.iter().map(|(_, _, c)| *c).sum::<f64>() + cp.big_m * (gt.len() - kept.len()) as f64;
    Ok((kept, total))
}

fn two_stage_assign(
    track_queries: &[QueryState],
    proposal_queries: &[QueryState],
    gt_frame: &Frame,
    cp: &CostParams,
    second_chance: bool,
) -> Result<AssignmentResult> {
    cp.validate()?;
    validate_queries(track_queries, proposal_queries)?;

    let mut pairs: Vec<AssignedPair> = Vec::new();
    let mut continued_gt: Vec<TrackId> = Vec::new();
    let mut leftover_tracks: Vec<&QueryState> = Vec::new();

    // Stage 1: continuation by identity, regardless of cost.
    for tq in track_queries {
        match tq.prior_gt {
            Some(g) if gt_frame.contains_track(g) => {
                pairs.push(AssignedPair {
                    query_id: tq.query_id,
                    gt_track_id: g,
                    stage: Stage::Continuation,
                });
                continued_gt.push(g);
            }
            _ => leftover_tracks.push(tq),
        }
    }

    // Stage 2: remaining objects vs. candidate queries.
    let remaining_gt: Vec<&GtObject> = gt_frame
        .objects
        .iter()
        .filter(|g| !continued_gt.contains(&g.track_id))
        .collect();
    let mut candidates: Vec<&QueryState> = proposal_queries.iter().collect();
    if second_chance {
        candidates.extend(leftover_tracks.iter().copied());
    }
    let (matched, total) = second_stage(&candidates, &remaining_gt, cp)?;
    for (query_id, gt_track_id, _) in &matched {
        let is_track = track_queries.iter().any(|q| q.query_id == *query_id);
        pairs.push(AssignedPair {
            query_id: *query_id,
            gt_track_id: *gt_track_id,
            stage: if is_track {
                Stage::SecondChance
            } else {
                Stage::FirstStage
            },
        });
    }

    let assigned: Vec<QueryId> = pairs.iter().map(|p| p.query_id).collect();
    let unassigned_queries: Vec<QueryId> = track_queries
        .iter()
        .chain(proposal_queries.iter())
        .map(|q| q.query_id)
        .filter(|id| !assigned.contains(id))
        .collect();
    let matched_gt: Vec<TrackId> = pairs.iter().map(|p| p.gt_track_id).collect();
    let unassigned_gt: Vec<TrackId> = gt_frame
        .objects
        .iter()
        .map(|g| g.track_id)
        .filter(|g| !matched_gt.contains(g))
        .collect();

    Ok(AssignmentResult {
        pairs,
        unassigned_queries,
        unassigned_gt,
        total_second_stage_cost: total,
    })
}

/// Baseline assignment: continuation, then remaining objects matched against
/// proposal queries only. Track queries whose object vanished go unsupervised.
pub fn baseline_assign(
    track_queries: &[QueryState],
    proposal_queries: &[QueryState],
    gt_frame: &Frame,
    cp: &CostParams,
) -> Result<AssignmentResult> {
    two_stage_assign(track_queries, proposal_queries, gt_frame, cp, false)
}

/// Second Chance Assignment: like baseline, but track queries left unassigned
/// by continuation join the stage-2 candidate pool and may claim unmatched
/// objects, taking on the new track id from then on.
pub fn second_chance_assign(
    track_queries: &[QueryState],
    proposal_queries: &[QueryState],
    gt_frame: &Frame,
    cp: &CostParams,
) -> Result<AssignmentResult> {
    two_stage_assign(track_queries, proposal_queries, gt_frame, cp, true)
}

/// Detection-style assignment: no continuation stage at all; every query
/// competes for every object by cost each frame. This is the detector-only
/// supervision used for the TBA-vs-TBD track-query recall comparison.
pub fn detection_assign(
    all_queries: &[QueryState],
    gt_frame: &Frame,
    cp: &CostParams,
) -> Result<AssignmentResult> {
    cp.validate()?;
    let candidates: Vec<&QueryState> = all_queries.iter().collect();
    let gt: Vec<&GtObject> = gt_frame.objects.iter().collect();
    let (matched, total) = second_stage(&candidates, &gt, cp)?;
    let pairs: Vec<AssignedPair> = matched
        .iter()
        .map(|(query_id, gt_track_id, _)| AssignedPair {
            query_id: *query_id,
            gt_track_id: *gt_track_id,
            stage: Stage::FirstStage,
        })
        .collect();
    let assigned: Vec<QueryId> = pairs.iter().map(|p| p.query_id).collect();
    let unassigned_queries = all_queries
        .iter()
        .map(|q| q.query_id)
        .filter(|id| !assigned.contains(id))
        .collect();
    let matched_gt: Vec<TrackId> = pairs.iter().map(|p| p.gt_track_id).collect();
    let unassigned_gt = gt_frame
        .objects
        .iter()
        .map(|g| g.track_id)
        .filter(|g| !matched_gt.contains(g))
        .collect();
    Ok(AssignmentResult {
        pairs,
        unassigned_queries,
        unassigned_gt,
        total_second_stage_cost: total,
    })
}

/// Positive/negative supervision label per query, in query order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLabel {
    pub query_id: QueryId,
    /// `Some(track)` for assigned (positive) queries, `None` for negatives.
    pub gt_track_id: Option<TrackId>,
}

/// Turn an assignment into per-query training labels. Every query referenced
/// by the result must appear in `all_queries`.
pub fn supervision_labels(
    result: &AssignmentResult,
    all_queries: &[QueryState],
) -> Result<Vec<QueryLabel>> {
    let known: Vec<QueryId> = all_queries.iter().map(|q| q.query_id).collect();
    for pair in &result.pairs {
        if !known.contains(&pair.query_id) {
            return Err(Error::Data(format!(
                "assignment references unknown query {}",
                pair.query_id
            )));
        }
    }
    for id in &result.unassigned_queries {
        if !known.contains(id) {
            return Err(Error::Data(format!(
                "assignment references unknown query {id}"
            )));
        }
    }
    Ok(all_queries
        .iter()
        .map(|q| QueryLabel {
            query_id: q.query_id,
            gt_track_id: result.gt_for(q.query_id),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check;
    use crate::check::{proposal_at, track_at};
    use crate::world::BevBox;
    use rand::Rng;

    fn gt_at(track_id: TrackId, class_id: usize, x: f64, y: f64) -> GtObject {
        GtObject {
            track_id,
            class_id,
            bev_box: BevBox::new(x, y, 4.0, 2.0, 0.0),
            vx: 0.0,
            vy: 0.0,
            visible: true,
        }
    }

    fn frame_of(objects: Vec<GtObject>) -> Frame {
        Frame { index: 1, objects }
    }

    #[test]
    fn hungarian_one_by_one() {
        assert_eq!(hungarian(&[vec![0.0]]).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn hungarian_two_permutations() {
        let pairs = hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn hungarian_rejects_non_finite() {
        assert!(hungarian(&[vec![f64::NAN]]).is_err());
        assert!(hungarian(&[vec![1.0, f64::INFINITY]]).is_err());
    }

    #[test]
    fn hungarian_matches_brute_force_on_random_squares() {
        // Brute-force permutation oracle over 100 seeded 6x6 matrices.
        for seed in 0..100u64 {
            let mut stream = crate::rng::stream(seed, 0xBF);
            let cost: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..6).map(|_| stream.gen::<f64>()).collect())
                .collect();
            let pairs = hungarian(&cost).unwrap();
            let total = canonical_total(&cost, &pairs);
            let best = check::brute_force_min_cost(&cost);
            assert_eq!(total, best, "seed {seed}");
        }
    }

    #[test]
    fn hungarian_matches_brute_force_on_random_rectangles() {
        for seed in 0..60u64 {
            let mut stream = crate::rng::stream(seed, 0xBF2);
            let rows = stream.gen_range(1..=6);
            let cols = stream.gen_range(1..=6);
            let cost: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| stream.gen::<f64>() * 10.0 - 3.0).collect())
                .collect();
            let pairs = hungarian(&cost).unwrap();
            assert_eq!(pairs.len(), rows.min(cols));
            let total = canonical_total(&cost, &pairs);
            let best = check::brute_force_min_cost(&cost);
            assert_eq!(total, best, "seed {seed} ({rows}x{cols})");
        }
    }

    #[test]
    fn hungarian_breaks_exact_ties_lexicographically() {
        // All-equal costs: every matching is optimal; the diagonal pair list
        // is the lexicographic minimum.
        let cost = vec![vec![1.0; 3]; 3];
        assert_eq!(hungarian(&cost).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);

        // Two optimal matchings with exactly representable equal totals:
        // {(0,0),(1,1)} and {(0,1),(1,0)} both cost 3.
        let cost = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        assert_eq!(hungarian(&cost).unwrap(), vec![(0, 0), (1, 1)]);

        // Rectangular with ties: rows 0..2, one column. Row 0 and row 1 tie;
        // the smaller row index must win.
        let cost = vec![vec![5.0], vec![5.0], vec![7.0]];
        assert_eq!(hungarian(&cost).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn hungarian_lex_choice_matches_brute_force_enumeration() {
        for seed in 0..40u64 {
            let mut stream = crate::rng::stream(seed, 0x1E);
            let rows = stream.gen_range(1..=5);
            let cols = stream.gen_range(1..=5);
            // Coarse grid of values so exact ties are common.
            let cost: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| stream.gen_range(0..4) as f64).collect())
                .collect();
            let pairs = hungarian(&cost).unwrap();
            let (best_total, best_pairs) = check::brute_force_lex_best(&cost);
            assert_eq!(canonical_total(&cost, &pairs), best_total, "seed {seed}");
            assert_eq!(pairs, best_pairs, "seed {seed}: tie-break mismatch");
        }
    }

    #[test]
    fn match_cost_examples() {
        let cp = CostParams::default();
        let gt = gt_at(0, 2, 0.0, 0.0);

        // Prediction exactly on the object with certain class: zero cost.
        let exact = Prediction {
            bev_box: BevBox::new(0.0, 0.0, 4.0, 2.0, 0.0),
            class_scores: vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            confidence: 1.0,
        };
        assert_eq!(match_cost(&exact, &gt, &cp), 0.0);

        // Ten meters out with a 4 m gate: sentinel.
        let far = Prediction {
            bev_box: BevBox::new(10.0, 0.0, 4.0, 2.0, 0.0),
            class_scores: exact.class_scores.clone(),
            confidence: 1.0,
        };
        assert_eq!(match_cost(&far, &gt, &cp), cp.big_m);

        // d = 2.0, p(class) = 0.8: 1.0 * 0.2 + 0.25 * 2.0 = 0.7.
        let mut scores = vec![0.2 / 6.0; 7];
        scores[2] = 0.8;
        let sum: f64 = scores.iter().sum();
        for s in scores.iter_mut() {
            *s /= sum;
        }
        let near = Prediction {
            bev_box: BevBox::new(2.0, 0.0, 4.0, 2.0, 0.0),
            class_scores: scores,
            confidence: 0.9,
        };
        let got = match_cost(&near, &gt, &cp);
        assert!((got - 0.7).abs() < 1e-9, "cost {got}");
    }

    #[test]
    fn baseline_continuation_suppresses_proposals() {
        let cp = CostParams::default();
        let frame = frame_of(vec![gt_at(7, 0, 0.0, 0.0)]);
        let tq = track_at(100, Some(7), 0.1, 0.0, 0, 0.9);
        let pq1 = proposal_at(200, 0.0, 0.0, 0, 0.8);
        let pq2 = proposal_at(201, 0.2, 0.0, 0, 0.7);
        let result = baseline_assign(&[tq], &[pq1, pq2], &frame, &cp).unwrap();
        assert_eq!(result.pairs.len(), 1);
        assert_eq!(result.pairs[0].query_id, 100);
        assert_eq!(result.pairs[0].gt_track_id, 7);
        assert_eq!(result.pairs[0].stage, Stage::Continuation);
        assert_eq!(result.unassigned_queries, vec![200, 201]);
        assert!(result.unassigned_gt.is_empty());
    }

    #[test]
    fn baseline_newborn_goes_to_cheapest_proposal() {
        let cp = CostParams::default();
        // Object 1 is tracked; object 2 is newborn. PQ 200 is nearer to it
        // than PQ 201 (two-candidate enumeration: 0.3 < 0.9 in cost).
        let frame = frame_of(vec![gt_at(1, 0, 0.0, 0.0), gt_at(2, 0, 10.0, 0.0)]);
        let tq = track_at(100, Some(1), 0.0, 0.0, 0, 0.9);
        let pq_near = proposal_at(200, 10.0, 1.2, 0, 0.8); // cost 0.25 * 1.2 = 0.3
        let pq_far = proposal_at(201, 10.0, 3.6, 0, 0.7); // cost 0.25 * 3.6 = 0.9
        let result = baseline_assign(&[tq], &[pq_near, pq_far], &frame, &cp).unwrap();
        let newborn = result.pairs.iter().find(|p| p.gt_track_id == 2).unwrap();
        assert_eq!(newborn.query_id, 200);
        assert_eq!(newborn.stage, Stage::FirstStage);
    }

    #[test]
    fn baseline_track_termination_yields_negative() {
        let cp = CostParams::default();
        let frame = frame_of(vec![]);
        let tq = track_at(100, Some(1), 0.0, 0.0, 0, 0.9);
        let result = baseline_assign(&[tq], &[], &frame, &cp).unwrap();
        assert!(result.pairs.is_empty());
        assert_eq!(result.unassigned_queries, vec![100]);
    }

    #[test]
    fn duplicate_prior_claims_are_data_errors() {
        let cp = CostParams::default();
        let frame = frame_of(vec![gt_at(1, 0, 0.0, 0.0)]);
        let a = track_at(100, Some(1), 0.0, 0.0, 0, 0.9);
        let b = track_at(101, Some(1), 1.0, 0.0, 0, 0.8);
        assert!(matches!(
            baseline_assign(&[a, b], &[], &frame, &cp),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn second_chance_reduces_to_baseline_without_leftover_tracks() {
        let cp = CostParams::default();
        let frame = frame_of(vec![gt_at(1, 0, 0.0, 0.0), gt_at(2, 1, 8.0, 0.0)]);
        let tq = track_at(100, Some(1), 0.1, 0.0, 0, 0.9);
        let pq = proposal_at(200, 8.0, 0.5, 1, 0.8);
        let base = baseline_assign(&[tq.clone()], &[pq.clone()], &frame, &cp).unwrap();
        let sca = second_chance_assign(&[tq], &[pq], &frame, &cp).unwrap();
        assert_eq!(base, sca);
    }

    #[test]
    fn second_chance_lets_unassigned_track_win() {
        // The Fig-1c-style situation: the tracked object vanished, leaving its
        // query free; a newborn sits nearer to that free track query than to
        // the best proposal, so the track query claims it.
        let cp = CostParams::default();
        let frame = frame_of(vec![gt_at(5, 0, 0.0, 0.0)]);
        let tq_free = track_at(100, Some(9), 0.4, 0.0, 0, 0.9); // object 9 is gone; cost 0.1
        let pq = proposal_at(200, 2.0, 0.0, 0, 0.8); // cost 0.5
        let base = baseline_assign(&[tq_free.clone()], &[pq.clone()], &frame, &cp).unwrap();
        assert_eq!(base.pairs[0].query_id, 200, "baseline must use the proposal");

        let sca = second_chance_assign(&[tq_free], &[pq], &frame, &cp).unwrap();
        assert_eq!(sca.pairs.len(), 1);
        assert_eq!(sca.pairs[0].query_id, 100);
        assert_eq!(sca.pairs[0].stage, Stage::SecondChance);
        assert!(sca.total_second_stage_cost < base.total_second_stage_cost);
    }

    #[test]
    fn sca_dominance_on_random_instances() {
        // Superset-of-candidates optimality, cross-checked against the
        // brute-force matcher on every instance.
        let mut strict = 0;
        for seed in 0..200u64 {
            let inst = check::random_assignment_instance(seed);
            let base = baseline_assign(&inst.track_queries, &inst.proposal_queries, &inst.frame, &inst.cost)
                .unwrap();
            let sca = second_chance_assign(&inst.track_queries, &inst.proposal_queries, &inst.frame, &inst.cost)
                .unwrap();
            assert!(
                sca.total_second_stage_cost <= base.total_second_stage_cost,
                "seed {seed}: SCA {} > baseline {}",
                sca.total_second_stage_cost,
                base.total_second_stage_cost
            );
            if sca.total_second_stage_cost < base.total_second_stage_cost {
                strict += 1;
            }
            check::verify_second_stage_optimal(&inst, &base, false);
            check::verify_second_stage_optimal(&inst, &sca, true);
        }
        assert!(strict > 0, "no instance exercised a strict improvement");
    }

    #[test]
    fn gating_never_emits_sentinel_pairs() {
        for seed in 0..50u64 {
            let inst = check::random_assignment_instance(seed);
            for result in [
                baseline_assign(&inst.track_queries, &inst.proposal_queries, &inst.frame, &inst.cost).unwrap(),
                second_chance_assign(&inst.track_queries, &inst.proposal_queries, &inst.frame, &inst.cost).unwrap(),
            ] {
                for pair in &result.pairs {
                    if pair.stage == Stage::Continuation {
                        continue;
                    }
                    let query = inst
                        .track_queries
                        .iter()
                        .chain(inst.proposal_queries.iter())
                        .find(|q| q.query_id == pair.query_id)
                        .unwrap();
                    let gt = inst.frame.object(pair.gt_track_id).unwrap();
                    assert!(match_cost(&query.prediction, gt, &inst.cost) < inst.cost.big_m);
                }
            }
        }
    }

    #[test]
    fn assignment_results_are_injective() {
        for seed in 0..50u64 {
            let inst = check::random_assignment_instance(seed);
            for result in [
                baseline_assign(&inst.track_queries, &inst.proposal_queries, &inst.frame, &inst.cost).unwrap(),
                second_chance_assign(&inst.track_queries, &inst.proposal_queries, &inst.frame, &inst.cost).unwrap(),
            ] {
                let mut qids: Vec<QueryId> =
                    result.pairs.iter().map(|p| p.query_id).collect();
                qids.extend(&result.unassigned_queries);
                let total_queries = inst.track_queries.len() + inst.proposal_queries.len();
                assert_eq!(qids.len(), total_queries);
                qids.sort_unstable();
                qids.dedup();
                assert_eq!(qids.len(), total_queries, "query appears twice");

                let mut gts: Vec<TrackId> =
                    result.pairs.iter().map(|p| p.gt_track_id).collect();
                gts.extend(&result.unassigned_gt);
                gts.sort_unstable();
                gts.dedup();
                assert_eq!(gts.len(), inst.frame.objects.len(), "gt appears twice");
            }
        }
    }

    #[test]
    fn gt_coverage_with_enough_ingate_candidates() {
        // Every proposal sits within the gate of every object, and there are
        // more candidates than objects: nothing may stay unassigned.
        let cp = CostParams::default();
        let frame = frame_of(vec![gt_at(1, 0, 0.0, 0.0), gt_at(2, 0, 2.0, 0.0)]);
        let pqs: Vec<QueryState> = (0..4)
            .map(|i| proposal_at(200 + i, 1.0, i as f64 * 0.5, 0, 0.5))
            .collect();
        for result in [
            baseline_assign(&[], &pqs, &frame, &cp).unwrap(),
            second_chance_assign(&[], &pqs, &frame, &cp).unwrap(),
        ] {
            assert!(result.unassigned_gt.is_empty());
        }
    }

    #[test]
    fn detection_assign_ignores_priors() {
        let cp = CostParams::default();
        let frame = frame_of(vec![gt_at(1, 0, 0.0, 0.0)]);
        // The track query owns object 1 but sits farther than the proposal;
        // detection-style matching hands the object to the proposal.
        let tq = track_at(100, Some(1), 3.0, 0.0, 0, 0.9);
        let pq = proposal_at(200, 0.5, 0.0, 0, 0.8);
        let all = vec![tq, pq];
        let result = detection_assign(&all, &frame, &cp).unwrap();
        assert_eq!(result.pairs.len(), 1);
        assert_eq!(result.pairs[0].query_id, 200);
        assert_eq!(result.pairs[0].stage, Stage::FirstStage);
    }

    #[test]
    fn supervision_labels_cover_all_queries() {
        let cp = CostParams::default();
        let frame = frame_of(vec![gt_at(1, 0, 0.0, 0.0)]);
        let tq = track_at(100, Some(1), 0.0, 0.0, 0, 0.9);
        let pq = proposal_at(200, 15.0, 0.0, 0, 0.2);
        let all = vec![tq.clone(), pq.clone()];
        let result = baseline_assign(&[tq], &[pq], &frame, &cp).unwrap();
        let labels = supervision_labels(&result, &all).unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(labels[0].query_id, 100);
        assert_eq!(labels[0].gt_track_id, Some(1));
        assert_eq!(labels[1].gt_track_id, None);
    }

    #[test]
    fn supervision_labels_on_empty_frame_are_all_negative() {
        let cp = CostParams::default();
        let frame = frame_of(vec![]);
        let queries = vec![
            proposal_at(200, 0.0, 0.0, 0, 0.5),
            proposal_at(201, 1.0, 0.0, 0, 0.5),
        ];
        let result = baseline_assign(&[], &queries, &frame, &cp).unwrap();
        let labels = supervision_labels(&result, &queries).unwrap();
        assert!(labels.iter().all(|l| l.gt_track_id.is_none()));
    }

    #[test]
    fn supervision_labels_reject_foreign_queries() {
        let cp = CostParams::default();
        let frame = frame_of(vec![gt_at(1, 0, 0.0, 0.0)]);
        let pq = proposal_at(200, 0.0, 0.0, 0, 0.5);
        let result = baseline_assign(&[], &[pq], &frame, &cp).unwrap();
        let other = vec![proposal_at(999, 0.0, 0.0, 0, 0.5)];
        assert!(matches!(
            supervision_labels(&result, &other),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn dropout_scenario_gives_proposal_the_positive() {
        // Fig-1b style: with the owning track query dropped from the set, the
        // in-gate proposal is labeled positive instead of negative.
        let cp = CostParams::default();
        let frame = frame_of(vec![gt_at(1, 0, 0.0, 0.0)]);
        let tq = track_at(100, Some(1), 0.0, 0.0, 0, 0.9);
        let pq = proposal_at(200, 0.3, 0.0, 0, 0.8);

        // The proposal is negative while the track query owns the object.
        let with_tq = baseline_assign(&[tq], &[pq.clone()], &frame, &cp).unwrap();
        assert!(with_tq.gt_for(200).is_none());

        let dropped = baseline_assign(&[], &[pq.clone()], &frame, &cp).unwrap();
        let labels = supervision_labels(&dropped, &[pq]).unwrap();
        assert_eq!(labels[0].gt_track_id, Some(1));
    }
}
