//! Brute-force oracles and verification suites.
//!
//! Everything here recomputes results by enumeration or finite differences,
//! independent of the production code paths it checks. Unit tests, the
//! acceptance suite, and the CLI `selftest` subcommand all run through these.

use rand::Rng;

use crate::assignment::{
    baseline_assign, hungarian, match_cost, second_chance_assign, AssignmentResult, CostParams,
    Prediction,
};
use crate::error::{Error, Result};
use crate::lifecycle::{QueryKind, QueryState};
use crate::oracle::{sgd_step, ConfidenceModel, LabeledExample, FEATURE_DIM};
use crate::rng;
use crate::world::{BevBox, Frame, GtObject};
use crate::{QueryId, TrackId};

// ---------------------------------------------------------------------------
// Query constructors (shared by tests and instance generators)
// ---------------------------------------------------------------------------

/// Near-one-hot class distribution peaked at `class_id`.
pub fn peaked_scores(class_id: usize, num_classes: usize) -> Vec<f64> {
    if num_classes == 1 {
        return vec![1.0];
    }
    let off = 0.02 / (num_classes - 1) as f64;
    let mut scores = vec![off; num_classes];
    scores[class_id] = 0.98;
    scores
}

pub fn proposal_at(id: QueryId, x: f64, y: f64, class_id: usize, confidence: f64) -> QueryState {
    QueryState {
        query_id: id,
        kind: QueryKind::Proposal,
        prediction: Prediction {
            bev_box: BevBox::new(x, y, 4.0, 2.0, 0.0),
            class_scores: peaked_scores(class_id, 7),
            confidence,
        },
        prior_gt: None,
        age: 0,
        origin_frame: 0,
    }
}

pub fn track_at(
    id: QueryId,
    prior_gt: Option<TrackId>,
    x: f64,
    y: f64,
    class_id: usize,
    confidence: f64,
) -> QueryState {
    QueryState {
        query_id: id,
        kind: QueryKind::Track,
        prediction: Prediction {
            bev_box: BevBox::new(x, y, 4.0, 2.0, 0.0),
            class_scores: peaked_scores(class_id, 7),
            confidence,
        },
        prior_gt,
        age: 1,
        origin_frame: 0,
    }
}

pub fn gt_object(track_id: TrackId, class_id: usize, x: f64, y: f64) -> GtObject {
    GtObject {
        track_id,
        class_id,
        bev_box: BevBox::new(x, y, 4.0, 2.0, 0.0),
        vx: 0.0,
        vy: 0.0,
        visible: true,
    }
}

// ---------------------------------------------------------------------------
// Matching oracles
// ---------------------------------------------------------------------------

/// Enumerate every matching of size `min(rows, cols)` in lexicographic
/// pair-list order; return the minimal total and, among optima, the
/// lexicographically smallest pair list. Totals are summed in ascending row
/// order, the same canonical order the production matcher uses.
pub fn brute_force_lex_best(cost: &[Vec<f64>]) -> (f64, Vec<(usize, usize)>) {
    let rows = cost.len();
    let cols = if rows == 0 { 0 } else { cost[0].len() };
    let k = rows.min(cols);
    if k == 0 {
        return (0.0, Vec::new());
    }

    struct Search<'a> {
        cost: &'a [Vec<f64>],
        rows: usize,
        cols: usize,
        k: usize,
        best: Option<(f64, Vec<(usize, usize)>)>,
    }

    impl Search<'_> {
        fn recurse(
            &mut self,
            row: usize,
            used_cols: &mut Vec<bool>,
            pairs: &mut Vec<(usize, usize)>,
            total: f64,
        ) {
            if pairs.len() == self.k {
                let better = match &self.best {
                    None => true,
                    Some((best_total, _)) => total < *best_total,
                };
                if better {
                    self.best = Some((total, pairs.clone()));
                }
                return;
            }
            if row >= self.rows {
                return;
            }
            // Assigning columns in ascending order, then skipping the row,
            // visits completions in lexicographic pair-list order, so the
            // first optimum found is the lexicographically smallest.
            for c in 0..self.cols {
                if used_cols[c] {
                    continue;
                }
                used_cols[c] = true;
                pairs.push((row, c));
                self.recurse(row + 1, used_cols, pairs, total + self.cost[row][c]);
                pairs.pop();
                used_cols[c] = false;
            }
            let rows_left_after_skip = self.rows - row - 1;
            if rows_left_after_skip >= self.k - pairs.len() {
                self.recurse(row + 1, used_cols, pairs, total);
            }
        }
    }

    let mut search = Search {
        cost,
        rows,
        cols,
        k,
        best: None,
    };
    search.recurse(0, &mut vec![false; cols], &mut Vec::new(), 0.0);
    search.best.expect("at least one matching exists")
}

/// Minimum matching total by exhaustive enumeration.
pub fn brute_force_min_cost(cost: &[Vec<f64>]) -> f64 {
    brute_force_lex_best(cost).0
}

// ---------------------------------------------------------------------------
// Random assignment instances
// ---------------------------------------------------------------------------

/// One randomized two-stage assignment problem: a handful of objects, track
/// queries (some bound to live objects, some to dead ones, some unbound), and
/// proposal queries scattered nearby.
pub struct AssignmentInstance {
    pub track_queries: Vec<QueryState>,
    pub proposal_queries: Vec<QueryState>,
    pub frame: Frame,
    pub cost: CostParams,
}

pub fn random_assignment_instance(seed: u64) -> AssignmentInstance {
    let mut stream = rng::stream(seed, 0xA551);
    let num_gt = stream.gen_range(0..=6);
    let num_tq = stream.gen_range(0..=4);
    let num_pq = stream.gen_range(0..=4usize.min(8 - num_tq));

    let num_classes = 3;
    let objects: Vec<GtObject> = (0..num_gt)
        .map(|i| {
            let x = stream.gen_range(-8.0..8.0);
            let y = stream.gen_range(-8.0..8.0);
            let class = stream.gen_range(0..num_classes);
            GtObject {
                track_id: i as TrackId,
                class_id: class,
                bev_box: BevBox::new(x, y, 4.0, 2.0, 0.0),
                vx: 0.0,
                vy: 0.0,
                visible: true,
            }
        })
        .collect();
    let frame = Frame { index: 1, objects };

    // Candidate prior bindings: live ids plus a couple of dead ones, each
    // claimable at most once.
    let mut prior_pool: Vec<TrackId> = (0..(num_gt + 2) as TrackId).collect();
    for i in (1..prior_pool.len()).rev() {
        let j = stream.gen_range(0..=i);
        prior_pool.swap(i, j);
    }

    let spot = |stream: &mut rng::Stream| -> (f64, f64) {
        if !frame.objects.is_empty() && stream.gen_bool(0.7) {
            let anchor = &frame.objects[stream.gen_range(0..frame.objects.len())];
            (
                anchor.bev_box.cx + stream.gen_range(-3.0..3.0),
                anchor.bev_box.cy + stream.gen_range(-3.0..3.0),
            )
        } else {
            (stream.gen_range(-10.0..10.0), stream.gen_range(-10.0..10.0))
        }
    };

    let mut track_queries = Vec::with_capacity(num_tq);
    for i in 0..num_tq {
        let (x, y) = spot(&mut stream);
        let prior = if stream.gen_bool(0.6) && !prior_pool.is_empty() {
            Some(prior_pool.remove(0))
        } else {
            None
        };
        let class = stream.gen_range(0..num_classes);
        let mut q = track_at(100 + i as QueryId, prior, x, y, class, stream.gen());
        q.prediction.class_scores = peaked_scores(class, num_classes);
        track_queries.push(q);
    }
    let mut proposal_queries = Vec::with_capacity(num_pq);
    for i in 0..num_pq {
        let (x, y) = spot(&mut stream);
        let class = stream.gen_range(0..num_classes);
        let mut q = proposal_at(200 + i as QueryId, x, y, class, stream.gen());
        q.prediction.class_scores = peaked_scores(class, num_classes);
        proposal_queries.push(q);
    }

    AssignmentInstance {
        track_queries,
        proposal_queries,
        frame,
        cost: CostParams::default(),
    }
}

/// Recompute the optimal stage-2 value by exhaustive enumeration (every
/// object takes one free candidate or stays unmatched at `big_m`) and check
/// the production result against it.
pub fn verify_second_stage_optimal(
    inst: &AssignmentInstance,
    result: &AssignmentResult,
    second_chance: bool,
) {
    let continued: Vec<TrackId> = inst
        .track_queries
        .iter()
        .filter_map(|q| q.prior_gt.filter(|g| inst.frame.contains_track(*g)))
        .collect();
    let eligible: Vec<&GtObject> = inst
        .frame
        .objects
        .iter()
        .filter(|g| !continued.contains(&g.track_id))
        .collect();
    let mut candidates: Vec<&QueryState> = inst.proposal_queries.iter().collect();
    if second_chance {
        candidates.extend(
            inst.track_queries
                .iter()
                .filter(|q| match q.prior_gt {
                    Some(g) => !inst.frame.contains_track(g),
                    None => true,
                }),
        );
    }

    let matrix: Vec<Vec<f64>> = eligible
        .iter()
        .map(|g| {
            candidates
                .iter()
                .map(|q| match_cost(&q.prediction, g, &inst.cost))
                .collect()
        })
        .collect();

    let best = enumerate_padded_min(&matrix, inst.cost.big_m);
    let got = result.total_second_stage_cost;
    assert!(
        (got - best).abs() < 1e-6,
        "stage-2 total {got} differs from brute-force optimum {best}"
    );
}

/// Minimal value of "each row takes one unused column or pays `big_m`".
fn enumerate_padded_min(matrix: &[Vec<f64>], big_m: f64) -> f64 {
    fn rec(matrix: &[Vec<f64>], row: usize, used: &mut [bool], big_m: f64) -> f64 {
        if row == matrix.len() {
            return 0.0;
        }
        let mut best = big_m + rec(matrix, row + 1, used, big_m);
        for c in 0..used.len() {
            if used[c] {
                continue;
            }
            used[c] = true;
            let v = matrix[row][c] + rec(matrix, row + 1, used, big_m);
            used[c] = false;
            if v < best {
                best = v;
            }
        }
        best
    }
    let cols = matrix.first().map_or(0, |r| r.len());
    rec(matrix, 0, &mut vec![false; cols], big_m)
}

// ---------------------------------------------------------------------------
// Gradient oracle
// ---------------------------------------------------------------------------

/// Central finite differences of `f` at `x`.
pub fn finite_diff_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let hi = f(&probe);
        probe[i] = x[i] - h;
        let lo = f(&probe);
        probe[i] = x[i];
        grad.push((hi - lo) / (2.0 * h));
    }
    grad
}

/// Norm-wise relative disagreement between two gradients.
pub fn gradient_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|b| b * b).sum::<f64>().sqrt())
        .max(1e-12);
    diff / scale
}

// ---------------------------------------------------------------------------
// Chi-squared helper
// ---------------------------------------------------------------------------

/// Chi-squared statistic of observed counts against the uniform expectation.
pub fn chi_squared_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

// ---------------------------------------------------------------------------
// Selftest suites
// ---------------------------------------------------------------------------

/// Hungarian vs. exhaustive enumeration on seeded matrices up to 7x7.
pub fn selftest_hungarian(cases: u64) -> Result<String> {
    for seed in 0..cases {
        let mut stream = rng::stream(seed, 0x5E1F_0001);
        let rows = stream.gen_range(1..=7);
        let cols = stream.gen_range(1..=7);
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..cols).map(|_| stream.gen::<f64>()).collect())
            .collect();
        let pairs = hungarian(&cost).map_err(|e| Error::Data(e.to_string()))?;
        let total: f64 = {
            let mut sorted = pairs.clone();
            sorted.sort_unstable();
            sorted.iter().map(|&(r, c)| cost[r][c]).sum()
        };
        let best = brute_force_min_cost(&cost);
        if total != best {
            return Err(Error::Data(format!(
                "hungarian selftest seed {seed}: cost {total} != brute force {best}"
            )));
        }
    }
    Ok(format!(
        "hungarian optimality: {cases} seeded matrices up to 7x7 match brute force exactly"
    ))
}

/// SCA stage-2 dominance plus brute-force optimality of both strategies.
pub fn selftest_sca_dominance(cases: u64) -> Result<String> {
    let mut strict = 0u64;
    for seed in 0..cases {
        let inst = random_assignment_instance(seed);
        let base = baseline_assign(
            &inst.track_queries,
            &inst.proposal_queries,
            &inst.frame,
            &inst.cost,
        )?;
        let sca = second_chance_assign(
            &inst.track_queries,
            &inst.proposal_queries,
            &inst.frame,
            &inst.cost,
        )?;
        if sca.total_second_stage_cost > base.total_second_stage_cost {
            return Err(Error::Data(format!(
                "SCA dominance violated at seed {seed}: {} > {}",
                sca.total_second_stage_cost, base.total_second_stage_cost
            )));
        }
        if sca.total_second_stage_cost < base.total_second_stage_cost {
            strict += 1;
        }
        verify_second_stage_optimal(&inst, &base, false);
        verify_second_stage_optimal(&inst, &sca, true);
    }
    if strict == 0 {
        return Err(Error::Data(
            "SCA dominance: no instance produced a strict improvement".into(),
        ));
    }
    Ok(format!(
        "SCA dominance: {cases} instances, stage-2 cost never worse, {strict} strict improvements, \
         all totals match brute force"
    ))
}

/// Analytic BCE gradients vs. central finite differences on seeded batches.
pub fn selftest_gradient(batches: u64) -> Result<String> {
    let mut worst: f64 = 0.0;
    for seed in 0..batches {
        let mut stream = rng::stream(seed, 0x5E1F_0003);
        let model = ConfidenceModel {
            weights: std::array::from_fn(|_| stream.gen_range(-2.0..2.0)),
            bias: stream.gen_range(-2.0..2.0),
        };
        let batch: Vec<LabeledExample> = (0..stream.gen_range(1..=16))
            .map(|_| LabeledExample {
                features: std::array::from_fn(|_| stream.gen_range(0.0..1.0)),
                label: stream.gen_bool(0.5),
            })
            .collect();
        let positive_weight = if stream.gen_bool(0.3) { 2.5 } else { 1.0 };

        // Analytic gradient recovered from one SGD step of known length.
        let lr = 1.0;
        let (stepped, _) = sgd_step(&model, &batch, lr, positive_weight)?;
        let mut analytic = Vec::with_capacity(FEATURE_DIM + 1);
        for i in 0..FEATURE_DIM {
            analytic.push((model.weights[i] - stepped.weights[i]) / lr);
        }
        analytic.push((model.bias - stepped.bias) / lr);

        let loss_at = |params: &[f64]| -> f64 {
            let probe = ConfidenceModel {
                weights: std::array::from_fn(|i| params[i]),
                bias: params[FEATURE_DIM],
            };
            probe.mean_loss(&batch, positive_weight)
        };
        let mut x = model.weights.to_vec();
        x.push(model.bias);
        let numeric = finite_diff_gradient(loss_at, &x, 1e-5);
        let err = gradient_relative_error(&analytic, &numeric);
        worst = worst.max(err);
        if err >= 1e-5 {
            return Err(Error::Data(format!(
                "gradient selftest seed {seed}: relative error {err:.3e} >= 1e-5"
            )));
        }
    }
    Ok(format!(
        "gradient check: {batches} seeded batches, max relative error {worst:.3e} < 1e-5"
    ))
}
