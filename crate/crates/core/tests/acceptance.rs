//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test -p tba-core --test acceptance -- --nocapture` to see
//! the per-criterion lines. Criteria 8-10 share one frozen 50-scene
//! comparison (seed 20260810) computed once; its margins are recorded in the
//! printed output.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use tba_core::check::{
    self, chi_squared_uniform, gt_object, proposal_at, random_assignment_instance,
};
use tba_core::{
    accumulate_clearmot, amota_amotp, baseline_assign, dropout_groups, generate_scenario, motar,
    report, run_comparison, run_episode_with, second_chance_assign, select_top_n, ComparisonReport,
    EpisodeMode, EpisodeRunner, ExperimentConfig, LifecycleConfig, MotAccumulator, QueryKind,
    QueryState, ReportFormat, Scene, SceneEval, ScenarioParams, Strategy, TrackedOutput, TrackId,
};

const SUITE_SEED: u64 = 20260810;
const SUITE_SCENES: usize = 50;

/// Chi-squared critical value at p = 0.001 with 19 degrees of freedom.
const CHI2_CRITICAL_19DF_P001: f64 = 43.8202;

struct Suite {
    report: ComparisonReport,
    config: ExperimentConfig,
    elapsed: Duration,
}

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let config = ExperimentConfig {
            num_scenes: SUITE_SCENES,
            seed: SUITE_SEED,
            ..ExperimentConfig::default()
        };
        assert!(
            config.oracle.suppression_strength >= 0.5,
            "criterion 8 requires suppression_strength >= 0.5"
        );
        let start = Instant::now();
        let report = run_comparison(
            &config,
            &[Strategy::Baseline, Strategy::ScaDropout, Strategy::Detection],
            SUITE_SCENES,
            SUITE_SEED,
        )
        .expect("suite comparison runs");
        Suite {
            report,
            config,
            elapsed: start.elapsed(),
        }
    })
}

fn strategy_report<'a>(suite: &'a Suite, strategy: Strategy) -> &'a tba_core::StrategyReport {
    suite
        .report
        .strategies
        .iter()
        .find(|s| s.strategy == strategy)
        .expect("strategy present in suite")
}

#[test]
fn criterion_01_hungarian_optimality() {
    let start = Instant::now();
    let line = check::selftest_hungarian(500).expect("all 500 matrices optimal");
    let elapsed = start.elapsed();
    assert!(
        elapsed < Duration::from_secs(10),
        "hungarian suite took {elapsed:?}, budget is 10 s"
    );
    println!("acceptance 01 hungarian-optimality: PASS — {line}, {elapsed:?}");
}

#[test]
fn criterion_02_sca_dominance() {
    let line = check::selftest_sca_dominance(200).expect("dominance holds on all instances");
    println!("acceptance 02 sca-dominance: PASS — {line}");
}

#[test]
fn criterion_03_sca_reduction() {
    // Instances where stage 1 consumes every track query: rebind each track
    // query to a distinct live object (dropping queries when objects run
    // out), then the two strategies must agree pair for pair.
    let mut checked = 0;
    for seed in 0..200u64 {
        let mut inst = random_assignment_instance(seed);
        let live: Vec<TrackId> = inst.frame.objects.iter().map(|o| o.track_id).collect();
        if live.is_empty() {
            continue;
        }
        inst.track_queries.truncate(live.len());
        for (tq, gt) in inst.track_queries.iter_mut().zip(live.iter()) {
            tq.prior_gt = Some(*gt);
        }
        let base = baseline_assign(
            &inst.track_queries,
            &inst.proposal_queries,
            &inst.frame,
            &inst.cost,
        )
        .unwrap();
        let sca = second_chance_assign(
            &inst.track_queries,
            &inst.proposal_queries,
            &inst.frame,
            &inst.cost,
        )
        .unwrap();
        assert_eq!(base, sca, "seed {seed}: outputs must agree pair for pair");
        checked += 1;
    }
    assert!(checked >= 150, "only {checked} instances had live objects");
    println!(
        "acceptance 03 sca-reduction: PASS — {checked} all-continuation instances agree pair for pair"
    );
}

fn suite_scene(config: &ExperimentConfig, index: u64) -> Scene {
    let seed = tba_core::rng::substream(config.seed, tba_core::rng::TAG_SCENE ^ index);
    let mut scene = generate_scenario(&config.scenario, seed).unwrap();
    scene.scene_id = index;
    scene
}

#[test]
fn criterion_04_dropout_contract() {
    let config = ExperimentConfig {
        seed: SUITE_SEED,
        strategy: Strategy::ScaDropout,
        ..ExperimentConfig::default()
    };
    let scene = suite_scene(&config, 0);

    // (a) The propagated main group is the top-N of the previous post-decode
    // set on every frame.
    let log = run_episode_with(
        &config,
        &scene,
        (0, scene.frames.len()),
        EpisodeMode::Training,
        None,
        0.0,
        SUITE_SEED,
    )
    .unwrap();
    let main: Vec<_> = log.main_records().collect();
    assert_eq!(main.len(), scene.frames.len());
    for window in main.windows(2) {
        let expected: Vec<u64> = select_top_n(&window[0].queries, config.lifecycle.n_tq)
            .iter()
            .map(|q| q.query_id)
            .collect();
        let got: Vec<u64> = window[1]
            .queries
            .iter()
            .filter(|q| q.kind == QueryKind::Track)
            .map(|q| q.query_id)
            .collect();
        assert_eq!(got, expected, "frame {}: main group is not top-N", window[1].frame);
    }

    // (b) Auxiliary subsets are uniform over C(6,3) combinations.
    let lc = LifecycleConfig {
        n_tq: 3,
        num_aux_groups: 1,
        ..LifecycleConfig::default()
    };
    let queries: Vec<QueryState> = (0..6)
        .map(|i| {
            let mut q = proposal_at(i, 0.0, 0.0, 0, 0.0);
            q.prediction.confidence = i as f64 / 10.0;
            q
        })
        .collect();
    let mut counts = std::collections::BTreeMap::<Vec<u64>, u64>::new();
    for seed in 0..20_000u64 {
        let mut stream = tba_core::rng::stream(seed, 0xACC4);
        let groups = dropout_groups(&queries, &lc, &mut stream, 0.0);
        let mut ids: Vec<u64> = groups[1].queries.iter().map(|q| q.query_id).collect();
        ids.sort_unstable();
        *counts.entry(ids).or_default() += 1;
    }
    assert_eq!(counts.len(), 20, "all 20 subsets must occur");
    let tallies: Vec<u64> = counts.values().copied().collect();
    let chi2 = chi_squared_uniform(&tallies);
    assert!(
        chi2 < CHI2_CRITICAL_19DF_P001,
        "chi-squared {chi2:.2} fails the p > 0.001 uniformity test"
    );

    // (c) Past the disable fraction exactly one group exists per frame.
    let late = run_episode_with(
        &config,
        &scene,
        (0, scene.frames.len()),
        EpisodeMode::Training,
        None,
        0.9,
        SUITE_SEED,
    )
    .unwrap();
    for frame in 0..scene.frames.len() {
        let groups = late.records.iter().filter(|r| r.frame == frame).count();
        assert_eq!(groups, 1, "frame {frame} should carry only the main group");
    }

    println!(
        "acceptance 04 dropout-contract: PASS — main is top-N on every frame, \
         chi-squared {chi2:.2} < {CHI2_CRITICAL_19DF_P001}, single group past the disable fraction"
    );
}

#[test]
fn criterion_05_group_isolation() {
    let config = ExperimentConfig {
        seed: SUITE_SEED,
        strategy: Strategy::ScaDropout,
        ..ExperimentConfig::default()
    };
    let scene = suite_scene(&config, 1);
    assert_eq!(scene.frames.len(), 40, "isolation check runs a 40-frame episode");
    let range = (0, scene.frames.len());

    let mut clean =
        EpisodeRunner::new(&config, &scene, range, EpisodeMode::Training, None, 0.0, 99).unwrap();
    let mut corrupted =
        EpisodeRunner::new(&config, &scene, range, EpisodeMode::Training, None, 0.0, 99).unwrap();

    loop {
        let more_clean = clean.step().unwrap();
        let more_corrupted = corrupted.step().unwrap();
        assert_eq!(more_clean, more_corrupted);
        if !more_clean {
            break;
        }
        // Vandalize every auxiliary branch: permute, displace, rebind.
        for branch in corrupted.branches_mut() {
            if branch.is_main {
                continue;
            }
            branch.queries.reverse();
            for (i, q) in branch.queries.iter_mut().enumerate() {
                q.prediction.confidence = 0.123;
                q.prediction.bev_box.cx += 50.0;
                q.prediction.bev_box.cy -= 25.0;
                q.prior_gt = Some(1_000_000 + i as u64);
            }
        }
    }

    let clean_log = clean.into_log();
    let corrupted_log = corrupted.into_log();
    let main_bytes = |log: &tba_core::EpisodeLog| -> Vec<String> {
        log.main_records()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect()
    };
    let clean_main = main_bytes(&clean_log);
    let corrupted_main = main_bytes(&corrupted_log);
    assert_eq!(clean_main.len(), scene.frames.len());
    assert_eq!(
        clean_main, corrupted_main,
        "corrupting aux groups must not change main-group records"
    );
    // Sanity: the corruption really did change the aux branch outcomes.
    let aux_bytes = |log: &tba_core::EpisodeLog| -> Vec<String> {
        log.records
            .iter()
            .filter(|r| r.group_id != 0)
            .map(|r| serde_json::to_string(r).unwrap())
            .collect()
    };
    assert_ne!(
        aux_bytes(&clean_log),
        aux_bytes(&corrupted_log),
        "corruption should be visible in aux records"
    );
    println!(
        "acceptance 05 group-isolation: PASS — main records byte-identical across {} frames \
         despite per-frame aux corruption",
        scene.frames.len()
    );
}

#[test]
fn criterion_06_gradient_check() {
    let line = check::selftest_gradient(50).expect("analytic and numeric gradients agree");
    println!("acceptance 06 gradient-check: PASS — {line}");
}

fn static_scene(objects: usize, frames: usize) -> Scene {
    let params = ScenarioParams {
        num_frames: frames,
        initial_objects: objects,
        birth_rate: 0.0,
        death_prob: 0.0,
        occlusion_prob: 0.0,
        motion_noise_std: 0.0,
        speed_range: (0.0, 0.0),
        ..ScenarioParams::default()
    };
    generate_scenario(&params, 424242).unwrap()
}

#[test]
fn criterion_07_metrics_sanity() {
    // Perfect tracker.
    let scene = static_scene(3, 10);
    let outputs: Vec<TrackedOutput> = scene
        .frames
        .iter()
        .flat_map(|f| {
            f.objects.iter().map(|g| TrackedOutput {
                frame: f.index,
                pred_track_id: g.track_id,
                bev_box: g.bev_box,
                class_id: g.class_id,
                confidence: 1.0,
            })
        })
        .collect();
    let evals = [SceneEval {
        scene: &scene,
        outputs: &outputs,
    }];
    let perfect = amota_amotp(&evals, 40, 2.0).unwrap();
    assert_eq!(perfect.amota, 1.0, "perfect tracker AMOTA");
    assert_eq!(perfect.amotp, 0.0, "perfect tracker AMOTP");
    assert_eq!(perfect.best.false_positives, 0);
    assert_eq!(perfect.best.false_negatives, 0);
    assert_eq!(perfect.best.id_switches, 0);

    // Hand-constructed identity switch: id 7 for 3 frames, then id 9.
    let scene = static_scene(1, 5);
    let switch_outputs: Vec<TrackedOutput> = scene
        .frames
        .iter()
        .map(|f| TrackedOutput {
            frame: f.index,
            pred_track_id: if f.index < 3 { 7 } else { 9 },
            bev_box: f.objects[0].bev_box,
            class_id: f.objects[0].class_id,
            confidence: 1.0,
        })
        .collect();
    let acc = accumulate_clearmot(
        &[SceneEval {
            scene: &scene,
            outputs: &switch_outputs,
        }],
        1.0,
        2.0,
    );
    assert_eq!(acc.id_switches, 1, "exactly one identity switch");

    // MOTAR hand case: P = 100, r = 0.7, fp = 10, fn = 35, ids = 2.
    let hand = MotAccumulator {
        recall_threshold: 0.7,
        match_dist_sum: 0.0,
        match_count: 65,
        false_positives: 10,
        false_negatives: 35,
        id_switches: 2,
        gt_count: 100,
    };
    let expected = 1.0 - 17.0 / 70.0;
    let got = motar(&hand).unwrap();
    assert!(
        (got - expected).abs() <= 1e-9,
        "MOTAR hand case: got {got}, expected {expected}"
    );
    println!(
        "acceptance 07 metrics-sanity: PASS — perfect tracker exact, IDS hand trace = 1, \
         MOTAR hand case {got:.10} within 1e-9 of 1 - 17/70"
    );
}

#[test]
fn criterion_08a_proposal_positive_rate_direction() {
    let suite = suite();
    assert!(
        suite.elapsed < Duration::from_secs(300),
        "suite took {:?}, budget is 5 min single-threaded",
        suite.elapsed
    );
    let baseline = strategy_report(suite, Strategy::Baseline);
    let scad = strategy_report(suite, Strategy::ScaDropout);
    let base_rate = baseline
        .proposal_positive_rate
        .expect("baseline proposal labels exist");
    let scad_rate = scad
        .proposal_positive_rate
        .expect("sca_dropout proposal labels exist");
    let margin = scad_rate - base_rate;
    assert!(
        margin > 0.0,
        "proposal positive rate must rise under SCA+dropout: {scad_rate:.4} vs {base_rate:.4}"
    );
    println!(
        "acceptance 08a proposal-positive-rate: PASS — sca_dropout {scad_rate:.4} > baseline \
         {base_rate:.4} (recorded margin {margin:+.4}); suite ran in {:?}",
        suite.elapsed
    );
}

#[test]
fn criterion_08b_newborn_confidence_direction() {
    let suite = suite();
    let baseline = strategy_report(suite, Strategy::Baseline);
    let scad = strategy_report(suite, Strategy::ScaDropout);
    let base_nb = baseline.metrics.nb_conf_mean.expect("baseline newborn TPs exist");
    let scad_nb = scad.metrics.nb_conf_mean.expect("sca_dropout newborn TPs exist");
    let margin = scad_nb - base_nb;
    let line = if margin > 0.0 { "PASS" } else { "FAIL" };
    println!(
        "acceptance 08b newborn-confidence: {line} — sca_dropout {scad_nb:.4} vs baseline \
         {base_nb:.4} (recorded margin {margin:+.4})"
    );
    assert!(
        margin > 0.0,
        "trained newborn confidence must rise under SCA+dropout; measured margin {margin:+.4}. \
         Known limitation, kept red on purpose: the linear five-feature confidence model learns \
         conditional suppression from baseline labels alone (the same-object feature hands it the \
         conditioning variable a real decoder would have to learn perceptually), so the baseline \
         model never develops the unconditional-suppression pathology whose repair this check \
         measures. The repair mechanism itself is evidenced by 08a. See README, section \
         'Acceptance suite'."
    );
}

#[test]
fn criterion_09_tq_recall_direction() {
    let suite = suite();
    let continuation = strategy_report(suite, Strategy::ScaDropout);
    let detection = strategy_report(suite, Strategy::Detection);
    let cont_recall = continuation
        .metrics
        .tq_recall
        .expect("continuation-style recall defined");
    let det_recall = detection
        .metrics
        .tq_recall
        .expect("detection-style recall defined");
    assert!(
        cont_recall >= 0.9,
        "continuation-style TQ recall {cont_recall:.4} below the frozen 0.9 threshold"
    );
    assert!(
        det_recall < 0.5,
        "detection-style TQ recall {det_recall:.4} above the frozen 0.5 threshold"
    );
    println!(
        "acceptance 09 tq-recall-direction: PASS — continuation {cont_recall:.4} >= 0.9, \
         detection {det_recall:.4} < 0.5"
    );
}

#[test]
fn criterion_10_comparison_determinism() {
    let suite = suite();
    let again = run_comparison(
        &suite.config,
        &[Strategy::Baseline, Strategy::ScaDropout, Strategy::Detection],
        SUITE_SCENES,
        SUITE_SEED,
    )
    .unwrap();
    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
        let a = report(&suite.report, format).unwrap();
        let b = report(&again, format).unwrap();
        assert_eq!(a.into_bytes(), b.into_bytes(), "{format:?} reports must be byte-identical");
    }
    println!(
        "acceptance 10 determinism: PASS — repeated comparison renders byte-identical \
         json/csv/markdown reports"
    );
}

#[test]
fn criterion_summary_table3_direction() {
    // Not a numbered criterion: prints the suite's ablation grid so the
    // recorded margins live in the test output.
    let suite = suite();
    let md = report(&suite.report, ReportFormat::Markdown).unwrap();
    println!("{md}");
}
