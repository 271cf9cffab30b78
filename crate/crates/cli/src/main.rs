//! `tba` — scene simulation, supervision episodes, confidence training,
//! tracking metrics, and strategy comparisons from one config file.
//!
//! Exit codes: 0 on success, 2 for configuration/usage errors, 1 for
//! anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tba_core::{
    amota_amotp, confidence_stats, generate_scenario, outputs_from_log, report, run_comparison,
    run_episode, tq_recall, EpisodeLog, EpisodeMode, Error, ExperimentConfig, MetricsReport,
    ReportFormat, Scene, SceneEval, Strategy,
};

#[derive(Parser)]
#[command(
    name = "tba",
    version,
    about = "Tracking-by-attention supervision lab: synthetic scenes, assignment strategies, and AMOTA metrics"
)]
struct Cli {
    /// Experiment config JSON; defaults apply for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path: the scene file for `simulate`, a directory otherwise.
    /// Falls back to $TBA_OUT, then the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the config's strategy (baseline, sca, sca_dropout, detection).
    #[arg(long, global = true)]
    strategy: Option<String>,

    /// Episode mode for `run` (training or inference).
    #[arg(long, global = true)]
    mode: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic scene and write its JSON.
    Simulate,
    /// Run a single full-scene episode and write scene plus episode log.
    Run,
    /// Generate training logs and fit the confidence model.
    Train,
    /// Compute a metrics report from an episode log and its scene.
    Evaluate {
        /// Episode log (JSON lines) produced by `run`.
        #[arg(long)]
        episode: PathBuf,
        /// Scene JSON the episode ran on.
        #[arg(long)]
        scene: PathBuf,
    },
    /// Run every strategy on identical scenes and write comparison.{json,csv,md}.
    Compare {
        /// Comma-separated strategies; default: baseline,sca,sca_dropout.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Run the brute-force verification suites.
    Selftest,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(strategy) = &cli.strategy {
        config.strategy = strategy.parse()?;
    }
    if let Ok(dir) = std::env::var("TBA_OUT") {
        if !dir.is_empty() {
            config.output_dir = PathBuf::from(dir);
        }
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(cli: &Cli, config: &ExperimentConfig) -> Result<PathBuf, Error> {
    let dir = cli.out.clone().unwrap_or_else(|| config.output_dir.clone());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn make_scene(config: &ExperimentConfig) -> Result<Scene, Error> {
    // Scene 0 of the config's suite, so `run` sees the same scene `compare` does.
    let scene_seed = tba_core::rng::substream(config.seed, tba_core::rng::TAG_SCENE);
    let mut scene = generate_scenario(&config.scenario, scene_seed)?;
    scene.scene_id = 0;
    Ok(scene)
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn simulate(cli: &Cli, config: &ExperimentConfig) -> Result<(), Error> {
    let scene = make_scene(config)?;
    let path = match &cli.out {
        Some(path) if path.extension().is_some() => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            path.clone()
        }
        _ => out_dir(cli, config)?.join("scene.json"),
    };
    write(&path, &scene.to_json()?)
}

fn run(cli: &Cli, config: &ExperimentConfig) -> Result<(), Error> {
    let mode = match &cli.mode {
        Some(mode) => mode.parse()?,
        None => EpisodeMode::Training,
    };
    let scene = make_scene(config)?;
    let log = run_episode(config, &scene, mode)?;
    let dir = out_dir(cli, config)?;
    write(&dir.join("scene.json"), &scene.to_json()?)?;
    write(&dir.join("episode.jsonl"), &log.to_jsonl()?)
}

fn train(cli: &Cli, config: &ExperimentConfig) -> Result<(), Error> {
    let (model, curve) = tba_core::harness::run_training(config)?;
    let dir = out_dir(cli, config)?;
    write(&dir.join("model.json"), &model.to_json()?)?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (epoch, loss) in curve.iter().enumerate() {
        csv.push_str(&format!("{epoch},{loss}\n"));
    }
    write(&dir.join("loss_curve.csv"), &csv)
}

fn evaluate(
    cli: &Cli,
    config: &ExperimentConfig,
    episode: &Path,
    scene: &Path,
) -> Result<(), Error> {
    let log = EpisodeLog::from_jsonl(&std::fs::read_to_string(episode)?)?;
    let scene = Scene::from_json(&std::fs::read_to_string(scene)?)?;
    let outputs = outputs_from_log(&log);
    let evals = [SceneEval {
        scene: &scene,
        outputs: &outputs,
    }];
    let amota = amota_amotp(
        &evals,
        tba_core::metrics::DEFAULT_NUM_THRESHOLDS,
        tba_core::metrics::DEFAULT_DIST_THRESHOLD_M,
    )?;
    let pairs = [(&log, &scene)];
    let (nb_conf, trk_conf) = confidence_stats(&pairs);
    let metrics = MetricsReport {
        amota: amota.amota,
        amotp: amota.amotp,
        motar_curve: amota.curve,
        fp: amota.best.false_positives,
        fn_: amota.best.false_negatives,
        ids: amota.best.id_switches,
        tq_recall: tq_recall(&pairs),
        nb_conf_mean: nb_conf,
        trk_conf_mean: trk_conf,
    };
    let dir = out_dir(cli, config)?;
    write(&dir.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
    let csv = format!(
        "{}\n{}\n",
        MetricsReport::csv_header(),
        metrics.csv_row(config.seed, &config.canonical_hash())
    );
    write(&dir.join("metrics.csv"), &csv)
}

fn compare(cli: &Cli, config: &ExperimentConfig, strategies: &Option<Vec<String>>) -> Result<(), Error> {
    let strategies: Vec<Strategy> = match strategies {
        Some(names) => names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![Strategy::Baseline, Strategy::Sca, Strategy::ScaDropout],
    };
    let comparison = run_comparison(config, &strategies, config.num_scenes, config.seed)?;
    let dir = out_dir(cli, config)?;
    write(&dir.join("comparison.json"), &report(&comparison, ReportFormat::Json)?)?;
    write(&dir.join("comparison.csv"), &report(&comparison, ReportFormat::Csv)?)?;
    write(&dir.join("comparison.md"), &report(&comparison, ReportFormat::Markdown)?)?;
    for s in &comparison.strategies {
        println!(
            "{}: amota {:.4}, fp {}, fn {}, ids {}",
            s.strategy, s.metrics.amota, s.metrics.fp, s.metrics.fn_, s.metrics.ids
        );
    }
    Ok(())
}

fn selftest() -> Result<(), Error> {
    for line in [
        tba_core::check::selftest_hungarian(200)?,
        tba_core::check::selftest_sca_dominance(200)?,
        tba_core::check::selftest_gradient(50)?,
        selftest_dropout()?,
    ] {
        println!("PASS {line}");
    }
    Ok(())
}

/// Subset-uniformity check of the auxiliary dropout sampler.
fn selftest_dropout() -> Result<String, Error> {
    use tba_core::check::{chi_squared_uniform, proposal_at};
    use tba_core::{dropout_groups, LifecycleConfig, QueryState};

    let cfg = LifecycleConfig {
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
        let mut stream = tba_core::rng::stream(seed, 0xD20);
        let groups = dropout_groups(&queries, &cfg, &mut stream, 0.0);
        let mut ids: Vec<u64> = groups[1].queries.iter().map(|q| q.query_id).collect();
        ids.sort_unstable();
        *counts.entry(ids).or_default() += 1;
    }
    if counts.len() != 20 {
        return Err(Error::Data(format!(
            "dropout sampler reached {} of 20 subsets",
            counts.len()
        )));
    }
    let tallies: Vec<u64> = counts.values().copied().collect();
    let chi2 = chi_squared_uniform(&tallies);
    if chi2 >= 43.82 {
        return Err(Error::Data(format!(
            "dropout subset chi-squared {chi2:.2} >= 43.82 (p = 0.001 at 19 dof)"
        )));
    }
    Ok(format!(
        "dropout uniformity: 20000 draws over C(6,3) subsets, chi-squared {chi2:.2} < 43.82"
    ))
}

fn execute(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Selftest => selftest(),
        command => {
            let config = load_config(cli)?;
            match command {
                Command::Simulate => simulate(cli, &config),
                Command::Run => run(cli, &config),
                Command::Train => train(cli, &config),
                Command::Evaluate { episode, scene } => evaluate(cli, &config, episode, scene),
                Command::Compare { strategies } => compare(cli, &config, strategies),
                Command::Selftest => unreachable!(),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
