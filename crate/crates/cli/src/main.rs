//! Scenario runner and report generator for the compressor station
//! load-sharing study.

mod config;
mod report;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};

use config::{RunConfig, RunMode};
use loadshare::sim::{
    mismatch_sweep, run_scenario_with_options, metrics_to_text, trace_to_csv, Mode, RunMetrics,
    RunOptions, Scenario, SimulationTrace,
};

#[derive(Debug, Parser)]
#[command(
    name = "loadshare",
    about = "Closed-loop load-sharing study of a three-compressor station"
)]
struct Cli {
    /// Configuration file; omitted means baseline defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Which scenario(s) to run; overrides the config file.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Run a sweep instead of single scenarios.
    #[arg(long, value_enum)]
    sweep: Option<SweepArg>,
    /// Random seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Max concurrent scenario runs; overrides the config file.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory; overrides the config file.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print the fully resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Nlp,
    OfoPerfect,
    OfoMismatch,
    OfoAdapt,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepArg {
    Mismatch,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_path(path)
            .with_context(|| format!("loading {}", path.display()))?,
        None => RunConfig::default(),
    };
    if let Some(mode) = cli.mode {
        config.mode = match mode {
            ModeArg::Nlp => RunMode::Nlp,
            ModeArg::OfoPerfect => RunMode::OfoPerfect,
            ModeArg::OfoMismatch => RunMode::OfoMismatch,
            ModeArg::OfoAdapt => RunMode::OfoAdapt,
            ModeArg::All => RunMode::All,
        };
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = jobs;
    }
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.out_dir));
    config.validate().context("validating configuration")?;

    if cli.print_config {
        print!("{}", config.emit());
        return Ok(());
    }

    match cli.sweep {
        Some(SweepArg::Mismatch) => run_sweep(&config, &out_dir),
        None => run_modes(&config, &out_dir),
    }
}

fn run_modes(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let params = config.station_params()?;
    let profile = config.demand_profile()?;
    let modes = config.mode.scenarios();
    let opts = RunOptions {
        capture_gp_datasets: config.output.dump_gp_datasets,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.max(1))
        .build()
        .context("building thread pool")?;
    let results: Vec<Result<(Mode, SimulationTrace, RunMetrics)>> = pool.install(|| {
        use rayon::prelude::*;
        modes
            .par_iter()
            .map(|&mode| {
                let scenario = config.scenario(mode);
                let (trace, metrics) = run_scenario_with_options(&scenario, &params, &profile, opts)
                    .with_context(|| format!("scenario `{}` failed", mode_tag(mode)))?;
                Ok((mode, trace, metrics))
            })
            .collect()
    });

    let mut runs = Vec::new();
    for result in results {
        runs.push(result?);
    }
    for (mode, trace, metrics) in &runs {
        let scenario = config.scenario(*mode);
        let dir = out_dir.join(run_name(&scenario));
        write_run(&dir, trace, metrics)
            .with_context(|| format!("writing outputs for `{}`", mode_tag(*mode)))?;
        println!("wrote {}", dir.display());
    }

    let summary: Vec<(Mode, RunMetrics)> = runs.iter().map(|(m, _, k)| (*m, *k)).collect();
    print!("{}", report::mode_summary(&summary));
    Ok(())
}

fn run_sweep(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let params = config.station_params()?;
    let profile = config.demand_profile()?;
    let base = config.scenario(Mode::OfoMismatchAdapt);
    let cases = mismatch_sweep(&base, &params, &profile, config.jobs)
        .context("mismatch sweep failed")?;

    for case in &cases {
        let scenario = Scenario {
            truth_map: case.truth_map,
            truth_noise: case.truth_noise,
            belief_order: case.belief_order,
            ..base
        };
        let dir = out_dir.join(format!("sweep_{}", case_name(&scenario)));
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        std::fs::write(dir.join("metrics.txt"), metrics_to_text(&case.metrics))
            .with_context(|| format!("writing metrics under {}", dir.display()))?;
    }
    let report = report::sweep_report(&cases);
    let report_path = out_dir.join(format!("sweep_report_seed{}.txt", config.seed));
    std::fs::write(&report_path, &report)
        .with_context(|| format!("writing {}", report_path.display()))?;
    print!("{report}");
    println!("wrote {}", report_path.display());
    Ok(())
}

fn write_run(dir: &Path, trace: &SimulationTrace, metrics: &RunMetrics) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("trace.csv"), trace_to_csv(trace))?;
    std::fs::write(dir.join("metrics.txt"), metrics_to_text(metrics))?;
    for (i, history) in trace.gp_history.iter().enumerate() {
        let mut refit_index = 0usize;
        for snapshot in history {
            if let Some(dump) = &snapshot.dataset_dump {
                let name = format!("gp_c{}_refit{:04}.csv", i + 1, refit_index);
                std::fs::write(dir.join(name), dump)?;
                refit_index += 1;
            }
        }
    }
    let produced = dir.join("trace.csv").is_file() && dir.join("metrics.txt").is_file();
    if !produced {
        bail!("run outputs missing under {}", dir.display());
    }
    Ok(())
}

fn mode_tag(mode: Mode) -> &'static str {
    match mode {
        Mode::NlpBenchmark => "nlp",
        Mode::OfoPerfect => "ofo-perfect",
        Mode::OfoMismatchNoAdapt => "ofo-mismatch",
        Mode::OfoMismatchAdapt => "ofo-adapt",
    }
}

fn run_name(scenario: &Scenario) -> String {
    format!("{}_{}", mode_tag(scenario.mode), case_name(scenario))
}

fn case_name(scenario: &Scenario) -> String {
    use loadshare::compressor::ModelOrder;
    use loadshare::sim::TruthMapKind;
    let truth = match scenario.truth_map {
        TruthMapKind::Polynomial => "poly",
        TruthMapKind::Sinusoidal => "sin",
    };
    let noise = if scenario.truth_noise > 0.0 {
        format!("_noise{}", scenario.truth_noise)
    } else {
        String::new()
    };
    let order = match scenario.belief_order {
        ModelOrder::Quadratic => "quadratic",
        ModelOrder::Linear => "linear",
        ModelOrder::Constant => "constant",
    };
    format!("{truth}{noise}_{order}_seed{}", scenario.seed)
}
