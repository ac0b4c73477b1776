use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gamealign::harness::experiment::{
    cluster_experiment, plan_experiment, predict_experiment, replay, write_cluster_archive, write_plan_archive,
    write_predict_archive,
};
use gamealign::harness::sim::Mode;
use gamealign::harness::ScenarioConfig;
use gamealign::{Error, Result};

#[derive(Parser)]
#[command(name = "gamealign", version, about = "Equilibrium clustering, prediction and MAP-aligned planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's rng_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Archive directory to write.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve from random seeds and cluster the equilibria.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Predict the trajectories of players following a secret equilibrium.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 30)]
        runs: usize,
        /// inference | random-baseline
        #[arg(long, default_value = "inference")]
        mode: String,
    },
    /// Closed-loop planning of player 0 among the other players.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 30)]
        runs: usize,
        /// map-aligned | random-baseline
        #[arg(long, default_value = "map-aligned")]
        mode: String,
    },
    /// Re-simulate an archive and check it is reproduced bit for bit.
    Replay {
        /// Archive directory.
        archive: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replay with a different master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    Ok(())
}

fn load(common: &Common) -> Result<ScenarioConfig> {
    threads(common.threads)?;
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.rng_seed = s;
    }
    Ok(cfg)
}

/// Runs the command; `Ok(false)` means it ran but its check failed.
fn run(cli: Cli) -> Result<(bool, serde_json::Value)> {
    match cli.command {
        Cmd::Cluster { common, samples } => {
            let cfg = load(&common)?;
            let outcome = cluster_experiment(&cfg, samples)?;
            write_cluster_archive(&common.out, &cfg, &outcome)?;
            let clusters: Vec<_> = outcome
                .report
                .clusters
                .iter()
                .zip(&outcome.handedness)
                .map(|(c, h)| json!({"size": c.members.len(), "mean_costs": c.mean_costs, "handedness": h}))
                .collect();
            Ok((true, json!({"command": "cluster", "k": outcome.report.k, "clusters": clusters, "out": common.out})))
        }
        Cmd::Predict { common, runs, mode } => {
            let mode = Mode::parse_predict(&mode)?;
            let cfg = load(&common)?;
            let outcome = predict_experiment(&cfg, runs, mode)?;
            write_predict_archive(&common.out, &cfg, mode, &outcome)?;
            let mse: Vec<f64> = outcome.aggregate.iter().map(|m| m.mean).collect();
            Ok((true, json!({"command": "predict", "mode": mode, "runs": runs, "mean_squared_error": mse, "out": common.out})))
        }
        Cmd::Plan { common, runs, mode } => {
            let mode = Mode::parse_plan(&mode)?;
            let cfg = load(&common)?;
            let outcome = plan_experiment(&cfg, runs, mode)?;
            write_plan_archive(&common.out, &cfg, mode, &outcome)?;
            Ok((true, json!({"command": "plan", "mode": mode, "runs": runs, "median_costs": outcome.median_costs()?, "out": common.out})))
        }
        Cmd::Replay { archive, out, seed, threads: n } => {
            threads(n)?;
            let dir = archive.or(out).ok_or_else(|| Error::InvalidArgument("replay needs an archive directory".into()))?;
            let report = replay(&dir, seed)?;
            Ok((report.passed, serde_json::to_value(&report)?))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": "usage", "message": e.render().to_string()}}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok((true, summary)) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok((false, report)) => {
            eprintln!("{}", json!({"error": {"kind": "replay_mismatch", "report": report}}));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            ExitCode::from(2)
        }
    }
}
