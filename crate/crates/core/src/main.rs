use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use geoprice::pipeline::{Command, ConfigMap};
use geoprice::{Error, Result};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Step {
    Synth,
    Ingest,
    Prune,
    Split,
    BuildW,
    FitSar,
    PoiIndex,
    Featurize,
    Fuse,
    Train,
    Evaluate,
    AblateZooms,
    FetchTiles,
    Report,
}

impl From<Step> for Command {
    fn from(s: Step) -> Self {
        match s {
            Step::Synth => Command::Synth,
            Step::Ingest => Command::Ingest,
            Step::Prune => Command::Prune,
            Step::Split => Command::Split,
            Step::BuildW => Command::BuildW,
            Step::FitSar => Command::FitSar,
            Step::PoiIndex => Command::PoiIndex,
            Step::Featurize => Command::Featurize,
            Step::Fuse => Command::Fuse,
            Step::Train => Command::Train,
            Step::Evaluate => Command::Evaluate,
            Step::AblateZooms => Command::AblateZooms,
            Step::FetchTiles => Command::FetchTiles,
            Step::Report => Command::Report,
        }
    }
}

/// Housing price regression with spatial auto-regression, POI counts and
/// multi-scale deep features.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
/// failure.
#[derive(Debug, Parser)]
#[command(name = "geoprice", version)]
struct Cli {
    /// Pipeline step to run.
    #[arg(value_enum)]
    step: Step,
    /// Experiment configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Deep-feature zooms, e.g. `18,19,20` or `15-20`.
    #[arg(long)]
    zooms: Option<String>,
    /// linear, rf or mlp.
    #[arg(long)]
    estimator: Option<String>,
    /// Contiguity: `knn:K`, `radius:KM` or `delaunay`.
    #[arg(long)]
    w: Option<String>,
    /// Serve tiles from the cache only.
    #[arg(long)]
    cache_only: bool,
    /// Any config key, e.g. `--set runs=3`. Repeatable; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn run(cli: &Cli) -> Result<String> {
    let mut map = ConfigMap::load(&cli.config)?;
    let flags = [
        ("seed", cli.seed.map(|s| s.to_string())),
        ("zooms", cli.zooms.clone()),
        ("estimator", cli.estimator.clone()),
        ("w", cli.w.clone()),
        ("cache_only", cli.cache_only.then(|| "true".to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            map.set(&format!("{k}={v}"))?;
        }
    }
    for o in &cli.overrides {
        map.set(o)?;
    }
    let cfg = map.resolve()?;
    Command::from(cli.step).run(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("geoprice {}: {} error: {}", Command::from(cli.step), e.kind(), one_line(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn one_line(e: &Error) -> String {
    e.to_string().lines().collect::<Vec<_>>().join(" ")
}
