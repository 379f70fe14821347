mod artifacts;
mod commands;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use gradebag::dataset::Stage;
use gradebag::pipeline::RunConfig;
use gradebag::LearnerKind;

use artifacts::{Usage, Writer};
use commands::{Format, SynthKind};

#[derive(Parser)]
#[command(name = "gradebag", version, about = "Bagging-ensemble selection for early grade prediction")]
struct Cli {
    /// JSON file with run configuration fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a raw grade CSV into a feature matrix.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// 20 or 50.
        #[arg(long)]
        stage: Option<Stage>,
    },
    /// Grid-search hyper-parameters per learner on the initial split.
    Tune {
        #[arg(long)]
        features: Option<PathBuf>,
        /// Grid JSON replacing the standard grid of its learner. Repeatable.
        #[arg(long)]
        grid: Vec<PathBuf>,
    },
    /// Build one bagging per learner and outer split.
    Bag {
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Evaluate every ensemble and pick the winner.
    Select,
    /// Render the selection report.
    Report {
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Project features onto their principal axes.
    Pca {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        components: usize,
    },
    /// Averaged permutation importance of one learner's baggings.
    Importance {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        learner: LearnerKind,
    },
    /// Generate synthetic data.
    Synth {
        #[command(subcommand)]
        kind: SynthCommand,
    },
    /// Tune, bag, select and report in one go.
    Pipeline {
        #[arg(long)]
        features: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Raw unbalanced course export plus its schema.
    Cohort {
        #[arg(long, default_value_t = 150)]
        n_fair: usize,
        #[arg(long, default_value_t = 328)]
        n_good: usize,
        #[arg(long, default_value_t = 8)]
        n_weak: usize,
    },
    /// Well-separated Gaussian clusters written as a feature matrix.
    Blobs {
        /// Rows per class, F,G,W.
        #[arg(long, value_delimiter = ',', default_values_t = [100, 100, 100])]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        n_features: usize,
        #[arg(long, default_value_t = 8.0)]
        sd: f64,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            artifacts::require(p, "config file")?;
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| Usage(format!("config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli, writer: &Writer) -> Result<()> {
    let features = |flag: Option<PathBuf>| commands::features_path(writer, flag);
    match cli.command {
        Command::Ingest { input, schema, stage } => commands::ingest(writer, input, schema, stage),
        Command::Tune { features: f, grid } => commands::tune(writer, &features(f), &grid).map(|_| ()),
        Command::Bag { features: f } => commands::bag(writer, &features(f), None).map(|_| ()),
        Command::Select => commands::select_stage(writer, None).map(|_| ()),
        Command::Report { format } => commands::report(writer, format),
        Command::Pca { features: f, components } => commands::pca(writer, &features(f), components),
        Command::Importance { features: f, learner } => commands::importance(writer, &features(f), learner),
        Command::Synth { kind } => commands::synth(
            writer,
            match kind {
                SynthCommand::Cohort { n_fair, n_good, n_weak } => SynthKind::Cohort { n_fair, n_good, n_weak },
                SynthCommand::Blobs { counts, n_features, sd } => SynthKind::Blobs {
                    counts: counts
                        .try_into()
                        .map_err(|c: Vec<usize>| Usage(format!("--counts needs 3 values, got {}", c.len())))?,
                    n_features,
                    sd,
                },
            },
        ),
        Command::Pipeline { features: f } => commands::pipeline(writer, &features(f)),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<gradebag::Error>() {
            return if e.is_validation() { 2 } else { 3 };
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| {
        let writer = Writer::new(cli.out_dir.clone(), cfg)?;
        let outcome = run(cli, &writer);
        match &outcome {
            Ok(()) => writer.clear_failed()?,
            Err(e) => writer.mark_failed(e),
        }
        outcome
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
