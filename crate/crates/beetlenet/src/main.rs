//! `beetlenet` — bark-beetle attack-stage classification pipeline CLI.

use beetlenet::config::RunConfig;
use beetlenet::pipeline;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "beetlenet", version, about = "Bark-beetle attack-stage classification pipeline")]
struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract crown patches from orthomosaics and write the split manifest.
    Prepare,
    /// Balance each flight's training set with synthetic samples.
    Augment,
    /// Train one classifier per flight and save checkpoints.
    Train,
    /// Evaluate checkpoints on the test splits and render metrics.
    Eval,
    /// Grid-search the KNN/SVM/random-forest baselines.
    Baselines,
    /// Render color statistics and t-SNE embeddings.
    Visualize,
    /// Run the whole pipeline end to end and write summary.json.
    Reproduce,
    /// Generate the synthetic fixture dataset for smoke runs.
    Fixture {
        /// Directory to write the fixture orthomosaics and annotations into.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load_config(cli: &Cli) -> beetlenet::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        config.out_dir = Some(out.clone());
    }
    Ok(config)
}

fn run(cli: &Cli) -> beetlenet::Result<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Prepare => {
            let summary = pipeline::cmd_prepare(&config)?;
            for (flight, [train, val, test]) in &summary.per_flight {
                println!("{flight}: {train} train / {val} val / {test} test");
            }
        }
        Command::Augment => {
            let summary = pipeline::cmd_augment(&config)?;
            if let Some(notice) = &summary.notice {
                eprintln!("notice: {notice}");
            }
            for (flight, total) in &summary.per_flight {
                println!("{flight}: {total} training samples after augmentation");
            }
        }
        Command::Train => {
            let summary = pipeline::cmd_train(&config)?;
            for (flight, loss) in &summary.per_flight {
                println!("{flight}: best validation loss {loss:.6}");
            }
        }
        Command::Eval => {
            let report = pipeline::cmd_eval(&config)?;
            for (flight, acc) in &report.per_flight {
                println!("{flight}: test accuracy {:.2}%", acc * 100.0);
            }
            println!("macro average: {:.2}%", report.macro_average * 100.0);
            println!("micro average: {:.2}%", report.micro_average * 100.0);
        }
        Command::Baselines => {
            for row in pipeline::cmd_baselines(&config)? {
                println!(
                    "{}: best {} (val {:.2}%, test {:.2}%)",
                    row.classifier,
                    row.best_params,
                    row.val_accuracy * 100.0,
                    row.test_accuracy * 100.0
                );
            }
        }
        Command::Visualize => {
            for path in pipeline::cmd_visualize(&config)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Reproduce => {
            let summary = pipeline::cmd_reproduce(&config)?;
            println!(
                "done: macro {:.2}% / micro {:.2}% over {} flights",
                summary.accuracy.macro_average * 100.0,
                summary.accuracy.micro_average * 100.0,
                summary.accuracy.per_flight.len()
            );
        }
        Command::Fixture { dir } => {
            let annotations = pipeline::cmd_fixture(&config, dir)?;
            println!("wrote fixture dataset; annotations at {}", annotations.display());
        }
    }
    Ok(())
}

fn main() {
    if let Ok(threads) = std::env::var("BEETLENET_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .expect("rayon pool already initialized");
            }
            _ => {
                eprintln!("error: BEETLENET_THREADS must be a positive integer, got `{threads}`");
                std::process::exit(1);
            }
        }
    }
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
