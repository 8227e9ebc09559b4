use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scootsafe_cli::commands;
use scootsafe_cli::{CliError, Overrides, PipelineConfig};

#[derive(Parser)]
#[command(name = "scootsafe", version, about = "E-scooter / pedestrian encounter pipeline")]
struct Cli {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; also where unset inputs are looked up.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// IANA zone name, e.g. America/Chicago.
    #[arg(long, global = true)]
    timezone: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the field simulator.
    Simulate,
    /// Detect predicted encounters from receptions.jsonl.
    Detect(DetectArgs),
    /// Filter feedback to the study window and classify startle responses.
    FilterFeedback,
    /// Per-class metrics, key histograms, heatmap, RSSI groups and schedule correlation.
    Analyze,
    /// Precision / recall of encounters.csv against truth.csv.
    Score,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    window_s: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    min_packets: Option<usize>,
    #[arg(long)]
    merge_gap_s: Option<f64>,
    #[arg(long)]
    daily_cap: Option<usize>,
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable summary"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut cfg = base.finish(&Overrides {
        out_dir: cli.out.clone(),
        seed: cli.seed,
        timezone: cli.timezone.clone(),
    })?;
    match cli.command {
        Command::Simulate => print_json(&commands::cmd_simulate(&cfg)?),
        Command::Detect(a) => {
            let d = &mut cfg.detector;
            if let Some(v) = a.window_s {
                d.window_length_s = v;
            }
            if let Some(v) = a.overlap {
                d.overlap_fraction = v;
            }
            if let Some(v) = a.min_packets {
                d.min_packets_per_window = v;
            }
            if let Some(v) = a.merge_gap_s {
                d.merge_gap_s = v;
            }
            if let Some(v) = a.daily_cap {
                d.max_encounters_per_scooter_per_day = v;
            }
            d.validate().map_err(|e| CliError::Config(e.to_string()))?;
            print_json(&commands::cmd_detect(&cfg)?);
        }
        Command::FilterFeedback => print_json(&commands::cmd_filter_feedback(&cfg)?),
        Command::Analyze => {
            let a = commands::cmd_analyze(&cfg)?;
            println!("segments: {}", a.segments);
            println!("zone universe: {} ({} segments x 68 slots)", a.zone_universe, a.segments);
            if let Some(sc) = &a.schedule {
                match sc.spearman {
                    Some(r) => println!("schedule spearman: {r:.3}"),
                    None => println!("schedule spearman: undefined"),
                }
            }
            for w in &a.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Score => print_json(&commands::cmd_score(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scootsafe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
