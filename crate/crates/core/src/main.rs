use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dpagg::harness::{run_scenario, Behavior, ScenarioOptions, WorldConfig};

#[derive(Parser)]
#[command(name = "dpagg", version, about = "Verifiable DP aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run the rounds described by a JSON world config
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        pit: Option<Toggle>,
        /// scripted deviation, e.g. replay-prev-round
        #[arg(long)]
        adversary: Option<Behavior>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// exit nonzero unless every round behaves as expected
        #[arg(long)]
        check: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            pit,
            adversary,
            out,
            check,
        } => {
            let mut cfg = match WorldConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = pit {
                cfg.verify.pit = matches!(p, Toggle::On);
            }
            if let Some(b) = adversary {
                cfg.adversary.behaviors = vec![b];
            }
            let outcome = match run_scenario(cfg, &ScenarioOptions { out: out.clone() }) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            for r in &outcome.reports {
                match &r.aborted {
                    Some(reason) => println!("round {}: aborted ({reason})", r.round_t),
                    None => {
                        let kinds: Vec<String> = r.detected_kinds().into_iter().collect();
                        println!(
                            "round {}: {} contributors, leaves {:?}, epsilon {:.4}, detections [{}]",
                            r.round_t,
                            r.contributors,
                            r.leaf_counts,
                            r.privacy.epsilon,
                            kinds.join(", ")
                        );
                    }
                }
            }
            println!("board digest {}", outcome.board_digest);
            if let Some(dir) = out {
                println!("reports written to {}", dir.display());
            }
            if check && !outcome.failures.is_empty() {
                for f in &outcome.failures {
                    eprintln!("check failed: {f}");
                }
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
    }
}
