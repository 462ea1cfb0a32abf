use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use factory_d2d::dissemination::StrategyKind;
use factory_d2d_cli::{
    cmd_generate_default, cmd_losmap, cmd_run, exit_code, LosMapOptions, SweepSpec,
    DEFAULT_INTERARRIVALS_MS,
};

#[derive(Parser)]
#[command(version, about = "Caching-aided D2D dissemination over mmWave on a factory floor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default 18 x 10 m factory scenario.
    GenerateDefault {
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep strategies and interarrival times; write CSVs and plots.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "direct,storage,predictive")]
        strategies: Vec<StrategyKind>,
        #[arg(long, value_delimiter = ',')]
        interarrival_ms: Vec<f64>,
        #[arg(long, default_value_t = 50)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Infra LoS heat map and per-device LoS traces.
    Losmap {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grid_res: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateDefault { out } => cmd_generate_default(&out).map(|_| {
            println!("wrote {}", out.display());
        }),
        Command::Run {
            scenario,
            strategies,
            interarrival_ms,
            runs,
            seed,
            out,
            threads,
        } => {
            let sweep = SweepSpec {
                strategies,
                interarrival_ms: if interarrival_ms.is_empty() {
                    DEFAULT_INTERARRIVALS_MS.to_vec()
                } else {
                    interarrival_ms
                },
                runs,
                seed,
                out,
                threads,
            };
            cmd_run(&scenario, &sweep).map(|o| {
                println!(
                    "{} runs, {} aggregate rows written to {}",
                    o.runs.len(),
                    o.aggregate.len(),
                    sweep.out.display()
                );
            })
        }
        Command::Losmap {
            scenario,
            out,
            grid_res,
            samples,
        } => cmd_losmap(
            &scenario,
            &out,
            &LosMapOptions {
                grid_res_m: grid_res,
                samples,
            },
        )
        .map(|()| println!("wrote LoS map and traces to {}", out.display())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
