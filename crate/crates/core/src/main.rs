use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use feel_core::cli::{self, ExperimentConfig, Scheme};

/// Federated training simulator with joint selection, pruning and resource allocation.
#[derive(Debug, Parser)]
#[command(name = "feel-sim", version)]
struct Args {
    /// Experiment config file (`section.key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scheme(s) to run; repeat or comma-separate. Overrides experiment.schemes.
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<Scheme>,
    /// Seed(s); repeat or comma-separate. Overrides experiment.seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Number of training rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep one axis, e.g. `sigma=1,5,10,15`, `E0=100,250` or `T0=50,150`.
    #[arg(long)]
    sweep: Option<String>,
    /// Print the full config of a named preset and exit.
    #[arg(long, value_name = "NAME")]
    dump_preset: Option<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match real_main(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(args: Args) -> Result<(), Box<dyn std::error::Error>> {
    if let Some(name) = &args.dump_preset {
        print!("{}", ExperimentConfig::from_preset(name)?.render());
        return Ok(());
    }
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::from_preset("mnist-lenet")?,
    };
    if !args.scheme.is_empty() {
        cfg.schemes = args.scheme.clone();
    }
    if !args.seed.is_empty() {
        cfg.seeds = args.seed.clone();
    }
    if let Some(r) = args.rounds {
        cfg.rounds = r;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    match &args.sweep {
        Some(spec) => {
            let (axis, values) = cli::parse_sweep(spec)?;
            let rows = cli::sweep(&cfg, axis, &values)?;
            for r in rows {
                println!(
                    "{}={} {}: acc {:.4} ± {:.4} over {} runs",
                    r.axis, r.value, r.scheme, r.mean_final_acc, r.std_final_acc, r.runs
                );
            }
        }
        None => {
            for o in cli::run(&cfg)? {
                let s = &o.summary;
                println!(
                    "{} seed {}: acc {:.4}, energy {:.3} J, delay {:.3} s, theta {:.4}",
                    s.scheme, s.seed, s.final_test_acc, s.total_energy_j, s.total_delay_s, s.theta
                );
            }
        }
    }
    Ok(())
}
