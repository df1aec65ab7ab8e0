use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use dfedda::gossip::{load_gossip_csv, make_gossip, spectral_info, Topology};
use dfedda::harness::{compare_methods, load_config, output_dir, run_experiment, write_outputs, Summary, OUTPUT_DIR_ENV};
use dfedda::optimizers::{schedule_multistep, ScheduleRule};
use dfedda::Error;

/// Decentralized federated dual averaging experiments.
#[derive(Parser)]
#[command(name = "dfedda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, seed) cell of a config and write metrics.csv.
    Run {
        config: PathBuf,
        /// Replaces the config's output_dir.
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
    },
    /// Run a config and summarize final-round medians and pairwise l1 orderings.
    Compare {
        config: PathBuf,
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
    },
    /// Print sigma_2, spectral gap and mixing times of a gossip matrix.
    Spectral {
        /// complete, chain, ring, or a CSV file holding the matrix.
        topology: String,
        /// Number of clients.
        clients: usize,
    },
    /// Print the multistep stage table for JSON parameters (a file or an inline object).
    Schedule { params: String },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run { config, output_dir } => run(&config, output_dir.as_deref(), false),
        Command::Compare { config, output_dir } => run(&config, output_dir.as_deref(), true),
        Command::Spectral { topology, clients } => spectral(&topology, clients),
        Command::Schedule { params } => schedule(&params),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(config: &Path, dir_override: Option<&Path>, compare: bool) -> Result<(), Failure> {
    // an unreadable config is bad input, not a failed run
    let cfg = load_config(config).map_err(|e| match e {
        Error::Io { .. } => Failure::Validation(e.to_string()),
        e => e.into(),
    })?;
    let dir = output_dir(&cfg, dir_override);
    let (result, summary) = if compare {
        let (r, s) = compare_methods(&cfg)?;
        (r, Some(s))
    } else {
        (run_experiment(&cfg)?, None)
    };
    let csv = write_outputs(&cfg, &result, &dir)?;
    eprintln!("wrote {} rows to {}", result.rows.len(), csv.display());
    if let Some(summary) = summary {
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        std::fs::write(&path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        print_summary(&summary);
    }
    for f in &result.failures {
        eprintln!("cell failed: method {} seed {}: {}", f.method, f.seed, f.error);
    }
    match result.failures.first() {
        None => Ok(()),
        Some(f) if f.validation && result.failures.iter().all(|f| f.validation) => {
            Err(Failure::Validation(format!("{} cell(s) failed", result.failures.len())))
        }
        Some(_) => Err(Failure::Runtime(format!("{} cell(s) failed", result.failures.len()))),
    }
}

fn print_summary(s: &Summary) {
    println!(
        "{:<16} {:>8} {:>6} {:>12} {:>12} {:>12} {:>8}",
        "method", "round", "seeds", "median_gap", "median_l1", "median_l2", "support"
    );
    for m in &s.methods {
        println!(
            "{:<16} {:>8} {:>6} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.2}",
            m.method, m.final_round, m.seeds, m.median_gap, m.median_l1, m.median_l2, m.support_rate
        );
    }
    for p in &s.pairwise {
        println!(
            "{} < {} on l1 in {}/{} seeds (median difference {:.4e})",
            p.a, p.b, p.a_lower, p.compared, p.median_l1_diff
        );
    }
}

fn spectral(topology: &str, clients: usize) -> Result<(), Failure> {
    let u = match topology {
        "complete" => make_gossip(&Topology::Complete, clients)?,
        "chain" => make_gossip(&Topology::Chain, clients)?,
        "ring" => make_gossip(&Topology::Ring, clients)?,
        path if Path::new(path).is_file() => {
            let u = load_gossip_csv(path)?;
            if u.clients() != clients {
                return Err(Failure::Validation(format!(
                    "{path} holds a {0}x{0} matrix, expected {clients}",
                    u.clients()
                )));
            }
            u
        }
        other => {
            return Err(Failure::Validation(format!(
                "unknown topology `{other}` (expected complete, chain, ring or a CSV file)"
            )))
        }
    };
    let info = spectral_info(&u)?;
    println!("sigma2: {}", info.sigma2);
    println!("spectral_gap: {}", info.spectral_gap);
    println!("tau_c4: {}", info.tau_base4);
    println!("tau_c8: {}", info.tau_base8);
    Ok(())
}

fn default_delta() -> f64 {
    0.1
}

fn default_round_const() -> f64 {
    ScheduleRule::default().round_const
}

fn default_step_const() -> f64 {
    ScheduleRule::default().step_const
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleParams {
    sparsity: usize,
    kappa: f64,
    dim: usize,
    sigma: f64,
    /// Strong convexity at the initial radius.
    mu: f64,
    q0: f64,
    epsilon: f64,
    #[serde(default = "default_delta")]
    delta: f64,
    clients: usize,
    #[serde(default = "default_round_const")]
    round_const: f64,
    #[serde(default = "default_step_const")]
    step_const: f64,
}

fn schedule(params: &str) -> Result<(), Failure> {
    let text = if params.trim_start().starts_with('{') {
        params.to_string()
    } else {
        std::fs::read_to_string(params).map_err(|e| Failure::Validation(format!("{params}: {e}")))?
    };
    let p: ScheduleParams = serde_json::from_str(&text).map_err(|e| Failure::Validation(e.to_string()))?;
    let rule = ScheduleRule {
        round_const: p.round_const,
        step_const: p.step_const,
    };
    let s = schedule_multistep(
        p.sparsity, p.kappa, p.dim, p.sigma, p.mu, p.q0, p.epsilon, p.delta, p.clients, &rule,
    )?;
    println!("stages: {}", s.stages.len());
    println!("{:>4} {:>14} {:>10} {:>14}", "n", "Q_n", "R_n", "K_n");
    for (n, st) in s.stages.iter().enumerate() {
        println!("{:>4} {:>14.6e} {:>10} {:>14}", n, st.radius_sq, st.rounds, st.local_steps);
    }
    let rounds: usize = s.stages.iter().map(|st| st.rounds).sum();
    let steps: u128 = s.stages.iter().map(|st| st.rounds as u128 * st.local_steps as u128).sum();
    println!("total rounds: {rounds}");
    println!("total local steps per client: {steps}");
    Ok(())
}
