use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use mmnoma::bb::solve_bb;
use mmnoma::channel::GainMatrix;
use mmnoma::harness::{oma_baseline, run_experiment, write_bb_trace, write_sca_trace, ExperimentConfig, Pipeline};
use mmnoma::rates::{achievable_rates, sic_order_ok, Assignment};
use mmnoma::sca::solve_sca;
use mmnoma::scheduler::fixed_power_allocation;
use mmnoma::{Error, Result};

#[derive(Parser)]
#[command(name = "mmnoma", version, about = "Downlink mmWave NOMA scheduling and power allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write results.csv and aggregate.csv.
    Run(RunArgs),
    /// Allocate power for one schedule given as gains CSV and assignment JSON.
    Solve(SolveArgs),
    /// Write the convergence history of one solve as CSV.
    Trace(TraceArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated pipelines: exhaust_bb, matching_bb, matching_sca, matching_fixed, random_fixed, oma.
    #[arg(long, value_delimiter = ',')]
    pipelines: Option<Vec<String>>,
    /// Comma-separated SNR points in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_list: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    beams: Option<usize>,
    /// Users per beam.
    #[arg(long)]
    quota: Option<usize>,
    /// Per-user rate floor in bits/s/Hz.
    #[arg(long)]
    rate_threshold: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Bb,
    Sca,
    Fixed,
    Oma,
}

#[derive(clap::Args)]
struct InstanceArgs {
    /// K x M gains CSV.
    #[arg(long)]
    gains: PathBuf,
    /// Assignment JSON with beam lists in decoding order.
    #[arg(long)]
    assignment: PathBuf,
    /// Total transmit power.
    #[arg(long)]
    power: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Per-user rate floor in bits/s/Hz.
    #[arg(long, default_value_t = 0.0)]
    rate_threshold: f64,
    /// Branch-and-bound tolerance.
    #[arg(long, default_value_t = mmnoma::bb::DEFAULT_EPSILON)]
    epsilon: f64,
    /// SCA relative-change tolerance.
    #[arg(long, default_value_t = mmnoma::sca::DEFAULT_EPSILON_PRIME)]
    epsilon_prime: f64,
}

impl InstanceArgs {
    fn load(&self) -> Result<(GainMatrix, Assignment)> {
        let g = GainMatrix::load(&self.gains)?;
        let a = Assignment::from_json(&fs::read_to_string(&self.assignment)?)?;
        if a.num_users() != g.num_users() || a.num_beams() != g.num_beams() {
            return Err(Error::Dimension("assignment does not match the gains file".into()));
        }
        Ok((g, a))
    }

    fn floors(&self, a: &Assignment) -> Vec<f64> {
        vec![self.rate_threshold; a.num_scheduled()]
    }
}

#[derive(clap::Args)]
struct SolveArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_enum, default_value = "bb")]
    method: Method,
}

#[derive(Clone, Copy, ValueEnum)]
enum TraceMethod {
    Bb,
    Sca,
}

#[derive(clap::Args)]
struct TraceArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[arg(long, value_enum, default_value = "bb")]
    method: TraceMethod,
    /// Trace CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = &args.pipelines {
        cfg.pipelines = v.iter().map(|s| s.parse::<Pipeline>()).collect::<Result<_>>()?;
    }
    if let Some(v) = args.snr_list {
        cfg.snr_db_list = v;
    }
    if let Some(v) = args.out {
        cfg.output = v;
    }
    if let Some(v) = args.users {
        cfg.num_users = v;
    }
    if let Some(v) = args.beams {
        cfg.num_beams = v;
    }
    if let Some(v) = args.quota {
        cfg.quota = v;
    }
    if let Some(v) = args.rate_threshold {
        cfg.rate_threshold = v;
    }
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    for a in &out.aggregates {
        println!(
            "{:<15} snr {:>6} dB  mean {:>9.4} +/- {:.4} bits/s/Hz  feasible {:.2}",
            a.pipeline.name(),
            a.snr_db,
            a.mean_sum_rate,
            a.ci95,
            a.feasible_fraction
        );
    }
    println!("wrote {} and {}", out.results_path.display(), out.aggregate_path.display());
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let inst = &args.instance;
    let (g, a) = inst.load()?;
    let floors = inst.floors(&a);
    let (power, iterations, status) = match args.method {
        Method::Bb => {
            let r = solve_bb(&g, &a, &floors, inst.power, inst.noise, inst.epsilon)?;
            let status = format!("{:?}", r.status);
            (r.best_power, r.iterations, status)
        }
        Method::Sca => {
            let r = solve_sca(&g, &a, &floors, inst.power, inst.noise, inst.epsilon_prime)?;
            let status = if r.converged { "Converged" } else { "IterationCap" };
            (Some(r.power), r.iterations, status.to_string())
        }
        Method::Fixed => (Some(fixed_power_allocation(&a, inst.power)?), 0, "Fixed".to_string()),
        Method::Oma => {
            let rate = oma_baseline(&g, &a, inst.power, inst.noise)?;
            println!("{}", json!({ "method": "oma", "sum_rate_bps_hz": rate }));
            return Ok(());
        }
    };
    let report = match power {
        Some(p) => {
            let rates = achievable_rates(&g, &a, &p, inst.noise)?;
            json!({
                "status": status,
                "iterations": iterations,
                "sum_rate_bps_hz": rates.sum_rate(),
                "power": p.as_slice(),
                "sinr": rates.sinr,
                "rate": rates.rate,
                "sic_order_ok": sic_order_ok(&g, &a, &p, inst.noise)?.ok,
            })
        }
        None => json!({ "status": status, "iterations": iterations, "sum_rate_bps_hz": 0.0, "power": null }),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn trace(args: TraceArgs) -> Result<()> {
    let inst = &args.instance;
    let (g, a) = inst.load()?;
    let floors = inst.floors(&a);
    let sink: Box<dyn io::Write> = match &args.out {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(io::stdout()),
    };
    match args.method {
        TraceMethod::Bb => write_bb_trace(sink, &solve_bb(&g, &a, &floors, inst.power, inst.noise, inst.epsilon)?),
        TraceMethod::Sca => write_sca_trace(sink, &solve_sca(&g, &a, &floors, inst.power, inst.noise, inst.epsilon_prime)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Solve(a) => solve(a),
        Command::Trace(a) => trace(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
