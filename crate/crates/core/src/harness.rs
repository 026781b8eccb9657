//! Monte Carlo experiments: configuration, seeding, the scheduling and power
//! allocation pipelines, and CSV output.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bb::{solve_bb, BbReport};
use crate::channel::{draw_beams, draw_channel, equivalent_gains, ChannelParams, GainMatrix};
use crate::error::{Error, Result};
use crate::rates::{achievable_rates, qos_ok, sic_order_ok, Assignment, PowerAllocation, QOS_TOL};
use crate::sca::{solve_sca, ScaReport};
use crate::scheduler::{
    effective_gain_order, exhaustive_schedule, fixed_power_allocation, matching_schedule, random_schedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    ExhaustBb,
    MatchingBb,
    MatchingSca,
    MatchingFixed,
    RandomFixed,
    Oma,
}

impl Pipeline {
    pub const ALL: [Pipeline; 6] = [
        Pipeline::ExhaustBb,
        Pipeline::MatchingBb,
        Pipeline::MatchingSca,
        Pipeline::MatchingFixed,
        Pipeline::RandomFixed,
        Pipeline::Oma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::ExhaustBb => "exhaust_bb",
            Pipeline::MatchingBb => "matching_bb",
            Pipeline::MatchingSca => "matching_sca",
            Pipeline::MatchingFixed => "matching_fixed",
            Pipeline::RandomFixed => "random_fixed",
            Pipeline::Oma => "oma",
        }
    }

    fn uses_matching(self) -> bool {
        matches!(self, Pipeline::MatchingBb | Pipeline::MatchingSca | Pipeline::MatchingFixed | Pipeline::Oma)
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown pipeline '{s}'")))
    }
}

/// Experiment settings. Every key is optional in a config file; missing keys
/// take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_beams: usize,
    pub num_users: usize,
    /// Users per beam, the same for every beam.
    pub quota: usize,
    pub num_paths: usize,
    pub carrier_frequency_hz: f64,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    pub cell_radius_m: f64,
    /// Carried into outputs as metadata; rates are per Hz.
    pub bandwidth_hz: f64,
    pub noise_power: f64,
    pub snr_db_list: Vec<f64>,
    /// Per-user rate floor in bits/s/Hz.
    pub rate_threshold: f64,
    pub epsilon: f64,
    pub epsilon_prime: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub pipelines: Vec<Pipeline>,
    /// Output directory for `results.csv` and `aggregate.csv`.
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            num_beams: 2,
            num_users: 4,
            quota: 2,
            num_paths: 3,
            carrier_frequency_hz: 28.0e9,
            alpha_los: 2.0,
            alpha_nlos: 3.0,
            cell_radius_m: 10.0,
            bandwidth_hz: 100.0e6,
            noise_power: 1.0,
            snr_db_list: vec![0.0, 10.0],
            rate_threshold: 0.1,
            epsilon: crate::bb::DEFAULT_EPSILON,
            epsilon_prime: crate::sca::DEFAULT_EPSILON_PRIME,
            trials: 10,
            master_seed: 1,
            pipelines: Pipeline::ALL.to_vec(),
            output: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn channel_params(&self) -> ChannelParams {
        ChannelParams {
            carrier_frequency_hz: self.carrier_frequency_hz,
            num_paths: self.num_paths,
            alpha_los: self.alpha_los,
            alpha_nlos: self.alpha_nlos,
            cell_radius_m: self.cell_radius_m,
            num_antennas: self.num_beams,
            noise_power: self.noise_power,
        }
    }

    pub fn quotas(&self) -> Vec<usize> {
        vec![self.quota; self.num_beams]
    }

    pub fn validate(&self) -> Result<()> {
        self.channel_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.quota == 0 {
            return Err(Error::Config("quota must be at least 1".into()));
        }
        if self.num_users < self.quota * self.num_beams {
            return Err(Error::Config(format!(
                "{} users cannot fill {} beams of {} users",
                self.num_users, self.num_beams, self.quota
            )));
        }
        if self.snr_db_list.is_empty() || self.snr_db_list.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("snr_db_list needs at least one finite value".into()));
        }
        if !(self.rate_threshold >= 0.0 && self.rate_threshold.is_finite()) {
            return Err(Error::Config("rate_threshold must be finite and nonnegative".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon_prime > 0.0) {
            return Err(Error::Config("epsilon and epsilon_prime must be positive".into()));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::Config("bandwidth_hz must be positive".into()));
        }
        if self.trials == 0 || self.pipelines.is_empty() {
            return Err(Error::Config("need at least one trial and one pipeline".into()));
        }
        Ok(())
    }
}

/// `P_tot = 10^(snr/10) sigma^2 M / eta`.
pub fn transmit_power_from_snr(snr_db: f64, noise_power: f64, num_beams: usize, eta: f64) -> f64 {
    10f64.powf(snr_db / 10.0) * noise_power * num_beams as f64 / eta
}

pub fn snr_from_transmit_power(p_tot: f64, noise_power: f64, num_beams: usize, eta: f64) -> f64 {
    10.0 * (p_tot * eta / (noise_power * num_beams as f64)).log10()
}

/// Per-user rates of time-shared orthogonal access on the same schedule:
/// every loaded beam transmits `p_tot / M`, and each of a beam's `q_m` users
/// holds it for a `1 / q_m` share of the time while the other loaded beams
/// interfere. Entries follow the slot order of `a`.
pub fn oma_rates(g: &GainMatrix, a: &Assignment, p_tot: f64, noise_power: f64) -> Result<Vec<f64>> {
    if g.num_users() != a.num_users() || g.num_beams() != a.num_beams() {
        return Err(Error::Dimension("gain matrix does not match the assignment".into()));
    }
    let beam_power = p_tot / a.num_beams() as f64;
    let loaded: Vec<usize> = (0..a.num_beams()).filter(|&m| !a.beam_users(m).is_empty()).collect();
    let mut rates = Vec::with_capacity(a.num_scheduled());
    for (m, users) in a.beams().iter().enumerate() {
        for &k in users {
            let interference: f64 = loaded.iter().filter(|&&n| n != m).map(|&n| g.get(k, n) * beam_power).sum();
            let sinr = g.get(k, m) * beam_power / (interference + noise_power);
            rates.push((1.0 + sinr).log2() / users.len() as f64);
        }
    }
    Ok(rates)
}

/// Sum of [`oma_rates`].
pub fn oma_baseline(g: &GainMatrix, a: &Assignment, p_tot: f64, noise_power: f64) -> Result<f64> {
    Ok(oma_rates(g, a, p_tot, noise_power)?.iter().sum())
}

/// Seed of trial `trial`: the first output of stream `trial` of a ChaCha8
/// generator keyed by the master seed.
pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial as u64);
    rng.next_u64()
}

/// Channel and beams of one trial, shared by every SNR point.
pub fn trial_gains(cfg: &ExperimentConfig, seed: u64) -> Result<GainMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channel = draw_channel(&cfg.channel_params(), cfg.num_users, rng.next_u64())?;
    let beams = draw_beams(cfg.num_beams, rng.next_u64())?;
    equivalent_gains(&channel, &beams)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub pipeline: Pipeline,
    pub snr_db: f64,
    pub sum_rate: f64,
    pub served_users: usize,
    pub iterations: usize,
    pub wall_ms: f64,
    /// Rate floors (and for NOMA the SIC conditions) all hold; when false the
    /// sum rate is recorded as zero.
    pub feasible: bool,
    pub assignment: Option<Assignment>,
    /// Slot powers; absent for the OMA baseline and for failures.
    pub power: Option<PowerAllocation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub results: Vec<PipelineResult>,
}

/// Inputs shared by every pipeline at one SNR point.
struct Instance<'a> {
    cfg: &'a ExperimentConfig,
    g: &'a GainMatrix,
    seed: u64,
    snr_db: f64,
    p_tot: f64,
}

impl Instance<'_> {
    fn floors(&self, a: &Assignment) -> Vec<f64> {
        vec![self.cfg.rate_threshold; a.num_scheduled()]
    }

    /// Result for a NOMA allocation, with the sum rate re-derived from it. An
    /// allocation missing a rate floor or an SIC condition scores zero.
    fn noma(&self, pipeline: Pipeline, a: Assignment, p: PowerAllocation, iterations: usize) -> Result<PipelineResult> {
        let rates = achievable_rates(self.g, &a, &p, self.cfg.noise_power)?;
        let feasible = qos_ok(&rates, &self.floors(&a)) && sic_order_ok(self.g, &a, &p, self.cfg.noise_power)?.ok;
        if !feasible {
            return Ok(self.failed(pipeline, Some(a), iterations, None));
        }
        Ok(PipelineResult {
            pipeline,
            snr_db: self.snr_db,
            sum_rate: rates.sum_rate(),
            served_users: rates.rate.iter().filter(|r| **r > 0.0).count(),
            iterations,
            wall_ms: 0.0,
            feasible: true,
            assignment: Some(a),
            power: Some(p),
            error: None,
        })
    }

    fn failed(&self, pipeline: Pipeline, a: Option<Assignment>, iterations: usize, err: Option<Error>) -> PipelineResult {
        PipelineResult {
            pipeline,
            snr_db: self.snr_db,
            sum_rate: 0.0,
            served_users: 0,
            iterations,
            wall_ms: 0.0,
            feasible: false,
            assignment: a,
            power: None,
            error: err.map(|e| e.to_string()),
        }
    }

    fn solved_by_bb(&self, pipeline: Pipeline, a: Assignment, report: BbReport) -> Result<PipelineResult> {
        match report.best_power {
            Some(p) => self.noma(pipeline, a, p, report.iterations),
            None => Ok(self.failed(pipeline, Some(a), report.iterations, None)),
        }
    }

    fn run(&self, pipeline: Pipeline, matched: Option<&(Assignment, usize)>) -> Result<PipelineResult> {
        let noise = self.cfg.noise_power;
        let quotas = self.cfg.quotas();
        match pipeline {
            Pipeline::ExhaustBb => {
                let floors = vec![self.cfg.rate_threshold; self.g.num_users()];
                let out = exhaustive_schedule(self.g, &quotas, &floors, self.p_tot, noise, self.cfg.epsilon)?;
                match out.assignment {
                    Some(a) => self.solved_by_bb(pipeline, a, out.report),
                    None => Ok(self.failed(pipeline, None, out.candidates, None)),
                }
            }
            Pipeline::RandomFixed => {
                // Same decoding-order rule as the matched schedules.
                let drawn = random_schedule(self.g, &quotas, self.seed)?;
                let a = effective_gain_order(&drawn, self.g, self.p_tot, noise)?;
                let p = fixed_power_allocation(&a, self.p_tot)?;
                self.noma(pipeline, a, p, 0)
            }
            _ => {
                let (a, swaps) = matched.cloned().expect("matching computed for matching pipelines");
                match pipeline {
                    Pipeline::MatchingBb => {
                        let report = solve_bb(self.g, &a, &self.floors(&a), self.p_tot, noise, self.cfg.epsilon)?;
                        self.solved_by_bb(pipeline, a, report)
                    }
                    Pipeline::MatchingSca => {
                        match solve_sca(self.g, &a, &self.floors(&a), self.p_tot, noise, self.cfg.epsilon_prime) {
                            Ok(r) => self.noma(pipeline, a, r.power, r.iterations),
                            Err(e) => Ok(self.failed(pipeline, Some(a), 0, Some(e))),
                        }
                    }
                    Pipeline::MatchingFixed => {
                        let p = fixed_power_allocation(&a, self.p_tot)?;
                        self.noma(pipeline, a, p, swaps)
                    }
                    Pipeline::Oma => {
                        // Same rate floors as the NOMA pipelines.
                        let rates = oma_rates(self.g, &a, self.p_tot, noise)?;
                        if rates.iter().any(|r| *r < self.cfg.rate_threshold - QOS_TOL) {
                            return Ok(self.failed(pipeline, Some(a), 0, None));
                        }
                        Ok(PipelineResult {
                            pipeline,
                            snr_db: self.snr_db,
                            sum_rate: rates.iter().sum(),
                            served_users: a.num_scheduled(),
                            iterations: 0,
                            wall_ms: 0.0,
                            feasible: true,
                            assignment: Some(a),
                            power: None,
                            error: None,
                        })
                    }
                    Pipeline::ExhaustBb | Pipeline::RandomFixed => unreachable!(),
                }
            }
        }
    }
}

/// Runs every configured pipeline at every SNR point of one trial. Pipeline
/// failures are recorded as infeasible rows.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<TrialResult> {
    let seed = trial_seed(cfg.master_seed, trial);
    let g = trial_gains(cfg, seed)?;
    let eta = cfg.channel_params().eta();
    let mut results = Vec::new();
    for &snr_db in &cfg.snr_db_list {
        let p_tot = transmit_power_from_snr(snr_db, cfg.noise_power, cfg.num_beams, eta);
        let inst = Instance { cfg, g: &g, seed, snr_db, p_tot };
        // The matching depends on the power budget, so it is redone per SNR.
        let mut matching_ms = 0.0;
        let matched = if cfg.pipelines.iter().any(|p| p.uses_matching()) {
            let start = Instant::now();
            let out = matching_schedule(&g, &cfg.quotas(), p_tot, cfg.noise_power)?;
            matching_ms = start.elapsed().as_secs_f64() * 1e3;
            Some((out.assignment, out.swaps.len()))
        } else {
            None
        };
        for &pipeline in &cfg.pipelines {
            let start = Instant::now();
            let mut r = inst
                .run(pipeline, matched.as_ref())
                .unwrap_or_else(|e| inst.failed(pipeline, None, 0, Some(e)));
            r.wall_ms = start.elapsed().as_secs_f64() * 1e3 + if pipeline.uses_matching() { matching_ms } else { 0.0 };
            results.push(r);
        }
    }
    Ok(TrialResult { trial, seed, results })
}

/// All trials, in trial order regardless of how they were scheduled.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialResult>> {
    cfg.validate()?;
    (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, t)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub pipeline: Pipeline,
    pub snr_db: f64,
    pub trials: usize,
    pub mean_sum_rate: f64,
    /// Half-width of the normal-approximation 95% interval of the mean.
    pub ci95: f64,
    pub feasible_fraction: f64,
    pub mean_served_users: f64,
}

/// Mean and 95% interval per (pipeline, SNR), in configuration order.
pub fn aggregate(cfg: &ExperimentConfig, trials: &[TrialResult]) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &pipeline in &cfg.pipelines {
        for &snr_db in &cfg.snr_db_list {
            let rows: Vec<&PipelineResult> = trials
                .iter()
                .flat_map(|t| &t.results)
                .filter(|r| r.pipeline == pipeline && r.snr_db == snr_db)
                .collect();
            let n = rows.len();
            if n == 0 {
                continue;
            }
            let nf = n as f64;
            let mean = rows.iter().map(|r| r.sum_rate).sum::<f64>() / nf;
            let ci95 = if n > 1 {
                let var = rows.iter().map(|r| (r.sum_rate - mean).powi(2)).sum::<f64>() / (nf - 1.0);
                1.96 * (var / nf).sqrt()
            } else {
                0.0
            };
            out.push(Aggregate {
                pipeline,
                snr_db,
                trials: n,
                mean_sum_rate: mean,
                ci95,
                feasible_fraction: rows.iter().filter(|r| r.feasible).count() as f64 / nf,
                mean_served_users: rows.iter().map(|r| r.served_users as f64).sum::<f64>() / nf,
            });
        }
    }
    out
}

pub fn write_results_csv<W: Write>(writer: W, trials: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["trial", "seed", "pipeline", "snr_db", "sum_rate_bps_hz", "served_users", "iterations", "wall_ms", "feasible"])?;
    for t in trials {
        for r in &t.results {
            w.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                r.pipeline.to_string(),
                r.snr_db.to_string(),
                r.sum_rate.to_string(),
                r.served_users.to_string(),
                r.iterations.to_string(),
                format!("{:.3}", r.wall_ms),
                r.feasible.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock free, so identical configs give identical bytes.
pub fn write_aggregate_csv<W: Write>(writer: W, aggregates: &[Aggregate]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["pipeline", "snr_db", "trials", "mean_sum_rate_bps_hz", "ci95_bps_hz", "feasible_fraction", "mean_served_users"])?;
    for a in aggregates {
        w.write_record([
            a.pipeline.to_string(),
            a.snr_db.to_string(),
            a.trials.to_string(),
            a.mean_sum_rate.to_string(),
            a.ci95.to_string(),
            a.feasible_fraction.to_string(),
            a.mean_served_users.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub trials: Vec<TrialResult>,
    pub aggregates: Vec<Aggregate>,
    pub results_path: PathBuf,
    pub aggregate_path: PathBuf,
}

/// Runs all trials and writes `results.csv` and `aggregate.csv` into
/// `cfg.output`, creating the directory if needed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let trials = run_trials(cfg)?;
    let aggregates = aggregate(cfg, &trials);
    fs::create_dir_all(&cfg.output)?;
    let results_path = cfg.output.join("results.csv");
    let aggregate_path = cfg.output.join("aggregate.csv");
    write_results_csv(fs::File::create(&results_path)?, &trials)?;
    write_aggregate_csv(fs::File::create(&aggregate_path)?, &aggregates)?;
    Ok(ExperimentOutput { trials, aggregates, results_path, aggregate_path })
}

/// Branch-and-bound gap history as CSV.
pub fn write_bb_trace<W: Write>(writer: W, report: &BbReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "upper", "lower", "gap", "open_nodes"])?;
    for r in &report.gap_history {
        w.write_record([
            r.iteration.to_string(),
            r.upper.to_string(),
            r.lower.to_string(),
            (r.upper - r.lower).to_string(),
            r.open_nodes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// SCA sum-rate history as CSV; row 0 is the starting point.
pub fn write_sca_trace<W: Write>(writer: W, report: &ScaReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "sum_rate_bps_hz"])?;
    for (i, v) in report.objective_history.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
