//! End-to-end checks on scheduling, the experiment harness and the CLI.

use std::fs;
use std::process::Command;

use mmnoma::channel::GainMatrix;
use mmnoma::harness::{run_experiment, run_trials, ExperimentConfig, Pipeline, TrialResult};
use mmnoma::rates::{achievable_rates, Assignment};
use mmnoma::scheduler::random_schedule;

fn small_config(out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig { trials: 6, snr_db_list: vec![10.0, 20.0], output: out.to_path_buf(), ..Default::default() }
}

fn rate_of(t: &TrialResult, p: Pipeline, snr: f64) -> f64 {
    t.results.iter().find(|r| r.pipeline == p && r.snr_db == snr).unwrap().sum_rate
}

#[test]
fn random_schedule_places_users_uniformly() {
    let g = GainMatrix::from_rows((0..6).map(|k| vec![1.0 + k as f64, 2.0]).collect()).unwrap();
    let quotas = [2, 1];
    let draws = 10_000;
    let mut counts = vec![[0usize; 2]; 6];
    for seed in 0..draws {
        let a = random_schedule(&g, &quotas, seed).unwrap();
        for (k, c) in counts.iter_mut().enumerate() {
            if let Some(m) = a.beam_of(k) {
                c[m] += 1;
            }
        }
    }
    let n = draws as f64;
    for (m, p) in [(0, 2.0 / 6.0), (1, 1.0 / 6.0)] {
        let sd = (n * p * (1.0 - p)).sqrt();
        for c in &counts {
            assert!((c[m] as f64 - n * p).abs() <= 3.0 * sd, "beam {m}: {} vs {}", c[m], n * p);
        }
    }
}

#[test]
fn per_trial_orderings_hold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for t in run_trials(&cfg).unwrap() {
        for &snr in &cfg.snr_db_list {
            let exhaust = rate_of(&t, Pipeline::ExhaustBb, snr);
            let bb = rate_of(&t, Pipeline::MatchingBb, snr);
            let sca = rate_of(&t, Pipeline::MatchingSca, snr);
            let fixed = rate_of(&t, Pipeline::MatchingFixed, snr);
            assert!(exhaust >= bb - cfg.epsilon, "trial {} snr {snr}: {exhaust} < {bb}", t.trial);
            assert!(sca >= fixed - 1e-9, "trial {} snr {snr}: {sca} < {fixed}", t.trial);
        }
    }
}

#[test]
fn recorded_sum_rates_follow_from_assignment_and_power() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut checked = 0;
    for t in run_trials(&cfg).unwrap() {
        let g = mmnoma::harness::trial_gains(&cfg, t.seed).unwrap();
        for r in &t.results {
            if let (Some(a), Some(p), true) = (&r.assignment, &r.power, r.feasible) {
                let rates = achievable_rates(&g, a, p, cfg.noise_power).unwrap();
                assert!((rates.sum_rate() - r.sum_rate).abs() <= 1e-6, "{:?}", r.pipeline);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn aggregate_csv_is_reproducible() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o1 = run_experiment(&small_config(d1.path())).unwrap();
    let o2 = run_experiment(&small_config(d2.path())).unwrap();
    assert_eq!(fs::read(o1.aggregate_path).unwrap(), fs::read(o2.aggregate_path).unwrap());
}

fn write_instance(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let g = GainMatrix::from_rows(vec![vec![0.5, 0.01], vec![4.0, 0.02], vec![0.03, 2.0]]).unwrap();
    let a = Assignment::new(3, vec![2, 1], vec![vec![0, 1], vec![2]]).unwrap();
    let gains = dir.join("gains.csv");
    let assignment = dir.join("assignment.json");
    g.write_csv(fs::File::create(&gains).unwrap()).unwrap();
    fs::write(&assignment, a.to_json().unwrap()).unwrap();
    (gains, assignment)
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mmnoma"))
}

#[test]
fn cli_solve_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let (gains, assignment) = write_instance(dir.path());
    for method in ["bb", "sca", "fixed", "oma"] {
        let out = cli()
            .args(["solve", "--power", "4", "--rate-threshold", "0.05", "--method", method])
            .arg("--gains")
            .arg(&gains)
            .arg("--assignment")
            .arg(&assignment)
            .output()
            .unwrap();
        assert!(out.status.success(), "{method}: {}", String::from_utf8_lossy(&out.stderr));
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(v["sum_rate_bps_hz"].as_f64().unwrap() > 0.0, "{method}: {v}");
    }
}

#[test]
fn cli_trace_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (gains, assignment) = write_instance(dir.path());
    for (method, header) in [("bb", "iteration,upper,lower,gap,open_nodes"), ("sca", "iteration")] {
        let path = dir.path().join(format!("{method}.csv"));
        let status = cli()
            .args(["trace", "--power", "4", "--method", method])
            .arg("--gains")
            .arg(&gains)
            .arg("--assignment")
            .arg(&assignment)
            .arg("--out")
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success());
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(header), "{text}");
        assert!(text.lines().count() >= 2);
    }
}

#[test]
fn cli_run_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["run", "--trials", "2", "--pipelines", "matching_sca,oma", "--snr-list", "-5,10"])
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let agg = fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 2 * 2);
    let results = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn cli_rejects_unknown_pipeline() {
    let out = cli().args(["run", "--pipelines", "nope"]).output().unwrap();
    assert!(!out.status.success());
}
