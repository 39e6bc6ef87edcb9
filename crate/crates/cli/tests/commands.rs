use std::path::{Path, PathBuf};
use std::process::Command;

use ding_cli::commands::{run_ablation, run_bias_scan, run_experiment, run_validate, CliError};
use ding_cli::output::{parse_run_csv, RUN_HEADER};
use ding_cli::{derive_rng, ExperimentConfig, Overrides};
use ding_core::MethodKind;
use rand::Rng;

fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_str_with_path(text, None).unwrap()
}

fn out(dir: &Path) -> Overrides {
    Overrides { out: Some(dir.to_path_buf()), ..Overrides::default() }
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const MINIMAL: &str = "[experiment]\nsamples = 200\nreference_samples = 200\n[prior]\npreset = \"correlated-2d\"\n[method]\nkind = \"ding\"\n";

#[test]
fn minimal_config_writes_one_row_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(config(MINIMAL), &out(dir.path())).unwrap();
    let text = std::fs::read_to_string(&outcome.csv_path).unwrap();
    assert_eq!(text.lines().next(), Some(RUN_HEADER));
    let rows = parse_run_csv(&text).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].method, "ding");
    assert_eq!(rows[0].nfe, 49);
    assert!(text.lines().nth(1).unwrap().ends_with(','), "runtime_ms is blank by default");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(outcome.manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["rng"]["algorithm"], "ChaCha20");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["nfe"]["ding"]["total"], 200 * 49);
}

#[test]
fn reruns_are_byte_identical_and_timestamps_stay_in_the_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let text = "experiment.seeds = [3, 4]\nexperiment.samples = 150\nexperiment.reference_samples = 150\n\
                prior.preset = \"gmm-2d\"\nmethod.kinds = [\"ding\", \"pnpflow\", \"mcgdiff\"]\n";
    let ra = run_experiment(config(text), &Overrides { workers: Some(1), ..out(a.path()) }).unwrap();
    let rb = run_experiment(config(text), &Overrides { workers: Some(3), ..out(b.path()) }).unwrap();
    assert_eq!(std::fs::read(ra.csv_path).unwrap(), std::fs::read(rb.csv_path).unwrap());
    assert_eq!(ra.manifest.config_hash, rb.manifest.config_hash);
}

#[test]
fn seed_override_changes_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(config(MINIMAL), &out(a.path())).unwrap();
    let rb = run_experiment(config(MINIMAL), &Overrides { seed: Some(99), ..out(b.path()) }).unwrap();
    assert_ne!(std::fs::read(ra.csv_path).unwrap(), std::fs::read(rb.csv_path).unwrap());
    assert_eq!(rb.manifest.master_seed, 99);
}

#[test]
fn ten_seeds_four_methods_give_forty_rows_and_analytic_nfe() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[experiment]\nseeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]\nsteps = 10\nsamples = 40\nreference_samples = 40\n\
                [prior]\npreset = \"correlated-2d\"\n\
                [method]\nkinds = [\"ding\", \"replacement\", \"flowdps\", \"dps-analytic\"]\n";
    let outcome = run_experiment(config(text), &out(dir.path())).unwrap();
    let rows = parse_run_csv(&std::fs::read_to_string(&outcome.csv_path).unwrap()).unwrap();
    assert_eq!(rows.len(), 40);
    let order: Vec<(String, u64)> = rows.iter().map(|r| (r.method.clone(), r.seed)).collect();
    let mut expected = Vec::new();
    for m in ["ding", "replacement", "flowdps", "dps-analytic"] {
        for s in 0..10 {
            expected.push((m.to_string(), s));
        }
    }
    assert_eq!(order, expected);
    for (name, total) in &outcome.manifest.nfe {
        let kind: MethodKind = name.parse().unwrap();
        assert_eq!(total.per_chain, kind.total_nfe(10));
        assert_eq!(total.per_chain, total.expected_per_chain);
        assert_eq!(total.total, 10 * 40 * kind.total_nfe(10));
    }
    assert_eq!(outcome.manifest.nfe["ding"].per_chain, 19);
    assert_eq!(outcome.manifest.nfe["replacement"].per_chain, 10);
}

#[test]
fn derived_streams_repeat_and_decorrelate() {
    let draws = |index| {
        let mut rng = derive_rng(42, index);
        (0..10_000).map(|_| rng.random::<f64>()).collect::<Vec<_>>()
    };
    let a = draws(0);
    assert_eq!(a[..100], draws(0)[..100]);
    let b = draws(1);
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    let rho = cov / (va * vb).sqrt();
    assert!(rho.abs() < 0.05, "rho = {rho}");
}

const SCAN: &str = "prior.kind = \"gaussian\"\nprior.d = 3\n";

#[test]
fn default_bias_scan_recovers_orders_and_the_epsilon_bound() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_bias_scan(config(SCAN), &out(dir.path())).unwrap();
    assert_eq!(outcome.instances.len(), 10);
    assert!(outcome.flags.is_empty(), "{:?}", outcome.flags);
    for inst in &outcome.instances {
        let (mean, cov) = inst.slopes.unwrap();
        assert!((3.7..=4.3).contains(&cov), "cov slope {cov}");
        assert!((1.7..=2.3).contains(&mean), "mean slope {mean}");
        assert!(inst.reports.iter().all(|r| r.epsilon_s <= r.epsilon_bound + 1e-10));
    }
    let csv = std::fs::read_to_string(outcome.csv_path).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10 * 12);
    assert_eq!(csv.lines().filter(|l| l.starts_with("slope,")).count(), 10);
}

#[test]
fn single_eta_scan_omits_slopes_and_flags_it() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{SCAN}bias_scan.points = 1\nbias_scan.instances = 2\n");
    let outcome = run_bias_scan(config(&text), &out(dir.path())).unwrap();
    assert!(outcome.instances.iter().all(|i| i.slopes.is_none()));
    assert_eq!(outcome.flags.len(), 2);
    let csv = std::fs::read_to_string(outcome.csv_path).unwrap();
    assert!(!csv.contains("slope"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn bias_scan_rejects_mixture_priors() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_bias_scan(config("prior.preset = \"gmm-2d\"\n"), &out(dir.path())).unwrap_err();
    assert!(err.to_string().contains("Gaussian prior"), "{err}");
}

#[test]
fn ablation_reports_every_kind_for_every_seed() {
    for second in ["max", "sqrt"] {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "experiment.seeds = [0, 1]\nexperiment.samples = 100\nexperiment.reference_samples = 100\n\
             prior.preset = \"gmm-2d\"\nablation.eta_kinds = [\"default\", \"{second}\"]\n"
        );
        let outcome = run_ablation(config(&text), &out(dir.path())).unwrap();
        let rows = parse_run_csv(&std::fs::read_to_string(&outcome.csv_path).unwrap()).unwrap();
        let kinds: Vec<(&str, u64)> = rows.iter().map(|r| (r.eta_kind.as_str(), r.seed)).collect();
        assert_eq!(kinds, vec![("default", 0), ("default", 1), (second, 0), (second, 1)]);
        assert!(rows.iter().all(|r| r.method == "ding" && r.sw.is_finite()));
    }
}

#[test]
fn ablation_needs_two_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let err = run_ablation(config("prior.preset = \"gmm-2d\"\nablation.eta_kinds = [\"max\"]\n"), &out(dir.path())).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
}

#[test]
fn validate_flags_inadmissible_eta() {
    let ok = run_validate(&config(MINIMAL), &Overrides::default()).unwrap();
    assert!(ok.problems.is_empty(), "{:?}", ok.problems);
    let bad = run_validate(&config("prior.preset = \"correlated-2d\"\nschedule.eta = \"ddpm-scaled(3)\"\n"), &Overrides::default()).unwrap();
    assert!(!bad.problems.is_empty());
}

#[test]
fn pgm_dumps_follow_the_configured_grid() {
    let dir = tempfile::tempdir().unwrap();
    let text = "experiment.samples = 50\nexperiment.reference_samples = 50\n\
                prior.kind = \"gaussian\"\nprior.d = 6\ntask.masked = [1, 2, 4]\n\
                output.dump_pgm = true\noutput.grid = [3, 2]\n";
    let outcome = run_experiment(config(text), &out(dir.path())).unwrap();
    for name in ["x_star.pgm", "posterior_mean.pgm", "ding_seed0_mean.pgm", "ding_seed0_chain0.pgm"] {
        let bytes = std::fs::read(dir.path().join("images").join(name)).unwrap();
        assert!(bytes.starts_with(b"P5"), "{name}");
        assert!(dir.path().join("images").join(format!("{name}.range")).exists());
    }
    assert!(outcome.manifest.artifacts.len() >= 5);
}

#[test]
fn pgm_masks_are_downsampled_into_the_task() {
    let dir = tempfile::tempdir().unwrap();
    // 4x2 pixels, right half observed, factor 2 -> 2x1 latent grid
    let mut pgm = b"P5\n4 2\n255\n".to_vec();
    pgm.extend_from_slice(&[0, 0, 255, 255, 0, 0, 255, 255]);
    std::fs::write(dir.path().join("mask.pgm"), pgm).unwrap();
    let path = write_config(
        dir.path(),
        "experiment.samples = 50\nexperiment.reference_samples = 50\nprior.preset = \"correlated-2d\"\n\
         task.mask_pgm = \"mask.pgm\"\ntask.downsample_factor = 2\n",
    );
    let cfg = ExperimentConfig::from_path(&path).unwrap();
    let bench = ding_cli::bench::build_benchmark(&cfg, 0).unwrap();
    assert_eq!(bench.grid, Some((2, 1)));
    assert_eq!(bench.task.observed(), &[1]);
}

fn ding(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ding")).args(args).output().unwrap()
}

#[test]
fn binary_reports_config_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "[prior]\npreset = \"correlated-2d\"\n[method]\nkind = \"nope\"\n");
    let output = ding(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("config.toml:4"), "{stderr}");
}

#[test]
fn binary_run_and_validate_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), MINIMAL);
    let p = path.to_str().unwrap();
    let outdir = dir.path().join("out");
    let output = ding(&["run", "--config", p, "--out", outdir.to_str().unwrap(), "--workers", "2"]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(outdir.join("results.csv").exists() && outdir.join("manifest.json").exists());
    assert!(ding(&["validate", "--config", p]).status.success());
    let bad = write_config(dir.path(), "prior.preset = \"correlated-2d\"\nschedule.eta = \"ddpm-scaled(3)\"\n");
    assert_eq!(ding(&["validate", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
}
