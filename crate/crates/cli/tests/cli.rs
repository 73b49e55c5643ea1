//! Command plumbing tests on small, fast configurations.

use std::path::{Path, PathBuf};

use uqsindy_cli::config::{load_config, RunConfig};
use uqsindy_cli::{
    run_baseline, run_diagnostics, run_fit, run_predict, run_simulate, CliError, Overrides,
};

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("uqsindy_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_lv_config(dir: &Path, prior: &str, noise_sigma: f64) -> PathBuf {
    let config = format!(
        r#"{{
  "dataset": {{
    "generator": {{
      "system": "lotka_volterra",
      "params": [1.0, 0.1, 1.5, 0.075],
      "x0": [10.0, 5.0],
      "t_start": 0.0, "t_end": 6.0, "n_samples": 13,
      "noise": {{ "kind": "lognormal_multiplicative", "sigma": {noise_sigma}, "seed": 9 }}
    }}
  }},
  "normalize": true,
  "library": {{ "max_degree": 2 }},
  "prior": {prior},
  "observation": {{ "kind": "lognormal", "noise_prior": {{ "dist": "lognormal", "mu": -1.0, "sigma": 0.1 }} }},
  "x0_prior": {{ "dist": "lognormal", "mu": 0.0, "sigma": 1.0 }},
  "sampler": {{ "n_warmup": 80, "n_draws": 80, "n_chains": 2, "seed": 5 }},
  "integrator": {{ "rel_tol": 1e-5, "abs_tol": 1e-7, "max_steps": 2000 }},
  "output_dir": "{}"
}}"#,
        dir.display()
    );
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn config_round_trips_through_serde() {
    for name in [
        "experiments/lotka_volterra.json",
        "experiments/lotka_volterra_rh.json",
        "experiments/oscillator.json",
        "experiments/oscillator_scaled.json",
        "experiments/oscillator_scaled_rh.json",
        "experiments/lynx_hare.json",
    ] {
        let path = repo_path(name);
        let cfg: RunConfig = load_config(&path).unwrap();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        let again = serde_json::to_string(&back).unwrap();
        assert_eq!(text, again, "{name} must round-trip");
    }
}

#[test]
fn malformed_config_reports_field_path() {
    let dir = temp_dir("badcfg");
    let path = dir.join("bad.json");
    std::fs::write(
        &path,
        r#"{ "dataset": { "csv": "x.csv" }, "normalize": true,
             "library": { "max_degree": 2 },
             "prior": { "kind": "spike_slab", "pi": "not a number" },
             "observation": { "kind": "normal", "noise_prior": { "dist": "half_cauchy", "scale": 1.0 } },
             "x0_prior": { "dist": "normal", "mu": 0.0, "sigma": 1.0 },
             "output_dir": "out" }"#,
    )
    .unwrap();
    let err = load_config::<RunConfig>(&path).unwrap_err();
    match &err {
        CliError::Config { field, .. } => {
            assert!(field.contains("prior"), "field path was {field}");
        }
        other => panic!("unexpected error {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = temp_dir("unknown");
    let path = dir.join("unknown.json");
    std::fs::write(
        &path,
        r#"{ "dataset": { "csv": "x.csv" }, "normalize": true, "typo_field": 1,
             "library": { "max_degree": 2 },
             "prior": { "kind": "normal_reference" },
             "observation": { "kind": "normal", "noise_prior": { "dist": "half_cauchy", "scale": 1.0 } },
             "x0_prior": { "dist": "normal", "mu": 0.0, "sigma": 1.0 },
             "output_dir": "out" }"#,
    )
    .unwrap();
    assert!(load_config::<RunConfig>(&path).is_err());
}

#[test]
fn simulate_is_reproducible_and_noise_free_matches_clean() {
    let dir = temp_dir("sim");
    let config = small_lv_config(&dir, r#"{ "kind": "normal_reference" }"#, 0.1);

    let out_a = dir.join("a");
    let out_b = dir.join("b");
    run_simulate(&config, Some(&out_a), Overrides::default()).unwrap();
    run_simulate(&config, Some(&out_b), Overrides::default()).unwrap();
    let noisy_a = std::fs::read_to_string(out_a.join("noisy.csv")).unwrap();
    let noisy_b = std::fs::read_to_string(out_b.join("noisy.csv")).unwrap();
    assert_eq!(noisy_a, noisy_b);

    // Removing the noise block makes noisy.csv identical to clean.csv.
    let text = std::fs::read_to_string(&config).unwrap();
    let quiet = text.replace(
        r#""noise": { "kind": "lognormal_multiplicative", "sigma": 0.1, "seed": 9 }"#,
        r#""noise": null"#,
    );
    let quiet_path = dir.join("quiet.json");
    std::fs::write(&quiet_path, quiet).unwrap();
    let out_q = dir.join("q");
    run_simulate(&quiet_path, Some(&out_q), Overrides::default()).unwrap();
    let clean = std::fs::read_to_string(out_q.join("clean.csv")).unwrap();
    let noisy = std::fs::read_to_string(out_q.join("noisy.csv")).unwrap();
    assert_eq!(clean, noisy);

    let provenance = std::fs::read_to_string(out_q.join("provenance.json")).unwrap();
    assert!(provenance.contains("\"command\": \"simulate\""));
}

#[test]
fn baseline_recovers_noise_free_dynamics() {
    let dir = temp_dir("baseline");
    let config = format!(
        r#"{{
  "dataset": {{
    "generator": {{
      "system": "lotka_volterra",
      "params": [1.0, 0.1, 1.5, 0.075],
      "x0": [10.0, 5.0],
      "t_start": 0.0, "t_end": 24.0, "n_samples": 2000,
      "noise": null
    }}
  }},
  "normalize": false,
  "library": {{ "max_degree": 2 }},
  "prior": {{ "kind": "normal_reference" }},
  "observation": {{ "kind": "normal", "noise_prior": {{ "dist": "half_cauchy", "scale": 1.0 }} }},
  "x0_prior": {{ "dist": "lognormal", "mu": 0.0, "sigma": 1.0 }},
  "baseline": {{ "threshold": 0.05 }},
  "output_dir": "{}"
}}"#,
        dir.display()
    );
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, config).unwrap();
    let out = run_baseline(&config_path, None, Overrides::default()).unwrap();
    let text = std::fs::read_to_string(out).unwrap();
    let mut got = std::collections::HashMap::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        got.insert(
            fields[0].to_string(),
            (
                fields[1].parse::<f64>().unwrap(),
                fields[2].parse::<f64>().unwrap(),
            ),
        );
    }
    // Dense noise-free sampling: finite differences are good enough for
    // STLSQ to land close to the generating parameters.
    assert!((got["u"].0 - 1.0).abs() < 1e-2);
    assert!((got["u*v"].0 + 0.1).abs() < 1e-2);
    assert!((got["v"].1 + 1.5).abs() < 1e-2);
    assert!((got["u*v"].1 - 0.075).abs() < 1e-2);
    assert_eq!(got["1"], (0.0, 0.0));
}

#[test]
fn fit_predict_diagnostics_pipeline() {
    let dir = temp_dir("pipeline");
    let config = small_lv_config(&dir, r#"{ "kind": "spike_slab" }"#, 0.05);
    let outcome = run_fit(&config, None, Overrides::default()).unwrap();
    assert!(outcome.results_path.exists());
    let results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&outcome.results_path).unwrap()).unwrap();
    assert_eq!(results["prior_kind"], "spike_slab");
    assert_eq!(results["coefficients"].as_array().unwrap().len(), 12);

    let draws_path = dir.join("draws.csv");
    assert!(draws_path.exists());

    // Reconstruction grid, then a single-point grid.
    let ppd_path = run_predict(&config, &draws_path, 0.0, 6.0, 13, None, Overrides::default())
        .unwrap();
    let text = std::fs::read_to_string(&ppd_path).unwrap();
    assert_eq!(text.lines().count(), 1 + 13 * 2);
    let single = run_predict(&config, &draws_path, 3.0, 3.0, 1, None, Overrides::default())
        .unwrap();
    let text = std::fs::read_to_string(&single).unwrap();
    assert_eq!(text.lines().count(), 1 + 2);

    // Diagnostics runs on the draws file.
    run_diagnostics(&draws_path).unwrap();
}

#[test]
fn alpha_override_out_of_range_is_a_config_error() {
    let dir = temp_dir("alphaoob");
    let config = small_lv_config(
        &dir,
        r#"{ "kind": "spike_slab", "alpha_overrides": [[17, 0, 0.1]] }"#,
        0.05,
    );
    let err = run_fit(&config, None, Overrides::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "got {err}");
}
