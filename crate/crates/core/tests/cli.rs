//! End-to-end tests of the `ionsim` binary: subcommands, file outputs,
//! reproducibility and exit codes.

use std::fs;
use std::path::Path;
use std::process::Command;

use ion_cavity_sim::config::RunConfig;
use ion_cavity_sim::estimator;
use ion_cavity_sim::herald;
use ion_cavity_sim::qops::DensityMatrix;
use ion_cavity_sim::readout;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ionsim"))
}

fn small_config() -> RunConfig {
    let mut config = RunConfig::experiment_defaults();
    config.simulation.n_traj = 40;
    config.simulation.dt_s = 4e-9;
    config
}

fn write_config(dir: &Path, config: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, config.to_json_string()).unwrap();
    path
}

#[test]
fn geometry_reports_reference_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::experiment_defaults();
    config.geometry.omega_axial_hz = 450e3;
    let config_path = write_config(dir.path(), &config);
    let out = dir.path().join("g450");
    let status = bin()
        .args(["geometry", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("geometry_report.json")).unwrap())
            .unwrap();
    let d = report["ion_spacing_m"].as_f64().unwrap();
    assert!((d - 9.6e-6).abs() / 9.6e-6 < 0.02, "{d}");
    let dp = report["projected_spacing_m"].as_f64().unwrap();
    assert!((dp - 670e-9).abs() / 670e-9 < 0.01, "{dp}");
    let phi = report["phase_difference_pi"].as_f64().unwrap();
    assert!((phi - 0.9).abs() < 0.05, "{phi}");
    // fitted phase difference agrees with the geometric one
    let fit_dphi = report["fit"]["phase_difference_rad"].as_f64().unwrap();
    assert!((fit_dphi / std::f64::consts::PI - phi).abs() < 0.01);

    // the 1.09 MHz configuration
    let config_path = write_config(dir.path(), &RunConfig::experiment_defaults());
    let out = dir.path().join("g1090");
    assert!(bin()
        .args(["geometry", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("geometry_report.json")).unwrap())
            .unwrap();
    let d = report["ion_spacing_m"].as_f64().unwrap();
    assert!((d - 5.3e-6).abs() / 5.3e-6 < 0.02, "{d}");
    let phi = report["phase_difference_pi"].as_f64().unwrap();
    assert!((0.15..=0.45).contains(&phi), "{phi}");
    // manifest present with the config hash
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(
        manifest["config_hash"].as_str().unwrap(),
        format!("{:016x}", RunConfig::experiment_defaults().canonical_hash())
    );
}

#[test]
fn simulate_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = write_config(dir.path(), &small_config());
    let (out_a, out_b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&out_a, &out_b] {
        let status = bin()
            .args(["simulate", "--config"])
            .arg(&config_path)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    for name in ["events.csv", "fidelity_vs_T.csv", "rates.json"] {
        let a = fs::read(out_a.join(name)).unwrap();
        let b = fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} must be byte-identical across reruns");
    }
    // outputs round-trip through the toolkit's own parsers
    let events =
        herald::events_from_csv(&fs::read_to_string(out_a.join("events.csv")).unwrap()).unwrap();
    assert!(!events.is_empty());
    let curve =
        herald::curve_from_csv(&fs::read_to_string(out_a.join("fidelity_vs_T.csv")).unwrap())
            .unwrap();
    assert!(!curve.is_empty());

    // a different seed changes the data
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&config_path)
        .args(["--seed", "999", "--out"])
        .arg(dir.path().join("c"))
        .status()
        .unwrap();
    assert!(status.success());
    let c = fs::read(dir.path().join("c").join("events.csv")).unwrap();
    assert_ne!(c, fs::read(out_a.join("events.csv")).unwrap());
}

#[test]
fn ideal_configuration_gives_flat_unit_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.simulation.n_traj = 120;
    config.branching.cg_gamma = 0.0;
    config.ions.aux_coupling_ratio = 0.0;
    for d in &mut config.drives {
        d.linewidth_hz = 0.0;
    }
    let config_path = write_config(dir.path(), &config);
    let out = dir.path().join("ideal");
    assert!(bin()
        .args(["simulate", "--config"])
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let curve =
        herald::curve_from_csv(&fs::read_to_string(out.join("fidelity_vs_T.csv")).unwrap())
            .unwrap();
    let occupied: Vec<_> = curve.iter().filter(|b| b.count > 0).collect();
    assert!(!occupied.is_empty());
    for bin in occupied {
        assert!(
            bin.mean_fidelity.unwrap() > 0.99,
            "ideal limit is flat near 1, got {:?}",
            bin.mean_fidelity
        );
    }
}

#[test]
fn analyze_measurements_recovers_bound() {
    let dir = tempfile::tempdir().unwrap();
    // synthetic records from a known state
    let rho = DensityMatrix::from_pure(&herald::psi_plus());
    let phases = estimator::standard_phase_grid(25);
    let meas = estimator::measure_bound(&rho, &phases, 400, 42).unwrap();
    let mut records = vec![meas.population.clone()];
    records.extend(meas.two_pulse.iter().cloned());
    records.extend(meas.one_pulse.iter().cloned());
    let csv_path = dir.path().join("measurements.csv");
    fs::write(&csv_path, estimator::records_to_csv(&records)).unwrap();

    let out = dir.path().join("out");
    assert!(bin()
        .args(["analyze", "--measurements"])
        .arg(&csv_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let bound: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("fidelity_bound.json")).unwrap())
            .unwrap();
    let value = bound["bound"].as_f64().unwrap();
    assert!(
        (value - meas.bound.bound).abs() < 1e-12,
        "CLI reproduces the library pipeline"
    );
    assert!(value > 0.9, "near-perfect Bell state: bound = {value}");
    // parity curve files parse as CSV with a fit column
    let two = fs::read_to_string(out.join("parity_two_pulse.csv")).unwrap();
    assert!(two.starts_with("phase_rad,parity,sigma,fit\n"));
    assert_eq!(two.lines().count(), 26);
}

#[test]
fn analyze_summary_matches_published_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let summary = serde_json::json!({
        "population_sum": 1.00, "population_err": 0.03,
        "parity_half_pi": 0.86, "parity_err": 0.01,
        "contrast": 0.02, "contrast_err": 0.03,
    });
    let path = dir.path().join("summary.json");
    fs::write(&path, summary.to_string()).unwrap();
    let out = dir.path().join("out");
    assert!(bin()
        .args(["analyze", "--summary"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let bound: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("fidelity_bound.json")).unwrap())
            .unwrap();
    assert!((bound["bound"].as_f64().unwrap() - 0.92).abs() < 0.005);
}

#[test]
fn analyze_events_bins_fidelities() {
    let dir = tempfile::tempdir().unwrap();
    let summaries = vec![
        herald::EventSummary {
            t1: 0.0,
            t2: 0.2e-6,
            pol1: herald::Polarization::H,
            pol2: herald::Polarization::V,
            fidelity: 0.95,
            scattering_flag: false,
        },
        herald::EventSummary {
            t1: 0.0,
            t2: 0.3e-6,
            pol1: herald::Polarization::V,
            pol2: herald::Polarization::H,
            fidelity: 0.91,
            scattering_flag: false,
        },
        herald::EventSummary {
            t1: 1e-6,
            t2: 6e-6,
            pol1: herald::Polarization::H,
            pol2: herald::Polarization::V,
            fidelity: 0.40,
            scattering_flag: true,
        },
    ];
    let path = dir.path().join("events.csv");
    fs::write(&path, herald::events_to_csv(&summaries)).unwrap();
    let out = dir.path().join("out");
    assert!(bin()
        .args(["analyze", "--events"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let curve =
        herald::curve_from_csv(&fs::read_to_string(out.join("fidelity_vs_T.csv")).unwrap())
            .unwrap();
    assert_eq!(curve[0].count, 2);
    assert!((curve[0].mean_fidelity.unwrap() - 0.93).abs() < 1e-12);
    let large: Vec<_> = curve.iter().filter(|b| b.count == 1).collect();
    assert_eq!(large.len(), 1);
    assert!((large[0].mean_fidelity.unwrap() - 0.40).abs() < 1e-12);
}

#[test]
fn readout_fit_produces_estimates() {
    let dir = tempfile::tempdir().unwrap();
    // synthetic three-population data
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let mut shots = Vec::new();
    for _ in 0..3000 {
        let u: f64 = rng.random();
        let (mean, sigma) = if u < 0.3 {
            (12.0, 5.0)
        } else if u < 0.8 {
            (115.0, 9.0)
        } else {
            (215.0, 11.0)
        };
        let g: f64 = {
            let u1: f64 = rng.random::<f64>().max(1e-12);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        };
        shots.push((mean + sigma * g).round());
    }
    let path = dir.path().join("shots.csv");
    fs::write(&path, readout::shots_to_csv(&shots)).unwrap();
    let out = dir.path().join("out");
    assert!(bin()
        .args(["readout-fit", "--shots"])
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("readout_fit.json")).unwrap()).unwrap();
    let p: Vec<f64> = report["estimate"]["p"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((p[1] - 0.5).abs() < 0.05, "{p:?}");
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();

    // unknown subcommand: usage error, exit 2
    let status = bin().arg("frobnicate").status().unwrap();
    assert_eq!(status.code(), Some(2));

    // config with a typo key: exit 2 with the key named
    let mut value: serde_json::Value =
        serde_json::from_str(&RunConfig::experiment_defaults().to_json_string()).unwrap();
    value["cavity"]["kappa_khz"] = serde_json::Value::from(50.0);
    let bad_config = dir.path().join("bad.json");
    fs::write(&bad_config, value.to_string()).unwrap();
    let output = bin()
        .args(["geometry", "--config"])
        .arg(&bad_config)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("kappa_khz"), "{stderr}");

    // config with a missing key: exit 2 naming the key
    let mut value: serde_json::Value =
        serde_json::from_str(&RunConfig::experiment_defaults().to_json_string()).unwrap();
    value["ions"].as_object_mut().unwrap().remove("mass_u");
    let missing = dir.path().join("missing.json");
    fs::write(&missing, value.to_string()).unwrap();
    let output = bin()
        .args(["geometry", "--config"])
        .arg(&missing)
        .arg("--out")
        .arg(dir.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("mass_u"));

    // unreadable input file: exit 4
    let status = bin()
        .args(["analyze", "--events"])
        .arg(dir.path().join("nope.csv"))
        .arg("--out")
        .arg(dir.path().join("z"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));

    // malformed CSV row: input error, exit 2, line number reported
    let bad_events = dir.path().join("bad_events.csv");
    fs::write(
        &bad_events,
        "t1_s,t2_s,pol1,pol2,fidelity,scattering_flag\n1,2,H\n",
    )
    .unwrap();
    let output = bin()
        .args(["analyze", "--events"])
        .arg(&bad_events)
        .arg("--out")
        .arg(dir.path().join("w"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("line 2"));
}
