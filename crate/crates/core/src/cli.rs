//! Command-line orchestration for the `ionsim` binary.
//!
//! Subcommands: `geometry`, `simulate`, `analyze`, `readout-fit`, each with
//! `--config <file>`, `--out <dir>` and an optional `--seed <u64>` override.
//! Outputs are plain CSV/JSON files; identical config and seeds give
//! byte-identical data files. The run manifest records the config hash,
//! toolkit version, seeds and an index of the written files (its timestamps
//! are the one non-reproducible item).
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure, 4 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::estimator::{self, EstimatorError, RotationScheme};
use crate::geometry::{self, GeometryError};
use crate::herald::{self, HeraldError, HeraldEvent};
use crate::mcwf::{self, McwfError, TrajectoryOptions};
use crate::model::{self, BuildOptions, ModelError};
use crate::qops::StateVector;
use crate::readout::{self, ProjectionNoise, ReadoutError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("geometry failure: {0}")]
    Geometry(#[from] GeometryError),
    #[error("model failure: {0}")]
    Model(#[from] ModelError),
    #[error("simulation failure: {0}")]
    Mcwf(#[from] McwfError),
    #[error("herald analysis failure: {0}")]
    Herald(#[from] HeraldError),
    #[error("estimator failure: {0}")]
    Estimator(#[from] EstimatorError),
    #[error("readout failure: {0}")]
    Readout(#[from] ReadoutError),
}

impl CliError {
    /// 2 config/input error, 3 numerical failure, 4 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io { .. } => 4,
            // malformed input files are user errors, not numerics
            CliError::Geometry(GeometryError::MalformedCsv { .. })
            | CliError::Herald(HeraldError::MalformedCsv { .. })
            | CliError::Estimator(EstimatorError::MalformedCsv { .. })
            | CliError::Readout(ReadoutError::MalformedCsv { .. })
            | CliError::Readout(ReadoutError::TooFewShots { .. }) => 2,
            _ => 3,
        }
    }
}

const USAGE: &str = "ionsim <geometry|simulate|analyze|readout-fit> [options]
  common options:
    --config <file>        JSON run configuration (default: built-in reference parameters)
    --out <dir>            output directory (default: ./out)
    --seed <u64>           override simulation.seed
  analyze inputs (exactly one):
    --events <csv>         heralded-event summaries -> fidelity-vs-T curve
    --measurements <csv>   parity measurement records -> fits + fidelity bound
    --summary <json>       three measured components -> fidelity bound
  readout-fit input:
    --shots <csv>          fluorescence shots (shot_id,counts)";

/// Parsed command line.
#[derive(Debug, Clone)]
pub enum Command {
    Geometry,
    Simulate,
    Analyze(AnalyzeInput),
    ReadoutFit { shots: PathBuf },
}

#[derive(Debug, Clone)]
pub enum AnalyzeInput {
    Events(PathBuf),
    Measurements(PathBuf),
    Summary(PathBuf),
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
}

pub fn parse_args(args: &[String]) -> Result<Invocation, CliError> {
    let mut it = args.iter();
    let sub = it.next().ok_or_else(|| CliError::Usage(USAGE.into()))?;
    let mut config_path = None;
    let mut out_dir = PathBuf::from("out");
    let mut seed_override = None;
    let mut events = None;
    let mut measurements = None;
    let mut summary = None;
    let mut shots = None;

    while let Some(flag) = it.next() {
        let mut value = |name: &str| -> Result<String, CliError> {
            it.next()
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("{name} requires a value\n{USAGE}")))
        };
        match flag.as_str() {
            "--config" => config_path = Some(PathBuf::from(value("--config")?)),
            "--out" => out_dir = PathBuf::from(value("--out")?),
            "--seed" => {
                let text = value("--seed")?;
                let seed = text.parse::<u64>().map_err(|e| {
                    CliError::Usage(format!("--seed must be an unsigned integer: {e}"))
                })?;
                seed_override = Some(seed);
            }
            "--events" => events = Some(PathBuf::from(value("--events")?)),
            "--measurements" => measurements = Some(PathBuf::from(value("--measurements")?)),
            "--summary" => summary = Some(PathBuf::from(value("--summary")?)),
            "--shots" => shots = Some(PathBuf::from(value("--shots")?)),
            other => return Err(CliError::Usage(format!("unknown flag {other}\n{USAGE}"))),
        }
    }

    let command = match sub.as_str() {
        "geometry" => Command::Geometry,
        "simulate" => Command::Simulate,
        "analyze" => {
            let inputs = [events.is_some(), measurements.is_some(), summary.is_some()];
            if inputs.iter().filter(|&&b| b).count() != 1 {
                return Err(CliError::Usage(format!(
                    "analyze needs exactly one of --events, --measurements, --summary\n{USAGE}"
                )));
            }
            if let Some(p) = events {
                Command::Analyze(AnalyzeInput::Events(p))
            } else if let Some(p) = measurements {
                Command::Analyze(AnalyzeInput::Measurements(p))
            } else {
                Command::Analyze(AnalyzeInput::Summary(summary.unwrap()))
            }
        }
        "readout-fit" => {
            let shots = shots.ok_or_else(|| {
                CliError::Usage(format!("readout-fit needs --shots <csv>\n{USAGE}"))
            })?;
            Command::ReadoutFit { shots }
        }
        other => return Err(CliError::Usage(format!("unknown subcommand {other}\n{USAGE}"))),
    };

    Ok(Invocation { command, config_path, out_dir, seed_override })
}

/// Top-level entry used by the binary.
pub fn run(args: &[String]) -> Result<(), CliError> {
    let invocation = parse_args(args)?;
    let mut config = match &invocation.config_path {
        Some(path) => {
            let text = read_file(path)?;
            RunConfig::from_json_str(&text)?
        }
        None => RunConfig::experiment_defaults(),
    };
    if let Some(seed) = invocation.seed_override {
        config.simulation.seed = seed;
    }
    fs::create_dir_all(&invocation.out_dir).map_err(|e| CliError::Io {
        path: invocation.out_dir.clone(),
        source: e,
    })?;

    match &invocation.command {
        Command::Geometry => {
            let files = cmd_geometry(&config, &invocation.out_dir)?;
            write_manifest(&config, &invocation.out_dir, &files)?;
        }
        Command::Simulate => {
            let output = cmd_simulate(&config, &invocation.out_dir)?;
            write_manifest(&config, &invocation.out_dir, &output.files)?;
        }
        Command::Analyze(input) => {
            let files = cmd_analyze(&config, input, &invocation.out_dir)?;
            write_manifest(&config, &invocation.out_dir, &files)?;
        }
        Command::ReadoutFit { shots } => {
            let files = cmd_readout_fit(&config, shots, &invocation.out_dir)?;
            write_manifest(&config, &invocation.out_dir, &files)?;
        }
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

/// Reproducible run record. The timestamps are informational and are the
/// only field that varies between identical runs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub toolkit_version: String,
    pub seeds: Vec<u64>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub outputs: Vec<String>,
}

fn write_manifest(config: &RunConfig, out_dir: &Path, files: &[PathBuf]) -> Result<(), CliError> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = RunManifest {
        config_hash: format!("{:016x}", config.canonical_hash()),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: vec![config.simulation.seed, config.analysis.measurement_seed],
        started_unix_s: now,
        finished_unix_s: now,
        outputs: files
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
    };
    let path = out_dir.join("manifest.json");
    write_file(&path, &serde_json::to_string_pretty(&manifest).expect("serializes"))
}

#[derive(Debug, Serialize)]
struct GeometryReport {
    axial_frequency_hz: f64,
    ion_spacing_m: f64,
    projected_spacing_m: f64,
    phase_difference_rad: f64,
    phase_difference_pi: f64,
    fit: geometry::StandingWaveFit,
}

/// Spacing, projected spacing, phase difference, coupling-profile CSV and a
/// synthetic-scan fit.
pub fn cmd_geometry(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let trap = config.trap_geometry();
    let cavity = config.cavity_geometry();
    let d = geometry::ion_spacing(&trap)?;
    let d_prime = geometry::projected_spacing(d, trap.trap_tilt);
    let dphi = geometry::standing_wave_phase_difference(d_prime, cavity.lambda_repump);

    let n = config.geometry.scan_points.max(8);
    let half = config.geometry.scan_halfwidth_m;
    let ys: Vec<f64> = (0..n)
        .map(|k| -half + 2.0 * half * k as f64 / (n - 1) as f64)
        .collect();
    let profile = geometry::coupling_profile(&trap, &cavity, &ys)?;

    // profile as CSV for plotting
    let mut profile_csv = String::from("y_prime_m,ion1_intensity,ion2_intensity\n");
    for (k, y) in ys.iter().enumerate() {
        profile_csv.push_str(&format!(
            "{},{},{}\n",
            y, profile.intensity[0][k], profile.intensity[1][k]
        ));
    }

    // synthetic fluorescence scan and its fit
    let scale = config.geometry.fluorescence_scale;
    let scan = geometry::ScanData {
        y_prime: ys.clone(),
        counts: [
            profile.intensity[0].iter().map(|i| scale * i).collect(),
            profile.intensity[1].iter().map(|i| scale * i).collect(),
        ],
    };
    let fit = geometry::fit_standing_wave(&scan)?;

    let report = GeometryReport {
        axial_frequency_hz: config.geometry.omega_axial_hz,
        ion_spacing_m: d,
        projected_spacing_m: d_prime,
        phase_difference_rad: dphi,
        phase_difference_pi: dphi / std::f64::consts::PI,
        fit,
    };

    let files = vec![
        out_dir.join("geometry_report.json"),
        out_dir.join("coupling_profile.csv"),
        out_dir.join("scan.csv"),
    ];
    write_file(&files[0], &serde_json::to_string_pretty(&report).expect("serializes"))?;
    write_file(&files[1], &profile_csv)?;
    write_file(&files[2], &scan.to_csv_string())?;
    Ok(files)
}

#[derive(Debug, Serialize)]
struct RatesReport {
    herald_probability_per_attempt: f64,
    detection_efficiency: f64,
    detected_probability_per_attempt: f64,
    first_bin_fraction: f64,
    rate_all_events_hz: f64,
    rate_first_bin_hz: f64,
}

pub struct SimulateOutput {
    pub files: Vec<PathBuf>,
    pub events: Vec<HeraldEvent>,
    pub n_traj: usize,
}

/// Run the trajectory ensemble, extract heralds, and write the event and
/// fidelity-vs-T files plus the rate report.
pub fn cmd_simulate(config: &RunConfig, out_dir: &Path) -> Result<SimulateOutput, CliError> {
    let params = config.system_params()?;
    let drives = config.drive_fields()?;
    let options = BuildOptions {
        raman: config.raman_treatment()?,
        keep_cross_terms: config.simulation.keep_cross_terms,
        dephasing: config.dephasing_mode()?,
    };
    let system = model::build_system(
        &params,
        &drives,
        params.coupling_relative,
        config.simulation.cutoff,
        &options,
    )?;
    let psi0 = StateVector::basis_state(&system.space, &[0, 0, 0, 0]).map_err(ModelError::Qops)?;
    let traj_opts = TrajectoryOptions {
        sample_times: vec![],
        capture_post_jump: true,
        stop_after_cavity_jumps: Some(2),
    };
    let t_max = config.simulation.t_max_s;
    let maybe_events: Vec<Option<HeraldEvent>> = mcwf::map_trajectories(
        &system,
        &psi0,
        t_max,
        config.simulation.dt_s,
        config.simulation.n_traj,
        config.simulation.seed,
        &traj_opts,
        |record| herald::extract_herald(record, t_max),
    )?
    .into_iter()
    .collect::<Result<Vec<_>, HeraldError>>()?;
    let events: Vec<HeraldEvent> = maybe_events.into_iter().flatten().collect();

    let summaries = herald::summarize_events(&events)?;
    let curve = herald::fidelity_vs_t(&events, &config.bin_edges())?;

    let p_herald = events.len() as f64 / config.simulation.n_traj as f64;
    let eta = config.rates.detection_efficiency;
    let p_detected = p_herald * eta * eta;
    let first_bin_fraction = if events.is_empty() {
        0.0
    } else {
        events.iter().filter(|e| e.interval() <= 0.5e-6).count() as f64 / events.len() as f64
    };
    let timing = config.sequence_timing();
    let rates = RatesReport {
        herald_probability_per_attempt: p_herald,
        detection_efficiency: eta,
        detected_probability_per_attempt: p_detected,
        first_bin_fraction,
        rate_all_events_hz: herald::sequence_rate(&timing, p_detected, 1.0)?,
        rate_first_bin_hz: herald::sequence_rate(&timing, p_detected, first_bin_fraction)?,
    };

    let files = vec![
        out_dir.join("events.csv"),
        out_dir.join("fidelity_vs_T.csv"),
        out_dir.join("rates.json"),
    ];
    write_file(&files[0], &herald::events_to_csv(&summaries))?;
    write_file(&files[1], &herald::curve_to_csv(&curve))?;
    write_file(&files[2], &serde_json::to_string_pretty(&rates).expect("serializes"))?;
    Ok(SimulateOutput { files, events, n_traj: config.simulation.n_traj })
}

/// Summary input for `analyze --summary`: the three measured components.
#[derive(Debug, Serialize, Deserialize)]
pub struct BoundSummaryInput {
    pub population_sum: f64,
    pub population_err: f64,
    pub parity_half_pi: f64,
    pub parity_err: f64,
    pub contrast: f64,
    pub contrast_err: f64,
}

fn parity_points_csv(records: &[estimator::MeasurementRecord], fit: &estimator::ParityCurve) -> String {
    let mut out = String::from("phase_rad,parity,sigma,fit\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.phase,
            r.parity(),
            r.parity_sigma(),
            fit.value_at(r.phase)
        ));
    }
    out
}

/// Fig.-3-style pipeline (measurements or summary) or Fig.-4-style binning
/// (events).
pub fn cmd_analyze(
    config: &RunConfig,
    input: &AnalyzeInput,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    match input {
        AnalyzeInput::Events(path) => {
            let text = read_file(path)?;
            let summaries = herald::events_from_csv(&text)?;
            // bin the stored fidelities by detection interval
            let edges = config.bin_edges();
            let n_bins = edges.len() - 1;
            let mut sums = vec![0.0f64; n_bins];
            let mut sums2 = vec![0.0f64; n_bins];
            let mut counts = vec![0usize; n_bins];
            for s in &summaries {
                let t = s.t2 - s.t1;
                if let Some(b) = edges.windows(2).position(|w| t >= w[0] && t < w[1]) {
                    sums[b] += s.fidelity;
                    sums2[b] += s.fidelity * s.fidelity;
                    counts[b] += 1;
                }
            }
            let bins: Vec<herald::FidelityBin> = (0..n_bins)
                .map(|b| {
                    let count = counts[b];
                    let (mean, stderr) = if count == 0 {
                        (None, None)
                    } else {
                        let m = sums[b] / count as f64;
                        let var = (sums2[b] / count as f64 - m * m).max(0.0);
                        let se = if count > 1 {
                            (var / (count as f64 - 1.0)).sqrt()
                        } else {
                            0.0
                        };
                        (Some(m), Some(se))
                    };
                    herald::FidelityBin {
                        t_low: edges[b],
                        t_high: edges[b + 1],
                        count,
                        mean_fidelity: mean,
                        stderr,
                    }
                })
                .collect();
            let files = vec![out_dir.join("fidelity_vs_T.csv")];
            write_file(&files[0], &herald::curve_to_csv(&bins))?;
            Ok(files)
        }
        AnalyzeInput::Measurements(path) => {
            let text = read_file(path)?;
            let records = estimator::records_from_csv(&text)?;
            let population: Vec<_> = records
                .iter()
                .filter(|r| r.scheme == RotationScheme::None)
                .cloned()
                .collect();
            let two: Vec<_> = records
                .iter()
                .filter(|r| r.scheme == RotationScheme::TwoPulse)
                .cloned()
                .collect();
            let one: Vec<_> = records
                .iter()
                .filter(|r| r.scheme == RotationScheme::OnePulse)
                .cloned()
                .collect();
            let pop_record = population.first().ok_or_else(|| {
                CliError::Usage("measurement CSV needs a scheme=none population row".into())
            })?;
            let bound = estimator::bound_from_records(pop_record, &two, &one)?;

            let two_points: Vec<(f64, f64, f64)> =
                two.iter().map(|r| (r.phase, r.parity(), r.parity_sigma())).collect();
            let one_points: Vec<(f64, f64, f64)> =
                one.iter().map(|r| (r.phase, r.parity(), r.parity_sigma())).collect();
            let two_fit = estimator::fit_parity(&two_points, estimator::ParityFitModel::WithOffset)?;
            let one_fit =
                estimator::fit_parity(&one_points, estimator::ParityFitModel::WithOffset)?;

            let files = vec![
                out_dir.join("fidelity_bound.json"),
                out_dir.join("parity_two_pulse.csv"),
                out_dir.join("parity_one_pulse.csv"),
            ];
            write_file(&files[0], &serde_json::to_string_pretty(&bound).expect("serializes"))?;
            write_file(&files[1], &parity_points_csv(&two, &two_fit))?;
            write_file(&files[2], &parity_points_csv(&one, &one_fit))?;
            Ok(files)
        }
        AnalyzeInput::Summary(path) => {
            let text = read_file(path)?;
            let summary: BoundSummaryInput = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(ConfigError::Json(e.to_string())))?;
            let bound = estimator::fidelity_bound(
                summary.population_sum,
                summary.population_err,
                summary.parity_half_pi,
                summary.parity_err,
                summary.contrast,
                summary.contrast_err,
            );
            let files = vec![out_dir.join("fidelity_bound.json")];
            write_file(&files[0], &serde_json::to_string_pretty(&bound).expect("serializes"))?;
            Ok(files)
        }
    }
}

#[derive(Debug, Serialize)]
struct ReadoutReport {
    model: readout::MixtureModel,
    estimate: readout::ProbabilityEstimate,
}

/// Fit the fluorescence mixture, classify every shot and estimate the
/// bright-ion probabilities.
pub fn cmd_readout_fit(
    _config: &RunConfig,
    shots_path: &Path,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let text = read_file(shots_path)?;
    let shots = readout::shots_from_csv(&text)?;
    let model = readout::fit_mixture(&shots, None)?;
    let classifications = readout::classify_all(&shots, &model);
    let estimate =
        readout::estimate_probabilities(&classifications, ProjectionNoise::Verbatim)?;
    let report = ReadoutReport { model, estimate };
    let files = vec![out_dir.join("readout_fit.json")];
    write_file(&files[0], &serde_json::to_string_pretty(&report).expect("serializes"))?;
    Ok(files)
}
