//! Heralded-event extraction and analysis.
//!
//! A herald is the detection of one H- and one V-polarized cavity photon
//! within the Raman window. On a trajectory these are the first two
//! cavity-channel jumps; the conditional two-ion state is the post-jump
//! snapshot traced over the modes. After the mapping pulse the state lives
//! in the {S, D} qubit basis and is compared against the Bell state
//! (|SD> + |DS>) / sqrt(2).

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcwf::{SnapshotKind, TrajectoryRecord};
use crate::model::{mapping_pulse, ChannelLabel, ModelError};
use crate::qops::{partial_trace, C64, DensityMatrix, HilbertSpace, Operator, QopsError, StateVector};

/// Population allowed outside the {S, D} qubit subspace after mapping
/// before an event is rejected as misconfigured.
pub const LEAKAGE_LIMIT: f64 = 0.05;

#[derive(Debug, Error)]
pub enum HeraldError {
    #[error("record has no post-jump snapshots; rerun with snapshot capture enabled")]
    MissingSnapshots,
    #[error("leaked population {0:.4} outside the qubit subspace exceeds {LEAKAGE_LIMIT}")]
    ExcessiveLeakage(f64),
    #[error("bin edges must be strictly increasing")]
    BadBinEdges,
    #[error("no events supplied")]
    NoEvents,
    #[error("herald probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("sequence timing invalid: {0}")]
    BadTiming(String),
    #[error("malformed CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qops(#[from] QopsError),
}

/// Photon polarization at the beamsplitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::H => write!(f, "H"),
            Polarization::V => write!(f, "V"),
        }
    }
}

impl FromStr for Polarization {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "H" => Ok(Polarization::H),
            "V" => Ok(Polarization::V),
            other => Err(format!("unknown polarization {other}")),
        }
    }
}

/// A two-photon coincidence and the conditional two-ion state.
#[derive(Debug, Clone)]
pub struct HeraldEvent {
    /// Detection time of the first photon, s from Raman pulse start.
    pub t1: f64,
    /// Detection time of the second photon.
    pub t2: f64,
    pub pol1: Polarization,
    pub pol2: Polarization,
    /// Normalized conditional state on {S, D, D'} x {S, D, D'} after the
    /// second detection (modes traced out, before the mapping pulse).
    pub conditional_state: DensityMatrix,
    /// Two-ion population inside that 9-dimensional subspace before
    /// renormalization.
    pub subspace_weight: f64,
    /// Whether any atomic spontaneous-emission jump preceded t2.
    pub scattering_flag: bool,
    /// Whether one occurred strictly between the two detections.
    pub scatter_between: bool,
}

impl HeraldEvent {
    /// Detection interval T = t2 - t1.
    pub fn interval(&self) -> f64 {
        self.t2 - self.t1
    }
}

fn polarization_of(channel: ChannelLabel) -> Option<Polarization> {
    match channel {
        ChannelLabel::CavityH => Some(Polarization::H),
        ChannelLabel::CavityV => Some(Polarization::V),
        _ => None,
    }
}

/// The 9-dimensional {S, D, D'} x {S, D, D'} subspace of a two-ion space.
fn herald_subspace(two_ion: &HilbertSpace) -> Result<(Vec<usize>, HilbertSpace), HeraldError> {
    let dims = two_ion.factors();
    let sub = HilbertSpace::new(&[3, 3])?;
    let mut indices = Vec::with_capacity(9);
    for l1 in 0..3 {
        for l2 in 0..3 {
            indices.push(l1 * dims[1] + l2);
        }
    }
    Ok((indices, sub))
}

/// Extract a herald from a trajectory record, if the first two cavity jumps
/// within `window` have orthogonal polarizations.
///
/// Returns `None` for fewer than two cavity photons in the window or for a
/// same-polarization pair. Requires post-jump snapshots.
pub fn extract_herald(
    record: &TrajectoryRecord,
    window: f64,
) -> Result<Option<HeraldEvent>, HeraldError> {
    let cavity: Vec<(usize, Polarization, f64)> = record
        .jumps
        .iter()
        .enumerate()
        .filter_map(|(k, j)| polarization_of(j.channel).map(|p| (k, p, j.time)))
        .filter(|&(_, _, t)| t <= window)
        .collect();
    if cavity.len() < 2 {
        return Ok(None);
    }
    let (_, pol1, t1) = cavity[0];
    let (k2, pol2, t2) = cavity[1];
    if pol1 == pol2 {
        return Ok(None);
    }

    // post-jump snapshot belonging to the second cavity jump
    let snapshot = record
        .snapshots
        .iter()
        .filter(|s| s.kind == SnapshotKind::PostJump)
        .nth(k2)
        .ok_or(HeraldError::MissingSnapshots)?;

    let full = DensityMatrix::from_pure(&snapshot.state);
    let two_ion = partial_trace(&full, &[0, 1])?;
    let (indices, sub) = herald_subspace(two_ion.space())?;
    let (block, weight) = two_ion.restrict(&indices, sub)?;
    let conditional_state = block.normalized();

    let scattering_flag = record
        .jumps
        .iter()
        .any(|j| j.channel.is_spontaneous() && j.time < t2);
    let scatter_between = record
        .jumps
        .iter()
        .any(|j| j.channel.is_spontaneous() && j.time > t1 && j.time < t2);

    Ok(Some(HeraldEvent {
        t1,
        t2,
        pol1,
        pol2,
        conditional_state,
        subspace_weight: weight,
        scattering_flag,
        scatter_between,
    }))
}

/// The standard mapping pulse on the 3-level x 3-level herald subspace.
pub fn herald_mapping() -> Operator {
    let space = HilbertSpace::new(&[3, 3]).expect("valid");
    mapping_pulse(&space).expect("3-level factors supported")
}

/// Apply the mapping pulse, truncate to the {S, D} qubit subspace and
/// renormalize.
///
/// Returns the 2-qubit state and the leaked population removed by the
/// truncation. Fails if the leak exceeds [`LEAKAGE_LIMIT`].
pub fn heralded_qubit_state(
    event: &HeraldEvent,
    mapping: &Operator,
) -> Result<(DensityMatrix, f64), HeraldError> {
    let rho = &event.conditional_state;
    let u = mapping.to_dense();
    let u_dag = u.t().mapv(|v| v.conj());
    let rotated = u.dot(rho.matrix()).dot(&u_dag);
    let rotated = DensityMatrix::new(rho.space().clone(), rotated)?;

    let qubits = HilbertSpace::new(&[2, 2])?;
    let dims = rho.space().factors();
    let mut indices = Vec::with_capacity(4);
    for l1 in 0..2 {
        for l2 in 0..2 {
            indices.push(l1 * dims[1] + l2);
        }
    }
    let (block, weight) = rotated.restrict(&indices, qubits)?;
    let leaked = (1.0 - weight).max(0.0);
    if leaked > LEAKAGE_LIMIT {
        return Err(HeraldError::ExcessiveLeakage(leaked));
    }
    Ok((block.normalized(), leaked))
}

/// The target Bell state (|SD> + |DS>) / sqrt(2) on the qubit space.
pub fn psi_plus() -> StateVector {
    let qubits = HilbertSpace::new(&[2, 2]).expect("valid");
    let sd = StateVector::basis_state(&qubits, &[0, 1]).expect("valid");
    let ds = StateVector::basis_state(&qubits, &[1, 0]).expect("valid");
    StateVector::superposition(&[
        (C64::new(FRAC_1_SQRT_2, 0.0), &sd),
        (C64::new(FRAC_1_SQRT_2, 0.0), &ds),
    ])
    .expect("valid")
}

/// <target|rho|target>, clamped to [0, 1].
pub fn fidelity(rho: &DensityMatrix, target: &StateVector) -> Result<f64, HeraldError> {
    Ok(rho.fidelity_pure(target)?.clamp(0.0, 1.0))
}

/// Post-mapping fidelity of an event with respect to Psi+.
pub fn event_fidelity(event: &HeraldEvent, mapping: &Operator) -> Result<f64, HeraldError> {
    let (rho, _) = heralded_qubit_state(event, mapping)?;
    fidelity(&rho, &psi_plus())
}

/// One bin of the fidelity-vs-T curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityBin {
    pub t_low: f64,
    pub t_high: f64,
    pub count: usize,
    pub mean_fidelity: Option<f64>,
    pub stderr: Option<f64>,
}

/// Mean post-mapping fidelity per detection-interval bin.
///
/// Bins are half-open [lo, hi); events outside the edges are ignored.
/// Empty bins report count 0 and no fidelity value.
pub fn fidelity_vs_t(
    events: &[HeraldEvent],
    bin_edges: &[f64],
) -> Result<Vec<FidelityBin>, HeraldError> {
    if events.is_empty() {
        return Err(HeraldError::NoEvents);
    }
    if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HeraldError::BadBinEdges);
    }
    let mapping = herald_mapping();
    let n_bins = bin_edges.len() - 1;
    let mut sums = vec![0.0f64; n_bins];
    let mut sums2 = vec![0.0f64; n_bins];
    let mut counts = vec![0usize; n_bins];
    for event in events {
        let t = event.interval();
        let Some(bin) = bin_edges.windows(2).position(|w| t >= w[0] && t < w[1]) else {
            continue;
        };
        let f = event_fidelity(event, &mapping)?;
        sums[bin] += f;
        sums2[bin] += f * f;
        counts[bin] += 1;
    }
    Ok((0..n_bins)
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
            FidelityBin {
                t_low: bin_edges[b],
                t_high: bin_edges[b + 1],
                count,
                mean_fidelity: mean,
                stderr,
            }
        })
        .collect())
}

/// Bin edges mirroring the analysis convention: first edge at 0.5 us,
/// geometric spacing afterwards, ending at the Raman window.
pub fn default_bin_edges(window: f64) -> Vec<f64> {
    let mut edges = vec![0.0, 0.5e-6];
    let mut hi = 1e-6;
    while hi < window {
        edges.push(hi);
        hi *= 2.0;
    }
    edges.push(window);
    edges
}

/// Experimental sequence timing.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SequenceTiming {
    /// Doppler cooling plus optical pumping, s.
    pub prep: f64,
    /// One Raman attempt, s.
    pub raman_window: f64,
    /// Raman attempts per cooling cycle.
    pub max_retries: u32,
    /// Fluorescence detection, s.
    pub detection: f64,
    /// Mapping pulse, s.
    pub mapping: f64,
    /// Analysis rotations, s (zero when only populations are read out).
    pub rotation: f64,
}

impl SequenceTiming {
    pub fn experiment_defaults() -> Self {
        Self {
            prep: 1.7e-3,
            raman_window: 40e-6,
            max_retries: 10,
            detection: 2e-3,
            mapping: 10e-6,
            rotation: 0.0,
        }
    }

    fn validate(&self) -> Result<(), HeraldError> {
        if self.prep <= 0.0 || self.raman_window <= 0.0 || self.detection <= 0.0 {
            return Err(HeraldError::BadTiming("durations must be positive".into()));
        }
        if self.mapping < 0.0 || self.rotation < 0.0 {
            return Err(HeraldError::BadTiming("pulse durations must be nonnegative".into()));
        }
        if self.max_retries < 1 {
            return Err(HeraldError::BadTiming("max_retries must be at least 1".into()));
        }
        Ok(())
    }
}

/// Expected event rate of the retry sequence, events/s.
///
/// A cycle is preparation followed by up to `max_retries` Raman attempts,
/// each heralding with probability `p_herald`; heralded cycles append the
/// mapping pulse, rotations and detection. `acceptance_fraction` is the
/// fraction of heralds that pass the analysis filter (1.0 for all events).
pub fn sequence_rate(
    timing: &SequenceTiming,
    p_herald: f64,
    acceptance_fraction: f64,
) -> Result<f64, HeraldError> {
    timing.validate()?;
    if !(0.0..=1.0).contains(&p_herald) {
        return Err(HeraldError::BadProbability(p_herald));
    }
    if !(0.0..=1.0).contains(&acceptance_fraction) {
        return Err(HeraldError::BadProbability(acceptance_fraction));
    }
    if p_herald == 0.0 {
        return Ok(0.0);
    }
    let r = timing.max_retries as f64;
    let q = 1.0 - p_herald;
    let p_cycle = 1.0 - q.powf(r);
    // E[min(attempts to success, R)] = (1 - q^R) / p
    let mean_attempts = p_cycle / p_herald;
    let mean_cycle = timing.prep
        + mean_attempts * timing.raman_window
        + p_cycle * (timing.mapping + timing.rotation + timing.detection);
    Ok(acceptance_fraction * p_cycle / mean_cycle)
}

/// Imperfect-detection model applied to a trajectory's cavity-jump
/// sequence: each photon is seen with probability `efficiency`, and dark
/// counts of random polarization are injected at `dark_rate` (Hz) over the
/// window.
///
/// The returned sequence is what the detectors report; it drives the rate
/// model. Conditional states stay with the unthinned physics records (a
/// dark count carries no state).
pub fn detection_layer(
    jumps: &[crate::mcwf::JumpEvent],
    efficiency: f64,
    dark_rate: f64,
    window: f64,
    seed: u64,
) -> Vec<crate::mcwf::JumpEvent> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut detected: Vec<crate::mcwf::JumpEvent> = jumps
        .iter()
        .filter(|j| j.channel.is_cavity() && j.time <= window)
        .filter(|_| rng.random::<f64>() < efficiency)
        .copied()
        .collect();
    if dark_rate > 0.0 {
        // Poisson number of dark counts via exponential gaps
        let mut t = 0.0;
        loop {
            let u: f64 = rng.random::<f64>().max(1e-300);
            t += -u.ln() / dark_rate;
            if t > window {
                break;
            }
            let channel = if rng.random::<f64>() < 0.5 {
                ChannelLabel::CavityH
            } else {
                ChannelLabel::CavityV
            };
            detected.push(crate::mcwf::JumpEvent { time: t, channel });
        }
        detected.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    }
    detected
}

/// First detected orthogonal pair within the window, if any.
pub fn coincidence_from_jumps(
    jumps: &[crate::mcwf::JumpEvent],
    window: f64,
) -> Option<(f64, f64, Polarization, Polarization)> {
    let cavity: Vec<(Polarization, f64)> = jumps
        .iter()
        .filter_map(|j| polarization_of(j.channel).map(|p| (p, j.time)))
        .filter(|&(_, t)| t <= window)
        .collect();
    if cavity.len() < 2 || cavity[0].0 == cavity[1].0 {
        return None;
    }
    Some((cavity[0].1, cavity[1].1, cavity[0].0, cavity[1].0))
}

/// Flat per-event summary for CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSummary {
    pub t1: f64,
    pub t2: f64,
    pub pol1: Polarization,
    pub pol2: Polarization,
    pub fidelity: f64,
    pub scattering_flag: bool,
}

/// Summarize events with their post-mapping fidelities.
pub fn summarize_events(events: &[HeraldEvent]) -> Result<Vec<EventSummary>, HeraldError> {
    let mapping = herald_mapping();
    events
        .iter()
        .map(|e| {
            Ok(EventSummary {
                t1: e.t1,
                t2: e.t2,
                pol1: e.pol1,
                pol2: e.pol2,
                fidelity: event_fidelity(e, &mapping)?,
                scattering_flag: e.scattering_flag,
            })
        })
        .collect()
}

pub fn events_to_csv(events: &[EventSummary]) -> String {
    let mut out = String::from("t1_s,t2_s,pol1,pol2,fidelity,scattering_flag\n");
    for e in events {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.t1, e.t2, e.pol1, e.pol2, e.fidelity, e.scattering_flag
        ));
    }
    out
}

pub fn events_from_csv(text: &str) -> Result<Vec<EventSummary>, HeraldError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if k == 0 {
            if line != "t1_s,t2_s,pol1,pol2,fidelity,scattering_flag" {
                return Err(HeraldError::MalformedCsv {
                    line: 1,
                    reason: "bad header".into(),
                });
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(HeraldError::MalformedCsv {
                line: k + 1,
                reason: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let bad = |reason: String| HeraldError::MalformedCsv { line: k + 1, reason };
        out.push(EventSummary {
            t1: fields[0].parse().map_err(|e| bad(format!("t1: {e}")))?,
            t2: fields[1].parse().map_err(|e| bad(format!("t2: {e}")))?,
            pol1: fields[2].parse().map_err(bad)?,
            pol2: fields[3].parse().map_err(bad)?,
            fidelity: fields[4].parse().map_err(|e| bad(format!("fidelity: {e}")))?,
            scattering_flag: fields[5].parse().map_err(|e| bad(format!("flag: {e}")))?,
        });
    }
    Ok(out)
}

pub fn curve_to_csv(bins: &[FidelityBin]) -> String {
    let mut out = String::from("T_bin_low,T_bin_high,mean_fidelity,stderr,count\n");
    for b in bins {
        let mean = b.mean_fidelity.map(|v| v.to_string()).unwrap_or_default();
        let se = b.stderr.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", b.t_low, b.t_high, mean, se, b.count));
    }
    out
}

pub fn curve_from_csv(text: &str) -> Result<Vec<FidelityBin>, HeraldError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if k == 0 {
            if line != "T_bin_low,T_bin_high,mean_fidelity,stderr,count" {
                return Err(HeraldError::MalformedCsv { line: 1, reason: "bad header".into() });
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(HeraldError::MalformedCsv {
                line: k + 1,
                reason: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let bad = |reason: String| HeraldError::MalformedCsv { line: k + 1, reason };
        let opt = |s: &str| -> Result<Option<f64>, HeraldError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| bad(format!("{e}")))
            }
        };
        out.push(FidelityBin {
            t_low: fields[0].parse().map_err(|e| bad(format!("{e}")))?,
            t_high: fields[1].parse().map_err(|e| bad(format!("{e}")))?,
            mean_fidelity: opt(fields[2])?,
            stderr: opt(fields[3])?,
            count: fields[4].parse().map_err(|e| bad(format!("{e}")))?,
        });
    }
    Ok(out)
}
