//! Stochastic wave-function (quantum-jump) trajectories and a dense
//! Lindblad integrator used as a verification oracle.
//!
//! A trajectory evolves under the non-Hermitian drift
//! `H_eff = H - (i/2) sum_k C_k† C_k` with a fixed-step fourth-order scheme.
//! A jump fires when the squared norm crosses a pre-drawn uniform threshold;
//! the jump time is located by bisection plus log-norm interpolation to
//! within dt/100, the channel is chosen proportionally to `<C†C>`, and the
//! state is re-normalized.
//!
//! Randomness is keyed by `(run seed, trajectory index)` on a counter-based
//! stream cipher generator, so ensembles are reproducible independent of
//! worker scheduling; ensemble reductions run over fixed-size chunks merged
//! in index order, which keeps floating-point sums bit-identical under any
//! thread count.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ChannelLabel, SystemModel};
use crate::qops::{C64, CsrMatrix, DensityMatrix, HilbertSpace, QopsError, StateVector};

/// Serialized trajectory-record format version.
pub const RECORD_FORMAT_VERSION: u32 = 1;

const JUMP_TIME_RESOLUTION: f64 = 0.01; // fraction of dt
const NORM_INCREASE_TOL: f64 = 1e-8;
const MAX_RATE_DT: f64 = 0.05;
// stability guard: the fourth-order scheme loses the phase well before its
// |H| dt ~ 2.8 stability wall
const MAX_HAMILTONIAN_DT: f64 = 1.0;
const MASTER_EQUATION_MAX_DIM: usize = 400;

#[derive(Debug, Error)]
pub enum McwfError {
    #[error("initial state is not normalized (|psi|^2 = {norm_sqr})")]
    NotNormalized { norm_sqr: f64 },
    #[error("step too large: max collapse rate x dt = {rate_dt:.3e} >= {MAX_RATE_DT}")]
    StepTooLarge { rate_dt: f64 },
    #[error(
        "step unstable: |H| x dt = {h_dt:.2} >= {MAX_HAMILTONIAN_DT} (reduce dt or the detunings)"
    )]
    StepUnstable { h_dt: f64 },
    #[error("squared norm increased by {delta:.3e} at t = {t:.3e}; H_eff is not dissipative")]
    NormIncrease { t: f64, delta: f64 },
    #[error("norm crossed the jump threshold at t = {t:.3e} but all channel rates vanish")]
    NoJumpChannel { t: f64 },
    #[error("trajectory {index} (seed {seed}) failed: {source}")]
    TrajectoryFailed {
        index: u64,
        seed: u64,
        #[source]
        source: Box<McwfError>,
    },
    #[error("dimension {dim} too large for the dense master equation (max {max})")]
    DimensionTooLarge { dim: usize, max: usize },
    #[error("trace drifted by {drift:.3e} at t = {t:.3e}; reduce dt")]
    TraceDrift { t: f64, drift: f64 },
    #[error("record stream: {0}")]
    BadRecord(String),
    #[error(transparent)]
    Qops(#[from] QopsError),
}

/// What to record along a trajectory.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryOptions {
    /// Times at which to store normalized state snapshots.
    pub sample_times: Vec<f64>,
    /// Store a normalized snapshot immediately after each jump.
    pub capture_post_jump: bool,
    /// Stop integrating once this many cavity-channel jumps have fired.
    pub stop_after_cavity_jumps: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnapshotKind {
    Grid,
    PostJump,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub kind: SnapshotKind,
    pub state: StateVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub channel: ChannelLabel,
}

/// One stochastic wave-function history.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Run seed of the generator.
    pub seed: u64,
    /// Stream index within the run.
    pub index: u64,
    /// Requested sample grid.
    pub times: Vec<f64>,
    /// Ordered jump events.
    pub jumps: Vec<JumpEvent>,
    pub snapshots: Vec<Snapshot>,
    /// Normalized state at `final_time`.
    pub final_state: StateVector,
    pub final_time: f64,
}

/// Shared, read-only propagation data derived from a model.
pub struct Propagator {
    space: HilbertSpace,
    drift: CsrMatrix,
    oscillatory: Vec<(CsrMatrix, CsrMatrix, f64)>,
    channels: Vec<(CsrMatrix, ChannelLabel)>,
    rate_bound: f64,
    hamiltonian_bound: f64,
}

fn gershgorin_row_bound(m: &CsrMatrix) -> f64 {
    let mut row_sums = vec![0.0f64; m.dim()];
    for (r, _, v) in m.iter() {
        row_sums[r] += v.norm();
    }
    row_sums.into_iter().fold(0.0, f64::max)
}

impl Propagator {
    pub fn new(model: &SystemModel) -> Self {
        let drift = model.effective_drift();
        let oscillatory = model.oscillatory_terms();
        let channels: Vec<(CsrMatrix, ChannelLabel)> = model
            .collapse
            .iter()
            .map(|c| (c.op.matrix().clone(), c.label))
            .collect();
        // Gershgorin bound on the total jump rate
        let mut total_cc = CsrMatrix::zeros(model.space.total_dim());
        for (c, _) in &channels {
            total_cc = total_cc.add(&c.dagger_self());
        }
        let rate_bound = gershgorin_row_bound(&total_cc);
        // and on the generator magnitude, for the stability guard
        let mut hamiltonian_bound = gershgorin_row_bound(&drift);
        for (a, a_dag, _) in &oscillatory {
            hamiltonian_bound += gershgorin_row_bound(a) + gershgorin_row_bound(a_dag);
        }
        Self {
            space: model.space.clone(),
            drift,
            oscillatory,
            channels,
            rate_bound,
            hamiltonian_bound,
        }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    fn dim(&self) -> usize {
        self.space.total_dim()
    }

    /// out = -i (drift + oscillatory(t)) psi
    fn derivative(&self, t: f64, psi: &[C64], out: &mut [C64]) {
        self.drift.matvec(psi, out);
        for (a, a_dag, freq) in &self.oscillatory {
            let phase = C64::from_polar(1.0, -freq * t);
            a.matvec_acc(psi, phase, out);
            a_dag.matvec_acc(psi, phase.conj(), out);
        }
        for v in out.iter_mut() {
            *v = C64::new(v.im, -v.re); // multiply by -i
        }
    }
}

struct Workspace {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    stage: Vec<C64>,
    scratch: Vec<C64>,
}

impl Workspace {
    fn new(dim: usize) -> Self {
        let z = vec![C64::new(0.0, 0.0); dim];
        Self {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            stage: z.clone(),
            scratch: z,
        }
    }
}

fn rk4_step(prop: &Propagator, ws: &mut Workspace, t: f64, h: f64, psi: &[C64], out: &mut [C64]) {
    let dim = psi.len();
    prop.derivative(t, psi, &mut ws.k1);
    for i in 0..dim {
        ws.stage[i] = psi[i] + 0.5 * h * ws.k1[i];
    }
    prop.derivative(t + 0.5 * h, &ws.stage, &mut ws.k2);
    for i in 0..dim {
        ws.stage[i] = psi[i] + 0.5 * h * ws.k2[i];
    }
    prop.derivative(t + 0.5 * h, &ws.stage, &mut ws.k3);
    for i in 0..dim {
        ws.stage[i] = psi[i] + h * ws.k3[i];
    }
    prop.derivative(t + h, &ws.stage, &mut ws.k4);
    for i in 0..dim {
        out[i] = psi[i] + h / 6.0 * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
}

fn norm_sqr(psi: &[C64]) -> f64 {
    psi.iter().map(|a| a.norm_sqr()).sum()
}

fn normalize(psi: &mut [C64]) {
    let n = norm_sqr(psi).sqrt();
    if n > 0.0 {
        for a in psi.iter_mut() {
            *a /= n;
        }
    }
}

struct TrajectoryState<'a> {
    prop: &'a Propagator,
    ws: Workspace,
    psi: Vec<C64>,
    t: f64,
    dt: f64,
    threshold: f64,
    rng: ChaCha8Rng,
    jumps: Vec<JumpEvent>,
    snapshots: Vec<Snapshot>,
    cavity_jumps: u32,
    opts: &'a TrajectoryOptions,
}

impl<'a> TrajectoryState<'a> {
    fn draw_threshold(rng: &mut ChaCha8Rng) -> f64 {
        let r: f64 = rng.random();
        if r <= 0.0 {
            f64::MIN_POSITIVE
        } else {
            r
        }
    }

    fn stopped(&self) -> bool {
        self.opts
            .stop_after_cavity_jumps
            .is_some_and(|n| self.cavity_jumps >= n)
    }

    /// Advance to `t_end`, resolving any jumps on the way.
    fn advance(&mut self, t_end: f64) -> Result<(), McwfError> {
        let dim = self.psi.len();
        let mut next = vec![C64::new(0.0, 0.0); dim];
        while self.t < t_end - 1e-18 && !self.stopped() {
            let h = self.dt.min(t_end - self.t);
            let n_before = norm_sqr(&self.psi);
            rk4_step(self.prop, &mut self.ws, self.t, h, &self.psi, &mut next);
            let n_after = norm_sqr(&next);
            if n_after > n_before * (1.0 + NORM_INCREASE_TOL) {
                return Err(McwfError::NormIncrease {
                    t: self.t,
                    delta: n_after / n_before - 1.0,
                });
            }
            if n_after >= self.threshold {
                self.psi.copy_from_slice(&next);
                self.t += h;
            } else {
                // a jump fired inside (t, t+h): locate the crossing
                let tau = self.locate_jump(h, n_before, n_after);
                rk4_step(self.prop, &mut self.ws, self.t, tau, &self.psi, &mut next);
                self.psi.copy_from_slice(&next);
                self.t += tau;
                self.apply_jump()?;
            }
        }
        Ok(())
    }

    /// Bisection on the squared norm, refined by linear interpolation of the
    /// log-norm, to within dt * JUMP_TIME_RESOLUTION.
    fn locate_jump(&mut self, h: f64, n_lo_start: f64, n_hi_end: f64) -> f64 {
        let mut lo = 0.0f64;
        let mut hi = h;
        let mut n_lo = n_lo_start;
        let mut n_hi = n_hi_end;
        let dim = self.psi.len();
        let mut probe = vec![C64::new(0.0, 0.0); dim];
        while hi - lo > self.dt * JUMP_TIME_RESOLUTION {
            let mid = 0.5 * (lo + hi);
            rk4_step(self.prop, &mut self.ws, self.t, mid, &self.psi, &mut probe);
            let n_mid = norm_sqr(&probe);
            if n_mid >= self.threshold {
                lo = mid;
                n_lo = n_mid;
            } else {
                hi = mid;
                n_hi = n_mid;
            }
        }
        // log-norm interpolation inside the bracket
        if n_lo > 0.0 && n_hi > 0.0 && n_lo != n_hi {
            let f = (n_lo.ln() - self.threshold.ln()) / (n_lo.ln() - n_hi.ln());
            lo + f.clamp(0.0, 1.0) * (hi - lo)
        } else {
            0.5 * (lo + hi)
        }
    }

    fn apply_jump(&mut self) -> Result<(), McwfError> {
        // channel weights <psi|C†C|psi> via ||C psi||^2
        let mut weights = Vec::with_capacity(self.prop.channels.len());
        let mut total = 0.0f64;
        for (c, _) in &self.prop.channels {
            c.matvec(&self.psi, &mut self.ws.scratch);
            let w = norm_sqr(&self.ws.scratch);
            weights.push(w);
            total += w;
        }
        if total <= 0.0 {
            return Err(McwfError::NoJumpChannel { t: self.t });
        }
        let u: f64 = self.rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = self.prop.channels.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let (c, label) = &self.prop.channels[chosen];
        c.matvec(&self.psi, &mut self.ws.scratch);
        self.psi.copy_from_slice(&self.ws.scratch);
        normalize(&mut self.psi);
        self.threshold = Self::draw_threshold(&mut self.rng);
        self.jumps.push(JumpEvent { time: self.t, channel: *label });
        if label.is_cavity() {
            self.cavity_jumps += 1;
        }
        if self.opts.capture_post_jump {
            self.snapshots.push(Snapshot {
                time: self.t,
                kind: SnapshotKind::PostJump,
                state: StateVector::new(self.prop.space.clone(), self.psi.clone())
                    .expect("dimension fixed"),
            });
        }
        Ok(())
    }
}

/// Run a single trajectory with the generator keyed by (seed, index).
pub fn run_trajectory_keyed(
    prop: &Propagator,
    psi0: &StateVector,
    t_max: f64,
    dt: f64,
    seed: u64,
    index: u64,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryRecord, McwfError> {
    let n0 = psi0.norm_sqr();
    if (n0 - 1.0).abs() > 1e-10 {
        return Err(McwfError::NotNormalized { norm_sqr: n0 });
    }
    if psi0.space() != &prop.space {
        return Err(McwfError::Qops(QopsError::DimensionMismatch {
            expected: prop.dim(),
            got: psi0.space().total_dim(),
        }));
    }
    let rate_dt = prop.rate_bound * dt;
    if rate_dt >= MAX_RATE_DT {
        return Err(McwfError::StepTooLarge { rate_dt });
    }
    let h_dt = prop.hamiltonian_bound * dt;
    if h_dt >= MAX_HAMILTONIAN_DT {
        return Err(McwfError::StepUnstable { h_dt });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let threshold = TrajectoryState::draw_threshold(&mut rng);

    let mut state = TrajectoryState {
        prop,
        ws: Workspace::new(prop.dim()),
        psi: psi0.amplitudes().to_vec(),
        t: 0.0,
        dt,
        threshold,
        rng,
        jumps: Vec::new(),
        snapshots: Vec::new(),
        cavity_jumps: 0,
        opts,
    };

    let mut sample_times: Vec<f64> = opts
        .sample_times
        .iter()
        .copied()
        .filter(|&t| t >= 0.0 && t <= t_max)
        .collect();
    sample_times.sort_by(|a, b| a.partial_cmp(b).unwrap());

    for &ts in &sample_times {
        state.advance(ts)?;
        if state.stopped() {
            break;
        }
        let mut amps = state.psi.clone();
        normalize(&mut amps);
        state.snapshots.push(Snapshot {
            time: state.t,
            kind: SnapshotKind::Grid,
            state: StateVector::new(prop.space.clone(), amps).expect("dimension fixed"),
        });
    }
    state.advance(t_max)?;

    let mut final_amps = state.psi;
    normalize(&mut final_amps);
    Ok(TrajectoryRecord {
        seed,
        index,
        times: sample_times,
        jumps: state.jumps,
        snapshots: state.snapshots,
        final_state: StateVector::new(prop.space.clone(), final_amps).expect("dimension fixed"),
        final_time: state.t,
    })
}

/// Run one trajectory of the given model (stream index 0).
pub fn run_trajectory(
    model: &SystemModel,
    psi0: &StateVector,
    t_max: f64,
    dt: f64,
    seed: u64,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryRecord, McwfError> {
    let prop = Propagator::new(model);
    run_trajectory_keyed(&prop, psi0, t_max, dt, seed, 0, opts)
}

/// Ensemble controls.
#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    pub trajectory: TrajectoryOptions,
    /// Accumulate the ensemble-averaged density matrix on the sample grid.
    pub average_density: bool,
    /// Keep the per-trajectory records in the result.
    pub keep_records: bool,
    /// Number of bins of the per-channel jump-time histograms over
    /// [0, t_max].
    pub histogram_bins: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryOptions::default(),
            average_density: false,
            keep_records: false,
            histogram_bins: 50,
        }
    }
}

/// Aggregated ensemble output.
pub struct EnsembleResult {
    pub n_traj: usize,
    pub sample_times: Vec<f64>,
    /// Ensemble average of |psi><psi| at each sample time (if requested).
    pub averaged_rho: Option<Vec<DensityMatrix>>,
    pub jump_counts: BTreeMap<String, u64>,
    pub jump_histograms: BTreeMap<String, Vec<u64>>,
    pub records: Option<Vec<TrajectoryRecord>>,
}

// Fixed chunk size for the deterministic parallel reduction. Results are
// independent of the worker count because chunk partials are merged in
// chunk-index order.
const ENSEMBLE_CHUNK: usize = 32;

struct ChunkAccumulator {
    rho_sums: Option<Vec<Array2<C64>>>,
    jump_counts: BTreeMap<String, u64>,
    jump_histograms: BTreeMap<String, Vec<u64>>,
    records: Vec<TrajectoryRecord>,
}

/// Run `n_traj` trajectories with streams `0..n_traj` of `seed`.
///
/// Deterministic for fixed inputs regardless of the rayon worker count.
/// A failing trajectory aborts the ensemble and reports its stream.
pub fn run_ensemble(
    model: &SystemModel,
    psi0: &StateVector,
    t_max: f64,
    dt: f64,
    n_traj: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult, McwfError> {
    let prop = Propagator::new(model);
    let dim = prop.dim();
    let mut sample_times: Vec<f64> = opts
        .trajectory
        .sample_times
        .iter()
        .copied()
        .filter(|&t| t >= 0.0 && t <= t_max)
        .collect();
    sample_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n_samples = sample_times.len();
    let hist_bins = opts.histogram_bins.max(1);

    let indices: Vec<u64> = (0..n_traj as u64).collect();
    let chunks: Vec<Result<ChunkAccumulator, McwfError>> = indices
        .par_chunks(ENSEMBLE_CHUNK)
        .map(|chunk| {
            let mut acc = ChunkAccumulator {
                rho_sums: if opts.average_density {
                    Some(vec![Array2::zeros((dim, dim)); n_samples])
                } else {
                    None
                },
                jump_counts: BTreeMap::new(),
                jump_histograms: BTreeMap::new(),
                records: Vec::new(),
            };
            for &index in chunk {
                let record =
                    run_trajectory_keyed(&prop, psi0, t_max, dt, seed, index, &opts.trajectory)
                        .map_err(|e| McwfError::TrajectoryFailed {
                            index,
                            seed,
                            source: Box::new(e),
                        })?;
                for jump in &record.jumps {
                    let key = jump.channel.to_string();
                    *acc.jump_counts.entry(key.clone()).or_insert(0) += 1;
                    let hist = acc
                        .jump_histograms
                        .entry(key)
                        .or_insert_with(|| vec![0u64; hist_bins]);
                    let bin = ((jump.time / t_max) * hist_bins as f64) as usize;
                    hist[bin.min(hist_bins - 1)] += 1;
                }
                if let Some(rho_sums) = acc.rho_sums.as_mut() {
                    let grid: Vec<&Snapshot> = record
                        .snapshots
                        .iter()
                        .filter(|s| s.kind == SnapshotKind::Grid)
                        .collect();
                    for (k, snap) in grid.iter().enumerate() {
                        let amps = snap.state.amplitudes();
                        let sum = &mut rho_sums[k];
                        for (r, ar) in amps.iter().enumerate() {
                            for (c, ac) in amps.iter().enumerate() {
                                sum[[r, c]] += ar * ac.conj();
                            }
                        }
                    }
                }
                if opts.keep_records {
                    acc.records.push(record);
                }
            }
            Ok(acc)
        })
        .collect();

    // merge in chunk order
    let mut rho_sums: Option<Vec<Array2<C64>>> = if opts.average_density {
        Some(vec![Array2::zeros((dim, dim)); n_samples])
    } else {
        None
    };
    let mut jump_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut jump_histograms: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut records: Vec<TrajectoryRecord> = Vec::new();
    for chunk in chunks {
        let chunk = chunk?;
        if let (Some(total), Some(part)) = (rho_sums.as_mut(), chunk.rho_sums.as_ref()) {
            for (t, p) in total.iter_mut().zip(part) {
                *t += p;
            }
        }
        for (k, v) in chunk.jump_counts {
            *jump_counts.entry(k).or_insert(0) += v;
        }
        for (k, v) in chunk.jump_histograms {
            let e = jump_histograms.entry(k).or_insert_with(|| vec![0u64; hist_bins]);
            for (a, b) in e.iter_mut().zip(v) {
                *a += b;
            }
        }
        records.extend(chunk.records);
    }

    let averaged_rho = rho_sums.map(|sums| {
        sums.into_iter()
            .map(|s| {
                DensityMatrix::new(prop.space.clone(), s.mapv(|v| v / n_traj as f64))
                    .expect("dimension fixed")
            })
            .collect()
    });

    Ok(EnsembleResult {
        n_traj,
        sample_times,
        averaged_rho,
        jump_counts,
        jump_histograms,
        records: if opts.keep_records { Some(records) } else { None },
    })
}

/// Map every trajectory of an ensemble through `f`, in parallel, returning
/// results in trajectory order. Used for streaming pipelines that do not
/// need to keep full records in memory.
pub fn map_trajectories<T, F>(
    model: &SystemModel,
    psi0: &StateVector,
    t_max: f64,
    dt: f64,
    n_traj: usize,
    seed: u64,
    opts: &TrajectoryOptions,
    f: F,
) -> Result<Vec<T>, McwfError>
where
    T: Send,
    F: Fn(&TrajectoryRecord) -> T + Sync,
{
    let prop = Propagator::new(model);
    (0..n_traj as u64)
        .into_par_iter()
        .map(|index| {
            let record = run_trajectory_keyed(&prop, psi0, t_max, dt, seed, index, opts)
                .map_err(|e| McwfError::TrajectoryFailed { index, seed, source: Box::new(e) })?;
            Ok(f(&record))
        })
        .collect()
}

/// Dense Lindblad evolution, sampled at `sample_times`.
///
/// dr/dt = -i[H, r] + sum_k (C r C† - 1/2 {C†C, r}); trace preserved within
/// 1e-8, checked at every sample point.
pub fn master_equation(
    model: &SystemModel,
    rho0: &DensityMatrix,
    t_max: f64,
    dt: f64,
    sample_times: &[f64],
) -> Result<Vec<DensityMatrix>, McwfError> {
    let dim = model.space.total_dim();
    if dim > MASTER_EQUATION_MAX_DIM {
        return Err(McwfError::DimensionTooLarge { dim, max: MASTER_EQUATION_MAX_DIM });
    }
    let h_static = model.static_hamiltonian().to_dense();
    let oscillatory: Vec<(Array2<C64>, f64)> = model
        .oscillatory_terms()
        .into_iter()
        .map(|(a, _, freq)| (a.to_dense(), freq))
        .collect();
    let channels: Vec<(Array2<C64>, Array2<C64>)> = model
        .collapse
        .iter()
        .map(|c| {
            let dense = c.op.to_dense();
            let cc = c.op.matrix().dagger_self().to_dense();
            (dense, cc)
        })
        .collect();

    let h_at = |t: f64| -> Array2<C64> {
        let mut h = h_static.clone();
        for (a, freq) in &oscillatory {
            let phase = C64::from_polar(1.0, -freq * t);
            h = h + a.mapv(|v| v * phase) + a.t().mapv(|v| v.conj() * phase.conj());
        }
        h
    };

    let rhs = |t: f64, rho: &Array2<C64>| -> Array2<C64> {
        let h = h_at(t);
        let minus_i = C64::new(0.0, -1.0);
        let mut out = (h.dot(rho) - rho.dot(&h)).mapv(|v| v * minus_i);
        for (c, cc) in &channels {
            let c_dag = c.t().mapv(|v| v.conj());
            out = out + c.dot(rho).dot(&c_dag)
                - (cc.dot(rho) + rho.dot(cc)).mapv(|v| v * 0.5);
        }
        out
    };

    let mut samples: Vec<f64> = sample_times
        .iter()
        .copied()
        .filter(|&t| t >= 0.0 && t <= t_max)
        .collect();
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut rho = rho0.matrix().clone();
    let mut t = 0.0f64;
    let mut out = Vec::with_capacity(samples.len());
    for &ts in &samples {
        while t < ts - 1e-18 {
            let h = dt.min(ts - t);
            let k1 = rhs(t, &rho);
            let k2 = rhs(t + 0.5 * h, &(&rho + &k1.mapv(|v| v * (0.5 * h))));
            let k3 = rhs(t + 0.5 * h, &(&rho + &k2.mapv(|v| v * (0.5 * h))));
            let k4 = rhs(t + h, &(&rho + &k3.mapv(|v| v * h)));
            rho = &rho
                + &(k1 + k2.mapv(|v| v * 2.0) + k3.mapv(|v| v * 2.0) + k4)
                    .mapv(|v| v * (h / 6.0));
            t += h;
        }
        let trace = rho.diag().sum();
        let drift = (trace - C64::new(1.0, 0.0)).norm();
        if drift > 1e-8 {
            return Err(McwfError::TraceDrift { t, drift });
        }
        out.push(DensityMatrix::new(model.space.clone(), rho.clone())?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SnapshotLine {
    time: f64,
    kind: SnapshotKind,
    /// Interleaved [re0, im0, re1, im1, ...].
    amplitudes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    version: u32,
    seed: u64,
    index: u64,
    times: Vec<f64>,
    jumps: Vec<(f64, String)>,
    snapshots: Vec<SnapshotLine>,
    final_time: f64,
    final_state: Vec<f64>,
    space_factors: Vec<usize>,
}

fn flatten(amps: &[C64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * amps.len());
    for a in amps {
        out.push(a.re);
        out.push(a.im);
    }
    out
}

fn unflatten(flat: &[f64]) -> Vec<C64> {
    flat.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect()
}

/// Serialize records as JSON lines, one trajectory per line.
pub fn write_records_jsonl<W: Write>(
    mut w: W,
    records: &[TrajectoryRecord],
) -> Result<(), McwfError> {
    for r in records {
        let line = RecordLine {
            version: RECORD_FORMAT_VERSION,
            seed: r.seed,
            index: r.index,
            times: r.times.clone(),
            jumps: r.jumps.iter().map(|j| (j.time, j.channel.to_string())).collect(),
            snapshots: r
                .snapshots
                .iter()
                .map(|s| SnapshotLine {
                    time: s.time,
                    kind: s.kind,
                    amplitudes: flatten(s.state.amplitudes()),
                })
                .collect(),
            final_time: r.final_time,
            final_state: flatten(r.final_state.amplitudes()),
            space_factors: r.final_state.space().factors().to_vec(),
        };
        let text = serde_json::to_string(&line)
            .map_err(|e| McwfError::BadRecord(e.to_string()))?;
        w.write_all(text.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| McwfError::BadRecord(e.to_string()))?;
    }
    Ok(())
}

/// Read records written by [`write_records_jsonl`].
pub fn read_records_jsonl<R: BufRead>(r: R) -> Result<Vec<TrajectoryRecord>, McwfError> {
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line.map_err(|e| McwfError::BadRecord(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line)
            .map_err(|e| McwfError::BadRecord(format!("line {}: {e}", k + 1)))?;
        if parsed.version != RECORD_FORMAT_VERSION {
            return Err(McwfError::BadRecord(format!(
                "line {}: unsupported version {}",
                k + 1,
                parsed.version
            )));
        }
        let space = HilbertSpace::new(&parsed.space_factors)?;
        let jumps = parsed
            .jumps
            .iter()
            .map(|(t, label)| {
                label
                    .parse()
                    .map(|channel| JumpEvent { time: *t, channel })
                    .map_err(|e| McwfError::BadRecord(format!("line {}: {e}", k + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let snapshots = parsed
            .snapshots
            .iter()
            .map(|s| {
                StateVector::new(space.clone(), unflatten(&s.amplitudes))
                    .map(|state| Snapshot { time: s.time, kind: s.kind, state })
                    .map_err(McwfError::Qops)
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(TrajectoryRecord {
            seed: parsed.seed,
            index: parsed.index,
            times: parsed.times,
            jumps,
            snapshots,
            final_state: StateVector::new(space, unflatten(&parsed.final_state))?,
            final_time: parsed.final_time,
        });
    }
    Ok(out)
}
