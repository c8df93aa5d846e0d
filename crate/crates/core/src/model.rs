//! System model for two ions coupled to two cavity modes.
//!
//! Each ion carries five levels: the ground state S, the two Raman target
//! states D and D' (entangled with the H and V cavity polarizations), the
//! intermediate P state, and one auxiliary Zeeman state in the D manifold
//! that is weakly coupled off-resonantly. The global Hilbert-space layout is
//! `(ion 1, ion 2, mode H, mode V)` with a configurable photon-number cutoff
//! per mode.
//!
//! Two treatments of the Raman process are available:
//!
//! - [`RamanTreatment::Effective`] (default): the far-detuned P level is
//!   eliminated; each drive field becomes a two-photon vertex
//!   `g_eff (|X><S| a† + h.c.)` with `g_eff` and the induced scattering rate
//!   `gamma_eff` given by [`effective_rates`]. This is the production model:
//!   the fastest remaining scale is the auxiliary Zeeman detuning, so
//!   nanosecond steps integrate it accurately.
//! - [`RamanTreatment::Explicit`]: the P level is kept with its detuning and
//!   the drive acts as `Omega/2 (|P><S| + h.c.)`. Intended for small oracle
//!   checks where the detuning can be kept modest.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qops::{embed, C64, CsrMatrix, HilbertSpace, Operator, QopsError};

/// Level indices within one ion factor.
pub mod levels {
    pub const S: usize = 0;
    pub const D: usize = 1;
    pub const D_PRIME: usize = 2;
    pub const P: usize = 3;
    pub const D_AUX: usize = 4;
    pub const COUNT: usize = 5;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("drive detuning must be nonzero for Raman operation")]
    ZeroDetuning,
    #[error("branching ratios must sum to 1 within 1e-12, got {sum}")]
    BranchingNotNormalized { sum: f64 },
    #[error("photon-number cutoff must be at least 2, got {0}")]
    CutoffTooSmall(usize),
    #[error("need one or two drive fields, got {0}")]
    BadDriveCount(usize),
    #[error("ion factor dimension {0} does not contain the required levels")]
    UnsupportedIonDimension(usize),
    #[error("level detunings must be finite")]
    NonFiniteDetuning,
    #[error(transparent)]
    Qops(#[from] QopsError),
}

/// Rotating-frame detunings of the five ion levels, rad/s.
///
/// Order: S, D, D', P, D_aux.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonLevelSet {
    pub detunings: [f64; levels::COUNT],
}

impl IonLevelSet {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.detunings.iter().any(|d| !d.is_finite()) {
            return Err(ModelError::NonFiniteDetuning);
        }
        Ok(())
    }
}

/// Which D-manifold state a drive field targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RamanTarget {
    D,
    DPrime,
}

/// One tone of the bichromatic Raman field.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DriveField {
    /// Rabi frequency, rad/s.
    pub rabi: f64,
    /// Detuning from P, rad/s.
    pub detuning: f64,
    /// Target branch.
    pub target: RamanTarget,
    /// Optical phase, rad.
    pub phase: f64,
    /// Laser linewidth, rad/s.
    pub linewidth: f64,
}

impl DriveField {
    /// Tone driving S -> D (H photon) at the strengths used throughout.
    pub fn reference_drive_d() -> Self {
        Self {
            rabi: TAU * 47e6,
            detuning: TAU * 400e6,
            target: RamanTarget::D,
            phase: 0.0,
            linewidth: TAU * 10e3,
        }
    }

    /// Tone driving S -> D' (V photon).
    pub fn reference_drive_dprime() -> Self {
        Self {
            rabi: TAU * 29e6,
            detuning: TAU * 400e6,
            target: RamanTarget::DPrime,
            phase: 0.0,
            linewidth: TAU * 10e3,
        }
    }
}

/// Branching of spontaneous decay out of P into (S, D manifold, D').
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Branching {
    pub to_s: f64,
    pub to_d: f64,
    pub to_d_prime: f64,
}

impl Branching {
    pub fn validate(&self) -> Result<(), ModelError> {
        let sum = self.to_s + self.to_d + self.to_d_prime;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ModelError::BranchingNotNormalized { sum });
        }
        Ok(())
    }
}

/// Transition-strength coefficients entering the effective rates.
///
/// The exact Clebsch-Gordan-resolved forms are not reproduced here; these
/// coefficients are calibrated so that the combined bichromatic rates hit
/// the quoted system parameters (see `SystemParams::experiment_defaults`).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CgCoefficients {
    /// Multiplies g * Omega / (2 Delta) for the S -> D channel.
    pub g_d: f64,
    /// Multiplies g * Omega / (2 Delta) for the S -> D' channel.
    pub g_d_prime: f64,
    /// Multiplies gamma * Omega^2 / (4 Delta^2).
    pub gamma: f64,
}

/// Cavity, atom and coupling parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SystemParams {
    /// Cavity field decay rate, rad/s.
    pub kappa: f64,
    /// Total atomic decay half-width of P, rad/s.
    pub gamma: f64,
    /// Bare atom-cavity coupling, rad/s.
    pub g0: f64,
    /// Motion-reduced coupling used for the rates, rad/s.
    pub g_motion: f64,
    /// Per-ion relative coupling amplitudes (from geometry), dimensionless.
    pub coupling_relative: [f64; 2],
    pub branching: Branching,
    pub cg: CgCoefficients,
    /// Detuning of the auxiliary Zeeman state, rad/s.
    pub zeeman_detuning_aux: f64,
    /// Strength of the auxiliary off-resonant Raman vertex relative to the
    /// S -> D effective coupling.
    pub aux_coupling_ratio: f64,
    /// D / D' Zeeman splitting at which bichromatic cross terms oscillate,
    /// rad/s.
    pub zeeman_splitting_dd: f64,
}

impl SystemParams {
    /// Parameters of the heralded-entanglement experiment. The CG
    /// coefficients are calibrated so the combined bichromatic rates
    /// reproduce {g_eff, gamma_eff} = 2 pi x {37, 54} kHz with the
    /// reference drives.
    pub fn experiment_defaults() -> Self {
        Self {
            kappa: TAU * 50e3,
            gamma: TAU * 11.5e6,
            g0: TAU * 1.4e6,
            g_motion: TAU * 1.0e6,
            coupling_relative: [1.0, 1.0],
            branching: Branching { to_s: 0.94, to_d: 0.006, to_d_prime: 0.054 },
            cg: CgCoefficients { g_d: 0.445327, g_d_prime: 0.721740, gamma: 0.985317 },
            zeeman_detuning_aux: TAU * 10e6,
            aux_coupling_ratio: 0.5,
            zeeman_splitting_dd: TAU * 10e6,
        }
    }

    /// Per-ion absolute coupling, rad/s.
    pub fn g_per_ion(&self, ion: usize) -> f64 {
        self.g_motion * self.coupling_relative[ion]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.branching.validate()
    }
}

/// Effective two-photon coupling and induced scattering rate for one drive:
/// g_eff = c_g * g * Omega / (2 Delta), gamma_eff = c_gamma * gamma *
/// Omega^2 / (4 Delta^2).
pub fn effective_rates(drive: &DriveField, params: &SystemParams) -> Result<(f64, f64), ModelError> {
    if drive.detuning == 0.0 {
        return Err(ModelError::ZeroDetuning);
    }
    let cg = match drive.target {
        RamanTarget::D => params.cg.g_d,
        RamanTarget::DPrime => params.cg.g_d_prime,
    };
    let g_eff = cg * params.g_motion * drive.rabi / (2.0 * drive.detuning);
    let ratio = drive.rabi / (2.0 * drive.detuning);
    let gamma_eff = params.cg.gamma * params.gamma * ratio * ratio;
    Ok((g_eff.abs(), gamma_eff))
}

/// Combine the two tones: amplitudes add in quadrature, scattering rates
/// add linearly.
pub fn combine_bichromatic(g1: f64, g2: f64, gamma1: f64, gamma2: f64) -> (f64, f64) {
    ((g1 * g1 + g2 * g2).sqrt(), gamma1 + gamma2)
}

/// Time dependence of a Hamiltonian term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeDependence {
    /// Hermitian, constant in time.
    Static,
    /// Contributes A e^{-i freq t} + A† e^{+i freq t}.
    Oscillatory { freq: f64 },
}

/// Collapse-channel labels, unique per (channel, ion).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelLabel {
    CavityH,
    CavityV,
    SpontS(usize),
    SpontD(usize),
    SpontDPrime(usize),
    /// None: collective over both ions.
    LaserDephasing(Option<usize>),
}

impl ChannelLabel {
    pub fn is_cavity(&self) -> bool {
        matches!(self, ChannelLabel::CavityH | ChannelLabel::CavityV)
    }

    pub fn is_spontaneous(&self) -> bool {
        matches!(
            self,
            ChannelLabel::SpontS(_) | ChannelLabel::SpontD(_) | ChannelLabel::SpontDPrime(_)
        )
    }
}

impl fmt::Display for ChannelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelLabel::CavityH => write!(f, "cavity_H"),
            ChannelLabel::CavityV => write!(f, "cavity_V"),
            ChannelLabel::SpontS(i) => write!(f, "spont_S_{}", i + 1),
            ChannelLabel::SpontD(i) => write!(f, "spont_D_{}", i + 1),
            ChannelLabel::SpontDPrime(i) => write!(f, "spont_Dprime_{}", i + 1),
            ChannelLabel::LaserDephasing(None) => write!(f, "laser_dephasing"),
            ChannelLabel::LaserDephasing(Some(i)) => write!(f, "laser_dephasing_{}", i + 1),
        }
    }
}

impl FromStr for ChannelLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_ion = |t: &str| -> Result<usize, String> {
            t.parse::<usize>()
                .map_err(|e| e.to_string())
                .and_then(|v| if v >= 1 { Ok(v - 1) } else { Err("ion index".into()) })
        };
        match s {
            "cavity_H" => Ok(ChannelLabel::CavityH),
            "cavity_V" => Ok(ChannelLabel::CavityV),
            "laser_dephasing" => Ok(ChannelLabel::LaserDephasing(None)),
            other => {
                if let Some(t) = other.strip_prefix("spont_S_") {
                    Ok(ChannelLabel::SpontS(parse_ion(t)?))
                } else if let Some(t) = other.strip_prefix("spont_Dprime_") {
                    Ok(ChannelLabel::SpontDPrime(parse_ion(t)?))
                } else if let Some(t) = other.strip_prefix("spont_D_") {
                    Ok(ChannelLabel::SpontD(parse_ion(t)?))
                } else if let Some(t) = other.strip_prefix("laser_dephasing_") {
                    Ok(ChannelLabel::LaserDephasing(Some(parse_ion(t)?)))
                } else {
                    Err(format!("unknown channel label {other}"))
                }
            }
        }
    }
}

/// One Hamiltonian term.
#[derive(Debug, Clone)]
pub struct HamiltonianTerm {
    pub op: Operator,
    pub time_dependence: TimeDependence,
}

/// One collapse channel; the rate is folded into the operator amplitude.
#[derive(Debug, Clone)]
pub struct CollapseChannel {
    pub op: Operator,
    pub label: ChannelLabel,
}

/// Hamiltonian terms, collapse channels and Hilbert-space layout.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub space: HilbertSpace,
    pub hamiltonian: Vec<HamiltonianTerm>,
    pub collapse: Vec<CollapseChannel>,
}

impl SystemModel {
    /// Sum of the static Hamiltonian terms.
    pub fn static_hamiltonian(&self) -> Operator {
        let mut acc = Operator::zeros(&self.space);
        for term in &self.hamiltonian {
            if term.time_dependence == TimeDependence::Static {
                acc = acc.add(&term.op).expect("same space");
            }
        }
        acc
    }

    /// Oscillatory terms as (matrix, adjoint, frequency).
    pub fn oscillatory_terms(&self) -> Vec<(CsrMatrix, CsrMatrix, f64)> {
        self.hamiltonian
            .iter()
            .filter_map(|t| match t.time_dependence {
                TimeDependence::Oscillatory { freq } => {
                    Some((t.op.matrix().clone(), t.op.matrix().adjoint(), freq))
                }
                TimeDependence::Static => None,
            })
            .collect()
    }

    /// H_static - (i/2) sum C†C, the non-Hermitian drift generator.
    pub fn effective_drift(&self) -> CsrMatrix {
        let mut acc = self.static_hamiltonian().into_matrix();
        for ch in &self.collapse {
            let cc = ch.op.matrix().dagger_self();
            acc = acc.add(&cc.scaled(C64::new(0.0, -0.5)));
        }
        acc
    }
}

/// How the Raman process is represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RamanTreatment {
    Effective,
    Explicit,
}

/// How laser phase noise is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DephasingMode {
    /// One noise operator acting on both ions (shared drive laser).
    Collective,
    /// Independent noise per ion.
    PerIon,
}

/// Options for [`build_system`].
#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub raman: RamanTreatment,
    /// Keep the bichromatic cross terms as oscillatory Hamiltonian terms at
    /// the D/D' Zeeman splitting. Default false (rotating-wave dropped).
    pub keep_cross_terms: bool,
    pub dephasing: DephasingMode,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            raman: RamanTreatment::Effective,
            keep_cross_terms: false,
            dephasing: DephasingMode::Collective,
        }
    }
}

/// The standard two-ion two-mode space with the given photon-number cutoff
/// (factor dimension cutoff + 1 per mode).
pub fn standard_space(cutoff: usize) -> HilbertSpace {
    HilbertSpace::new(&[levels::COUNT, levels::COUNT, cutoff + 1, cutoff + 1])
        .expect("valid factors")
}

fn ion_operator(
    space: &HilbertSpace,
    ion: usize,
    triplets: &[(usize, usize, C64)],
) -> Result<Operator, ModelError> {
    let dim = space.factors()[ion];
    let single = HilbertSpace::single(dim).map_err(ModelError::Qops)?;
    let op = Operator::new(single, CsrMatrix::from_triplets(dim, triplets))?;
    Ok(embed(&op, ion, space)?)
}

fn annihilator(space: &HilbertSpace, mode: usize) -> Result<Operator, ModelError> {
    let dim = space.factors()[mode];
    let single = HilbertSpace::single(dim).map_err(ModelError::Qops)?;
    let trip: Vec<(usize, usize, C64)> = (1..dim)
        .map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0)))
        .collect();
    let op = Operator::new(single, CsrMatrix::from_triplets(dim, &trip))?;
    Ok(embed(&op, mode, space)?)
}

/// Mode index of a Raman target's photon.
fn mode_of(target: RamanTarget) -> usize {
    match target {
        RamanTarget::D => 2,
        RamanTarget::DPrime => 3,
    }
}

fn level_of(target: RamanTarget) -> usize {
    match target {
        RamanTarget::D => levels::D,
        RamanTarget::DPrime => levels::D_PRIME,
    }
}

/// Build the full [`SystemModel`].
///
/// `per_ion_coupling` multiplies every cavity vertex of that ion (relative
/// standing-wave amplitude from geometry); it is usually
/// `params.coupling_relative`. `cutoff` is the photon-number cutoff per
/// mode, at least 2 so that the reabsorption channel is represented.
pub fn build_system(
    params: &SystemParams,
    drives: &[DriveField],
    per_ion_coupling: [f64; 2],
    cutoff: usize,
    options: &BuildOptions,
) -> Result<SystemModel, ModelError> {
    params.validate()?;
    if cutoff < 2 {
        return Err(ModelError::CutoffTooSmall(cutoff));
    }
    if drives.is_empty() || drives.len() > 2 {
        return Err(ModelError::BadDriveCount(drives.len()));
    }
    for d in drives {
        if d.detuning == 0.0 {
            return Err(ModelError::ZeroDetuning);
        }
    }
    let space = standard_space(cutoff);
    let mut hamiltonian: Vec<HamiltonianTerm> = Vec::new();
    let mut collapse: Vec<CollapseChannel> = Vec::new();

    let one = C64::new(1.0, 0.0);
    let a_h = annihilator(&space, 2)?;
    let a_v = annihilator(&space, 3)?;

    // level detuning diagonals (rotating frame)
    let levelset = IonLevelSet {
        detunings: match options.raman {
            RamanTreatment::Effective => [0.0, 0.0, 0.0, 0.0, params.zeeman_detuning_aux],
            RamanTreatment::Explicit => {
                [0.0, 0.0, 0.0, -drives[0].detuning, params.zeeman_detuning_aux]
            }
        },
    };
    levelset.validate()?;
    for ion in 0..2 {
        let trip: Vec<(usize, usize, C64)> = levelset
            .detunings
            .iter()
            .enumerate()
            .filter(|(_, &d)| d != 0.0)
            .map(|(l, &d)| (l, l, C64::new(d, 0.0)))
            .collect();
        if !trip.is_empty() {
            hamiltonian.push(HamiltonianTerm {
                op: ion_operator(&space, ion, &trip)?,
                time_dependence: TimeDependence::Static,
            });
        }
    }

    match options.raman {
        RamanTreatment::Effective => {
            // per-drive effective two-photon vertices
            let mut g_eff_d = 0.0;
            for drive in drives {
                let (g_eff, _) = effective_rates(drive, params)?;
                if drive.target == RamanTarget::D {
                    g_eff_d = g_eff;
                }
                let target_level = level_of(drive.target);
                let mode = mode_of(drive.target);
                let a = if mode == 2 { &a_h } else { &a_v };
                let phase = C64::from_polar(1.0, drive.phase);
                for ion in 0..2 {
                    let lambda = per_ion_coupling[ion];
                    if lambda == 0.0 || g_eff == 0.0 {
                        continue;
                    }
                    // lambda g_eff (e^{i theta} |X><S| a† + h.c.)
                    let raise = ion_operator(&space, ion, &[(target_level, levels::S, phase)])?
                        .matmul(&a.adjoint())?
                        .scaled(C64::new(lambda * g_eff, 0.0));
                    let term = raise.add(&raise.adjoint())?;
                    hamiltonian.push(HamiltonianTerm {
                        op: term,
                        time_dependence: TimeDependence::Static,
                    });
                }
                // bichromatic cross process: same drive, wrong target,
                // oscillating at the D/D' Zeeman splitting
                if options.keep_cross_terms {
                    let (cross_target, cross_cg, freq) = match drive.target {
                        RamanTarget::D => {
                            (RamanTarget::DPrime, params.cg.g_d_prime, params.zeeman_splitting_dd)
                        }
                        RamanTarget::DPrime => {
                            (RamanTarget::D, params.cg.g_d, -params.zeeman_splitting_dd)
                        }
                    };
                    let g_cross =
                        (cross_cg * params.g_motion * drive.rabi / (2.0 * drive.detuning)).abs();
                    let cmode = mode_of(cross_target);
                    let a = if cmode == 2 { &a_h } else { &a_v };
                    for ion in 0..2 {
                        let lambda = per_ion_coupling[ion];
                        if lambda == 0.0 || g_cross == 0.0 {
                            continue;
                        }
                        let raise = ion_operator(
                            &space,
                            ion,
                            &[(level_of(cross_target), levels::S, phase)],
                        )?
                        .matmul(&a.adjoint())?
                        .scaled(C64::new(lambda * g_cross, 0.0));
                        hamiltonian.push(HamiltonianTerm {
                            op: raise,
                            time_dependence: TimeDependence::Oscillatory { freq },
                        });
                    }
                }
            }

            // auxiliary Zeeman state: weak off-resonant vertex on the H mode
            if params.aux_coupling_ratio != 0.0 && g_eff_d > 0.0 {
                let g_aux = params.aux_coupling_ratio * g_eff_d;
                for ion in 0..2 {
                    let lambda = per_ion_coupling[ion];
                    if lambda == 0.0 {
                        continue;
                    }
                    let raise = ion_operator(&space, ion, &[(levels::D_AUX, levels::S, one)])?
                        .matmul(&a_h.adjoint())?
                        .scaled(C64::new(lambda * g_aux, 0.0));
                    let term = raise.add(&raise.adjoint())?;
                    hamiltonian.push(HamiltonianTerm {
                        op: term,
                        time_dependence: TimeDependence::Static,
                    });
                }
            }

            // effective scattering out of S, total rate 2 gamma_eff per ion,
            // split among the branching targets
            let gamma_eff_total: f64 = drives
                .iter()
                .map(|d| effective_rates(d, params).map(|(_, g)| g))
                .sum::<Result<f64, _>>()?;
            if gamma_eff_total > 0.0 {
                for ion in 0..2 {
                    for (branch, label, target) in [
                        (params.branching.to_s, ChannelLabel::SpontS(ion), levels::S),
                        (params.branching.to_d, ChannelLabel::SpontD(ion), levels::D),
                        (
                            params.branching.to_d_prime,
                            ChannelLabel::SpontDPrime(ion),
                            levels::D_PRIME,
                        ),
                    ] {
                        if branch == 0.0 {
                            continue;
                        }
                        let amp = (2.0 * gamma_eff_total * branch).sqrt();
                        let op = ion_operator(
                            &space,
                            ion,
                            &[(target, levels::S, C64::new(amp, 0.0))],
                        )?;
                        collapse.push(CollapseChannel { op, label });
                    }
                }
            }
        }
        RamanTreatment::Explicit => {
            // drive vertices Omega/2 (|P><S| e^{i theta} + h.c.); the first
            // tone is static in its own frame, a second tone oscillates at
            // the detuning difference
            for (k, drive) in drives.iter().enumerate() {
                let phase = C64::from_polar(1.0, drive.phase);
                for ion in 0..2 {
                    let raise = ion_operator(
                        &space,
                        ion,
                        &[(levels::P, levels::S, phase * C64::new(drive.rabi / 2.0, 0.0))],
                    )?;
                    if k == 0 || drive.detuning == drives[0].detuning {
                        let term = raise.add(&raise.adjoint())?;
                        hamiltonian.push(HamiltonianTerm {
                            op: term,
                            time_dependence: TimeDependence::Static,
                        });
                    } else {
                        hamiltonian.push(HamiltonianTerm {
                            op: raise,
                            time_dependence: TimeDependence::Oscillatory {
                                freq: drives[0].detuning - drive.detuning,
                            },
                        });
                    }
                }
            }
            // cavity vertices g_i (a† |X><P| + h.c.) for X in {D, D'}
            for ion in 0..2 {
                let lambda = per_ion_coupling[ion];
                if lambda == 0.0 {
                    continue;
                }
                for (cg, level, a) in [
                    (params.cg.g_d, levels::D, &a_h),
                    (params.cg.g_d_prime, levels::D_PRIME, &a_v),
                ] {
                    // lambda already carries the per-ion relative amplitude
                    let amp = lambda * cg * params.g_motion;
                    let lower = ion_operator(&space, ion, &[(level, levels::P, one)])?;
                    let raise = a.adjoint().matmul(&lower)?.scaled(C64::new(amp, 0.0));
                    let term = raise.add(&raise.adjoint())?;
                    hamiltonian.push(HamiltonianTerm {
                        op: term,
                        time_dependence: TimeDependence::Static,
                    });
                }
            }
            // spontaneous decay out of P, total rate 2 gamma per ion
            for ion in 0..2 {
                for (branch, label, target) in [
                    (params.branching.to_s, ChannelLabel::SpontS(ion), levels::S),
                    (params.branching.to_d, ChannelLabel::SpontD(ion), levels::D),
                    (params.branching.to_d_prime, ChannelLabel::SpontDPrime(ion), levels::D_PRIME),
                ] {
                    if branch == 0.0 || params.gamma == 0.0 {
                        continue;
                    }
                    let amp = (2.0 * params.gamma * branch).sqrt();
                    let op =
                        ion_operator(&space, ion, &[(target, levels::P, C64::new(amp, 0.0))])?;
                    collapse.push(CollapseChannel { op, label });
                }
            }
        }
    }

    // cavity field decay
    if params.kappa > 0.0 {
        let amp = C64::new((2.0 * params.kappa).sqrt(), 0.0);
        collapse.push(CollapseChannel { op: a_h.scaled(amp), label: ChannelLabel::CavityH });
        collapse.push(CollapseChannel { op: a_v.scaled(amp), label: ChannelLabel::CavityV });
    }

    // laser phase noise as dephasing of the S population
    let linewidth = drives.iter().map(|d| d.linewidth).fold(0.0, f64::max);
    if linewidth > 0.0 {
        let amp = C64::new((2.0 * linewidth).sqrt(), 0.0);
        match options.dephasing {
            DephasingMode::Collective => {
                let mut op = ion_operator(&space, 0, &[(levels::S, levels::S, amp)])?;
                op = op.add(&ion_operator(&space, 1, &[(levels::S, levels::S, amp)])?)?;
                collapse.push(CollapseChannel { op, label: ChannelLabel::LaserDephasing(None) });
            }
            DephasingMode::PerIon => {
                for ion in 0..2 {
                    let op = ion_operator(&space, ion, &[(levels::S, levels::S, amp)])?;
                    collapse.push(CollapseChannel {
                        op,
                        label: ChannelLabel::LaserDephasing(Some(ion)),
                    });
                }
            }
        }
    }

    Ok(SystemModel { space, hamiltonian, collapse })
}

/// Per-ion pi pulse exchanging |D'> and |S>: |D'> -> |S> with amplitude +1,
/// |S> -> |D'> with amplitude -1, identity on the remaining levels. Applied
/// to both ion factors.
pub fn mapping_pulse(space: &HilbertSpace) -> Result<Operator, ModelError> {
    let mut out = Operator::identity(space);
    for ion in 0..2 {
        let dim = space.factors()[ion];
        if dim < 3 {
            return Err(ModelError::UnsupportedIonDimension(dim));
        }
        let mut trip: Vec<(usize, usize, C64)> = vec![
            (levels::S, levels::D_PRIME, C64::new(1.0, 0.0)),
            (levels::D_PRIME, levels::S, C64::new(-1.0, 0.0)),
        ];
        for l in 0..dim {
            if l != levels::S && l != levels::D_PRIME {
                trip.push((l, l, C64::new(1.0, 0.0)));
            }
        }
        let u = ion_operator(space, ion, &trip)?;
        out = out.matmul(&u)?;
    }
    Ok(out)
}

/// Global qubit rotation exp(-i (theta/2) sigma_phi) on the {S, D} subspace
/// of both ions, with sigma_phi = sigma_x cos(phi) + sigma_y sin(phi).
pub fn analysis_rotation(
    theta: f64,
    phi: f64,
    space: &HilbertSpace,
) -> Result<Operator, ModelError> {
    let mut out = Operator::identity(space);
    let half = theta / 2.0;
    let c = half.cos();
    let s = half.sin();
    // -i sin(theta/2) * (e^{-i phi}|S><D| + e^{i phi}|D><S|)
    let off_sd = C64::new(0.0, -s) * C64::from_polar(1.0, -phi);
    let off_ds = C64::new(0.0, -s) * C64::from_polar(1.0, phi);
    for ion in 0..2 {
        let dim = space.factors()[ion];
        if dim < 2 {
            return Err(ModelError::UnsupportedIonDimension(dim));
        }
        let mut trip: Vec<(usize, usize, C64)> = vec![
            (levels::S, levels::S, C64::new(c, 0.0)),
            (levels::D, levels::D, C64::new(c, 0.0)),
            (levels::S, levels::D, off_sd),
            (levels::D, levels::S, off_ds),
        ];
        for l in 2..dim {
            trip.push((l, l, C64::new(1.0, 0.0)));
        }
        let u = ion_operator(space, ion, &trip)?;
        out = out.matmul(&u)?;
    }
    Ok(out)
}
