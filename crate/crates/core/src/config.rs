//! Run configuration: JSON with `[cavity]`, `[ions]`, `[drives]`,
//! `[branching]`, `[simulation]`, `[geometry]`, `[analysis]` and `[rates]`
//! sections.
//!
//! All frequencies and rates are plain Hz (converted to rad/s internally),
//! lengths are meters, times are seconds; key names carry the unit suffix.
//! Unknown keys are rejected with every offending key listed. Seeds are
//! explicit: nothing is seeded from the wall clock.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{CavityGeometry, TrapGeometry};
use crate::herald::SequenceTiming;
use crate::model::{
    Branching, CgCoefficients, DephasingMode, DriveField, RamanTarget, RamanTreatment,
    SystemParams,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Json(String),
    #[error("unknown config keys: {0}")]
    UnknownKeys(String),
    #[error("missing config key: {0}")]
    MissingKey(String),
    #[error("invalid value for {key}: {reason}")]
    InvalidValue { key: String, reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    /// Cavity field decay rate, Hz (kappa / 2 pi).
    pub kappa_hz: f64,
    /// Bare atom-cavity coupling, Hz.
    pub g0_hz: f64,
    /// Motion-reduced coupling used for the effective rates, Hz.
    pub g_motion_hz: f64,
    /// Repump standing-wave wavelength, m.
    pub lambda_repump_m: f64,
    /// Output/Raman wavelength, m.
    pub lambda_raman_m: f64,
    /// Mode waist, m.
    pub waist_m: f64,
    /// Standing-wave node offset at the scan origin, m.
    pub node_offset_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IonsSection {
    /// Total atomic decay half-width of P, Hz.
    pub gamma_hz: f64,
    /// Ion mass, atomic mass units.
    pub mass_u: f64,
    /// Per-ion relative coupling amplitudes.
    pub coupling_relative: [f64; 2],
    /// Detuning of the auxiliary Zeeman state, Hz.
    pub zeeman_detuning_aux_hz: f64,
    /// Auxiliary vertex strength relative to the S -> D effective coupling.
    pub aux_coupling_ratio: f64,
    /// D / D' Zeeman splitting for the bichromatic cross terms, Hz.
    pub zeeman_splitting_dd_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    /// Rabi frequency, Hz.
    pub rabi_hz: f64,
    /// Detuning from P, Hz.
    pub detuning_hz: f64,
    /// "D" or "D_prime".
    pub target: String,
    /// Optical phase, rad.
    pub phase_rad: f64,
    /// Laser linewidth, Hz.
    pub linewidth_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BranchingSection {
    pub to_s: f64,
    pub to_d: f64,
    pub to_d_prime: f64,
    /// Coefficient on g Omega / (2 Delta) for the S -> D channel.
    pub cg_d: f64,
    /// Same for S -> D'.
    pub cg_d_prime: f64,
    /// Coefficient on gamma Omega^2 / (4 Delta^2).
    pub cg_gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Trajectories per run.
    pub n_traj: usize,
    /// Integrator step, s.
    pub dt_s: f64,
    /// Raman window / integration horizon, s.
    pub t_max_s: f64,
    /// Run seed; trajectory k uses stream k.
    pub seed: u64,
    /// Photon-number cutoff per mode.
    pub cutoff: usize,
    /// "effective" or "explicit".
    pub raman_treatment: String,
    /// Keep bichromatic cross terms as oscillatory Hamiltonian terms.
    pub keep_cross_terms: bool,
    /// "collective" or "per_ion".
    pub dephasing: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    /// Axial trap frequency, Hz.
    pub omega_axial_hz: f64,
    /// Trap-axis tilt from the cavity yz-plane, deg.
    pub trap_tilt_deg: f64,
    /// Piezo scan axis tilt, deg.
    pub piezo_tilt_deg: f64,
    /// Scan range for coupling-profile output, m.
    pub scan_halfwidth_m: f64,
    /// Scan points for coupling-profile output.
    pub scan_points: usize,
    /// Counts at unit relative intensity for synthetic scans.
    pub fluorescence_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Fidelity-vs-T bin edges, s. Empty: use the default geometric edges.
    pub bin_edges_s: Vec<f64>,
    /// Phase points of the parity scans.
    pub phase_points: usize,
    /// Entanglement events per phase point.
    pub shots_per_phase: u64,
    /// Seed of the measurement sampling.
    pub measurement_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    /// Photon detection efficiency (cavity output through APD).
    pub detection_efficiency: f64,
    /// APD dark-count rate, Hz.
    pub dark_rate_hz: f64,
    pub prep_s: f64,
    pub raman_window_s: f64,
    pub max_retries: u32,
    pub detection_s: f64,
    pub mapping_s: f64,
    pub rotation_s: f64,
}

/// Complete run configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cavity: CavitySection,
    pub ions: IonsSection,
    pub drives: Vec<DriveSection>,
    pub branching: BranchingSection,
    pub simulation: SimulationSection,
    pub geometry: GeometrySection,
    pub analysis: AnalysisSection,
    pub rates: RatesSection,
}

impl RunConfig {
    /// The experiment's parameter set.
    pub fn experiment_defaults() -> Self {
        Self {
            cavity: CavitySection {
                kappa_hz: 50e3,
                g0_hz: 1.4e6,
                g_motion_hz: 1.0e6,
                lambda_repump_m: 866e-9,
                lambda_raman_m: 854e-9,
                waist_m: 13e-6,
                node_offset_m: 0.0,
            },
            ions: IonsSection {
                gamma_hz: 11.5e6,
                mass_u: 39.962_590_85,
                coupling_relative: [1.0, 1.0],
                zeeman_detuning_aux_hz: 10e6,
                aux_coupling_ratio: 0.5,
                zeeman_splitting_dd_hz: 10e6,
            },
            drives: vec![
                DriveSection {
                    rabi_hz: 47e6,
                    detuning_hz: 400e6,
                    target: "D".into(),
                    phase_rad: 0.0,
                    linewidth_hz: 10e3,
                },
                DriveSection {
                    rabi_hz: 29e6,
                    detuning_hz: 400e6,
                    target: "D_prime".into(),
                    phase_rad: 0.0,
                    linewidth_hz: 10e3,
                },
            ],
            branching: BranchingSection {
                to_s: 0.94,
                to_d: 0.006,
                to_d_prime: 0.054,
                cg_d: 0.445327,
                cg_d_prime: 0.721740,
                cg_gamma: 0.985317,
            },
            simulation: SimulationSection {
                n_traj: 2000,
                dt_s: 1e-9,
                t_max_s: 40e-6,
                seed: 20130917,
                cutoff: 2,
                raman_treatment: "effective".into(),
                keep_cross_terms: false,
                dephasing: "collective".into(),
            },
            geometry: GeometrySection {
                omega_axial_hz: 1.09e6,
                trap_tilt_deg: 4.0,
                piezo_tilt_deg: 5.0,
                scan_halfwidth_m: 25e-6,
                scan_points: 120,
                fluorescence_scale: 300.0,
            },
            analysis: AnalysisSection {
                bin_edges_s: vec![],
                phase_points: 25,
                shots_per_phase: 50,
                measurement_seed: 7,
            },
            rates: RatesSection {
                detection_efficiency: 0.06,
                dark_rate_hz: 0.0,
                prep_s: 1.7e-3,
                raman_window_s: 40e-6,
                max_retries: 10,
                detection_s: 2e-3,
                mapping_s: 10e-6,
                rotation_s: 0.0,
            },
        }
    }

    /// Parse from JSON text. Unknown keys anywhere are collected and
    /// reported together.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        let unknown = collect_unknown_keys(&value);
        if !unknown.is_empty() {
            let list: Vec<String> = unknown.into_iter().collect();
            return Err(ConfigError::UnknownKeys(list.join(", ")));
        }
        serde_json::from_value(value).map_err(|e| {
            let text = e.to_string();
            if text.starts_with("missing field") {
                ConfigError::MissingKey(text)
            } else {
                ConfigError::Json(text)
            }
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hash of the canonicalized (sorted-key, compact) JSON text.
    pub fn canonical_hash(&self) -> u64 {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        // FNV-1a
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canonical.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        hash
    }

    pub fn system_params(&self) -> Result<SystemParams, ConfigError> {
        let branching = Branching {
            to_s: self.branching.to_s,
            to_d: self.branching.to_d,
            to_d_prime: self.branching.to_d_prime,
        };
        Ok(SystemParams {
            kappa: TAU * self.cavity.kappa_hz,
            gamma: TAU * self.ions.gamma_hz,
            g0: TAU * self.cavity.g0_hz,
            g_motion: TAU * self.cavity.g_motion_hz,
            coupling_relative: self.ions.coupling_relative,
            branching,
            cg: CgCoefficients {
                g_d: self.branching.cg_d,
                g_d_prime: self.branching.cg_d_prime,
                gamma: self.branching.cg_gamma,
            },
            zeeman_detuning_aux: TAU * self.ions.zeeman_detuning_aux_hz,
            aux_coupling_ratio: self.ions.aux_coupling_ratio,
            zeeman_splitting_dd: TAU * self.ions.zeeman_splitting_dd_hz,
        })
    }

    pub fn drive_fields(&self) -> Result<Vec<DriveField>, ConfigError> {
        self.drives
            .iter()
            .map(|d| {
                let target = match d.target.as_str() {
                    "D" => RamanTarget::D,
                    "D_prime" => RamanTarget::DPrime,
                    other => {
                        return Err(ConfigError::InvalidValue {
                            key: "drives.target".into(),
                            reason: format!("expected D or D_prime, got {other}"),
                        })
                    }
                };
                Ok(DriveField {
                    rabi: TAU * d.rabi_hz,
                    detuning: TAU * d.detuning_hz,
                    target,
                    phase: d.phase_rad,
                    linewidth: TAU * d.linewidth_hz,
                })
            })
            .collect()
    }

    pub fn raman_treatment(&self) -> Result<RamanTreatment, ConfigError> {
        match self.simulation.raman_treatment.as_str() {
            "effective" => Ok(RamanTreatment::Effective),
            "explicit" => Ok(RamanTreatment::Explicit),
            other => Err(ConfigError::InvalidValue {
                key: "simulation.raman_treatment".into(),
                reason: format!("expected effective or explicit, got {other}"),
            }),
        }
    }

    pub fn dephasing_mode(&self) -> Result<DephasingMode, ConfigError> {
        match self.simulation.dephasing.as_str() {
            "collective" => Ok(DephasingMode::Collective),
            "per_ion" => Ok(DephasingMode::PerIon),
            other => Err(ConfigError::InvalidValue {
                key: "simulation.dephasing".into(),
                reason: format!("expected collective or per_ion, got {other}"),
            }),
        }
    }

    pub fn trap_geometry(&self) -> TrapGeometry {
        TrapGeometry {
            omega_axial: TAU * self.geometry.omega_axial_hz,
            ion_mass: self.ions.mass_u * crate::constants::ATOMIC_MASS_UNIT,
            ion_count: 2,
            trap_tilt: self.geometry.trap_tilt_deg.to_radians(),
            piezo_tilt: self.geometry.piezo_tilt_deg.to_radians(),
        }
    }

    pub fn cavity_geometry(&self) -> CavityGeometry {
        CavityGeometry {
            lambda_repump: self.cavity.lambda_repump_m,
            lambda_raman: self.cavity.lambda_raman_m,
            waist: self.cavity.waist_m,
            node_offset: self.cavity.node_offset_m,
        }
    }

    pub fn sequence_timing(&self) -> SequenceTiming {
        SequenceTiming {
            prep: self.rates.prep_s,
            raman_window: self.rates.raman_window_s,
            max_retries: self.rates.max_retries,
            detection: self.rates.detection_s,
            mapping: self.rates.mapping_s,
            rotation: self.rates.rotation_s,
        }
    }

    /// Effective fidelity-vs-T bin edges.
    pub fn bin_edges(&self) -> Vec<f64> {
        if self.analysis.bin_edges_s.is_empty() {
            crate::herald::default_bin_edges(self.simulation.t_max_s)
        } else {
            self.analysis.bin_edges_s.clone()
        }
    }
}

/// Every key in `value` that the schema does not define, as
/// `section.key` paths.
fn collect_unknown_keys(value: &Value) -> BTreeSet<String> {
    let mut unknown = BTreeSet::new();
    let Some(top) = value.as_object() else {
        return unknown;
    };

    let known_sections: &[(&str, &[&str])] = &[
        (
            "cavity",
            &[
                "kappa_hz",
                "g0_hz",
                "g_motion_hz",
                "lambda_repump_m",
                "lambda_raman_m",
                "waist_m",
                "node_offset_m",
            ],
        ),
        (
            "ions",
            &[
                "gamma_hz",
                "mass_u",
                "coupling_relative",
                "zeeman_detuning_aux_hz",
                "aux_coupling_ratio",
                "zeeman_splitting_dd_hz",
            ],
        ),
        ("drives", &["rabi_hz", "detuning_hz", "target", "phase_rad", "linewidth_hz"]),
        ("branching", &["to_s", "to_d", "to_d_prime", "cg_d", "cg_d_prime", "cg_gamma"]),
        (
            "simulation",
            &[
                "n_traj",
                "dt_s",
                "t_max_s",
                "seed",
                "cutoff",
                "raman_treatment",
                "keep_cross_terms",
                "dephasing",
            ],
        ),
        (
            "geometry",
            &[
                "omega_axial_hz",
                "trap_tilt_deg",
                "piezo_tilt_deg",
                "scan_halfwidth_m",
                "scan_points",
                "fluorescence_scale",
            ],
        ),
        (
            "analysis",
            &["bin_edges_s", "phase_points", "shots_per_phase", "measurement_seed"],
        ),
        (
            "rates",
            &[
                "detection_efficiency",
                "dark_rate_hz",
                "prep_s",
                "raman_window_s",
                "max_retries",
                "detection_s",
                "mapping_s",
                "rotation_s",
            ],
        ),
    ];

    for (key, val) in top {
        let Some((_, fields)) = known_sections.iter().find(|(s, _)| s == key) else {
            unknown.insert(key.clone());
            continue;
        };
        let objects: Vec<&Value> = if key == "drives" {
            val.as_array().map(|a| a.iter().collect()).unwrap_or_default()
        } else {
            vec![val]
        };
        for obj in objects {
            if let Some(map) = obj.as_object() {
                for k in map.keys() {
                    if !fields.contains(&k.as_str()) {
                        unknown.insert(format!("{key}.{k}"));
                    }
                }
            }
        }
    }
    unknown
}
