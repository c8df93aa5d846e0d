//! Trap and cavity geometry: ion spacing, projected spacing along the cavity
//! axis, standing-wave coupling phases, and fits of position scans.
//!
//! Two trapped ions in a harmonic axial potential sit at a separation fixed
//! by the balance of Coulomb repulsion and the confining force. The trap
//! axis makes a small angle with the cavity's transverse plane, so the
//! separation projects onto the cavity axis and determines the relative
//! phase with which the two ions sample the intracavity standing wave. A
//! piezo scan of the cavity across the ions traces out a sinusoidally
//! modulated Gaussian per ion; fitting it recovers the per-ion coupling
//! phases.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{CA40_MASS, ELEMENTARY_CHARGE, VACUUM_PERMITTIVITY};
use crate::lsq::{self, LsqError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("only two-ion strings are supported, got {0}")]
    UnsupportedIonCount(usize),
    #[error("sample list is empty")]
    EmptySamples,
    #[error("scan too short: need at least {needed} points, got {got}")]
    ScanTooShort { needed: usize, got: usize },
    #[error("scan must span more than one modulation period (spanned {spanned:.2})")]
    ScanSpanTooSmall { spanned: f64 },
    #[error("standing-wave fit failed: {0}")]
    FitFailed(#[from] LsqError),
    #[error("malformed scan CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
}

/// Axial trap parameters for a two-ion string.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrapGeometry {
    /// Axial angular frequency, rad/s.
    pub omega_axial: f64,
    /// Ion mass, kg.
    pub ion_mass: f64,
    /// Number of ions (only 2 supported).
    pub ion_count: usize,
    /// Angle between the trap axis and the cavity yz-plane, rad.
    pub trap_tilt: f64,
    /// Angle between the piezo scan axis y' and y, rad.
    pub piezo_tilt: f64,
}

impl TrapGeometry {
    /// Two calcium-40 ions at the given axial frequency (Hz, not angular)
    /// with the default 4 degree trap tilt and 5 degree piezo tilt.
    pub fn ca40_at(axial_freq_hz: f64) -> Self {
        Self {
            omega_axial: TAU * axial_freq_hz,
            ion_mass: CA40_MASS,
            ion_count: 2,
            trap_tilt: 4.0_f64.to_radians(),
            piezo_tilt: 5.0_f64.to_radians(),
        }
    }
}

/// Cavity mode and wavelength parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CavityGeometry {
    /// Repump standing-wave wavelength, m.
    pub lambda_repump: f64,
    /// Raman/output wavelength, m.
    pub lambda_raman: f64,
    /// Mode waist, m.
    pub waist: f64,
    /// Offset of the standing-wave node pattern at the scan origin, m.
    pub node_offset: f64,
}

impl Default for CavityGeometry {
    fn default() -> Self {
        Self {
            lambda_repump: 866e-9,
            lambda_raman: 854e-9,
            waist: 13e-6,
            node_offset: 0.0,
        }
    }
}

/// Per-ion relative intensity samples along the scan axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingProfile {
    /// Scan positions y', m.
    pub y_prime: Vec<f64>,
    /// Relative intensity of each ion, in [0, 1].
    pub intensity: [Vec<f64>; 2],
    /// Modulation phase of each ion, rad.
    pub phase: [f64; 2],
    /// Envelope waist, m.
    pub waist: f64,
    /// Intensity-pattern phase difference folded to [0, pi].
    pub phase_difference: f64,
}

/// Equilibrium separation of two singly charged ions in a harmonic axial
/// potential: d = (e^2 / (2 pi eps0 m omega^2))^(1/3).
pub fn ion_spacing(geom: &TrapGeometry) -> Result<f64, GeometryError> {
    if geom.ion_count != 2 {
        return Err(GeometryError::UnsupportedIonCount(geom.ion_count));
    }
    if geom.omega_axial <= 0.0 {
        return Err(GeometryError::NonPositive {
            name: "omega_axial",
            value: geom.omega_axial,
        });
    }
    if geom.ion_mass <= 0.0 {
        return Err(GeometryError::NonPositive { name: "ion_mass", value: geom.ion_mass });
    }
    let e2 = ELEMENTARY_CHARGE * ELEMENTARY_CHARGE;
    let d3 = e2 / (TAU * VACUUM_PERMITTIVITY * geom.ion_mass * geom.omega_axial * geom.omega_axial);
    Ok(d3.cbrt())
}

/// Projection of the ion separation onto the cavity axis: d' = d sin(tilt).
pub fn projected_spacing(d: f64, trap_tilt: f64) -> f64 {
    d * trap_tilt.sin()
}

/// Fold a phase into [0, pi].
pub fn fold_phase(phi: f64) -> f64 {
    let m = phi.rem_euclid(TAU);
    m.min(TAU - m)
}

/// Phase difference of the intensity pattern sampled by two ions separated
/// by d' along the cavity axis. The intensity period is lambda/2.
pub fn standing_wave_phase_difference(d_prime: f64, lambda: f64) -> f64 {
    fold_phase(TAU * d_prime / (lambda / 2.0))
}

/// Relative intensity seen by each ion as the cavity is scanned along y'.
///
/// Ion i at projected axial position x_i samples
/// I_i(y') = exp(-2 y'^2 / w0^2) cos^2(2 pi (y' sin(piezo_tilt) + x_i) / lambda + phi0).
pub fn coupling_profile(
    geom: &TrapGeometry,
    cavity: &CavityGeometry,
    y_prime_samples: &[f64],
) -> Result<CouplingProfile, GeometryError> {
    if y_prime_samples.is_empty() {
        return Err(GeometryError::EmptySamples);
    }
    if cavity.waist <= 0.0 {
        return Err(GeometryError::NonPositive { name: "waist", value: cavity.waist });
    }
    let d = ion_spacing(geom)?;
    let d_prime = projected_spacing(d, geom.trap_tilt);
    let lambda = cavity.lambda_repump;
    let phi0 = TAU * cavity.node_offset / lambda;
    let xs = [-d_prime / 2.0, d_prime / 2.0];
    let sin_tilt = geom.piezo_tilt.sin();

    let mut intensity = [
        Vec::with_capacity(y_prime_samples.len()),
        Vec::with_capacity(y_prime_samples.len()),
    ];
    let mut phase = [0.0f64; 2];
    for (ion, &x) in xs.iter().enumerate() {
        // cos^2(k_y y' + delta_i) with k_y = 2 pi sin(tilt) / lambda
        let delta = TAU * x / lambda + phi0;
        phase[ion] = (2.0 * delta).rem_euclid(TAU);
        for &y in y_prime_samples {
            let envelope = (-2.0 * y * y / (cavity.waist * cavity.waist)).exp();
            let arg = TAU * (y * sin_tilt + x) / lambda + phi0;
            intensity[ion].push(envelope * arg.cos().powi(2));
        }
    }
    let phase_difference = fold_phase(phase[0] - phase[1]);
    debug_assert!(
        (phase_difference - standing_wave_phase_difference(d_prime, lambda)).abs() < 1e-9
    );
    Ok(CouplingProfile {
        y_prime: y_prime_samples.to_vec(),
        intensity,
        phase,
        waist: cavity.waist,
        phase_difference,
    })
}

/// Fit of one ion's scan to
/// A exp(-2 (y - y0)^2 / w^2) (1 + V cos(2 k y + phi)) / 2 + B.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SinusoidGaussFit {
    pub amplitude: f64,
    pub center_m: f64,
    pub waist_m: f64,
    pub contrast: f64,
    pub phase_rad: f64,
    pub offset: f64,
    pub wavevector_rad_per_m: f64,
    pub iterations: usize,
}

/// Joint result for a two-ion scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandingWaveFit {
    pub ions: [SinusoidGaussFit; 2],
    /// Folded difference of the two fitted modulation phases, in [0, pi].
    pub phase_difference_rad: f64,
}

/// Two-ion scan data: positions and per-ion fluorescence counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanData {
    pub y_prime: Vec<f64>,
    pub counts: [Vec<f64>; 2],
}

impl ScanData {
    /// Parse CSV with header `y_prime_m,ion1_counts,ion2_counts`.
    pub fn from_csv_str(text: &str) -> Result<Self, GeometryError> {
        let mut y = Vec::new();
        let mut c1 = Vec::new();
        let mut c2 = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if k == 0 {
                if line != "y_prime_m,ion1_counts,ion2_counts" {
                    return Err(GeometryError::MalformedCsv {
                        line: 1,
                        reason: format!(
                            "expected header y_prime_m,ion1_counts,ion2_counts, got {line}"
                        ),
                    });
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(GeometryError::MalformedCsv {
                    line: k + 1,
                    reason: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str| -> Result<f64, GeometryError> {
                s.trim().parse::<f64>().map_err(|e| GeometryError::MalformedCsv {
                    line: k + 1,
                    reason: format!("{e}"),
                })
            };
            y.push(parse(fields[0])?);
            c1.push(parse(fields[1])?);
            c2.push(parse(fields[2])?);
        }
        Ok(Self { y_prime: y, counts: [c1, c2] })
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("y_prime_m,ion1_counts,ion2_counts\n");
        for i in 0..self.y_prime.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.y_prime[i], self.counts[0][i], self.counts[1][i]
            ));
        }
        out
    }
}

/// Fit each ion's scan with a sinusoidally modulated Gaussian and report the
/// folded phase difference.
///
/// The scan must have at least 8 points spanning more than one modulation
/// period. Weights are Poissonian (1 / max(counts, 1)).
pub fn fit_standing_wave(scan: &ScanData) -> Result<StandingWaveFit, GeometryError> {
    let n = scan.y_prime.len();
    if n < 8 {
        return Err(GeometryError::ScanTooShort { needed: 8, got: n });
    }
    let fit0 = fit_single_ion(&scan.y_prime, &scan.counts[0])?;
    let fit1 = fit_single_ion(&scan.y_prime, &scan.counts[1])?;
    let phase_difference_rad = fold_phase(fit0.phase_rad - fit1.phase_rad);
    Ok(StandingWaveFit { ions: [fit0, fit1], phase_difference_rad })
}

fn fit_single_ion(y: &[f64], counts: &[f64]) -> Result<SinusoidGaussFit, GeometryError> {
    let n = y.len();
    assert_eq!(counts.len(), n);
    // normalize positions to O(1) to keep the normal equations conditioned
    let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = y_max - y_min;
    if span <= 0.0 {
        return Err(GeometryError::ScanSpanTooSmall { spanned: 0.0 });
    }
    let y_mid = 0.5 * (y_min + y_max);
    let u: Vec<f64> = y.iter().map(|&v| (v - y_mid) / span).collect();

    let weights: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1.0)).collect();

    // initial guesses: baseline, envelope centroid and width, DFT peak
    let base = counts.iter().cloned().fold(f64::INFINITY, f64::min);
    let excess: Vec<f64> = counts.iter().map(|&c| (c - base).max(0.0)).collect();
    let total: f64 = excess.iter().sum();
    let (u0_init, w_init) = if total > 0.0 {
        let mean: f64 = u.iter().zip(&excess).map(|(ui, e)| ui * e).sum::<f64>() / total;
        let var: f64 = u
            .iter()
            .zip(&excess)
            .map(|(ui, e)| (ui - mean) * (ui - mean) * e)
            .sum::<f64>()
            / total;
        (mean, 2.0 * var.max(1e-6).sqrt())
    } else {
        (0.0, 0.5)
    };

    // strip an envelope-only model, then locate the modulation frequency
    // from a direct DFT scan of the residual
    let residual: Vec<f64> = {
        let design: Vec<Vec<f64>> = u
            .iter()
            .map(|&ui| {
                let env = (-2.0 * (ui - u0_init) * (ui - u0_init) / (w_init * w_init)).exp();
                vec![env, 1.0]
            })
            .collect();
        match lsq::weighted_linear_fit(&design, counts, &weights) {
            Ok(fit) => (0..n)
                .map(|i| counts[i] - fit.coeffs[0] * design[i][0] - fit.coeffs[1])
                .collect(),
            Err(_) => {
                let mean_c: f64 = counts.iter().sum::<f64>() / n as f64;
                counts.iter().map(|&c| c - mean_c).collect()
            }
        }
    };
    let f_lo = 1.2 * TAU; // more than one period over the scan
    let f_hi = PI * n as f64; // roughly Nyquist for near-uniform sampling
    let steps = 800;
    let power_at = |f: f64| -> f64 {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        for (ui, ri) in u.iter().zip(&residual) {
            let (sn, cs) = (f * ui).sin_cos();
            re += ri * cs;
            im += ri * sn;
        }
        re * re + im * im
    };
    let powers: Vec<(f64, f64)> = (0..steps)
        .map(|s| {
            let f = f_lo + (f_hi - f_lo) * s as f64 / (steps - 1) as f64;
            (f, power_at(f))
        })
        .collect();
    // local maxima, strongest first, as candidate modulation frequencies
    let mut peaks: Vec<(f64, f64)> = (1..steps - 1)
        .filter(|&s| powers[s].1 >= powers[s - 1].1 && powers[s].1 >= powers[s + 1].1)
        .map(|s| powers[s])
        .collect();
    peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    peaks.truncate(4);
    if peaks.is_empty() {
        peaks.push(powers[steps / 2]);
    }

    let spanned_periods = peaks[0].0 / TAU;
    if spanned_periods <= 1.0 {
        return Err(GeometryError::ScanSpanTooSmall { spanned: spanned_periods });
    }

    // design matrix in u units: [E, E cos(2ku), E sin(2ku), 1]
    let design_at = |theta: &[f64]| -> Vec<Vec<f64>> {
        let (u0, w, k) = (theta[0], theta[1], theta[2]);
        u.iter()
            .map(|&ui| {
                let env = (-2.0 * (ui - u0) * (ui - u0) / (w * w)).exp();
                let (sn, cs) = (2.0 * k * ui).sin_cos();
                vec![env, env * cs, env * sn, 1.0]
            })
            .collect()
    };

    // one Gauss-Newton run per candidate frequency; keep the best fit
    let mut best: Option<(Vec<f64>, lsq::LinearFit, usize)> = None;
    let mut last_err: Option<LsqError> = None;
    for &(freq, _) in &peaks {
        let k_init = freq / 2.0; // model modulation is cos(2 k u + phi)
        let theta0 = [u0_init, w_init, k_init];
        let scales = [0.1, w_init.abs().max(0.05), k_init.abs().max(1.0)];
        match lsq::varpro_gauss_newton(&theta0, &scales, counts, &weights, design_at, 200) {
            Ok(res) => {
                if best.as_ref().map_or(true, |b| res.1.wrss < b.1.wrss) {
                    best = Some(res);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (theta, fit, iterations) = match best {
        Some(b) => b,
        None => return Err(GeometryError::FitFailed(last_err.unwrap())),
    };

    let (u0, w, k_u) = (theta[0], theta[1].abs(), theta[2].abs());
    // if the fitted wavevector came out negative the sine coefficient flips
    let (c1, c2) = if theta[2] >= 0.0 {
        (fit.coeffs[1], fit.coeffs[2])
    } else {
        (fit.coeffs[1], -fit.coeffs[2])
    };
    let c0 = fit.coeffs[0];
    let offset = fit.coeffs[3];

    let amplitude = 2.0 * c0;
    let contrast = if c0.abs() > 0.0 { (c1 * c1 + c2 * c2).sqrt() / c0 } else { 0.0 };
    let phase_u = (-c2).atan2(c1);

    // convert back to physical units: y = y_mid + u * span
    let k = k_u / span;
    let center_m = y_mid + u0 * span;
    let waist_m = w * span;
    // cos(2 k_u u + phase_u) = cos(2 k y + phase) with phase = phase_u - 2 k y_mid
    let phase_rad = (phase_u - 2.0 * k * y_mid).rem_euclid(TAU);

    Ok(SinusoidGaussFit {
        amplitude,
        center_m,
        waist_m,
        contrast,
        phase_rad,
        offset,
        wavevector_rad_per_m: k,
        iterations,
    })
}
