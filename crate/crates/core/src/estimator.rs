//! Measurement-side fidelity bound: parity, parity-curve fits, the
//! coherence ceiling, finite-shot sampling and error propagation.
//!
//! The bound combines three measurements on the post-mapping qubit pair:
//! the population sum rho_SD,SD + rho_DS,DS, the two-pulse parity evaluated
//! at phase pi/2, and the contrast of the one-pulse parity curve, which caps
//! |rho_SS,DD|:
//!
//! F >= (population_sum + P(pi/2) - C) / 2.
//!
//! Phase convention: the two-pulse analysis applies the phase-referenced
//! pi/2 pulse first and the fixed-phase pulse second, so that the parity at
//! phi = pi/2 measures exactly 2 Re(rho_SD,DS - rho_SS,DD). Only the
//! relative phase of the two pulses is physical; this choice fixes the
//! reference.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lsq::{self, LsqError};
use crate::model::{analysis_rotation, ModelError};
use crate::qops::{DensityMatrix, HilbertSpace, Operator, QopsError};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("need at least {needed} parity points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("phase grid must span at least half a period of 2 phi (pi/2), spans {0:.3}")]
    PhaseSpanTooSmall(f64),
    #[error("degenerate design matrix: {0}")]
    DegenerateFit(#[from] LsqError),
    #[error("probabilities must be a distribution over three outcomes, got {0:?}")]
    BadProbabilities([f64; 3]),
    #[error("shots must be at least 1")]
    NoShots,
    #[error("malformed CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qops(#[from] QopsError),
}

/// Parity of the bright-ion count distribution: P = p0 + p2 - p1.
pub fn parity(p0: f64, p1: f64, p2: f64) -> f64 {
    p0 + p2 - p1
}

/// Analysis rotations applied before fluorescence detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationScheme {
    /// Fixed pi/2 pulse composed with the phase-referenced pi/2 pulse.
    TwoPulse,
    /// Only the phase-referenced pi/2 pulse.
    OnePulse,
    /// Bare population readout.
    None,
}

impl fmt::Display for RotationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RotationScheme::TwoPulse => write!(f, "two_pulse"),
            RotationScheme::OnePulse => write!(f, "one_pulse"),
            RotationScheme::None => write!(f, "none"),
        }
    }
}

impl FromStr for RotationScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two_pulse" => Ok(RotationScheme::TwoPulse),
            "one_pulse" => Ok(RotationScheme::OnePulse),
            "none" => Ok(RotationScheme::None),
            other => Err(format!("unknown rotation scheme {other}")),
        }
    }
}

fn qubit_space() -> HilbertSpace {
    HilbertSpace::new(&[2, 2]).expect("valid")
}

/// The unitary applied by a scheme at relative phase `phi`.
pub fn scheme_unitary(scheme: RotationScheme, phi: f64) -> Result<Operator, EstimatorError> {
    let space = qubit_space();
    Ok(match scheme {
        RotationScheme::None => Operator::identity(&space),
        RotationScheme::OnePulse => analysis_rotation(FRAC_PI_2, phi, &space)?,
        RotationScheme::TwoPulse => {
            let fixed = analysis_rotation(FRAC_PI_2, 0.0, &space)?;
            let swept = analysis_rotation(FRAC_PI_2, phi, &space)?;
            fixed.matmul(&swept)?
        }
    })
}

/// Infinite-shot bright-ion probabilities (p0, p1, p2) after the scheme's
/// rotations. Basis order |SS>, |SD>, |DS>, |DD| with S bright.
pub fn ideal_populations(
    rho: &DensityMatrix,
    scheme: RotationScheme,
    phi: f64,
) -> Result<[f64; 3], EstimatorError> {
    let u = scheme_unitary(scheme, phi)?.to_dense();
    let u_dag = u.t().mapv(|v| v.conj());
    let rotated = u.dot(rho.matrix()).dot(&u_dag);
    let p2 = rotated[[0, 0]].re;
    let p1 = rotated[[1, 1]].re + rotated[[2, 2]].re;
    let p0 = rotated[[3, 3]].re;
    Ok([p0.max(0.0), p1.max(0.0), p2.max(0.0)])
}

/// Exact parity after the scheme's rotations.
pub fn ideal_parity(
    rho: &DensityMatrix,
    scheme: RotationScheme,
    phi: f64,
) -> Result<f64, EstimatorError> {
    let [p0, p1, p2] = ideal_populations(rho, scheme, phi)?;
    Ok(parity(p0, p1, p2))
}

/// Per-phase analysis settings and bright-ion counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub phase: f64,
    pub scheme: RotationScheme,
    /// Events classified as 0, 1, 2 bright ions.
    pub counts: [u64; 3],
    pub probabilities: [f64; 3],
    /// Multinomial standard errors (smoothed so endpoint estimates keep a
    /// finite uncertainty).
    pub uncertainties: [f64; 3],
}

impl MeasurementRecord {
    pub fn shots(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn parity(&self) -> f64 {
        parity(self.probabilities[0], self.probabilities[1], self.probabilities[2])
    }

    /// sigma of the parity, from P = 1 - 2 p1.
    pub fn parity_sigma(&self) -> f64 {
        2.0 * self.uncertainties[1]
    }
}

/// Sample a finite-shot measurement of `rho` with the scheme's rotations.
pub fn simulate_measurement(
    rho: &DensityMatrix,
    scheme: RotationScheme,
    phi: f64,
    shots: u64,
    seed: u64,
) -> Result<MeasurementRecord, EstimatorError> {
    if shots == 0 {
        return Err(EstimatorError::NoShots);
    }
    let p = ideal_populations(rho, scheme, phi)?;
    let total: f64 = p.iter().sum();
    if !(0.9..=1.1).contains(&total) {
        return Err(EstimatorError::BadProbabilities(p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0u64; 3];
    for _ in 0..shots {
        let u: f64 = rng.random::<f64>() * total;
        let k = if u < p[0] {
            0
        } else if u < p[0] + p[1] {
            1
        } else {
            2
        };
        counts[k] += 1;
    }
    Ok(record_from_counts(phi, scheme, counts))
}

/// Build a record from observed counts (frequencies plus smoothed
/// multinomial errors).
pub fn record_from_counts(phase: f64, scheme: RotationScheme, counts: [u64; 3]) -> MeasurementRecord {
    let n: u64 = counts.iter().sum();
    let nf = n.max(1) as f64;
    let probabilities = [
        counts[0] as f64 / nf,
        counts[1] as f64 / nf,
        counts[2] as f64 / nf,
    ];
    let uncertainties = std::array::from_fn(|k| {
        let smoothed = (counts[k] as f64 + 1.0) / (nf + 2.0);
        (smoothed * (1.0 - smoothed) / nf).sqrt()
    });
    MeasurementRecord { phase, scheme, counts, probabilities, uncertainties }
}

/// Fit model for [`fit_parity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParityFitModel {
    /// A sin(2 phi) + B cos(2 phi) + offset (two-pulse curve).
    WithOffset,
    /// A sin(2 phi) + B cos(2 phi) (one-pulse contrast curve).
    ZeroOffset,
}

/// Weighted sinusoid fit of a parity curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParityCurve {
    /// (phi, P, sigma_P) inputs.
    pub points: Vec<(f64, f64, f64)>,
    /// Coefficient of sin(2 phi).
    pub amp_sin: f64,
    /// Coefficient of cos(2 phi).
    pub amp_cos: f64,
    pub offset: Option<f64>,
    /// C = sqrt(A^2 + B^2) >= 0.
    pub contrast: f64,
    /// phi0 = atan2(B, A), so the fit is C sin(2 phi + phi0) (+ offset).
    pub phase: f64,
    /// Covariance of [A, B(, offset)].
    pub covariance: Vec<Vec<f64>>,
}

impl ParityCurve {
    /// Fitted curve value at `phi`.
    pub fn value_at(&self, phi: f64) -> f64 {
        self.amp_sin * (2.0 * phi).sin()
            + self.amp_cos * (2.0 * phi).cos()
            + self.offset.unwrap_or(0.0)
    }

    /// Standard error of the fitted value at `phi`.
    pub fn stderr_at(&self, phi: f64) -> f64 {
        let mut grad = vec![(2.0 * phi).sin(), (2.0 * phi).cos()];
        if self.offset.is_some() {
            grad.push(1.0);
        }
        let mut var = 0.0;
        for (r, gr) in grad.iter().enumerate() {
            for (c, gc) in grad.iter().enumerate() {
                var += gr * gc * self.covariance[r][c];
            }
        }
        var.max(0.0).sqrt()
    }

    /// Standard error of the contrast (delta method; falls back to the raw
    /// coefficient errors when the contrast is consistent with zero).
    pub fn contrast_sigma(&self) -> f64 {
        let (a, b, c) = (self.amp_sin, self.amp_cos, self.contrast);
        if c > 1e-12 {
            let var = (a / c) * (a / c) * self.covariance[0][0]
                + (b / c) * (b / c) * self.covariance[1][1]
                + 2.0 * (a * b) / (c * c) * self.covariance[0][1];
            var.max(0.0).sqrt()
        } else {
            self.covariance[0][0].max(self.covariance[1][1]).sqrt()
        }
    }
}

/// Weighted least squares of P(phi) = A sin(2 phi) + B cos(2 phi) (+ offset).
///
/// Requires at least 5 points spanning at least half a period of 2 phi.
pub fn fit_parity(
    points: &[(f64, f64, f64)],
    model: ParityFitModel,
) -> Result<ParityCurve, EstimatorError> {
    if points.len() < 5 {
        return Err(EstimatorError::TooFewPoints { needed: 5, got: points.len() });
    }
    let span = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    if span < FRAC_PI_2 * (1.0 - 1e-9) {
        return Err(EstimatorError::PhaseSpanTooSmall(span));
    }
    let design: Vec<Vec<f64>> = points
        .iter()
        .map(|&(phi, _, _)| {
            let (s, c) = (2.0 * phi).sin_cos();
            match model {
                ParityFitModel::WithOffset => vec![s, c, 1.0],
                ParityFitModel::ZeroOffset => vec![s, c],
            }
        })
        .collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let weights: Vec<f64> = points
        .iter()
        .map(|p| {
            let s = p.2;
            if s > 0.0 {
                1.0 / (s * s)
            } else {
                1.0
            }
        })
        .collect();
    let fit = lsq::weighted_linear_fit(&design, &y, &weights)?;
    let amp_sin = fit.coeffs[0];
    let amp_cos = fit.coeffs[1];
    let offset = match model {
        ParityFitModel::WithOffset => Some(fit.coeffs[2]),
        ParityFitModel::ZeroOffset => None,
    };
    Ok(ParityCurve {
        points: points.to_vec(),
        amp_sin,
        amp_cos,
        offset,
        contrast: (amp_sin * amp_sin + amp_cos * amp_cos).sqrt(),
        phase: amp_cos.atan2(amp_sin),
        covariance: fit.covariance,
    })
}

/// Physicality ceiling on the |SS>-|DD> coherence: |rho_SS,DD| <=
/// sqrt(rho_SS,SS rho_DD,DD) = sqrt(p2 p0).
pub fn coherence_ceiling(p0: f64, p2: f64) -> f64 {
    (p0.max(0.0) * p2.max(0.0)).sqrt()
}

/// The three measured components and the resulting lower bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityBound {
    pub population_sum: f64,
    pub population_err: f64,
    pub parity_half_pi: f64,
    pub parity_err: f64,
    pub contrast: f64,
    pub contrast_err: f64,
    /// F >= (population_sum + parity_half_pi - contrast) / 2.
    pub bound: f64,
    /// Independent-error quadrature of the three terms.
    pub error: f64,
}

/// Assemble the bound from the three measured components.
pub fn fidelity_bound(
    population_sum: f64,
    population_err: f64,
    parity_half_pi: f64,
    parity_err: f64,
    contrast: f64,
    contrast_err: f64,
) -> FidelityBound {
    let bound = (population_sum + parity_half_pi - contrast) / 2.0;
    let error = 0.5
        * (population_err * population_err
            + parity_err * parity_err
            + contrast_err * contrast_err)
            .sqrt();
    FidelityBound {
        population_sum,
        population_err,
        parity_half_pi,
        parity_err,
        contrast,
        contrast_err,
        bound,
        error,
    }
}

/// The standard analysis phase grid: uniform over a full 2 pi turn.
///
/// On this grid every harmonic of the exact parity curve is a whole-number
/// frequency, so the discrete projections onto {1, sin 2 phi, cos 2 phi}
/// are exactly orthogonal to the rest of the curve. That keeps the fitted
/// P(pi/2) and contrast free of leakage from single-ion coherences, which
/// in turn keeps the assembled bound a true lower bound.
pub fn standard_phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// Exact fidelity and the infinite-shot bound pipeline for a known state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundComparison {
    /// <Psi+|rho|Psi+> evaluated directly.
    pub exact_fidelity: f64,
    /// The bound as produced by the fit pipeline on exact parity curves.
    pub infinite_shot: FidelityBound,
}

/// Run the bound pipeline on exact (infinite-shot) expectation values.
///
/// The exact fidelity is always at least the bound.
pub fn bound_from_density_matrix(rho: &DensityMatrix) -> Result<BoundComparison, EstimatorError> {
    let m = rho.matrix();
    let exact = (m[[1, 1]].re + m[[2, 2]].re) / 2.0 + m[[1, 2]].re;

    let population_sum = m[[1, 1]].re + m[[2, 2]].re;
    let phases = standard_phase_grid(25);
    let two: Vec<(f64, f64, f64)> = phases
        .iter()
        .map(|&phi| Ok((phi, ideal_parity(rho, RotationScheme::TwoPulse, phi)?, 1.0)))
        .collect::<Result<_, EstimatorError>>()?;
    let one: Vec<(f64, f64, f64)> = phases
        .iter()
        .map(|&phi| Ok((phi, ideal_parity(rho, RotationScheme::OnePulse, phi)?, 1.0)))
        .collect::<Result<_, EstimatorError>>()?;
    let two_fit = fit_parity(&two, ParityFitModel::WithOffset)?;
    let one_fit = fit_parity(&one, ParityFitModel::WithOffset)?;
    let bound = fidelity_bound(
        population_sum,
        0.0,
        two_fit.value_at(FRAC_PI_2),
        0.0,
        one_fit.contrast,
        0.0,
    );
    Ok(BoundComparison { exact_fidelity: exact, infinite_shot: bound })
}

/// Simulated finite-shot records for the full bound pipeline: one
/// population record, and two-pulse plus one-pulse records on the phase
/// grid.
#[derive(Debug, Clone)]
pub struct BoundMeasurement {
    pub population: MeasurementRecord,
    pub two_pulse: Vec<MeasurementRecord>,
    pub one_pulse: Vec<MeasurementRecord>,
    pub bound: FidelityBound,
}

/// Simulate the complete measurement chain on a known state and assemble the
/// measured bound.
pub fn measure_bound(
    rho: &DensityMatrix,
    phases: &[f64],
    shots_per_point: u64,
    seed: u64,
) -> Result<BoundMeasurement, EstimatorError> {
    let population =
        simulate_measurement(rho, RotationScheme::None, 0.0, shots_per_point, seed)?;
    let mut two_pulse = Vec::with_capacity(phases.len());
    let mut one_pulse = Vec::with_capacity(phases.len());
    for (k, &phi) in phases.iter().enumerate() {
        two_pulse.push(simulate_measurement(
            rho,
            RotationScheme::TwoPulse,
            phi,
            shots_per_point,
            seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(2 * k as u64 + 1)),
        )?);
        one_pulse.push(simulate_measurement(
            rho,
            RotationScheme::OnePulse,
            phi,
            shots_per_point,
            seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(2 * k as u64 + 2)),
        )?);
    }
    let bound = bound_from_records(&population, &two_pulse, &one_pulse)?;
    Ok(BoundMeasurement { population, two_pulse, one_pulse, bound })
}

/// Assemble the measured bound from records: population from the unrotated
/// record, P(pi/2) from the with-offset two-pulse fit, contrast from the
/// one-pulse fit.
///
/// Both fits carry the offset term. The one-pulse curve sits on a large
/// physical DC level (2 Re rho_SD,DS); without the offset in the model,
/// inverse-variance weights let that DC leak into the 2 phi amplitudes and
/// inflate the contrast by several sigma. The offset does not change the
/// contrast's meaning: on the full-turn phase grid it captures exactly the
/// DC, and the oscillation amplitude still ceilings |rho_SS,DD|.
pub fn bound_from_records(
    population: &MeasurementRecord,
    two_pulse: &[MeasurementRecord],
    one_pulse: &[MeasurementRecord],
) -> Result<FidelityBound, EstimatorError> {
    let two_points: Vec<(f64, f64, f64)> = two_pulse
        .iter()
        .map(|r| (r.phase, r.parity(), r.parity_sigma()))
        .collect();
    let one_points: Vec<(f64, f64, f64)> = one_pulse
        .iter()
        .map(|r| (r.phase, r.parity(), r.parity_sigma()))
        .collect();
    let two_fit = fit_parity(&two_points, ParityFitModel::WithOffset)?;
    let one_fit = fit_parity(&one_points, ParityFitModel::WithOffset)?;
    Ok(fidelity_bound(
        population.probabilities[1],
        population.uncertainties[1],
        two_fit.value_at(FRAC_PI_2),
        two_fit.stderr_at(FRAC_PI_2),
        one_fit.contrast,
        one_fit.contrast_sigma(),
    ))
}

/// CSV export with header `phase_rad,scheme,eta0,eta1,eta2`.
pub fn records_to_csv(records: &[MeasurementRecord]) -> String {
    let mut out = String::from("phase_rad,scheme,eta0,eta1,eta2\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.phase, r.scheme, r.counts[0], r.counts[1], r.counts[2]
        ));
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<MeasurementRecord>, EstimatorError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if k == 0 {
            if line != "phase_rad,scheme,eta0,eta1,eta2" {
                return Err(EstimatorError::MalformedCsv { line: 1, reason: "bad header".into() });
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(EstimatorError::MalformedCsv {
                line: k + 1,
                reason: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let bad = |reason: String| EstimatorError::MalformedCsv { line: k + 1, reason };
        let phase: f64 = fields[0].parse().map_err(|e| bad(format!("phase: {e}")))?;
        let scheme: RotationScheme = fields[1].parse().map_err(bad)?;
        let mut counts = [0u64; 3];
        for (i, f) in fields[2..5].iter().enumerate() {
            counts[i] = f.parse().map_err(|e| bad(format!("eta{i}: {e}")))?;
        }
        out.push(record_from_counts(phase, scheme, counts));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::herald::psi_plus;
    use crate::qops::{C64, StateVector};
    use ndarray::Array2;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_density_matrix(rng: &mut ChaCha8Rng) -> DensityMatrix {
        let mut g: Array2<C64> = Array2::zeros((4, 4));
        for r in 0..4 {
            for col in 0..4 {
                g[[r, col]] = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            }
        }
        let gdag = g.t().mapv(|v| v.conj());
        let mut m = g.dot(&gdag);
        let tr: C64 = m.diag().sum();
        m.mapv_inplace(|v| v / tr.re);
        DensityMatrix::new(qubit_space(), m).unwrap()
    }

    #[test]
    fn parity_trivial_values() {
        assert_eq!(parity(1.0, 0.0, 0.0), 1.0);
        assert_eq!(parity(0.25, 0.5, 0.25), 0.0);
        assert_eq!(parity(0.0, 1.0, 0.0), -1.0);
    }

    #[test]
    fn psi_plus_two_pulse_curve_is_minus_cos() {
        let rho = DensityMatrix::from_pure(&psi_plus());
        for &phi in &[0.0, 0.3, FRAC_PI_2, 1.9, PI] {
            let p = ideal_parity(&rho, RotationScheme::TwoPulse, phi).unwrap();
            assert!(
                (p - (-(2.0 * phi).cos())).abs() < 1e-12,
                "phi = {phi}: {p} vs {}",
                -(2.0 * phi).cos()
            );
        }
        let p_max = ideal_parity(&rho, RotationScheme::TwoPulse, FRAC_PI_2).unwrap();
        assert!((p_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psi_plus_population_readout() {
        let rho = DensityMatrix::from_pure(&psi_plus());
        let [p0, p1, p2] = ideal_populations(&rho, RotationScheme::None, 0.0).unwrap();
        assert!(p0 < 1e-14 && p2 < 1e-14);
        assert!((p1 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_pulse_parity_identity_on_random_states() {
        // brute-force matrix parity at pi/2 equals 2 Re(rho_SD,DS - rho_SS,DD)
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let rho = random_density_matrix(&mut rng);
            let p = ideal_parity(&rho, RotationScheme::TwoPulse, FRAC_PI_2).unwrap();
            let m = rho.matrix();
            let expected = 2.0 * (m[[1, 2]].re - m[[0, 3]].re);
            assert!((p - expected).abs() < 1e-10, "{p} vs {expected}");
        }
    }

    #[test]
    fn one_pulse_contrast_tracks_ss_dd_coherence() {
        // state with tunable rho_SS,DD: a |SS> + b |DD>
        let space = qubit_space();
        let ss = StateVector::basis_state(&space, &[0, 0]).unwrap();
        let dd = StateVector::basis_state(&space, &[1, 1]).unwrap();
        let psi = StateVector::superposition(&[
            (c(0.8, 0.0), &ss),
            (c(0.36, 0.48), &dd),
        ])
        .unwrap();
        let rho = DensityMatrix::from_pure(&psi);
        let coherence = rho.matrix()[[0, 3]];

        let phases = standard_phase_grid(25);
        let pts: Vec<(f64, f64, f64)> = phases
            .iter()
            .map(|&phi| (phi, ideal_parity(&rho, RotationScheme::OnePulse, phi).unwrap(), 1.0))
            .collect();
        let fit = fit_parity(&pts, ParityFitModel::ZeroOffset).unwrap();
        assert!(
            (fit.contrast - 2.0 * coherence.norm()).abs() < 1e-10,
            "contrast {} vs 2|rho_SS,DD| {}",
            fit.contrast,
            2.0 * coherence.norm()
        );
    }

    #[test]
    fn multinomial_sampling_concentrates() {
        let rho = DensityMatrix::from_pure(&psi_plus());
        let rec =
            simulate_measurement(&rho, RotationScheme::TwoPulse, 0.7, 1_000_000, 5).unwrap();
        let ideal = ideal_populations(&rho, RotationScheme::TwoPulse, 0.7).unwrap();
        for k in 0..3 {
            let sigma = (ideal[k] * (1.0 - ideal[k]) / 1e6).sqrt().max(1e-6);
            assert!(
                (rec.probabilities[k] - ideal[k]).abs() < 3.0 * sigma,
                "outcome {k}: {} vs {}",
                rec.probabilities[k],
                ideal[k]
            );
        }
        assert_eq!(rec.shots(), 1_000_000);
        let total: f64 = rec.probabilities.iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn deterministic_sampling() {
        let rho = DensityMatrix::from_pure(&psi_plus());
        let a = simulate_measurement(&rho, RotationScheme::OnePulse, 0.3, 500, 11).unwrap();
        let b = simulate_measurement(&rho, RotationScheme::OnePulse, 0.3, 500, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_recovers_exact_sinusoid() {
        let c_true = 0.9;
        let phi0 = 0.3;
        let pts: Vec<(f64, f64, f64)> = standard_phase_grid(25)
            .iter()
            .map(|&phi| (phi, c_true * (2.0 * phi + phi0).sin(), 1.0))
            .collect();
        let fit = fit_parity(&pts, ParityFitModel::WithOffset).unwrap();
        assert!((fit.contrast - c_true).abs() < 1e-10);
        assert!((fit.phase - phi0).abs() < 1e-10);
        assert!(fit.offset.unwrap().abs() < 1e-12);
    }

    #[test]
    fn fit_preconditions() {
        let pts: Vec<(f64, f64, f64)> = (0..4).map(|k| (k as f64 * 0.6, 0.0, 1.0)).collect();
        assert!(matches!(
            fit_parity(&pts, ParityFitModel::ZeroOffset),
            Err(EstimatorError::TooFewPoints { .. })
        ));
        let narrow: Vec<(f64, f64, f64)> =
            (0..6).map(|k| (k as f64 * 0.1, 0.0, 1.0)).collect();
        assert!(matches!(
            fit_parity(&narrow, ParityFitModel::ZeroOffset),
            Err(EstimatorError::PhaseSpanTooSmall(_))
        ));
    }

    #[test]
    fn null_contrast_consistent_with_zero() {
        // pure noise: the fitted contrast should be Rayleigh-distributed;
        // it stays below 2 sigma_C in the large majority of repetitions
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let sigma = 0.05;
        let phases = standard_phase_grid(25);
        let mut within = 0usize;
        let n_rep = 1000;
        let mut mean_c = 0.0;
        for _ in 0..n_rep {
            let pts: Vec<(f64, f64, f64)> = phases
                .iter()
                .map(|&phi| {
                    // Box-Muller from two uniforms
                    let u1: f64 = rng.random::<f64>().max(1e-12);
                    let u2: f64 = rng.random();
                    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                    (phi, sigma * z, sigma)
                })
                .collect();
            let fit = fit_parity(&pts, ParityFitModel::ZeroOffset).unwrap();
            mean_c += fit.contrast;
            if fit.contrast <= 2.0 * fit.contrast_sigma() {
                within += 1;
            }
        }
        mean_c /= n_rep as f64;
        // Rayleigh: P(C < 2 sigma_A) = 1 - exp(-2) = 0.865
        assert!(within as f64 >= 0.80 * n_rep as f64, "within = {within}");
        // mean contrast is sigma_A sqrt(pi/2), far below the signal scale
        let sigma_a = sigma * (2.0 / 25.0f64).sqrt();
        assert!((mean_c - sigma_a * (PI / 2.0).sqrt()).abs() < 0.3 * sigma_a);
    }

    #[test]
    fn coherence_ceiling_values() {
        assert_eq!(coherence_ceiling(0.0, 0.0), 0.0);
        assert_eq!(coherence_ceiling(0.5, 0.5), 0.5);
        assert_eq!(coherence_ceiling(1.0, 0.0), 0.0);
    }

    #[test]
    fn golden_fidelity_bound() {
        let b = fidelity_bound(1.00, 0.03, 0.86, 0.01, 0.02, 0.03);
        assert!((b.bound - 0.920).abs() < 0.005, "bound {}", b.bound);
        assert!((b.error - 0.0218).abs() < 0.001, "error {}", b.error);

        let perfect = fidelity_bound(1.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        assert!((perfect.bound - 1.0).abs() < 1e-15);
        let classical = fidelity_bound(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!((classical.bound - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bound_from_density_matrix_cases() {
        let rho = DensityMatrix::from_pure(&psi_plus());
        let cmp = bound_from_density_matrix(&rho).unwrap();
        assert!((cmp.exact_fidelity - 1.0).abs() < 1e-10);
        assert!((cmp.infinite_shot.bound - 1.0).abs() < 1e-10);

        // equal mixture of Psi+ and Phi+: exact 0.5, bound strictly below
        let space = qubit_space();
        let ss = StateVector::basis_state(&space, &[0, 0]).unwrap();
        let dd = StateVector::basis_state(&space, &[1, 1]).unwrap();
        let phi_plus = StateVector::superposition(&[
            (c(std::f64::consts::FRAC_1_SQRT_2, 0.0), &ss),
            (c(std::f64::consts::FRAC_1_SQRT_2, 0.0), &dd),
        ])
        .unwrap();
        let mix = DensityMatrix::from_pure(&psi_plus())
            .scaled(0.5)
            .add(&DensityMatrix::from_pure(&phi_plus).scaled(0.5))
            .unwrap();
        let cmp = bound_from_density_matrix(&mix).unwrap();
        assert!((cmp.exact_fidelity - 0.5).abs() < 1e-10);
        assert!(cmp.infinite_shot.bound <= 0.5 + 1e-10);
    }

    #[test]
    fn bound_never_exceeds_exact_fidelity() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let rho = random_density_matrix(&mut rng);
            let cmp = bound_from_density_matrix(&rho).unwrap();
            assert!(
                cmp.infinite_shot.bound <= cmp.exact_fidelity + 1e-10,
                "bound {} > exact {}",
                cmp.infinite_shot.bound,
                cmp.exact_fidelity
            );
        }
    }

    #[test]
    fn z_rotation_flips_coherence_but_not_contrast() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = random_density_matrix(&mut rng);
        // z rotation by pi on ion 1: |S>_1 -> |S>_1, |D>_1 -> -|D>_1
        let mut u: Array2<C64> = Array2::eye(4);
        u[[2, 2]] = c(-1.0, 0.0);
        u[[3, 3]] = c(-1.0, 0.0);
        let rotated = u.dot(rho.matrix()).dot(&u.t().mapv(|v| v.conj()));
        let rho_rot = DensityMatrix::new(qubit_space(), rotated).unwrap();

        assert!(
            (rho_rot.matrix()[[1, 2]].re + rho.matrix()[[1, 2]].re).abs() < 1e-12,
            "Re rho_SD,DS flips sign"
        );
        let ca = bound_from_density_matrix(&rho).unwrap().infinite_shot.contrast;
        let cb = bound_from_density_matrix(&rho_rot).unwrap().infinite_shot.contrast;
        assert!((ca - cb).abs() < 1e-10, "contrast invariant: {ca} vs {cb}");
    }

    #[test]
    fn finite_shot_pipeline_tracks_oracle() {
        // small version of the end-to-end check: 25 phases x 50 shots
        let rho = DensityMatrix::from_pure(&psi_plus());
        let phases = standard_phase_grid(25);
        let mut hits = 0;
        let n_rep = 20;
        for rep in 0..n_rep {
            let meas = measure_bound(&rho, &phases, 50, 1000 + rep).unwrap();
            let oracle = bound_from_density_matrix(&rho).unwrap();
            let dev = (meas.bound.bound - oracle.infinite_shot.bound).abs();
            if dev <= 3.0 * meas.bound.error.max(1e-6) {
                hits += 1;
            }
        }
        assert!(hits >= n_rep * 8 / 10, "hits = {hits}/{n_rep}");
    }

    #[test]
    fn zero_shots_rejected() {
        let rho = DensityMatrix::from_pure(&psi_plus());
        assert!(matches!(
            simulate_measurement(&rho, RotationScheme::None, 0.0, 0, 1),
            Err(EstimatorError::NoShots)
        ));
    }

    #[test]
    fn records_csv_round_trip() {
        let rho = DensityMatrix::from_pure(&psi_plus());
        let recs = vec![
            simulate_measurement(&rho, RotationScheme::TwoPulse, 0.13, 50, 1).unwrap(),
            simulate_measurement(&rho, RotationScheme::OnePulse, 1.57, 50, 2).unwrap(),
            simulate_measurement(&rho, RotationScheme::None, 0.0, 50, 3).unwrap(),
        ];
        let text = records_to_csv(&recs);
        let back = records_from_csv(&text).unwrap();
        assert_eq!(back, recs);

        assert!(records_from_csv("bad header\n").is_err());
        let partial = "phase_rad,scheme,eta0,eta1,eta2\n0.1,two_pulse,1,2\n";
        match records_from_csv(partial) {
            Err(EstimatorError::MalformedCsv { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
