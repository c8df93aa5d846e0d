//! Fluorescence-count statistics: three-component Gaussian mixture,
//! per-shot classification, and probability estimation with statistical
//! plus projection noise.
//!
//! Interference of the two detection beams makes the per-ion scatter rate
//! fluctuate, so the count histograms are Gaussian rather than Poissonian.
//! Counts are treated as continuous; integer binning happens only at
//! ingestion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReadoutError {
    #[error("need at least {needed} shots, got {got}")]
    TooFewShots { needed: usize, got: usize },
    #[error("EM did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("component {index} collapsed (sigma = {sigma:.3e})")]
    CollapsedComponent { index: usize, sigma: f64 },
    #[error("component {index} is empty (weight = {weight:.3e})")]
    EmptyComponent { index: usize, weight: f64 },
    #[error(
        "components {index} and {other} are not resolved (separation {separation:.3e} < sigma sum {sigma_sum:.3e})"
    )]
    DegenerateComponents { index: usize, other: usize, separation: f64, sigma_sum: f64 },
    #[error("initial means must be distinct and ordered")]
    BadInitialMeans,
    #[error("no classifications supplied")]
    NoClassifications,
    #[error("malformed CSV at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
}

/// One Gaussian component of the count distribution for n bright ions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: f64,
    pub sigma: f64,
    pub weight: f64,
}

impl MixtureComponent {
    /// Normalized density at `s`.
    pub fn density(&self, s: f64) -> f64 {
        let z = (s - self.mean) / self.sigma;
        (-(z * z) / 2.0).exp() / (self.sigma * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// Three-component model, means ordered s0 < s1 < s2 for 0, 1, 2 bright
/// ions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub components: [MixtureComponent; 3],
}

impl MixtureModel {
    pub fn log_likelihood(&self, shots: &[f64]) -> f64 {
        shots
            .iter()
            .map(|&s| {
                let p: f64 = self
                    .components
                    .iter()
                    .map(|c| c.weight * c.density(s))
                    .sum();
                p.max(1e-300).ln()
            })
            .sum()
    }
}

const EM_MAX_ITER: usize = 1000;
const EM_TOLERANCE: f64 = 1e-9;

/// Maximum-likelihood three-component Gaussian mixture via
/// expectation-maximization.
///
/// `initial_means` overrides the quantile-based starting point; the data
/// must otherwise show three separated populations. At least 100 shots are
/// required. Components are reported with ascending means; a collapsed or
/// empty component is an error.
pub fn fit_mixture(
    shots: &[f64],
    initial_means: Option<[f64; 3]>,
) -> Result<MixtureModel, ReadoutError> {
    if shots.len() < 100 {
        return Err(ReadoutError::TooFewShots { needed: 100, got: shots.len() });
    }
    let mut sorted = shots.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let span = (sorted[n - 1] - sorted[0]).max(1e-9);

    let means0 = match initial_means {
        Some(m) => {
            if !(m[0] < m[1] && m[1] < m[2]) {
                return Err(ReadoutError::BadInitialMeans);
            }
            m
        }
        None => [
            sorted[n / 10],
            sorted[n / 2],
            sorted[9 * n / 10],
        ],
    };
    let sigma0 = (span / 10.0).max(1e-6);
    let mut comps = [
        MixtureComponent { mean: means0[0], sigma: sigma0, weight: 1.0 / 3.0 },
        MixtureComponent { mean: means0[1], sigma: sigma0, weight: 1.0 / 3.0 },
        MixtureComponent { mean: means0[2], sigma: sigma0, weight: 1.0 / 3.0 },
    ];

    let sigma_floor = 1e-6 * span;
    let weight_floor = 1e-6;
    let mut model = MixtureModel { components: comps };
    let mut last_ll = model.log_likelihood(shots);

    for iter in 0..EM_MAX_ITER {
        // E step
        let mut resp = vec![[0.0f64; 3]; n];
        for (i, &s) in shots.iter().enumerate() {
            let mut total = 0.0;
            for (k, c) in comps.iter().enumerate() {
                let r = c.weight * c.density(s);
                resp[i][k] = r;
                total += r;
            }
            if total > 0.0 {
                for k in 0..3 {
                    resp[i][k] /= total;
                }
            } else {
                // point far from every component: assign to the nearest
                let k = nearest_component(&comps, s);
                resp[i] = [0.0; 3];
                resp[i][k] = 1.0;
            }
        }
        // M step
        for k in 0..3 {
            let total: f64 = resp.iter().map(|r| r[k]).sum();
            if total / (n as f64) < weight_floor {
                return Err(ReadoutError::EmptyComponent {
                    index: k,
                    weight: total / n as f64,
                });
            }
            let mean: f64 = shots.iter().zip(&resp).map(|(&s, r)| r[k] * s).sum::<f64>() / total;
            let var: f64 = shots
                .iter()
                .zip(&resp)
                .map(|(&s, r)| r[k] * (s - mean) * (s - mean))
                .sum::<f64>()
                / total;
            let sigma = var.sqrt();
            if sigma < sigma_floor {
                return Err(ReadoutError::CollapsedComponent { index: k, sigma });
            }
            comps[k] = MixtureComponent { mean, sigma, weight: total / n as f64 };
        }
        comps.sort_by(|a, b| a.mean.partial_cmp(&b.mean).unwrap());
        model = MixtureModel { components: comps };
        let ll = model.log_likelihood(shots);
        if (ll - last_ll).abs() < EM_TOLERANCE {
            check_resolved(&model)?;
            return Ok(model);
        }
        last_ll = ll;
        if iter == EM_MAX_ITER - 1 {
            check_resolved(&model)?;
            return Err(ReadoutError::NoConvergence(EM_MAX_ITER));
        }
    }
    Err(ReadoutError::NoConvergence(EM_MAX_ITER))
}

/// Reject fits where neighboring components overlap so strongly that the
/// data cannot have contained three populations (e.g. single-component
/// input split three ways).
fn check_resolved(model: &MixtureModel) -> Result<(), ReadoutError> {
    for k in 0..2 {
        let a = &model.components[k];
        let b = &model.components[k + 1];
        let separation = b.mean - a.mean;
        let sigma_sum = a.sigma + b.sigma;
        if separation < sigma_sum {
            return Err(ReadoutError::DegenerateComponents {
                index: k,
                other: k + 1,
                separation,
                sigma_sum,
            });
        }
    }
    Ok(())
}

fn nearest_component(comps: &[MixtureComponent; 3], s: f64) -> usize {
    let mut best = 0;
    let mut dist = f64::INFINITY;
    for (k, c) in comps.iter().enumerate() {
        let d = ((s - c.mean) / c.sigma).abs();
        if d < dist {
            dist = d;
            best = k;
        }
    }
    best
}

/// One classified fluorescence shot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotClassification {
    pub counts: f64,
    /// Assigned number of bright ions, argmax of the (unweighted) component
    /// densities; ties break toward the smaller class.
    pub assigned: usize,
    /// Posterior weight of the assigned class, g_n(s) / sum_i g_i(s).
    pub delta: f64,
    /// 1 - delta: the weight assigned to the other classes.
    pub misassignment: f64,
}

/// Classify one shot. The densities enter unweighted, matching the
/// published estimator; mixture weights only shape the fit.
pub fn classify(s: f64, model: &MixtureModel) -> ShotClassification {
    let densities: Vec<f64> = model.components.iter().map(|c| c.density(s)).collect();
    let total: f64 = densities.iter().sum();
    let mut assigned = 0;
    for k in 1..3 {
        if densities[k] > densities[assigned] {
            assigned = k;
        }
    }
    let delta = if total > 0.0 {
        densities[assigned] / total
    } else {
        // all densities underflow: fall back to nearest in sigma units
        1.0
    };
    let assigned = if total > 0.0 {
        assigned
    } else {
        nearest_component(&model.components, s)
    };
    ShotClassification { counts: s, assigned, delta, misassignment: 1.0 - delta }
}

pub fn classify_all(shots: &[f64], model: &MixtureModel) -> Vec<ShotClassification> {
    shots.iter().map(|&s| classify(s, model)).collect()
}

/// Handling of the projection-noise expression at p in {0, 1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionNoise {
    /// The published expression: sqrt(p (1-p) / eta_i), and sqrt(eta_i) at
    /// p in {0, 1}.
    Verbatim,
    /// Smoothed binomial error sqrt(p~ (1-p~) / N) with
    /// p~ = (eta_i + 1) / (N + 2), finite everywhere.
    Smoothed,
}

/// Estimated bright-ion probabilities with their error budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub counts: [u64; 3],
    pub p: [f64; 3],
    /// Aggregated misassignment weight per class, divided by total shots.
    pub stat_err: [f64; 3],
    /// Quantum projection noise.
    pub proj_err: [f64; 3],
    /// stat + proj per class.
    pub total_err: [f64; 3],
}

/// Estimate (p_i, delta p_i) from classified shots.
pub fn estimate_probabilities(
    classifications: &[ShotClassification],
    convention: ProjectionNoise,
) -> Result<ProbabilityEstimate, ReadoutError> {
    if classifications.is_empty() {
        return Err(ReadoutError::NoClassifications);
    }
    let n = classifications.len() as f64;
    let mut counts = [0u64; 3];
    let mut stat = [0.0f64; 3];
    for c in classifications {
        counts[c.assigned] += 1;
        stat[c.assigned] += c.misassignment;
    }
    let p = std::array::from_fn(|k| counts[k] as f64 / n);
    let stat_err = std::array::from_fn(|k| stat[k] / n);
    let proj_err = std::array::from_fn(|k| {
        let eta = counts[k] as f64;
        match convention {
            ProjectionNoise::Verbatim => {
                if counts[k] == 0 || counts[k] as f64 == n {
                    eta.sqrt()
                } else {
                    (p[k] * (1.0 - p[k]) / eta).sqrt()
                }
            }
            ProjectionNoise::Smoothed => {
                let smoothed = (eta + 1.0) / (n + 2.0);
                (smoothed * (1.0 - smoothed) / n).sqrt()
            }
        }
    });
    let total_err = std::array::from_fn(|k| stat_err[k] + proj_err[k]);
    Ok(ProbabilityEstimate { counts, p, stat_err, proj_err, total_err })
}

/// Parse shots from CSV with header `shot_id,counts`.
pub fn shots_from_csv(text: &str) -> Result<Vec<f64>, ReadoutError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if k == 0 {
            if line != "shot_id,counts" {
                return Err(ReadoutError::MalformedCsv { line: 1, reason: "bad header".into() });
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(ReadoutError::MalformedCsv {
                line: k + 1,
                reason: format!("expected 2 fields, got {}", fields.len()),
            });
        }
        let value: f64 = fields[1].parse().map_err(|e| ReadoutError::MalformedCsv {
            line: k + 1,
            reason: format!("{e}"),
        })?;
        // counts are integers at ingestion; the model treats them as
        // continuous afterwards
        out.push(value.round());
    }
    Ok(out)
}

pub fn shots_to_csv(shots: &[f64]) -> String {
    let mut out = String::from("shot_id,counts\n");
    for (k, s) in shots.iter().enumerate() {
        out.push_str(&format!("{k},{s}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synth(
        rng: &mut ChaCha8Rng,
        spec: &[(f64, f64, f64)], // (mean, sigma, weight)
        n: usize,
    ) -> (Vec<f64>, Vec<usize>) {
        let mut shots = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let total_w: f64 = spec.iter().map(|s| s.2).sum();
        for _ in 0..n {
            let mut u: f64 = rng.random::<f64>() * total_w;
            let mut k = 0;
            for (i, &(_, _, w)) in spec.iter().enumerate() {
                if u < w {
                    k = i;
                    break;
                }
                u -= w;
            }
            let dist = Normal::new(spec[k].0, spec[k].1).unwrap();
            shots.push(dist.sample(rng));
            labels.push(k);
        }
        (shots, labels)
    }

    #[test]
    fn em_recovers_synthetic_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let spec = [(10.0, 10.0, 1.0), (110.0, 15.0, 1.0), (210.0, 18.0, 1.0)];
        let (shots, _) = synth(&mut rng, &spec, 10_000);
        let model = fit_mixture(&shots, None).unwrap();
        for (c, &(mean, sigma, _)) in model.components.iter().zip(&spec) {
            assert!(
                (c.mean - mean).abs() / mean.abs().max(1.0) < 0.02,
                "mean {} vs {}",
                c.mean,
                mean
            );
            assert!((c.sigma - sigma).abs() / sigma < 0.15);
        }
        let w_total: f64 = model.components.iter().map(|c| c.weight).sum();
        assert!((w_total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_component_data_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = Normal::new(50.0, 5.0).unwrap();
        let shots: Vec<f64> = (0..2000).map(|_| dist.sample(&mut rng)).collect();
        match fit_mixture(&shots, None) {
            Err(ReadoutError::CollapsedComponent { .. })
            | Err(ReadoutError::EmptyComponent { .. })
            | Err(ReadoutError::DegenerateComponents { .. }) => {}
            other => panic!("expected collapse/empty/degenerate, got {other:?}"),
        }
    }

    #[test]
    fn too_few_shots_rejected() {
        let shots = vec![1.0; 50];
        assert!(matches!(
            fit_mixture(&shots, None),
            Err(ReadoutError::TooFewShots { .. })
        ));
    }

    #[test]
    fn translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = [(10.0, 8.0, 1.0), (100.0, 12.0, 1.0), (190.0, 15.0, 1.0)];
        let (shots, _) = synth(&mut rng, &spec, 5000);
        let model = fit_mixture(&shots, None).unwrap();
        let shift = 37.5;
        let shifted: Vec<f64> = shots.iter().map(|s| s + shift).collect();
        let model2 = fit_mixture(&shifted, None).unwrap();
        for (a, b) in model.components.iter().zip(&model2.components) {
            assert!(
                (b.mean - a.mean - shift).abs() < 1.0,
                "means shift by the offset: {} vs {}",
                b.mean - a.mean,
                shift
            );
        }
    }

    fn well_separated() -> MixtureModel {
        MixtureModel {
            components: [
                MixtureComponent { mean: 10.0, sigma: 5.0, weight: 0.3 },
                MixtureComponent { mean: 110.0, sigma: 6.0, weight: 0.4 },
                MixtureComponent { mean: 210.0, sigma: 7.0, weight: 0.3 },
            ],
        }
    }

    #[test]
    fn classify_on_peak() {
        let model = well_separated();
        let c = classify(110.0, &model);
        assert_eq!(c.assigned, 1);
        assert!(c.delta > 0.99);
        assert!((c.delta + c.misassignment - 1.0).abs() < 1e-15);
    }

    #[test]
    fn classify_equidistant_gives_half() {
        let model = MixtureModel {
            components: [
                MixtureComponent { mean: 0.0, sigma: 10.0, weight: 0.5 },
                MixtureComponent { mean: 100.0, sigma: 10.0, weight: 0.5 },
                MixtureComponent { mean: 1000.0, sigma: 10.0, weight: 0.0 },
            ],
        };
        let c = classify(50.0, &model);
        assert!((c.delta - 0.5).abs() < 1e-6, "delta = {}", c.delta);
        // tie breaks toward the smaller class
        assert_eq!(c.assigned, 0);
    }

    #[test]
    fn classification_matches_pointwise_density_oracle() {
        let model = well_separated();
        for s in 0..=220 {
            let s = s as f64;
            let c = classify(s, &model);
            // brute-force density comparison
            let d: Vec<f64> = model.components.iter().map(|cc| cc.density(s)).collect();
            let mut best = 0;
            for k in 1..3 {
                if d[k] > d[best] {
                    best = k;
                }
            }
            assert_eq!(c.assigned, best, "at s = {s}");
        }
    }

    #[test]
    fn classify_scale_consistency() {
        let model = well_separated();
        let factor = 3.7;
        let scaled = MixtureModel {
            components: std::array::from_fn(|k| MixtureComponent {
                mean: model.components[k].mean * factor,
                sigma: model.components[k].sigma * factor,
                weight: model.components[k].weight,
            }),
        };
        for s in [5.0, 60.0, 110.0, 160.0, 205.0] {
            let a = classify(s, &model);
            let b = classify(s * factor, &scaled);
            assert_eq!(a.assigned, b.assigned);
            assert!((a.delta - b.delta).abs() < 1e-12);
        }
    }

    #[test]
    fn well_separated_misassignment_rate() {
        // |s_{n+1} - s_n| > 6 (sigma_n + sigma_{n+1}): misassignment < 1e-4
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let spec = [(0.0, 5.0, 1.0), (100.0, 6.0, 1.0), (200.0, 7.0, 1.0)];
        let (shots, labels) = synth(&mut rng, &spec, 50_000);
        let model = MixtureModel {
            components: [
                MixtureComponent { mean: 0.0, sigma: 5.0, weight: 1.0 / 3.0 },
                MixtureComponent { mean: 100.0, sigma: 6.0, weight: 1.0 / 3.0 },
                MixtureComponent { mean: 200.0, sigma: 7.0, weight: 1.0 / 3.0 },
            ],
        };
        let wrong = shots
            .iter()
            .zip(&labels)
            .filter(|(&s, &l)| classify(s, &model).assigned != l)
            .count();
        assert!(
            (wrong as f64) / (shots.len() as f64) < 1e-4,
            "misassignment rate {}",
            wrong as f64 / shots.len() as f64
        );
    }

    #[test]
    fn probability_estimates_and_errors() {
        // all shots in class 1 with delta 1: p = (0, 1, 0), stat error 0
        let perfect: Vec<ShotClassification> = (0..100)
            .map(|_| ShotClassification {
                counts: 110.0,
                assigned: 1,
                delta: 1.0,
                misassignment: 0.0,
            })
            .collect();
        let est = estimate_probabilities(&perfect, ProjectionNoise::Verbatim).unwrap();
        assert_eq!(est.p, [0.0, 1.0, 0.0]);
        assert_eq!(est.stat_err, [0.0, 0.0, 0.0]);
        let total: f64 = est.p.iter().sum();
        assert_eq!(total, 1.0);

        // eta = (25, 50, 25): proj error of class 1 is sqrt(0.25 / 50)
        let mut shots = Vec::new();
        for (class, reps) in [(0usize, 25), (1, 50), (2, 25)] {
            for _ in 0..reps {
                shots.push(ShotClassification {
                    counts: 0.0,
                    assigned: class,
                    delta: 1.0,
                    misassignment: 0.0,
                });
            }
        }
        let est = estimate_probabilities(&shots, ProjectionNoise::Verbatim).unwrap();
        assert!((est.proj_err[1] - (0.25f64 / 50.0).sqrt()).abs() < 1e-12);
        assert!((est.proj_err[1] - 0.0707).abs() < 1e-3);
        for e in est.total_err {
            assert!(e >= 0.0);
        }
    }

    #[test]
    fn verbatim_endpoint_expression_behind_flag() {
        let shots: Vec<ShotClassification> = (0..64)
            .map(|_| ShotClassification {
                counts: 1.0,
                assigned: 1,
                delta: 1.0,
                misassignment: 0.0,
            })
            .collect();
        let verbatim = estimate_probabilities(&shots, ProjectionNoise::Verbatim).unwrap();
        // published endpoint expression: sqrt(eta) = 8
        assert_eq!(verbatim.proj_err[1], 8.0);
        assert_eq!(verbatim.proj_err[0], 0.0);
        let smoothed = estimate_probabilities(&shots, ProjectionNoise::Smoothed).unwrap();
        assert!(smoothed.proj_err[1] < 0.1);
    }

    #[test]
    fn coverage_of_overlapping_mixture() {
        // moderate overlap: estimates cover the generating truth within
        // 2 (stat + proj) in at least 95% of repetitions
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = [(10.0, 12.0, 0.25), (60.0, 12.0, 0.5), (110.0, 12.0, 0.25)];
        let p_true = [0.25, 0.5, 0.25];
        let model = MixtureModel {
            components: [
                MixtureComponent { mean: 10.0, sigma: 12.0, weight: 0.25 },
                MixtureComponent { mean: 60.0, sigma: 12.0, weight: 0.5 },
                MixtureComponent { mean: 110.0, sigma: 12.0, weight: 0.25 },
            ],
        };
        let n_rep = 100;
        let mut covered = 0;
        for _ in 0..n_rep {
            let (shots, _) = synth(&mut rng, &spec, 300);
            let cls = classify_all(&shots, &model);
            let est = estimate_probabilities(&cls, ProjectionNoise::Verbatim).unwrap();
            let ok = (0..3).all(|k| (est.p[k] - p_true[k]).abs() <= 2.0 * est.total_err[k]);
            if ok {
                covered += 1;
            }
        }
        assert!(covered >= 95, "covered {covered}/{n_rep}");
    }

    #[test]
    fn estimate_requires_classifications() {
        assert!(matches!(
            estimate_probabilities(&[], ProjectionNoise::Verbatim),
            Err(ReadoutError::NoClassifications)
        ));
    }

    #[test]
    fn initial_means_must_be_ordered() {
        let shots = vec![1.0; 200];
        assert!(matches!(
            fit_mixture(&shots, Some([10.0, 5.0, 20.0])),
            Err(ReadoutError::BadInitialMeans)
        ));
    }

    #[test]
    fn shots_csv_round_trip() {
        let shots = vec![4.0, 110.0, 207.0];
        let text = shots_to_csv(&shots);
        let back = shots_from_csv(&text).unwrap();
        assert_eq!(back, shots);
        assert!(shots_from_csv("bad\n1,2\n").is_err());
        // integer binning at ingestion
        let v = shots_from_csv("shot_id,counts\n0,10.4\n").unwrap();
        assert_eq!(v[0], 10.0);
    }
}
