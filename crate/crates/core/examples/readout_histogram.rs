//! Fluorescence readout: mixture fit, classification, probabilities.
//!
//! Run with: cargo run --release --example readout_histogram

use ion_cavity_sim::readout::{
    classify_all, estimate_probabilities, fit_mixture, MixtureModel, ProjectionNoise,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    // counts for 0 / 1 / 2 bright ions, Gaussian because the detection
    // beams interfere and modulate the scatter rate
    let components = [(12.0, 8.0, 0.26), (120.0, 14.0, 0.50), (230.0, 17.0, 0.24)];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut shots = Vec::new();
    for _ in 0..8000 {
        let u: f64 = rng.random();
        let k = if u < components[0].2 {
            0
        } else if u < components[0].2 + components[1].2 {
            1
        } else {
            2
        };
        let dist = Normal::new(components[k].0, components[k].1).unwrap();
        let sample: f64 = dist.sample(&mut rng);
        shots.push(sample.round());
    }

    let model: MixtureModel = fit_mixture(&shots, None).unwrap();
    println!("fitted components (true means 12 / 120 / 230):");
    for (n, c) in model.components.iter().enumerate() {
        println!(
            "  n = {n}: mean {:>7.2}  sigma {:>6.2}  weight {:.3}",
            c.mean, c.sigma, c.weight
        );
    }

    let classifications = classify_all(&shots, &model);
    let estimate = estimate_probabilities(&classifications, ProjectionNoise::Verbatim).unwrap();
    println!();
    println!("bright-ion probabilities (true 0.26 / 0.50 / 0.24):");
    for k in 0..3 {
        println!(
            "  p{k} = {:.4} +- {:.4} (stat {:.4} + proj {:.4})",
            estimate.p[k], estimate.total_err[k], estimate.stat_err[k], estimate.proj_err[k]
        );
    }

    // the decision boundary between n = 0 and n = 1: the first count value
    // whose density favors the brighter class; shots near it carry an
    // ambiguous posterior
    let boundary = (0..200)
        .map(|s| s as f64)
        .find(|&s| ion_cavity_sim::readout::classify(s, &model).assigned == 1)
        .unwrap();
    println!();
    for s in [boundary - 10.0, boundary, boundary + 10.0] {
        let c = ion_cavity_sim::readout::classify(s, &model);
        println!(
            "shot at {s:>3.0} counts: assigned n = {} with posterior {:.3} (misassignment weight {:.3})",
            c.assigned, c.delta, c.misassignment
        );
    }
}
