//! Quantum-jump unraveling against the dense Lindblad oracle.
//!
//! A weakly driven ion coupled to one decaying mode: the ensemble average
//! of stochastic wave-function trajectories converges to the master
//! equation as 1/sqrt(n).
//!
//! Run with: cargo run --release --example trajectory_vs_master

use std::f64::consts::TAU;

use ion_cavity_sim::mcwf::{master_equation, run_ensemble, EnsembleOptions, TrajectoryOptions};
use ion_cavity_sim::model::{
    ChannelLabel, CollapseChannel, HamiltonianTerm, SystemModel, TimeDependence,
};
use ion_cavity_sim::qops::{C64, CsrMatrix, DensityMatrix, HilbertSpace, Operator, StateVector};

fn model() -> SystemModel {
    let space = HilbertSpace::new(&[5, 3]).unwrap();
    let idx = |level: usize, n: usize| level * 3 + n;
    let g_eff = TAU * 8e3;
    let kappa = TAU * 50e3;
    let gamma = TAU * 2e3;
    let c = |re: f64| C64::new(re, 0.0);

    let mut h = Vec::new();
    for n in 0..2usize {
        let amp = g_eff * ((n + 1) as f64).sqrt();
        h.push((idx(1, n + 1), idx(0, n), c(amp)));
        h.push((idx(0, n), idx(1, n + 1), c(amp)));
    }
    let mut a = Vec::new();
    for level in 0..5 {
        for n in 1..3usize {
            a.push((idx(level, n - 1), idx(level, n), c((n as f64).sqrt() * (2.0 * kappa).sqrt())));
        }
    }
    let mut deph = Vec::new();
    for n in 0..3 {
        deph.push((idx(0, n), idx(0, n), c((2.0 * gamma).sqrt())));
    }
    let op = |t: &[(usize, usize, C64)]| {
        Operator::new(space.clone(), CsrMatrix::from_triplets(15, t)).unwrap()
    };
    SystemModel {
        space: space.clone(),
        hamiltonian: vec![HamiltonianTerm { op: op(&h), time_dependence: TimeDependence::Static }],
        collapse: vec![
            CollapseChannel { op: op(&a), label: ChannelLabel::CavityH },
            CollapseChannel { op: op(&deph), label: ChannelLabel::SpontS(0) },
        ],
    }
}

fn main() {
    let model = model();
    let psi0 = StateVector::basis_state(&model.space, &[0, 0]).unwrap();
    let t_max = 10e-6;
    let dt = 10e-9;
    let samples: Vec<f64> = (1..=10).map(|k| t_max * k as f64 / 10.0).collect();

    let oracle =
        master_equation(&model, &DensityMatrix::from_pure(&psi0), t_max, dt, &samples).unwrap();

    println!("trajectories    worst trace distance to the Lindblad solution");
    for n_traj in [250usize, 1000, 4000] {
        let res = run_ensemble(
            &model,
            &psi0,
            t_max,
            dt,
            n_traj,
            99,
            &EnsembleOptions {
                trajectory: TrajectoryOptions { sample_times: samples.clone(), ..Default::default() },
                average_density: true,
                ..Default::default()
            },
        )
        .unwrap();
        let avg = res.averaged_rho.unwrap();
        let worst = avg
            .iter()
            .zip(&oracle)
            .map(|(a, b)| a.trace_distance(b).unwrap())
            .fold(0.0f64, f64::max);
        println!("{n_traj:>10}      {worst:.5}");
    }
    println!();
    println!("jump statistics are reproducible: reruns with the same seed are bit-identical");
    println!("for any rayon worker count (counter-based per-trajectory random streams).");
}
