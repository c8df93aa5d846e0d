//! Event-rate model for the retry sequence.
//!
//! A cycle is 1.7 ms of cooling and pumping followed by up to ten 40 us
//! Raman attempts; a herald appends the mapping pulse and 2 ms of
//! fluorescence detection. With the simulated herald probability and a 6%
//! per-photon detection efficiency, the model reproduces the
//! event rates.
//!
//! Run with: cargo run --release --example sequence_rates

use ion_cavity_sim::herald::{self, SequenceTiming};
use ion_cavity_sim::mcwf::{self, TrajectoryOptions};
use ion_cavity_sim::model::{build_system, BuildOptions, DriveField, SystemParams};
use ion_cavity_sim::qops::StateVector;

fn main() {
    let params = SystemParams::experiment_defaults();
    let drives = [DriveField::reference_drive_d(), DriveField::reference_drive_dprime()];
    let model =
        build_system(&params, &drives, params.coupling_relative, 2, &BuildOptions::default())
            .unwrap();
    let psi0 = StateVector::basis_state(&model.space, &[0, 0, 0, 0]).unwrap();
    let opts = TrajectoryOptions {
        sample_times: vec![],
        capture_post_jump: true,
        stop_after_cavity_jumps: Some(2),
    };
    let t_max = 40e-6;
    let n = 1500;
    eprintln!("simulating {n} Raman attempts ...");
    let events: Vec<_> = mcwf::map_trajectories(&model, &psi0, t_max, 4e-9, n, 3, &opts, |rec| {
        herald::extract_herald(rec, t_max).unwrap()
    })
    .unwrap()
    .into_iter()
    .flatten()
    .collect();

    let p_herald = events.len() as f64 / n as f64;
    let first_fraction =
        events.iter().filter(|e| e.interval() <= 0.5e-6).count() as f64 / events.len() as f64;
    println!("herald probability per attempt (both photons emitted): {p_herald:.3}");
    println!("fraction of heralds with T <= 0.5 us: {first_fraction:.3}");

    let eta = 0.06; // per-photon detection efficiency
    let p_detected = p_herald * eta * eta;
    println!("detected-coincidence probability with eta = {eta}: {p_detected:.2e}");

    let timing = SequenceTiming::experiment_defaults();
    let all = herald::sequence_rate(&timing, p_detected, 1.0).unwrap();
    let first = herald::sequence_rate(&timing, p_detected, first_fraction).unwrap();
    println!();
    println!("all-event rate        : {all:.2} /s   (experiment: 4.3 /s)");
    println!("T <= 0.5 us subset    : {first:.3} /s  (experiment: 0.2 /s)");

    // limits of the rate formula
    let unit = herald::sequence_rate(&timing, 1.0, 1.0).unwrap();
    println!();
    println!(
        "p = 1 limit: one prep + one attempt + mapping + detection per event = {unit:.1} /s"
    );
}
