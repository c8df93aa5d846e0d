//! Simulation and analysis toolkit for heralded entanglement of two trapped
//! ions coupled to an optical cavity.
//!
//! The crate covers the full chain from trap geometry to the entanglement
//! witness:
//!
//! - [`geometry`] — ion spacing, projected spacing along the cavity axis,
//!   standing-wave coupling phases, and fits of sinusoidally modulated
//!   Gaussian scans.
//! - [`qops`] — minimal complex linear algebra for composite Hilbert spaces:
//!   states, sparse operators, tensor products, partial traces.
//! - [`model`] — the two-ion/two-mode system model: levels, bichromatic Raman
//!   drive, cavity couplings, collapse channels, mapping and analysis pulses.
//! - [`mcwf`] — stochastic wave-function (quantum-jump) trajectories plus a
//!   dense Lindblad integrator used as a verification oracle.
//! - [`herald`] — two-photon coincidence extraction, conditional two-ion
//!   states, fidelity vs. detection interval, and sequence-rate modelling.
//! - [`estimator`] — parity, parity-curve fits, the coherence ceiling and the
//!   fidelity lower bound with error propagation.
//! - [`readout`] — fluorescence-histogram mixture model, per-shot
//!   classification and probability estimation.
//! - [`cli`] — configuration, orchestration, and file output for the `ionsim`
//!   binary.
//!
//! Start with the runnable examples (`cargo run --release --example ...`);
//! each one exercises one capability end to end.

pub mod cli;
pub mod config;
pub mod constants;
pub mod estimator;
pub mod geometry;
pub mod herald;
pub mod lsq;
pub mod mcwf;
pub mod model;
pub mod qops;
pub mod readout;
