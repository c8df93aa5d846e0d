//! Print the built-in run configuration as JSON, a starting point for
//! custom configs.
//!
//! Run with: cargo run --example print_config > my_config.json

use ion_cavity_sim::config::RunConfig;

fn main() {
    println!("{}", RunConfig::experiment_defaults().to_json_string());
}
