//! Shared fixtures for the benchmarks.

use wavecoef::config::{Scenario, ScenarioConfig};
use wavecoef::observation::Observation;

/// Transmission scenario at a reduced resolution, with its noisy data.
pub fn transmission(nx: usize, steps: usize) -> (Scenario, Observation) {
    let cfg = ScenarioConfig::transmission().with_resolution(nx, nx, steps);
    let scenario = Scenario::build(&cfg).expect("valid scenario");
    let data = scenario.generate_data().expect("data generation");
    (scenario, data.noisy)
}
