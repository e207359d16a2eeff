//! Shared criterion settings for the benchmark targets.

use std::time::Duration;

use criterion::Criterion;

pub fn default_config() -> Criterion {
    Criterion::default()
        .without_plots()
        .warm_up_time(Duration::from_secs(1))
        .measurement_time(Duration::from_secs(3))
        .sample_size(30)
}
