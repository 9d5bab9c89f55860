//! Configuration, experiment drivers and output writers for the
//! aggregation-diffusion particle scheme.

pub mod config;
pub mod datum;
pub mod runs;

pub use config::{parse_config, parse_config_str, ConfigError, InitialSpec, RunConfig};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "AGDIFF_THREADS";

/// Sizes the global worker pool from `AGDIFF_THREADS`, if set.
pub fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
