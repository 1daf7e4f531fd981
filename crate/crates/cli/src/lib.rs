//! Command-line workflows: system construction, impulse sampling, model
//! identification, prediction and parameter sweeps.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod workflow;

use nibrom_core::ErrorClass;

/// Exit status for a failed command: 1 configuration, 2 data, 3 numerical.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<nibrom_core::Error>() {
            return match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return 2;
        }
    }
    2
}

/// Sizes the global thread pool from `NIBROM_WORKERS` when set.
pub fn init_workers() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("NIBROM_WORKERS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| nibrom_core::Error::Config(format!("NIBROM_WORKERS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| nibrom_core::Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}
