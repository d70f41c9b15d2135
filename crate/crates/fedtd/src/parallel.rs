//! Worker pool sized by `FEDTD_THREADS`.

use fedtd_core::engine::{AgentExecutor, AgentSlot};
use rayon::prelude::*;

use crate::error::HarnessError;

pub const THREADS_ENV: &str = "FEDTD_THREADS";

/// Parses a `FEDTD_THREADS` value; `None` means "use the rayon default".
pub fn parse_threads(value: Option<&str>) -> Result<Option<usize>, HarnessError> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(HarnessError::Spec(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}

pub fn pool() -> Result<rayon::ThreadPool, HarnessError> {
    let threads = parse_threads(std::env::var(THREADS_ENV).ok().as_deref())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| HarnessError::Spec(format!("cannot start worker pool: {e}")))
}

/// Advances the agents of one round in parallel on the current pool.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonAgents;

impl AgentExecutor for RayonAgents {
    fn for_each(&self, slots: &mut [AgentSlot], f: &(dyn Fn(&mut AgentSlot) + Sync)) {
        slots.par_iter_mut().for_each(f);
    }
}
