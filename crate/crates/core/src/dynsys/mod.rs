//! Ground-truth generators for the target systems.

mod ode;
mod pde;
mod trajectory;

pub use ode::{rk4_step, Jacobian3, OdeKind, OdeSystem, State3, BLOW_UP_LIMIT};
pub use pde::{EtdRk4, PdeKind, PdeSystem};
pub use trajectory::TrajectoryBuffer;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Either kind of target system, as selected by an experiment config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DynSystem {
    Ode(OdeSystem),
    Pde(PdeSystem),
}

impl DynSystem {
    pub fn dt(&self) -> f64 {
        match self {
            DynSystem::Ode(s) => s.dt,
            DynSystem::Pde(s) => s.dt,
        }
    }

    /// Real channels per sample.
    pub fn channels(&self) -> usize {
        match self {
            DynSystem::Ode(s) => s.dimension(),
            DynSystem::Pde(s) => s.channels(),
        }
    }

    /// Measurement sites. A cGLE site carries two channels (real and imaginary part).
    pub fn sites(&self) -> usize {
        match self {
            DynSystem::Ode(s) => s.dimension(),
            DynSystem::Pde(s) => s.grid,
        }
    }

    pub fn channels_per_site(&self) -> usize {
        self.channels() / self.sites()
    }

    pub fn default_transient(&self) -> usize {
        match self {
            DynSystem::Ode(_) => 5000,
            DynSystem::Pde(_) => 2000,
        }
    }

    /// Seeded trajectory of `n_steps` samples after `discard` transient steps.
    pub fn generate(&self, seed: u64, n_steps: usize, discard: usize) -> Result<TrajectoryBuffer> {
        match self {
            DynSystem::Ode(s) => s.integrate(&s.initial_state(seed), n_steps, discard),
            DynSystem::Pde(s) => s.integrate(&s.initial_field(seed), n_steps, discard),
        }
    }
}
