//! Echo-state reservoir computers for chaotic time series, with closed-loop prediction
//! that is kept on track by sparse injections of the true state.
//!
//! The crate is organised around the pipeline it implements:
//!
//! - [`dynsys`] generates ground-truth trajectories (Rössler, Lorenz, Hindmarsh-Rose,
//!   food web, Kuramoto-Sivashinsky, complex Ginzburg-Landau).
//! - [`reservoir`] builds, trains and runs the echo-state network.
//! - [`updating`] decides when and where true data is coupled into the closed loop.
//! - [`metrics`] turns predictions into error series, δe and horizons.
//! - [`lyapunov`] estimates maximum and transverse Lyapunov exponents.
//! - [`sweep`] runs update-schedule grids and exports heatmaps.
//! - [`experiment`] ties everything to a reproducible config file.

pub mod dynsys;
pub mod error;
pub mod experiment;
mod io;
pub mod linalg;
pub mod lyapunov;
pub mod metrics;
pub mod reservoir;
pub mod sweep;
pub mod updating;

pub use error::{Error, Result};
