//! The four three-variable chaotic flows and a fixed-step RK4 integrator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trajectory::TrajectoryBuffer;
use crate::error::{Error, Result};

pub type State3 = [f64; 3];
pub type Jacobian3 = [[f64; 3]; 3];

/// Magnitude beyond which an integration is declared to have blown up.
pub const BLOW_UP_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeKind {
    Rossler,
    Lorenz,
    HindmarshRose,
    FoodWeb,
}

impl OdeKind {
    pub const ALL: [OdeKind; 4] =
        [OdeKind::Rossler, OdeKind::Lorenz, OdeKind::HindmarshRose, OdeKind::FoodWeb];

    pub fn rhs(self, s: &State3) -> State3 {
        let [x, y, z] = *s;
        match self {
            OdeKind::Rossler => [-y - z, x + 0.2 * y, 0.2 + (x - 9.0) * z],
            OdeKind::Lorenz => [10.0 * (y - x), x * (28.0 - z) - y, x * y - 8.0 / 3.0 * z],
            OdeKind::HindmarshRose => [
                y + 3.0 * x * x - x * x * x - z + 3.2,
                1.0 - 5.0 * x * x - y,
                -0.006 * z + 0.024 * (x + 1.6),
            ],
            OdeKind::FoodWeb => {
                let grazing = 0.2 * x * y / (1.0 + 0.05 * x);
                [x - grazing, -y + grazing - y * z, -10.0 * (z - 0.006) + y * z]
            }
        }
    }

    pub fn jacobian(self, s: &State3) -> Jacobian3 {
        let [x, y, z] = *s;
        match self {
            OdeKind::Rossler => [[0.0, -1.0, -1.0], [1.0, 0.2, 0.0], [z, 0.0, x - 9.0]],
            OdeKind::Lorenz => {
                [[-10.0, 10.0, 0.0], [28.0 - z, -1.0, -x], [y, x, -8.0 / 3.0]]
            }
            OdeKind::HindmarshRose => [
                [6.0 * x - 3.0 * x * x, 1.0, -1.0],
                [-10.0 * x, -1.0, 0.0],
                [0.024, 0.0, -0.006],
            ],
            OdeKind::FoodWeb => {
                let den = 1.0 + 0.05 * x;
                let gx = 0.2 * y / (den * den);
                let gy = 0.2 * x / den;
                [[1.0 - gx, -gy, 0.0], [gx, -1.0 + gy - z, -y], [0.0, z, -10.0 + y]]
            }
        }
    }

    /// Output step sizes used for each system's experiments.
    pub fn default_dt(self) -> f64 {
        match self {
            OdeKind::Rossler => 0.05,
            OdeKind::Lorenz => 0.01,
            OdeKind::HindmarshRose | OdeKind::FoodWeb => 0.1,
        }
    }

    /// Documented point on (or near) the attractor that seeded initial conditions perturb.
    pub fn base_point(self) -> State3 {
        match self {
            OdeKind::Rossler => [1.0, 1.0, 0.1],
            OdeKind::Lorenz => [1.0, 1.0, 1.0],
            OdeKind::HindmarshRose => [-1.0, -5.0, 3.0],
            OdeKind::FoodWeb => [10.0, 5.0, 0.01],
        }
    }

    pub fn channel_names(self) -> [&'static str; 3] {
        ["x", "y", "z"]
    }
}

/// Classical fourth-order Runge-Kutta step of size `h`.
pub fn rk4_step<const N: usize, F>(f: F, x: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let add = |a: &[f64; N], b: &[f64; N], s: f64| -> [f64; N] {
        let mut out = *a;
        for i in 0..N {
            out[i] += s * b[i];
        }
        out
    };
    let k1 = f(x);
    let k2 = f(&add(x, &k1, 0.5 * h));
    let k3 = f(&add(x, &k2, 0.5 * h));
    let k4 = f(&add(x, &k3, h));
    let mut out = *x;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeSystem {
    pub kind: OdeKind,
    pub dt: f64,
    /// RK4 substeps per output step.
    pub substeps: usize,
}

impl OdeSystem {
    pub fn new(kind: OdeKind) -> Self {
        Self { kind, dt: kind.default_dt(), substeps: 5 }
    }

    pub fn with_dt(kind: OdeKind, dt: f64) -> Self {
        Self { kind, dt, substeps: 5 }
    }

    pub const fn dimension(&self) -> usize {
        3
    }

    /// Advances `x` by one output step.
    pub fn step(&self, x: &State3) -> State3 {
        let h = self.dt / self.substeps as f64;
        let mut s = *x;
        for _ in 0..self.substeps {
            s = rk4_step(|v| self.kind.rhs(v), &s, h);
        }
        s
    }

    /// Seeded small perturbation of the system's base point.
    pub fn initial_state(&self, seed: u64) -> State3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = self.kind.base_point();
        let mut s = base;
        for v in s.iter_mut() {
            *v *= 1.0 + rng.random_range(-0.01..0.01);
            *v += rng.random_range(-1e-3..1e-3);
        }
        if self.kind == OdeKind::FoodWeb {
            for (v, b) in s.iter_mut().zip(base) {
                *v = v.abs().max(0.5 * b);
            }
        }
        s
    }

    /// Integrates from `x0`, drops `discard` transient steps and returns the next `n_steps`
    /// states (the first row is the state reached after the transient).
    pub fn integrate(&self, x0: &State3, n_steps: usize, discard: usize) -> Result<TrajectoryBuffer> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be positive".into()));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("initial state is not finite".into()));
        }
        let mut s = *x0;
        for step in 0..discard {
            s = self.step(&s);
            check_state(&s, step + 1)?;
        }
        let mut data = Vec::with_capacity(n_steps * 3);
        data.extend_from_slice(&s);
        for step in 1..n_steps {
            s = self.step(&s);
            check_state(&s, discard + step)?;
            data.extend_from_slice(&s);
        }
        let names = self.kind.channel_names().iter().map(|s| s.to_string()).collect();
        TrajectoryBuffer::new(data, 3, self.dt, names)
    }
}

fn check_state(s: &[f64], step: usize) -> Result<()> {
    if s.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP_LIMIT) {
        Err(Error::BlowUp { step })
    } else {
        Ok(())
    }
}
