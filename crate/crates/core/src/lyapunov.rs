//! Maximum Lyapunov exponents (Benettin) and the transverse exponent of an on-off
//! coupled pair of flows.
//!
//! For flows the tangent vector is integrated with the Jacobian alongside the state.
//! For the PDEs a second trajectory at distance `separation` stands in for the tangent
//! vector. In both cases the perturbation is renormalised every `renorm_interval` steps
//! and the exponent is the mean log growth per unit time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynsys::{rk4_step, DynSystem, EtdRk4, OdeKind, OdeSystem, PdeSystem, State3, BLOW_UP_LIMIT};
use crate::error::{Error, Result};
use crate::sweep::{map_cells, Axis, SweepGrid};

pub const DEFAULT_RENORM_INTERVAL: usize = 10;
pub const DEFAULT_SEPARATION: f64 = 1e-7;
/// Relative disagreement between the two halves of a run that marks it unconverged.
pub const CONVERGENCE_TOLERANCE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovOptions {
    pub n_steps: usize,
    pub renorm_interval: usize,
    /// Steps discarded before measuring; `None` uses the system default.
    pub transient: Option<usize>,
    pub seed: u64,
    /// Initial distance of the companion trajectory (PDEs only).
    pub separation: f64,
}

impl LyapunovOptions {
    pub fn new(n_steps: usize) -> Self {
        Self {
            n_steps,
            renorm_interval: DEFAULT_RENORM_INTERVAL,
            transient: None,
            seed: 0,
            separation: DEFAULT_SEPARATION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Exponent in 1/time.
    pub exponent: f64,
    pub first_half: f64,
    pub second_half: f64,
    /// False when the two halves differ by more than 20 %.
    pub converged: bool,
    pub time: f64,
}

/// Sums log growth factors and keeps the two halves apart.
struct Accumulator {
    dt: f64,
    half_at: usize,
    sums: [f64; 2],
    steps: [usize; 2],
}

impl Accumulator {
    fn new(dt: f64, n_steps: usize) -> Self {
        Self { dt, half_at: n_steps / 2, sums: [0.0; 2], steps: [0; 2] }
    }

    /// Records growth by `factor` over the `n` steps ending at `step`.
    fn add(&mut self, step: usize, n: usize, factor: f64) {
        let h = usize::from(step > self.half_at);
        self.sums[h] += factor.ln();
        self.steps[h] += n;
    }

    fn finish(&self) -> LyapunovEstimate {
        let rate = |s: f64, n: usize| if n == 0 { 0.0 } else { s / (n as f64 * self.dt) };
        let total = self.steps[0] + self.steps[1];
        let exponent = rate(self.sums[0] + self.sums[1], total);
        let first_half = rate(self.sums[0], self.steps[0]);
        let second_half = rate(self.sums[1], self.steps[1]);
        let converged = (first_half - second_half).abs() <= CONVERGENCE_TOLERANCE * exponent.abs();
        LyapunovEstimate { exponent, first_half, second_half, converged, time: total as f64 * self.dt }
    }
}

/// Maximum Lyapunov exponent with default options apart from length and renormalisation.
pub fn max_lyapunov(system: &DynSystem, n_steps: usize, renorm_interval: usize) -> Result<LyapunovEstimate> {
    max_lyapunov_with(system, &LyapunovOptions { renorm_interval, ..LyapunovOptions::new(n_steps) })
}

pub fn max_lyapunov_with(system: &DynSystem, opts: &LyapunovOptions) -> Result<LyapunovEstimate> {
    if opts.n_steps == 0 || opts.renorm_interval == 0 {
        return Err(Error::InvalidParameter("n_steps and renorm_interval must be positive".into()));
    }
    let transient = opts.transient.unwrap_or_else(|| system.default_transient());
    match system {
        DynSystem::Ode(s) => {
            let x0 = s.integrate(&s.initial_state(opts.seed), 1, transient)?;
            let coupling = OnOffCoupling::uncoupled(s.dt);
            tangent_exponent(s, x0.row(0).try_into().expect("three channels"), &coupling, opts)
        }
        DynSystem::Pde(s) => pde_exponent(s, transient, opts),
    }
}

/// Coupling switched on for the first `active` of every `period` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnOffCoupling {
    /// Continuous-time strength ε (1/time).
    pub epsilon: f64,
    pub period: usize,
    pub active: usize,
    pub dt: f64,
    /// Variables that receive `-ε(t) δ`.
    pub mask: [bool; 3],
}

impl OnOffCoupling {
    /// `ε = c / Δt`, which reproduces a discrete coupling `c` applied once per step.
    pub fn from_discrete(c: f64, period: usize, active: usize, dt: f64, mask: [bool; 3]) -> Self {
        Self { epsilon: c / dt, period, active, dt, mask }
    }

    pub fn uncoupled(dt: f64) -> Self {
        Self { epsilon: 0.0, period: 1, active: 1, dt, mask: [false; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.active < 1 || self.active > self.period || !(self.dt > 0.0) || !(self.epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= T0 <= T, dt > 0, epsilon >= 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// ε(t) during output step `step`, i.e. on `[step Δt, (step + 1) Δt)`.
    pub fn strength(&self, step: usize) -> f64 {
        if step % self.period < self.active {
            self.epsilon
        } else {
            0.0
        }
    }
}

/// Integrates the flow and the variational system `δ' = J δ − ε(t) P δ` together.
fn tangent_exponent(
    sys: &OdeSystem,
    x0: State3,
    coupling: &OnOffCoupling,
    opts: &LyapunovOptions,
) -> Result<LyapunovEstimate> {
    let kind = sys.kind;
    let h = sys.dt / sys.substeps as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7a9e);
    let mut z = [0.0; 6];
    z[..3].copy_from_slice(&x0);
    for v in &mut z[3..] {
        *v = rng.random_range(-1.0..1.0);
    }
    normalise(&mut z[3..]);
    let mut acc = Accumulator::new(sys.dt, opts.n_steps);
    let mut since = 0;
    for step in 0..opts.n_steps {
        let eps = coupling.strength(step);
        let rhs = |z: &[f64; 6]| variational_rhs(kind, z, eps, &coupling.mask);
        for _ in 0..sys.substeps {
            z = rk4_step(rhs, &z, h);
        }
        if z[..3].iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP_LIMIT) {
            return Err(Error::BlowUp { step });
        }
        since += 1;
        if since == opts.renorm_interval || step + 1 == opts.n_steps {
            let n = norm(&z[3..]);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::BlowUp { step });
            }
            acc.add(step, since, n);
            z[3..].iter_mut().for_each(|v| *v /= n);
            since = 0;
        }
    }
    Ok(acc.finish())
}

fn variational_rhs(kind: OdeKind, z: &[f64; 6], eps: f64, mask: &[bool; 3]) -> [f64; 6] {
    let x: State3 = [z[0], z[1], z[2]];
    let f = kind.rhs(&x);
    let j = kind.jacobian(&x);
    let mut out = [f[0], f[1], f[2], 0.0, 0.0, 0.0];
    for r in 0..3 {
        let mut s = j[r][0] * z[3] + j[r][1] * z[4] + j[r][2] * z[5];
        if mask[r] {
            s -= eps * z[3 + r];
        }
        out[3 + r] = s;
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalise(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

fn spectral_norm(v: &[Complex64], grid: usize) -> f64 {
    // Physical l2 norm of the field, by Parseval.
    (v.iter().map(|z| z.norm_sqr()).sum::<f64>() / grid as f64).sqrt()
}

fn pde_exponent(sys: &PdeSystem, transient: usize, opts: &LyapunovOptions) -> Result<LyapunovEstimate> {
    sys.validate()?;
    let mut solver = EtdRk4::new(sys);
    let mut a = solver.to_spectral(&sys.initial_field(opts.seed));
    for step in 0..transient {
        solver.step(&mut a);
        check_spectral(&a, step)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7a9e);
    let kick: Vec<Complex64> = (0..sys.grid)
        .map(|_| {
            let re = rng.random_range(-1.0..1.0);
            let im = if sys.is_complex() { rng.random_range(-1.0..1.0) } else { 0.0 };
            Complex64::new(re, im)
        })
        .collect();
    let mut d = solver.to_spectral(&kick);
    let scale = opts.separation / spectral_norm(&d, sys.grid);
    d.iter_mut().for_each(|z| *z *= scale);
    let mut b: Vec<Complex64> = a.iter().zip(&d).map(|(x, y)| x + y).collect();

    let mut acc = Accumulator::new(sys.dt, opts.n_steps);
    let mut since = 0;
    for step in 0..opts.n_steps {
        solver.step(&mut a);
        solver.step(&mut b);
        check_spectral(&a, step)?;
        since += 1;
        if since == opts.renorm_interval || step + 1 == opts.n_steps {
            let diff: Vec<Complex64> = b.iter().zip(&a).map(|(y, x)| y - x).collect();
            let dist = spectral_norm(&diff, sys.grid);
            if !(dist > 0.0 && dist.is_finite()) {
                return Err(Error::BlowUp { step });
            }
            acc.add(step, since, dist / opts.separation);
            let f = opts.separation / dist;
            for ((y, x), dz) in b.iter_mut().zip(&a).zip(&diff) {
                *y = x + dz * f;
            }
            since = 0;
        }
    }
    Ok(acc.finish())
}

fn check_spectral(v: &[Complex64], step: usize) -> Result<()> {
    let bound = BLOW_UP_LIMIT * v.len() as f64;
    if v.iter().any(|z| !(z.norm() <= bound)) {
        Err(Error::BlowUp { step })
    } else {
        Ok(())
    }
}

/// Largest transverse exponent of the synchronisation manifold of a drive flow and its
/// copy coupled through `coupling`. Negative means the copy locks onto the drive.
pub fn transverse_lyapunov(system: &OdeSystem, coupling: &OnOffCoupling, opts: &LyapunovOptions) -> Result<LyapunovEstimate> {
    coupling.validate()?;
    if (coupling.dt - system.dt).abs() > 1e-12 * system.dt {
        return Err(Error::InvalidParameter("coupling dt differs from the system step".into()));
    }
    let transient = opts.transient.unwrap_or(5000);
    let x0 = system.integrate(&system.initial_state(opts.seed), 1, transient)?;
    tangent_exponent(system, x0.row(0).try_into().expect("three channels"), coupling, opts)
}

/// Directly integrates the drive `x' = f(x)` and the response
/// `y' = f(y) − ε(t) P (y − x)`; returns `‖y − x‖` after every step.
pub fn simulate_coupled_pair(
    system: &OdeSystem,
    coupling: &OnOffCoupling,
    x0: State3,
    y0: State3,
    n_steps: usize,
) -> Result<Vec<f64>> {
    coupling.validate()?;
    let kind = system.kind;
    let h = system.dt / system.substeps as f64;
    let mut z = [x0[0], x0[1], x0[2], y0[0], y0[1], y0[2]];
    let mut out = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let eps = coupling.strength(step);
        let rhs = |z: &[f64; 6]| {
            let x = kind.rhs(&[z[0], z[1], z[2]]);
            let y = kind.rhs(&[z[3], z[4], z[5]]);
            let mut o = [x[0], x[1], x[2], y[0], y[1], y[2]];
            for r in 0..3 {
                if coupling.mask[r] {
                    o[3 + r] -= eps * (z[3 + r] - z[r]);
                }
            }
            o
        };
        for _ in 0..system.substeps {
            z = rk4_step(rhs, &z, h);
        }
        if z.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP_LIMIT) {
            return Err(Error::BlowUp { step });
        }
        out.push(((z[3] - z[0]).powi(2) + (z[4] - z[1]).powi(2) + (z[5] - z[2]).powi(2)).sqrt());
    }
    Ok(out)
}

/// Transverse exponent over a grid of `active` (x axis) by `period` (y axis) with
/// `ε = c / Δt`. Cells with `active > period` are masked; unconverged cells are flagged.
/// Every cell uses the same seed, so results do not depend on the worker count.
pub fn stability_map(
    system: &OdeSystem,
    c: f64,
    active: &[usize],
    period: &[usize],
    mask: [bool; 3],
    opts: &LyapunovOptions,
    workers: usize,
) -> Result<SweepGrid> {
    let mut grid = SweepGrid::new(
        "transverse_lyapunov",
        Axis::new("T0", active.iter().map(|&v| v as f64).collect()),
        Axis::new("T", period.iter().map(|&v| v as f64).collect()),
    );
    let coords: Vec<(usize, usize)> = grid.coordinates().collect();
    let results = map_cells(coords.len(), workers, || (), |_, k| {
        let (ix, iy) = coords[k];
        if active[ix] > period[iy] {
            return Ok(None);
        }
        let coupling = OnOffCoupling::from_discrete(c, period[iy], active[ix], system.dt, mask);
        transverse_lyapunov(system, &coupling, opts).map(Some)
    });
    for (k, r) in results.into_iter().enumerate() {
        if let Some(est) = r? {
            grid.cells[k] = Some(est.exponent);
            grid.flagged[k] = !est.converged;
        }
    }
    grid.metadata.insert("coupling".into(), c.into());
    grid.metadata.insert("epsilon".into(), (c / system.dt).into());
    grid.metadata.insert("dt".into(), system.dt.into());
    grid.metadata.insert("mask".into(), serde_json::to_value(mask)?);
    grid.metadata.insert("n_steps".into(), opts.n_steps.into());
    grid.metadata.insert("seed".into(), opts.seed.into());
    grid.metadata.insert("masked".into(), "null in JSON, empty field in CSV: T0 > T".into());
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_flag_unconverged_runs() {
        let mut acc = Accumulator::new(1.0, 10);
        acc.add(2, 5, 1f64.exp());
        acc.add(9, 5, 3f64.exp());
        let est = acc.finish();
        assert!((est.exponent - 0.4).abs() < 1e-12);
        assert!(!est.converged);
    }

    #[test]
    fn coupling_strength_follows_the_window() {
        let c = OnOffCoupling::from_discrete(0.8, 50, 2, 0.05, [false, true, false]);
        assert!((c.epsilon - 16.0).abs() < 1e-12);
        assert_eq!(c.strength(0), c.epsilon);
        assert_eq!(c.strength(1), c.epsilon);
        assert_eq!(c.strength(2), 0.0);
        assert_eq!(c.strength(50), c.epsilon);
        assert!(OnOffCoupling::from_discrete(0.8, 5, 6, 0.05, [true; 3]).validate().is_err());
    }

    #[test]
    fn continuous_strong_coupling_synchronises() {
        let sys = OdeSystem::new(OdeKind::Rossler);
        let coupling = OnOffCoupling::from_discrete(0.5, 1, 1, sys.dt, [false, true, false]);
        let est = transverse_lyapunov(&sys, &coupling, &LyapunovOptions::new(40_000)).unwrap();
        assert!(est.exponent < 0.0, "{est:?}");
        let x0 = sys.integrate(&sys.initial_state(1), 1, 5000).unwrap();
        let x0: State3 = x0.row(0).try_into().unwrap();
        let y0 = [x0[0] + 1e-3, x0[1] - 1e-3, x0[2]];
        let d = simulate_coupled_pair(&sys, &coupling, x0, y0, 4000).unwrap();
        assert!(d[3999] < 1e-3 * d[0]);
    }

    #[test]
    fn zero_coupling_gives_the_free_exponent() {
        let sys = OdeSystem::new(OdeKind::Lorenz);
        let free = max_lyapunov(&DynSystem::Ode(sys), 200_000, 10).unwrap();
        let coupling = OnOffCoupling::from_discrete(0.0, 10, 3, sys.dt, [true; 3]);
        let mut opts = LyapunovOptions::new(200_000);
        opts.transient = Some(5000);
        let t = transverse_lyapunov(&sys, &coupling, &opts).unwrap();
        assert!((t.exponent - free.exponent).abs() < 0.05 * free.exponent);
    }

    #[test]
    fn masked_cells_in_stability_map() {
        let sys = OdeSystem::new(OdeKind::Rossler);
        let g = stability_map(&sys, 0.8, &[1, 3], &[2], [false, true, false], &LyapunovOptions::new(2000), 1)
            .unwrap();
        assert!(g.get(0, 0).is_some());
        assert!(g.get(1, 0).is_none());
    }
}
