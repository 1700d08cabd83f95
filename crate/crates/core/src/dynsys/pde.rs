//! Pseudospectral ETDRK4 integration of the Kuramoto-Sivashinsky and complex
//! Ginzburg-Landau equations on periodic domains.
//!
//! Both equations are written as `û_t = L û + N(u)` with a diagonal linear operator in
//! Fourier space. The exponential integrator treats `L` exactly and the nonlinear term
//! with the fourth-order scheme of Cox and Matthews; the phi-function coefficients are
//! evaluated by a contour-integral average to avoid cancellation near `L = 0`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::ode::BLOW_UP_LIMIT;
use super::trajectory::TrajectoryBuffer;
use crate::error::{Error, Result};

const CONTOUR_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PdeKind {
    /// `y_t + y y_x + y_xx + y_xxxx = 0`
    Kse,
    /// `A_t = (1 + iα) A_xx + A - (1 + iβ)|A|² A`
    Cgle { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeSystem {
    pub kind: PdeKind,
    /// Domain length.
    pub length: f64,
    /// Number of grid points (power of two).
    pub grid: usize,
    pub dt: f64,
    /// When false the nonlinear term is dropped, leaving the exactly solvable linear flow.
    #[serde(default = "default_true")]
    pub nonlinear: bool,
}

fn default_true() -> bool {
    true
}

impl PdeSystem {
    pub fn new(kind: PdeKind, length: f64, grid: usize, dt: f64) -> Result<Self> {
        let sys = Self { kind, length, grid, dt, nonlinear: true };
        sys.validate()?;
        Ok(sys)
    }

    /// L = 22, M = 64, Δt = 0.25.
    pub fn kse_default() -> Self {
        Self { kind: PdeKind::Kse, length: 22.0, grid: 64, dt: 0.25, nonlinear: true }
    }

    /// L = 18, α = 2, β = -2, M = 32, Δt = 0.07.
    pub fn cgle_default() -> Self {
        Self {
            kind: PdeKind::Cgle { alpha: 2.0, beta: -2.0 },
            length: 18.0,
            grid: 32,
            dt: 0.07,
            nonlinear: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.grid.is_power_of_two() || self.grid < 4 {
            return Err(Error::GridNotPowerOfTwo(self.grid));
        }
        if !(self.length > 0.0 && self.dt > 0.0) {
            return Err(Error::InvalidParameter("length and dt must be positive".into()));
        }
        Ok(())
    }

    pub fn is_complex(&self) -> bool {
        matches!(self.kind, PdeKind::Cgle { .. })
    }

    /// Number of real channels per sample: `M` for KSE, `2M` (interleaved re/im) for cGLE.
    pub fn channels(&self) -> usize {
        if self.is_complex() {
            2 * self.grid
        } else {
            self.grid
        }
    }

    pub fn channel_names(&self) -> Vec<String> {
        if self.is_complex() {
            (0..self.grid).flat_map(|j| [format!("re{j}"), format!("im{j}")]).collect()
        } else {
            (0..self.grid).map(|j| format!("y{j}")).collect()
        }
    }

    /// Grid point `j` sits at `x_j = j L / M`.
    pub fn grid_points(&self) -> Vec<f64> {
        let dx = self.length / self.grid as f64;
        (0..self.grid).map(|j| j as f64 * dx).collect()
    }

    /// Seeded initial field: a low-mode cosine base plus small random noise.
    pub fn initial_field(&self, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = 2.0 * PI / self.length;
        self.grid_points()
            .into_iter()
            .map(|x| {
                let noise = rng.random_range(-0.01..0.01);
                match self.kind {
                    PdeKind::Kse => Complex64::new(
                        (q * x).cos() * (1.0 + (q * x).sin()) + noise,
                        0.0,
                    ),
                    PdeKind::Cgle { .. } => Complex64::new(
                        0.5 * (q * x).cos() + noise,
                        0.5 * (2.0 * q * x).sin() + rng.random_range(-0.01..0.01),
                    ),
                }
            })
            .collect()
    }

    pub fn integrate_kse(&self, y0: &[f64], n_steps: usize, discard: usize) -> Result<TrajectoryBuffer> {
        if self.is_complex() {
            return Err(Error::InvalidParameter("integrate_kse needs a KSE system".into()));
        }
        let field: Vec<Complex64> = y0.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.integrate(&field, n_steps, discard)
    }

    pub fn integrate_cgle(&self, a0: &[Complex64], n_steps: usize, discard: usize) -> Result<TrajectoryBuffer> {
        if !self.is_complex() {
            return Err(Error::InvalidParameter("integrate_cgle needs a cGLE system".into()));
        }
        self.integrate(a0, n_steps, discard)
    }

    /// Generic entry point: real fields are passed with zero imaginary part.
    pub fn integrate(&self, u0: &[Complex64], n_steps: usize, discard: usize) -> Result<TrajectoryBuffer> {
        self.validate()?;
        if u0.len() != self.grid {
            return Err(Error::DimensionMismatch { expected: self.grid, got: u0.len() });
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be positive".into()));
        }
        let mut solver = EtdRk4::new(self);
        let mut spec = solver.to_spectral(u0);
        for step in 0..discard {
            solver.step(&mut spec);
            solver.check(&spec, step + 1)?;
        }
        let width = self.channels();
        let mut data = Vec::with_capacity(n_steps * width);
        let mut physical = vec![Complex64::default(); self.grid];
        for step in 0..n_steps {
            if step > 0 {
                solver.step(&mut spec);
            }
            solver.to_physical(&spec, &mut physical);
            if physical.iter().any(|z| !z.re.is_finite() || z.norm() > BLOW_UP_LIMIT) {
                return Err(Error::BlowUp { step: discard + step });
            }
            if self.is_complex() {
                data.extend(physical.iter().flat_map(|z| [z.re, z.im]));
            } else {
                data.extend(physical.iter().map(|z| z.re));
            }
        }
        TrajectoryBuffer::new(data, width, self.dt, self.channel_names())
    }
}

/// Precomputed ETDRK4 stepper for one [`PdeSystem`].
pub struct EtdRk4 {
    system: PdeSystem,
    /// Wavenumbers `k_n = 2πn/L` in FFT order.
    k: Vec<f64>,
    lin: Vec<Complex64>,
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
    dealias: Vec<bool>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    work: Vec<Complex64>,
}

impl EtdRk4 {
    pub fn new(system: &PdeSystem) -> Self {
        let m = system.grid;
        let h = system.dt;
        let k: Vec<f64> = (0..m)
            .map(|n| {
                let n = if n < m / 2 { n as f64 } else { n as f64 - m as f64 };
                2.0 * PI * n / system.length
            })
            .collect();
        let lin: Vec<Complex64> = k
            .iter()
            .map(|&k| match system.kind {
                PdeKind::Kse => Complex64::new(k * k - k.powi(4), 0.0),
                PdeKind::Cgle { alpha, .. } => {
                    Complex64::new(1.0, 0.0) - Complex64::new(1.0, alpha) * (k * k)
                }
            })
            .collect();
        // 2/3 rule: keep |n| <= M/3.
        let dealias = (0..m)
            .map(|n| {
                let n = if n < m / 2 { n } else { m - n };
                n <= m / 3
            })
            .collect();

        let roots: Vec<Complex64> = (0..CONTOUR_POINTS)
            .map(|j| Complex64::from_polar(1.0, PI * (j as f64 + 0.5) * 2.0 / CONTOUR_POINTS as f64))
            .collect();
        let mut e = Vec::with_capacity(m);
        let mut e2 = Vec::with_capacity(m);
        let mut q = Vec::with_capacity(m);
        let mut f1 = Vec::with_capacity(m);
        let mut f2 = Vec::with_capacity(m);
        let mut f3 = Vec::with_capacity(m);
        for &l in &lin {
            let hl = l * h;
            e.push(hl.exp());
            e2.push((hl * 0.5).exp());
            let (mut sq, mut s1, mut s2, mut s3) = Default::default();
            for &r in &roots {
                let z: Complex64 = hl + r;
                let ez = z.exp();
                let z3 = z * z * z;
                sq += ((z * 0.5).exp() - 1.0) / z;
                s1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                s2 += (2.0 + z + ez * (z - 2.0)) / z3;
                s3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            let norm = h / CONTOUR_POINTS as f64;
            let fix = |s: Complex64| {
                let v = s * norm;
                // Real operators give real coefficients; drop contour round-off.
                if l.im == 0.0 {
                    Complex64::new(v.re, 0.0)
                } else {
                    v
                }
            };
            q.push(fix(sq));
            f1.push(fix(s1));
            f2.push(fix(s2));
            f3.push(fix(s3));
        }

        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self {
            system: *system,
            k,
            lin,
            e,
            e2,
            q,
            f1,
            f2,
            f3,
            dealias,
            fwd,
            inv,
            scratch: vec![Complex64::default(); scratch_len],
            work: vec![Complex64::default(); m],
        }
    }

    pub fn linear_operator(&self) -> &[Complex64] {
        &self.lin
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    pub fn to_spectral(&mut self, u: &[Complex64]) -> Vec<Complex64> {
        let mut out = u.to_vec();
        self.fwd.process_with_scratch(&mut out, &mut self.scratch);
        self.enforce_real(&mut out);
        out
    }

    /// Projects a real field's spectrum onto Hermitian symmetry. Without this the
    /// round-off anti-Hermitian part is invisible to the nonlinearity and grows at the
    /// linear rate of the unstable modes until it swamps the solution.
    fn enforce_real(&self, v: &mut [Complex64]) {
        if self.system.is_complex() {
            return;
        }
        let m = v.len();
        v[0].im = 0.0;
        v[m / 2].im = 0.0;
        for n in 1..m / 2 {
            let avg = (v[n] + v[m - n].conj()) * 0.5;
            v[n] = avg;
            v[m - n] = avg.conj();
        }
    }

    pub fn to_physical(&mut self, spec: &[Complex64], out: &mut [Complex64]) {
        out.copy_from_slice(spec);
        self.inv.process_with_scratch(out, &mut self.scratch);
        let scale = 1.0 / self.system.grid as f64;
        for z in out.iter_mut() {
            *z *= scale;
        }
        if !self.system.is_complex() {
            for z in out.iter_mut() {
                z.im = 0.0;
            }
        }
    }

    fn nonlinear(&mut self, spec: &[Complex64], out: &mut [Complex64]) {
        if !self.system.nonlinear {
            out.iter_mut().for_each(|z| *z = Complex64::default());
            return;
        }
        let mut work = std::mem::take(&mut self.work);
        self.to_physical(spec, &mut work);
        match self.system.kind {
            PdeKind::Kse => {
                for z in work.iter_mut() {
                    *z = Complex64::new(z.re * z.re, 0.0);
                }
                self.fwd.process_with_scratch(&mut work, &mut self.scratch);
                // -(1/2) d/dx (y²)
                for ((o, w), &k) in out.iter_mut().zip(&work).zip(&self.k) {
                    *o = Complex64::new(0.0, -0.5 * k) * w;
                }
            }
            PdeKind::Cgle { beta, .. } => {
                let coef = Complex64::new(-1.0, -beta);
                for z in work.iter_mut() {
                    *z = coef * z.norm_sqr() * *z;
                }
                self.fwd.process_with_scratch(&mut work, &mut self.scratch);
                out.copy_from_slice(&work);
            }
        }
        for (o, &keep) in out.iter_mut().zip(&self.dealias) {
            if !keep {
                *o = Complex64::default();
            }
        }
        self.work = work;
    }

    /// One ETDRK4 step of size Δt applied in place to a spectral state.
    pub fn step(&mut self, v: &mut [Complex64]) {
        let m = v.len();
        let zero = Complex64::default();
        let mut nv = vec![zero; m];
        let mut na = vec![zero; m];
        let mut nb = vec![zero; m];
        let mut nc = vec![zero; m];
        let mut a = vec![zero; m];
        let mut b = vec![zero; m];
        let mut c = vec![zero; m];

        self.nonlinear(v, &mut nv);
        for i in 0..m {
            a[i] = self.e2[i] * v[i] + self.q[i] * nv[i];
        }
        self.nonlinear(&a, &mut na);
        for i in 0..m {
            b[i] = self.e2[i] * v[i] + self.q[i] * na[i];
        }
        self.nonlinear(&b, &mut nb);
        for i in 0..m {
            c[i] = self.e2[i] * a[i] + self.q[i] * (nb[i] * 2.0 - nv[i]);
        }
        self.nonlinear(&c, &mut nc);
        for i in 0..m {
            v[i] = self.e[i] * v[i]
                + nv[i] * self.f1[i]
                + (na[i] + nb[i]) * 2.0 * self.f2[i]
                + nc[i] * self.f3[i];
        }
        self.enforce_real(v);
    }

    fn check(&self, spec: &[Complex64], step: usize) -> Result<()> {
        // Parseval bound on the physical amplitude.
        let bound = BLOW_UP_LIMIT * self.system.grid as f64;
        if spec.iter().any(|z| !z.re.is_finite() || !z.im.is_finite() || z.norm() > bound) {
            Err(Error::BlowUp { step })
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_power_of_two_grid() {
        let err = PdeSystem::new(PdeKind::Kse, 22.0, 60, 0.25).unwrap_err();
        assert!(matches!(err, Error::GridNotPowerOfTwo(60)));
    }

    #[test]
    fn zero_field_is_a_fixed_point() {
        let kse = PdeSystem::kse_default();
        let traj = kse.integrate_kse(&[0.0; 64], 50, 0).unwrap();
        assert!(traj.as_slice().iter().all(|&v| v == 0.0));
        let cgle = PdeSystem::cgle_default();
        let traj = cgle.integrate_cgle(&[Complex64::default(); 32], 50, 0).unwrap();
        assert!(traj.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(traj.dim(), 64);
    }

    #[test]
    fn linear_single_mode_follows_dispersion_relation() {
        let mut sys = PdeSystem::kse_default();
        sys.nonlinear = false;
        let q = 2.0 * PI / sys.length;
        for mode in 1..4 {
            let k = q * mode as f64;
            let amp = 1e-3;
            let y0: Vec<f64> =
                sys.grid_points().iter().map(|&x| amp * (k * x).cos()).collect();
            let steps = 40;
            let traj = sys.integrate_kse(&y0, steps + 1, 0).unwrap();
            let growth = ((k * k - k.powi(4)) * sys.dt * steps as f64).exp();
            for (j, &x) in sys.grid_points().iter().enumerate() {
                let exact = amp * growth * (k * x).cos();
                let got = traj.row(steps)[j];
                assert!((got - exact).abs() <= 1e-8 * amp * growth.max(1.0), "mode {mode}");
            }
        }
    }

    #[test]
    fn linear_step_is_the_exact_exponential_propagator() {
        let mut sys = PdeSystem::kse_default();
        sys.nonlinear = false;
        let mut solver = EtdRk4::new(&sys);
        let u0 = sys.initial_field(4);
        let mut v = solver.to_spectral(&u0);
        let before = v.clone();
        solver.step(&mut v);
        for ((after, b), l) in v.iter().zip(&before).zip(solver.linear_operator()) {
            let exact = (l * sys.dt).exp() * b;
            let scale = exact.norm().max(1e-300);
            assert!((after - exact).norm() / scale < 1e-8 || (after - exact).norm() < 1e-300);
        }
    }

    #[test]
    fn cgle_plane_wave_converges_at_fourth_order() {
        // Exact solution A = exp(-iβt) for a uniform unit field.
        let err = |dt: f64| {
            let mut sys = PdeSystem::cgle_default();
            sys.dt = dt;
            let n = (14.0 / dt).round() as usize;
            let traj = sys.integrate_cgle(&vec![Complex64::new(1.0, 0.0); sys.grid], n + 1, 0).unwrap();
            let exact = Complex64::from_polar(1.0, 2.0 * n as f64 * dt);
            traj.row(n)
                .chunks_exact(2)
                .map(|s| (Complex64::new(s[0], s[1]) - exact).norm())
                .fold(0.0f64, f64::max)
        };
        let (coarse, fine) = (err(0.07), err(0.035));
        assert!(coarse < 1e-3, "{coarse}");
        let order = (coarse / fine).log2();
        assert!((3.5..4.5).contains(&order), "order {order}");
    }

    #[test]
    fn kse_from_seeded_field_stays_bounded() {
        let sys = PdeSystem::kse_default();
        let traj = sys.integrate(&sys.initial_field(1), 2000, 0).unwrap();
        let max = traj.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max > 0.5 && max < 10.0, "max {max}");
    }
}
