use serde::{Deserialize, Serialize};

use super::{readout_features_into, ReservoirModel};
use crate::dynsys::TrajectoryBuffer;
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;

/// Time samples accumulated per Gram update.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Samples that entered the regression.
    pub n_train_steps: usize,
    pub washout: usize,
    /// Root-mean-square one-step residual per output channel.
    pub residual_rms: Vec<f64>,
    pub condition_estimate: f64,
}

impl ReservoirModel {
    /// Fits `W_out` by ridge regression on a teacher-forced pass over `traj`.
    ///
    /// The reservoir starts from zero and is driven by `u(t)`; the feature vector of
    /// `r(t+Δt)` is regressed on `u(t+Δt)`. The first `washout` pairs are skipped. The
    /// normal equations `(G Gᵀ + η I) W_outᵀ = G Uᵀ` are solved by Cholesky.
    pub fn train(&mut self, traj: &TrajectoryBuffer, washout: usize) -> Result<TrainReport> {
        let n = self.params.size;
        let d_in = self.params.inputs;
        let d_out = self.params.outputs;
        if traj.dim() != d_in || d_out != d_in {
            return Err(Error::DimensionMismatch { expected: d_in, got: traj.dim() });
        }
        if traj.len() <= washout + 1 {
            return Err(Error::InvalidParameter(format!(
                "training data has {} rows, needs more than washout + 1 = {}",
                traj.len(),
                washout + 1
            )));
        }

        let mut gram = SymMatrix::zeros(n);
        // G Uᵀ, row-major n × d_out.
        let mut cross = vec![0.0; n * d_out];
        let mut feats = Vec::with_capacity(CHUNK * n);
        let mut targets = Vec::with_capacity(CHUNK * d_out);
        let mut row = vec![0.0; n];

        let flush = |feats: &mut Vec<f64>, targets: &mut Vec<f64>, gram: &mut SymMatrix, cross: &mut [f64]| {
            let rows = feats.len() / n;
            if rows == 0 {
                return;
            }
            gram.add_gram(feats, rows);
            // cross += Fᵀ U
            unsafe {
                matrixmultiply::dgemm(
                    n,
                    rows,
                    d_out,
                    1.0,
                    feats.as_ptr(),
                    1,
                    n as isize,
                    targets.as_ptr(),
                    d_out as isize,
                    1,
                    1.0,
                    cross.as_mut_ptr(),
                    d_out as isize,
                    1,
                );
            }
            feats.clear();
            targets.clear();
        };

        self.reset_state();
        let samples = traj.len() - 1 - washout;
        for t in 0..traj.len() - 1 {
            self.drive(traj.row(t))?;
            if t < washout {
                continue;
            }
            readout_features_into(&self.state, &mut row);
            feats.extend_from_slice(&row);
            targets.extend_from_slice(traj.row(t + 1));
            if feats.len() == CHUNK * n {
                flush(&mut feats, &mut targets, &mut gram, &mut cross);
            }
        }
        flush(&mut feats, &mut targets, &mut gram, &mut cross);

        gram.add_diagonal(self.params.eta);
        let chol = gram.cholesky().ok_or(Error::SolveFailed { condition: f64::INFINITY })?;
        let condition = chol.condition_estimate();
        chol.solve_in_place(&mut cross, d_out);
        if cross.iter().any(|x| !x.is_finite()) {
            return Err(Error::SolveFailed { condition });
        }
        let mut w_out = vec![0.0; d_out * n];
        for i in 0..n {
            for o in 0..d_out {
                w_out[o * n + i] = cross[i * d_out + o];
            }
        }
        self.w_out = w_out;

        // Second pass for the residual; avoids the cancellation of the quadratic-form shortcut.
        let mut sq = vec![0.0; d_out];
        let mut out = vec![0.0; d_out];
        self.reset_state();
        for t in 0..traj.len() - 1 {
            self.drive(traj.row(t))?;
            if t < washout {
                continue;
            }
            self.output_into(&mut row, &mut out)?;
            for ((s, o), u) in sq.iter_mut().zip(&out).zip(traj.row(t + 1)) {
                *s += (o - u).powi(2);
            }
        }
        let report = TrainReport {
            n_train_steps: samples,
            washout,
            residual_rms: sq.iter().map(|s| (s / samples as f64).sqrt()).collect(),
            condition_estimate: condition,
        };
        if report.residual_rms.iter().any(|r| !r.is_finite()) {
            return Err(Error::SolveFailed { condition });
        }
        self.report = Some(report.clone());
        Ok(report)
    }

    /// Regularised training objective `Σ‖u − W_out g‖² + η‖W_out‖²_F` for the current
    /// readout, evaluated on a fresh teacher-forced pass.
    pub fn ridge_objective(&mut self, traj: &TrajectoryBuffer, washout: usize) -> Result<f64> {
        let n = self.params.size;
        let d_out = self.params.outputs;
        let mut feat = vec![0.0; n];
        let mut out = vec![0.0; d_out];
        let mut total = 0.0;
        self.reset_state();
        for t in 0..traj.len() - 1 {
            self.drive(traj.row(t))?;
            if t < washout {
                continue;
            }
            self.output_into(&mut feat, &mut out)?;
            total += out.iter().zip(traj.row(t + 1)).map(|(o, u)| (o - u).powi(2)).sum::<f64>();
        }
        Ok(total + self.params.eta * self.w_out.iter().map(|w| w * w).sum::<f64>())
    }

    /// Replaces the readout (row-major `D_out × D_r`).
    pub fn set_w_out(&mut self, w_out: Vec<f64>) -> Result<()> {
        let expected = self.params.outputs * self.params.size;
        if w_out.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: w_out.len() });
        }
        self.w_out = w_out;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{build, Connectivity, InputLayout, ReservoirParams};
    use super::*;
    use crate::dynsys::{OdeKind, OdeSystem};

    fn params(size: usize, eta: f64) -> ReservoirParams {
        ReservoirParams {
            size,
            inputs: 3,
            outputs: 3,
            sigma: 0.2,
            input_layout: InputLayout::Dense,
            connectivity: Connectivity::Density(0.1),
            rho: 0.5,
            eta,
            seed: 3,
        }
    }

    fn lorenz(n: usize) -> TrajectoryBuffer {
        let sys = OdeSystem::new(OdeKind::Lorenz);
        sys.integrate(&sys.initial_state(1), n, 1000).unwrap()
    }

    /// Oracle-side helper: the same normal equations, solved densely with nalgebra.
    fn train_with_separate_targets(
        model: &mut ReservoirModel,
        drive: &TrajectoryBuffer,
        targets: &TrajectoryBuffer,
        washout: usize,
    ) -> Vec<f64> {
        use nalgebra::DMatrix;
        let n = model.params().size;
        let mut g = Vec::new();
        let mut u = Vec::new();
        model.reset_state();
        let mut feat = vec![0.0; n];
        for t in 0..drive.len() - 1 {
            model.drive(drive.row(t)).unwrap();
            if t < washout {
                continue;
            }
            readout_features_into(model.state(), &mut feat);
            g.extend_from_slice(&feat);
            u.extend_from_slice(targets.row(t + 1));
        }
        let rows = g.len() / n;
        let g = DMatrix::from_row_slice(rows, n, &g);
        let u = DMatrix::from_row_slice(rows, 3, &u);
        let lhs = g.transpose() * &g + DMatrix::identity(n, n) * model.params().eta;
        let w = lhs.cholesky().unwrap().solve(&(g.transpose() * &u));
        let residual = &g * &w - &u;
        let mut flat = vec![0.0; 3 * n];
        for i in 0..n {
            for o in 0..3 {
                flat[o * n + i] = w[(i, o)];
            }
        }
        model.set_w_out(flat).unwrap();
        (0..3).map(|o| (residual.column(o).norm_squared() / rows as f64).sqrt()).collect()
    }

    #[test]
    fn train_matches_dense_normal_equations() {
        let data = lorenz(2000);
        let mut model = build(&params(60, 1e-4)).unwrap();
        let report = model.train(&data, 100).unwrap();
        let ours = model.w_out().to_vec();
        let mut oracle = model.clone();
        let residual = train_with_separate_targets(&mut oracle, &data, &data, 100);
        for (a, b) in ours.iter().zip(oracle.w_out()) {
            assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{a} vs {b}");
        }
        for (a, b) in report.residual_rms.iter().zip(&residual) {
            assert!((a - b).abs() < 1e-8 * b.max(1.0));
        }
        assert_eq!(report.n_train_steps, 2000 - 1 - 100);
    }

    #[test]
    fn planted_readout_through_train() {
        // Data generated by an exactly linear readout of the reservoir's own features:
        // the closed loop of a random readout defines a trajectory the regression can fit.
        let size = 30;
        let mut teacher = build(&params(size, 1e-12)).unwrap();
        let mut planted = vec![0.0; 3 * size];
        for (i, w) in planted.iter_mut().enumerate() {
            *w = 0.3 * (((i * 13) % 7) as f64 - 3.0) / 3.0;
        }
        teacher.set_w_out(planted.clone()).unwrap();
        teacher.reset_state();
        let mut v = vec![0.5, -0.2, 0.1];
        let mut rows = v.clone();
        for _ in 0..1500 {
            teacher.drive(&v).unwrap();
            v = teacher.output().unwrap();
            rows.extend_from_slice(&v);
        }
        let traj = TrajectoryBuffer::with_default_channels(rows, 3, 0.1).unwrap();
        let mut student = build(&params(size, 1e-12)).unwrap();
        let report = student.train(&traj, 0).unwrap();
        assert!(report.residual_rms.iter().all(|&r| r < 1e-8), "{:?}", report.residual_rms);
    }

    #[test]
    fn larger_ridge_penalty_shrinks_readout() {
        let data = lorenz(1500);
        let norm = |eta| {
            let mut m = build(&params(50, eta)).unwrap();
            m.train(&data, 100).unwrap();
            m.w_out().iter().map(|w| w * w).sum::<f64>().sqrt()
        };
        assert!(norm(1e6) < norm(1e-4));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = lorenz(1200);
        let mut a = build(&params(50, 1e-5)).unwrap();
        let mut b = build(&params(50, 1e-5)).unwrap();
        a.train(&data, 50).unwrap();
        b.train(&data, 50).unwrap();
        assert_eq!(a.w_out(), b.w_out());
    }

    #[test]
    fn trained_readout_is_a_local_minimum_of_the_objective() {
        let data = lorenz(800);
        let mut m = build(&params(20, 1e-3)).unwrap();
        m.train(&data, 50).unwrap();
        let base = m.ridge_objective(&data, 50).unwrap();
        let w = m.w_out().to_vec();
        for idx in [0, 7, 19, 25, 59] {
            for delta in [1e-4, -1e-4] {
                let mut p = w.clone();
                p[idx] += delta;
                m.set_w_out(p).unwrap();
                let perturbed = m.ridge_objective(&data, 50).unwrap();
                assert!(perturbed >= base * (1.0 - 1e-12), "entry {idx}: {perturbed} < {base}");
            }
        }
    }

    #[test]
    fn too_short_data_is_rejected() {
        let data = lorenz(10);
        let mut m = build(&params(20, 1e-3)).unwrap();
        assert!(m.train(&data, 9).is_err());
    }
}
