//! Prediction-quality measures.
//!
//! The normalised error at step `t` is `e(t) = ‖v(t) − u(t)‖₂ / u_rms`, where `u_rms` is
//! the root-mean-square norm of the true state over the whole evaluation window. δe is
//! the mean of `e` over the window and the horizon is the first time `e` exceeds a
//! tolerance for a run of consecutive steps, measured in Lyapunov times.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynsys::TrajectoryBuffer;
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 0.05;
pub const DEFAULT_CONFIRM: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub e: Vec<f64>,
    pub dt: f64,
    /// Reference maximum Lyapunov exponent (1/time).
    pub lambda_max: f64,
    pub delta_e: f64,
    /// First step of a tolerance breach under the default tolerance, if any.
    pub horizon_steps: Option<usize>,
}

/// Normalised error between a prediction and the truth over the same window.
pub fn error_series(pred: &TrajectoryBuffer, truth: &TrajectoryBuffer, lambda_max: f64) -> Result<ErrorSeries> {
    if pred.dim() != truth.dim() || pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len() * truth.dim(),
            got: pred.len() * pred.dim(),
        });
    }
    if (pred.dt() - truth.dt()).abs() > 1e-12 * truth.dt().abs() {
        return Err(Error::InvalidParameter(format!(
            "step sizes differ: {} vs {}",
            pred.dt(),
            truth.dt()
        )));
    }
    let n = truth.len().max(1) as f64;
    let u_rms = (truth.rows().map(|r| r.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / n).sqrt();
    // An identically zero truth leaves the raw distance.
    let scale = if u_rms > 0.0 { 1.0 / u_rms } else { 1.0 };
    let e: Vec<f64> = pred
        .rows()
        .zip(truth.rows())
        .map(|(v, u)| v.iter().zip(u).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() * scale)
        .collect();
    let delta_e = mean(&e);
    let horizon_steps = breach_step(&e, DEFAULT_TOLERANCE, DEFAULT_CONFIRM);
    Ok(ErrorSeries { e, dt: truth.dt(), lambda_max, delta_e, horizon_steps })
}

fn mean(e: &[f64]) -> f64 {
    if e.is_empty() {
        0.0
    } else {
        e.iter().sum::<f64>() / e.len() as f64
    }
}

/// First step `t` such that `e[t..t+confirm]` all exceed `tol`.
pub fn breach_step(e: &[f64], tol: f64, confirm: usize) -> Option<usize> {
    let confirm = confirm.max(1);
    let mut run = 0;
    for (t, &x) in e.iter().enumerate() {
        if x > tol {
            run += 1;
            if run == confirm {
                return Some(t + 1 - confirm);
            }
        } else {
            run = 0;
        }
    }
    None
}

impl ErrorSeries {
    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    /// Mean error over the first `steps` steps.
    pub fn delta_e_over(&self, steps: usize) -> f64 {
        mean(&self.e[..steps.min(self.e.len())])
    }

    /// Breach time in the system's time units, `+∞` if the tolerance is never breached.
    pub fn horizon_time(&self, tol: f64, confirm: usize) -> f64 {
        breach_step(&self.e, tol, confirm).map_or(f64::INFINITY, |t| t as f64 * self.dt)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,e")?;
        for (i, e) in self.e.iter().enumerate() {
            writeln!(w, "{:?},{e:?}", i as f64 * self.dt)?;
        }
        Ok(())
    }
}

/// Prediction horizon in Lyapunov times (`+∞` sentinel if never exceeded).
pub fn horizon(series: &ErrorSeries, tol: f64, confirm: usize) -> f64 {
    assert!(series.lambda_max > 0.0, "horizon needs a positive Lyapunov exponent");
    series.horizon_time(tol, confirm) * series.lambda_max
}

/// Integration steps per Lyapunov time.
pub fn steps_per_lyapunov_time(lambda_max: f64, dt: f64) -> f64 {
    1.0 / (lambda_max * dt)
}

/// Absolute error per measurement site (rows = time, columns = sites). Sites with two
/// channels report the modulus of the complex difference.
pub fn error_field(pred: &TrajectoryBuffer, truth: &TrajectoryBuffer, channels_per_site: usize) -> Result<Vec<Vec<f64>>> {
    if pred.dim() != truth.dim() || pred.len() != truth.len() || pred.dim() % channels_per_site != 0 {
        return Err(Error::DimensionMismatch { expected: truth.dim(), got: pred.dim() });
    }
    Ok(pred
        .rows()
        .zip(truth.rows())
        .map(|(v, u)| {
            v.chunks_exact(channels_per_site)
                .zip(u.chunks_exact(channels_per_site))
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .collect()
        })
        .collect())
}

/// Number of strict local maxima of `values` above their mean; counts oscillation
/// cycles of a signal such as `x(t)` of a flow.
pub fn count_oscillations<I: IntoIterator<Item = f64>>(values: I) -> usize {
    let v: Vec<f64> = values.into_iter().collect();
    if v.len() < 3 {
        return 0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.windows(3).filter(|w| w[1] > w[0] && w[1] >= w[2] && w[1] > mean).count()
}

pub fn write_error_field_csv<W: Write>(field: &[Vec<f64>], mut w: W) -> Result<()> {
    let sites = field.first().map_or(0, |r| r.len());
    let header: Vec<String> = (0..sites).map(|j| format!("site{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in field {
        let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn buf(data: Vec<f64>, cols: usize) -> TrajectoryBuffer {
        TrajectoryBuffer::with_default_channels(data, cols, 0.25).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_error() {
        let u = buf(vec![1.0, 2.0, -1.0, 0.5, 3.0, 3.0], 2);
        let s = error_series(&u, &u, 0.05).unwrap();
        assert!(s.e.iter().all(|&e| e == 0.0));
        assert_eq!(s.delta_e, 0.0);
        assert_eq!(horizon(&s, 0.05, 10), f64::INFINITY);
    }

    #[test]
    fn zero_prediction_gives_normalised_truth_norm() {
        let u = buf(vec![3.0, 4.0, 0.0, 1.0, 6.0, 8.0], 2);
        let v = buf(vec![0.0; 6], 2);
        let s = error_series(&v, &u, 0.05).unwrap();
        // Oracle: norms 5, 1, 10; rms = sqrt((25 + 1 + 100) / 3).
        let rms = (126.0f64 / 3.0).sqrt();
        let expected = [5.0 / rms, 1.0 / rms, 10.0 / rms];
        for (a, b) in s.e.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((s.delta_e - expected.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_time_step_counts() {
        assert!((steps_per_lyapunov_time(0.05, 0.25) - 80.0).abs() < 1e-12);
        let cgle = steps_per_lyapunov_time(0.23, 0.07);
        assert!((cgle - 62.11).abs() < 0.01);
    }

    #[test]
    fn horizon_needs_confirmation_run() {
        let mut e = vec![0.0; 100];
        e[10] = 1.0; // isolated spike
        for x in e.iter_mut().skip(40) {
            *x = 1.0;
        }
        let s = ErrorSeries { e, dt: 0.5, lambda_max: 0.1, delta_e: 0.0, horizon_steps: None };
        assert!((horizon(&s, 0.05, 10) - 40.0 * 0.5 * 0.1).abs() < 1e-12);
        assert!((horizon(&s, 0.05, 1) - 10.0 * 0.5 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn counts_sine_cycles() {
        let v = (0..1000).map(|i| (i as f64 * 2.0 * std::f64::consts::PI / 100.0).sin());
        assert_eq!(count_oscillations(v), 10);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = buf(vec![0.0; 6], 2);
        let b = buf(vec![0.0; 6], 3);
        assert!(error_series(&a, &b, 1.0).is_err());
    }

    #[test]
    fn error_field_uses_site_modulus() {
        let v = buf(vec![1.0, 1.0, 0.0, 0.0], 4);
        let u = buf(vec![0.0, 0.0, 0.0, 2.0], 4);
        let f = error_field(&v, &u, 2).unwrap();
        assert!((f[0][0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(f[0][1], 2.0);
    }

    proptest! {
        #[test]
        fn invariant_to_channel_permutation_and_common_scale(
            data in proptest::collection::vec(-5.0f64..5.0, 24),
            noise in proptest::collection::vec(-0.5f64..0.5, 24),
            scale in 0.1f64..10.0,
        ) {
            let truth = buf(data.clone(), 3);
            let pred = buf(data.iter().zip(&noise).map(|(a, b)| a + b).collect(), 3);
            let base = error_series(&pred, &truth, 1.0).unwrap();

            let permute = |b: &TrajectoryBuffer| {
                let v: Vec<f64> = b.rows().flat_map(|r| [r[2], r[0], r[1]]).collect();
                buf(v, 3)
            };
            let p = error_series(&permute(&pred), &permute(&truth), 1.0).unwrap();
            prop_assert!((p.delta_e - base.delta_e).abs() <= 1e-12 * base.delta_e.max(1.0));

            let scaled = |b: &TrajectoryBuffer| buf(b.as_slice().iter().map(|x| x * scale).collect(), 3);
            let s = error_series(&scaled(&pred), &scaled(&truth), 1.0).unwrap();
            for (a, b) in s.e.iter().zip(&base.e) {
                prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
            }
        }

        #[test]
        fn horizon_is_monotone_in_tolerance(
            e in proptest::collection::vec(0.0f64..1.0, 50),
            t1 in 0.0f64..1.0, t2 in 0.0f64..1.0,
        ) {
            let s = ErrorSeries { e, dt: 0.1, lambda_max: 1.0, delta_e: 0.0, horizon_steps: None };
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(horizon(&s, hi, 3) >= horizon(&s, lo, 3));
        }
    }
}
