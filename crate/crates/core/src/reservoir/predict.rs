use super::ReservoirModel;
use crate::dynsys::TrajectoryBuffer;
use crate::error::{Error, Result};
use crate::updating::{apply_update_in_place, UpdatePlan};

/// Runs the trained network autonomously for `n_steps` steps.
///
/// The state is reset and teacher-forced through `warmup`; its last row is the true state
/// one step before the first prediction. Row `t` of the result is the prediction `v(t)`
/// before any update. On steps where `plan` is active the fed-back input is replaced by
/// `v + c (u(t) - v)` on the measured channels, with `u(t) = truth.row(t)`.
pub fn predict_closed_loop(
    model: &mut ReservoirModel,
    warmup: &TrajectoryBuffer,
    n_steps: usize,
    plan: Option<&UpdatePlan>,
    truth: Option<&TrajectoryBuffer>,
) -> Result<TrajectoryBuffer> {
    if !model.is_trained() {
        return Err(Error::NotTrained);
    }
    let dim = model.params().outputs;
    if warmup.is_empty() {
        return Err(Error::InvalidParameter("warmup segment is empty".into()));
    }
    if warmup.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: warmup.dim() });
    }
    let channels_per_site = match plan {
        Some(plan) => {
            let truth = truth.ok_or(Error::MissingTruth)?;
            if truth.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: truth.dim() });
            }
            if truth.len() < n_steps {
                return Err(Error::InvalidParameter(format!(
                    "truth has {} rows, prediction needs {n_steps}",
                    truth.len()
                )));
            }
            let sites = plan.site_mask().len();
            if sites == 0 || dim % sites != 0 {
                return Err(Error::DimensionMismatch { expected: dim, got: sites });
            }
            dim / sites
        }
        None => 1,
    };

    model.reset_state();
    for row in warmup.rows() {
        model.drive(row)?;
    }
    let mut features = vec![0.0; model.params().size];
    let mut v = vec![0.0; dim];
    model.output_into(&mut features, &mut v)?;

    let mut data = Vec::with_capacity(n_steps * dim);
    for t in 0..n_steps {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { step: t });
        }
        data.extend_from_slice(&v);
        if let (Some(plan), Some(truth)) = (plan, truth) {
            if let Some(mask) = plan.channel_mask(t, channels_per_site) {
                apply_update_in_place(&mut v, truth.row(t), &mask, plan.coupling());
            }
        }
        model.drive(&v)?;
        model.output_into(&mut features, &mut v)?;
    }
    TrajectoryBuffer::new(data, dim, warmup.dt(), warmup.channels().to_vec())
}
