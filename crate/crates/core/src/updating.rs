//! Sparse true-state updates during closed-loop prediction.
//!
//! An [`UpdateSchedule`] says at which prediction steps, and at which measurement sites,
//! the fed-back prediction `v` is nudged toward the measured state `u`:
//! `v' = v + c (u - v)`. Everything else in the closed loop is untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest coupling accepted; values above 1 overshoot the measurement.
pub const MAX_COUPLING: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateSchedule {
    /// Coupling strength `c`.
    pub c: f64,
    pub mode: ScheduleMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// The first `active` steps of every `period`-step window carry data.
    Regular {
        period: usize,
        active: usize,
        sites: SiteSelection,
    },
    /// Each step is active with probability `p_t`; each site is measured with
    /// probability `p_s` (drawn once per run).
    Random { p_t: f64, p_s: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteSelection {
    /// `M_c` equally spaced sites `0, M/M_c, 2M/M_c, ...`.
    Uniform(usize),
    /// Explicit site indices, e.g. `[1]` to couple only `y` of a three-variable flow.
    Explicit(Vec<usize>),
}

impl UpdateSchedule {
    pub fn regular(period: usize, active: usize, coupled_sites: usize, c: f64) -> Self {
        Self {
            c,
            mode: ScheduleMode::Regular { period, active, sites: SiteSelection::Uniform(coupled_sites) },
        }
    }

    pub fn regular_on(period: usize, active: usize, indices: Vec<usize>, c: f64) -> Self {
        Self { c, mode: ScheduleMode::Regular { period, active, sites: SiteSelection::Explicit(indices) } }
    }

    pub fn random(p_t: f64, p_s: f64, seed: u64, c: f64) -> Self {
        Self { c, mode: ScheduleMode::Random { p_t, p_s, seed } }
    }

    /// Checks the schedule against a system with `sites` measurement sites.
    pub fn validate(&self, sites: usize) -> Result<()> {
        if !(0.0..=MAX_COUPLING).contains(&self.c) {
            return Err(Error::InvalidParameter(format!("coupling c={} outside [0, 2]", self.c)));
        }
        match &self.mode {
            ScheduleMode::Regular { period, active, sites: sel } => {
                if *active < 1 || active > period {
                    return Err(Error::InvalidParameter(format!(
                        "need 1 <= T0 <= T, got T0={active}, T={period}"
                    )));
                }
                match sel {
                    SiteSelection::Uniform(mc) => {
                        if *mc < 1 || *mc > sites || sites % mc != 0 {
                            return Err(Error::InvalidParameter(format!(
                                "M_c={mc} must divide M={sites}"
                            )));
                        }
                    }
                    SiteSelection::Explicit(idx) => {
                        if let Some(bad) = idx.iter().find(|&&i| i >= sites) {
                            return Err(Error::InvalidParameter(format!(
                                "site index {bad} out of range for {sites} sites"
                            )));
                        }
                    }
                }
            }
            ScheduleMode::Random { p_t, p_s, .. } => {
                if !(0.0..=1.0).contains(p_t) || !(0.0..=1.0).contains(p_s) {
                    return Err(Error::InvalidParameter("probabilities must lie in [0, 1]".into()));
                }
            }
        }
        Ok(())
    }

    /// Fixes the measured sites for a run over `sites` sites.
    pub fn realize(&self, sites: usize) -> Result<UpdatePlan> {
        self.validate(sites)?;
        let site_mask = match &self.mode {
            ScheduleMode::Regular { sites: SiteSelection::Uniform(mc), .. } => {
                let stride = sites / mc;
                (0..sites).map(|i| i % stride == 0).collect()
            }
            ScheduleMode::Regular { sites: SiteSelection::Explicit(idx), .. } => {
                let mut m = vec![false; sites];
                idx.iter().for_each(|&i| m[i] = true);
                m
            }
            ScheduleMode::Random { p_s, seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(u64::MAX);
                (0..sites).map(|_| rng.random::<f64>() < *p_s).collect()
            }
        };
        Ok(UpdatePlan { schedule: self.clone(), site_mask })
    }
}

/// A schedule bound to a site count, with its site subset drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdatePlan {
    schedule: UpdateSchedule,
    site_mask: Vec<bool>,
}

impl UpdatePlan {
    pub fn schedule(&self) -> &UpdateSchedule {
        &self.schedule
    }

    pub fn coupling(&self) -> f64 {
        self.schedule.c
    }

    pub fn site_mask(&self) -> &[bool] {
        &self.site_mask
    }

    /// Whether prediction step `t` carries data. Step 0 opens the first window.
    pub fn step_active(&self, t: usize) -> bool {
        match &self.schedule.mode {
            ScheduleMode::Regular { period, active, .. } => t % period < *active,
            ScheduleMode::Random { p_t, seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(t as u64);
                rng.random::<f64>() < *p_t
            }
        }
    }

    /// Site mask at step `t` (all false on inactive steps).
    pub fn mask(&self, t: usize) -> Vec<bool> {
        if self.step_active(t) {
            self.site_mask.clone()
        } else {
            vec![false; self.site_mask.len()]
        }
    }

    /// Per-channel mask for step `t`, or `None` if the step is inactive.
    pub fn channel_mask(&self, t: usize, channels_per_site: usize) -> Option<Vec<bool>> {
        self.step_active(t).then(|| expand_to_channels(&self.site_mask, channels_per_site))
    }
}

/// Site mask for step `t` of `schedule` over `sites` sites.
pub fn active_mask(schedule: &UpdateSchedule, t: usize, sites: usize) -> Result<Vec<bool>> {
    Ok(schedule.realize(sites)?.mask(t))
}

/// Repeats each site flag for every channel belonging to the site (re/im pairs).
pub fn expand_to_channels(site_mask: &[bool], channels_per_site: usize) -> Vec<bool> {
    site_mask.iter().flat_map(|&m| std::iter::repeat_n(m, channels_per_site)).collect()
}

/// `v' = v + c (u - v)` on masked channels; unmasked channels pass through.
pub fn apply_update(v: &[f64], u_true: &[f64], mask: &[bool], c: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    apply_update_in_place(&mut out, u_true, mask, c);
    out
}

pub fn apply_update_in_place(v: &mut [f64], u_true: &[f64], mask: &[bool], c: f64) {
    assert!(v.len() == u_true.len() && v.len() == mask.len(), "length mismatch");
    for ((x, &u), &m) in v.iter_mut().zip(u_true).zip(mask) {
        if m {
            *x += c * (u - *x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn regular_single_step_per_period() {
        let s = UpdateSchedule::regular(50, 1, 64, 1.0);
        assert!(active_mask(&s, 0, 64).unwrap().iter().all(|&m| m));
        for t in 1..50 {
            assert!(active_mask(&s, t, 64).unwrap().iter().all(|&m| !m));
        }
        assert!(active_mask(&s, 50, 64).unwrap().iter().all(|&m| m));
    }

    #[test]
    fn uniform_sites_are_equally_spaced() {
        let plan = UpdateSchedule::regular(10, 1, 16, 1.0).realize(64).unwrap();
        let on: Vec<usize> = (0..64).filter(|&i| plan.site_mask()[i]).collect();
        assert_eq!(on, (0..64).step_by(4).collect::<Vec<_>>());
    }

    #[test]
    fn full_window_is_continuous_coupling() {
        let plan = UpdateSchedule::regular(7, 7, 3, 0.5).realize(3).unwrap();
        assert!((0..100).all(|t| plan.step_active(t)));
    }

    #[test]
    fn zero_step_probability_never_fires() {
        for p_s in [0.0, 0.5, 1.0] {
            let plan = UpdateSchedule::random(0.0, p_s, 3, 1.0).realize(32).unwrap();
            assert!((0..1000).all(|t| plan.mask(t).iter().all(|&m| !m)));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(UpdateSchedule::regular(10, 11, 1, 1.0).validate(4).is_err());
        assert!(UpdateSchedule::regular(10, 0, 1, 1.0).validate(4).is_err());
        assert!(UpdateSchedule::regular(10, 1, 3, 1.0).validate(64).is_err());
        assert!(UpdateSchedule::regular(10, 1, 4, 2.5).validate(4).is_err());
        assert!(UpdateSchedule::random(1.5, 0.5, 0, 1.0).validate(4).is_err());
        assert!(UpdateSchedule::regular_on(10, 1, vec![3], 1.0).validate(3).is_err());
    }

    #[test]
    fn coupling_examples() {
        assert_eq!(apply_update(&[0.0], &[1.0], &[true], 0.4), vec![0.4]);
        let v = [0.3, -1.0, 2.0];
        let u = [1.0, 2.0, 3.0];
        assert_eq!(apply_update(&v, &u, &[true; 3], 1.0), u.to_vec());
        assert_eq!(apply_update(&v, &u, &[false; 3], 1.0), v.to_vec());
    }

    #[test]
    fn complex_sites_share_mask() {
        assert_eq!(expand_to_channels(&[true, false], 2), vec![true, true, false, false]);
    }

    #[test]
    fn regular_active_fraction_is_exact() {
        let plan = UpdateSchedule::regular(13, 4, 1, 1.0).realize(1).unwrap();
        let n = 13 * 1000;
        let active = (0..n).filter(|&t| plan.step_active(t)).count();
        assert_eq!(active * 13, n * 4);
    }

    #[test]
    fn random_active_fraction_converges() {
        let p = 0.3;
        let plan = UpdateSchedule::random(p, 1.0, 77, 1.0).realize(1).unwrap();
        let n = 20_000;
        let active = (0..n).filter(|&t| plan.step_active(t)).count() as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((active - n as f64 * p).abs() < 3.0 * sd);
    }

    #[test]
    fn degenerate_random_equals_continuous_regular() {
        let rnd = UpdateSchedule::random(1.0, 1.0, 5, 0.7).realize(8).unwrap();
        let reg = UpdateSchedule::regular(9, 9, 8, 0.7).realize(8).unwrap();
        for t in 0..500 {
            assert_eq!(rnd.mask(t), reg.mask(t));
        }
    }

    #[test]
    fn random_plan_is_deterministic_in_seed() {
        let a = UpdateSchedule::random(0.2, 0.5, 9, 1.0).realize(64).unwrap();
        let b = UpdateSchedule::random(0.2, 0.5, 9, 1.0).realize(64).unwrap();
        assert_eq!(a, b);
        assert!((0..300).all(|t| a.mask(t) == b.mask(t)));
    }

    proptest! {
        #[test]
        fn unit_coupling_is_idempotent_and_zero_is_identity(
            v in proptest::collection::vec(-10.0f64..10.0, 6),
            u in proptest::collection::vec(-10.0f64..10.0, 6),
            mask in proptest::collection::vec(any::<bool>(), 6),
        ) {
            let once = apply_update(&v, &u, &mask, 1.0);
            let twice = apply_update(&once, &u, &mask, 1.0);
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
            }
            prop_assert_eq!(apply_update(&v, &u, &mask, 0.0), v);
        }
    }
}
