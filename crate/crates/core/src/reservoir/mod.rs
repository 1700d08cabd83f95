//! Echo-state network: construction, teacher-forced training and closed-loop running.
//!
//! The network evolves as `r(t+Δt) = tanh(A r(t) + W_in v(t))` and reads out
//! `v(t+Δt) = W_out f(r(t+Δt))`, where `f` squares every second component.

mod predict;
mod snapshot;
mod train;

pub use predict::predict_closed_loop;
pub use train::TrainReport;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_radius, CsrMatrix};

/// Below this the adjacency is treated as nilpotent and cannot be rescaled.
const MIN_RAW_RADIUS: f64 = 1e-12;
const MAX_REBUILDS: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// Average degree `d`: each directed edge exists with probability `d / D_r`.
    Degree(f64),
    /// Link density `d'`: each directed edge exists with probability `d'`.
    Density(f64),
}

impl Connectivity {
    pub fn edge_probability(self, size: usize) -> f64 {
        match self {
            Connectivity::Degree(d) => d / size as f64,
            Connectivity::Density(p) => p,
        }
    }
}

/// How input channels connect to reservoir nodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputLayout {
    /// Every node sees every channel.
    #[default]
    Dense,
    /// Node `i` sees only channel `⌊i·D_in / D_r⌋`, so each channel drives an equal block.
    Blocked,
}

impl InputLayout {
    /// The single channel feeding `node`, or `None` when every channel does.
    pub fn channel_of(self, node: usize, size: usize, inputs: usize) -> Option<usize> {
        match self {
            InputLayout::Dense => None,
            InputLayout::Blocked => Some(node * inputs / size),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReservoirParams {
    /// Reservoir size `D_r`.
    pub size: usize,
    pub inputs: usize,
    pub outputs: usize,
    /// Input weights are uniform on `[-sigma, sigma]`.
    pub sigma: f64,
    #[serde(default)]
    pub input_layout: InputLayout,
    pub connectivity: Connectivity,
    /// Target spectral radius of `A`.
    pub rho: f64,
    /// Ridge penalty.
    pub eta: f64,
    pub seed: u64,
}

impl ReservoirParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.size == 0 || self.inputs == 0 || self.outputs == 0 {
            return bad("sizes must be positive".into());
        }
        if self.inputs > self.size {
            return bad(format!("D_in={} exceeds D_r={}", self.inputs, self.size));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma={} must be non-negative", self.sigma));
        }
        if !(self.rho > 0.0 && self.eta > 0.0) {
            return bad("rho and eta must be positive".into());
        }
        let ok = match self.connectivity {
            Connectivity::Degree(d) => d > 0.0 && d <= self.size as f64,
            Connectivity::Density(p) => p > 0.0 && p <= 1.0,
        };
        if !ok {
            return bad(format!("connectivity {:?} out of range", self.connectivity));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReservoirModel {
    params: ReservoirParams,
    /// Seed actually used for the network (differs from `params.seed` after a rebuild).
    network_seed: u64,
    /// Row-major `D_r × D_in`.
    w_in: Vec<f64>,
    adjacency: CsrMatrix,
    /// Row-major `D_out × D_r`, empty until trained.
    w_out: Vec<f64>,
    state: Vec<f64>,
    report: Option<TrainReport>,
    // Scratch for the drive step.
    pre: Vec<f64>,
}

/// Builds the network; deterministic in `params.seed`.
pub fn build(params: &ReservoirParams) -> Result<ReservoirModel> {
    params.validate()?;
    let mut last = 0.0;
    for attempt in 0..MAX_REBUILDS {
        let seed = params.seed.wrapping_add(attempt);
        let (w_in, mut adjacency) = draw_network(params, seed);
        let est = spectral_radius(&adjacency, seed ^ 0x5eed);
        last = est.radius;
        if est.radius < MIN_RAW_RADIUS {
            continue;
        }
        adjacency.scale(params.rho / est.radius);
        return Ok(ReservoirModel::from_parts(*params, seed, w_in, adjacency, Vec::new()));
    }
    Err(Error::DegenerateNetwork(last))
}

fn draw_network(params: &ReservoirParams, seed: u64) -> (Vec<f64>, CsrMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.size;
    let d_in = params.inputs;
    let mut w_in = vec![0.0; n * d_in];
    if params.sigma > 0.0 {
        for (node, row) in w_in.chunks_exact_mut(d_in).enumerate() {
            match params.input_layout.channel_of(node, n, d_in) {
                Some(c) => row[c] = rng.random_range(-params.sigma..=params.sigma),
                None => row.iter_mut().for_each(|w| *w = rng.random_range(-params.sigma..=params.sigma)),
            }
        }
    }
    let p = params.connectivity.edge_probability(n).min(1.0);
    let mut triplets = Vec::with_capacity((p * (n * n) as f64 * 1.1) as usize + 16);
    for r in 0..n {
        for c in 0..n {
            if rng.random_bool(p) {
                triplets.push((r, c, rng.random_range(-1.0..=1.0)));
            }
        }
    }
    (w_in, CsrMatrix::from_triplets(n, n, triplets))
}

/// Output features: components at even 0-based index pass through, odd ones are squared.
pub fn readout_features(r: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; r.len()];
    readout_features_into(r, &mut out);
    out
}

pub fn readout_features_into(r: &[f64], out: &mut [f64]) {
    for (i, (o, &x)) in out.iter_mut().zip(r).enumerate() {
        *o = if i % 2 == 0 { x } else { x * x };
    }
}

impl ReservoirModel {
    pub(crate) fn from_parts(
        params: ReservoirParams,
        network_seed: u64,
        w_in: Vec<f64>,
        adjacency: CsrMatrix,
        w_out: Vec<f64>,
    ) -> Self {
        Self {
            params,
            network_seed,
            w_in,
            adjacency,
            w_out,
            state: vec![0.0; params.size],
            report: None,
            pre: vec![0.0; params.size],
        }
    }

    pub fn params(&self) -> &ReservoirParams {
        &self.params
    }

    pub fn network_seed(&self) -> u64 {
        self.network_seed
    }

    pub fn w_in(&self) -> &[f64] {
        &self.w_in
    }

    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    pub fn w_out(&self) -> &[f64] {
        &self.w_out
    }

    pub fn is_trained(&self) -> bool {
        !self.w_out.is_empty()
    }

    pub fn train_report(&self) -> Option<&TrainReport> {
        self.report.as_ref()
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn reset_state(&mut self) {
        self.state.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn set_state(&mut self, r: &[f64]) -> Result<()> {
        if r.len() != self.params.size {
            return Err(Error::DimensionMismatch { expected: self.params.size, got: r.len() });
        }
        self.state.copy_from_slice(r);
        Ok(())
    }

    /// `r ← tanh(A r + W_in v)`; returns the new state.
    pub fn drive(&mut self, v: &[f64]) -> Result<&[f64]> {
        let d_in = self.params.inputs;
        if v.len() != d_in {
            return Err(Error::DimensionMismatch { expected: d_in, got: v.len() });
        }
        self.adjacency.mul_vec(&self.state, &mut self.pre);
        for ((p, row), s) in self.pre.iter_mut().zip(self.w_in.chunks_exact(d_in)).zip(&mut self.state) {
            let mut acc = *p;
            for (w, x) in row.iter().zip(v) {
                acc += w * x;
            }
            *s = acc.tanh();
        }
        Ok(&self.state)
    }

    /// `W_out f(r)` for the current state.
    pub fn output(&self) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.params.outputs];
        let mut feat = vec![0.0; self.params.size];
        self.output_into(&mut feat, &mut out)?;
        Ok(out)
    }

    pub(crate) fn output_into(&self, features: &mut [f64], out: &mut [f64]) -> Result<()> {
        if !self.is_trained() {
            return Err(Error::NotTrained);
        }
        readout_features_into(&self.state, features);
        for (o, row) in out.iter_mut().zip(self.w_out.chunks_exact(self.params.size)) {
            *o = row.iter().zip(features.iter()).map(|(w, f)| w * f).sum();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_params(size: usize, density: f64, rho: f64) -> ReservoirParams {
        ReservoirParams {
            size,
            inputs: 3,
            outputs: 3,
            sigma: 0.5,
            input_layout: InputLayout::Dense,
            connectivity: Connectivity::Density(density),
            rho,
            eta: 1e-6,
            seed: 42,
        }
    }

    fn dense_radius(m: &ReservoirModel) -> f64 {
        m.adjacency().to_dense().complex_eigenvalues().iter().fold(0.0f64, |a, z| a.max(z.norm()))
    }

    #[test]
    fn spectral_radius_is_rescaled_to_target() {
        for (size, density, rho) in [(200, 0.05, 0.1), (300, 0.2, 1.2), (150, 0.02, 0.3)] {
            let m = build(&small_params(size, density, rho)).unwrap();
            let r = dense_radius(&m);
            assert!((r - rho).abs() / rho < 1e-6, "size {size}: {r} vs {rho}");
        }
    }

    #[test]
    fn blocked_inputs_give_one_channel_per_node() {
        let mut p = small_params(10, 0.3, 0.5);
        p.input_layout = InputLayout::Blocked;
        let m = build(&p).unwrap();
        let owners: Vec<usize> = m
            .w_in()
            .chunks_exact(3)
            .map(|row| {
                let nz: Vec<usize> = (0..3).filter(|&c| row[c] != 0.0).collect();
                assert_eq!(nz.len(), 1, "{row:?}");
                nz[0]
            })
            .collect();
        assert_eq!(owners, [0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
        assert!(m.w_in().iter().all(|w| w.abs() <= 0.5));
    }

    #[test]
    fn degree_connectivity_is_rescaled_too() {
        let mut p = small_params(400, 0.0, 0.1);
        p.connectivity = Connectivity::Degree(3.0);
        let m = build(&p).unwrap();
        let r = dense_radius(&m);
        assert!((r - 0.1).abs() / 0.1 < 1e-6, "{r}");
    }

    #[test]
    fn link_count_matches_binomial() {
        let m = build(&small_params(600, 0.2, 0.2)).unwrap();
        let trials: f64 = 600.0 * 600.0;
        let mean = 0.2 * trials;
        let sd = (trials * 0.2 * 0.8).sqrt();
        let nnz = m.adjacency().nnz() as f64;
        assert!((nnz - mean).abs() < 3.0 * sd, "nnz {nnz}, expected {mean} ± {}", 3.0 * sd);
    }

    #[test]
    fn zero_sigma_gives_zero_input_weights() {
        let mut p = small_params(50, 0.1, 0.5);
        p.sigma = 0.0;
        assert!(build(&p).unwrap().w_in().iter().all(|&w| w == 0.0));
    }

    #[test]
    fn input_weights_within_sigma() {
        let m = build(&small_params(100, 0.1, 0.5)).unwrap();
        assert!(m.w_in().iter().all(|w| w.abs() <= 0.5));
    }

    #[test]
    fn build_is_deterministic_in_seed() {
        let a = build(&small_params(100, 0.1, 0.5)).unwrap();
        let b = build(&small_params(100, 0.1, 0.5)).unwrap();
        assert_eq!(a.w_in(), b.w_in());
        assert_eq!(a.adjacency(), b.adjacency());
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = small_params(2, 0.1, 0.5);
        assert!(build(&p).is_err());
        p = small_params(10, 0.1, 0.0);
        assert!(build(&p).is_err());
        p = small_params(10, 1.5, 0.5);
        assert!(build(&p).is_err());
    }

    #[test]
    fn feature_map_examples() {
        assert_eq!(readout_features(&[0.5, 0.5, 0.5, 0.5]), vec![0.5, 0.25, 0.5, 0.25]);
        assert_eq!(readout_features(&[0.0; 4]), vec![0.0; 4]);
        let eps = 1e-3;
        let r = [-(1.0 - eps), 1.0 - eps, -(1.0 - eps), -(1.0 - eps)];
        let f = readout_features(&r);
        assert!(f[1] > 0.0 && f[3] > 0.0);
    }

    #[test]
    fn drive_examples() {
        let mut m = build(&small_params(80, 0.1, 0.9)).unwrap();
        m.drive(&[0.0; 3]).unwrap();
        assert!(m.state().iter().all(|&x| x == 0.0));
        m.drive(&[50.0, -80.0, 3.0]).unwrap();
        assert!(m.state().iter().all(|x| x.abs() < 1.0 || x.abs() == 1.0));
        let snapshot = m.state().to_vec();
        let a = m.drive(&[0.3, 0.1, -0.2]).unwrap().to_vec();
        m.set_state(&snapshot).unwrap();
        let b = m.drive(&[0.3, 0.1, -0.2]).unwrap().to_vec();
        assert_eq!(a, b);
        assert!(matches!(m.drive(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }
}
