//! Dense and sparse kernels used by training and network construction.
//!
//! Dense symmetric matrices are stored row-major with only the lower triangle
//! meaningful. The heavy products go through `matrixmultiply`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Compressed-sparse-row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from coordinate triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n_rows && c < n_cols, "entry ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { n_rows, n_cols, row_ptr, col_idx, values }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Coordinate-list view in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (r, self.col_idx[p], self.values[p]))
        })
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        for (r, out) in y.iter_mut().enumerate().take(self.n_rows) {
            let mut acc = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            *out = acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub radius: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Spectral radius of a square sparse matrix by block subspace iteration with
/// Rayleigh-Ritz extraction.
///
/// A block is needed because the dominant eigenvalues of a random real matrix are
/// frequently a complex-conjugate pair, which a single power vector never settles on.
pub fn spectral_radius(a: &CsrMatrix, seed: u64) -> SpectralEstimate {
    let n = a.n_rows();
    assert_eq!(n, a.n_cols());
    if n == 0 {
        return SpectralEstimate { radius: 0.0, iterations: 0, converged: true };
    }
    if n <= 64 {
        let radius = a.to_dense().complex_eigenvalues().iter().fold(0.0f64, |m, z| m.max(z.norm()));
        return SpectralEstimate { radius, iterations: 0, converged: true };
    }
    let k = 12.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
    q = q.qr().q();
    let mut aq = DMatrix::zeros(n, k);
    let apply = |q: &DMatrix<f64>, out: &mut DMatrix<f64>| {
        for j in 0..k {
            a.mul_vec(q.column(j).as_slice(), out.column_mut(j).as_mut_slice());
        }
    };

    let max_iter = 20_000;
    let check_every = 10;
    let mut prev = f64::NAN;
    let mut stable = 0;
    for it in 1..=max_iter {
        apply(&q, &mut aq);
        if it % check_every == 0 {
            let h = q.transpose() * &aq;
            let est = h.complex_eigenvalues().iter().fold(0.0f64, |m, z| m.max(z.norm()));
            if est < 1e-300 {
                return SpectralEstimate { radius: 0.0, iterations: it, converged: true };
            }
            if (est - prev).abs() <= 1e-13 * est {
                stable += 1;
                if stable >= 3 {
                    return SpectralEstimate { radius: est, iterations: it, converged: true };
                }
            } else {
                stable = 0;
            }
            prev = est;
        }
        let norm = aq.norm();
        if norm == 0.0 {
            return SpectralEstimate { radius: 0.0, iterations: it, converged: true };
        }
        q = std::mem::replace(&mut aq, DMatrix::zeros(0, 0)).qr().q();
        aq = DMatrix::zeros(n, k);
    }
    SpectralEstimate { radius: prev, iterations: max_iter, converged: false }
}

/// Row-major dense symmetric matrix; only the lower triangle is maintained.
#[derive(Debug, Clone)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

const BLOCK: usize = 128;

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.data[i * self.n + j]
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    /// `self += Fᵀ F` for a row-major `rows × n` block `F` (lower triangle only).
    pub fn add_gram(&mut self, f: &[f64], rows: usize) {
        let n = self.n;
        assert_eq!(f.len(), rows * n);
        if rows == 0 {
            return;
        }
        let mut i0 = 0;
        while i0 < n {
            let i1 = (i0 + BLOCK).min(n);
            // C[i0..i1, 0..i1] += F[:, i0..i1]ᵀ F[:, 0..i1]
            unsafe {
                matrixmultiply::dgemm(
                    i1 - i0,
                    rows,
                    i1,
                    1.0,
                    f.as_ptr().add(i0),
                    1,
                    n as isize,
                    f.as_ptr(),
                    n as isize,
                    1,
                    1.0,
                    self.data.as_mut_ptr().add(i0 * n),
                    n as isize,
                    1,
                );
            }
            i0 = i1;
        }
    }

    /// In-place blocked Cholesky factorisation `A = L Lᵀ`. Returns `None` when the
    /// matrix is not numerically positive definite.
    pub fn cholesky(mut self) -> Option<Cholesky> {
        let n = self.n;
        let a = &mut self.data;
        let mut k0 = 0;
        while k0 < n {
            let k1 = (k0 + BLOCK).min(n);
            // Diagonal block.
            for j in k0..k1 {
                let mut d = a[j * n + j];
                for p in k0..j {
                    d -= a[j * n + p] * a[j * n + p];
                }
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                let d = d.sqrt();
                a[j * n + j] = d;
                for i in j + 1..k1 {
                    let mut s = a[i * n + j];
                    for p in k0..j {
                        s -= a[i * n + p] * a[j * n + p];
                    }
                    a[i * n + j] = s / d;
                }
            }
            // Panel below the diagonal block: X L_kkᵀ = A_panel.
            for i in k1..n {
                for j in k0..k1 {
                    let mut s = a[i * n + j];
                    for p in k0..j {
                        s -= a[i * n + p] * a[j * n + p];
                    }
                    a[i * n + j] = s / a[j * n + j];
                }
            }
            // Trailing lower triangle: A[i, j] -= Σ_p P[i, p] P[j, p], k1 <= j <= i.
            let kb = k1 - k0;
            let mut i0 = k1;
            while i0 < n {
                let i1 = (i0 + BLOCK).min(n);
                let ptr = a.as_mut_ptr();
                // The panel (columns k0..k1) and the updated region (columns >= k1)
                // never overlap.
                unsafe {
                    matrixmultiply::dgemm(
                        i1 - i0,
                        kb,
                        i1 - k1,
                        -1.0,
                        ptr.add(i0 * n + k0) as *const f64,
                        n as isize,
                        1,
                        ptr.add(k1 * n + k0) as *const f64,
                        1,
                        n as isize,
                        1.0,
                        ptr.add(i0 * n + k1),
                        n as isize,
                        1,
                    );
                }
                i0 = i1;
            }
            k0 = k1;
        }
        Some(Cholesky { n, l: self.data })
    }
}

#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Squared ratio of the extreme diagonal entries of `L`: a cheap lower bound on the
    /// 2-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..self.n {
            let d = self.l[i * self.n + i];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (hi / lo).powi(2)
    }

    /// Solves `A X = B` for a row-major `n × m` right-hand side, in place.
    pub fn solve_in_place(&self, b: &mut [f64], m: usize) {
        let n = self.n;
        assert_eq!(b.len(), n * m);
        let l = &self.l;
        // L Y = B
        for i in 0..n {
            let (done, rest) = b.split_at_mut(i * m);
            let row = &mut rest[..m];
            for j in 0..i {
                let lij = l[i * n + j];
                if lij != 0.0 {
                    let yj = &done[j * m..(j + 1) * m];
                    for (r, y) in row.iter_mut().zip(yj) {
                        *r -= lij * y;
                    }
                }
            }
            let d = l[i * n + i];
            row.iter_mut().for_each(|r| *r /= d);
        }
        // Lᵀ X = Y
        for i in (0..n).rev() {
            let d = l[i * n + i];
            let (head, rest) = b.split_at_mut(i * m);
            let xi = &mut rest[..m];
            xi.iter_mut().for_each(|r| *r /= d);
            for j in 0..i {
                let lij = l[i * n + j];
                if lij != 0.0 {
                    for (h, x) in head[j * m..(j + 1) * m].iter_mut().zip(xi.iter()) {
                        *h -= lij * x;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_block(rows: usize, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..rows * n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn gram_matches_naive_product() {
        let (rows, n) = (37, 300);
        let f = random_block(rows, n, 1);
        let mut g = SymMatrix::zeros(n);
        g.add_gram(&f[..10 * n], 10);
        g.add_gram(&f[10 * n..], rows - 10);
        for i in (0..n).step_by(7) {
            for j in (0..=i).step_by(5) {
                let naive: f64 = (0..rows).map(|t| f[t * n + i] * f[t * n + j]).sum();
                assert!((g.get(i, j) - naive).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn cholesky_solve_matches_nalgebra() {
        let n = 301;
        let f = random_block(400, n, 2);
        let mut g = SymMatrix::zeros(n);
        g.add_gram(&f, 400);
        g.add_diagonal(0.5);
        let dense = DMatrix::from_fn(n, n, |i, j| g.get(i, j));
        let m = 3;
        let mut b = random_block(n, m, 3);
        let rhs = DMatrix::from_row_slice(n, m, &b);
        let chol = g.cholesky().expect("SPD");
        chol.solve_in_place(&mut b, m);
        let x = DMatrix::from_row_slice(n, m, &b);
        let residual = (&dense * &x - &rhs).norm() / rhs.norm();
        assert!(residual < 1e-10, "residual {residual}");
        assert!(chol.condition_estimate() >= 1.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut g = SymMatrix::zeros(3);
        g.add_diagonal(1.0);
        g.data[2 * 3 + 2] = -1.0;
        assert!(g.cholesky().is_none());
    }

    #[test]
    fn csr_matvec_matches_dense() {
        let trip = vec![(0, 1, 2.0), (2, 0, -1.0), (1, 1, 0.5), (0, 1, 1.0)];
        let a = CsrMatrix::from_triplets(3, 3, trip);
        assert_eq!(a.nnz(), 3);
        let mut y = vec![0.0; 3];
        a.mul_vec(&[1.0, 2.0, 3.0], &mut y);
        assert_eq!(y, vec![6.0, 1.0, -1.0]);
    }

    #[test]
    fn spectral_radius_matches_dense_eigenvalues() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut trip = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if rng.random_bool(0.05) {
                    trip.push((r, c, rng.random_range(-1.0..1.0)));
                }
            }
        }
        let a = CsrMatrix::from_triplets(n, n, trip);
        let exact = a.to_dense().complex_eigenvalues().iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let est = spectral_radius(&a, 5);
        assert!(est.converged);
        assert!((est.radius - exact).abs() / exact < 1e-9, "{} vs {exact}", est.radius);
    }
}
