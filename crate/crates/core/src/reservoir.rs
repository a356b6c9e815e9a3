//! Sparse random reservoirs: weight sampling, spectral scaling, the leaky
//! tanh hidden-state recursion and the quadratic output-layer design.

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Hyper-parameters of one reservoir configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReservoirConfig {
    /// Hidden dimension.
    pub n_h: usize,
    /// Target spectral radius of the scaled recurrent matrix.
    pub delta: f64,
    /// Leaking rate; 1 means no leakage.
    pub kappa: f64,
    /// Half-width of the uniform slab for recurrent weights.
    pub a_v: f64,
    /// Half-width of the uniform slab for input weights.
    pub a_u: f64,
    /// Probability that a recurrent weight is non-zero.
    pub pi_v: f64,
    /// Probability that an input weight is non-zero.
    pub pi_u: f64,
    pub seed: u64,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        Self {
            n_h: 120,
            delta: 0.35,
            kappa: 1.0,
            a_v: 0.1,
            a_u: 0.1,
            pi_v: 0.1,
            pi_u: 0.1,
            seed: 0,
        }
    }
}

impl ReservoirConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_h == 0 {
            return Err(Error::InvalidDimension("n_h must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "kappa must lie in (0,1], got {}",
                self.kappa
            )));
        }
        for (name, p) in [("pi_v", self.pi_v), ("pi_u", self.pi_u)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0,1], got {p}")));
            }
        }
        for (name, a) in [("a_v", self.a_v), ("a_u", self.a_u)] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {a}")));
            }
        }
        Ok(())
    }

    /// Same configuration with the seed replaced by the `k`-th ensemble substream.
    pub fn member(&self, k: usize) -> Self {
        Self {
            seed: rng::derive_seed(self.seed, &[k as u64]),
            ..self.clone()
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut row_ptr = Vec::with_capacity(m.nrows() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Self {
            nrows: m.nrows(),
            ncols: m.ncols(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[p])] = self.values[p];
            }
        }
        m
    }

    /// `out += scale * A x`
    pub fn mul_add(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            *o += scale * acc;
        }
    }
}

/// Fixed hidden-layer weights of one ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservoirWeights {
    pub v: SparseMatrix,
    pub u: SparseMatrix,
    /// Spectral radius of `v`.
    pub lambda_v: f64,
    pub n_x: usize,
}

impl ReservoirWeights {
    pub fn n_h(&self) -> usize {
        self.v.nrows
    }

    /// Multiplier applied to `v`; zero when `v` has no spectrum.
    pub fn recurrent_scale(&self, delta: f64) -> f64 {
        if self.lambda_v > 0.0 {
            delta / self.lambda_v
        } else {
            0.0
        }
    }
}

fn sample_spike_slab(rng: &mut rng::Rng, nrows: usize, ncols: usize, pi: f64, a: f64) -> SparseMatrix {
    let mut row_ptr = Vec::with_capacity(nrows + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);
    for _ in 0..nrows {
        for j in 0..ncols {
            // both draws are always consumed so the stream layout does not depend on pi
            let keep = rng.gen::<f64>() < pi;
            let w = rng.gen_range(-a..a);
            if keep && w != 0.0 {
                col_idx.push(j);
                values.push(w);
            }
        }
        row_ptr.push(values.len());
    }
    SparseMatrix {
        nrows,
        ncols,
        row_ptr,
        col_idx,
        values,
    }
}

/// Tolerance used for the stored `lambda_v`.
pub const LAMBDA_TOL: f64 = 1e-12;

/// Draws `V` and `U` entrywise from the spike-and-slab mixture and records the
/// spectral radius of `V`.
pub fn sample_weights(config: &ReservoirConfig, n_x: usize) -> Result<ReservoirWeights> {
    if n_x == 0 {
        return Err(Error::InvalidDimension("n_x must be at least 1".into()));
    }
    config.validate()?;
    let n_h = config.n_h;
    let mut v_rng = rng::substream(config.seed, &[0]);
    let mut u_rng = rng::substream(config.seed, &[1]);
    let v = sample_spike_slab(&mut v_rng, n_h, n_h, config.pi_v, config.a_v);
    let u = sample_spike_slab(&mut u_rng, n_h, n_x, config.pi_u, config.a_u);
    let lambda_v = if v.nnz() == 0 {
        0.0
    } else {
        spectral_radius_sparse(&v, LAMBDA_TOL, 200_000, config.seed)?
    };
    Ok(ReservoirWeights { v, u, lambda_v, n_x })
}

/// Dense matrices at or below this size skip power iteration.
pub const DENSE_CUTOFF: usize = 64;

/// Spectral radius of a square matrix.
///
/// Power iteration tracks both a single dominant eigenvalue and a dominant
/// pair (complex conjugate or `±λ`) through a two-term recurrence fit. Small
/// matrices, and iterations that stall after random restarts, are handed to a
/// dense Schur decomposition.
pub fn spectral_radius(v: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    if v.nrows() != v.ncols() {
        return Err(Error::InvalidDimension(format!(
            "spectral radius needs a square matrix, got {}x{}",
            v.nrows(),
            v.ncols()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if v.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    if v.nrows() <= DENSE_CUTOFF {
        return dense_spectral_radius(v);
    }
    let sparse = SparseMatrix::from_dense(v);
    spectral_radius_sparse(&sparse, tol, max_iter, 0)
}

fn spectral_radius_sparse(v: &SparseMatrix, tol: f64, max_iter: usize, seed: u64) -> Result<f64> {
    if v.nnz() == 0 {
        return Ok(0.0);
    }
    if v.nrows <= DENSE_CUTOFF {
        return dense_spectral_radius(&v.to_dense());
    }
    let restarts = 3;
    let per_restart = (max_iter / restarts).max(1);
    let mut last = f64::NAN;
    for r in 0..restarts {
        let mut r_rng = rng::substream(seed, &[0x5e_c7, r as u64]);
        match power_iteration(v, tol, per_restart, &mut r_rng) {
            PowerOutcome::Converged(rho) => return Ok(rho),
            PowerOutcome::Stalled(est) => last = est,
        }
    }
    log::debug!("power iteration stalled (last estimate {last}); using dense solver");
    dense_spectral_radius(&v.to_dense()).map_err(|e| {
        Error::Numeric(format!(
            "power iteration did not converge in {max_iter} iterations (last estimate {last}) and dense fallback failed: {e}"
        ))
    })
}

enum PowerOutcome {
    Converged(f64),
    Stalled(f64),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn power_iteration(v: &SparseMatrix, tol: f64, max_iter: usize, rng: &mut rng::Rng) -> PowerOutcome {
    let n = v.nrows;
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nx = dot(&x, &x).sqrt();
    x.iter_mut().for_each(|e| *e /= nx);
    let mut y1 = vec![0.0; n];
    let mut y2 = vec![0.0; n];
    let mut prev = f64::NAN;
    let mut stable = 0;
    let mut est = f64::NAN;
    let mut it = 0;
    while it < max_iter {
        y1.iter_mut().for_each(|e| *e = 0.0);
        v.mul_add(&x, 1.0, &mut y1);
        y2.iter_mut().for_each(|e| *e = 0.0);
        v.mul_add(&y1, 1.0, &mut y2);
        it += 2;

        let n2 = dot(&y2, &y2).sqrt();
        if n2 == 0.0 {
            // x landed in the null space of V^2; only possible for nilpotent parts
            return PowerOutcome::Stalled(0.0);
        }

        // single dominant eigenvalue: y1 ~ lambda x
        let xx = dot(&x, &x);
        let xy1 = dot(&x, &y1);
        let lam = xy1 / xx;
        let res1 = y1
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - lam * b).powi(2))
            .sum::<f64>()
            .sqrt()
            / dot(&y1, &y1).sqrt().max(f64::MIN_POSITIVE);

        // dominant pair: y2 ~ p y1 + q x
        let y1y1 = dot(&y1, &y1);
        let y1y2 = dot(&y1, &y2);
        let xy2 = dot(&x, &y2);
        let det = y1y1 * xx - xy1 * xy1;
        let (rho2, res2) = if det.abs() > 1e-14 * y1y1 * xx {
            let p = (y1y2 * xx - xy2 * xy1) / det;
            let q = (y1y1 * xy2 - xy1 * y1y2) / det;
            let res = y2
                .iter()
                .zip(y1.iter().zip(&x))
                .map(|(c, (b, a))| (c - p * b - q * a).powi(2))
                .sum::<f64>()
                .sqrt()
                / n2;
            let disc = p * p + 4.0 * q;
            let rho = if disc >= 0.0 {
                let s = disc.sqrt();
                ((p + s) / 2.0).abs().max(((p - s) / 2.0).abs())
            } else {
                (-q).sqrt()
            };
            (rho, res)
        } else {
            (f64::NAN, f64::INFINITY)
        };

        let (cand, res) = if res1 <= res2 || !rho2.is_finite() {
            (lam.abs(), res1)
        } else {
            (rho2, res2)
        };
        est = cand;
        let scale = cand.abs().max(1e-300);
        if res < 1e-9 && (cand - prev).abs() <= tol * scale {
            stable += 1;
            if stable >= 3 {
                return PowerOutcome::Converged(cand);
            }
        } else {
            stable = 0;
        }
        prev = cand;
        x.iter_mut().zip(&y2).for_each(|(a, b)| *a = b / n2);
    }
    PowerOutcome::Stalled(est)
}

fn dense_spectral_radius(v: &DMatrix<f64>) -> Result<f64> {
    let schur = nalgebra::linalg::Schur::try_new(v.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max))
}

/// Hidden states `h_1..h_T` and the final state for continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStatePath {
    pub n_h: usize,
    /// Row-major `T x n_h`.
    states: Vec<f64>,
    pub h_last: Vec<f64>,
}

impl HiddenStatePath {
    pub fn len(&self) -> usize {
        self.states.len() / self.n_h
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.states[t * self.n_h..(t + 1) * self.n_h]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.n_h)
    }
}

/// One step of the leaky recursion, writing `h_t` into `out`.
pub fn step(weights: &ReservoirWeights, config: &ReservoirConfig, h_prev: &[f64], x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|e| *e = 0.0);
    let scale = weights.recurrent_scale(config.delta);
    if scale != 0.0 {
        weights.v.mul_add(h_prev, scale, out);
    }
    weights.u.mul_add(x, 1.0, out);
    let kappa = config.kappa;
    if kappa == 1.0 {
        out.iter_mut().for_each(|e| *e = e.tanh());
    } else {
        out.iter_mut()
            .zip(h_prev)
            .for_each(|(e, &hp)| *e = (1.0 - kappa) * hp + kappa * e.tanh());
    }
}

/// Runs the recursion over the rows of `x`, starting from `h0` (zero if `None`).
pub fn run_hidden_states(
    weights: &ReservoirWeights,
    x: &[Vec<f64>],
    config: &ReservoirConfig,
    h0: Option<&[f64]>,
) -> Result<HiddenStatePath> {
    let n_h = weights.n_h();
    let mut h = match h0 {
        Some(h0) => {
            if h0.len() != n_h {
                return Err(Error::DimensionMismatch {
                    expected: n_h,
                    got: h0.len(),
                    context: "initial hidden state",
                });
            }
            h0.to_vec()
        }
        None => vec![0.0; n_h],
    };
    let mut states = Vec::with_capacity(x.len() * n_h);
    let mut next = vec![0.0; n_h];
    for row in x {
        if row.len() != weights.n_x {
            return Err(Error::DimensionMismatch {
                expected: weights.n_x,
                got: row.len(),
                context: "feature row vs input weights",
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        step(weights, config, &h, row, &mut next);
        states.extend_from_slice(&next);
        std::mem::swap(&mut h, &mut next);
    }
    Ok(HiddenStatePath { n_h, states, h_last: h })
}

/// Output-layer regressors `B` with optional leading intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub has_intercept: bool,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Wraps an arbitrary regressor matrix (used by tests and synthetic data).
    pub fn from_matrix(matrix: DMatrix<f64>, has_intercept: bool) -> Self {
        Self { matrix, has_intercept }
    }
}

pub fn design_width(n_h: usize, with_intercept: bool) -> usize {
    2 * n_h + usize::from(with_intercept)
}

/// Writes `(1, h', (h∘h)')` (or without the 1) into `out`.
pub fn design_row(h: &[f64], with_intercept: bool, out: &mut Vec<f64>) {
    out.clear();
    if with_intercept {
        out.push(1.0);
    }
    out.extend_from_slice(h);
    out.extend(h.iter().map(|v| v * v));
}

pub fn build_design(path: &HiddenStatePath, with_intercept: bool) -> Result<DesignMatrix> {
    let t = path.len();
    let p = design_width(path.n_h, with_intercept);
    let mut matrix = DMatrix::zeros(t, p);
    let mut row = Vec::with_capacity(p);
    for (i, h) in path.rows().enumerate() {
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite hidden state at row {i}")));
        }
        design_row(h, with_intercept, &mut row);
        for (j, v) in row.iter().enumerate() {
            matrix[(i, j)] = *v;
        }
    }
    Ok(DesignMatrix {
        matrix,
        has_intercept: with_intercept,
    })
}
