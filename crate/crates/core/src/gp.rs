//! Independent exact Gaussian processes, one per output column, sharing an
//! 8-dimensional input set.
//!
//! Each column has an ARD Matérn 5/2 kernel, a constant mean and Gaussian
//! observation noise. Hyperparameters are fitted by maximizing the exact log
//! marginal likelihood with a box-projected L-BFGS ascent in log space.

use core::f64::consts::PI;

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::{cholesky_with_jitter, Cholesky, Matrix};
use crate::rng::mix_seed;

/// Input dimension: one normalized command per solenoid.
pub const INPUT_DIM: usize = 8;

/// Shape ratios plus the two center coordinates.
pub const OUTPUT_DIM: usize = 34;

/// Number of free parameters per output column: 8 log-lengthscales, log signal
/// variance, log noise variance and the constant mean.
pub const N_PARAMS: usize = INPUT_DIM + 3;

pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const SIGNAL_VARIANCE_BOUNDS: (f64, f64) = (1e-8, 1e4);
pub const NOISE_VARIANCE_BOUNDS: (f64, f64) = (1e-8, 1e4);

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;
const DUPLICATE_TOL: f64 = 1e-9;
const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("Cholesky factorization failed for output {output} even with 1e-4 jitter")]
    CholeskyFailure { output: usize },
    #[error("log marginal likelihood is not finite for output {output}")]
    NonFiniteLikelihood { output: usize },
    #[error("invalid dataset: {0}")]
    InvalidData(&'static str),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(&'static str),
}

/// Training pairs. Inputs closer than 1e-9 in max-norm are merged and their
/// outputs averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_outputs: usize,
    inputs: Vec<[f64; INPUT_DIM]>,
    outputs: Vec<Vec<f64>>,
    counts: Vec<usize>,
}

impl Dataset {
    pub fn new(n_outputs: usize) -> Self {
        Self {
            n_outputs,
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: Vec::new(),
        }
    }

    pub fn push(&mut self, input: [f64; INPUT_DIM], output: &[f64]) -> Result<(), GpError> {
        if output.len() != self.n_outputs {
            return Err(GpError::InvalidData("output width mismatch"));
        }
        if !input.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(GpError::InvalidData("input outside [0, 1]^8"));
        }
        if !output.iter().all(|v| v.is_finite()) {
            return Err(GpError::InvalidData("non-finite output"));
        }
        let dup = self.inputs.iter().position(|x| {
            x.iter()
                .zip(input.iter())
                .all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL)
        });
        match dup {
            Some(i) => {
                let c = self.counts[i] as f64;
                for (acc, &v) in self.outputs[i].iter_mut().zip(output) {
                    *acc = (*acc * c + v) / (c + 1.0);
                }
                self.counts[i] += 1;
            }
            None => {
                self.inputs.push(input);
                self.outputs.push(output.to_vec());
                self.counts.push(1);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn inputs(&self) -> &[[f64; INPUT_DIM]] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.outputs.iter().map(|row| row[c]).collect()
    }

    /// Same inputs with output columns reordered: new column `k` is old column `perm[k]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Dataset {
        let mut out = self.clone();
        out.n_outputs = perm.len();
        out.outputs = self
            .outputs
            .iter()
            .map(|row| perm.iter().map(|&p| row[p]).collect())
            .collect();
        out
    }
}

/// Kernel and likelihood parameters of one output column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub lengthscales: [f64; INPUT_DIM],
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub constant_mean: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lengthscales: [0.5; INPUT_DIM],
            signal_variance: 1.0,
            noise_variance: 1e-2,
            constant_mean: 0.0,
        }
    }
}

impl Hyperparams {
    /// Data-scaled starting point: mean and variance of the column, 1% noise.
    pub fn initial_for(y: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let signal = var.max(1e-4);
        Self {
            lengthscales: [0.5; INPUT_DIM],
            signal_variance: signal,
            noise_variance: (1e-2 * signal).max(NOISE_VARIANCE_BOUNDS.0),
            constant_mean: mean,
        }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let (lo, hi) = LENGTHSCALE_BOUNDS;
        if !self
            .lengthscales
            .iter()
            .all(|&l| l >= lo * (1.0 - 1e-12) && l <= hi * (1.0 + 1e-12))
        {
            return Err(GpError::InvalidHyperparams("lengthscale outside [1e-3, 1e3]"));
        }
        if !(self.signal_variance > 0.0) || !self.signal_variance.is_finite() {
            return Err(GpError::InvalidHyperparams("signal variance must be positive"));
        }
        if !(self.noise_variance >= NOISE_VARIANCE_BOUNDS.0 * (1.0 - 1e-12))
            || !self.noise_variance.is_finite()
        {
            return Err(GpError::InvalidHyperparams("noise variance below 1e-8"));
        }
        if !self.constant_mean.is_finite() {
            return Err(GpError::InvalidHyperparams("non-finite mean"));
        }
        Ok(())
    }

    /// `[log ℓ_1..8, log σ², log σ_n², c]`.
    pub fn to_params(&self) -> [f64; N_PARAMS] {
        let mut p = [0.0; N_PARAMS];
        for d in 0..INPUT_DIM {
            p[d] = self.lengthscales[d].ln();
        }
        p[INPUT_DIM] = self.signal_variance.ln();
        p[INPUT_DIM + 1] = self.noise_variance.ln();
        p[INPUT_DIM + 2] = self.constant_mean;
        p
    }

    pub fn from_params(p: &[f64; N_PARAMS]) -> Self {
        let mut lengthscales = [0.0; INPUT_DIM];
        for d in 0..INPUT_DIM {
            lengthscales[d] = p[d].exp();
        }
        Self {
            lengthscales,
            signal_variance: p[INPUT_DIM].exp(),
            noise_variance: p[INPUT_DIM + 1].exp(),
            constant_mean: p[INPUT_DIM + 2],
        }
    }
}

fn param_bounds() -> ([f64; N_PARAMS], [f64; N_PARAMS]) {
    let mut lo = [0.0; N_PARAMS];
    let mut hi = [0.0; N_PARAMS];
    for d in 0..INPUT_DIM {
        lo[d] = LENGTHSCALE_BOUNDS.0.ln();
        hi[d] = LENGTHSCALE_BOUNDS.1.ln();
    }
    lo[INPUT_DIM] = SIGNAL_VARIANCE_BOUNDS.0.ln();
    hi[INPUT_DIM] = SIGNAL_VARIANCE_BOUNDS.1.ln();
    lo[INPUT_DIM + 1] = NOISE_VARIANCE_BOUNDS.0.ln();
    hi[INPUT_DIM + 1] = NOISE_VARIANCE_BOUNDS.1.ln();
    lo[INPUT_DIM + 2] = -1e6;
    hi[INPUT_DIM + 2] = 1e6;
    (lo, hi)
}

#[inline]
fn scaled_distance(x: &[f64; INPUT_DIM], y: &[f64; INPUT_DIM], ls: &[f64; INPUT_DIM]) -> f64 {
    let mut r2 = 0.0;
    for d in 0..INPUT_DIM {
        let t = (x[d] - y[d]) / ls[d];
        r2 += t * t;
    }
    r2.sqrt()
}

#[inline]
fn matern52_of_r(r: f64, signal_variance: f64) -> f64 {
    let s = SQRT5 * r;
    signal_variance * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// `σ²·(1 + √5 r + 5r²/3)·exp(−√5 r)` with `r` the lengthscale-weighted distance.
pub fn matern52_ard(x: &[f64; INPUT_DIM], y: &[f64; INPUT_DIM], h: &Hyperparams) -> f64 {
    matern52_of_r(scaled_distance(x, y, &h.lengthscales), h.signal_variance)
}

/// Noise-free Gram matrix of the kernel.
pub fn gram_matrix(inputs: &[[f64; INPUT_DIM]], h: &Hyperparams) -> Matrix {
    let n = inputs.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = h.signal_variance;
        for j in 0..i {
            let v = matern52_ard(&inputs[i], &inputs[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn factor_training(
    inputs: &[[f64; INPUT_DIM]],
    h: &Hyperparams,
    output: usize,
) -> Result<Cholesky, GpError> {
    let mut k = gram_matrix(inputs, h);
    k.add_diagonal(h.noise_variance);
    if let Ok(c) = Cholesky::new(&k) {
        return Ok(c);
    }
    cholesky_with_jitter(&k, JITTER_START, JITTER_MAX)
        .map(|(c, _)| c)
        .map_err(|_| GpError::CholeskyFailure { output })
}

/// Exact log marginal likelihood of one column and its gradient with respect
/// to `[log ℓ_1..8, log σ², log σ_n², c]`.
pub fn log_marginal_likelihood(
    inputs: &[[f64; INPUT_DIM]],
    y: &[f64],
    h: &Hyperparams,
    output: usize,
) -> Result<(f64, [f64; N_PARAMS]), GpError> {
    let n = inputs.len();
    let chol = factor_training(inputs, h, output)?;
    let resid: Vec<f64> = y.iter().map(|v| v - h.constant_mean).collect();
    let alpha = chol.solve(&resid);
    let fit: f64 = resid.iter().zip(&alpha).map(|(r, a)| r * a).sum();
    let value = -0.5 * fit - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();
    if !value.is_finite() {
        return Err(GpError::NonFiniteLikelihood { output });
    }

    // dL/dθ = ½ tr(W ∂K/∂θ) with W = ααᵀ − K⁻¹.
    let kinv = chol.inverse();
    let mut grad = [0.0; N_PARAMS];
    let ls = &h.lengthscales;
    let mut inv_l2 = [0.0; INPUT_DIM];
    for d in 0..INPUT_DIM {
        inv_l2[d] = 1.0 / (ls[d] * ls[d]);
    }
    let mut tr_signal = 0.0;
    let mut tr_noise = 0.0;
    for i in 0..n {
        let w_ii = alpha[i] * alpha[i] - kinv[(i, i)];
        tr_signal += w_ii * h.signal_variance;
        tr_noise += w_ii * h.noise_variance;
        for j in 0..i {
            let w = 2.0 * (alpha[i] * alpha[j] - kinv[(i, j)]);
            let r = scaled_distance(&inputs[i], &inputs[j], ls);
            let k = matern52_of_r(r, h.signal_variance);
            tr_signal += w * k;
            // ∂k/∂log ℓ_d = σ² (5/3)(1 + √5 r) e^{−√5 r} Δ_d²/ℓ_d²
            let common = w * h.signal_variance * (5.0 / 3.0) * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp();
            for d in 0..INPUT_DIM {
                let delta = inputs[i][d] - inputs[j][d];
                grad[d] += common * delta * delta * inv_l2[d];
            }
        }
    }
    for g in grad.iter_mut().take(INPUT_DIM) {
        *g *= 0.5;
    }
    grad[INPUT_DIM] = 0.5 * tr_signal;
    grad[INPUT_DIM + 1] = 0.5 * tr_noise;
    grad[INPUT_DIM + 2] = alpha.iter().sum();
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(GpError::NonFiniteLikelihood { output });
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Number of starting points per column; the first is the given initialization.
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iters: 200,
            seed: 0,
        }
    }
}

/// Fitted hyperparameters with the log marginal likelihood each one attains.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub hyperparams: Vec<Hyperparams>,
    pub log_likelihoods: Vec<f64>,
    /// Likelihood after every accepted step of the winning start, per column.
    pub traces: Vec<Vec<f64>>,
}

/// Default starting points for every column of a dataset.
pub fn initial_hyperparams(data: &Dataset) -> Vec<Hyperparams> {
    (0..data.n_outputs())
        .map(|c| Hyperparams::initial_for(&data.column(c)))
        .collect()
}

/// Maximizes the log marginal likelihood of every output column independently.
pub fn fit(data: &Dataset, init: &[Hyperparams], opts: &FitOptions) -> Result<FitReport, GpError> {
    if data.len() < 2 {
        return Err(GpError::InvalidData("fit needs at least two distinct inputs"));
    }
    if init.len() != data.n_outputs() {
        return Err(GpError::InvalidData("one initial hyperparameter set per output"));
    }
    let mut report = FitReport {
        hyperparams: Vec::with_capacity(init.len()),
        log_likelihoods: Vec::with_capacity(init.len()),
        traces: Vec::with_capacity(init.len()),
    };
    for (c, h0) in init.iter().enumerate() {
        let y = data.column(c);
        let (h, ll, trace) = fit_column(data.inputs(), &y, h0, opts, c)?;
        report.hyperparams.push(h);
        report.log_likelihoods.push(ll);
        report.traces.push(trace);
    }
    Ok(report)
}

fn column_seed(seed: u64, y: &[f64]) -> u64 {
    // Keyed on the column's values so reordering outputs reorders results.
    let mut h = 0xcbf2_9ce4_8422_2325_u64;
    for v in y {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    mix_seed(seed, h)
}

fn fit_column(
    inputs: &[[f64; INPUT_DIM]],
    y: &[f64],
    init: &Hyperparams,
    opts: &FitOptions,
    output: usize,
) -> Result<(Hyperparams, f64, Vec<f64>), GpError> {
    let (lo, hi) = param_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(column_seed(opts.seed, y));
    let base = init.to_params();
    let y_scale = {
        let n = y.len() as f64;
        let m = y.iter().sum::<f64>() / n;
        (y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt().max(1e-3)
    };
    let mut best: Option<([f64; N_PARAMS], f64, Vec<f64>)> = None;
    let mut last_err = None;
    for r in 0..opts.restarts.max(1) {
        let mut start = base;
        if r > 0 {
            for (d, p) in start.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p += if d == INPUT_DIM + 2 { 0.5 * y_scale * z } else { z };
            }
        }
        for d in 0..N_PARAMS {
            start[d] = start[d].clamp(lo[d], hi[d]);
        }
        let objective = |p: &[f64; N_PARAMS]| {
            log_marginal_likelihood(inputs, y, &Hyperparams::from_params(p), output)
        };
        match maximize_lbfgs(objective, start, &lo, &hi, opts.max_iters) {
            Ok((p, v, trace)) => {
                if best.as_ref().is_none_or(|b| v > b.1) {
                    best = Some((p, v, trace));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((p, v, trace)) => Ok((Hyperparams::from_params(&p), v, trace)),
        None => Err(last_err.unwrap_or(GpError::NonFiniteLikelihood { output })),
    }
}

const LBFGS_MEMORY: usize = 8;

/// Box-projected L-BFGS ascent with a backtracking line search. Every accepted
/// step strictly increases the objective. Returns the final point, its value and
/// the value after each accepted step.
fn maximize_lbfgs<F>(
    f: F,
    x0: [f64; N_PARAMS],
    lo: &[f64; N_PARAMS],
    hi: &[f64; N_PARAMS],
    max_iters: usize,
) -> Result<([f64; N_PARAMS], f64, Vec<f64>), GpError>
where
    F: Fn(&[f64; N_PARAMS]) -> Result<(f64, [f64; N_PARAMS]), GpError>,
{
    // Work on the negated objective.
    let eval = |x: &[f64; N_PARAMS]| f(x).map(|(v, g)| (-v, g.map(|gi| -gi)));
    let mut x = x0;
    let (mut fx, mut g) = eval(&x)?;
    let mut trace = vec![-fx];
    let mut s_hist: Vec<[f64; N_PARAMS]> = Vec::new();
    let mut y_hist: Vec<[f64; N_PARAMS]> = Vec::new();
    let dot = |a: &[f64; N_PARAMS], b: &[f64; N_PARAMS]| -> f64 {
        a.iter().zip(b.iter()).map(|(p, q)| p * q).sum()
    };

    for _ in 0..max_iters {
        // Freeze coordinates pinned at a bound with the gradient pushing outward.
        let mut free = [true; N_PARAMS];
        for d in 0..N_PARAMS {
            if (x[d] <= lo[d] && g[d] > 0.0) || (x[d] >= hi[d] && g[d] < 0.0) {
                free[d] = false;
            }
        }
        let pg: f64 = (0..N_PARAMS)
            .filter(|&d| free[d])
            .map(|d| g[d].abs())
            .fold(0.0, f64::max);
        if pg < 1e-6 {
            break;
        }

        // Two-loop recursion.
        let mut q = g;
        let k = s_hist.len();
        let mut alphas = [0.0; LBFGS_MEMORY];
        for i in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alphas[i] = rho * dot(&s_hist[i], &q);
            for d in 0..N_PARAMS {
                q[d] -= alphas[i] * y_hist[i][d];
            }
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0 / pg.max(1.0)
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for i in 0..k {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &q);
            for d in 0..N_PARAMS {
                q[d] += s_hist[i][d] * (alphas[i] - beta);
            }
        }
        let mut dir = q.map(|v| -v);
        for d in 0..N_PARAMS {
            if !free[d] {
                dir[d] = 0.0;
            }
        }
        if dot(&dir, &g) >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            for d in 0..N_PARAMS {
                dir[d] = if free[d] { -g[d] / pg.max(1.0) } else { 0.0 };
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn = x;
            for d in 0..N_PARAMS {
                xn[d] = (x[d] + t * dir[d]).clamp(lo[d], hi[d]);
            }
            let step: [f64; N_PARAMS] = core::array::from_fn(|d| xn[d] - x[d]);
            let decrease = dot(&g, &step);
            if let Ok((fn_, gn)) = eval(&xn) {
                if fn_ < fx && fn_ <= fx + 1e-4 * decrease.min(0.0) {
                    accepted = Some((xn, fn_, gn, step));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn, step)) = accepted else {
            break;
        };
        let yv: [f64; N_PARAMS] = core::array::from_fn(|d| gn[d] - g[d]);
        if dot(&step, &yv) > 1e-12 {
            if s_hist.len() == LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(step);
            y_hist.push(yv);
        }
        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        trace.push(-fx);
        if improvement < 1e-10 * (1.0 + fx.abs()) {
            break;
        }
    }
    Ok((x, -fx, trace))
}

/// Factorized GP over all output columns, ready for repeated prediction.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<[f64; INPUT_DIM]>,
    hyperparams: Vec<Hyperparams>,
    factors: Vec<Cholesky>,
    alphas: Vec<Vec<f64>>,
}

/// Joint posterior of a set of output columns at `m` query points.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    /// Output column indices, in order.
    pub columns: Vec<usize>,
    /// `m × columns.len()` posterior means.
    pub means: Matrix,
    /// One `m × m` covariance per column.
    pub covariances: Vec<Matrix>,
}

impl Posterior {
    pub fn n_points(&self) -> usize {
        self.means.rows()
    }
}

impl GpModel {
    pub fn new(data: &Dataset, hyperparams: Vec<Hyperparams>) -> Result<Self, GpError> {
        if data.is_empty() {
            return Err(GpError::InvalidData("empty dataset"));
        }
        if hyperparams.len() != data.n_outputs() {
            return Err(GpError::InvalidData("one hyperparameter set per output"));
        }
        let mut factors = Vec::with_capacity(hyperparams.len());
        let mut alphas = Vec::with_capacity(hyperparams.len());
        for (c, h) in hyperparams.iter().enumerate() {
            h.validate()?;
            let chol = factor_training(data.inputs(), h, c)?;
            let resid: Vec<f64> = data
                .column(c)
                .iter()
                .map(|v| v - h.constant_mean)
                .collect();
            alphas.push(chol.solve(&resid));
            factors.push(chol);
        }
        Ok(Self {
            inputs: data.inputs().to_vec(),
            hyperparams,
            factors,
            alphas,
        })
    }

    pub fn hyperparams(&self) -> &[Hyperparams] {
        &self.hyperparams
    }

    pub fn n_outputs(&self) -> usize {
        self.hyperparams.len()
    }

    pub fn n_train(&self) -> usize {
        self.inputs.len()
    }

    /// Posterior over all output columns.
    pub fn predict(&self, queries: &[[f64; INPUT_DIM]]) -> Posterior {
        let cols: Vec<usize> = (0..self.n_outputs()).collect();
        self.predict_columns(queries, &cols)
    }

    /// Posterior over a subset of output columns.
    pub fn predict_columns(&self, queries: &[[f64; INPUT_DIM]], columns: &[usize]) -> Posterior {
        let m = queries.len();
        let n = self.inputs.len();
        let mut means = Matrix::zeros(m, columns.len());
        let mut covariances = Vec::with_capacity(columns.len());
        let mut v = Matrix::zeros(m, n);
        for (k, &c) in columns.iter().enumerate() {
            let h = &self.hyperparams[c];
            let chol = &self.factors[c];
            let alpha = &self.alphas[c];
            for (j, q) in queries.iter().enumerate() {
                let row = v.row_mut(j);
                let mut mean = h.constant_mean;
                for i in 0..n {
                    let kv = matern52_ard(q, &self.inputs[i], h);
                    row[i] = kv;
                    mean += kv * alpha[i];
                }
                means[(j, k)] = mean;
                chol.solve_lower_in_place(row);
            }
            let mut cov = Matrix::zeros(m, m);
            for a in 0..m {
                for b in 0..=a {
                    let prior = matern52_ard(&queries[a], &queries[b], h);
                    let ra = v.row(a);
                    let rb = v.row(b);
                    let mut s = 0.0;
                    for i in 0..n {
                        s += ra[i] * rb[i];
                    }
                    let mut val = prior - s;
                    if a == b {
                        val = val.max(0.0);
                    }
                    cov[(a, b)] = val;
                    cov[(b, a)] = val;
                }
            }
            covariances.push(cov);
        }
        Posterior {
            columns: columns.to_vec(),
            means,
            covariances,
        }
    }
}

/// Fits nothing; conditions the GP on `data` under the given hyperparameters.
pub fn predict(
    data: &Dataset,
    hyperparams: &[Hyperparams],
    queries: &[[f64; INPUT_DIM]],
) -> Result<Posterior, GpError> {
    Ok(GpModel::new(data, hyperparams.to_vec())?.predict(queries))
}

/// Relative pivot tolerance for factoring posterior covariances.
pub const POSTERIOR_PSD_TOL: f64 = 1e-10;

/// Lower factors of every column covariance, semidefinite-safe.
pub fn posterior_factors(p: &Posterior) -> Result<Vec<Cholesky>, GpError> {
    p.covariances
        .iter()
        .zip(&p.columns)
        .map(|(cov, &c)| factor_posterior(cov, c))
        .collect()
}

fn factor_posterior(cov: &Matrix, output: usize) -> Result<Cholesky, GpError> {
    if let Ok(c) = Cholesky::semidefinite(cov, POSTERIOR_PSD_TOL) {
        return Ok(c);
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let mut shifted = cov.clone();
        shifted.add_diagonal(jitter);
        if let Ok(c) = Cholesky::semidefinite(&shifted, POSTERIOR_PSD_TOL) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(GpError::CholeskyFailure { output })
}

/// `count` joint draws from the posterior; draw `s` is an `m × columns` matrix.
/// Columns are sampled independently; deterministic given `seed`.
pub fn sample_posterior(p: &Posterior, count: usize, seed: u64) -> Result<Vec<Matrix>, GpError> {
    let factors = posterior_factors(p)?;
    let m = p.n_points();
    let k = p.columns.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut z = vec![0.0; m];
    for _ in 0..count {
        let mut draw = p.means.clone();
        for (c, f) in factors.iter().enumerate() {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            let l = f.lower();
            for a in 0..m {
                let row = l.row(a);
                let mut s = 0.0;
                for b in 0..=a {
                    s += row[b] * z[b];
                }
                draw[(a, c)] += s;
            }
        }
        debug_assert_eq!(draw.cols(), k);
        out.push(draw);
    }
    Ok(out)
}
