//! Monte-Carlo batch Expected Improvement over a composite objective.
//!
//! The surrogate models raw outputs (shape ratios); the objective is a known
//! function of those outputs. For each of `S` fixed base samples the joint
//! posterior at the `q` candidates is drawn, the objective is applied per
//! candidate, and the improvement of the best candidate over the incumbent is
//! averaged:
//!
//! ```text
//! qEI(X) = 1/S · Σ_s max(0, J* − min_j J(y_{s,j}))
//! ```
//!
//! Base samples are drawn once per optimization run, so the estimate is a
//! deterministic function of the candidates (common random numbers).

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::actuation::{Actuation, SolenoidMask, SOLENOIDS};
use crate::codec::{rmse_objective, CodecError, SegmentMask, ShapeDescriptor};
use crate::gp::{posterior_factors, GpError, GpModel, Posterior, INPUT_DIM};
use crate::linalg::Cholesky;
use crate::rng::mix_seed;

pub const DEFAULT_BATCH_SIZE: usize = 5;
pub const DEFAULT_MC_SAMPLES: usize = 4096;
pub const MIN_MC_SAMPLES: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcquisitionError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("candidate {candidate} drives masked-off solenoid {solenoid}")]
    MaskViolation { candidate: usize, solenoid: usize },
    #[error("no observations to take an incumbent from")]
    EmptyDataset,
    #[error("invalid acquisition problem: {0}")]
    InvalidProblem(&'static str),
}

/// A scalar objective of the form `finish(Σ_k term(k, y_k))` over a subset of
/// surrogate output columns. The separable form lets the Monte-Carlo loop
/// accumulate column by column over contiguous blocks of samples.
pub trait Objective {
    /// Output columns the objective reads; `k` in [`Objective::term`] indexes this list.
    fn columns(&self) -> &[usize];
    fn term(&self, k: usize, y: f64) -> f64;
    fn finish(&self, sum: f64) -> f64;

    fn value(&self, outputs: &[f64]) -> f64 {
        let sum = outputs.iter().enumerate().map(|(k, &y)| self.term(k, y)).sum();
        self.finish(sum)
    }
}

/// RMSE between target shape ratios and the sampled ratios over a sector mask.
/// Surrogate column `i` is shape ratio `i`.
#[derive(Debug, Clone)]
pub struct RmseObjective {
    columns: Vec<usize>,
    targets: Vec<f64>,
    inv_len: f64,
}

impl RmseObjective {
    pub fn new(target: &ShapeDescriptor, mask: SegmentMask) -> Result<Self, AcquisitionError> {
        if mask.is_empty() {
            return Err(CodecError::EmptyMask.into());
        }
        let columns = mask.indices();
        let targets = columns.iter().map(|&i| target.ratios[i]).collect();
        Ok(Self {
            inv_len: 1.0 / columns.len() as f64,
            columns,
            targets,
        })
    }
}

impl Objective for RmseObjective {
    fn columns(&self) -> &[usize] {
        &self.columns
    }

    #[inline(always)]
    fn term(&self, k: usize, y: f64) -> f64 {
        let d = self.targets[k] - y;
        d * d
    }

    #[inline(always)]
    fn finish(&self, sum: f64) -> f64 {
        (sum * self.inv_len).sqrt()
    }
}

/// The objective is output column `column` itself.
#[derive(Debug, Clone)]
pub struct IdentityObjective {
    column: [usize; 1],
}

impl IdentityObjective {
    pub fn new(column: usize) -> Self {
        Self { column: [column] }
    }
}

impl Objective for IdentityObjective {
    fn columns(&self) -> &[usize] {
        &self.column
    }

    fn term(&self, _k: usize, y: f64) -> f64 {
        y
    }

    fn finish(&self, sum: f64) -> f64 {
        sum
    }
}

/// Standard normal draws stored `[column][candidate][sample]`. Each
/// `(column, candidate)` stream is Latin-hypercube stratified: draw `k` lands in
/// its own `1/S` quantile band, in shuffled order.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseSamples {
    samples: usize,
    columns: usize,
    batch: usize,
    z: Vec<f64>,
}

impl BaseSamples {
    pub fn new(samples: usize, columns: usize, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = Vec::with_capacity(samples * columns * batch);
        let mut strata: Vec<usize> = (0..samples).collect();
        let n = samples as f64;
        for _ in 0..columns * batch {
            strata.shuffle(&mut rng);
            for &k in &strata {
                let u: f64 = rng.random();
                z.push(normal_quantile((k as f64 + u) / n));
            }
        }
        Self {
            samples,
            columns,
            batch,
            z,
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    #[inline]
    fn block(&self, c: usize, b: usize, start: usize, len: usize) -> &[f64] {
        let off = (c * self.batch + b) * self.samples + start;
        &self.z[off..off + len]
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QeiEstimate {
    pub value: f64,
    pub std_error: f64,
}

const BLOCK: usize = 256;

/// qEI of a posterior already restricted to the objective's columns (in order).
/// Uses the first `m` candidate slots of `base`, where `m` is the number of
/// posterior points, so a prefix batch sees the same draws as its superset.
pub fn qei_from_posterior<O: Objective>(
    posterior: &Posterior,
    factors: &[Cholesky],
    objective: &O,
    base: &BaseSamples,
    incumbent: f64,
) -> QeiEstimate {
    let m = posterior.n_points();
    debug_assert!(m <= base.batch && posterior.columns.len() == base.columns);
    let mut acc = vec![0.0; m * BLOCK];
    let mut y = [0.0; BLOCK];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut start = 0;
    while start < base.samples {
        let len = BLOCK.min(base.samples - start);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (c, f) in factors.iter().enumerate() {
            let l = f.lower();
            for j in 0..m {
                let yb = &mut y[..len];
                yb.iter_mut().for_each(|v| *v = posterior.means[(j, c)]);
                for (b, &lb) in l.row(j)[..=j].iter().enumerate() {
                    if lb == 0.0 {
                        continue;
                    }
                    for (v, z) in yb.iter_mut().zip(base.block(c, b, start, len)) {
                        *v += lb * z;
                    }
                }
                for (a, &v) in acc[j * BLOCK..j * BLOCK + len].iter_mut().zip(yb.iter()) {
                    *a += objective.term(c, v);
                }
            }
        }
        for s in 0..len {
            let mut best = f64::INFINITY;
            for j in 0..m {
                best = best.min(objective.finish(acc[j * BLOCK + s]));
            }
            let imp = (incumbent - best).max(0.0);
            sum += imp;
            sum_sq += imp * imp;
        }
        start += len;
    }
    let n = base.samples as f64;
    let mean = sum / n;
    let var = if base.samples > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    QeiEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    }
}

/// Evaluates qEI of candidate batches against a fitted surrogate with fixed base samples.
pub struct QeiEvaluator<'a, O: Objective> {
    model: &'a GpModel,
    objective: O,
    base: BaseSamples,
    incumbent: f64,
}

impl<'a, O: Objective> QeiEvaluator<'a, O> {
    pub fn new(model: &'a GpModel, objective: O, incumbent: f64, batch: usize, mc_samples: usize, seed: u64) -> Self {
        let base = BaseSamples::new(mc_samples, objective.columns().len(), batch, seed);
        Self {
            model,
            objective,
            base,
            incumbent,
        }
    }

    pub fn estimate(&self, candidates: &[[f64; INPUT_DIM]]) -> Result<QeiEstimate, AcquisitionError> {
        if candidates.len() > self.base.batch {
            return Err(AcquisitionError::InvalidProblem("more candidates than base-sample slots"));
        }
        let post = self.model.predict_columns(candidates, self.objective.columns());
        let factors = posterior_factors(&post)?;
        Ok(qei_from_posterior(&post, &factors, &self.objective, &self.base, self.incumbent))
    }

    pub fn value(&self, candidates: &[[f64; INPUT_DIM]]) -> Result<f64, AcquisitionError> {
        self.estimate(candidates).map(|e| e.value)
    }
}

/// Everything needed to choose the next batch for a shaping target.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionProblem {
    pub target: ShapeDescriptor,
    pub optimize_mask: SegmentMask,
    pub solenoid_mask: SolenoidMask,
    /// Best observed objective value J*.
    pub incumbent: f64,
    /// Actuation that achieved the incumbent, used to seed one start.
    pub best_actuation: Option<Actuation>,
    pub batch_size: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl AcquisitionProblem {
    pub fn validate(&self) -> Result<(), AcquisitionError> {
        if self.batch_size < 1 {
            return Err(AcquisitionError::InvalidProblem("batch size must be at least 1"));
        }
        if self.mc_samples < MIN_MC_SAMPLES {
            return Err(AcquisitionError::InvalidProblem("at least 256 Monte-Carlo samples"));
        }
        if self.optimize_mask.is_empty() {
            return Err(CodecError::EmptyMask.into());
        }
        if !self.incumbent.is_finite() {
            return Err(AcquisitionError::InvalidProblem("incumbent must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBatch {
    pub actuations: Vec<Actuation>,
    pub acquisition_value: f64,
}

/// Multi-start pattern-search settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    /// Random starting batches (one of them seeded from the best observed actuation).
    pub starts: usize,
    /// How many of the best starts get pattern-search refinement.
    pub refine: usize,
    pub initial_step: f64,
    pub min_step: f64,
    /// Evaluation cap per refined start.
    pub max_evals: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            starts: 64,
            refine: 64,
            initial_step: 0.25,
            min_step: 1e-3,
            max_evals: 20_000,
        }
    }
}

fn check_mask(candidates: &[Actuation], mask: SolenoidMask) -> Result<(), AcquisitionError> {
    for (candidate, a) in candidates.iter().enumerate() {
        for solenoid in 0..SOLENOIDS {
            if !mask.contains(solenoid) && a.0[solenoid] != 0.0 {
                return Err(AcquisitionError::MaskViolation { candidate, solenoid });
            }
        }
    }
    Ok(())
}

/// qEI of the RMSE objective for one candidate batch, with base samples drawn from
/// `problem.seed`.
pub fn qei_composite(
    problem: &AcquisitionProblem,
    model: &GpModel,
    candidates: &[Actuation],
) -> Result<f64, AcquisitionError> {
    problem.validate()?;
    check_mask(candidates, problem.solenoid_mask)?;
    let objective = RmseObjective::new(&problem.target, problem.optimize_mask)?;
    let eval = QeiEvaluator::new(
        model,
        objective,
        problem.incumbent,
        candidates.len().max(problem.batch_size),
        problem.mc_samples,
        base_seed(problem.seed),
    );
    let xs: Vec<[f64; INPUT_DIM]> = candidates.iter().map(|a| a.0).collect();
    eval.value(&xs)
}

fn base_seed(seed: u64) -> u64 {
    mix_seed(seed, 0xba5e)
}

/// Maximizes qEI of the RMSE objective over the active-solenoid box.
pub fn optimize_batch(
    problem: &AcquisitionProblem,
    model: &GpModel,
    search: &SearchOptions,
) -> Result<CandidateBatch, AcquisitionError> {
    problem.validate()?;
    let objective = RmseObjective::new(&problem.target, problem.optimize_mask)?;
    let eval = QeiEvaluator::new(
        model,
        objective,
        problem.incumbent,
        problem.batch_size,
        problem.mc_samples,
        base_seed(problem.seed),
    );
    optimize_with(
        &eval,
        problem.solenoid_mask,
        problem.batch_size,
        problem.best_actuation,
        search,
        problem.seed,
    )
}

/// Search result with bookkeeping used by tests and logs.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTrace {
    pub start_values: Vec<f64>,
    pub evaluations: usize,
}

/// Generic multi-start pattern search of qEI over `q` candidates in the masked box.
pub fn optimize_with<O: Objective>(
    eval: &QeiEvaluator<'_, O>,
    mask: SolenoidMask,
    q: usize,
    best_actuation: Option<Actuation>,
    search: &SearchOptions,
    seed: u64,
) -> Result<CandidateBatch, AcquisitionError> {
    optimize_traced(eval, mask, q, best_actuation, search, seed).map(|(b, _)| b)
}

pub fn optimize_traced<O: Objective>(
    eval: &QeiEvaluator<'_, O>,
    mask: SolenoidMask,
    q: usize,
    best_actuation: Option<Actuation>,
    search: &SearchOptions,
    seed: u64,
) -> Result<(CandidateBatch, SearchTrace), AcquisitionError> {
    let active = mask.active();
    let dim = q * active.len();
    let to_batch = |x: &[f64]| -> Vec<[f64; INPUT_DIM]> {
        (0..q)
            .map(|j| {
                let mut a = [0.0; INPUT_DIM];
                for (k, &s) in active.iter().enumerate() {
                    a[s] = x[j * active.len() + k];
                }
                a
            })
            .collect()
    };
    let mut evaluations = 0usize;
    let mut f = |x: &[f64]| -> Result<f64, AcquisitionError> {
        evaluations += 1;
        eval.value(&to_batch(x))
    };

    if dim == 0 {
        let value = f(&[])?;
        let batch = CandidateBatch {
            actuations: vec![Actuation::ZERO; q],
            acquisition_value: value,
        };
        return Ok((
            batch,
            SearchTrace {
                start_values: vec![value],
                evaluations,
            },
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x57a7));
    let n_starts = search.starts.max(1);
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(n_starts);
    for _ in 0..n_starts {
        starts.push((0..dim).map(|_| rng.random::<f64>()).collect());
    }
    if let Some(best) = best_actuation {
        let jitter = Normal::new(0.0, 0.1).expect("valid sigma");
        let last = starts.last_mut().expect("at least one start");
        for j in 0..q {
            for (k, &s) in active.iter().enumerate() {
                last[j * active.len() + k] = (best.0[s] + jitter.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }

    let mut scored: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n_starts);
    for x in starts {
        let v = f(&x)?;
        scored.push((v, x));
    }
    let start_values: Vec<f64> = scored.iter().map(|(v, _)| *v).collect();
    // Stable: ties keep generation order.
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));

    let mut best_x = scored[order[0]].1.clone();
    let mut best_v = scored[order[0]].0;
    for &idx in order.iter().take(search.refine) {
        let (v0, x0) = scored[idx].clone();
        let (x, v) = pattern_search(&mut f, x0, v0, search)?;
        if v > best_v {
            best_v = v;
            best_x = x;
        }
    }

    let actuations = to_batch(&best_x).into_iter().map(Actuation).collect();
    Ok((
        CandidateBatch {
            actuations,
            acquisition_value: best_v,
        },
        SearchTrace {
            start_values,
            evaluations,
        },
    ))
}

/// Coordinate pattern search on `[0, 1]^d`, accepting strict improvements and
/// halving the step after a sweep without one.
fn pattern_search<F>(
    f: &mut F,
    mut x: Vec<f64>,
    mut fx: f64,
    opts: &SearchOptions,
) -> Result<(Vec<f64>, f64), AcquisitionError>
where
    F: FnMut(&[f64]) -> Result<f64, AcquisitionError>,
{
    let mut step = opts.initial_step;
    let mut evals = 0usize;
    let mut trial = x.clone();
    while step >= opts.min_step && evals < opts.max_evals {
        let mut improved = false;
        for d in 0..x.len() {
            for dir in [1.0, -1.0] {
                let moved = (x[d] + dir * step).clamp(0.0, 1.0);
                if moved == x[d] {
                    continue;
                }
                trial.copy_from_slice(&x);
                trial[d] = moved;
                let v = f(&trial)?;
                evals += 1;
                if v > fx {
                    x[d] = moved;
                    fx = v;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((x, fx))
}

/// Best objective value over observed responses.
pub fn incumbent_update<'a>(
    responses: impl IntoIterator<Item = &'a ShapeDescriptor>,
    target: &ShapeDescriptor,
    mask: SegmentMask,
) -> Result<f64, AcquisitionError> {
    let mut best: Option<f64> = None;
    for r in responses {
        let j = rmse_objective(target, r, mask)?;
        best = Some(best.map_or(j, |b: f64| b.min(j)));
    }
    best.ok_or(AcquisitionError::EmptyDataset)
}

/// Closed-form expected improvement for minimization of a Gaussian `N(μ, σ²)`.
pub fn analytic_ei(mean: f64, sd: f64, incumbent: f64) -> f64 {
    if sd <= 0.0 {
        return (incumbent - mean).max(0.0);
    }
    let z = (incumbent - mean) / sd;
    (incumbent - mean) * normal_cdf(z) + sd * normal_pdf(z)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * core::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF: rational approximation refined by one Halley step.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const LOW: f64 = 0.02425;
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * core::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Point, SEGMENTS};
    use crate::gp::{Dataset, Hyperparams};
    use crate::linalg::Matrix;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_inverts_cdf() {
        for k in 1..2000 {
            let p = k as f64 / 2000.0;
            assert_abs_diff_eq!(normal_cdf(normal_quantile(p)), p, epsilon = 1e-14);
        }
        for p in [1e-12, 1e-6, 1.0 - 1e-9] {
            assert!((normal_cdf(normal_quantile(p)) / p - 1.0).abs() < 1e-9);
        }
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn base_streams_hit_every_stratum_once() {
        let n = 512;
        let base = BaseSamples::new(n, 2, 3, 4);
        for c in 0..2 {
            for b in 0..3 {
                let mut seen = vec![false; n];
                for &z in base.block(c, b, 0, n) {
                    let k = (normal_cdf(z) * n as f64) as usize;
                    assert!(!seen[k]);
                    seen[k] = true;
                }
            }
        }
    }

    fn scalar_posterior(mean: f64, var: f64) -> Posterior {
        Posterior {
            columns: vec![0],
            means: Matrix::from_fn(1, 1, |_, _| mean),
            covariances: vec![Matrix::from_fn(1, 1, |_, _| var)],
        }
    }

    fn mc_scalar(mean: f64, sd: f64, incumbent: f64, seed: u64) -> f64 {
        let post = scalar_posterior(mean, sd * sd);
        let factors = posterior_factors(&post).unwrap();
        let base = BaseSamples::new(4096, 1, 1, seed);
        qei_from_posterior(&post, &factors, &IdentityObjective::new(0), &base, incumbent).value
    }

    #[test]
    fn deterministic_posterior_cases() {
        assert_abs_diff_eq!(mc_scalar(0.20, 0.0, 0.30, 1), 0.10, epsilon = 1e-12);
        assert_eq!(mc_scalar(0.40, 0.0, 0.30, 1), 0.0);
    }

    #[test]
    fn matches_closed_form_at_zero_gap() {
        let v = mc_scalar(0.3, 1.0, 0.3, 7);
        let exact = analytic_ei(0.3, 1.0, 0.3);
        assert_abs_diff_eq!(exact, 0.398_942, epsilon = 1e-6);
        assert!((v - exact).abs() < 0.01, "{v} vs {exact}");
    }

    #[test]
    fn prefix_batch_never_beats_superset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cov = Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.4 });
        let post = Posterior {
            columns: vec![0],
            means: Matrix::from_fn(3, 1, |i, _| 0.1 * i as f64),
            covariances: vec![cov.clone()],
        };
        let base = BaseSamples::new(1024, 1, 3, rng.random());
        let obj = IdentityObjective::new(0);
        let full = qei_from_posterior(&post, &posterior_factors(&post).unwrap(), &obj, &base, 0.0);
        let sub = Posterior {
            columns: vec![0],
            means: Matrix::from_fn(2, 1, |i, _| 0.1 * i as f64),
            covariances: vec![Matrix::from_fn(2, 2, |i, j| cov[(i, j)])],
        };
        let part = qei_from_posterior(&sub, &posterior_factors(&sub).unwrap(), &obj, &base, 0.0);
        assert!(full.value >= part.value);
    }

    #[test]
    fn incumbent_is_running_min() {
        let target = ShapeDescriptor::circle(Point::default(), 3.0);
        let with = |j: f64| {
            let mut d = target;
            d.ratios = [1.0 - j; SEGMENTS];
            d
        };
        let a = with(0.3);
        let b = with(0.25);
        let c = with(0.5);
        let j = |rs: &[ShapeDescriptor]| incumbent_update(rs.iter(), &target, SegmentMask::ALL).unwrap();
        assert_abs_diff_eq!(j(&[a]), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(j(&[a, b]), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(j(&[a, b, c]), 0.25, epsilon = 1e-12);
        assert_eq!(
            incumbent_update([].iter(), &target, SegmentMask::ALL),
            Err(AcquisitionError::EmptyDataset)
        );
    }

    fn toy_model() -> (GpModel, ShapeDescriptor) {
        let mut data = Dataset::new(SEGMENTS);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..6 {
            let mut x = [0.0; INPUT_DIM];
            x[2] = rng.random();
            x[6] = rng.random();
            let y: Vec<f64> = (0..SEGMENTS).map(|i| 1.0 - 0.1 * x[2] * (i % 3) as f64).collect();
            data.push(x, &y).unwrap();
        }
        let h = vec![
            Hyperparams {
                lengthscales: [0.5; INPUT_DIM],
                signal_variance: 0.01,
                noise_variance: 1e-6,
                constant_mean: 0.95,
            };
            SEGMENTS
        ];
        let target = ShapeDescriptor {
            ratios: core::array::from_fn(|i| 1.0 - 0.05 * (i % 3) as f64),
            center: Point::default(),
            max_radius: 3.0,
        };
        (GpModel::new(&data, h).unwrap(), target)
    }

    #[test]
    fn mask_violation_is_reported() {
        let (model, target) = toy_model();
        let problem = AcquisitionProblem {
            target,
            optimize_mask: SegmentMask::ALL,
            solenoid_mask: "N,S".parse().unwrap(),
            incumbent: 0.1,
            best_actuation: None,
            batch_size: 1,
            mc_samples: 256,
            seed: 0,
        };
        let mut a = Actuation::ZERO;
        a.0[0] = 0.5;
        assert_eq!(
            qei_composite(&problem, &model, &[a]),
            Err(AcquisitionError::MaskViolation { candidate: 0, solenoid: 0 })
        );
        a.0[0] = 0.0;
        a.0[2] = 0.5;
        let v1 = qei_composite(&problem, &model, &[a]).unwrap();
        let v2 = qei_composite(&problem, &model, &[a]).unwrap();
        assert!(v1 >= 0.0);
        assert_eq!(v1.to_bits(), v2.to_bits());
    }

    #[test]
    fn optimized_batch_respects_mask_and_beats_starts() {
        let (model, target) = toy_model();
        let problem = AcquisitionProblem {
            target,
            optimize_mask: SegmentMask::ALL,
            solenoid_mask: "N,S".parse().unwrap(),
            incumbent: 0.05,
            best_actuation: Some(Actuation([0.0, 0.0, 0.4, 0.0, 0.0, 0.0, 0.2, 0.0])),
            batch_size: 2,
            mc_samples: 256,
            seed: 3,
        };
        let objective = RmseObjective::new(&problem.target, problem.optimize_mask).unwrap();
        let eval = QeiEvaluator::new(&model, objective, problem.incumbent, 2, 256, base_seed(3));
        let search = SearchOptions {
            starts: 8,
            refine: 2,
            ..Default::default()
        };
        let (batch, trace) =
            optimize_traced(&eval, problem.solenoid_mask, 2, problem.best_actuation, &search, 3).unwrap();
        assert_eq!(batch.actuations.len(), 2);
        for a in &batch.actuations {
            assert!(a.respects(problem.solenoid_mask));
            assert!(a.in_range());
        }
        assert!(trace.start_values.iter().all(|&v| batch.acquisition_value >= v));
        let again = optimize_batch(&problem, &model, &search).unwrap();
        assert_eq!(again, batch);
    }

    #[test]
    fn empty_solenoid_mask_gives_zero_batch() {
        let (model, target) = toy_model();
        let problem = AcquisitionProblem {
            target,
            optimize_mask: SegmentMask::ALL,
            solenoid_mask: SolenoidMask::NONE,
            incumbent: 0.5,
            best_actuation: None,
            batch_size: 3,
            mc_samples: 256,
            seed: 0,
        };
        let batch = optimize_batch(&problem, &model, &SearchOptions::default()).unwrap();
        assert_eq!(batch.actuations, vec![Actuation::ZERO; 3]);
        let direct = qei_composite(&problem, &model, &[Actuation::ZERO; 3]).unwrap();
        assert_eq!(batch.acquisition_value, direct);
    }
}
