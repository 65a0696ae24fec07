use ferroshape_core::gp::{
    fit, initial_hyperparams, log_marginal_likelihood, matern52_ard, Dataset, FitOptions, GpModel, Hyperparams,
    INPUT_DIM, N_PARAMS, NOISE_VARIANCE_BOUNDS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_inputs(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; INPUT_DIM]> {
    (0..n).map(|_| core::array::from_fn(|_| rng.random())).collect()
}

fn random_hyperparams(rng: &mut ChaCha8Rng) -> Hyperparams {
    Hyperparams {
        lengthscales: core::array::from_fn(|_| 10f64.powf(rng.random_range(-0.7..0.5))),
        signal_variance: 10f64.powf(rng.random_range(-1.0..1.0)),
        noise_variance: 10f64.powf(rng.random_range(-3.0..-1.0)),
        constant_mean: rng.random_range(-1.0..1.0),
    }
}

#[test]
fn likelihood_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = random_inputs(&mut rng, 10);
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[2] + 0.1 * rng.random::<f64>()).collect();
        let h = random_hyperparams(&mut rng);
        let (_, grad) = log_marginal_likelihood(&x, &y, &h, 0).unwrap();
        let p0 = h.to_params();
        for k in 0..N_PARAMS {
            let at = |d: f64| {
                let mut p = p0;
                p[k] += d;
                log_marginal_likelihood(&x, &y, &Hyperparams::from_params(&p), 0).unwrap().0
            };
            let fd = (at(step) - at(-step)) / (2.0 * step);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "parameter {k}: analytic {} vs numeric {fd}", grad[k]);
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn likelihood_matches_dense_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_inputs(&mut rng, 6);
    let y: Vec<f64> = (0..6).map(|_| rng.random()).collect();
    let h = random_hyperparams(&mut rng);
    let n = x.len();
    // Dense Gaussian elimination, independent of the Cholesky path.
    let mut k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| matern52_ard(&x[i], &x[j], &h) + if i == j { h.noise_variance } else { 0.0 }).collect())
        .collect();
    let mut r: Vec<f64> = y.iter().map(|v| v - h.constant_mean).collect();
    let r0 = r.clone();
    let mut log_det = 0.0;
    for c in 0..n {
        let piv = k[c][c];
        log_det += piv.ln();
        for i in c + 1..n {
            let f = k[i][c] / piv;
            for j in c..n {
                k[i][j] -= f * k[c][j];
            }
            r[i] -= f * r[c];
        }
    }
    let mut alpha = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| k[i][j] * alpha[j]).sum();
        alpha[i] = (r[i] - s) / k[i][i];
    }
    let fit_term: f64 = r0.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let expected = -0.5 * fit_term - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    let (got, _) = log_marginal_likelihood(&x, &y, &h, 0).unwrap();
    assert!((got - expected).abs() < 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
}

#[test]
fn matern_kernel_closed_form() {
    let h = Hyperparams {
        lengthscales: [0.5, 1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        signal_variance: 2.0,
        ..Hyperparams::default()
    };
    let a = [0.0; INPUT_DIM];
    let mut b = [0.0; INPUT_DIM];
    b[0] = 0.3;
    b[2] = 0.8;
    let r = ((0.3f64 / 0.5).powi(2) + (0.8f64 / 2.0).powi(2)).sqrt();
    let s5 = 5f64.sqrt() * r;
    let expected = 2.0 * (1.0 + s5 + 5.0 * r * r / 3.0) * (-s5).exp();
    assert!((matern52_ard(&a, &b, &h) - expected).abs() < 1e-12);
    assert_eq!(matern52_ard(&a, &a, &h), 2.0);
}

#[test]
fn noise_free_posterior_interpolates_training_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let x = random_inputs(&mut rng, 10);
        let mut data = Dataset::new(3);
        for p in &x {
            data.push(*p, &[p[0].sin(), p[1] * p[3], rng.random_range(-2.0..2.0)]).unwrap();
        }
        let mut hs = initial_hyperparams(&data);
        for h in hs.iter_mut() {
            h.noise_variance = NOISE_VARIANCE_BOUNDS.0;
            h.lengthscales = [0.4; INPUT_DIM];
        }
        let post = GpModel::new(&data, hs).unwrap().predict(&x);
        for (i, row) in data.outputs().iter().enumerate() {
            for c in 0..3 {
                let err = (post.means[(i, c)] - row[c]).abs();
                assert!(err < 1e-3, "point {i} column {c}: {err}");
                assert!(post.covariances[c][(i, i)] < 1e-3);
            }
        }
    }
}

fn synthetic(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Dataset::new(3);
    for p in random_inputs(&mut rng, n) {
        let noise = 0.01 * (rng.random::<f64>() - 0.5);
        data.push(p, &[(2.0 * p[0]).sin() + noise, p[1] * p[1] - 0.5 * p[0], 1.0 + 0.1 * p[4]]).unwrap();
    }
    data
}

#[test]
fn fitted_model_recovers_smooth_function() {
    let data = synthetic(40, 2);
    let report = fit(&data, &initial_hyperparams(&data), &FitOptions::default()).unwrap();
    for w in report.traces.iter() {
        assert!(w.windows(2).all(|p| p[1] >= p[0] - 1e-9), "likelihood trace decreased");
    }
    let model = GpModel::new(&data, report.hyperparams.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let test = random_inputs(&mut rng, 50);
    let post = model.predict(&test);
    let mse: f64 = test
        .iter()
        .enumerate()
        .map(|(i, p)| (post.means[(i, 0)] - (2.0 * p[0]).sin()).powi(2))
        .sum::<f64>()
        / test.len() as f64;
    assert!(mse.sqrt() < 0.05, "held-out rmse {}", mse.sqrt());
    // Column 0 depends only on input 0: its lengthscale is the shortest.
    let l = report.hyperparams[0].lengthscales;
    assert!(l[1..].iter().all(|&v| v > l[0]), "{l:?}");
}

#[test]
fn permuting_outputs_permutes_the_fit() {
    let data = synthetic(15, 4);
    let opts = FitOptions {
        restarts: 3,
        max_iters: 60,
        seed: 17,
    };
    let perm = [2, 0, 1];
    let a = fit(&data, &initial_hyperparams(&data), &opts).unwrap();
    let pd = data.permute_columns(&perm);
    let b = fit(&pd, &initial_hyperparams(&pd), &opts).unwrap();
    for (k, &p) in perm.iter().enumerate() {
        assert_eq!(b.hyperparams[k], a.hyperparams[p]);
        assert_eq!(b.log_likelihoods[k], a.log_likelihoods[p]);
    }
    let q = [[0.3; INPUT_DIM]];
    let pa = GpModel::new(&data, a.hyperparams).unwrap().predict(&q);
    let pb = GpModel::new(&pd, b.hyperparams).unwrap().predict(&q);
    for (k, &p) in perm.iter().enumerate() {
        assert_eq!(pb.means[(0, k)], pa.means[(0, p)]);
    }
}

#[test]
fn fit_is_deterministic_for_a_seed() {
    let data = synthetic(12, 6);
    let opts = FitOptions {
        restarts: 2,
        max_iters: 40,
        seed: 3,
    };
    let a = fit(&data, &initial_hyperparams(&data), &opts).unwrap();
    let b = fit(&data, &initial_hyperparams(&data), &opts).unwrap();
    assert_eq!(a, b);
}
