//! Initial experiment designs.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actuation::{Actuation, SolenoidMask};

/// Minimum max-norm separation between design points.
pub const MIN_SEPARATION: f64 = 1e-6;

/// Stratified (Latin hypercube) design of `n` actuations over the active box.
///
/// The first point is always the zero actuation. The remaining `n - 1` points
/// put exactly one sample in each of `n - 1` strata along every active axis.
/// Inactive solenoids stay at zero. With an empty mask every point is zero.
pub fn init_design(n: usize, mask: SolenoidMask, seed: u64) -> Vec<Actuation> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    out.push(Actuation::ZERO);
    let m = n - 1;
    if m == 0 {
        return out;
    }
    let active = mask.active();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut points = alloc::vec![Actuation::ZERO; m];
        for &s in &active {
            let mut strata: Vec<usize> = (0..m).collect();
            strata.shuffle(&mut rng);
            for (p, k) in points.iter_mut().zip(strata) {
                p.0[s] = (k as f64 + rng.random::<f64>()) / m as f64;
            }
        }
        if active.is_empty() || separated(&out[0], &points) {
            out.extend(points);
            return out;
        }
    }
}

fn separated(zero: &Actuation, points: &[Actuation]) -> bool {
    points.iter().enumerate().all(|(i, p)| {
        p.max_norm_distance(zero) >= MIN_SEPARATION
            && points[..i].iter().all(|q| p.max_norm_distance(q) >= MIN_SEPARATION)
    })
}

/// `n` independent uniform actuations over the active box.
pub fn random_design(n: usize, mask: SolenoidMask, rng: &mut impl Rng) -> Vec<Actuation> {
    (0..n)
        .map(|_| {
            let mut a = Actuation::ZERO;
            for s in mask.iter() {
                a.0[s] = rng.random::<f64>();
            }
            a
        })
        .collect()
}
