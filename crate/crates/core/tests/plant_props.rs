use std::f64::consts::PI;

use ferroshape_core::plant::{radial_area, Plant, PlantError, PlantParams};
use ferroshape_core::{encode_contour, Actuation, SOLENOIDS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_free() -> PlantParams {
    PlantParams {
        obs_noise: 0.0,
        ..PlantParams::default()
    }
}

fn random_actuation(rng: &mut ChaCha8Rng) -> Actuation {
    let mut a = Actuation([0.0; SOLENOIDS]);
    for v in a.0.iter_mut() {
        if rng.random_bool(0.7) {
            *v = rng.random();
        }
    }
    a
}

#[test]
fn observed_area_tracks_spreading_within_half_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut plant = Plant::new(PlantParams::default(), 5).unwrap();
    let mut k = 0;
    while k < 500 {
        if k % 7 == 0 {
            plant.reset();
        }
        let a = random_actuation(&mut rng);
        let observed = match plant.apply_actuation(&a) {
            Ok(c) => c,
            Err(PlantError::Collapse { .. }) => {
                plant.reset();
                continue;
            }
            Err(e) => panic!("{e}"),
        };
        k += 1;
        let expected = PI * plant.params().nominal_radius.powi(2) * plant.state().spread_factor;
        let rel = (observed.area() / expected - 1.0).abs();
        assert!(rel < 5e-3, "actuation {k}: area off by {rel}");
        assert!((radial_area(&plant.state().boundary) / expected - 1.0).abs() < 1e-12);
    }
}

fn shifted(a: &Actuation, by: usize) -> Actuation {
    let mut b = Actuation([0.0; SOLENOIDS]);
    for i in 0..SOLENOIDS {
        b.0[(i + by) % SOLENOIDS] = a.0[i];
    }
    b
}

#[test]
fn rotating_actuation_by_one_solenoid_rotates_boundary_by_45_degrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = noise_free().resolution;
    for _ in 0..50 {
        let a = random_actuation(&mut rng);
        let by = rng.random_range(1..SOLENOIDS);
        let mut p = Plant::new(noise_free(), 0).unwrap();
        let mut q = Plant::new(noise_free(), 0).unwrap();
        p.apply_actuation(&a).unwrap();
        q.apply_actuation(&shifted(&a, by)).unwrap();
        let step = by * n / SOLENOIDS;
        for k in 0..n {
            let d = (q.state().boundary[(k + step) % n] - p.state().boundary[k]).abs();
            assert!(d < 1e-9, "sample {k}: {d}");
        }
    }
}

#[test]
fn north_south_mirror_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = noise_free().resolution;
    for _ in 0..50 {
        let a = random_actuation(&mut rng);
        let mut m = Actuation([0.0; SOLENOIDS]);
        for i in 0..SOLENOIDS {
            m.0[(SOLENOIDS - i) % SOLENOIDS] = a.0[i];
        }
        let mut p = Plant::new(noise_free(), 0).unwrap();
        let mut q = Plant::new(noise_free(), 0).unwrap();
        // Two steps without reset so carried-over deformation is covered too.
        let b = random_actuation(&mut rng);
        let mut bm = Actuation([0.0; SOLENOIDS]);
        for i in 0..SOLENOIDS {
            bm.0[(SOLENOIDS - i) % SOLENOIDS] = b.0[i];
        }
        p.apply_actuation(&a).unwrap();
        p.apply_actuation(&b).unwrap();
        q.apply_actuation(&m).unwrap();
        q.apply_actuation(&bm).unwrap();
        for k in 0..n {
            let d = (q.state().boundary[(n - k) % n] - p.state().boundary[k]).abs();
            assert!(d < 1e-9, "sample {k}: {d}");
        }
    }
}

#[test]
fn stronger_flux_pushes_boundary_further_in() {
    let params = noise_free();
    let mut last = f64::INFINITY;
    for step in 0..=10 {
        let mut a = Actuation([0.0; SOLENOIDS]);
        a.0[0] = step as f64 / 10.0;
        let p = Plant::new(params, 0).unwrap();
        let r = p.settled_boundary(&a).unwrap();
        // Radius facing the East solenoid, relative to the mean radius.
        let rel = r[0] / (r.iter().sum::<f64>() / r.len() as f64);
        assert!(rel < last || step == 0, "flux {step}: {rel} >= {last}");
        last = rel;
    }
    assert!(last < 0.97);
}

#[test]
fn zero_actuation_keeps_a_circle() {
    let mut p = Plant::new(noise_free(), 0).unwrap();
    let c = p.apply_actuation(&Actuation([0.0; SOLENOIDS])).unwrap();
    let d = encode_contour(&c).unwrap();
    assert!(d.ratios.iter().all(|r| (r - 1.0).abs() < 1e-6));
}

#[test]
fn spreading_and_reset_follow_the_clock() {
    let params = noise_free();
    let mut p = Plant::new(params, 0).unwrap();
    p.apply_actuation(&Actuation([0.5; SOLENOIDS])).unwrap();
    assert!((p.state().clock - 5.0).abs() < 1e-12);
    let rep = p.reset();
    assert!((p.state().clock - 13.0).abs() < 1e-12);
    // Reset circularizes but does not spread.
    let s = (params.spread_rate * 5.0).exp();
    assert!((p.state().spread_factor - s).abs() < 1e-12);
    assert!((rep.radius - params.nominal_radius * s.sqrt()).abs() < 1e-12);
    assert!(p.state().boundary.iter().all(|&r| r == rep.radius));
    p.step_spreading(100.0);
    let s = s * (params.spread_rate * 100.0).exp();
    assert!((p.state().spread_factor - s).abs() < 1e-12);
}

#[test]
fn out_of_range_actuation_is_rejected_without_touching_state() {
    let mut p = Plant::new(PlantParams::default(), 9).unwrap();
    p.apply_actuation(&Actuation([0.3; SOLENOIDS])).unwrap();
    let before = p.state().clone();
    for bad in [-0.01, 1.01, f64::NAN] {
        let mut a = Actuation([0.0; SOLENOIDS]);
        a.0[2] = bad;
        assert!(matches!(p.apply_actuation(&a), Err(PlantError::ActuationOutOfRange { index: 2, .. })));
        assert_eq!(p.state(), &before);
    }
}

#[test]
fn invalid_params_are_rejected() {
    let strong = PlantParams {
        repulsion_gain: 1.0,
        ..PlantParams::default()
    };
    assert!(Plant::new(strong, 0).is_err());
    let odd = PlantParams {
        resolution: 100,
        ..PlantParams::default()
    };
    assert!(Plant::new(odd, 0).is_err());
}
