//! Phenomenological model of an oil droplet floating on a ferrofluid surface
//! ringed by eight solenoids.
//!
//! The droplet boundary is a radial function `r(θ)` on a uniform angular grid.
//! An actuation pushes the boundary inward with a Gaussian bump per solenoid of
//! depth `α·B²`, a few passes of a circular `(¼, ½, ¼)` kernel stand in for
//! surface tension, and the result is rescaled to the enclosed area `π·r0²·s`.
//! The spread factor `s` grows as `exp(λ·t)` and never shrinks. Observation
//! noise perturbs only the returned contour, never the state.

use core::f64::consts::PI;

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::actuation::{solenoid_bearing, Actuation, MAX_FLUX_MT, SOLENOIDS};
use crate::codec::{Contour, Point};

/// Seconds of centering at full field before each trial.
pub const CENTERING_SECONDS: f64 = 5.0;
/// Tip flux density used for centering, mT.
pub const CENTERING_FLUX_MT: f64 = 39.0;
/// Seconds of decaying sinusoidal demagnetization after centering.
pub const DEMAG_SECONDS: f64 = 3.0;
pub const RAMP_SECONDS: f64 = 1.0;
pub const HOLD_SECONDS: f64 = 4.0;

/// Demagnetization current `I(t) = A·e^{−k t}·sin(ω t)`. Logged only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemagWaveform {
    pub amplitude_a: f64,
    pub decay_rate: f64,
    pub angular_frequency: f64,
    pub duration_s: f64,
}

pub const DEMAG: DemagWaveform = DemagWaveform {
    amplitude_a: 2.0,
    decay_rate: 2.5,
    angular_frequency: 50.0,
    duration_s: DEMAG_SECONDS,
};

impl DemagWaveform {
    pub fn current(&self, t: f64) -> f64 {
        self.amplitude_a * (-self.decay_rate * t).exp() * (self.angular_frequency * t).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("actuation {index} = {value} is outside [0, 1]")]
    ActuationOutOfRange { index: usize, value: f64 },
    #[error("droplet boundary collapsed to {min_radius} mm")]
    Collapse { min_radius: f64 },
    #[error("invalid plant parameters: {0}")]
    InvalidParams(&'static str),
}

/// Simulator constants. Magnitudes are synthetic; only their qualitative roles
/// (repulsion, smoothing, spreading, noise) follow the physical rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantParams {
    /// Unspread droplet radius, mm.
    pub nominal_radius: f64,
    /// Dish radius, mm; must exceed the nominal radius.
    pub dish_radius: f64,
    /// Inward deformation per mT² of tip flux, mm/mT².
    pub repulsion_gain: f64,
    /// Angular half-width of one interface bump, rad.
    pub bump_width: f64,
    pub smoothing_passes: usize,
    /// Spreading rate λ, 1/s.
    pub spread_rate: f64,
    /// Radial observation noise σ, mm. Zero gives a noise-free plant.
    pub obs_noise: f64,
    /// Boundary samples.
    pub resolution: usize,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            nominal_radius: 3.0,
            dish_radius: 7.375,
            repulsion_gain: 2.4e-3,
            bump_width: 0.35,
            smoothing_passes: 2,
            spread_rate: 2e-3,
            obs_noise: 0.02,
            resolution: 256,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            self.nominal_radius,
            self.dish_radius,
            self.repulsion_gain,
            self.bump_width,
            self.spread_rate,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(PlantError::InvalidParams("parameters must be positive and finite"));
        }
        if !(self.obs_noise >= 0.0) || !self.obs_noise.is_finite() {
            return Err(PlantError::InvalidParams("obs_noise must be non-negative"));
        }
        if self.resolution < 32 || !self.resolution.is_multiple_of(SOLENOIDS) {
            return Err(PlantError::InvalidParams("resolution must be a multiple of 8, at least 32"));
        }
        if self.repulsion_gain * MAX_FLUX_MT * MAX_FLUX_MT >= self.nominal_radius {
            return Err(PlantError::InvalidParams("full actuation would collapse the droplet"));
        }
        if self.dish_radius <= self.nominal_radius {
            return Err(PlantError::InvalidParams("droplet larger than the dish"));
        }
        Ok(())
    }

    /// Sample angles `2πk/resolution`.
    pub fn angles(&self) -> Vec<f64> {
        (0..self.resolution)
            .map(|k| 2.0 * PI * k as f64 / self.resolution as f64)
            .collect()
    }
}

/// Simulated droplet: noise-free boundary, spread factor, clock and noise stream.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub boundary: Vec<f64>,
    pub spread_factor: f64,
    pub clock: f64,
    rng: ChaCha8Rng,
}

impl PlantState {
    pub fn new(params: &PlantParams, seed: u64) -> Self {
        Self {
            boundary: vec![params.nominal_radius; params.resolution],
            spread_factor: 1.0,
            clock: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Boundary as `(x, y)` points around the origin.
    pub fn contour(&self) -> Contour {
        radial_contour(&self.boundary)
    }
}

fn radial_contour(r: &[f64]) -> Contour {
    let n = r.len();
    Contour::new(
        r.iter()
            .enumerate()
            .map(|(k, &rk)| {
                let t = 2.0 * PI * k as f64 / n as f64;
                Point::new(rk * t.cos(), rk * t.sin())
            })
            .collect(),
    )
}

/// Shoelace area of the polygon through the radial samples.
pub fn radial_area(r: &[f64]) -> f64 {
    let n = r.len();
    let s = (2.0 * PI / n as f64).sin();
    0.5 * s * (0..n).map(|k| r[k] * r[(k + 1) % n]).sum::<f64>()
}

/// What a reset did, for the experiment log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResetReport {
    pub centering_flux_mt: f64,
    pub centering_s: f64,
    pub demag: DemagWaveform,
    pub radius: f64,
}

/// Angular distance wrapped into `[−π, π)`.
fn wrapped_delta(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % (2.0 * PI);
    if d >= PI {
        d -= 2.0 * PI;
    } else if d < -PI {
        d += 2.0 * PI;
    }
    d
}

/// Droplet simulator owning its parameters and state.
#[derive(Debug, Clone)]
pub struct Plant {
    params: PlantParams,
    state: PlantState,
    angles: Vec<f64>,
}

impl Plant {
    pub fn new(params: PlantParams, seed: u64) -> Result<Self, PlantError> {
        params.validate()?;
        Ok(Self {
            state: PlantState::new(&params, seed),
            angles: params.angles(),
            params,
        })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    /// Area the boundary must enclose at the current spread factor.
    pub fn target_area(&self) -> f64 {
        PI * self.params.nominal_radius * self.params.nominal_radius * self.state.spread_factor
    }

    /// Centers and circularizes the droplet: circle of radius `r0·√s`, 8 s elapsed.
    pub fn reset(&mut self) -> ResetReport {
        let radius = self.params.nominal_radius * self.state.spread_factor.sqrt();
        self.state.boundary.iter_mut().for_each(|r| *r = radius);
        self.state.clock += CENTERING_SECONDS + DEMAG_SECONDS;
        ResetReport {
            centering_flux_mt: CENTERING_FLUX_MT,
            centering_s: CENTERING_SECONDS,
            demag: DEMAG,
            radius,
        }
    }

    /// Raw inward deformation `−Σ α·B_i²·exp(−Δθ²/2w²)` at every sample angle.
    pub fn deformation(&self, a: &Actuation) -> Vec<f64> {
        let p = &self.params;
        let flux = a.flux_mt();
        let inv_two_w2 = 1.0 / (2.0 * p.bump_width * p.bump_width);
        self.angles
            .iter()
            .map(|&t| {
                let mut d = 0.0;
                for i in 0..SOLENOIDS {
                    if flux[i] == 0.0 {
                        continue;
                    }
                    let delta = wrapped_delta(t, solenoid_bearing(i));
                    d -= p.repulsion_gain * flux[i] * flux[i] * (-delta * delta * inv_two_w2).exp();
                }
                d
            })
            .collect()
    }

    /// Deformed, smoothed and area-rescaled boundary for `a`, without touching the state.
    pub fn settled_boundary(&self, a: &Actuation) -> Result<Vec<f64>, PlantError> {
        for (index, &value) in a.0.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(PlantError::ActuationOutOfRange { index, value });
            }
        }
        let mut r: Vec<f64> = self
            .state
            .boundary
            .iter()
            .zip(self.deformation(a))
            .map(|(r, d)| r + d)
            .collect();
        let min_radius = r.iter().copied().fold(f64::INFINITY, f64::min);
        if min_radius <= 0.1 * self.params.nominal_radius {
            return Err(PlantError::Collapse { min_radius });
        }
        let n = r.len();
        let mut tmp = vec![0.0; n];
        for _ in 0..self.params.smoothing_passes {
            for k in 0..n {
                tmp[k] = 0.25 * r[(k + n - 1) % n] + 0.5 * r[k] + 0.25 * r[(k + 1) % n];
            }
            core::mem::swap(&mut r, &mut tmp);
        }
        let scale = (self.target_area() / radial_area(&r)).sqrt();
        r.iter_mut().for_each(|v| *v *= scale);
        Ok(r)
    }

    /// Ramps to `a`, holds, and returns the observed (noisy) contour. The state
    /// keeps the noise-free boundary; 5 s of spreading are applied.
    pub fn apply_actuation(&mut self, a: &Actuation) -> Result<Contour, PlantError> {
        let settled = self.settled_boundary(a)?;
        self.state.boundary = settled;
        self.step_spreading(RAMP_SECONDS + HOLD_SECONDS);
        let observed: Vec<f64> = if self.params.obs_noise > 0.0 {
            let noise = Normal::new(0.0, self.params.obs_noise).expect("validated sigma");
            let rng = &mut self.state.rng;
            self.state
                .boundary
                .iter()
                .map(|r| r + noise.sample(rng))
                .collect()
        } else {
            self.state.boundary.clone()
        };
        Ok(radial_contour(&observed))
    }

    /// Grows the spread factor by `exp(λ·dt)` and the boundary by its square root.
    pub fn step_spreading(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let growth = (self.params.spread_rate * dt).exp();
        self.state.spread_factor *= growth;
        let s = growth.sqrt();
        self.state.boundary.iter_mut().for_each(|r| *r *= s);
        self.state.clock += dt;
    }
}
