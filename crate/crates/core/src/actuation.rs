//! Solenoid layout and the normalized actuation vector.

use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use alloc::string::String;
use alloc::vec::Vec;

/// Number of solenoids around the dish.
pub const SOLENOIDS: usize = 8;

/// Flux density at the solenoid tip for a normalized command of 1.0, in mT.
pub const MAX_FLUX_MT: f64 = 25.0;

/// Compass labels, counter-clockwise from East. Solenoid `i` sits at bearing `2πi/8`.
pub const SOLENOID_NAMES: [&str; SOLENOIDS] = ["E", "NE", "N", "NW", "W", "SW", "S", "SE"];

/// Bearing of solenoid `i` in radians, measured counter-clockwise from +x.
pub fn solenoid_bearing(i: usize) -> f64 {
    2.0 * PI * i as f64 / SOLENOIDS as f64
}

/// Eight normalized solenoid commands in `[0, 1]`; `1.0` maps to 25 mT at the tip.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Actuation(pub [f64; SOLENOIDS]);

impl Actuation {
    pub const ZERO: Actuation = Actuation([0.0; SOLENOIDS]);

    pub fn in_range(&self) -> bool {
        self.0.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Tip flux densities in mT.
    pub fn flux_mt(&self) -> [f64; SOLENOIDS] {
        self.0.map(|a| a * MAX_FLUX_MT)
    }

    pub fn respects(&self, mask: SolenoidMask) -> bool {
        self.0
            .iter()
            .enumerate()
            .all(|(i, &v)| mask.contains(i) || v == 0.0)
    }

    pub fn max_norm_distance(&self, other: &Actuation) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Set of solenoids allowed a nonzero command.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SolenoidMask(u8);

impl SolenoidMask {
    pub const ALL: SolenoidMask = SolenoidMask(0xff);
    pub const NONE: SolenoidMask = SolenoidMask(0);

    pub fn from_bits(bits: u8) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = 0u8;
        for i in indices {
            assert!(i < SOLENOIDS, "solenoid index {i} out of range");
            bits |= 1 << i;
        }
        Self(bits)
    }

    pub fn contains(self, i: usize) -> bool {
        i < SOLENOIDS && self.0 & (1 << i) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..SOLENOIDS).filter(move |&i| self.contains(i))
    }

    pub fn active(self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl fmt::Debug for SolenoidMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SolenoidMask({self})")
    }
}

/// Comma-separated compass names, e.g. `NW,NE,S`. Empty mask prints as `none`.
impl fmt::Display for SolenoidMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let mut first = true;
        for i in self.iter() {
            if !first {
                f.write_str(",")?;
            }
            f.write_str(SOLENOID_NAMES[i])?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for SolenoidMask {
    type Err = String;

    /// Accepts compass names (`N,E,W,S`), `all`, or `none`. Case-insensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::ALL);
        }
        if s.eq_ignore_ascii_case("none") || s.is_empty() {
            return Ok(Self::NONE);
        }
        let mut bits = 0u8;
        for token in s.split(',') {
            let token = token.trim();
            let idx = SOLENOID_NAMES
                .iter()
                .position(|n| n.eq_ignore_ascii_case(token))
                .ok_or_else(|| alloc::format!("unknown solenoid `{token}`"))?;
            bits |= 1 << idx;
        }
        Ok(Self(bits))
    }
}
