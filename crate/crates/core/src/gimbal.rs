//! The simulated eye: pan/tilt gaze state driven by a 9-way discrete action.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panorama::{dir_from_angles, wrap_angle, Direction};

pub const NUM_ACTIONS: usize = 9;
pub const STAY: usize = 8;

/// Compass directions (Δazimuth, Δelevation), counterclockwise from east.
const COMPASS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (1.0, 1.0),
    (0.0, 1.0),
    (-1.0, 1.0),
    (-1.0, 0.0),
    (-1.0, -1.0),
    (0.0, -1.0),
    (1.0, -1.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GimbalConfig {
    /// Radians of commanded motion per environment step.
    pub step_size: f64,
    pub elev_limit: f64,
    /// EMA weight on the newest command.
    pub smoothing_alpha: f64,
    pub diagonal_normalized: bool,
}

impl Default for GimbalConfig {
    fn default() -> Self {
        Self {
            step_size: 3f64.to_radians(),
            elev_limit: 60f64.to_radians(),
            smoothing_alpha: 0.3,
            diagonal_normalized: true,
        }
    }
}

impl GimbalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("gimbal.step_size {} must be > 0", self.step_size)));
        }
        if !(self.elev_limit > 0.0 && self.elev_limit <= FRAC_PI_2) {
            return Err(Error::Config(format!(
                "gimbal.elev_limit {} outside (0, pi/2]",
                self.elev_limit
            )));
        }
        if !(self.smoothing_alpha > 0.0 && self.smoothing_alpha <= 1.0) {
            return Err(Error::Config(format!(
                "gimbal.smoothing_alpha {} outside (0, 1]",
                self.smoothing_alpha
            )));
        }
        Ok(())
    }
}

/// Unit (Δazimuth, Δelevation) for action `a`; index 8 is "stay".
pub fn action_direction(a: usize, diagonal_normalized: bool) -> Result<(f64, f64)> {
    match a {
        STAY => Ok((0.0, 0.0)),
        0..=7 => {
            let (da, de) = COMPASS[a];
            if diagonal_normalized && da != 0.0 && de != 0.0 {
                Ok((da * FRAC_1_SQRT_2, de * FRAC_1_SQRT_2))
            } else {
                Ok((da, de))
            }
        }
        _ => Err(Error::InvalidAction(a)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GazeState {
    pub azimuth: f64,
    pub elevation: f64,
    /// Smoothed (Δazimuth, Δelevation) per step.
    pub velocity: [f64; 2],
}

impl GazeState {
    pub fn at(azimuth: f64, elevation: f64) -> Self {
        Self {
            azimuth: wrap_angle(azimuth),
            elevation,
            velocity: [0.0; 2],
        }
    }

    pub fn direction(&self) -> Direction {
        dir_from_angles(self.azimuth, self.elevation)
    }

    pub fn step(&self, a: usize, c: &GimbalConfig) -> Result<Self> {
        step_gaze(self, a, c)
    }

    /// Uniform in ±90° azimuth and ±15° elevation around neutral, at rest.
    pub fn random_init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let azimuth = rng.gen_range(-FRAC_PI_2..=FRAC_PI_2);
        let elevation = rng.gen_range(-PI / 12.0..=PI / 12.0);
        Self {
            azimuth,
            elevation,
            velocity: [0.0; 2],
        }
    }
}

pub fn step_gaze(s: &GazeState, a: usize, c: &GimbalConfig) -> Result<GazeState> {
    let (da, de) = action_direction(a, c.diagonal_normalized)?;
    let alpha = c.smoothing_alpha;
    let velocity = [
        (1.0 - alpha) * s.velocity[0] + alpha * da * c.step_size,
        (1.0 - alpha) * s.velocity[1] + alpha * de * c.step_size,
    ];
    Ok(GazeState {
        azimuth: wrap_angle(s.azimuth + velocity[0]),
        elevation: (s.elevation + velocity[1]).clamp(-c.elev_limit, c.elev_limit),
        velocity,
    })
}
