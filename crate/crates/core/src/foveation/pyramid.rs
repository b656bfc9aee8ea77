use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gimbal::GazeState;
use crate::panorama::{CameraRays, EquirectPanorama, Projection, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidConfig {
    pub levels: usize,
    pub resolution: usize,
    /// Field of view of the finest level, radians. Level `l` sees `base_fov * 2^l`.
    pub base_fov: f64,
    /// Patches per side of every level.
    pub patch_grid: usize,
    pub projection: Projection,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            levels: 4,
            resolution: 224,
            base_fov: 13.75f64.to_radians(),
            patch_grid: 16,
            projection: Projection::Pinhole,
        }
    }
}

impl PyramidConfig {
    pub fn level_fov(&self, level: usize) -> f64 {
        self.base_fov * f64::from(1u32 << level)
    }

    pub fn level_fovs(&self) -> Vec<f64> {
        (0..self.levels).map(|l| self.level_fov(l)).collect()
    }

    pub fn coarsest_fov(&self) -> f64 {
        self.level_fov(self.levels.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::Config(format!("pyramid.levels {} outside 1..=16", self.levels)));
        }
        if self.resolution == 0 || self.patch_grid == 0 {
            return Err(Error::Config("pyramid.resolution and patch_grid must be >= 1".into()));
        }
        let coarsest = self.coarsest_fov();
        let limit = match self.projection {
            Projection::Pinhole => PI,
            Projection::EquidistantFisheye => 2.0 * PI,
        };
        if !(self.base_fov > 0.0 && coarsest < limit) {
            return Err(Error::Config(format!(
                "pyramid coarsest fov {coarsest} rad (base_fov {} x 2^{}) outside (0, {limit})",
                self.base_fov,
                self.levels - 1
            )));
        }
        Ok(())
    }
}

/// N concentric renders at doubling fields of view, all at one resolution.
#[derive(Debug, Clone)]
pub struct ObservationPyramid {
    pub levels: Vec<Raster>,
    pub level_fovs: Vec<f64>,
    pub gaze: GazeState,
}

/// Precomputed camera rays for every pyramid level.
#[derive(Debug, Clone)]
pub struct PyramidRenderer {
    config: PyramidConfig,
    rays: Vec<CameraRays>,
}

impl PyramidRenderer {
    pub fn new(config: PyramidConfig) -> Result<Self> {
        config.validate()?;
        let rays = (0..config.levels)
            .map(|l| CameraRays::new(config.level_fov(l), config.resolution, config.projection))
            .collect::<Result<_>>()?;
        Ok(Self { config, rays })
    }

    pub fn config(&self) -> &PyramidConfig {
        &self.config
    }

    pub fn render(&self, p: &EquirectPanorama, gaze: &GazeState) -> ObservationPyramid {
        ObservationPyramid {
            levels: self
                .rays
                .iter()
                .map(|r| r.render(p, gaze.azimuth, gaze.elevation))
                .collect(),
            level_fovs: self.config.level_fovs(),
            gaze: *gaze,
        }
    }
}

pub fn build_pyramid(
    p: &EquirectPanorama,
    g: &GazeState,
    config: &PyramidConfig,
) -> Result<ObservationPyramid> {
    Ok(PyramidRenderer::new(*config)?.render(p, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panorama::{equirect_pixel, render_view, sample_bilinear, ViewSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_pano(seed: u64) -> EquirectPanorama {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..2 * 48 * 48).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        EquirectPanorama::new(96, 48, px).unwrap()
    }

    #[test]
    fn single_level_equals_render_view() {
        let p = noise_pano(1);
        let cfg = PyramidConfig {
            levels: 1,
            resolution: 9,
            ..Default::default()
        };
        let g = GazeState::at(0.7, -0.2);
        let pyr = build_pyramid(&p, &g, &cfg).unwrap();
        let view = render_view(
            &p,
            &ViewSpec {
                azimuth: 0.7,
                elevation: -0.2,
                fov: cfg.base_fov,
                resolution: 9,
                projection: Projection::Pinhole,
            },
        )
        .unwrap();
        assert_eq!(pyr.levels[0], view);
    }

    #[test]
    fn four_level_shape() {
        let p = noise_pano(2);
        let cfg = PyramidConfig::default();
        let pyr = build_pyramid(&p, &GazeState::default(), &cfg).unwrap();
        assert_eq!(pyr.levels.len(), 4);
        assert!(pyr.levels.iter().all(|l| l.size() == 224));
        let f0 = cfg.base_fov;
        assert_eq!(pyr.level_fovs, vec![f0, 2.0 * f0, 4.0 * f0, 8.0 * f0]);
        assert!((pyr.level_fovs[3].to_degrees() - 110.0).abs() < 1e-9);
    }

    #[test]
    fn levels_are_concentric() {
        let p = noise_pano(3);
        let cfg = PyramidConfig {
            resolution: 11,
            ..Default::default()
        };
        let g = GazeState::at(-1.3, 0.4);
        let pyr = build_pyramid(&p, &g, &cfg).unwrap();
        let (u, v) = equirect_pixel(&g.direction(), p.width(), p.height());
        let want = sample_bilinear(&p, u, v);
        for level in &pyr.levels {
            for (a, b) in level.get(5, 5).iter().zip(want) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_wide_coarsest_level() {
        let cfg = PyramidConfig {
            levels: 5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let fisheye = PyramidConfig {
            levels: 5,
            projection: Projection::EquidistantFisheye,
            ..Default::default()
        };
        assert!(fisheye.validate().is_ok());
    }
}
