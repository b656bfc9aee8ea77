//! Equirectangular panoramas and view rendering by spherical resampling.
//!
//! World frame: x right, y up, z forward. Azimuth is measured from +z toward
//! +x, elevation from the horizontal plane toward +y. Texel `(i, j)` of a
//! panorama is centered at continuous pixel coordinate `(i, j)`; `u` grows with
//! azimuth and wraps at the seam, `v` grows downward from the north pole.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

/// A unit-length world-frame ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vector3<f64>);

impl Direction {
    /// Normalizes `v`. Returns `None` for zero or non-finite input.
    pub fn new(v: Vector3<f64>) -> Option<Self> {
        let n = v.norm();
        if n.is_finite() && n > 0.0 {
            Some(Direction(v / n))
        } else {
            None
        }
    }

    pub fn forward() -> Self {
        Direction(Vector3::z())
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.0.dot(&other.0)
    }

    /// Geodesic angle between two directions, in radians.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        // atan2 form stays accurate for nearly parallel rays where acos does not.
        let cross = self.0.cross(&other.0).norm();
        cross.atan2(self.dot(other))
    }
}

pub fn dir_from_angles(azimuth: f64, elevation: f64) -> Direction {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    Direction(Vector3::new(ce * sa, se, ce * ca))
}

/// Inverse of [`dir_from_angles`]. Azimuth lies in `(-π, π]` and is 0 at the poles.
pub fn angles_from_dir(d: &Direction) -> (f64, f64) {
    let y = d.y().clamp(-1.0, 1.0);
    let elevation = y.asin();
    if (1.0 - y.abs()) <= 1e-12 {
        return (0.0, elevation);
    }
    let mut azimuth = d.x().atan2(d.z());
    if azimuth <= -PI {
        azimuth = PI;
    }
    (azimuth, elevation)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        PI
    } else {
        w
    }
}

/// Continuous pixel coordinates of `d` in a `width x height` equirectangular raster.
pub fn equirect_pixel(d: &Direction, width: usize, height: usize) -> (f64, f64) {
    let (az, el) = angles_from_dir(d);
    let w = width as f64;
    let h = height as f64;
    let u = ((az / TAU + 0.5) * w).rem_euclid(w);
    // rem_euclid can round up to exactly w for tiny negative inputs
    let u = if u >= w { 0.0 } else { u };
    let v = ((0.5 - el / PI) * h).clamp(0.0, h.next_down());
    (u, v)
}

/// Full-sphere RGB raster with `width == 2 * height`, channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectPanorama {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl EquirectPanorama {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if height == 0 || width != 2 * height {
            return Err(Error::InvalidPanorama(format!(
                "size {width}x{height} is not 2:1 with height >= 1"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidPanorama(format!(
                "expected {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels
            .iter()
            .flatten()
            .find(|c| !(0.0..=1.0).contains(*c))
        {
            return Err(Error::InvalidPanorama(format!(
                "channel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(height: usize, color: Rgb) -> Result<Self> {
        Self::new(2 * height, height, vec![color; 2 * height * height])
    }

    /// Builds a panorama by evaluating `f` at the direction of every texel center.
    pub fn from_fn(height: usize, mut f: impl FnMut(Direction) -> Rgb) -> Result<Self> {
        let width = 2 * height;
        let mut pixels = Vec::with_capacity(width * height);
        for j in 0..height {
            let el = (0.5 - j as f64 / height as f64) * PI;
            for i in 0..width {
                let az = (i as f64 / width as f64 - 0.5) * TAU;
                let c = f(dir_from_angles(az, el));
                pixels.push(c.map(|x| x.clamp(0.0, 1.0)));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = img
            .pixels()
            .map(|p| p.0.map(|c| f64::from(c) / 255.0))
            .collect();
        Self::new(w, h, pixels).map_err(|e| match e {
            Error::InvalidPanorama(m) => Error::InvalidPanorama(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_rgb_png(path.as_ref(), self.width, self.height, &self.pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn texel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    /// Horizontal roll: texel `i` of the result is texel `i + k` (mod width) of `self`.
    pub fn roll(&self, k: isize) -> Self {
        let w = self.width as isize;
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width) {
            for i in 0..w {
                pixels.push(row[(i + k).rem_euclid(w) as usize]);
            }
        }
        Self {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub fn sample_dir(&self, d: &Direction) -> Rgb {
        let (u, v) = equirect_pixel(d, self.width, self.height);
        sample_bilinear(self, u, v)
    }
}

/// Bilinear sample with horizontal wraparound and vertical clamping.
pub fn sample_bilinear(p: &EquirectPanorama, u: f64, v: f64) -> Rgb {
    let w = p.width as f64;
    let u = u.rem_euclid(w);
    let v = v.clamp(0.0, (p.height - 1) as f64);
    let u0 = u.floor();
    let v0 = v.floor();
    let fu = u - u0;
    let fv = v - v0;
    let x0 = (u0 as usize) % p.width;
    let x1 = (x0 + 1) % p.width;
    let y0 = v0 as usize;
    let y1 = (y0 + 1).min(p.height - 1);

    let a = p.texel(x0, y0);
    let b = p.texel(x1, y0);
    let c = p.texel(x0, y1);
    let d = p.texel(x1, y1);
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] + (b[k] - a[k]) * fu;
        let bottom = c[k] + (d[k] - c[k]) * fu;
        // convex blend of values in [0, 1]; clamp guards only against rounding
        out[k] = (top + (bottom - top) * fv).clamp(0.0, 1.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    #[default]
    Pinhole,
    EquidistantFisheye,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub azimuth: f64,
    pub elevation: f64,
    /// Horizontal field of view in radians.
    pub fov: f64,
    pub resolution: usize,
    pub projection: Projection,
}

impl ViewSpec {
    pub fn validate(&self) -> Result<()> {
        validate_fov(self.fov, self.projection)?;
        if self.resolution == 0 {
            return Err(Error::InvalidView("resolution must be >= 1".into()));
        }
        if !self.azimuth.is_finite() || !self.elevation.is_finite() {
            return Err(Error::InvalidView("gaze angles must be finite".into()));
        }
        if self.elevation.abs() > FRAC_PI_2 {
            return Err(Error::InvalidView(format!(
                "elevation {} outside [-pi/2, pi/2]",
                self.elevation
            )));
        }
        Ok(())
    }
}

pub fn validate_fov(fov: f64, projection: Projection) -> Result<()> {
    let max = match projection {
        Projection::Pinhole => PI,
        Projection::EquidistantFisheye => TAU,
    };
    if fov.is_finite() && fov > 0.0 && fov < max {
        Ok(())
    } else {
        Err(Error::InvalidView(format!(
            "fov {fov} rad outside (0, {max}) for {projection:?} projection"
        )))
    }
}

/// Square RGB image, row-major from the top-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    size: usize,
    pixels: Vec<Rgb>,
}

impl Raster {
    pub fn new(size: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != size * size {
            return Err(Error::DimensionMismatch {
                context: "raster pixels",
                expected: size * size,
                actual: pixels.len(),
            });
        }
        Ok(Self { size, pixels })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.size + x]
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_rgb_png(path.as_ref(), self.size, self.size, &self.pixels)
    }
}

fn save_rgb_png(path: &Path, width: usize, height: usize, pixels: &[Rgb]) -> Result<()> {
    let bytes: Vec<u8> = pixels
        .iter()
        .flat_map(|c| c.map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    image::save_buffer(
        path,
        &bytes,
        width as u32,
        height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Camera-frame rays for one (fov, resolution, projection) triple.
///
/// Rays depend only on the intrinsics, so pyramids and environments build
/// them once and rotate them per gaze.
#[derive(Debug, Clone)]
pub struct CameraRays {
    fov: f64,
    resolution: usize,
    projection: Projection,
    rays: Vec<Vector3<f64>>,
}

impl CameraRays {
    pub fn new(fov: f64, resolution: usize, projection: Projection) -> Result<Self> {
        validate_fov(fov, projection)?;
        if resolution == 0 {
            return Err(Error::InvalidView("resolution must be >= 1".into()));
        }
        let half = fov / 2.0;
        let extent = half.tan();
        let n = resolution as f64;
        let mut rays = Vec::with_capacity(resolution * resolution);
        for j in 0..resolution {
            let sy = 1.0 - 2.0 * (j as f64 + 0.5) / n;
            for i in 0..resolution {
                let sx = 2.0 * (i as f64 + 0.5) / n - 1.0;
                let ray = match projection {
                    Projection::Pinhole => Vector3::new(sx * extent, sy * extent, 1.0).normalize(),
                    Projection::EquidistantFisheye => {
                        let r = sx.hypot(sy);
                        if r == 0.0 {
                            Vector3::z()
                        } else {
                            let theta = r * half;
                            let s = theta.sin() / r;
                            Vector3::new(sx * s, sy * s, theta.cos())
                        }
                    }
                };
                rays.push(ray);
            }
        }
        Ok(Self {
            fov,
            resolution,
            projection,
            rays,
        })
    }

    pub fn fov(&self) -> f64 {
        self.fov
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn projection(&self) -> Projection {
        self.projection
    }

    pub fn render(&self, p: &EquirectPanorama, azimuth: f64, elevation: f64) -> Raster {
        let rot = gaze_rotation(azimuth, elevation);
        let pixels = self
            .rays
            .iter()
            .map(|r| p.sample_dir(&Direction(rot * r)))
            .collect();
        Raster {
            size: self.resolution,
            pixels,
        }
    }
}

/// `R_y(azimuth) * R_x(-elevation)`: camera frame to world frame.
pub fn gaze_rotation(azimuth: f64, elevation: f64) -> Matrix3<f64> {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    Matrix3::new(ca, -sa * se, sa * ce, 0.0, ce, se, -sa, -ca * se, ca * ce)
}

pub fn render_view(p: &EquirectPanorama, v: &ViewSpec) -> Result<Raster> {
    v.validate()?;
    Ok(CameraRays::new(v.fov, v.resolution, v.projection)?.render(p, v.azimuth, v.elevation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn random_pano(height: usize, seed: u64) -> EquirectPanorama {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..2 * height * height)
            .map(|_| [rng.gen(), rng.gen(), rng.gen()])
            .collect();
        EquirectPanorama::new(2 * height, height, pixels).unwrap()
    }

    #[test]
    fn neutral_and_quarter_turn() {
        let d = dir_from_angles(0.0, 0.0);
        assert_eq!(d.to_array(), [0.0, 0.0, 1.0]);
        let d = dir_from_angles(FRAC_PI_2, 0.0);
        assert!(close(d.x(), 1.0, 1e-15) && close(d.y(), 0.0, 1e-15) && close(d.z(), 0.0, 1e-15));
    }

    #[test]
    fn off_axis_matches_scalar_trig() {
        let (az, el): (f64, f64) = (0.3, -0.2);
        let d = dir_from_angles(az, el);
        // scalar evaluation in a different association order
        let expect = [az.sin() * el.cos(), el.sin(), el.cos() * az.cos()];
        for (got, want) in d.to_array().iter().zip(expect) {
            assert!(close(*got, want, 1e-15));
        }
        assert!(close(d.as_vector().norm(), 1.0, 1e-15));
    }

    #[test]
    fn pole_and_forward_angles() {
        assert_eq!(angles_from_dir(&Direction::forward()), (0.0, 0.0));
        let up = Direction::new(Vector3::y()).unwrap();
        let (az, el) = angles_from_dir(&up);
        assert_eq!(az, 0.0);
        assert!(close(el, FRAC_PI_2, 1e-15));
        let back = Direction::new(Vector3::new(-0.0, 0.0, -1.0)).unwrap();
        assert_eq!(angles_from_dir(&back).0, PI);
    }

    #[test]
    fn equirect_pixel_landmarks() {
        assert_eq!(equirect_pixel(&Direction::forward(), 1024, 512), (512.0, 256.0));
        let up = Direction::new(Vector3::y()).unwrap();
        assert_eq!(equirect_pixel(&up, 1024, 512), (512.0, 0.0));
        let down = Direction::new(-Vector3::y()).unwrap();
        let (_, v) = equirect_pixel(&down, 1024, 512);
        assert!(v < 512.0 && v > 511.99);
    }

    #[test]
    fn equirect_pixel_matches_scalar_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let d = Direction::new(v).unwrap();
            let (x, y, z) = (d.x(), d.y(), d.z());
            // longitude/latitude through acos and hypot instead of atan2/asin
            let lon = {
                let h = x.hypot(z);
                let a = (z / h).clamp(-1.0, 1.0).acos();
                if x < 0.0 {
                    -a
                } else {
                    a
                }
            };
            let lat = y.atan2(x.hypot(z));
            let u = ((lon + PI) / (2.0 * PI) * 1024.0) % 1024.0;
            let vv = (PI / 2.0 - lat) / PI * 512.0;
            let (gu, gv) = equirect_pixel(&d, 1024, 512);
            assert!(close(gu, u, 1e-9), "{gu} vs {u}");
            assert!(close(gv, vv, 1e-9), "{gv} vs {vv}");
        }
    }

    #[test]
    fn bilinear_hits_texels_exactly() {
        let p = random_pano(8, 3);
        for (x, y) in [(0, 0), (5, 3), (15, 7), (9, 0)] {
            assert_eq!(sample_bilinear(&p, x as f64, y as f64), p.texel(x, y));
        }
        let c = EquirectPanorama::constant(4, [0.2, 0.4, 0.6]).unwrap();
        for (u, v) in [(0.3, 0.9), (7.9, 3.5), (-2.5, 1.2), (100.25, -4.0)] {
            let s = sample_bilinear(&c, u, v);
            for (a, b) in s.iter().zip([0.2, 0.4, 0.6]) {
                assert!(close(*a, b, 1e-15));
            }
        }
    }

    #[test]
    fn seam_blend_on_two_column_panorama() {
        let p = EquirectPanorama::new(2, 1, vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        // u = 1.5 sits halfway between the last column (1) and the first (0).
        let s = sample_bilinear(&p, 1.5, 0.0);
        assert_eq!(s, [0.5, 0.0, 0.5]);
    }

    #[test]
    fn rejects_bad_panoramas_and_fovs() {
        assert!(EquirectPanorama::new(3, 1, vec![[0.0; 3]; 3]).is_err());
        assert!(EquirectPanorama::new(2, 1, vec![[0.0, 1.5, 0.0]; 2]).is_err());
        let p = EquirectPanorama::constant(4, [0.5; 3]).unwrap();
        let mut v = ViewSpec {
            azimuth: 0.0,
            elevation: 0.0,
            fov: PI,
            resolution: 8,
            projection: Projection::Pinhole,
        };
        assert!(render_view(&p, &v).is_err());
        v.projection = Projection::EquidistantFisheye;
        assert!(render_view(&p, &v).is_ok());
        v.fov = TAU;
        assert!(render_view(&p, &v).is_err());
    }

    #[test]
    fn hemispheres_land_on_matching_sides() {
        let p = EquirectPanorama::from_fn(64, |d| {
            if d.x() < 0.0 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 0.0, 1.0]
            }
        })
        .unwrap();
        let v = ViewSpec {
            azimuth: 0.0,
            elevation: 0.0,
            fov: FRAC_PI_2,
            resolution: 32,
            projection: Projection::Pinhole,
        };
        let r = render_view(&p, &v).unwrap();
        let (mut left_red, mut right_blue) = (0, 0);
        for y in 0..32 {
            for x in 0..16 {
                if r.get(x, y)[0] > 0.5 {
                    left_red += 1;
                }
                if r.get(x + 16, y)[2] > 0.5 {
                    right_blue += 1;
                }
            }
        }
        assert!(left_red > 500 && right_blue > 500, "{left_red} {right_blue}");
    }

    #[test]
    fn center_pixel_is_gaze_sample() {
        let p = random_pano(32, 5);
        for (az, el, proj) in [
            (0.4, 0.2, Projection::Pinhole),
            (-2.9, -0.7, Projection::Pinhole),
            (3.1, 1.0, Projection::EquidistantFisheye),
        ] {
            let v = ViewSpec {
                azimuth: az,
                elevation: el,
                fov: 1.2,
                resolution: 15,
                projection: proj,
            };
            let r = render_view(&p, &v).unwrap();
            let (u, vv) = equirect_pixel(&dir_from_angles(az, el), p.width(), p.height());
            let want = sample_bilinear(&p, u, vv);
            for (a, b) in r.get(7, 7).iter().zip(want) {
                assert!(close(*a, b, 1e-6));
            }
        }
    }

    #[test]
    fn roll_equivariance() {
        let p = random_pano(16, 9);
        let k = 5;
        let theta = k as f64 * TAU / p.width() as f64;
        let rays = CameraRays::new(1.0, 12, Projection::Pinhole).unwrap();
        let a = rays.render(&p, theta, 0.3);
        let b = rays.render(&p.roll(k), 0.0, 0.3);
        for (x, y) in a.pixels().iter().zip(b.pixels()) {
            for c in 0..3 {
                assert!(close(x[c], y[c], 1e-6));
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip_angles(az in -PI..PI, el in (-FRAC_PI_2 + 1e-6)..(FRAC_PI_2 - 1e-6)) {
            let (a, e) = angles_from_dir(&dir_from_angles(az, el));
            prop_assert!((wrap_angle(a - az)).abs() < 1e-9);
            prop_assert!((e - el).abs() < 1e-9);
        }

        #[test]
        fn renders_stay_in_unit_range(az in -PI..PI, el in -1.5f64..1.5, fov in 0.1f64..3.0, seed in 0u64..50) {
            let p = random_pano(8, seed);
            let r = CameraRays::new(fov, 5, Projection::Pinhole).unwrap().render(&p, az, el);
            prop_assert!(r.pixels().iter().flatten().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}
