//! Serial-chain forward kinematics (standard Denavit-Hartenberg) and
//! end-effector paths.

use std::path::Path;

use nalgebra::{Matrix4, Rotation3, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};

/// One standard DH row: `Rz(theta) * Tz(d) * Tx(a) * Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhJoint {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta_offset: f64,
}

impl DhJoint {
    pub fn new(a: f64, d: f64, alpha: f64, theta_offset: f64) -> Self {
        Self {
            a,
            d,
            alpha,
            theta_offset,
        }
    }

    pub fn transform(&self, q: f64) -> Matrix4<f64> {
        let (st, ct) = (q + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Matrix4::new(
            ct,
            -st * ca,
            st * sa,
            self.a * ct,
            st,
            ct * ca,
            -ct * sa,
            self.a * st,
            0.0,
            sa,
            ca,
            self.d,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DhChain {
    pub name: String,
    pub joints: Vec<DhJoint>,
    /// Per-joint `(lo, hi)` range mapped to `[-1, 1]` for actions.
    pub limits: Vec<(f64, f64)>,
    /// World-from-base transform applied before the first joint.
    pub base: Matrix4<f64>,
}

#[derive(Debug, Deserialize)]
struct ChainFile {
    name: String,
    convention: String,
    joints: Vec<JointRow>,
}

#[derive(Debug, Deserialize)]
struct JointRow {
    #[allow(dead_code)]
    name: Option<String>,
    a: f64,
    d: f64,
    alpha: f64,
    #[serde(default)]
    theta_offset: f64,
    lower: f64,
    upper: f64,
}

impl DhChain {
    pub fn new(name: impl Into<String>, joints: Vec<DhJoint>, limits: Vec<(f64, f64)>) -> Result<Self> {
        let chain = Self {
            name: name.into(),
            joints,
            limits,
            base: Matrix4::identity(),
        };
        chain.validate()?;
        Ok(chain)
    }

    /// Chain with unit-range limits, handy for tests.
    pub fn from_joints(joints: Vec<DhJoint>) -> Result<Self> {
        let limits = vec![(-std::f64::consts::PI, std::f64::consts::PI); joints.len()];
        Self::new("chain", joints, limits)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::InvalidChain(m) => Error::InvalidChain(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ChainFile = toml::from_str(text).map_err(|e| Error::InvalidChain(e.to_string()))?;
        if file.convention != "standard" {
            return Err(Error::InvalidChain(format!(
                "unsupported DH convention `{}` (only `standard`)",
                file.convention
            )));
        }
        let joints = file
            .joints
            .iter()
            .map(|r| DhJoint::new(r.a, r.d, r.alpha, r.theta_offset))
            .collect();
        let limits = file.joints.iter().map(|r| (r.lower, r.upper)).collect();
        Self::new(file.name, joints, limits)
    }

    /// The UR5e description shipped with the crate.
    pub fn ur5e() -> Self {
        Self::from_toml_str(include_str!("../data/ur5e.toml")).expect("bundled UR5e chain is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.is_empty() {
            return Err(Error::InvalidChain("chain needs at least one joint".into()));
        }
        if self.limits.len() != self.joints.len() {
            return Err(Error::InvalidChain(format!(
                "{} limits for {} joints",
                self.limits.len(),
                self.joints.len()
            )));
        }
        let finite = self
            .joints
            .iter()
            .all(|j| j.a.is_finite() && j.d.is_finite() && j.alpha.is_finite() && j.theta_offset.is_finite());
        if !finite {
            return Err(Error::InvalidChain("non-finite DH parameter".into()));
        }
        for (i, &(lo, hi)) in self.limits.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidChain(format!("joint {i} limits ({lo}, {hi}) invalid")));
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Copy of the chain with `rotation` pre-applied to the base frame.
    pub fn with_base_rotation(&self, rotation: Rotation3<f64>) -> Self {
        let mut out = self.clone();
        out.base = rotation.to_homogeneous() * self.base;
        out
    }

    pub fn fk(&self, q: &[f64]) -> Result<Matrix4<f64>> {
        if q.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                context: "joint vector",
                expected: self.dof(),
                actual: q.len(),
            });
        }
        Ok(self
            .joints
            .iter()
            .zip(q)
            .fold(self.base, |acc, (j, &qi)| acc * j.transform(qi)))
    }
}

pub fn fk_position(chain: &DhChain, q: &[f64]) -> Result<Vector3<f64>> {
    let t = chain.fk(q)?;
    Ok(Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)]))
}

/// Joint positions over time plus an optional gripper channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointTrajectory {
    pub positions: Vec<Vec<f64>>,
    pub gripper: Option<Vec<f64>>,
}

impl JointTrajectory {
    pub fn new(positions: Vec<Vec<f64>>, gripper: Option<Vec<f64>>) -> Result<Self> {
        let t = Self { positions, gripper };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let width = self.positions.first().map_or(0, Vec::len);
        for (i, row) in self.positions.iter().enumerate() {
            if row.len() != width {
                return Err(Error::DimensionMismatch {
                    context: "trajectory row",
                    expected: width,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Env(format!("trajectory row {i} is not finite")));
            }
        }
        if let Some(g) = &self.gripper {
            if g.len() != self.positions.len() {
                return Err(Error::DimensionMismatch {
                    context: "gripper channel",
                    expected: self.positions.len(),
                    actual: g.len(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    /// Rows `start..start + len` (gripper included when present).
    pub fn window(&self, start: usize, len: usize) -> Self {
        Self {
            positions: self.positions[start..start + len].to_vec(),
            gripper: self.gripper.as_ref().map(|g| g[start..start + len].to_vec()),
        }
    }
}

pub fn ee_path(chain: &DhChain, traj: &JointTrajectory) -> Result<Vec<Vector3<f64>>> {
    traj.positions.iter().map(|q| fk_position(chain, q)).collect()
}

/// Maps normalized values in `[-1, 1]` (clamped) affinely onto `[lo, hi]`.
pub fn denormalize_actions(chunk: &[Vec<f64>], limits: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    chunk
        .iter()
        .map(|row| {
            check_width(row, limits)?;
            Ok(row
                .iter()
                .zip(limits)
                .map(|(&v, &(lo, hi))| lo + (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * (hi - lo))
                .collect())
        })
        .collect()
}

/// Inverse of [`denormalize_actions`] (no clamping).
pub fn normalize_actions(chunk: &[Vec<f64>], limits: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    chunk
        .iter()
        .map(|row| {
            check_width(row, limits)?;
            Ok(row
                .iter()
                .zip(limits)
                .map(|(&q, &(lo, hi))| 2.0 * (q - lo) / (hi - lo) - 1.0)
                .collect())
        })
        .collect()
}

fn check_width(row: &[f64], limits: &[(f64, f64)]) -> Result<()> {
    if row.len() != limits.len() {
        return Err(Error::DimensionMismatch {
            context: "action row",
            expected: limits.len(),
            actual: row.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Isometry3, Translation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Independent FK: composes rigid motions instead of writing out DH matrices.
    fn oracle_fk(chain: &DhChain, q: &[f64]) -> Vector3<f64> {
        let mut pose = Isometry3::identity();
        for (j, &qi) in chain.joints.iter().zip(q) {
            let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), qi + j.theta_offset);
            let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), j.alpha);
            pose = pose
                * Isometry3::from_parts(Translation3::identity(), rz)
                * Isometry3::from_parts(Translation3::new(j.a, 0.0, j.d), UnitQuaternion::identity())
                * Isometry3::from_parts(Translation3::identity(), rx);
        }
        pose.translation.vector
    }

    #[test]
    fn single_planar_link() {
        let c = DhChain::from_joints(vec![DhJoint::new(1.0, 0.0, 0.0, 0.0)]).unwrap();
        assert_eq!(fk_position(&c, &[0.0]).unwrap(), Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn two_link_planar_symbolic() {
        let c = DhChain::from_joints(vec![DhJoint::new(1.0, 0.0, 0.0, 0.0); 2]).unwrap();
        // x = cos q1 + cos(q1 + q2), y = sin q1 + sin(q1 + q2) -> (1, 1)
        let p = fk_position(&c, &[FRAC_PI_2, -FRAC_PI_2]).unwrap();
        assert!((p - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn ur5e_home_pose() {
        let c = DhChain::ur5e();
        assert_eq!(c.dof(), 6);
        let p = fk_position(&c, &[0.0; 6]).unwrap();
        // closed form at zero: (a2 + a3, -(d4 + d6), d1 - d5)
        let want = Vector3::new(-0.425 - 0.3922, -(0.1333 + 0.0996), 0.1625 - 0.0997);
        assert!((p - want).norm() < 1e-12, "{p:?}");
        assert!((p - oracle_fk(&c, &[0.0; 6])).norm() < 1e-12);
    }

    #[test]
    fn ur5e_matches_oracle_at_random_configs() {
        let c = DhChain::ur5e();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-PI..PI)).collect();
            assert!((fk_position(&c, &q).unwrap() - oracle_fk(&c, &q)).norm() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let c = DhChain::ur5e();
        assert!(matches!(fk_position(&c, &[0.0; 5]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn ee_path_examples() {
        let c = DhChain::from_joints(vec![DhJoint::new(1.0, 0.0, 0.0, 0.0)]).unwrap();
        let t = JointTrajectory::new(vec![vec![0.0], vec![FRAC_PI_2]], None).unwrap();
        let path = ee_path(&c, &t).unwrap();
        assert_eq!(path[0], Vector3::new(1.0, 0.0, 0.0));
        assert!((path[1] - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);

        let constant = JointTrajectory::new(vec![vec![0.3]; 5], None).unwrap();
        let path = ee_path(&c, &constant).unwrap();
        assert!(path.iter().all(|p| *p == path[0]));

        let a = 0.7;
        let c = DhChain::from_joints(vec![DhJoint::new(a, 0.0, 0.0, 0.0)]).unwrap();
        let rev = JointTrajectory::new((0..=360).map(|i| vec![i as f64 * PI / 180.0]).collect(), None).unwrap();
        let path = ee_path(&c, &rev).unwrap();
        let length: f64 = path.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        assert!((length - 2.0 * PI * a).abs() / (2.0 * PI * a) < 1e-3);
    }

    #[test]
    fn base_rotation_rotates_the_path() {
        let c = DhChain::ur5e();
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), 0.8);
        let rotated = c.with_base_rotation(r);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-PI..PI)).collect();
            let p = fk_position(&c, &q).unwrap();
            let pr = fk_position(&rotated, &q).unwrap();
            assert!((r * p - pr).norm() < 1e-12);
        }
    }

    #[test]
    fn denormalize_examples() {
        let limits = [(-2.0, 4.0), (0.0, 1.0)];
        let out = denormalize_actions(&[vec![0.0, -1.0], vec![1.5, -3.0]], &limits).unwrap();
        assert_eq!(out[0], vec![1.0, 0.0]);
        assert_eq!(out[1], vec![4.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chunk: Vec<Vec<f64>> = (0..100)
            .map(|_| vec![rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)])
            .collect();
        let back = normalize_actions(&denormalize_actions(&chunk, &limits).unwrap(), &limits).unwrap();
        for (a, b) in chunk.iter().flatten().zip(back.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn chain_file_validation() {
        let bad = r#"
            name = "x"
            convention = "modified"
            [[joints]]
            a = 1.0
            d = 0.0
            alpha = 0.0
            lower = -1.0
            upper = 1.0
        "#;
        assert!(matches!(DhChain::from_toml_str(bad), Err(Error::InvalidChain(_))));
        let empty = "name = \"x\"\nconvention = \"standard\"\njoints = []\n";
        assert!(DhChain::from_toml_str(empty).is_err());
    }
}
