//! Scene representation: Gaussian primitives, cameras, regions, and the
//! image/depth buffers shared by every other module.

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};

use crate::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`sigmoid`]; input clamped away from {0, 1}.
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// One anisotropic splat. Scales are stored as logs and opacity as a logit so
/// unconstrained gradient steps keep the underlying quantities valid.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    /// World-space center.
    pub position: Vector3<f64>,
    /// Rotation factor of the covariance.
    pub rotation: UnitQuaternion<f64>,
    /// Log of the per-axis standard deviation (world units).
    pub log_scale: Vector3<f64>,
    /// Opacity before the sigmoid.
    pub opacity_logit: f64,
    /// Spherical-harmonics color coefficients, `(degree+1)^2` RGB triples.
    pub sh_coeffs: Vec<[f64; 3]>,
    /// Predictor confidence, >= 0.
    pub confidence: f64,
}

impl GaussianPrimitive {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// World-space scale (standard deviation) per axis.
    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.confidence.is_finite()
            && self.sh_coeffs.iter().flatten().all(|v| v.is_finite())
    }
}

/// Covariance `R * S * S^T * R^T` with `S = diag(exp(log_scale))`.
///
/// Symmetric PSD by construction; the quaternion is assumed normalized.
pub fn covariance_from(rotation: &UnitQuaternion<f64>, log_scale: &Vector3<f64>) -> Matrix3<f64> {
    let r = rotation.to_rotation_matrix();
    let s2 = Matrix3::from_diagonal(&log_scale.map(|v| (2.0 * v).exp()));
    let cov = r * s2 * r.transpose();
    // Re-symmetrize to absorb the last-bit asymmetry of the triple product.
    0.5 * (cov + cov.transpose())
}

/// A set of primitives plus the densification bookkeeping the trainer needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianModel {
    pub sh_degree: u8,
    pub primitives: Vec<GaussianPrimitive>,
    /// Accumulated |dL/dposition| per primitive since the last densify.
    pub grad_accum: Vec<f64>,
    /// Number of optimizer steps that touched each primitive since the last densify.
    pub obs_count: Vec<u32>,
}

impl GaussianModel {
    pub fn new(sh_degree: u8, primitives: Vec<GaussianPrimitive>) -> Result<Self> {
        if sh_degree > 3 {
            return Err(Error::contract(format!(
                "sh_degree {sh_degree} out of range 0..=3"
            )));
        }
        let n_coeffs = crate::sh::coeff_count(sh_degree);
        for (i, p) in primitives.iter().enumerate() {
            if p.sh_coeffs.len() != n_coeffs {
                return Err(Error::contract(format!(
                    "primitive {i} has {} SH coefficients, expected {n_coeffs}",
                    p.sh_coeffs.len()
                )));
            }
        }
        let n = primitives.len();
        Ok(GaussianModel {
            sh_degree,
            primitives,
            grad_accum: vec![0.0; n],
            obs_count: vec![0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn reset_bookkeeping(&mut self) {
        self.grad_accum = vec![0.0; self.primitives.len()];
        self.obs_count = vec![0; self.primitives.len()];
    }

    /// Renormalize quaternions in place. Call after any raw parameter update.
    pub fn renormalize_rotations(&mut self) {
        for p in &mut self.primitives {
            p.rotation = UnitQuaternion::from_quaternion(*p.rotation.quaternion());
        }
    }
}

/// Pinhole camera with a rigid world-from-camera pose. The camera looks along
/// +z in its own frame; x is right, y is down.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-from-camera transform.
    pub pose: Isometry3<f64>,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        pose: Isometry3<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        if !(near > 0.0 && near < far) {
            return Err(Error::contract(format!(
                "clip depths must satisfy 0 < near < far, got {near}..{far}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::contract("camera dimensions must be nonzero"));
        }
        Ok(Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            pose,
            near,
            far,
        })
    }

    /// Camera placed at `eye` looking at `target` with `up` fixing the roll.
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
        let pose = Isometry3::from_parts(
            Translation3::from(eye),
            UnitQuaternion::from_rotation_matrix(&rot),
        );
        Camera::new(fx, fy, cx, cy, width, height, pose, near, far)
    }

    /// Build from a row-major 3x4 world-from-camera matrix, re-orthonormalizing
    /// the rotation block. Errors if the block is not a rotation within 1e-6.
    pub fn from_pose_rows(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rows: &[f64; 12],
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let r = Matrix3::new(
            rows[0], rows[1], rows[2], rows[4], rows[5], rows[6], rows[8], rows[9], rows[10],
        );
        let t = Vector3::new(rows[3], rows[7], rows[11]);
        let ortho_err = (r * r.transpose() - Matrix3::identity()).abs().max();
        if ortho_err > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "pose rotation block not orthonormal (err {ortho_err:.2e}, det {:.6})",
                r.determinant()
            )));
        }
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        let pose = Isometry3::from_parts(Translation3::from(t), q);
        Camera::new(fx, fy, cx, cy, width, height, pose, near, far)
    }

    /// Row-major 3x4 world-from-camera matrix.
    pub fn pose_rows(&self) -> [f64; 12] {
        let r = self.pose.rotation.to_rotation_matrix();
        let m = r.matrix();
        let t = self.pose.translation.vector;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            t.x,
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            t.y,
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
            t.z,
        ]
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.pose.inverse() * Point3::from(*p)).coords
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (self.pose * Point3::from(*p)).coords
    }

    /// World->camera rotation matrix.
    pub fn world_to_camera_rotation(&self) -> Matrix3<f64> {
        self.pose
            .rotation
            .inverse()
            .to_rotation_matrix()
            .into_inner()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Unproject pixel center `(ix, iy)` at camera depth `z` to world space.
    pub fn unproject(&self, ix: usize, iy: usize, z: f64) -> Vector3<f64> {
        let u = ix as f64 + 0.5;
        let v = iy as f64 + 0.5;
        let x = (u - self.cx) / self.fx * z;
        let y = (v - self.cy) / self.fy * z;
        self.camera_to_world(&Vector3::new(x, y, z))
    }
}

/// Axis-aligned rectangle in the world ground plane (XY), owned by one device.
/// Membership is half-open: `min <= coord < max` on both axes, so a boundary
/// point belongs to exactly one region of a partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub device: u32,
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl Region {
    pub fn new(device: u32, min_x: f64, max_x: f64, min_y: f64, max_y: f64) -> Result<Self> {
        if !(min_x < max_x && min_y < max_y) {
            return Err(Error::contract(format!(
                "degenerate region [{min_x},{max_x}]x[{min_y},{max_y}]"
            )));
        }
        Ok(Region {
            device,
            min_x,
            max_x,
            min_y,
            max_y,
        })
    }
}

/// Ground-plane membership test (z ignored).
pub fn point_in_region(p: &Vector3<f64>, r: &Region) -> bool {
    p.x >= r.min_x && p.x < r.max_x && p.y >= r.min_y && p.y < r.max_y
}

/// H x W x 3 color buffer, values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuffer {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        ImageBuffer {
            width,
            height,
            data: vec![color; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64; 3] {
        &mut self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// H x W positive depths, row-major. Also reused for any scalar per-pixel map.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut f64 {
        &mut self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &DepthMap) -> bool {
        self.width == other.width && self.height == other.height
    }
}
