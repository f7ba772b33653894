//! Differentiable rasterization of Gaussian models: projection, sorted
//! alpha blending of color and depth, and the analytic backward pass.
//!
//! Forward semantics, in blending order (front to back by view depth, ties by
//! primitive index):
//!
//! * `alpha_i = min(sigmoid(opacity_logit_i) * exp(-q_i / 2), 0.999)` with
//!   `q_i` the squared Mahalanobis distance under the regularized 2-D
//!   covariance;
//! * splats are skipped where `q_i > 9` (3-sigma footprint) or
//!   `alpha_i < 1/255`;
//! * color accumulates `w_i = alpha_i * prod_{j<i} (1 - alpha_j)` times the
//!   SH-evaluated splat color, depth accumulates `w_i * view_depth_i` with no
//!   alpha normalization, and accumulation stops once the transmittance drops
//!   below 1e-4;
//! * the background color is composited with the residual transmittance.

mod backward;

pub use backward::{freeze_shape, render_backward, ParamGradients};

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::scene::{covariance_from, Camera, DepthMap, GaussianModel, ImageBuffer};
use crate::{sh, Error, Result};

/// Anti-aliasing floor added to the diagonal of every projected covariance, px^2.
pub const COV2D_FLOOR: f64 = 0.3;
/// Footprint cutoff: contributions beyond 3 sigma are dropped.
pub const FOOTPRINT_Q_MAX: f64 = 9.0;
/// Contributions below this alpha are dropped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Per-splat alpha ceiling, keeps transmittance strictly positive.
pub const ALPHA_CLAMP: f64 = 0.999;
/// Blending stops once the residual transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

/// Row block size used for deterministic parallel scheduling.
const ROW_CHUNK: usize = 8;

/// One primitive after projection into a camera.
#[derive(Debug, Clone)]
pub struct Projected2D {
    /// Index into the model's primitive list.
    pub index: usize,
    /// Pixel-space mean.
    pub mean2d: Vector2<f64>,
    /// Regularized pixel-space covariance (floor already added).
    pub cov2d: Matrix2<f64>,
    /// Camera-space z of the mean.
    pub view_depth: f64,
    /// Inverse of `cov2d`.
    pub(crate) conic: Matrix2<f64>,
    /// Camera-space mean.
    pub(crate) p_cam: Vector3<f64>,
    /// Clamped view-dependent color.
    pub(crate) color: [f64; 3],
    /// Per-channel clamp markers for the backward pass.
    pub(crate) color_clamped: [bool; 3],
    /// Activated opacity.
    pub(crate) opacity: f64,
    /// Inclusive-exclusive pixel bounds of the 3-sigma footprint.
    pub(crate) x_range: (usize, usize),
    pub(crate) y_range: (usize, usize),
}

/// Rendering options; `background` is composited with residual transmittance.
#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub background: [f64; 3],
    /// Record the per-pixel blending state needed by [`render_backward`].
    pub with_aux: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            background: [0.0; 3],
            with_aux: false,
        }
    }
}

/// One blended splat at one pixel: everything the backward pass needs to
/// replay the blend exactly.
#[derive(Debug, Clone, Copy)]
pub struct Contribution {
    /// Index into the model's primitive list.
    pub prim: u32,
    /// Blended alpha (after clamping).
    pub alpha: f64,
    /// Transmittance before this splat.
    pub tvis: f64,
}

/// Replay state for the backward pass, tied to the forward call that made it.
#[derive(Debug, Clone)]
pub struct RenderAux {
    pub width: usize,
    pub height: usize,
    pub n_primitives: usize,
    pub background: [f64; 3],
    /// Per-pixel ordered contribution records, row-major.
    pub per_pixel: Vec<Vec<Contribution>>,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: ImageBuffer,
    /// Raw blended depth, not alpha-normalized.
    pub depth: DepthMap,
    /// Accumulated blending weight per pixel.
    pub alpha: DepthMap,
    pub aux: Option<RenderAux>,
}

/// Project every primitive into the camera, culling splats whose mean depth is
/// outside `(near, far)` or whose 3-sigma footprint misses the screen.
pub fn project(model: &GaussianModel, cam: &Camera) -> Vec<Projected2D> {
    let w_rot = cam.world_to_camera_rotation();
    let cam_center = cam.camera_center();
    let mut out = Vec::with_capacity(model.len());
    for (index, prim) in model.primitives.iter().enumerate() {
        let p_cam = w_rot * (prim.position - cam_center);
        let z = p_cam.z;
        if !(z > cam.near && z < cam.far) {
            continue;
        }
        let mean2d = Vector2::new(
            cam.fx * p_cam.x / z + cam.cx,
            cam.fy * p_cam.y / z + cam.cy,
        );
        let jac = projection_jacobian(cam, &p_cam);
        let cov3 = covariance_from(&prim.rotation, &prim.log_scale);
        let cov_cam = w_rot * cov3 * w_rot.transpose();
        let mut cov2d = jac * cov_cam * jac.transpose();
        cov2d[(0, 0)] += COV2D_FLOOR;
        cov2d[(1, 1)] += COV2D_FLOOR;

        let rx = 3.0 * cov2d[(0, 0)].sqrt();
        let ry = 3.0 * cov2d[(1, 1)].sqrt();
        let x0 = (mean2d.x - rx).floor();
        let x1 = (mean2d.x + rx).ceil();
        let y0 = (mean2d.y - ry).floor();
        let y1 = (mean2d.y + ry).ceil();
        if x1 <= 0.0 || y1 <= 0.0 || x0 >= cam.width as f64 || y0 >= cam.height as f64 {
            continue;
        }
        let x_range = (x0.max(0.0) as usize, (x1 as usize).min(cam.width));
        let y_range = (y0.max(0.0) as usize, (y1 as usize).min(cam.height));

        let conic = match cov2d.try_inverse() {
            Some(c) => c,
            // The floor keeps cov2d well conditioned; a singular matrix here
            // means non-finite inputs, so drop the splat.
            None => continue,
        };

        let dir = (prim.position - cam_center).normalize();
        let raw = sh::eval_color(model.sh_degree, &prim.sh_coeffs, &dir);
        let mut color = [0.0; 3];
        let mut color_clamped = [false; 3];
        for ch in 0..3 {
            color[ch] = raw[ch].clamp(0.0, 1.0);
            color_clamped[ch] = raw[ch] < 0.0 || raw[ch] > 1.0;
        }

        out.push(Projected2D {
            index,
            mean2d,
            cov2d,
            view_depth: z,
            conic,
            p_cam,
            color,
            color_clamped,
            opacity: prim.opacity(),
            x_range,
            y_range,
        });
    }
    out
}

pub(crate) fn projection_jacobian(cam: &Camera, p_cam: &Vector3<f64>) -> Matrix2x3<f64> {
    let z = p_cam.z;
    Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * p_cam.x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * p_cam.y / (z * z),
    )
}

/// Depth-sort the projected splats and scatter them into per-pixel lists.
/// Appending in global depth order leaves every pixel's list sorted.
pub(crate) fn pixel_buckets(projected: &[Projected2D], cam: &Camera) -> (Vec<u32>, Vec<Vec<u32>>) {
    let mut order: Vec<u32> = (0..projected.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&projected[a as usize], &projected[b as usize]);
        pa.view_depth
            .total_cmp(&pb.view_depth)
            .then(pa.index.cmp(&pb.index))
    });
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); cam.pixel_count()];
    for &pi in &order {
        let p = &projected[pi as usize];
        for y in p.y_range.0..p.y_range.1 {
            let row = y * cam.width;
            for x in p.x_range.0..p.x_range.1 {
                buckets[row + x].push(pi);
            }
        }
    }
    (order, buckets)
}

/// Render color, depth, and accumulated alpha. Deterministic regardless of
/// internal parallelism: pixels are independent and blended in a fixed order.
pub fn render(model: &GaussianModel, cam: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
    if model
        .primitives
        .iter()
        .any(|p| !p.is_finite())
    {
        return Err(Error::contract("model contains non-finite parameters"));
    }
    let projected = project(model, cam);
    let (_, buckets) = pixel_buckets(&projected, cam);

    let width = cam.width;
    let height = cam.height;
    let mut color = ImageBuffer::new(width, height);
    let mut depth = DepthMap::new(width, height);
    let mut alpha = DepthMap::new(width, height);
    let mut aux_pixels: Vec<Vec<Contribution>> = if opts.with_aux {
        vec![Vec::new(); width * height]
    } else {
        Vec::new()
    };

    let row_jobs: Vec<(
        &mut [[f64; 3]],
        &mut [f64],
        &mut [f64],
        &[Vec<u32>],
        Option<&mut [Vec<Contribution>]>,
    )> = {
        let chunk_px = ROW_CHUNK * width;
        let mut aux_chunks: Vec<Option<&mut [Vec<Contribution>]>> = if opts.with_aux {
            aux_pixels.chunks_mut(chunk_px).map(Some).collect()
        } else {
            (0..height.div_ceil(ROW_CHUNK)).map(|_| None).collect()
        };
        color
            .data
            .chunks_mut(chunk_px)
            .zip(depth.data.chunks_mut(chunk_px))
            .zip(alpha.data.chunks_mut(chunk_px))
            .zip(buckets.chunks(chunk_px))
            .zip(aux_chunks.drain(..))
            .map(|((((c, d), a), b), x)| (c, d, a, b, x))
            .collect()
    };

    row_jobs
        .into_par_iter()
        .enumerate()
        .for_each(|(chunk_idx, (c_out, d_out, a_out, bucket_rows, aux_rows))| {
            let base_px = chunk_idx * ROW_CHUNK * width;
            let mut aux_rows = aux_rows;
            for off in 0..bucket_rows.len() {
                let pix = base_px + off;
                let px = (pix % width) as f64 + 0.5;
                let py = (pix / width) as f64 + 0.5;
                let mut trans = 1.0f64;
                let mut acc = [0.0f64; 3];
                let mut acc_d = 0.0f64;
                let mut acc_a = 0.0f64;
                for &pi in &bucket_rows[off] {
                    if trans < TRANSMITTANCE_MIN {
                        break;
                    }
                    let sp = &projected[pi as usize];
                    let delta = Vector2::new(px - sp.mean2d.x, py - sp.mean2d.y);
                    let q = (sp.conic * delta).dot(&delta);
                    if q > FOOTPRINT_Q_MAX {
                        continue;
                    }
                    let a = (sp.opacity * (-0.5 * q).exp()).min(ALPHA_CLAMP);
                    if a < MIN_ALPHA {
                        continue;
                    }
                    let w = a * trans;
                    for ch in 0..3 {
                        acc[ch] += w * sp.color[ch];
                    }
                    acc_d += w * sp.view_depth;
                    acc_a += w;
                    if let Some(rows) = aux_rows.as_deref_mut() {
                        rows[off].push(Contribution {
                            prim: sp.index as u32,
                            alpha: a,
                            tvis: trans,
                        });
                    }
                    trans *= 1.0 - a;
                }
                for ch in 0..3 {
                    c_out[off][ch] = acc[ch] + trans * opts.background[ch];
                }
                d_out[off] = acc_d;
                a_out[off] = acc_a;
            }
        });

    let aux = if opts.with_aux {
        Some(RenderAux {
            width,
            height,
            n_primitives: model.len(),
            background: opts.background,
            per_pixel: aux_pixels,
        })
    } else {
        None
    };

    Ok(RenderOutput {
        color,
        depth,
        alpha,
        aux,
    })
}

/// Alpha-normalized depth: `depth / alpha` where coverage is meaningful,
/// `fallback` elsewhere. Used when a surface depth estimate is needed.
pub fn normalized_depth(out: &RenderOutput, min_alpha: f64, fallback: f64) -> DepthMap {
    let mut d = DepthMap::new(out.depth.width, out.depth.height);
    for i in 0..d.data.len() {
        let a = out.alpha.data[i];
        d.data[i] = if a >= min_alpha {
            out.depth.data[i] / a
        } else {
            fallback
        };
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{logit, GaussianPrimitive};
    use nalgebra::{Isometry3, UnitQuaternion};

    fn single_gaussian_model(position: Vector3<f64>, log_scale: f64, opacity: f64) -> GaussianModel {
        let prim = GaussianPrimitive {
            position,
            rotation: UnitQuaternion::identity(),
            log_scale: Vector3::new(log_scale, log_scale, log_scale),
            opacity_logit: logit(opacity),
            sh_coeffs: vec![[0.5, 0.5, 0.5]],
            confidence: 1.0,
        };
        GaussianModel::new(0, vec![prim]).unwrap()
    }

    fn test_camera() -> Camera {
        Camera::new(
            100.0,
            100.0,
            32.0,
            32.0,
            64,
            64,
            Isometry3::identity(),
            0.1,
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn on_axis_projection() {
        let model = single_gaussian_model(Vector3::new(0.0, 0.0, 5.0), -2.0, 0.9);
        let cam = test_camera();
        let proj = project(&model, &cam);
        assert_eq!(proj.len(), 1);
        assert!((proj[0].mean2d.x - 32.0).abs() < 1e-12);
        assert!((proj[0].mean2d.y - 32.0).abs() < 1e-12);
        assert!((proj[0].view_depth - 5.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_covariance_first_order_scaling() {
        let sigma = 0.05f64;
        let z = 4.0;
        let model = single_gaussian_model(Vector3::new(0.0, 0.0, z), sigma.ln(), 0.9);
        let cam = test_camera();
        let proj = project(&model, &cam);
        let expected = (cam.fx * sigma / z).powi(2);
        assert!((proj[0].cov2d[(0, 0)] - COV2D_FLOOR - expected).abs() < 1e-9 * expected.max(1.0));
        assert!((proj[0].cov2d[(1, 1)] - COV2D_FLOOR - expected).abs() < 1e-9 * expected.max(1.0));
        assert!(proj[0].cov2d[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn depth_culling() {
        let cam = test_camera();
        for z in [0.05, -3.0, 150.0] {
            let model = single_gaussian_model(Vector3::new(0.0, 0.0, z), -2.0, 0.9);
            assert!(project(&model, &cam).is_empty(), "z = {z} should be culled");
        }
    }

    #[test]
    fn offscreen_culling() {
        let cam = test_camera();
        let model = single_gaussian_model(Vector3::new(10.0, 0.0, 2.0), -3.0, 0.9);
        assert!(project(&model, &cam).is_empty());
    }

    #[test]
    fn empty_model_renders_background() {
        let cam = test_camera();
        let model = GaussianModel::new(0, vec![]).unwrap();
        let opts = RenderOptions {
            background: [0.25, 0.5, 0.75],
            with_aux: false,
        };
        let out = render(&model, &cam, &opts).unwrap();
        assert!(out
            .color
            .data
            .iter()
            .all(|px| *px == [0.25, 0.5, 0.75]));
        assert!(out.depth.data.iter().all(|&d| d == 0.0));
        assert!(out.alpha.data.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn opaque_single_splat_depth() {
        // A huge, nearly opaque splat covering the frame: blended depth at the
        // center approaches alpha * view_depth with alpha ~ 0.999.
        let model = single_gaussian_model(Vector3::new(0.0, 0.0, 5.0), 1.0, 0.9999999);
        let cam = test_camera();
        let out = render(&model, &cam, &RenderOptions::default()).unwrap();
        let d = out.depth.at(32, 32);
        let a = out.alpha.at(32, 32);
        assert!((d - a * 5.0).abs() < 1e-12);
        assert!((a - ALPHA_CLAMP).abs() < 1e-6, "alpha {a}");
        assert!((d - 5.0).abs() < 0.01);
    }

    #[test]
    fn two_splat_depth_hand_case() {
        // alpha = 0.5 each, depths 1 and 3: depth = 0.5*1 + 0.5*0.5*3 = 1.25.
        let mut prims = Vec::new();
        for z in [1.0, 3.0] {
            prims.push(GaussianPrimitive {
                position: Vector3::new(0.0, 0.0, z),
                rotation: UnitQuaternion::identity(),
                // Large flat splat so the Gaussian factor at the center pixel is ~1.
                log_scale: Vector3::new(3.0, 3.0, -6.0),
                opacity_logit: logit(0.5),
                sh_coeffs: vec![[0.3, 0.3, 0.3]],
                confidence: 1.0,
            });
        }
        let model = GaussianModel::new(0, prims).unwrap();
        let cam = test_camera();
        let out = render(&model, &cam, &RenderOptions::default()).unwrap();
        let d = out.depth.at(32, 32);
        // The Gaussian factor at a pixel center 0.5 px from the mean of a
        // sigma ~ 2000 px splat is 1 - O(1e-8); the hand value holds to 1e-6.
        assert!((d - 1.25).abs() < 1e-6, "depth {d}");
    }

    #[test]
    fn transmittance_monotone_and_alpha_conserved() {
        let mut prims = Vec::new();
        for i in 0..6 {
            prims.push(GaussianPrimitive {
                position: Vector3::new(0.02 * i as f64, -0.01 * i as f64, 2.0 + i as f64 * 0.3),
                rotation: UnitQuaternion::identity(),
                log_scale: Vector3::new(-2.0, -2.2, -2.4),
                opacity_logit: logit(0.4 + 0.05 * i as f64),
                sh_coeffs: vec![[0.4, 0.5, 0.6]],
                confidence: 1.0,
            });
        }
        let model = GaussianModel::new(0, prims).unwrap();
        let cam = test_camera();
        let opts = RenderOptions {
            background: [0.1, 0.1, 0.1],
            with_aux: true,
        };
        let out = render(&model, &cam, &opts).unwrap();
        let aux = out.aux.as_ref().unwrap();
        for (pix, contribs) in aux.per_pixel.iter().enumerate() {
            let mut prev_t = 1.0;
            let mut wsum = 0.0;
            for c in contribs {
                assert!(c.tvis <= prev_t + 1e-15, "transmittance must not increase");
                prev_t = c.tvis;
                wsum += c.alpha * c.tvis;
            }
            assert!((wsum - out.alpha.data[pix]).abs() < 1e-12);
            assert!((0.0..=1.0 + 1e-12).contains(&wsum));
        }
    }

    #[test]
    fn render_deterministic_across_runs() {
        let mut prims = Vec::new();
        for i in 0..20 {
            prims.push(GaussianPrimitive {
                position: Vector3::new(
                    (i as f64 * 0.37).sin() * 0.4,
                    (i as f64 * 0.73).cos() * 0.4,
                    3.0 + (i as f64 * 0.11).sin(),
                ),
                rotation: UnitQuaternion::identity(),
                log_scale: Vector3::new(-2.5, -2.5, -2.5),
                opacity_logit: 0.3,
                sh_coeffs: vec![[0.5, 0.2, 0.7]],
                confidence: 1.0,
            });
        }
        let model = GaussianModel::new(0, prims).unwrap();
        let cam = test_camera();
        let a = render(&model, &cam, &RenderOptions::default()).unwrap();
        let b = render(&model, &cam, &RenderOptions::default()).unwrap();
        assert_eq!(a.color.data, b.color.data);
        assert_eq!(a.depth.data, b.depth.data);
    }
}
