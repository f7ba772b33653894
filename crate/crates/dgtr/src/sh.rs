//! Real spherical-harmonics basis (degrees 0..=3) for view-dependent color,
//! with analytic derivatives for the rasterizer backward pass.

use nalgebra::Vector3;

pub const MAX_COEFFS: usize = 16;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions for a given degree: `(degree + 1)^2`.
pub fn coeff_count(degree: u8) -> usize {
    let d = degree as usize + 1;
    d * d
}

/// Evaluate the basis at unit direction `dir`. Returns the filled prefix of a
/// fixed-size array; entries past `coeff_count(degree)` are zero.
pub fn eval_basis(degree: u8, dir: &Vector3<f64>) -> [f64; MAX_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; MAX_COEFFS];
    b[0] = C0;
    if degree >= 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = C3[0] * y * (3.0 * xx - yy);
        b[10] = C3[1] * x * y * z;
        b[11] = C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = C3[5] * z * (xx - yy);
        b[15] = C3[6] * x * (xx - 3.0 * yy);
    }
    b
}

/// Basis values plus their gradients with respect to the (unit) direction.
pub fn eval_basis_with_grad(
    degree: u8,
    dir: &Vector3<f64>,
) -> ([f64; MAX_COEFFS], [Vector3<f64>; MAX_COEFFS]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let b = eval_basis(degree, dir);
    let mut g = [Vector3::zeros(); MAX_COEFFS];
    if degree >= 1 {
        g[1] = Vector3::new(0.0, -C1, 0.0);
        g[2] = Vector3::new(0.0, 0.0, C1);
        g[3] = Vector3::new(-C1, 0.0, 0.0);
    }
    if degree >= 2 {
        g[4] = Vector3::new(C2[0] * y, C2[0] * x, 0.0);
        g[5] = Vector3::new(0.0, C2[1] * z, C2[1] * y);
        g[6] = Vector3::new(-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z);
        g[7] = Vector3::new(C2[3] * z, 0.0, C2[3] * x);
        g[8] = Vector3::new(2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[9] = Vector3::new(6.0 * C3[0] * x * y, 3.0 * C3[0] * (xx - yy), 0.0);
        g[10] = Vector3::new(C3[1] * y * z, C3[1] * x * z, C3[1] * x * y);
        g[11] = Vector3::new(
            -2.0 * C3[2] * x * y,
            C3[2] * (4.0 * zz - xx - 3.0 * yy),
            8.0 * C3[2] * y * z,
        );
        g[12] = Vector3::new(
            -6.0 * C3[3] * x * z,
            -6.0 * C3[3] * y * z,
            C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        );
        g[13] = Vector3::new(
            C3[4] * (4.0 * zz - 3.0 * xx - yy),
            -2.0 * C3[4] * x * y,
            8.0 * C3[4] * x * z,
        );
        g[14] = Vector3::new(2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy));
        g[15] = Vector3::new(3.0 * C3[6] * (xx - yy), -6.0 * C3[6] * x * y, 0.0);
    }
    (b, g)
}

/// View-dependent color before clamping: `0.5 + sum_k coeffs[k] * Y_k(dir)`.
pub fn eval_color(degree: u8, coeffs: &[[f64; 3]], dir: &Vector3<f64>) -> [f64; 3] {
    let b = eval_basis(degree, dir);
    let mut c = [0.5; 3];
    for (k, coeff) in coeffs.iter().enumerate().take(coeff_count(degree)) {
        for ch in 0..3 {
            c[ch] += coeff[ch] * b[k];
        }
    }
    c
}
