//! Real spherical-harmonic basis up to degree 4 (16 values) for direction encoding.

use crate::geometry::Vec3;

pub const SH_DIM: usize = 16;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_87;
const C4: f64 = 1.092_548_430_592_079_2;
const C6A: f64 = 0.946_174_695_757_559_97;
const C6B: f64 = 0.315_391_565_252_519_99;
const C8: f64 = 0.546_274_215_296_039_59;
const C9: f64 = 0.590_043_589_926_643_52;
const C10: f64 = 2.890_611_442_640_553_8;
const C11: f64 = 0.457_045_799_464_465_72;
const C12: f64 = 0.373_176_332_590_115_4;
const C14: f64 = 1.445_305_721_320_276_9;

pub fn sh_basis(d: &Vec3) -> [f64; SH_DIM] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (x2, y2, z2) = (x * x, y * y, z * z);
    [
        C0,
        -C1 * y,
        C1 * z,
        -C1 * x,
        C4 * x * y,
        -C4 * y * z,
        C6A * z2 - C6B,
        -C4 * x * z,
        C8 * (x2 - y2),
        C9 * y * (y2 - 3.0 * x2),
        C10 * x * y * z,
        C11 * y * (1.0 - 5.0 * z2),
        C12 * z * (5.0 * z2 - 3.0),
        C11 * x * (1.0 - 5.0 * z2),
        C14 * z * (x2 - y2),
        C9 * x * (3.0 * y2 - x2),
    ]
}

/// Partial derivatives of each basis function with respect to `(x, y, z)`,
/// treating the components as independent.
pub fn sh_basis_jacobian(d: &Vec3) -> [[f64; 3]; SH_DIM] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (x2, y2, z2) = (x * x, y * y, z * z);
    [
        [0.0, 0.0, 0.0],
        [0.0, -C1, 0.0],
        [0.0, 0.0, C1],
        [-C1, 0.0, 0.0],
        [C4 * y, C4 * x, 0.0],
        [0.0, -C4 * z, -C4 * y],
        [0.0, 0.0, 2.0 * C6A * z],
        [-C4 * z, 0.0, -C4 * x],
        [2.0 * C8 * x, -2.0 * C8 * y, 0.0],
        [-6.0 * C9 * x * y, 3.0 * C9 * (y2 - x2), 0.0],
        [C10 * y * z, C10 * x * z, C10 * x * y],
        [0.0, C11 * (1.0 - 5.0 * z2), -10.0 * C11 * y * z],
        [0.0, 0.0, C12 * (15.0 * z2 - 3.0)],
        [C11 * (1.0 - 5.0 * z2), 0.0, -10.0 * C11 * x * z],
        [2.0 * C14 * x * z, -2.0 * C14 * y * z, C14 * (x2 - y2)],
        [3.0 * C9 * (y2 - x2), 6.0 * C9 * x * y, 0.0],
    ]
}
