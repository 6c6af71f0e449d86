//! Real spherical harmonics up to degree 2 with orthonormal (physics)
//! normalization, blocks ordered `l = 0..=lmax`, `m = -l..=l`.
//!
//! With `u = (x, y, z)` on the unit sphere the l = 1 block is
//! `√(3/4π)·(y, z, x)`.

use std::f64::consts::PI;

use crate::{Error, Result, Vec3};

pub const SH_DIM: usize = 9;

/// Offset of the degree-`l` block inside a concatenated SH vector.
pub const fn sh_offset(l: usize) -> usize {
    l * l
}

fn consts() -> [f64; 5] {
    [
        0.5 / PI.sqrt(),
        (3.0 / (4.0 * PI)).sqrt(),
        0.5 * (15.0 / PI).sqrt(),
        0.25 * (5.0 / PI).sqrt(),
        0.25 * (15.0 / PI).sqrt(),
    ]
}

/// All nine harmonics at a unit vector (no validation).
pub fn sh_unit(u: Vec3) -> [f64; SH_DIM] {
    let [c0, c1, c2, c20, c22] = consts();
    let [x, y, z] = u;
    [
        c0,
        c1 * y,
        c1 * z,
        c1 * x,
        c2 * x * y,
        c2 * y * z,
        c20 * (3.0 * z * z - 1.0),
        c2 * x * z,
        c22 * (x * x - y * y),
    ]
}

/// Jacobian `∂Y/∂u` of the polynomial forms above, row per component.
fn sh_unit_jacobian(u: Vec3) -> [[f64; 3]; SH_DIM] {
    let [_, c1, c2, c20, c22] = consts();
    let [x, y, z] = u;
    [
        [0.0, 0.0, 0.0],
        [0.0, c1, 0.0],
        [0.0, 0.0, c1],
        [c1, 0.0, 0.0],
        [c2 * y, c2 * x, 0.0],
        [0.0, c2 * z, c2 * y],
        [0.0, 0.0, 6.0 * c20 * z],
        [c2 * z, 0.0, c2 * x],
        [2.0 * c22 * x, -2.0 * c22 * y, 0.0],
    ]
}

/// Harmonics of the direction of an arbitrary (non-unit) vector and their
/// Jacobian with respect to that vector. A zero vector has no direction: the
/// l > 0 components and the whole Jacobian are zero.
pub fn sh_of_vector(r: Vec3) -> ([f64; SH_DIM], [[f64; 3]; SH_DIM]) {
    let n = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    if n < 1e-12 {
        let mut y = [0.0; SH_DIM];
        y[0] = consts()[0];
        return (y, [[0.0; 3]; SH_DIM]);
    }
    let u = [r[0] / n, r[1] / n, r[2] / n];
    let y = sh_unit(u);
    let du = sh_unit_jacobian(u);
    // ∂u/∂r = (I - u uᵀ)/n
    let mut jac = [[0.0; 3]; SH_DIM];
    for (row, g) in jac.iter_mut().zip(du.iter()) {
        let gu = g[0] * u[0] + g[1] * u[1] + g[2] * u[2];
        for k in 0..3 {
            row[k] = (g[k] - gu * u[k]) / n;
        }
    }
    (y, jac)
}

/// Real spherical harmonics of a unit vector, length `(lmax + 1)²`.
pub fn real_spherical_harmonics(unit_vec: Vec3, lmax: usize) -> Result<Vec<f64>> {
    if lmax > 2 {
        return Err(Error::Argument(format!("lmax {lmax} exceeds the supported degree 2")));
    }
    let n = (unit_vec[0].powi(2) + unit_vec[1].powi(2) + unit_vec[2].powi(2)).sqrt();
    if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
        return Err(Error::Argument(format!("expected a unit vector, norm is {n}")));
    }
    Ok(sh_unit(unit_vec)[..(lmax + 1) * (lmax + 1)].to_vec())
}
