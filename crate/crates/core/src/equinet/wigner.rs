//! Real Wigner D matrices acting on degree-l blocks of real harmonics.

use rand::Rng;

use super::cg::cg_block;
use crate::{Error, Result, Vec3};

pub type Rotation = [[f64; 3]; 3];

pub const IDENTITY: Rotation = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Real-harmonic l = 1 components are ordered `(y, z, x)`.
const L1_AXES: [usize; 3] = [1, 2, 0];

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerD {
    pub l: usize,
    pub data: Vec<f64>,
}

impl WignerD {
    pub fn dim(&self) -> usize {
        2 * self.l + 1
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim() + j]
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| self.at(i, j) * v[j]).sum())
            .collect()
    }

    pub fn matmul(&self, other: &WignerD) -> WignerD {
        let d = self.dim();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[i * d + j] = (0..d).map(|k| self.at(i, k) * other.at(k, j)).sum();
            }
        }
        WignerD { l: self.l, data }
    }
}

pub fn check_rotation(r: &Rotation) -> Result<()> {
    let mut err = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            let e = if i == j { 1.0 } else { 0.0 };
            err = err.max((dot - e).abs());
        }
    }
    if !err.is_finite() || err > 1e-6 {
        return Err(Error::Argument(format!("matrix is not orthogonal (max deviation {err:e})")));
    }
    if det3(r) <= 0.0 {
        return Err(Error::Argument("rotation must have determinant +1".into()));
    }
    Ok(())
}

pub fn det3(r: &Rotation) -> f64 {
    r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
}

fn d1_unchecked(r: &Rotation) -> WignerD {
    let mut data = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            data[i * 3 + j] = r[L1_AXES[i]][L1_AXES[j]];
        }
    }
    WignerD { l: 1, data }
}

fn d2_from_d1(d1: &WignerD) -> WignerD {
    let cg = cg_block(1, 1, 2).expect("1x1->2 path exists");
    let mut data = vec![0.0; 25];
    for &(a, b, r, c) in &cg.entries {
        for &(a2, b2, s, c2) in &cg.entries {
            data[r * 5 + s] += c * c2 * d1.at(a, a2) * d1.at(b, b2);
        }
    }
    WignerD { l: 2, data }
}

/// `D^l(R)` for `l ≤ 2`.
pub fn wigner_d(r: &Rotation, l: usize) -> Result<WignerD> {
    check_rotation(r)?;
    match l {
        0 => Ok(WignerD { l: 0, data: vec![1.0] }),
        1 => Ok(d1_unchecked(r)),
        2 => Ok(d2_from_d1(&d1_unchecked(r))),
        _ => Err(Error::Argument(format!("degree {l} is not supported"))),
    }
}

/// `[D⁰, D¹, D²]`.
pub fn wigner_all(r: &Rotation) -> Result<[WignerD; 3]> {
    Ok([wigner_d(r, 0)?, wigner_d(r, 1)?, wigner_d(r, 2)?])
}

pub fn rotate(r: &Rotation, v: Vec3) -> Vec3 {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

pub fn compose(a: &Rotation, b: &Rotation) -> Rotation {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_from_quaternion(q: [f64; 4]) -> Rotation {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Haar-uniform random rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let q = [
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
    ];
    rotation_from_quaternion(q)
}

/// Standard normal draw (Box–Muller).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
