//! Clebsch–Gordan coupling coefficients in the real spherical-harmonic basis.
//!
//! Complex coefficients come from the Racah formula and are rotated into the
//! real basis used by [`super::sh`]. Each real block is then made real
//! (paths with odd `l1 + l2 + l3` are purely imaginary before that) and its
//! overall sign fixed so the first non-zero entry in `(m1, m2, m3)` order is
//! positive.

use std::sync::OnceLock;

use num_complex::Complex64;

pub const LMAX: usize = 2;

/// Real coupling tensor for one `(l1, l2) -> l3` path.
#[derive(Debug, Clone)]
pub struct CgBlock {
    pub l1: usize,
    pub l2: usize,
    pub l3: usize,
    /// Dense `[2l1+1][2l2+1][2l3+1]`, row-major.
    pub dense: Vec<f64>,
    /// Non-zero entries `(m1, m2, m3, value)` with 0-based m indices.
    pub entries: Vec<(usize, usize, usize, f64)>,
}

impl CgBlock {
    pub fn get(&self, m1: usize, m2: usize, m3: usize) -> f64 {
        let (d2, d3) = (2 * self.l2 + 1, 2 * self.l3 + 1);
        self.dense[(m1 * d2 + m2) * d3 + m3]
    }
}

fn fact(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `<j1 m1 j2 m2 | J M>` for integer angular momenta (Condon–Shortley).
pub fn clebsch_gordan_complex(j1: i64, m1: i64, j2: i64, m2: i64, j: i64, m: i64) -> f64 {
    if m1 + m2 != m || j < (j1 - j2).abs() || j > j1 + j2 {
        return 0.0;
    }
    if m1.abs() > j1 || m2.abs() > j2 || m.abs() > j {
        return 0.0;
    }
    let pre = ((2 * j + 1) as f64 * fact(j + j1 - j2) * fact(j - j1 + j2) * fact(j1 + j2 - j)
        / fact(j1 + j2 + j + 1))
        .sqrt();
    let norm = (fact(j + m)
        * fact(j - m)
        * fact(j1 - m1)
        * fact(j1 + m1)
        * fact(j2 - m2)
        * fact(j2 + m2))
    .sqrt();
    let mut sum = 0.0;
    for k in 0..=(j1 + j2 - j) {
        let d = [
            k,
            j1 + j2 - j - k,
            j1 - m1 - k,
            j2 + m2 - k,
            j - j2 + m1 + k,
            j - j1 - m2 + k,
        ];
        if d.iter().any(|&v| v < 0) {
            continue;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / d.iter().map(|&v| fact(v)).product::<f64>();
    }
    pre * norm * sum
}

/// Complex-to-real change of basis: `Y_real[m] = Σ_μ U[m][μ] Y_complex[μ]`,
/// indices shifted by `l`.
fn real_basis(l: usize) -> Vec<Vec<Complex64>> {
    let d = 2 * l + 1;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut u = vec![vec![Complex64::new(0.0, 0.0); d]; d];
    let li = l as i64;
    for m in -li..=li {
        let row = (m + li) as usize;
        let sign = if m.abs() % 2 == 0 { 1.0 } else { -1.0 };
        if m > 0 {
            u[row][(-m + li) as usize] = Complex64::new(s, 0.0);
            u[row][(m + li) as usize] = Complex64::new(sign * s, 0.0);
        } else if m == 0 {
            u[row][li as usize] = Complex64::new(1.0, 0.0);
        } else {
            u[row][(m + li) as usize] = Complex64::new(0.0, s);
            u[row][(-m + li) as usize] = Complex64::new(0.0, -sign * s);
        }
    }
    u
}

fn build_block(l1: usize, l2: usize, l3: usize) -> CgBlock {
    let (d1, d2, d3) = (2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1);
    let (u1, u2, u3) = (real_basis(l1), real_basis(l2), real_basis(l3));
    let mut c = vec![Complex64::new(0.0, 0.0); d1 * d2 * d3];
    for a in 0..d1 {
        for b in 0..d2 {
            for r in 0..d3 {
                let mut acc = Complex64::new(0.0, 0.0);
                for mu1 in 0..d1 {
                    for mu2 in 0..d2 {
                        for big in 0..d3 {
                            let cg = clebsch_gordan_complex(
                                l1 as i64,
                                mu1 as i64 - l1 as i64,
                                l2 as i64,
                                mu2 as i64 - l2 as i64,
                                l3 as i64,
                                big as i64 - l3 as i64,
                            );
                            if cg == 0.0 {
                                continue;
                            }
                            acc += u3[r][big] * u1[a][mu1].conj() * u2[b][mu2].conj() * cg;
                        }
                    }
                }
                c[(a * d2 + b) * d3 + r] = acc;
            }
        }
    }
    let re: f64 = c.iter().map(|z| z.re.abs()).sum();
    let im: f64 = c.iter().map(|z| z.im.abs()).sum();
    let mut dense: Vec<f64> = c.iter().map(|z| if re >= im { z.re } else { z.im }).collect();
    for v in dense.iter_mut() {
        if v.abs() < 1e-14 {
            *v = 0.0;
        }
    }
    if let Some(first) = dense.iter().copied().find(|v| *v != 0.0) {
        if first < 0.0 {
            dense.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let mut entries = Vec::new();
    for a in 0..d1 {
        for b in 0..d2 {
            for r in 0..d3 {
                let v = dense[(a * d2 + b) * d3 + r];
                if v != 0.0 {
                    entries.push((a, b, r, v));
                }
            }
        }
    }
    CgBlock {
        l1,
        l2,
        l3,
        dense,
        entries,
    }
}

pub fn path_allowed(l1: usize, l2: usize, l3: usize) -> bool {
    l1.max(l2).max(l3) <= LMAX && l3 >= l1.abs_diff(l2) && l3 <= l1 + l2
}

struct CgTable {
    blocks: Vec<Option<CgBlock>>,
}

fn table() -> &'static CgTable {
    static TABLE: OnceLock<CgTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = LMAX + 1;
        let mut blocks = Vec::with_capacity(n * n * n);
        for l1 in 0..n {
            for l2 in 0..n {
                for l3 in 0..n {
                    blocks.push(path_allowed(l1, l2, l3).then(|| build_block(l1, l2, l3)));
                }
            }
        }
        CgTable { blocks }
    })
}

/// Real coupling block for an allowed path, `None` when the triangle rule
/// fails or a degree exceeds 2.
pub fn cg_block(l1: usize, l2: usize, l3: usize) -> Option<&'static CgBlock> {
    if l1.max(l2).max(l3) > LMAX {
        return None;
    }
    let n = LMAX + 1;
    table().blocks[(l1 * n + l2) * n + l3].as_ref()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_path_is_one() {
        let b = cg_block(0, 0, 0).unwrap();
        assert_eq!(b.dense, vec![1.0]);
    }

    #[test]
    fn racah_reference_values() {
        // <1 1 1 -1 | 0 0> = 1/√3
        assert!((clebsch_gordan_complex(1, 1, 1, -1, 0, 0) - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        // <1 0 1 0 | 2 0> = √(2/3)
        assert!((clebsch_gordan_complex(1, 0, 1, 0, 2, 0) - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        // <1 1 1 0 | 1 1> = 1/√2
        assert!((clebsch_gordan_complex(1, 1, 1, 0, 1, 1) - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(clebsch_gordan_complex(1, 1, 1, 1, 1, 1), 0.0);
    }

    #[test]
    fn real_blocks_are_orthonormal() {
        for l1 in 0..=2 {
            for l2 in 0..=2 {
                let (d1, d2) = (2 * l1 + 1, 2 * l2 + 1);
                let blocks: Vec<&CgBlock> = (0..=2).filter_map(|l3| cg_block(l1, l2, l3)).collect();
                for p in &blocks {
                    for q in &blocks {
                        for m3 in 0..2 * p.l3 + 1 {
                            for n3 in 0..2 * q.l3 + 1 {
                                let mut s = 0.0;
                                for a in 0..d1 {
                                    for b in 0..d2 {
                                        s += p.get(a, b, m3) * q.get(a, b, n3);
                                    }
                                }
                                let e = if p.l3 == q.l3 && m3 == n3 { 1.0 } else { 0.0 };
                                assert!((s - e).abs() < 1e-12, "({l1},{l2}) {} {}: {s}", p.l3, q.l3);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn selection_rules() {
        assert!(cg_block(1, 1, 2).is_some());
        assert!(cg_block(2, 0, 1).is_none());
        assert!(cg_block(2, 2, 3).is_none());
    }
}
