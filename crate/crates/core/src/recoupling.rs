//! Four-electron spin recoupling.
//!
//! The six `Ms = 0` configurations of four occupied orbitals (0 and 2 of up
//! origin, 1 and 3 of down origin) are ordered by ascending assignment mask:
//! up sets {0,1}, {0,2}, {1,2}, {0,3}, {1,3}, {2,3}. Coupled states are
//! `|(S01 S23) S>` in the order (00)0, (11)0, (01)1, (10)1, (11)1, (11)2.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scf::SlaterDeterminant;

fn doubled(x: f64, what: &str) -> Result<i64> {
    let d = 2.0 * x;
    let r = d.round();
    if !x.is_finite() || (d - r).abs() > 1e-9 {
        return Err(Error::Domain(format!("{what} = {x} is not a multiple of 1/2")));
    }
    Ok(r as i64)
}

fn factorial(n: i64) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Clebsch-Gordan coefficient `<j1 m1, j2 m2 | J M>` (Condon-Shortley phase),
/// via the Racah formula.
pub fn clebsch_gordan(j1: f64, m1: f64, j2: f64, m2: f64, j: f64, m: f64) -> Result<f64> {
    let (tj1, tm1) = (doubled(j1, "j1")?, doubled(m1, "m1")?);
    let (tj2, tm2) = (doubled(j2, "j2")?, doubled(m2, "m2")?);
    let (tj, tm) = (doubled(j, "J")?, doubled(m, "M")?);
    if tj1 < 0 || tj2 < 0 || tj < 0 {
        return Err(Error::Domain("angular momenta must be non-negative".into()));
    }
    for (tjx, tmx) in [(tj1, tm1), (tj2, tm2), (tj, tm)] {
        if tmx.abs() > tjx || (tjx - tmx) % 2 != 0 {
            return Ok(0.0);
        }
    }
    if tm1 + tm2 != tm {
        return Ok(0.0);
    }
    if tj < (tj1 - tj2).abs() || tj > tj1 + tj2 || (tj1 + tj2 + tj) % 2 != 0 {
        return Ok(0.0);
    }
    // all combinations below are integers
    let h = |x: i64| x / 2;
    let pre = ((tj + 1) as f64 * factorial(h(tj + tj1 - tj2)) * factorial(h(tj - tj1 + tj2)) * factorial(h(tj1 + tj2 - tj))
        / factorial(h(tj1 + tj2 + tj) + 1))
    .sqrt();
    let norm = (factorial(h(tj + tm))
        * factorial(h(tj - tm))
        * factorial(h(tj1 - tm1))
        * factorial(h(tj1 + tm1))
        * factorial(h(tj2 - tm2))
        * factorial(h(tj2 + tm2)))
    .sqrt();
    let mut sum = 0.0;
    for k in 0..=h(tj1 + tj2 - tj) {
        let args = [
            h(tj1 + tj2 - tj) - k,
            h(tj1 - tm1) - k,
            h(tj2 + tm2) - k,
            h(tj - tj2 + tm1) + k,
            h(tj - tj1 - tm2) + k,
        ];
        if args.iter().any(|&a| a < 0) {
            continue;
        }
        let den = factorial(k) * args.iter().map(|&a| factorial(a)).product::<f64>();
        sum += if k % 2 == 0 { 1.0 } else { -1.0 } / den;
    }
    Ok(pre * norm * sum)
}

/// Up-sector orbital sets of the six configurations, in column order.
pub const CONFIGURATION_MASKS: [u64; 6] = [0b0011, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100];

/// `(S01, S23, S)` of the six coupled rows.
pub const COUPLED_STATES: [(u32, u32, u32); 6] = [(0, 0, 0), (1, 1, 0), (0, 1, 1), (1, 0, 1), (1, 1, 1), (1, 1, 2)];

/// The recoupling matrix with its entries written out.
pub fn recoupling_matrix_4e() -> DMatrix<f64> {
    let s2 = 2f64.sqrt() / 2.0;
    let s3 = 3f64.sqrt();
    let s6 = 6f64.sqrt() / 6.0;
    DMatrix::from_row_slice(
        6,
        6,
        &[
            0.0, 0.5, -0.5, -0.5, 0.5, 0.0, //
            s3 / 3.0, -s3 / 6.0, -s3 / 6.0, -s3 / 6.0, -s3 / 6.0, s3 / 3.0, //
            0.0, 0.5, -0.5, 0.5, -0.5, 0.0, //
            0.0, 0.5, 0.5, -0.5, -0.5, 0.0, //
            s2, 0.0, 0.0, 0.0, 0.0, -s2, //
            s6, s6, s6, s6, s6, s6,
        ],
    )
}

/// The same matrix assembled from Clebsch-Gordan products
/// `<1/2 m0, 1/2 m1|S01 M01><1/2 m2, 1/2 m3|S23 M23><S01 M01, S23 M23|S 0>`.
pub fn recoupling_matrix_from_cg() -> Result<DMatrix<f64>> {
    let mut u = DMatrix::zeros(6, 6);
    for (row, &(s01, s23, s)) in COUPLED_STATES.iter().enumerate() {
        for (col, &mask) in CONFIGURATION_MASKS.iter().enumerate() {
            let m: Vec<f64> = (0..4).map(|i| if mask >> i & 1 == 1 { 0.5 } else { -0.5 }).collect();
            let (m01, m23) = (m[0] + m[1], m[2] + m[3]);
            let (s01, s23, s) = (s01 as f64, s23 as f64, s as f64);
            u[(row, col)] = clebsch_gordan(0.5, m[0], 0.5, m[1], s01, m01)?
                * clebsch_gordan(0.5, m[2], 0.5, m[3], s23, m23)?
                * clebsch_gordan(s01, m01, s23, m23, s, 0.0)?;
        }
    }
    Ok(u)
}

/// Cross-sector overlaps of the four occupied orbitals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapInputs4e {
    pub g01: f64,
    pub g23: f64,
    pub g03: f64,
    pub g21: f64,
}

impl OverlapInputs4e {
    pub fn new(g01: f64, g23: f64, g03: f64, g21: f64) -> Result<Self> {
        let g = OverlapInputs4e { g01, g23, g03, g21 };
        for x in [g01, g23, g03, g21] {
            if !(x.is_finite() && x.abs() <= 1.0) {
                return Err(Error::InvalidInput(format!("overlap {x} outside [-1, 1]")));
            }
        }
        Ok(g)
    }

    /// Up-by-down occupied overlap, rows (0, 2), columns (1, 3).
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.g01, self.g03, self.g21, self.g23])
    }

    /// Whether orthonormal up and down pairs can have these overlaps, i.e.
    /// the largest singular value of the overlap is at most one.
    pub fn is_realizable(&self) -> bool {
        let sv = self.matrix().singular_values();
        sv.iter().all(|&s| s <= 1.0 + 1e-14)
    }

    fn f(&self) -> (f64, f64, f64, f64) {
        let OverlapInputs4e { g01, g23, g03, g21 } = *self;
        (
            (1.0 - g01 * g01) * (1.0 - g23 * g23),
            (1.0 - g03 * g03) * (1.0 - g21 * g21),
            g01 * g23,
            g03 * g21,
        )
    }
}

/// Closed-form overlap matrix of the six configurations.
pub fn analytic_overlap_4e(g: &OverlapInputs4e) -> DMatrix<f64> {
    let (f1, f2, f3, f4) = g.f();
    let (a, b, c, d) = (g.g01 * g.g01, g.g23 * g.g23, g.g03 * g.g03, g.g21 * g.g21);
    let x = -f3 * f4;
    let y = (f3 - f4) * (f3 - f4);
    DMatrix::from_row_slice(
        6,
        6,
        &[
            f1, -d, x, x, -c, f4 * f4, //
            -d, 1.0, -a, -b, y, -c, //
            x, -a, f2, f3 * f3, -b, x, //
            x, -b, f3 * f3, f2, -a, x, //
            -c, y, -b, -a, 1.0, -d, //
            f4 * f4, -c, x, x, -d, f1,
        ],
    )
}

/// Diagonal blocks of `U_R M U_R^T` and the norm of everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoupledBlocks {
    pub m0: [[f64; 2]; 2],
    pub m1: [[f64; 3]; 3],
    pub m2: f64,
    pub offblock_norm: f64,
}

impl RecoupledBlocks {
    /// Dimensions per total spin, `S = 0, 1, 2`.
    pub const DIMENSIONS: [usize; 3] = [2, 3, 1];

    pub fn max_abs_diff(&self, other: &RecoupledBlocks) -> f64 {
        let mut worst = (self.m2 - other.m2).abs();
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((self.m0[i][j] - other.m0[i][j]).abs());
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.m1[i][j] - other.m1[i][j]).abs());
            }
        }
        worst
    }
}

const BLOCKS: [(usize, usize); 3] = [(0, 2), (2, 5), (5, 6)];

fn block_of(i: usize) -> usize {
    BLOCKS.iter().position(|&(a, b)| i >= a && i < b).expect("index < 6")
}

/// Recouples an arbitrary 6x6 overlap matrix.
pub fn recouple(m: &DMatrix<f64>) -> RecoupledBlocks {
    let u = recoupling_matrix_4e();
    let r = &u * m * u.transpose();
    let mut off = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            if block_of(i) != block_of(j) {
                off += r[(i, j)] * r[(i, j)];
            }
        }
    }
    let mut m0 = [[0.0; 2]; 2];
    let mut m1 = [[0.0; 3]; 3];
    for i in 0..2 {
        for j in 0..2 {
            m0[i][j] = r[(i, j)];
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            m1[i][j] = r[(2 + i, 2 + j)];
        }
    }
    RecoupledBlocks {
        m0,
        m1,
        m2: r[(5, 5)],
        offblock_norm: off.sqrt(),
    }
}

pub fn verify_block_diagonal(g: &OverlapInputs4e) -> RecoupledBlocks {
    recouple(&analytic_overlap_4e(g))
}

/// Closed-form block entries.
pub fn closed_form_blocks(g: &OverlapInputs4e) -> RecoupledBlocks {
    let (_, _, f3, f4) = g.f();
    let (a, b, c, d) = (g.g01 * g.g01, g.g23 * g.g23, g.g03 * g.g03, g.g21 * g.g21);
    let m0_12 = -(3f64.sqrt() / 2.0) * (c + d - 2.0 * f3 * f4);
    let m0 = [
        [1.0 + a + b - 0.5 * c - 0.5 * d + f3 * f3 - f3 * f4 + f4 * f4, m0_12],
        [m0_12, 1.0 - a - b + 0.5 * c + 0.5 * d + f3 * f3 + f3 * f4 + f4 * f4],
    ];
    let m1_12 = 0.5 * c + 0.5 * d + f3 * f4 - f4 * f4;
    let m1_13 = (2f64.sqrt() / 2.0) * (c - d);
    let m1 = [
        [1.0 + a - b - 0.5 * c - 0.5 * d - f3 * f3 + f3 * f4, m1_12, m1_13],
        [m1_12, 1.0 - a + b - 0.5 * c - 0.5 * d - f3 * f3 + f3 * f4, m1_13],
        [m1_13, m1_13, 1.0 - a - b + f3 * f3 - f4 * f4],
    ];
    RecoupledBlocks {
        m0,
        m1,
        m2: 1.0 - a - b - c - d + (f3 - f4) * (f3 - f4),
        offblock_norm: 0.0,
    }
}

/// Four-electron determinant whose occupied cross overlap is `g`.
///
/// Up orbitals are the first two unit vectors of a four-orbital basis; the
/// down orbitals are `[G; R]` with `R^T R = I - G^T G`.
pub fn synthetic_seed_4e(g: &OverlapInputs4e) -> Result<SlaterDeterminant> {
    if !g.is_realizable() {
        return Err(Error::InvalidInput("overlap has a singular value above one".into()));
    }
    let gm = g.matrix();
    let rest = DMatrix::identity(2, 2) - gm.transpose() * &gm;
    // R = sqrt(I - G^T G) keeps the construction valid when it is singular
    let (w, v) = crate::linalg::eigh(&rest);
    let r = &v * DMatrix::from_diagonal(&w.map(|x| x.max(0.0).sqrt())) * v.transpose();
    let mut up = DMatrix::zeros(4, 2);
    up[(0, 0)] = 1.0;
    up[(1, 1)] = 1.0;
    let mut down = DMatrix::zeros(4, 2);
    down.view_mut((0, 0), (2, 2)).copy_from(&gm);
    down.view_mut((2, 0), (2, 2)).copy_from(&r);
    SlaterDeterminant::new(up, down)
}
