//! Molecular integrals in an orthonormal orbital basis.
//!
//! Two-electron integrals are kept in chemists' notation `(pq|rs)` and stored
//! once per 8-fold permutation orbit. Everything downstream assumes the
//! orbital basis is orthonormal, i.e. the basis overlap is the identity.

mod fcidump;
mod operator;

pub use fcidump::{parse_fcidump, read_fcidump, write_fcidump, DUPLICATE_TOLERANCE};
pub use operator::{s2_operator, Spin, SpinBlockedOperator, Tensor4, TwoBodyBlock};

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Particle counts and scalar data read from an FCIDUMP header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub n_orbitals: usize,
    pub n_alpha: usize,
    pub n_beta: usize,
    pub ms2: i64,
    pub core_energy: f64,
}

impl SystemSpec {
    pub fn new(n_orbitals: usize, n_alpha: usize, n_beta: usize, core_energy: f64) -> Result<Self> {
        let spec = SystemSpec {
            n_orbitals,
            n_alpha,
            n_beta,
            ms2: n_alpha as i64 - n_beta as i64,
            core_energy,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds the spec from total electron count and `2*Ms`.
    pub fn from_nelec(n_orbitals: usize, n_electrons: usize, ms2: i64, core_energy: f64) -> Result<Self> {
        let n = n_electrons as i64;
        if (n + ms2) % 2 != 0 || ms2.abs() > n {
            return Err(Error::InvalidInput(format!(
                "NELEC={n_electrons} is incompatible with MS2={ms2}"
            )));
        }
        Self::new(n_orbitals, ((n + ms2) / 2) as usize, ((n - ms2) / 2) as usize, core_energy)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_orbitals == 0 {
            return Err(Error::InvalidInput("number of orbitals must be at least 1".into()));
        }
        if self.n_alpha > self.n_orbitals || self.n_beta > self.n_orbitals {
            return Err(Error::InvalidInput(format!(
                "{} alpha / {} beta electrons do not fit into {} orbitals",
                self.n_alpha, self.n_beta, self.n_orbitals
            )));
        }
        if self.n_alpha as i64 - self.n_beta as i64 != self.ms2 {
            return Err(Error::InvalidInput("MS2 does not match N_alpha - N_beta".into()));
        }
        Ok(())
    }

    pub fn n_electrons(&self) -> usize {
        self.n_alpha + self.n_beta
    }

    /// `Ms = (N_alpha - N_beta) / 2`.
    pub fn ms(&self) -> f64 {
        self.ms2 as f64 / 2.0
    }
}

#[inline]
fn pair_index(p: usize, q: usize) -> usize {
    if p >= q {
        p * (p + 1) / 2 + q
    } else {
        q * (q + 1) / 2 + p
    }
}

/// Two-electron integrals `(pq|rs)` with 8-fold permutational symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct Eri {
    n: usize,
    data: Vec<f64>,
}

impl Eri {
    pub fn zeros(n: usize) -> Self {
        let npair = n * (n + 1) / 2;
        Eri {
            n,
            data: vec![0.0; npair * (npair + 1) / 2],
        }
    }

    pub fn n_orbitals(&self) -> usize {
        self.n
    }

    /// Position of the symmetry orbit of `(pq|rs)` in the packed store.
    #[inline]
    pub fn canonical_index(p: usize, q: usize, r: usize, s: usize) -> usize {
        pair_index(pair_index(p, q), pair_index(r, s))
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        self.data[Self::canonical_index(p, q, r, s)]
    }

    #[inline]
    pub fn set(&mut self, p: usize, q: usize, r: usize, s: usize, value: f64) {
        self.data[Self::canonical_index(p, q, r, s)] = value;
    }

    /// Unique `(p>=q, r>=s, pq>=rs)` representatives with their values.
    pub fn unique_entries(&self) -> impl Iterator<Item = ([usize; 4], f64)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |p| {
            (0..=p).flat_map(move |q| {
                let pq = pair_index(p, q);
                (0..=p).flat_map(move |r| {
                    let s_max = if r == p { q } else { r };
                    (0..=s_max).map(move |s| {
                        let rs = pair_index(r, s);
                        debug_assert!(rs <= pq);
                        let v = self.data[pair_index(pq, rs)];
                        ([p, q, r, s], v)
                    })
                })
            })
        })
    }

    pub fn to_dense(&self) -> DenseTensor4 {
        let n = self.n;
        let mut t = DenseTensor4::zeros(n);
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        t.set(p, q, r, s, self.get(p, q, r, s));
                    }
                }
            }
        }
        t
    }
}

/// Plain row-major rank-4 tensor with equal extents.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor4 {
    n: usize,
    data: Vec<f64>,
}

impl DenseTensor4 {
    pub fn zeros(n: usize) -> Self {
        DenseTensor4 {
            n,
            data: vec![0.0; n * n * n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, p: usize, q: usize, r: usize, s: usize) -> usize {
        ((p * self.n + q) * self.n + r) * self.n + s
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        self.data[self.idx(p, q, r, s)]
    }

    #[inline]
    pub fn set(&mut self, p: usize, q: usize, r: usize, s: usize, v: f64) {
        let i = self.idx(p, q, r, s);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `J[r,s] = sum_pq T[p,q,r,s] x[p,q]`.
    pub fn contract_first_pair(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let n2 = n * n;
        let mut out = vec![0.0; n2];
        for p in 0..n {
            for q in 0..n {
                let w = x[(p, q)];
                if w == 0.0 {
                    continue;
                }
                let block = &self.data[(p * n + q) * n2..(p * n + q + 1) * n2];
                for (o, &t) in out.iter_mut().zip(block) {
                    *o += w * t;
                }
            }
        }
        // out is row-major in (r, s)
        DMatrix::from_row_slice(n, n, &out)
    }

    /// `K[r,q] = sum_ps T[p,q,r,s] x[p,s]`.
    pub fn contract_outer_pair(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        // column p of x^T is row p of x, contiguous
        let xt = x.transpose();
        let mut out = DMatrix::zeros(n, n);
        for p in 0..n {
            let row = xt.column(p);
            let row = row.as_slice();
            for q in 0..n {
                for r in 0..n {
                    let base = ((p * n + q) * n + r) * n;
                    let acc: f64 = self.data[base..base + n].iter().zip(row).map(|(t, w)| t * w).sum();
                    out[(r, q)] += acc;
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &DenseTensor4) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One- and two-electron integrals plus the scalar core energy.
#[derive(Debug, Clone)]
pub struct IntegralSet {
    pub h: DMatrix<f64>,
    pub v: Eri,
    pub core_energy: f64,
    dense: Arc<std::sync::OnceLock<Arc<DenseTensor4>>>,
}

impl IntegralSet {
    pub fn new(h: DMatrix<f64>, v: Eri, core_energy: f64) -> Result<Self> {
        let n = h.nrows();
        if h.ncols() != n || v.n_orbitals() != n {
            return Err(Error::InvalidInput("integral dimensions disagree".into()));
        }
        if h.iter().chain(v.data.iter()).any(|x| !x.is_finite()) || !core_energy.is_finite() {
            return Err(Error::DataConsistency("non-finite integral value".into()));
        }
        if crate::linalg::max_asymmetry(&h) > DUPLICATE_TOLERANCE {
            return Err(Error::DataConsistency("one-electron integrals are not symmetric".into()));
        }
        Ok(IntegralSet {
            h,
            v,
            core_energy,
            dense: Arc::default(),
        })
    }

    pub fn n_orbitals(&self) -> usize {
        self.h.nrows()
    }

    /// Fully unpacked `(pq|rs)`, built once and shared.
    pub fn dense_eri(&self) -> Arc<DenseTensor4> {
        self.dense.get_or_init(|| Arc::new(self.v.to_dense())).clone()
    }

    /// Integrals in a rotated orthonormal basis: `h' = U^T h U`, `(pq|rs)' = ...`.
    pub fn rotated(&self, u: &DMatrix<f64>) -> Result<IntegralSet> {
        let n = self.n_orbitals();
        let h = u.transpose() * &self.h * u;
        let src = self.dense_eri();
        // four quarter transformations
        let mut cur = src.as_slice().to_vec();
        for _ in 0..4 {
            // transform the first index and rotate it to the back
            let mut next = vec![0.0; n * n * n * n];
            for a in 0..n {
                for p in 0..n {
                    let c = u[(p, a)];
                    if c == 0.0 {
                        continue;
                    }
                    let src_block = &cur[p * n * n * n..(p + 1) * n * n * n];
                    for (rest, &val) in src_block.iter().enumerate() {
                        // new layout: (rest..., a)
                        next[rest * n + a] += c * val;
                    }
                }
            }
            cur = next;
        }
        let mut v = Eri::zeros(n);
        for p in 0..n {
            for q in 0..=p {
                for r in 0..n {
                    for s in 0..=r {
                        v.set(p, q, r, s, cur[((p * n + q) * n + r) * n + s]);
                    }
                }
            }
        }
        IntegralSet::new(h, v, self.core_energy)
    }
}

impl PartialEq for IntegralSet {
    fn eq(&self, other: &Self) -> bool {
        self.h == other.h && self.v == other.v && self.core_energy == other.core_energy
    }
}
