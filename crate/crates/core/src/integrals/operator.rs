//! Spin-blocked second-quantized operators.
//!
//! An operator is
//!
//! ```text
//! O = c + sum h^{st}[p,q] a+_{ps} a_{qt}
//!       + 1/2 sum T^{s1 s2 s3 s4}[p,q,r,s] a+_{p s1} a+_{r s3} a_{s s4} a_{q s2}
//! ```
//!
//! so a two-body block indexed `(s1 s2 | s3 s4)` pairs the spin of each
//! creator with the annihilator in the same chemists' bracket. Blocks are
//! assumed pair symmetric, `T^{1234}[pqrs] = T^{3412}[rspq]`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::{DenseTensor4, IntegralSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub const BOTH: [Spin; 2] = [Spin::Up, Spin::Down];

    pub fn index(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }

    pub fn flip(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }
}

impl fmt::Display for Spin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Spin::Up => "up",
            Spin::Down => "down",
        })
    }
}

/// Spatial part of a two-body block.
#[derive(Debug, Clone)]
pub enum Tensor4 {
    Dense(Arc<DenseTensor4>),
    /// `scale * delta_pq * delta_rs`.
    Kronecker { scale: f64 },
}

impl Tensor4 {
    pub fn get(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        match self {
            Tensor4::Dense(t) => t.get(p, q, r, s),
            Tensor4::Kronecker { scale } => {
                if p == q && r == s {
                    *scale
                } else {
                    0.0
                }
            }
        }
    }

    /// `sum T[p,q,r,s] x[p,q] y[r,s]`.
    pub fn coulomb(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        match self {
            Tensor4::Dense(t) => crate::linalg::frobenius_dot(&t.contract_first_pair(x), y),
            Tensor4::Kronecker { scale } => scale * x.trace() * y.trace(),
        }
    }

    /// `sum T[p,q,r,s] x[p,s] y[r,q]`.
    pub fn exchange(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        match self {
            Tensor4::Dense(t) => crate::linalg::frobenius_dot(&t.contract_outer_pair(x), y),
            Tensor4::Kronecker { scale } => scale * (x * y).trace(),
        }
    }

    pub fn to_dense(&self, n: usize) -> DenseTensor4 {
        match self {
            Tensor4::Dense(t) => (**t).clone(),
            Tensor4::Kronecker { scale } => {
                let mut t = DenseTensor4::zeros(n);
                for p in 0..n {
                    for r in 0..n {
                        t.set(p, p, r, r, *scale);
                    }
                }
                t
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoBodyBlock {
    pub spins: [Spin; 4],
    pub tensor: Tensor4,
}

#[derive(Debug, Clone)]
pub struct SpinBlockedOperator {
    n: usize,
    pub one_body: Vec<(Spin, Spin, DMatrix<f64>)>,
    pub two_body: Vec<TwoBodyBlock>,
    pub scalar: f64,
}

impl SpinBlockedOperator {
    pub fn new(n: usize, scalar: f64) -> Self {
        SpinBlockedOperator {
            n,
            one_body: Vec::new(),
            two_body: Vec::new(),
            scalar,
        }
    }

    /// The scalar `c`, i.e. `c` times the identity.
    pub fn identity(n: usize) -> Self {
        Self::new(n, 1.0)
    }

    /// Electronic Hamiltonian with the core energy as scalar part.
    pub fn hamiltonian(ints: &IntegralSet) -> Self {
        let n = ints.n_orbitals();
        let mut op = Self::new(n, ints.core_energy);
        for s in Spin::BOTH {
            op.one_body.push((s, s, ints.h.clone()));
        }
        let eri = ints.dense_eri();
        for s in Spin::BOTH {
            for t in Spin::BOTH {
                op.two_body.push(TwoBodyBlock {
                    spins: [s, s, t, t],
                    tensor: Tensor4::Dense(eri.clone()),
                });
            }
        }
        op
    }

    pub fn n_orbitals(&self) -> usize {
        self.n
    }

    pub fn one_body_element(&self, s: Spin, t: Spin, p: usize, q: usize) -> f64 {
        self.one_body
            .iter()
            .filter(|(a, b, _)| *a == s && *b == t)
            .map(|(_, _, m)| m[(p, q)])
            .sum()
    }

    pub fn two_body_element(&self, spins: [Spin; 4], p: usize, q: usize, r: usize, s: usize) -> f64 {
        self.two_body
            .iter()
            .filter(|b| b.spins == spins)
            .map(|b| b.tensor.get(p, q, r, s))
            .sum()
    }

    fn all_spin_quads() -> impl Iterator<Item = [Spin; 4]> {
        (0..16).map(|k| {
            let s = |b: usize| if (k >> b) & 1 == 0 { Spin::Up } else { Spin::Down };
            [s(3), s(2), s(1), s(0)]
        })
    }

    /// Largest violation of real Hermiticity over all blocks.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0_f64;
        for s in Spin::BOTH {
            for t in Spin::BOTH {
                for p in 0..n {
                    for q in 0..n {
                        let d = self.one_body_element(s, t, p, q) - self.one_body_element(t, s, q, p);
                        worst = worst.max(d.abs());
                    }
                }
            }
        }
        for spins in Self::all_spin_quads() {
            let [a, b, c, d] = spins;
            let adj = [b, a, d, c];
            worst = worst.max(self.quad_mismatch(spins, adj, |p, q, r, s| (q, p, s, r)));
        }
        worst
    }

    /// Largest violation of `T^{1234}[pqrs] = T^{3412}[rspq]`.
    pub fn pair_symmetry_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for spins in Self::all_spin_quads() {
            let [a, b, c, d] = spins;
            worst = worst.max(self.quad_mismatch(spins, [c, d, a, b], |p, q, r, s| (r, s, p, q)));
        }
        worst
    }

    fn quad_mismatch(
        &self,
        spins: [Spin; 4],
        image: [Spin; 4],
        perm: impl Fn(usize, usize, usize, usize) -> (usize, usize, usize, usize),
    ) -> f64 {
        let has = |sp: [Spin; 4]| self.two_body.iter().any(|b| b.spins == sp);
        if !has(spins) && !has(image) {
            return 0.0;
        }
        let n = self.n;
        let mut worst = 0.0_f64;
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    for s in 0..n {
                        let (p2, q2, r2, s2) = perm(p, q, r, s);
                        let d = self.two_body_element(spins, p, q, r, s)
                            - self.two_body_element(image, p2, q2, r2, s2);
                        worst = worst.max(d.abs());
                    }
                }
            }
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        for (_, _, m) in &self.one_body {
            if m.nrows() != self.n || m.ncols() != self.n {
                return Err(Error::InvalidInput("one-body block has the wrong shape".into()));
            }
        }
        for b in &self.two_body {
            if let Tensor4::Dense(t) = &b.tensor {
                if t.dim() != self.n {
                    return Err(Error::InvalidInput("two-body block has the wrong shape".into()));
                }
            }
        }
        let herm = self.hermiticity_error();
        if herm > 1e-12 {
            return Err(Error::InvalidInput(format!("operator is not Hermitian (error {herm:.2e})")));
        }
        let pair = self.pair_symmetry_error();
        if pair > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "two-body blocks are not pair symmetric (error {pair:.2e})"
            )));
        }
        Ok(())
    }
}

/// Total-spin operator `S^2 = Sz^2 + (S+S- + S-S+)/2` over `n` spatial orbitals.
pub fn s2_operator(n: usize) -> Result<SpinBlockedOperator> {
    if n == 0 {
        return Err(Error::InvalidInput("S^2 needs at least one orbital".into()));
    }
    let mut op = SpinBlockedOperator::new(n, 0.0);
    let id = DMatrix::identity(n, n) * 0.75;
    op.one_body.push((Spin::Up, Spin::Up, id.clone()));
    op.one_body.push((Spin::Down, Spin::Down, id));
    use Spin::{Down, Up};
    for (spins, scale) in [
        ([Up, Up, Up, Up], 0.5),
        ([Down, Down, Down, Down], 0.5),
        ([Up, Up, Down, Down], -0.5),
        ([Down, Down, Up, Up], -0.5),
        ([Up, Down, Down, Up], 1.0),
        ([Down, Up, Up, Down], 1.0),
    ] {
        op.two_body.push(TwoBodyBlock {
            spins,
            tensor: Tensor4::Kronecker { scale },
        });
    }
    Ok(op)
}
