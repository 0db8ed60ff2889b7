//! Random determinants and integrals for property tests and self checks.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::Result;
use crate::integrals::{Eri, IntegralSet, SystemSpec};
use crate::scf::SlaterDeterminant;

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Gram-Schmidt on the columns of `m`, in order.
fn orthonormalize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for j in 0..m.ncols() {
        for _ in 0..2 {
            for i in 0..j {
                let d = m.column(i).dot(&m.column(j));
                let ci = m.column(i).into_owned();
                m.column_mut(j).axpy(-d, &ci, 1.0);
            }
        }
        let n = m.column(j).norm();
        m.column_mut(j).unscale_mut(n);
    }
    m
}

/// `n x k` matrix with orthonormal columns.
pub fn random_orthonormal(rng: &mut impl Rng, n: usize, k: usize) -> DMatrix<f64> {
    orthonormalize(uniform(rng, n, k))
}

pub fn random_determinant(rng: &mut impl Rng, n: usize, n_alpha: usize, n_beta: usize) -> SlaterDeterminant {
    SlaterDeterminant::new_unchecked(random_orthonormal(rng, n, n_alpha), random_orthonormal(rng, n, n_beta))
}

/// Orbitals whose overlap with `bra` (orthonormal `n x k`) has exactly
/// `zeros` vanishing singular values. Needs `zeros <= n - k`.
pub fn partner_with_zeros(rng: &mut impl Rng, bra: &DMatrix<f64>, zeros: usize) -> DMatrix<f64> {
    let (n, k) = bra.shape();
    assert!(zeros <= k && zeros <= n - k, "cannot place {zeros} zero channels");
    let mut full = bra.clone().resize_horizontally(n, 0.0);
    let rest = uniform(rng, n, n - k);
    full.view_mut((0, k), (n, n - k)).copy_from(&rest);
    let q = orthonormalize(full);
    // coefficients in the basis q: first `zeros` columns live in the complement
    let mut c = uniform(rng, n, k);
    for j in 0..zeros {
        for i in 0..k {
            c[(i, j)] = 0.0;
        }
    }
    q * orthonormalize(c)
}

/// Bra and ket with the requested number of zero channels split over sectors.
pub fn determinant_pair(
    rng: &mut impl Rng,
    n: usize,
    n_alpha: usize,
    n_beta: usize,
    zeros: usize,
) -> (SlaterDeterminant, SlaterDeterminant) {
    let bra = random_determinant(rng, n, n_alpha, n_beta);
    let cap_a = n_alpha.min(n - n_alpha);
    let cap_b = n_beta.min(n - n_beta);
    let za = zeros.min(cap_a);
    let zb = (zeros - za).min(cap_b);
    let ket = SlaterDeterminant::new_unchecked(
        partner_with_zeros(rng, &bra.c_up, za),
        partner_with_zeros(rng, &bra.c_down, zb),
    );
    (bra, ket)
}

/// Symmetric one-electron part with a positive semidefinite ERI built from
/// a small Cholesky-like factorization.
pub fn random_integrals(rng: &mut impl Rng, n: usize) -> IntegralSet {
    let a = uniform(rng, n, n);
    let mut h = (&a + a.transpose()) * 0.5;
    for i in 0..n {
        h[(i, i)] -= 2.0 + i as f64 * 0.5;
    }
    let rank = n + 2;
    let factors: Vec<DMatrix<f64>> = (0..rank)
        .map(|_| {
            let l = uniform(rng, n, n) * 0.4;
            (&l + l.transpose()) * 0.5
        })
        .collect();
    let mut v = Eri::zeros(n);
    for p in 0..n {
        for q in 0..=p {
            for r in 0..n {
                for s in 0..=r {
                    let x: f64 = factors.iter().map(|l| l[(p, q)] * l[(r, s)]).sum();
                    v.set(p, q, r, s, x);
                }
            }
        }
    }
    IntegralSet::new(h, v, rng.random_range(-1.0..1.0)).expect("symmetric by construction")
}

pub fn random_system(rng: &mut impl Rng, n: usize, n_alpha: usize, n_beta: usize) -> Result<(SystemSpec, IntegralSet)> {
    let ints = random_integrals(rng, n);
    Ok((SystemSpec::new(n, n_alpha, n_beta, ints.core_energy)?, ints))
}

/// A closed-shell determinant in which the last `broken` up/down pairs are
/// rotated apart by random angles, every other pair stays identical.
pub fn broken_pair_seed(rng: &mut impl Rng, n: usize, n_pairs: usize, broken: usize) -> SlaterDeterminant {
    assert!(broken <= n_pairs && n_pairs + broken <= n);
    let q = random_orthonormal(rng, n, n);
    let mut up = q.columns(0, n_pairs).into_owned();
    let mut down = up.clone();
    for b in 0..broken {
        let i = n_pairs - 1 - b;
        let v = q.column(n_pairs + b).into_owned();
        let t: f64 = rng.random_range(0.2..1.2);
        let base = q.column(i).into_owned();
        up.set_column(i, &(&base * t.cos() + &v * t.sin()));
        down.set_column(i, &(&base * t.cos() - &v * t.sin()));
    }
    SlaterDeterminant::new_unchecked(up, down)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_channels_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for zeros in 0..=2 {
            let bra = random_orthonormal(&mut rng, 5, 2);
            let ket = partner_with_zeros(&mut rng, &bra, zeros);
            assert!((ket.transpose() * &ket - DMatrix::identity(2, 2)).abs().max() < 1e-12);
            let sv = (bra.transpose() * &ket).singular_values();
            assert_eq!(sv.iter().filter(|&&s| s < 1e-10).count(), zeros);
        }
    }

    #[test]
    fn broken_seed_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = broken_pair_seed(&mut rng, 8, 3, 2);
        let g = crate::scf::occ_overlap(&d);
        assert!((g[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(g[(1, 1)] < 0.99 && g[(2, 2)] < 0.99);
    }
}
