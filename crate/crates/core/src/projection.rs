//! NOCI basis generation by spin reassignment of the occupied orbitals.
//!
//! The `N` occupied orbitals of a seed determinant are labeled `0..N`:
//! `2i` is up-sector column `i` and `2j+1` is down-sector column `j`. An
//! assignment places `N/2` of them in the up sector and the rest in the down
//! sector. The determinant is ordered with up orbitals first, each group
//! ascending, and the permutation sign relative to the label order
//! `0, 1, 2, ...` is absorbed into the first up column.

use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{binomial, eigh, inverse_sqrt};
use crate::noci::overlap_element;
use crate::scf::{CUHFSolution, SlaterDeterminant};

pub const DEFAULT_EPSILON_PAIR: f64 = 1e-6;
/// Sector Gram matrices with a smaller eigenvalue make the determinant vanish.
pub const VANISH_THRESHOLD: f64 = 1e-10;
/// Normalized determinants with `|<a|b>|` above `1 - DUPLICATE_THRESHOLD` coincide.
pub const DUPLICATE_THRESHOLD: f64 = 1e-10;
/// Largest electron count whose assignments are enumerated.
pub const MAX_ELECTRONS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpinAssignment {
    /// Bit `i` set when occupied orbital `i` goes to the up sector.
    pub mask: u64,
    pub n_electrons: usize,
}

impl SpinAssignment {
    /// The assignment that reproduces the seed: even labels up, odd labels down.
    pub fn seed(n_electrons: usize) -> Self {
        let mut mask = 0;
        for i in (0..n_electrons).step_by(2) {
            mask |= 1 << i;
        }
        SpinAssignment { mask, n_electrons }
    }

    pub fn is_up(&self, orbital: usize) -> bool {
        (self.mask >> orbital) & 1 == 1
    }

    pub fn up_orbitals(&self) -> Vec<usize> {
        (0..self.n_electrons).filter(|&i| self.is_up(i)).collect()
    }

    pub fn down_orbitals(&self) -> Vec<usize> {
        (0..self.n_electrons).filter(|&i| !self.is_up(i)).collect()
    }

    /// Bit string with orbital 0 leftmost.
    pub fn label(&self) -> String {
        (0..self.n_electrons).map(|i| if self.is_up(i) { '1' } else { '0' }).collect()
    }
}

fn check_even(n_electrons: usize) -> Result<()> {
    if n_electrons < 2 || !n_electrons.is_multiple_of(2) {
        return Err(Error::Unsupported(format!(
            "spin reassignment needs an even electron count >= 2, got {n_electrons}"
        )));
    }
    if n_electrons > MAX_ELECTRONS {
        return Err(Error::SizeCap {
            count: binomial(n_electrons, n_electrons / 2),
            cap: binomial(MAX_ELECTRONS, MAX_ELECTRONS / 2),
        });
    }
    Ok(())
}

/// All `binom(N, N/2)` equal-split assignments in ascending mask order.
pub fn enumerate_assignments(n_electrons: usize) -> Result<Vec<SpinAssignment>> {
    check_even(n_electrons)?;
    let half = n_electrons as u32 / 2;
    Ok((0u64..1 << n_electrons)
        .filter(|m| m.count_ones() == half)
        .map(|mask| SpinAssignment { mask, n_electrons })
        .collect())
}

/// Occupied orbitals whose up and down partners coincide up to sign.
#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    /// `(2i, 2j+1)` label pairs.
    pub pairs: Vec<(usize, usize)>,
    pub m_unpaired: usize,
}

/// Finds `(i, j)` with `|G_ij| >= 1 - epsilon_pair`.
pub fn detect_pairs(g_occ: &DMatrix<f64>, epsilon_pair: f64) -> Result<Pairing> {
    if !(0.0..1.0).contains(&epsilon_pair) {
        return Err(Error::InvalidInput(format!("epsilon_pair {epsilon_pair} outside [0, 1)")));
    }
    let (na, nb) = g_occ.shape();
    let off_limit = (2.0 * epsilon_pair).sqrt() + 1e-8;
    let mut pairs = Vec::new();
    let mut used_cols = vec![false; nb];
    for i in 0..na {
        for j in 0..nb {
            if g_occ[(i, j)].abs() < 1.0 - epsilon_pair {
                continue;
            }
            if used_cols[j] {
                return Err(Error::Inconsistency(format!(
                    "down orbital {j} pairs with more than one up orbital"
                )));
            }
            let row_off = (0..nb).filter(|&c| c != j).map(|c| g_occ[(i, c)].abs()).fold(0.0, f64::max);
            let col_off = (0..na).filter(|&r| r != i).map(|r| g_occ[(r, j)].abs()).fold(0.0, f64::max);
            if row_off > off_limit || col_off > off_limit {
                return Err(Error::Inconsistency(format!(
                    "orbital pair ({i}, {j}) has unit overlap but off-diagonal overlap {:.3e}",
                    row_off.max(col_off)
                )));
            }
            used_cols[j] = true;
            pairs.push((2 * i, 2 * j + 1));
        }
    }
    Ok(Pairing {
        m_unpaired: na + nb - 2 * pairs.len(),
        pairs,
    })
}

/// Which reassignments enter the basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProjectionSpace {
    /// Every occupied orbital may change sector.
    Full,
    /// Only the `pairs` highest up/down column pairs change sector; lower
    /// columns stay in their own sector.
    Valence { pairs: usize },
    /// An explicit list of masks.
    Manual(Vec<u64>),
}

#[derive(Debug, Clone)]
pub struct NociBasis {
    pub dets: Vec<SlaterDeterminant>,
    pub assignments: Vec<SpinAssignment>,
    pub k_requested: usize,
    pub k_eff: usize,
    pub paired_indices: Vec<(usize, usize)>,
    pub m_unpaired: usize,
    /// Position of the seed assignment in `dets`.
    pub seed_index: usize,
}

/// Raw determinant of an assignment, sign included, sectors not orthonormalized.
pub fn assignment_determinant(seed: &SlaterDeterminant, a: SpinAssignment) -> Result<SlaterDeterminant> {
    let n = seed.n_alpha() + seed.n_beta();
    if seed.n_alpha() != seed.n_beta() || a.n_electrons != n {
        return Err(Error::Unsupported("reassignment needs N_alpha = N_beta = N/2".into()));
    }
    let ups = a.up_orbitals();
    let downs = a.down_orbitals();
    if ups.len() != seed.n_alpha() {
        return Err(Error::InvalidInput(format!("assignment {} is not an equal split", a.label())));
    }
    let column = |label: usize| {
        if label.is_multiple_of(2) {
            seed.c_up.column(label / 2).into_owned()
        } else {
            seed.c_down.column(label / 2).into_owned()
        }
    };
    let l = seed.n_orbitals();
    let mut c_up = DMatrix::zeros(l, ups.len());
    let mut c_down = DMatrix::zeros(l, downs.len());
    for (k, &o) in ups.iter().enumerate() {
        c_up.set_column(k, &column(o));
    }
    for (k, &o) in downs.iter().enumerate() {
        c_down.set_column(k, &column(o));
    }
    let order: Vec<usize> = ups.iter().chain(downs.iter()).copied().collect();
    if permutation_parity(&order) {
        if c_up.ncols() > 0 {
            c_up.column_mut(0).neg_mut();
        } else {
            c_down.column_mut(0).neg_mut();
        }
    }
    Ok(SlaterDeterminant::new_unchecked(c_up, c_down))
}

/// True for odd permutations.
fn permutation_parity(order: &[usize]) -> bool {
    let mut inversions = 0usize;
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            if order[i] > order[j] {
                inversions += 1;
            }
        }
    }
    inversions % 2 == 1
}

fn min_gram_eigenvalue(c: &DMatrix<f64>) -> f64 {
    if c.ncols() == 0 {
        return 1.0;
    }
    let (w, _) = eigh(&(c.transpose() * c));
    w[0]
}

fn lowdin(c: &DMatrix<f64>) -> DMatrix<f64> {
    if c.ncols() == 0 {
        return c.clone();
    }
    // a second pass removes the error amplified by a near-singular Gram matrix
    let x = c * inverse_sqrt(&(c.transpose() * c));
    &x * inverse_sqrt(&(x.transpose() * &x))
}

/// Masks of the requested space, ascending.
fn space_masks(n: usize, space: &ProjectionSpace) -> Result<Vec<SpinAssignment>> {
    let all = enumerate_assignments(n)?;
    match space {
        ProjectionSpace::Full => Ok(all),
        ProjectionSpace::Valence { pairs } => {
            let half = n / 2;
            if *pairs == 0 || *pairs > half {
                return Err(Error::InvalidInput(format!(
                    "valence space needs 1..={half} active pairs, got {pairs}"
                )));
            }
            let frozen = half - pairs;
            Ok(all
                .into_iter()
                .filter(|a| (0..frozen).all(|i| a.is_up(2 * i) && !a.is_up(2 * i + 1)))
                .collect())
        }
        ProjectionSpace::Manual(masks) => {
            let mut out = Vec::new();
            for &mask in masks {
                if mask >> n != 0 || mask.count_ones() as usize != n / 2 {
                    return Err(Error::InvalidInput(format!("mask {mask:#b} is not an equal split of {n}")));
                }
                out.push(SpinAssignment { mask, n_electrons: n });
            }
            out.sort();
            out.dedup();
            Ok(out)
        }
    }
}

/// Builds the projected basis from a converged seed determinant.
pub fn build_noci_basis(seed: &CUHFSolution, epsilon_pair: f64, space: &ProjectionSpace) -> Result<NociBasis> {
    if !seed.converged {
        return Err(Error::InvalidInput("seed determinant is not converged".into()));
    }
    build_noci_basis_from_det(&seed.determinant, epsilon_pair, space)
}

/// As [`build_noci_basis`] for a bare determinant.
pub fn build_noci_basis_from_det(
    seed: &SlaterDeterminant,
    epsilon_pair: f64,
    space: &ProjectionSpace,
) -> Result<NociBasis> {
    let n = seed.n_alpha() + seed.n_beta();
    if seed.n_alpha() != seed.n_beta() {
        return Err(Error::Unsupported("reassignment needs N_alpha = N_beta".into()));
    }
    check_even(n)?;
    let pairing = detect_pairs(&crate::scf::occ_overlap(seed), epsilon_pair)?;
    let candidates = space_masks(n, space)?;
    let k_requested = candidates.len();

    let mut dets: Vec<SlaterDeterminant> = Vec::new();
    let mut assignments = Vec::new();
    for a in candidates {
        // Both members of a pair in one sector: the determinant vanishes.
        // Swapping the members of a pair reproduces the same state; keep the
        // representative with the up member in the up sector.
        let keep = pairing.pairs.iter().all(|&(u, d)| a.is_up(u) && !a.is_up(d));
        if !keep {
            continue;
        }
        let raw = assignment_determinant(seed, a)?;
        if min_gram_eigenvalue(&raw.c_up) < VANISH_THRESHOLD || min_gram_eigenvalue(&raw.c_down) < VANISH_THRESHOLD {
            log::debug!("assignment {} vanishes", a.label());
            continue;
        }
        let det = SlaterDeterminant::new_unchecked(lowdin(&raw.c_up), lowdin(&raw.c_down));
        let mut duplicate = false;
        for kept in &dets {
            if overlap_element(kept, &det)?.abs() >= 1.0 - DUPLICATE_THRESHOLD {
                duplicate = true;
                break;
            }
        }
        if duplicate {
            log::debug!("assignment {} duplicates an earlier determinant", a.label());
            continue;
        }
        dets.push(det);
        assignments.push(a);
    }

    let seed_mask = SpinAssignment::seed(n);
    let seed_index = match assignments.iter().position(|a| *a == seed_mask) {
        Some(i) => i,
        None if matches!(space, ProjectionSpace::Manual(_)) => {
            if dets.is_empty() {
                return Err(Error::EmptyBasis);
            }
            usize::MAX
        }
        None => {
            return Err(Error::Inconsistency("the seed assignment did not survive".into()));
        }
    };
    Ok(NociBasis {
        k_eff: dets.len(),
        dets,
        assignments,
        k_requested,
        paired_indices: pairing.pairs,
        m_unpaired: pairing.m_unpaired,
        seed_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_counts() {
        assert_eq!(enumerate_assignments(2).unwrap().len(), 2);
        assert_eq!(enumerate_assignments(4).unwrap().len(), 6);
        assert_eq!(enumerate_assignments(8).unwrap().len(), 70);
        assert!(matches!(enumerate_assignments(3), Err(Error::Unsupported(_))));
        let masks: Vec<u64> = enumerate_assignments(4).unwrap().iter().map(|a| a.mask).collect();
        assert_eq!(masks, vec![0b0011, 0b0101, 0b0110, 0b1001, 0b1010, 0b1100]);
    }

    #[test]
    fn seed_mask_and_parity() {
        assert_eq!(SpinAssignment::seed(4).mask, 0b0101);
        assert_eq!(SpinAssignment::seed(4).label(), "1010");
        assert!(!permutation_parity(&[0, 1, 2, 3]));
        assert!(permutation_parity(&[0, 2, 1, 3]));
    }

    #[test]
    fn pairing_of_identity_and_inconsistent_input() {
        let p = detect_pairs(&DMatrix::identity(3, 3), 1e-6).unwrap();
        assert_eq!(p.m_unpaired, 0);
        assert_eq!(p.pairs, vec![(0, 1), (2, 3), (4, 5)]);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.5]);
        assert!(matches!(detect_pairs(&bad, 1e-6), Err(Error::Inconsistency(_))));
    }

    #[test]
    fn restricted_seed_projects_to_itself() {
        let c = DMatrix::from_row_slice(3, 1, &[0.6, 0.8, 0.0]);
        let det = SlaterDeterminant::new(c.clone(), c).unwrap();
        let basis = build_noci_basis_from_det(&det, 1e-6, &ProjectionSpace::Full).unwrap();
        assert_eq!(basis.k_eff, 1);
        assert_eq!(basis.k_requested, 2);
        assert!((overlap_element(&basis.dets[0], &det).unwrap().abs() - 1.0).abs() < 1e-12);
    }
}
