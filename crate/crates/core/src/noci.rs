//! Matrix elements between non-orthogonal determinants and the NOCI
//! generalized eigenproblem.
//!
//! For each spin sector the occupied overlap `A^T B` is decomposed as
//! `U diag(s) V^T`. The rotated orbitals `a~ = A U`, `b~ = B V` are
//! biorthogonal, which reduces every matrix element to codensities
//! `sum_i a~_i b~_i^T / s_i` plus rank-one terms for the zero channels.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrals::{s2_operator, IntegralSet, Spin, SpinBlockedOperator, Tensor4};
use crate::linalg::{determinant, eigh, fix_column_phases, jacobi_svd};
use crate::scf::SlaterDeterminant;

/// Singular values at or below this count as exact zeros.
pub const ZERO_THRESHOLD: f64 = 1e-10;
/// Singular values below this are expanded exactly instead of inverted.
pub const SOFT_THRESHOLD: f64 = 1e-4;
/// Overlap eigenmodes below this fraction of the largest are discarded.
pub const RANK_THRESHOLD: f64 = 1e-8;

/// Biorthogonal pairing of one spin sector.
#[derive(Debug, Clone)]
pub struct SectorPairing {
    pub singular_values: DVector<f64>,
    pub bra: DMatrix<f64>,
    pub ket: DMatrix<f64>,
    /// `det(U) det(V)`.
    pub sign: f64,
}

impl SectorPairing {
    fn new(bra: &DMatrix<f64>, ket: &DMatrix<f64>) -> Self {
        let n = bra.ncols();
        if n == 0 {
            return SectorPairing {
                singular_values: DVector::zeros(0),
                bra: bra.clone(),
                ket: ket.clone(),
                sign: 1.0,
            };
        }
        let m = bra.transpose() * ket;
        let (u, singular_values, v) = jacobi_svd(&m);
        let sign = determinant(&u).signum() * determinant(&v).signum();
        SectorPairing {
            singular_values,
            bra: bra * u,
            ket: ket * v,
            sign,
        }
    }

    fn outer(&self, i: usize) -> DMatrix<f64> {
        self.bra.column(i) * self.ket.column(i).transpose()
    }
}

/// Everything needed to evaluate operators between one bra and one ket.
///
/// Channels with small singular values are kept out of the codensity and
/// expanded exactly: with `W = W_r + sum_k P_k / s_k`, every term of the
/// reduced overlap times `<O>` is a polynomial in the small `s_k` once the
/// analytically vanishing `P_k P_k` pair terms are dropped. Exact zeros are
/// the `s_k = 0` case of the same expansion.
#[derive(Debug, Clone)]
pub struct TransitionContext {
    pub sectors: [SectorPairing; 2],
    pub n_zeros: usize,
    /// Signed product of the singular values of the regular channels.
    pub reduced_overlap: f64,
    /// `<bra|ket>`.
    pub overlap: f64,
    weighted: [DMatrix<f64>; 2],
    soft: Vec<SoftChannel>,
}

#[derive(Debug, Clone)]
struct SoftChannel {
    spin: Spin,
    outer: DMatrix<f64>,
    /// Zero when at or below [`ZERO_THRESHOLD`].
    s: f64,
}

fn check_compatible(bra: &SlaterDeterminant, ket: &SlaterDeterminant) -> Result<()> {
    if bra.n_alpha() != ket.n_alpha() || bra.n_beta() != ket.n_beta() {
        return Err(Error::IncompatibleDeterminants(format!(
            "sector sizes ({}, {}) vs ({}, {})",
            bra.n_alpha(),
            bra.n_beta(),
            ket.n_alpha(),
            ket.n_beta()
        )));
    }
    if bra.n_orbitals() != ket.n_orbitals() {
        return Err(Error::IncompatibleDeterminants("different orbital bases".into()));
    }
    Ok(())
}

impl TransitionContext {
    pub fn new(bra: &SlaterDeterminant, ket: &SlaterDeterminant) -> Result<Self> {
        check_compatible(bra, ket)?;
        let n = bra.n_orbitals();
        let sectors = [
            SectorPairing::new(&bra.c_up, &ket.c_up),
            SectorPairing::new(&bra.c_down, &ket.c_down),
        ];
        let mut reduced = 1.0;
        let mut overlap = 1.0;
        let mut soft = Vec::new();
        let mut n_zeros = 0;
        let mut weighted = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
        for (spin, sec) in Spin::BOTH.into_iter().zip(&sectors) {
            reduced *= sec.sign;
            overlap *= sec.sign;
            for (i, &s) in sec.singular_values.iter().enumerate() {
                overlap *= s;
                if s < SOFT_THRESHOLD {
                    let s = if s <= ZERO_THRESHOLD {
                        n_zeros += 1;
                        0.0
                    } else {
                        s
                    };
                    soft.push(SoftChannel {
                        spin,
                        outer: sec.outer(i),
                        s,
                    });
                } else {
                    reduced *= s;
                    weighted[spin.index()] += sec.outer(i) / s;
                }
            }
        }
        if n_zeros > 0 {
            overlap = 0.0;
        }
        Ok(TransitionContext {
            sectors,
            n_zeros,
            reduced_overlap: reduced,
            overlap,
            weighted,
            soft,
        })
    }

    /// Product of the soft singular values outside `skip`.
    fn soft_weight(&self, skip: &[usize]) -> f64 {
        self.soft
            .iter()
            .enumerate()
            .filter(|(i, _)| !skip.contains(i))
            .map(|(_, c)| c.s)
            .product()
    }

    /// `<bra|O|ket>`.
    pub fn evaluate(&self, op: &SpinBlockedOperator) -> f64 {
        if self.n_zeros > 2 {
            return 0.0;
        }
        let w = [Some(&self.weighted[0]), Some(&self.weighted[1])];
        let mut value = 0.0;

        let c0 = self.soft_weight(&[]);
        if c0 != 0.0 {
            let mut acc = op.scalar;
            for (s, t, h) in &op.one_body {
                if s == t {
                    acc += crate::linalg::frobenius_dot(h, &self.weighted[s.index()]);
                }
            }
            value += c0 * (acc + 0.5 * pair_contraction(op, w, w));
        }

        for (k, ch) in self.soft.iter().enumerate() {
            let c1 = self.soft_weight(&[k]);
            if c1 != 0.0 {
                let mut acc = 0.0;
                for (s, t, h) in &op.one_body {
                    if s == t && *s == ch.spin {
                        acc += crate::linalg::frobenius_dot(h, &ch.outer);
                    }
                }
                let x = only(ch.spin, &ch.outer);
                value += c1 * (acc + 0.5 * (pair_contraction(op, x, w) + pair_contraction(op, w, x)));
            }
            for (l, other) in self.soft.iter().enumerate().skip(k + 1) {
                let c2 = self.soft_weight(&[k, l]);
                if c2 != 0.0 {
                    let x = only(ch.spin, &ch.outer);
                    let y = only(other.spin, &other.outer);
                    value += c2 * 0.5 * (pair_contraction(op, x, y) + pair_contraction(op, y, x));
                }
            }
        }
        self.reduced_overlap * value
    }
}

fn only(spin: Spin, m: &DMatrix<f64>) -> [Option<&DMatrix<f64>>; 2] {
    let mut out = [None, None];
    out[spin.index()] = Some(m);
    out
}

/// `sum_blocks [J(X, Y) - K(X, Y)]` with the spin selection rules of each
/// block.
fn pair_contraction(
    op: &SpinBlockedOperator,
    x: [Option<&DMatrix<f64>>; 2],
    y: [Option<&DMatrix<f64>>; 2],
) -> f64 {
    let mut cache: Vec<(*const (), usize, bool, DMatrix<f64>)> = Vec::new();
    let mut acc = 0.0;
    for block in &op.two_body {
        let [s1, s2, s3, s4] = block.spins;
        if s1 == s2 && s3 == s4 {
            if let (Some(a), Some(b)) = (x[s1.index()], y[s3.index()]) {
                acc += contract(&block.tensor, a, b, s1.index(), false, &mut cache);
            }
        }
        if s1 == s4 && s2 == s3 {
            if let (Some(a), Some(b)) = (x[s1.index()], y[s3.index()]) {
                acc -= contract(&block.tensor, a, b, s1.index(), true, &mut cache);
            }
        }
    }
    acc
}

/// Dense contractions of the same tensor against the same matrix recur across
/// blocks, so the intermediate is memoized.
fn contract(
    t: &Tensor4,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    slot: usize,
    exchange: bool,
    cache: &mut Vec<(*const (), usize, bool, DMatrix<f64>)>,
) -> f64 {
    match t {
        Tensor4::Dense(d) => {
            let key = std::sync::Arc::as_ptr(d) as *const ();
            let hit = cache.iter().position(|(k, s, e, _)| *k == key && *s == slot && *e == exchange);
            let idx = match hit {
                Some(i) => i,
                None => {
                    let m = if exchange {
                        d.contract_outer_pair(a)
                    } else {
                        d.contract_first_pair(a)
                    };
                    cache.push((key, slot, exchange, m));
                    cache.len() - 1
                }
            };
            crate::linalg::frobenius_dot(&cache[idx].3, b)
        }
        _ if exchange => t.exchange(a, b),
        _ => t.coulomb(a, b),
    }
}

/// `<bra|ket>` as the product of per-sector occupied-overlap determinants.
pub fn overlap_element(bra: &SlaterDeterminant, ket: &SlaterDeterminant) -> Result<f64> {
    check_compatible(bra, ket)?;
    let up = determinant(&(bra.c_up.transpose() * &ket.c_up));
    let down = determinant(&(bra.c_down.transpose() * &ket.c_down));
    Ok(up * down)
}

pub fn transition_element(bra: &SlaterDeterminant, ket: &SlaterDeterminant, op: &SpinBlockedOperator) -> Result<f64> {
    Ok(TransitionContext::new(bra, ket)?.evaluate(op))
}

/// `H`, `S` and `S^2` matrices over a determinant list.
#[derive(Debug, Clone)]
pub struct NociMatrices {
    pub hamiltonian: DMatrix<f64>,
    pub overlap: DMatrix<f64>,
    pub spin: DMatrix<f64>,
}

pub fn build_matrices(dets: &[SlaterDeterminant], ints: &IntegralSet) -> Result<NociMatrices> {
    let k = dets.len();
    if k == 0 {
        return Err(Error::EmptyBasis);
    }
    let n = ints.n_orbitals();
    if dets.iter().any(|d| d.n_orbitals() != n) {
        return Err(Error::IncompatibleDeterminants("determinant and integral bases differ".into()));
    }
    let h_op = SpinBlockedOperator::hamiltonian(ints);
    let s2_op = s2_operator(n)?;
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let values: Vec<(f64, f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let ctx = TransitionContext::new(&dets[i], &dets[j])?;
            Ok((ctx.evaluate(&h_op), ctx.overlap, ctx.evaluate(&s2_op)))
        })
        .collect::<Result<_>>()?;
    let mut h = DMatrix::zeros(k, k);
    let mut s = DMatrix::zeros(k, k);
    let mut s2 = DMatrix::zeros(k, k);
    for (&(i, j), &(hv, sv, s2v)) in pairs.iter().zip(&values) {
        h[(i, j)] = hv;
        s[(i, j)] = sv;
        s2[(i, j)] = s2v;
    }
    let scale = h.abs().max().max(1.0);
    let asym_h = crate::linalg::max_asymmetry(&h);
    let asym_s = crate::linalg::max_asymmetry(&s);
    if asym_h > 1e-10 * scale || asym_s > 1e-10 {
        return Err(Error::Inconsistency(format!(
            "NOCI matrices are not symmetric (H {asym_h:.2e}, S {asym_s:.2e})"
        )));
    }
    let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
    Ok(NociMatrices {
        hamiltonian: sym(h),
        overlap: sym(s),
        spin: sym(s2),
    })
}

#[derive(Debug, Clone)]
pub struct NociSpectrum {
    /// Ascending.
    pub energies: Vec<f64>,
    /// Column `i` holds state `i`, normalized with respect to the overlap.
    pub coefficients: DMatrix<f64>,
    pub s2_values: Vec<f64>,
    pub effective_rank: usize,
    pub dropped_modes: usize,
    /// `||(H - E S) c|| / ||c||` per state.
    pub residuals: Vec<f64>,
    pub matrices: NociMatrices,
}

/// Solves `H c = E S c` by canonical orthogonalization.
pub fn solve_generalized(matrices: NociMatrices) -> Result<NociSpectrum> {
    let (w, u) = eigh(&matrices.overlap);
    let wmax = w.iter().cloned().fold(0.0_f64, f64::max);
    if wmax <= 0.0 {
        return Err(Error::DegenerateBasis);
    }
    let keep: Vec<usize> = (0..w.len()).filter(|&i| w[i] > RANK_THRESHOLD * wmax).collect();
    if keep.is_empty() {
        return Err(Error::DegenerateBasis);
    }
    let k = w.len();
    let m = keep.len();
    let mut x = DMatrix::zeros(k, m);
    for (col, &i) in keep.iter().enumerate() {
        x.set_column(col, &(u.column(i) / w[i].sqrt()));
    }
    let hp = x.transpose() * &matrices.hamiltonian * &x;
    let (e, y) = eigh(&hp);
    let mut c = &x * y;
    fix_column_phases(&mut c);
    let mut s2_values = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    for i in 0..m {
        let ci = c.column(i);
        s2_values.push((ci.transpose() * &matrices.spin * ci)[(0, 0)]);
        let r = &matrices.hamiltonian * ci - (&matrices.overlap * ci) * e[i];
        residuals.push(r.norm() / ci.norm());
    }
    Ok(NociSpectrum {
        energies: e.iter().cloned().collect(),
        coefficients: c,
        s2_values,
        effective_rank: m,
        dropped_modes: k - m,
        residuals,
        matrices,
    })
}

/// NOCI over an explicit determinant list.
pub fn solve_noci_dets(dets: &[SlaterDeterminant], ints: &IntegralSet) -> Result<NociSpectrum> {
    solve_generalized(build_matrices(dets, ints)?)
}

pub fn solve_noci(basis: &crate::projection::NociBasis, ints: &IntegralSet) -> Result<NociSpectrum> {
    solve_noci_dets(&basis.dets, ints)
}

/// Spin assignment of one eigenstate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateLabel {
    pub state: usize,
    /// Twice the spin quantum number.
    pub two_s: u32,
    pub energy: f64,
    pub s2: f64,
    pub residual: f64,
    pub contaminated: bool,
}

impl StateLabel {
    pub fn spin(&self) -> f64 {
        self.two_s as f64 / 2.0
    }

    pub fn multiplicity(&self) -> u32 {
        self.two_s + 1
    }
}

#[derive(Debug, Clone)]
pub struct StateClassification {
    pub states: Vec<StateLabel>,
    /// Lowest state for each `2S`.
    pub lowest: BTreeMap<u32, StateLabel>,
}

impl StateClassification {
    pub fn counts(&self) -> BTreeMap<u32, usize> {
        let mut out = BTreeMap::new();
        for s in &self.states {
            *out.entry(s.two_s).or_insert(0) += 1;
        }
        out
    }

    pub fn any_contaminated(&self) -> bool {
        self.states.iter().any(|s| s.contaminated)
    }
}

/// Residual above which a state counts as spin contaminated.
pub const CONTAMINATION_THRESHOLD: f64 = 1e-3;

/// Nearest `S(S+1)` for each state; `odd_electrons` selects half-integer `S`.
pub fn classify_states_with_parity(spectrum: &NociSpectrum, odd_electrons: bool) -> StateClassification {
    let mut states = Vec::with_capacity(spectrum.energies.len());
    for (i, (&e, &s2)) in spectrum.energies.iter().zip(&spectrum.s2_values).enumerate() {
        // S(S+1) = s2  =>  S = (-1 + sqrt(1 + 4 s2)) / 2
        let s_cont = 0.5 * ((1.0 + 4.0 * s2.max(0.0)).sqrt() - 1.0);
        let mut best = (u32::MAX, f64::INFINITY);
        let base = (2.0 * s_cont).floor() as i64;
        for cand in (base - 2).max(0)..=base + 2 {
            if (cand % 2 == 1) != odd_electrons {
                continue;
            }
            let s = cand as f64 / 2.0;
            let r = (s2 - s * (s + 1.0)).abs();
            if r < best.1 {
                best = (cand as u32, r);
            }
        }
        states.push(StateLabel {
            state: i,
            two_s: best.0,
            energy: e,
            s2,
            residual: best.1,
            contaminated: best.1 > CONTAMINATION_THRESHOLD,
        });
    }
    let mut lowest = BTreeMap::new();
    for s in &states {
        lowest.entry(s.two_s).or_insert(*s);
    }
    StateClassification { states, lowest }
}

/// Classification for an even number of electrons (integer spin).
pub fn classify_states(spectrum: &NociSpectrum) -> StateClassification {
    classify_states_with_parity(spectrum, false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn self_overlap_and_orthogonal_orbital() {
        let a = SlaterDeterminant::new(col(&[1.0, 0.0, 0.0]), col(&[0.0, 1.0, 0.0])).unwrap();
        let b = SlaterDeterminant::new(col(&[0.0, 0.0, 1.0]), col(&[0.0, 1.0, 0.0])).unwrap();
        assert!((overlap_element(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(overlap_element(&a, &b).unwrap(), 0.0);
        let ctx = TransitionContext::new(&a, &b).unwrap();
        assert_eq!(ctx.n_zeros, 1);
    }

    #[test]
    fn identity_operator_reproduces_overlap() {
        let t = 0.3_f64;
        let a = SlaterDeterminant::new(col(&[1.0, 0.0]), col(&[0.0, 1.0])).unwrap();
        let b = SlaterDeterminant::new(col(&[t.cos(), t.sin()]), col(&[-t.sin(), t.cos()])).unwrap();
        let id = SpinBlockedOperator::identity(2);
        let v = transition_element(&a, &b, &id).unwrap();
        assert!((v - overlap_element(&a, &b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn s2_of_simple_determinants() {
        let op = s2_operator(2).unwrap();
        let closed = SlaterDeterminant::new(col(&[1.0, 0.0]), col(&[1.0, 0.0])).unwrap();
        let open = SlaterDeterminant::new(col(&[1.0, 0.0]), col(&[0.0, 1.0])).unwrap();
        let single = SlaterDeterminant::new(col(&[1.0, 0.0]), DMatrix::zeros(2, 0)).unwrap();
        assert!(transition_element(&closed, &closed, &op).unwrap().abs() < 1e-14);
        assert!((transition_element(&open, &open, &op).unwrap() - 1.0).abs() < 1e-14);
        assert!((transition_element(&single, &single, &op).unwrap() - 0.75).abs() < 1e-14);
    }

    #[test]
    fn two_electron_s2_matrix_splits_singlet_and_triplet() {
        // |0u 0d>, |0u 1d>, |1u 0d>, |1u 1d>
        let e = |i: usize| {
            let mut c = DMatrix::zeros(2, 1);
            c[(i, 0)] = 1.0;
            c
        };
        let dets: Vec<_> = [(0, 0), (0, 1), (1, 0), (1, 1)]
            .iter()
            .map(|&(a, b)| SlaterDeterminant::new(e(a), e(b)).unwrap())
            .collect();
        let op = s2_operator(2).unwrap();
        let mut m = DMatrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                m[(i, j)] = transition_element(&dets[i], &dets[j], &op).unwrap();
            }
        }
        let (w, _) = eigh(&m);
        let expect = [0.0, 0.0, 0.0, 2.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13, "{w}");
        }
        // the two open-shell determinants couple with unit strength
        assert!((m[(1, 2)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_overlap_is_trimmed() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -1.0, -1.0]);
        let spec = solve_generalized(NociMatrices {
            hamiltonian: h,
            overlap: s,
            spin: DMatrix::zeros(2, 2),
        })
        .unwrap();
        assert_eq!(spec.effective_rank, 1);
        assert_eq!(spec.dropped_modes, 1);
        assert!((spec.energies[0] + 1.0).abs() < 1e-12);
        assert!(matches!(
            solve_generalized(NociMatrices {
                hamiltonian: DMatrix::zeros(1, 1),
                overlap: DMatrix::zeros(1, 1),
                spin: DMatrix::zeros(1, 1),
            }),
            Err(Error::DegenerateBasis)
        ));
    }

    #[test]
    fn labels_pick_nearest_spin() {
        let spectrum = NociSpectrum {
            energies: vec![-1.0, -0.9, -0.8],
            coefficients: DMatrix::identity(3, 3),
            s2_values: vec![2.0, 0.0000001, 1.2],
            effective_rank: 3,
            dropped_modes: 0,
            residuals: vec![0.0; 3],
            matrices: NociMatrices {
                hamiltonian: DMatrix::zeros(3, 3),
                overlap: DMatrix::identity(3, 3),
                spin: DMatrix::zeros(3, 3),
            },
        };
        let c = classify_states(&spectrum);
        assert_eq!(c.states[0].two_s, 2);
        assert_eq!(c.states[1].two_s, 0);
        assert!(!c.states[1].contaminated);
        assert!(c.states[2].contaminated);
        assert_eq!(c.lowest[&2].energy, -1.0);
        let odd = classify_states_with_parity(&spectrum, true);
        assert_eq!(odd.states[1].two_s, 1);
    }
}
