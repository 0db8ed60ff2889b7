//! Determinant-based full CI.
//!
//! Determinants are `a+_{alpha string} a+_{beta string} |0>` with each string
//! ascending. Small spaces are diagonalized densely from Slater-Condon
//! elements; larger ones with Davidson on a sigma vector built from
//! spin-summed replacement operators `E_pq`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrals::{IntegralSet, Spin, SpinBlockedOperator, SystemSpec};
use crate::linalg::{binomial, eigh};
use crate::scf::SlaterDeterminant;

pub const DEFAULT_DET_CAP: u128 = 2_000_000;
/// Spaces up to this size are diagonalized densely.
pub const DENSE_LIMIT: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetString {
    pub alpha_mask: u64,
    pub beta_mask: u64,
}

fn strings(n_orb: usize, n_el: usize) -> Vec<u64> {
    // ascending by integer value of the mask
    let mut out = Vec::with_capacity(binomial(n_orb, n_el) as usize);
    if n_el == 0 {
        out.push(0);
        return out;
    }
    let mut s: u64 = (1 << n_el) - 1;
    let limit = 1u64 << n_orb;
    while s < limit {
        out.push(s);
        // Gosper's hack: next integer with the same popcount
        let c = s & s.wrapping_neg();
        let r = s + c;
        s = (((r ^ s) >> 2) / c) | r;
    }
    out
}

/// All determinants of fixed `Ms`, alpha-major, each string ascending.
pub fn enumerate_dets(spec: &SystemSpec, cap: u128) -> Result<Vec<DetString>> {
    spec.validate()?;
    if spec.n_orbitals > 63 {
        return Err(Error::Unsupported("more than 63 orbitals".into()));
    }
    let count = binomial(spec.n_orbitals, spec.n_alpha) * binomial(spec.n_orbitals, spec.n_beta);
    if count > cap {
        return Err(Error::SizeCap { count, cap });
    }
    let a = strings(spec.n_orbitals, spec.n_alpha);
    let b = strings(spec.n_orbitals, spec.n_beta);
    Ok(a.iter()
        .flat_map(|&am| b.iter().map(move |&bm| DetString { alpha_mask: am, beta_mask: bm }))
        .collect())
}

#[inline]
fn bits_below(mask: u64, p: usize) -> u32 {
    (mask & ((1u64 << p) - 1)).count_ones()
}

/// `a+_p a_q` on a string: new string and sign, or `None`.
#[inline]
fn excite(mask: u64, p: usize, q: usize) -> Option<(u64, f64)> {
    if mask >> q & 1 == 0 {
        return None;
    }
    let m = mask & !(1 << q);
    if m >> p & 1 == 1 {
        return None;
    }
    let n = bits_below(mask, q) + bits_below(m, p);
    Some((m | 1 << p, if n.is_multiple_of(2) { 1.0 } else { -1.0 }))
}

fn occupied(mask: u64) -> impl Iterator<Item = usize> {
    let mut m = mask;
    std::iter::from_fn(move || {
        if m == 0 {
            None
        } else {
            let i = m.trailing_zeros() as usize;
            m &= m - 1;
            Some(i)
        }
    })
}

struct Hamiltonian<'a> {
    ints: &'a IntegralSet,
    eri: std::sync::Arc<crate::integrals::DenseTensor4>,
}

impl<'a> Hamiltonian<'a> {
    fn new(ints: &'a IntegralSet) -> Self {
        Hamiltonian { ints, eri: ints.dense_eri() }
    }

    fn diagonal(&self, d: &DetString) -> f64 {
        let h = &self.ints.h;
        let g = &self.eri;
        let alpha: Vec<usize> = occupied(d.alpha_mask).collect();
        let beta: Vec<usize> = occupied(d.beta_mask).collect();
        let mut e = self.ints.core_energy;
        for &i in alpha.iter().chain(&beta) {
            e += h[(i, i)];
        }
        for set in [&alpha, &beta] {
            for (k, &i) in set.iter().enumerate() {
                for &j in &set[..k] {
                    e += g.get(i, i, j, j) - g.get(i, j, j, i);
                }
            }
        }
        for &i in &alpha {
            for &j in &beta {
                e += g.get(i, i, j, j);
            }
        }
        e
    }

    /// Slater-Condon element `<bra|H|ket>`.
    fn element(&self, bra: &DetString, ket: &DetString) -> f64 {
        let da = (bra.alpha_mask ^ ket.alpha_mask).count_ones() / 2;
        let db = (bra.beta_mask ^ ket.beta_mask).count_ones() / 2;
        if da + db > 2 {
            return 0.0;
        }
        if da + db == 0 {
            return self.diagonal(bra);
        }
        let g = &self.eri;
        let h = &self.ints.h;
        match (da, db) {
            (1, 0) | (0, 1) => {
                let (bm, km, same, other) = if da == 1 {
                    (bra.alpha_mask, ket.alpha_mask, ket.alpha_mask, ket.beta_mask)
                } else {
                    (bra.beta_mask, ket.beta_mask, ket.beta_mask, ket.alpha_mask)
                };
                let p = (bm & !km).trailing_zeros() as usize;
                let q = (km & !bm).trailing_zeros() as usize;
                let (_, sign) = excite(km, p, q).expect("single excitation");
                let mut v = h[(p, q)];
                for k in occupied(same) {
                    if k != q {
                        v += g.get(p, q, k, k) - g.get(p, k, k, q);
                    }
                }
                for k in occupied(other) {
                    v += g.get(p, q, k, k);
                }
                sign * v
            }
            (2, 0) | (0, 2) => {
                let (bm, km) = if da == 2 {
                    (bra.alpha_mask, ket.alpha_mask)
                } else {
                    (bra.beta_mask, ket.beta_mask)
                };
                let created: Vec<usize> = occupied(bm & !km).collect();
                let removed: Vec<usize> = occupied(km & !bm).collect();
                let (p, r) = (created[0], created[1]);
                let (q, s) = (removed[0], removed[1]);
                // a+_p a+_r a_s a_q applied to ket
                let (m1, s1) = excite(km, r, s).expect("double");
                let (_, s2) = excite(m1, p, q).expect("double");
                s1 * s2 * (g.get(p, q, r, s) - g.get(p, s, r, q))
            }
            (1, 1) => {
                let p = (bra.alpha_mask & !ket.alpha_mask).trailing_zeros() as usize;
                let q = (ket.alpha_mask & !bra.alpha_mask).trailing_zeros() as usize;
                let r = (bra.beta_mask & !ket.beta_mask).trailing_zeros() as usize;
                let s = (ket.beta_mask & !bra.beta_mask).trailing_zeros() as usize;
                let (_, sa) = excite(ket.alpha_mask, p, q).expect("alpha single");
                let (_, sb) = excite(ket.beta_mask, r, s).expect("beta single");
                sa * sb * g.get(p, q, r, s)
            }
            _ => unreachable!(),
        }
    }
}

/// Replacement lists `E_pq |K> = sign |K'>` per string.
struct StringSpace {
    strings: Vec<u64>,
    index: HashMap<u64, usize>,
    /// `(pq, target, sign)` per string.
    singles: Vec<Vec<(usize, usize, f64)>>,
}

impl StringSpace {
    fn new(n_orb: usize, n_el: usize) -> Self {
        let strings = strings(n_orb, n_el);
        let index: HashMap<u64, usize> = strings.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let singles = strings
            .iter()
            .map(|&s| {
                let mut list = Vec::new();
                for q in occupied(s) {
                    for p in 0..n_orb {
                        if let Some((t, sign)) = excite(s, p, q) {
                            list.push((p * n_orb + q, index[&t], sign));
                        }
                    }
                }
                list
            })
            .collect();
        StringSpace { strings, index, singles }
    }
}

struct Sigma<'a> {
    n: usize,
    alpha: StringSpace,
    beta: StringSpace,
    /// `k_pq = h_pq - 1/2 sum_r (pr|rq)`.
    k: DMatrix<f64>,
    eri: std::sync::Arc<crate::integrals::DenseTensor4>,
    core: f64,
    _ints: &'a IntegralSet,
}

impl<'a> Sigma<'a> {
    fn new(spec: &SystemSpec, ints: &'a IntegralSet) -> Self {
        let n = spec.n_orbitals;
        let eri = ints.dense_eri();
        let mut k = ints.h.clone();
        for p in 0..n {
            for q in 0..n {
                let mut acc = 0.0;
                for r in 0..n {
                    acc += eri.get(p, r, r, q);
                }
                k[(p, q)] -= 0.5 * acc;
            }
        }
        Sigma {
            n,
            alpha: StringSpace::new(n, spec.n_alpha),
            beta: StringSpace::new(n, spec.n_beta),
            k,
            eri,
            core: ints.core_energy,
            _ints: ints,
        }
    }

    fn dim(&self) -> usize {
        self.alpha.strings.len() * self.beta.strings.len()
    }

    /// `D[pq][K] = (E_pq c)[K]` for every pair, row-major over `pq`.
    fn replacement(&self, c: &[f64]) -> Vec<f64> {
        let n2 = self.n * self.n;
        let nb = self.beta.strings.len();
        let dim = self.dim();
        let mut d = vec![0.0; n2 * dim];
        for (ia, list) in self.alpha.singles.iter().enumerate() {
            for &(pq, ja, sign) in list {
                let dst = &mut d[pq * dim + ja * nb..pq * dim + (ja + 1) * nb];
                let src = &c[ia * nb..(ia + 1) * nb];
                for (x, &y) in dst.iter_mut().zip(src) {
                    *x += sign * y;
                }
            }
        }
        for ia in 0..self.alpha.strings.len() {
            for (ib, list) in self.beta.singles.iter().enumerate() {
                let y = c[ia * nb + ib];
                if y == 0.0 {
                    continue;
                }
                for &(pq, jb, sign) in list {
                    d[pq * dim + ia * nb + jb] += sign * y;
                }
            }
        }
        d
    }

    /// `H c = core c + sum k_pq E_pq c + 1/2 sum_pq E_pq sum_rs (pq|rs) E_rs c`.
    fn apply(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        let n2 = n * n;
        let dim = self.dim();
        let d = self.replacement(c);
        let eri = self.eri.as_slice();
        // G[pq] = 1/2 sum_rs (pq|rs) D[rs] + k_pq c
        let g: Vec<f64> = (0..n2)
            .into_par_iter()
            .flat_map_iter(|pq| {
                let mut row = vec![0.0; dim];
                let (p, q) = (pq / n, pq % n);
                let kpq = self.k[(p, q)];
                if kpq != 0.0 {
                    for (x, &y) in row.iter_mut().zip(c) {
                        *x += kpq * y;
                    }
                }
                for rs in 0..n2 {
                    let v = 0.5 * eri[pq * n2 + rs];
                    if v == 0.0 {
                        continue;
                    }
                    for (x, &y) in row.iter_mut().zip(&d[rs * dim..(rs + 1) * dim]) {
                        *x += v * y;
                    }
                }
                row
            })
            .collect();
        // sigma = core c + sum_pq E_pq G[pq]
        let e_g = self.replacement_transpose_sum(&g);
        e_g.iter().zip(c).map(|(s, &x)| s + self.core * x).collect()
    }

    /// `sum_pq E_pq v[pq]`.
    fn replacement_transpose_sum(&self, v: &[f64]) -> Vec<f64> {
        let nb = self.beta.strings.len();
        let dim = self.dim();
        let mut out = vec![0.0; dim];
        for (ia, list) in self.alpha.singles.iter().enumerate() {
            for &(pq, ja, sign) in list {
                let src = &v[pq * dim + ia * nb..pq * dim + (ia + 1) * nb];
                let dst = &mut out[ja * nb..(ja + 1) * nb];
                for (x, &y) in dst.iter_mut().zip(src) {
                    *x += sign * y;
                }
            }
        }
        for ia in 0..self.alpha.strings.len() {
            for (ib, list) in self.beta.singles.iter().enumerate() {
                for &(pq, jb, sign) in list {
                    out[ia * nb + jb] += sign * v[pq * dim + ia * nb + ib];
                }
            }
        }
        out
    }

    /// `S- S+ c`, moving one electron from beta to alpha and back.
    fn spin_flip(&self, c: &[f64]) -> Vec<f64> {
        let nb = self.beta.strings.len();
        let mut out = vec![0.0; c.len()];
        let n_alpha = self.alpha.strings[0].count_ones();
        for (ia, &am) in self.alpha.strings.iter().enumerate() {
            for (ib, &bm) in self.beta.strings.iter().enumerate() {
                let y = c[ia * nb + ib];
                if y == 0.0 {
                    continue;
                }
                // S+ = sum_q a+_{q alpha} a_{q beta}
                for q in occupied(bm) {
                    if am >> q & 1 == 1 {
                        continue;
                    }
                    let b1 = bm & !(1 << q);
                    let a1 = am | 1 << q;
                    // sign of a_{q beta}: alpha block (n_alpha) plus beta below q;
                    // a+_{q alpha}: alpha below q
                    let s_up = (n_alpha + bits_below(bm, q) + bits_below(am, q)) % 2;
                    // S- = sum_p a+_{p beta} a_{p alpha}
                    for p in occupied(a1) {
                        if b1 >> p & 1 == 1 {
                            continue;
                        }
                        let a2 = a1 & !(1 << p);
                        let b2 = b1 | 1 << p;
                        let s_dn = (bits_below(a1, p) + (n_alpha) + bits_below(b1, p)) % 2;
                        let sign = if (s_up + s_dn).is_multiple_of(2) { 1.0 } else { -1.0 };
                        let (Some(&ja), Some(&jb)) = (self.alpha.index.get(&a2), self.beta.index.get(&b2)) else {
                            continue;
                        };
                        out[ja * nb + jb] += sign * y;
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FciResult {
    pub energies: Vec<f64>,
    pub s2_values: Vec<f64>,
    pub n_determinants: usize,
    #[serde(skip)]
    pub vectors: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct FciOptions {
    pub cap: u128,
    pub dense_limit: usize,
    pub davidson_tol: f64,
    pub max_iter: usize,
}

impl Default for FciOptions {
    fn default() -> Self {
        FciOptions {
            cap: DEFAULT_DET_CAP,
            dense_limit: DENSE_LIMIT,
            davidson_tol: 1e-8,
            max_iter: 400,
        }
    }
}

/// Dense Hamiltonian over the given determinants.
pub fn hamiltonian_matrix(dets: &[DetString], ints: &IntegralSet) -> DMatrix<f64> {
    let ham = Hamiltonian::new(ints);
    let n = dets.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if j < i { 0.0 } else { ham.element(&dets[i], &dets[j]) }).collect())
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for j in i..n {
            m[(i, j)] = row[j];
            m[(j, i)] = row[j];
        }
    }
    m
}

/// Lowest `n_states` eigenpairs of the Hamiltonian in the `Ms` sector of `spec`.
pub fn solve_fci(spec: &SystemSpec, ints: &IntegralSet, n_states: usize) -> Result<FciResult> {
    solve_fci_with(spec, ints, n_states, &FciOptions::default())
}

pub fn solve_fci_with(spec: &SystemSpec, ints: &IntegralSet, n_states: usize, opts: &FciOptions) -> Result<FciResult> {
    if ints.n_orbitals() != spec.n_orbitals {
        return Err(Error::InvalidInput("integrals and system disagree on the orbital count".into()));
    }
    let dets = enumerate_dets(spec, opts.cap)?;
    let dim = dets.len();
    let n_states = n_states.clamp(1, dim);
    let sigma = Sigma::new(spec, ints);
    let (energies, vectors) = if dim <= opts.dense_limit {
        let h = hamiltonian_matrix(&dets, ints);
        let (w, v) = eigh(&h);
        (
            w.iter().take(n_states).cloned().collect::<Vec<_>>(),
            v.columns(0, n_states).into_owned(),
        )
    } else {
        let ham = Hamiltonian::new(ints);
        let diag: Vec<f64> = dets.par_iter().map(|d| ham.diagonal(d)).collect();
        davidson(|x| sigma.apply(x), &diag, n_states, opts.davidson_tol, opts.max_iter)?
    };
    let ms = spec.ms();
    let s2_values = (0..n_states)
        .map(|k| {
            let c: Vec<f64> = vectors.column(k).iter().cloned().collect();
            let f = sigma.spin_flip(&c);
            ms * (ms + 1.0) + c.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Ok(FciResult {
        energies,
        s2_values,
        n_determinants: dim,
        vectors: Some(vectors),
    })
}

/// Block Davidson with diagonal preconditioning.
pub fn davidson(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    diag: &[f64],
    n_states: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let dim = diag.len();
    let max_sub = (20 * n_states).max(n_states + 8).min(dim);
    let n_guess = (2 * n_states + 4).min(dim);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));

    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut images: Vec<DVector<f64>> = Vec::new();
    let add = |v: DVector<f64>, basis: &mut Vec<DVector<f64>>, images: &mut Vec<DVector<f64>>| -> bool {
        let mut v = v.normalize();
        for _ in 0..2 {
            for b in basis.iter() {
                let d = b.dot(&v);
                v.axpy(-d, b, 1.0);
            }
        }
        let nrm = v.norm();
        if !nrm.is_finite() || nrm < 1e-6 {
            return false;
        }
        v /= nrm;
        let av = DVector::from_vec(apply(v.as_slice()));
        basis.push(v);
        images.push(av);
        true
    };
    // a small dense component keeps every spatial symmetry sector reachable
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for &i in order.iter().take(n_guess) {
        let mut v = DVector::from_fn(dim, |_, _| rng.random_range(-1e-3..1e-3));
        v[i] = 1.0;
        add(v, &mut basis, &mut images);
    }

    let mut worst = f64::INFINITY;
    for iter in 0..max_iter {
        let m = basis.len();
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let x = basis[i].dot(&images[j]);
                a[(i, j)] = x;
                a[(j, i)] = x;
            }
        }
        let (theta, y) = eigh(&a);
        let ritz = |k: usize, set: &[DVector<f64>]| {
            let mut out = DVector::zeros(dim);
            for (i, b) in set.iter().enumerate() {
                out.axpy(y[(i, k)], b, 1.0);
            }
            out
        };
        let mut residuals = Vec::new();
        worst = 0.0;
        for k in 0..n_states.min(m) {
            let x = ritz(k, &basis);
            let ax = ritz(k, &images);
            let r = ax - &x * theta[k];
            let rn = r.norm();
            worst = worst.max(rn);
            residuals.push((k, r, rn));
        }
        log::debug!("davidson iter={iter} subspace={m} max_residual={worst:.3e}");
        if worst < tol && m >= n_states {
            let mut vecs = DMatrix::zeros(dim, n_states);
            for k in 0..n_states {
                vecs.set_column(k, &ritz(k, &basis));
            }
            return Ok(((0..n_states).map(|k| theta[k]).collect(), vecs));
        }
        if m + n_states > max_sub {
            let keep = (2 * n_states).min(m);
            let new_basis: Vec<_> = (0..keep).map(|k| ritz(k, &basis)).collect();
            let new_images: Vec<_> = (0..keep).map(|k| ritz(k, &images)).collect();
            basis = new_basis;
            images = new_images;
        }
        let mut added = false;
        for (k, r, rn) in residuals {
            if rn < tol {
                continue;
            }
            let t = DVector::from_iterator(
                dim,
                r.iter().zip(diag).map(|(&ri, &d)| {
                    let den = theta[k] - d;
                    ri / if den.abs() < 1e-8 { 1e-8_f64.copysign(den) } else { den }
                }),
            );
            added |= add(t, &mut basis, &mut images);
        }
        if !added {
            break;
        }
    }
    Err(Error::Davidson {
        residual: worst,
        iterations: max_iter,
    })
}

/// Ordered spin-orbital label: alpha `p` is `p`, beta `p` is `L + p`.
#[inline]
fn so(spin: Spin, p: usize, l: usize) -> usize {
    match spin {
        Spin::Up => p,
        Spin::Down => l + p,
    }
}

fn annihilate(state: u128, i: usize) -> Option<(u128, bool)> {
    if state >> i & 1 == 0 {
        return None;
    }
    let odd = (state & ((1u128 << i) - 1)).count_ones() % 2 == 1;
    Some((state & !(1u128 << i), odd))
}

fn create(state: u128, i: usize) -> Option<(u128, bool)> {
    if state >> i & 1 == 1 {
        return None;
    }
    let odd = (state & ((1u128 << i) - 1)).count_ones() % 2 == 1;
    Some((state | 1u128 << i, odd))
}

/// Applies creators/annihilators right to left; `true` marks a creator.
fn apply_string(state: u128, ops: &[(bool, usize)]) -> Option<(u128, f64)> {
    let mut s = state;
    let mut odd = false;
    for &(is_create, i) in ops.iter().rev() {
        let (next, o) = if is_create { create(s, i)? } else { annihilate(s, i)? };
        s = next;
        odd ^= o;
    }
    Some((s, if odd { -1.0 } else { 1.0 }))
}

/// Exact expansion of a determinant over spin-orbital occupation strings.
fn expand(det: &SlaterDeterminant) -> HashMap<u128, f64> {
    let l = det.n_orbitals();
    let a = strings(l, det.n_alpha());
    let b = strings(l, det.n_beta());
    let minor = |c: &DMatrix<f64>, mask: u64| {
        let rows: Vec<usize> = occupied(mask).collect();
        let sub = DMatrix::from_fn(rows.len(), c.ncols(), |i, j| c[(rows[i], j)]);
        crate::linalg::determinant(&sub)
    };
    let ca: Vec<f64> = a.iter().map(|&m| minor(&det.c_up, m)).collect();
    let cb: Vec<f64> = b.iter().map(|&m| minor(&det.c_down, m)).collect();
    let mut out = HashMap::new();
    for (i, &am) in a.iter().enumerate() {
        for (j, &bm) in b.iter().enumerate() {
            let v = ca[i] * cb[j];
            if v != 0.0 {
                out.insert(am as u128 | (bm as u128) << l, v);
            }
        }
    }
    out
}

/// Largest orbital and electron counts accepted by [`brute_force_transition`].
pub const BRUTE_FORCE_MAX_ORBITALS: usize = 6;
pub const BRUTE_FORCE_MAX_ELECTRONS: usize = 4;

/// `<bra|O|ket>` by explicit expansion in occupation strings and term-by-term
/// application of the second-quantized operator.
pub fn brute_force_transition(bra: &SlaterDeterminant, ket: &SlaterDeterminant, op: &SpinBlockedOperator) -> Result<f64> {
    let l = bra.n_orbitals();
    let n = bra.n_alpha() + bra.n_beta();
    if l > BRUTE_FORCE_MAX_ORBITALS || n > BRUTE_FORCE_MAX_ELECTRONS {
        return Err(Error::SizeCap {
            count: binomial(2 * l, n),
            cap: binomial(2 * BRUTE_FORCE_MAX_ORBITALS, BRUTE_FORCE_MAX_ELECTRONS),
        });
    }
    if ket.n_orbitals() != l || op.n_orbitals() != l {
        return Err(Error::IncompatibleDeterminants("different orbital bases".into()));
    }
    if ket.n_alpha() + ket.n_beta() != n {
        return Err(Error::IncompatibleDeterminants("different electron counts".into()));
    }
    let b = expand(bra);
    let k = expand(ket);
    let mut result: HashMap<u128, f64> = HashMap::new();
    let mut push = |state: u128, v: f64| *result.entry(state).or_insert(0.0) += v;
    for (&state, &ck) in &k {
        push(state, op.scalar * ck);
        for (s, t, h) in &op.one_body {
            for p in 0..l {
                for q in 0..l {
                    let v = h[(p, q)];
                    if v == 0.0 {
                        continue;
                    }
                    if let Some((out, sign)) = apply_string(state, &[(true, so(*s, p, l)), (false, so(*t, q, l))]) {
                        push(out, v * sign * ck);
                    }
                }
            }
        }
        for block in &op.two_body {
            let [s1, s2, s3, s4] = block.spins;
            for p in 0..l {
                for q in 0..l {
                    for r in 0..l {
                        for s in 0..l {
                            let v = block.tensor.get(p, q, r, s);
                            if v == 0.0 {
                                continue;
                            }
                            let ops = [
                                (true, so(s1, p, l)),
                                (true, so(s3, r, l)),
                                (false, so(s4, s, l)),
                                (false, so(s2, q, l)),
                            ];
                            if let Some((out, sign)) = apply_string(state, &ops) {
                                push(out, 0.5 * v * sign * ck);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(b.iter().map(|(st, &cb)| cb * result.get(st).copied().unwrap_or(0.0)).sum())
}
