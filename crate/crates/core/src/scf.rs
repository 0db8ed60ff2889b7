//! Restricted, unrestricted and spin-constrained Hartree-Fock.
//!
//! At fixed multiplier `lambda` the SCF makes `<H> + lambda <S^2>` stationary.
//! In an orthonormal basis `<S^2> = const - tr(P_up P_down)`, so the penalty
//! enters the Fock matrices as `-lambda P` of the opposite spin.
//! [`cuhf_solve`] wraps this in a root-find on `lambda` for a prescribed
//! `<S^2>`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrals::{IntegralSet, Spin, SystemSpec};
use crate::linalg::{eigh, fix_column_phases, jacobi_svd};

/// Occupied orbitals of each spin sector over the common orthonormal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SlaterDeterminant {
    pub c_up: DMatrix<f64>,
    pub c_down: DMatrix<f64>,
}

impl SlaterDeterminant {
    /// Builds a determinant, checking that each sector is orthonormal.
    pub fn new(c_up: DMatrix<f64>, c_down: DMatrix<f64>) -> Result<Self> {
        let det = SlaterDeterminant { c_up, c_down };
        det.validate(1e-10)?;
        Ok(det)
    }

    pub(crate) fn new_unchecked(c_up: DMatrix<f64>, c_down: DMatrix<f64>) -> Self {
        SlaterDeterminant { c_up, c_down }
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.c_up.nrows() != self.c_down.nrows() {
            return Err(Error::InvalidInput("spin sectors use different basis sizes".into()));
        }
        for c in [&self.c_up, &self.c_down] {
            let gram = c.transpose() * c;
            let dev = (gram - DMatrix::identity(c.ncols(), c.ncols())).abs().max();
            if c.ncols() > 0 && dev > tol {
                return Err(Error::InvalidInput(format!(
                    "occupied orbitals are not orthonormal (deviation {dev:.2e})"
                )));
            }
        }
        Ok(())
    }

    pub fn n_orbitals(&self) -> usize {
        self.c_up.nrows()
    }

    pub fn n_alpha(&self) -> usize {
        self.c_up.ncols()
    }

    pub fn n_beta(&self) -> usize {
        self.c_down.ncols()
    }

    pub fn sector(&self, spin: Spin) -> &DMatrix<f64> {
        match spin {
            Spin::Up => &self.c_up,
            Spin::Down => &self.c_down,
        }
    }

    pub fn density(&self, spin: Spin) -> DMatrix<f64> {
        let c = self.sector(spin);
        c * c.transpose()
    }
}

/// `c_up^T c_down`: row `i` is spin-orbital `2i`, column `j` is `2j+1`.
pub fn occ_overlap(det: &SlaterDeterminant) -> DMatrix<f64> {
    det.c_up.transpose() * &det.c_down
}

/// `Ms(Ms+1) + N_beta - sum_ij G_ij^2`.
pub fn s2_expectation(det: &SlaterDeterminant) -> f64 {
    let ms = (det.n_alpha() as f64 - det.n_beta() as f64) / 2.0;
    let g = occ_overlap(det);
    ms * (ms + 1.0) + det.n_beta() as f64 - g.norm_squared()
}

/// `<S^2>` bounds reachable by a single determinant with these counts.
pub fn s2_bounds(spec: &SystemSpec) -> (f64, f64) {
    let ms = spec.ms();
    let lo = ms * (ms + 1.0);
    (lo, lo + spec.n_alpha.min(spec.n_beta) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScfOptions {
    pub energy_tol: f64,
    pub diis_tol: f64,
    pub max_iter: usize,
    pub diis_depth: usize,
    pub level_shift: f64,
    /// Tolerance on `<S^2>` for the outer multiplier search.
    pub s2_tol: f64,
    pub lambda_max: f64,
    pub seed_angle: f64,
}

impl Default for ScfOptions {
    fn default() -> Self {
        ScfOptions {
            energy_tol: 1e-8,
            diis_tol: 1e-6,
            max_iter: 256,
            diis_depth: 8,
            level_shift: 0.2,
            s2_tol: 1e-6,
            lambda_max: 100.0,
            seed_angle: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CUHFSolution {
    pub determinant: SlaterDeterminant,
    pub lambda: f64,
    /// `<H>` without the penalty term.
    pub energy: f64,
    pub s2_achieved: f64,
    pub s2_target: Option<f64>,
    pub g_occ: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Effective orbital energies, ascending, per spin sector.
    pub orbital_energies: [DVector<f64>; 2],
    /// Energy at the start of every SCF cycle.
    pub energy_history: Vec<f64>,
}

impl CUHFSolution {
    pub fn is_restricted(&self, tol: f64) -> bool {
        let d = &self.determinant;
        d.n_alpha() == d.n_beta()
            && (d.density(Spin::Up) - d.density(Spin::Down)).abs().max() < tol
    }

    /// `g_occ` clamped to `[-1, 1]` for reporting.
    pub fn g_occ_clamped(&self) -> DMatrix<f64> {
        self.g_occ.map(|x| x.clamp(-1.0, 1.0))
    }
}

pub(crate) fn coulomb(ints: &IntegralSet, p: &DMatrix<f64>) -> DMatrix<f64> {
    ints.dense_eri().contract_first_pair(p)
}

pub(crate) fn exchange(ints: &IntegralSet, p: &DMatrix<f64>) -> DMatrix<f64> {
    // K[r,q] = sum_ps (pq|rs) P[p,s]; symmetric for symmetric P
    ints.dense_eri().contract_outer_pair(p)
}

/// Spin Fock matrices and `<H>` for the given densities.
pub fn fock_and_energy(
    ints: &IntegralSet,
    pa: &DMatrix<f64>,
    pb: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let j = coulomb(ints, &(pa + pb));
    let fa = &ints.h + &j - exchange(ints, pa);
    let fb = &ints.h + &j - exchange(ints, pb);
    let e = ints.core_energy
        + 0.5 * crate::linalg::frobenius_dot(&(&ints.h + &fa), pa)
        + 0.5 * crate::linalg::frobenius_dot(&(&ints.h + &fb), pb);
    (fa, fb, e)
}

/// `<H>` of a determinant.
pub fn determinant_energy(ints: &IntegralSet, det: &SlaterDeterminant) -> f64 {
    fock_and_energy(ints, &det.density(Spin::Up), &det.density(Spin::Down)).2
}

/// `<H> + lambda <S^2>` as a function of the two densities.
pub fn penalized_energy(ints: &IntegralSet, spec: &SystemSpec, lambda: f64, pa: &DMatrix<f64>, pb: &DMatrix<f64>) -> f64 {
    let (_, _, e) = fock_and_energy(ints, pa, pb);
    let ms = spec.ms();
    let s2 = ms * (ms + 1.0) + spec.n_beta as f64 - crate::linalg::frobenius_dot(pa, pb);
    e + lambda * s2
}

/// Effective Fock matrices including the `-lambda P` cross terms.
pub fn effective_fock(
    ints: &IntegralSet,
    lambda: f64,
    pa: &DMatrix<f64>,
    pb: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let (fa, fb, e) = fock_and_energy(ints, pa, pb);
    (fa - pb * lambda, fb - pa * lambda, e)
}

fn occupied(vectors: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut c = vectors.columns(0, n).into_owned();
    fix_column_phases(&mut c);
    c
}

fn core_guess(ints: &IntegralSet, spec: &SystemSpec) -> SlaterDeterminant {
    let (_, v) = eigh(&ints.h);
    SlaterDeterminant::new_unchecked(occupied(&v, spec.n_alpha), occupied(&v, spec.n_beta))
}

struct Diis {
    depth: usize,
    focks: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    errors: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl Diis {
    fn new(depth: usize) -> Self {
        Diis {
            depth,
            focks: Vec::new(),
            errors: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.focks.clear();
        self.errors.clear();
    }

    fn push(&mut self, f: (DMatrix<f64>, DMatrix<f64>), e: (DMatrix<f64>, DMatrix<f64>)) {
        if self.depth == 0 {
            return;
        }
        if self.focks.len() == self.depth {
            self.focks.remove(0);
            self.errors.remove(0);
        }
        self.focks.push(f);
        self.errors.push(e);
    }

    fn extrapolate(&mut self) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        while self.focks.len() > 1 {
            let n = self.focks.len();
            let mut b = DMatrix::zeros(n + 1, n + 1);
            for i in 0..n {
                for j in 0..=i {
                    let (ea, eb) = (&self.errors[i], &self.errors[j]);
                    let v = ea.0.dot(&eb.0) + ea.1.dot(&eb.1);
                    b[(i, j)] = v;
                    b[(j, i)] = v;
                }
                b[(i, n)] = -1.0;
                b[(n, i)] = -1.0;
            }
            // scale for conditioning; the constraint row is unaffected
            let scale = (0..n).map(|i| b[(i, i)]).fold(0.0_f64, f64::max);
            if scale > 0.0 {
                for i in 0..n {
                    for j in 0..n {
                        b[(i, j)] /= scale;
                    }
                }
            }
            let mut rhs = DVector::zeros(n + 1);
            rhs[n] = -1.0;
            let coeffs = b.lu().solve(&rhs).filter(|c| c.iter().all(|x| x.is_finite()));
            match coeffs {
                Some(c) => {
                    let mut fa = DMatrix::zeros(self.focks[0].0.nrows(), self.focks[0].0.ncols());
                    let mut fb = fa.clone();
                    for (k, (a, bm)) in self.focks.iter().enumerate() {
                        fa += a * c[k];
                        fb += bm * c[k];
                    }
                    return Some((fa, fb));
                }
                None => {
                    self.focks.remove(0);
                    self.errors.remove(0);
                }
            }
        }
        None
    }
}

fn commutator_error(f: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    f * p - p * f
}

/// Fixed-`lambda` unrestricted SCF.
pub fn uhf_scf(
    ints: &IntegralSet,
    spec: &SystemSpec,
    lambda: f64,
    guess: Option<&SlaterDeterminant>,
    opts: &ScfOptions,
) -> Result<CUHFSolution> {
    spec.validate()?;
    if ints.n_orbitals() != spec.n_orbitals {
        return Err(Error::InvalidInput("integrals and system disagree on the orbital count".into()));
    }
    if !lambda.is_finite() {
        return Err(Error::InvalidInput("lambda must be finite".into()));
    }
    let start = match guess {
        Some(g) => {
            g.validate(1e-8)?;
            if g.n_alpha() != spec.n_alpha || g.n_beta() != spec.n_beta || g.n_orbitals() != spec.n_orbitals {
                return Err(Error::InvalidInput("guess determinant does not match the system".into()));
            }
            g.clone()
        }
        None => core_guess(ints, spec),
    };

    let mut pa = start.density(Spin::Up);
    let mut pb = start.density(Spin::Down);
    let mut diis = Diis::new(opts.diis_depth);
    let mut history = Vec::new();
    let mut last_energy = f64::NAN;
    let mut best_err = f64::INFINITY;
    let mut stall = 0usize;
    let mut shifted = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut result = None;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let (fa, fb, energy) = effective_fock(ints, lambda, &pa, &pb);
        if !energy.is_finite() {
            return Err(Error::Numerical(format!("non-finite SCF energy at iteration {iter}")));
        }
        history.push(energy);
        let ea = commutator_error(&fa, &pa);
        let eb = commutator_error(&fb, &pb);
        let err = (ea.norm_squared() + eb.norm_squared()).sqrt();
        let de = (energy - last_energy).abs();
        log::debug!("scf iter={iter} energy={energy:.12} diis_err={err:.3e} lambda={lambda}");

        if de < opts.energy_tol && err < opts.diis_tol {
            converged = true;
            result = Some((fa, fb));
            break;
        }
        last_energy = energy;

        if err < 0.9 * best_err {
            best_err = err;
            stall = 0;
        } else {
            stall += 1;
        }
        if !shifted && opts.level_shift > 0.0 && stall >= 24 {
            log::debug!("scf stagnating; enabling level shift {}", opts.level_shift);
            shifted = true;
            diis.clear();
        }

        diis.push((fa.clone(), fb.clone()), (ea, eb));
        let (mut xa, mut xb) = diis.extrapolate().unwrap_or((fa, fb));
        if shifted {
            let n = spec.n_orbitals;
            xa += (DMatrix::identity(n, n) - &pa) * opts.level_shift;
            xb += (DMatrix::identity(n, n) - &pb) * opts.level_shift;
        }
        let (_, va) = eigh(&xa);
        let (_, vb) = eigh(&xb);
        let ca = va.columns(0, spec.n_alpha).into_owned();
        let cb = vb.columns(0, spec.n_beta).into_owned();
        pa = &ca * ca.transpose();
        pb = &cb * cb.transpose();
    }

    let (fa, fb) = match result {
        Some(f) => f,
        None => {
            let (fa, fb, _) = effective_fock(ints, lambda, &pa, &pb);
            (fa, fb)
        }
    };
    // Canonical orbitals of the final densities.
    let (wa, va) = eigh(&fa);
    let (wb, vb) = eigh(&fb);
    let det = SlaterDeterminant::new_unchecked(occupied(&va, spec.n_alpha), occupied(&vb, spec.n_beta));
    let energy = determinant_energy(ints, &det);
    if !energy.is_finite() {
        return Err(Error::Numerical("non-finite final SCF energy".into()));
    }
    if !converged {
        log::warn!("SCF at lambda={lambda} not converged after {iterations} iterations");
    }
    let g_occ = occ_overlap(&det);
    Ok(CUHFSolution {
        s2_achieved: s2_expectation(&det),
        determinant: det,
        lambda,
        energy,
        s2_target: None,
        g_occ,
        converged,
        iterations,
        orbital_energies: [wa, wb],
        energy_history: history,
    })
}

/// Restricted closed-shell Hartree-Fock, started from the core Hamiltonian.
pub fn rhf(ints: &IntegralSet, spec: &SystemSpec, opts: &ScfOptions) -> Result<CUHFSolution> {
    if spec.n_alpha != spec.n_beta {
        return Err(Error::Unsupported("restricted HF needs N_alpha = N_beta".into()));
    }
    // The UHF equations keep a restricted start restricted.
    let sol = uhf_scf(ints, spec, 0.0, None, opts)?;
    if !sol.converged {
        return Err(Error::NotConverged {
            iterations: sol.iterations,
            energy: sol.energy,
        });
    }
    Ok(sol)
}

/// Mixes the highest occupied and lowest virtual canonical orbitals of one
/// sector by `angle`.
pub fn homo_lumo_mix(
    ints: &IntegralSet,
    det: &SlaterDeterminant,
    lambda: f64,
    spin: Spin,
    angle: f64,
) -> Option<SlaterDeterminant> {
    let (fa, fb, _) = effective_fock(ints, lambda, &det.density(Spin::Up), &det.density(Spin::Down));
    let f = match spin {
        Spin::Up => fa,
        Spin::Down => fb,
    };
    let n_occ = det.sector(spin).ncols();
    let n = det.n_orbitals();
    if n_occ == 0 || n_occ == n {
        return None;
    }
    let (_, v) = eigh(&f);
    let mut c = v.columns(0, n_occ).into_owned();
    let mixed = v.column(n_occ - 1) * angle.cos() + v.column(n_occ) * angle.sin();
    c.set_column(n_occ - 1, &mixed);
    let mut out = det.clone();
    match spin {
        Spin::Up => out.c_up = c,
        Spin::Down => out.c_down = c,
    }
    Some(out)
}

/// Unconstrained UHF: the lowest of several symmetry-broken starts.
pub fn uhf(ints: &IntegralSet, spec: &SystemSpec, opts: &ScfOptions) -> Result<CUHFSolution> {
    let base = uhf_scf(ints, spec, 0.0, None, opts)?;
    let mut best = base.clone();
    for angle in [0.1, 0.3, std::f64::consts::FRAC_PI_4] {
        let mut starts = Vec::new();
        if let Some(up) = homo_lumo_mix(ints, &base.determinant, 0.0, Spin::Up, angle) {
            if let Some(both) = homo_lumo_mix(ints, &up, 0.0, Spin::Down, -angle) {
                starts.push(both);
            }
            starts.push(up);
        }
        for start in starts {
            match uhf_scf(ints, spec, 0.0, Some(&start), opts) {
                Ok(sol) if sol.converged && sol.energy < best.energy - 1e-10 => best = sol,
                Ok(_) => {}
                Err(e) => log::debug!("UHF start with angle {angle} failed: {e}"),
            }
        }
    }
    if !best.converged {
        return Err(Error::NotConverged {
            iterations: best.iterations,
            energy: best.energy,
        });
    }
    Ok(best)
}

/// SCF from a restricted guess with a HOMO-LUMO seed. Small rotations can
/// fall back onto the restricted saddle point, so the angle is escalated
/// until a converged broken solution appears; the restricted result is
/// returned when none does.
fn broken_from(
    ints: &IntegralSet,
    spec: &SystemSpec,
    lambda: f64,
    guess: &SlaterDeterminant,
    opts: &ScfOptions,
) -> Result<CUHFSolution> {
    let (s2_lo, _) = s2_bounds(spec);
    let mut fallback = None;
    for angle in [opts.seed_angle, 0.3, std::f64::consts::FRAC_PI_4] {
        let Some(up) = homo_lumo_mix(ints, guess, lambda, Spin::Up, angle) else {
            break;
        };
        let both = homo_lumo_mix(ints, &up, lambda, Spin::Down, -angle);
        for start in std::iter::once(up).chain(both) {
            let sol = uhf_scf(ints, spec, lambda, Some(&start), opts)?;
            if sol.converged && sol.s2_achieved > s2_lo + 1e-8 {
                return Ok(sol);
            }
            if fallback.as_ref().is_none_or(|f: &CUHFSolution| !f.converged && sol.converged) {
                fallback = Some(sol);
            }
        }
    }
    match fallback {
        Some(f) => Ok(f),
        None => uhf_scf(ints, spec, lambda, Some(guess), opts),
    }
}

/// Breaks the highest-lying doubly occupied pair of `det`: its up orbital is
/// rotated by `angle` toward the lowest orbital outside both occupied spaces,
/// its down partner by `-angle`. `None` when nothing is paired or no such
/// orbital exists.
pub fn pair_break_seed(ints: &IntegralSet, det: &SlaterDeterminant, lambda: f64, angle: f64) -> Option<SlaterDeterminant> {
    let n = det.n_orbitals();
    let (na, nb) = (det.n_alpha(), det.n_beta());
    if na == 0 || nb == 0 || na.max(nb) >= n {
        return None;
    }
    let (fa, fb, _) = effective_fock(ints, lambda, &det.density(Spin::Up), &det.density(Spin::Down));
    let f = (fa + fb) * 0.5;
    let g = det.c_up.transpose() * &det.c_down;
    let k = g.nrows().min(g.ncols());
    let (u, sv, v) = if g.nrows() == g.ncols() {
        jacobi_svd(&g)
    } else {
        let svd = g.clone().svd(true, true);
        (svd.u?, svd.singular_values, svd.v_t?.transpose())
    };
    let up = &det.c_up * &u;
    let down = &det.c_down * &v;
    let paired = (0..k)
        .filter(|&i| sv[i] > 1.0 - 1e-6)
        .max_by(|&i, &j| {
            let ei = up.column(i).dot(&(&f * up.column(i)));
            let ej = up.column(j).dot(&(&f * up.column(j)));
            ei.total_cmp(&ej)
        })?;
    // orthonormal complement of both occupied spaces
    let mut both = DMatrix::zeros(n, na + nb);
    both.view_mut((0, 0), (n, na)).copy_from(&det.c_up);
    both.view_mut((0, na), (n, nb)).copy_from(&det.c_down);
    let (w, vecs) = eigh(&(&both * both.transpose()));
    let outside: Vec<usize> = (0..n).filter(|&i| w[i] < 1e-8).collect();
    if outside.is_empty() {
        return None;
    }
    let z = DMatrix::from_fn(n, outside.len(), |r, c| vecs[(r, outside[c])]);
    let (_, y) = eigh(&(z.transpose() * &f * &z));
    let psi = &z * y.column(0);
    // nearly coincident up/down orbitals leave tiny eigenvalues inside the
    // occupied span, so orthogonalize against each sector explicitly
    let outside_of = |occ: &DMatrix<f64>| -> Option<DVector<f64>> {
        let mut v = psi.clone();
        for _ in 0..2 {
            v -= occ * (occ.transpose() * &v);
        }
        let nrm = v.norm();
        (nrm > 0.5).then(|| v / nrm)
    };
    let psi_up = outside_of(&det.c_up)?;
    let psi_down = outside_of(&det.c_down)?;
    let (c, sn) = (angle.cos(), angle.sin());
    let mut c_up = up;
    let mut c_down = down;
    let a = c_up.column(paired).into_owned();
    let b = c_down.column(paired).into_owned();
    c_up.set_column(paired, &(&a * c + &psi_up * sn));
    c_down.set_column(paired, &(&b * c - &psi_down * sn));
    Some(SlaterDeterminant::new_unchecked(c_up, c_down))
}

/// Tries pair-breaking starts at `lambda` and returns the converged one with
/// the lowest Lagrangian that raised `<S^2>` above `floor`.
fn raise_from(
    ints: &IntegralSet,
    spec: &SystemSpec,
    lambda: f64,
    det: &SlaterDeterminant,
    floor: f64,
    opts: &ScfOptions,
) -> Option<CUHFSolution> {
    let mut best: Option<CUHFSolution> = None;
    for angle in [opts.seed_angle, 0.3, std::f64::consts::FRAC_PI_4] {
        let Some(start) = pair_break_seed(ints, det, lambda, angle) else { break };
        match uhf_scf(ints, spec, lambda, Some(&start), opts) {
            Ok(sol) if sol.converged && sol.s2_achieved > floor + 1e-8 => {
                let l = sol.energy + lambda * sol.s2_achieved;
                if best.as_ref().is_none_or(|b| l < b.energy + lambda * b.s2_achieved - 1e-10) {
                    best = Some(sol);
                }
            }
            Ok(_) => {}
            Err(e) => log::debug!("pair-breaking start failed: {e}"),
        }
        if best.is_some() {
            break;
        }
    }
    best
}

struct Probe {
    lambda: f64,
    f: f64,
    sol: CUHFSolution,
}

/// Constrained UHF at `<S^2> = s2_target`.
///
/// The multiplier is bracketed by stepping away from the warm start and then
/// refined with the Illinois variant of regula falsi. Every SCF starts from
/// the solution of the nearest multiplier already evaluated, so the search
/// stays on one solution branch.
pub fn cuhf_solve(
    ints: &IntegralSet,
    spec: &SystemSpec,
    s2_target: f64,
    warm: Option<&CUHFSolution>,
    opts: &ScfOptions,
) -> Result<CUHFSolution> {
    let (s2_lo, s2_hi) = s2_bounds(spec);
    if !(s2_target.is_finite() && s2_target >= s2_lo - opts.s2_tol && s2_target <= s2_hi + opts.s2_tol) {
        return Err(Error::InvalidInput(format!(
            "<S^2> target {s2_target} outside the attainable interval [{s2_lo}, {s2_hi}]"
        )));
    }
    let tol = opts.s2_tol;
    let (lambda0, start) = match warm {
        Some(w) => (w.lambda, w.determinant.clone()),
        None => (0.0, core_guess(ints, spec)),
    };
    let wants_broken = s2_target > s2_lo + tol;

    let evaluate = |lambda: f64, guess: &SlaterDeterminant| -> Result<Probe> {
        let restricted = (s2_expectation(guess) - s2_lo).abs() < 1e-8;
        let mut sol = if wants_broken && restricted {
            broken_from(ints, spec, lambda, guess, opts)?
        } else {
            let sol = uhf_scf(ints, spec, lambda, Some(guess), opts)?;
            // DIIS can land on the restricted saddle from a weakly broken guess
            if wants_broken && sol.s2_achieved < s2_lo + 1e-8 {
                let alt = broken_from(ints, spec, lambda, &sol.determinant, opts)?;
                let lagrangian = |s: &CUHFSolution| s.energy + lambda * s.s2_achieved;
                if alt.converged && (!sol.converged || lagrangian(&alt) < lagrangian(&sol) - 1e-10) {
                    alt
                } else {
                    sol
                }
            } else {
                sol
            }
        };
        // a paired orbital can sit on a saddle just like the restricted start
        if sol.converged && s2_target > sol.s2_achieved + tol && sol.s2_achieved <= s2_expectation(guess) + 1e-8 {
            if let Some(alt) = raise_from(ints, spec, lambda, &sol.determinant, sol.s2_achieved, opts) {
                let lagrangian = |s: &CUHFSolution| s.energy + lambda * s.s2_achieved;
                if lagrangian(&alt) < lagrangian(&sol) - 1e-10 {
                    sol = alt;
                }
            }
        }
        if !sol.converged {
            return Err(Error::NotConverged {
                iterations: sol.iterations,
                energy: sol.energy,
            });
        }
        sol.s2_target = Some(s2_target);
        log::debug!("cuhf lambda={lambda:.8} s2={:.8} target={s2_target}", sol.s2_achieved);
        Ok(Probe {
            lambda,
            f: sol.s2_achieved - s2_target,
            sol,
        })
    };

    // A restricted start at the lowest target is already the answer.
    if !wants_broken {
        let guess = if warm.is_some() { start.clone() } else { core_guess(ints, spec) };
        let p = evaluate(0.0, &guess)?;
        if p.f.abs() <= tol {
            return Ok(p.sol);
        }
        return walk(p, s2_target, opts, evaluate);
    }

    let p0 = evaluate(lambda0, &start)?;
    if p0.f.abs() <= tol {
        return Ok(p0.sol);
    }
    walk(p0, s2_target, opts, evaluate)
}

fn walk(
    p0: Probe,
    s2_target: f64,
    opts: &ScfOptions,
    evaluate: impl Fn(f64, &SlaterDeterminant) -> Result<Probe>,
) -> Result<CUHFSolution> {
    let tol = opts.s2_tol;
    let mut achieved = (p0.sol.s2_achieved, p0.sol.s2_achieved);
    // Larger lambda penalizes <S^2>, so move up when it is too large.
    let dir = if p0.f > 0.0 { 1.0 } else { -1.0 };
    // Small first probe, then secant-sized steps with a little overshoot.
    // Steep branches are bracketed locally instead of being jumped over.
    let mut step: f64 = 1e-3;
    let mut a = p0;
    let b = loop {
        let lambda = a.lambda + dir * step;
        if lambda.abs() > opts.lambda_max {
            return Err(Error::ConstraintInfeasible {
                target: s2_target,
                lambda_max: opts.lambda_max,
                achieved_min: achieved.0,
                achieved_max: achieved.1,
            });
        }
        let p = match evaluate(lambda, &a.sol.determinant) {
            Ok(p) => p,
            // overshooting into a region without a converged solution
            Err(Error::NotConverged { .. }) if step > 0.01 => {
                step *= 0.25;
                continue;
            }
            Err(e) => return Err(e),
        };
        achieved = (achieved.0.min(p.sol.s2_achieved), achieved.1.max(p.sol.s2_achieved));
        if p.f.abs() <= tol {
            return Ok(p.sol);
        }
        if p.f.signum() != a.f.signum() {
            break p;
        }
        let slope = (p.f - a.f) / (p.lambda - a.lambda);
        let toward = slope * dir < 0.0 && slope.is_finite();
        step = if toward {
            (1.5 * (p.f / slope).abs()).clamp(step * 0.25, step * 4.0).max(1e-5)
        } else {
            step * 2.0
        };
        a = p;
    };

    // Illinois regula falsi on [a, b].
    let (mut a, mut b) = (a, b);
    let mut side = 0i8;
    for _ in 0..200 {
        let width = (b.lambda - a.lambda).abs();
        if width <= 1e-13 * (1.0 + a.lambda.abs()) {
            let (lo, hi) = if a.lambda < b.lambda { (&a, &b) } else { (&b, &a) };
            return Err(Error::BranchDiscontinuity {
                target: s2_target,
                lambda: 0.5 * (a.lambda + b.lambda),
                s2_below: lo.sol.s2_achieved,
                s2_above: hi.sol.s2_achieved,
            });
        }
        let (mut fa, mut fb) = (a.f, b.f);
        if side == -1 {
            fb *= 0.5;
        } else if side == 1 {
            fa *= 0.5;
        }
        let mut lambda = (a.lambda * fb - b.lambda * fa) / (fb - fa);
        // keep strictly inside and fall back to bisection when cramped
        let lo = a.lambda.min(b.lambda);
        let hi = a.lambda.max(b.lambda);
        if !(lambda > lo + 0.01 * width && lambda < hi - 0.01 * width) {
            lambda = 0.5 * (a.lambda + b.lambda);
        }
        let guess = if (lambda - a.lambda).abs() <= (lambda - b.lambda).abs() {
            a.sol.determinant.clone()
        } else {
            b.sol.determinant.clone()
        };
        let p = evaluate(lambda, &guess)?;
        if p.f.abs() <= tol {
            return Ok(p.sol);
        }
        if p.f.signum() == a.f.signum() {
            a = p;
            side = -1;
        } else {
            b = p;
            side = 1;
        }
    }
    Err(Error::BranchDiscontinuity {
        target: s2_target,
        lambda: 0.5 * (a.lambda + b.lambda),
        s2_below: a.sol.s2_achieved,
        s2_above: b.sol.s2_achieved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrals::Eri;

    fn h2_like(r_scale: f64) -> (SystemSpec, IntegralSet) {
        // minimal two-orbital model: bonding/antibonding-like levels
        let mut v = Eri::zeros(2);
        v.set(0, 0, 0, 0, 0.67);
        v.set(1, 1, 1, 1, 0.70);
        v.set(0, 0, 1, 1, 0.66);
        v.set(0, 1, 0, 1, 0.18 * r_scale);
        let h = DMatrix::from_row_slice(2, 2, &[-1.25, 0.0, 0.0, -1.25 + 0.7 * r_scale]);
        let ints = IntegralSet::new(h, v, 0.7).unwrap();
        (SystemSpec::from_nelec(2, 2, 0, 0.7).unwrap(), ints)
    }

    /// Two-site Hubbard model in the bonding/antibonding basis.
    fn hubbard_dimer(t: f64, u: f64) -> (SystemSpec, IntegralSet) {
        let mut v = Eri::zeros(2);
        for [p, q, r, s] in [[0, 0, 0, 0], [1, 1, 1, 1], [0, 0, 1, 1], [0, 1, 0, 1]] {
            v.set(p, q, r, s, 0.5 * u);
        }
        let h = DMatrix::from_row_slice(2, 2, &[-t, 0.0, 0.0, t]);
        (SystemSpec::from_nelec(2, 2, 0, 0.0).unwrap(), IntegralSet::new(h, v, 0.0).unwrap())
    }

    #[test]
    fn s2_closed_forms() {
        let c = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let d = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert_eq!(s2_expectation(&SlaterDeterminant::new(c.clone(), c.clone()).unwrap()), 0.0);
        assert_eq!(s2_expectation(&SlaterDeterminant::new(c.clone(), d).unwrap()), 1.0);
        let two = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let none = DMatrix::zeros(3, 0);
        assert_eq!(s2_expectation(&SlaterDeterminant::new(two, none).unwrap()), 2.0);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let (spec, ints) = h2_like(1.0);
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.4, 0.4, 0.2]);
        let b = DMatrix::from_row_slice(2, 2, &[0.3, -0.46, -0.46, 0.7]);
        let x = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, -0.2]);
        let lambda = 0.37;
        let eps = 1e-5;
        let fd = (penalized_energy(&ints, &spec, lambda, &(&a + &x * eps), &b)
            - penalized_energy(&ints, &spec, lambda, &(&a - &x * eps), &b))
            / (2.0 * eps);
        let (fa, fb, _) = effective_fock(&ints, lambda, &a, &b);
        assert!((fd - crate::linalg::frobenius_dot(&fa, &x)).abs() < 1e-8);
        let fd_b = (penalized_energy(&ints, &spec, lambda, &a, &(&b + &x * eps))
            - penalized_energy(&ints, &spec, lambda, &a, &(&b - &x * eps)))
            / (2.0 * eps);
        assert!((fd_b - crate::linalg::frobenius_dot(&fb, &x)).abs() < 1e-8);
    }

    #[test]
    fn compressed_model_stays_restricted() {
        let (spec, ints) = h2_like(1.0);
        let sol = uhf(&ints, &spec, &ScfOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.s2_achieved < 1e-10);
        assert!((sol.g_occ[(0, 0)].abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn target_zero_is_rhf() {
        let (spec, ints) = h2_like(0.3);
        let opts = ScfOptions::default();
        let r = rhf(&ints, &spec, &opts).unwrap();
        let c = cuhf_solve(&ints, &spec, 0.0, None, &opts).unwrap();
        assert!((r.energy - c.energy).abs() < 1e-10);
        assert_eq!(c.lambda, 0.0);
    }

    #[test]
    fn constrained_solution_hits_target() {
        let (spec, ints) = hubbard_dimer(0.1, 1.0);
        let opts = ScfOptions::default();
        for t in [0.2, 0.5, 0.9] {
            let sol = cuhf_solve(&ints, &spec, t, None, &opts).unwrap();
            assert!((sol.s2_achieved - t).abs() <= 1e-6, "{t} -> {}", sol.s2_achieved);
            assert!(sol.converged);
        }
    }

    #[test]
    fn infeasible_target_is_reported() {
        let (spec, ints) = h2_like(1.0);
        assert!(matches!(
            cuhf_solve(&ints, &spec, 1.5, None, &ScfOptions::default()),
            Err(Error::InvalidInput(_))
        ));
    }
}
