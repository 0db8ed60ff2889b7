//! Quick invariant suite behind the `selfcheck` subcommand.

use std::fmt::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fci::brute_force_transition;
use crate::integrals::{s2_operator, SpinBlockedOperator};
use crate::linalg::binomial;
use crate::noci::{overlap_element, transition_element};
use crate::projection::{assignment_determinant, build_noci_basis_from_det, enumerate_assignments, ProjectionSpace};
use crate::recoupling::{analytic_overlap_4e, closed_form_blocks, recouple, synthetic_seed_4e, OverlapInputs4e};
use crate::scf::s2_expectation;
use crate::synthetic::{broken_pair_seed, determinant_pair, random_determinant, random_integrals};

struct Check {
    name: &'static str,
    worst: f64,
    tol: f64,
}

/// Appendix-sparsity overlaps (`g02 = g13 = 0` by construction).
pub fn random_overlaps(rng: &mut impl Rng, bound: f64) -> OverlapInputs4e {
    loop {
        let mut v = [0.0; 4];
        v.iter_mut().for_each(|x| *x = rng.random_range(-bound..=bound));
        let g = OverlapInputs4e::new(v[0], v[1], v[2], v[3]).expect("bounded");
        if g.is_realizable() {
            return g;
        }
    }
}

/// Overlap matrix of the six raw reassigned determinants of a seed.
pub fn numeric_overlap_4e(g: &OverlapInputs4e) -> Result<DMatrix<f64>> {
    let seed = synthetic_seed_4e(g)?;
    let dets = enumerate_assignments(4)?
        .into_iter()
        .map(|a| assignment_determinant(&seed, a))
        .collect::<Result<Vec<_>>>()?;
    let mut m = DMatrix::zeros(6, 6);
    for i in 0..6 {
        for j in 0..6 {
            m[(i, j)] = overlap_element(&dets[i], &dets[j])?;
        }
    }
    Ok(m)
}

pub fn run(seed: u64) -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut worst = [0.0_f64; 3];
    for _ in 0..100 {
        let g = random_overlaps(&mut rng, 0.9);
        let m = numeric_overlap_4e(&g)?;
        worst[0] = worst[0].max((&m - analytic_overlap_4e(&g)).abs().max());
        let blocks = recouple(&m);
        worst[1] = worst[1].max(blocks.offblock_norm);
        worst[2] = worst[2].max(blocks.max_abs_diff(&closed_form_blocks(&g)));
    }
    checks.push(Check { name: "overlap vs closed form", worst: worst[0], tol: 1e-12 });
    checks.push(Check { name: "recoupled off-block norm", worst: worst[1], tol: 1e-12 });
    checks.push(Check { name: "recoupled blocks vs closed form", worst: worst[2], tol: 1e-12 });

    let mut w = 0.0_f64;
    for i in 0..24 {
        let n = rng.random_range(3..=5);
        let ints = random_integrals(&mut rng, n);
        let ops = [SpinBlockedOperator::hamiltonian(&ints), s2_operator(n)?];
        let (bra, ket) = determinant_pair(&mut rng, n, 2, 1, i % 4);
        for op in &ops {
            let a = transition_element(&bra, &ket, op)?;
            let b = brute_force_transition(&bra, &ket, op)?;
            w = w.max((a - b).abs());
        }
    }
    checks.push(Check { name: "transition vs brute force", worst: w, tol: 1e-10 });

    let mut w = 0.0_f64;
    for _ in 0..20 {
        let d = random_determinant(&mut rng, 5, 2, 2);
        let op = s2_operator(5)?;
        w = w.max((s2_expectation(&d) - transition_element(&d, &d, &op)?).abs());
    }
    checks.push(Check { name: "<S^2> closed form vs operator", worst: w, tol: 1e-10 });

    let mut w = 0.0_f64;
    for pairs in 1..=3 {
        for broken in 0..=pairs {
            let d = broken_pair_seed(&mut rng, 2 * pairs + 2, pairs, broken);
            let basis = build_noci_basis_from_det(&d, 1e-6, &ProjectionSpace::Full)?;
            let expect = binomial(2 * broken, broken) as f64;
            w = w.max((basis.k_eff as f64 - expect).abs());
        }
    }
    checks.push(Check { name: "k_eff = binom(M, M/2)", worst: w, tol: 0.0 });

    let mut out = String::new();
    let mut failed = Vec::new();
    for c in &checks {
        let ok = c.worst <= c.tol;
        let _ = writeln!(out, "{} {:<34} max deviation {:.3e} (tol {:.0e})", if ok { "PASS" } else { "FAIL" }, c.name, c.worst, c.tol);
        if !ok {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(out)
    } else {
        eprint!("{out}");
        Err(Error::Inconsistency(format!("self check failed: {}", failed.join(", "))))
    }
}
