mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use spinproj::fci::brute_force_transition;
use spinproj::integrals::{parse_fcidump, s2_operator};
use spinproj::linalg::{eigh, max_asymmetry};
use spinproj::noci::{build_matrices, overlap_element, solve_noci_dets, SOFT_THRESHOLD, ZERO_THRESHOLD};
use spinproj::projection::build_noci_basis_from_det;
use spinproj::recoupling::synthetic_seed_4e;
use spinproj::selfcheck::random_overlaps;
use spinproj::synthetic::{broken_pair_seed, determinant_pair, random_integrals, random_orthonormal};
use spinproj::{
    build_noci_basis, classify_states, cuhf_solve, solve_noci, transition_element, Error, ProjectionSpace, ScfOptions,
    SlaterDeterminant, SpinBlockedOperator,
};

fn unit(n: usize, cols: &[usize]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        m[(i, j)] = 1.0;
    }
    m
}

#[test]
fn overlap_basics() {
    let mut rng = common::rng(1);
    let a = SlaterDeterminant::new(random_orthonormal(&mut rng, 5, 2), random_orthonormal(&mut rng, 5, 2)).unwrap();
    assert!((overlap_element(&a, &a).unwrap() - 1.0).abs() < 1e-13);

    let b = SlaterDeterminant::new(unit(4, &[0, 1]), unit(4, &[0])).unwrap();
    let c = SlaterDeterminant::new(unit(4, &[0, 2]), unit(4, &[0])).unwrap();
    assert_eq!(overlap_element(&b, &c).unwrap(), 0.0);

    let d = SlaterDeterminant::new(unit(4, &[0]), unit(4, &[0, 1])).unwrap();
    assert!(matches!(overlap_element(&b, &d), Err(Error::IncompatibleDeterminants(_))));
}

/// Ket whose overlap with `bra` has singular values of order `delta` in
/// `soft` channels.
fn soft_partner(rng: &mut impl rand::Rng, bra: &DMatrix<f64>, soft: usize, delta: f64) -> DMatrix<f64> {
    let ket = spinproj::synthetic::partner_with_zeros(rng, bra, soft);
    let mixed = &ket + bra * delta;
    let (w, v) = eigh(&(mixed.transpose() * &mixed));
    &mixed * (&v * DMatrix::from_diagonal(&w.map(|x| 1.0 / x.sqrt())) * v.transpose())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transition_matches_brute_force(seed in any::<u64>(), n in 3usize..7, zeros in 0usize..5, na in 1usize..3, nb in 0usize..3) {
        prop_assume!(na + nb <= 4 && na <= n && nb <= n);
        let mut rng = common::rng(seed);
        let ints = random_integrals(&mut rng, n);
        let (bra, ket) = determinant_pair(&mut rng, n, na, nb, zeros);
        for op in [SpinBlockedOperator::hamiltonian(&ints), s2_operator(n).unwrap(), SpinBlockedOperator::identity(n)] {
            let a = transition_element(&bra, &ket, &op).unwrap();
            let b = brute_force_transition(&bra, &ket, &op).unwrap();
            prop_assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
        }
        let id = transition_element(&bra, &ket, &SpinBlockedOperator::identity(n)).unwrap();
        prop_assert!((id - overlap_element(&bra, &ket).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn soft_channels_match_brute_force(seed in any::<u64>(), soft in 1usize..3, exp in 4.1f64..12.0) {
        let delta = 10f64.powf(-exp);
        // below the zero threshold a channel is treated as exactly zero, which
        // costs an error of the order of the neglected singular value
        let tol = if delta < ZERO_THRESHOLD { 1e-10 + 1e2 * delta } else { 1e-10 };
        prop_assume!(delta < SOFT_THRESHOLD);
        let n = 5;
        let mut rng = common::rng(seed);
        let ints = random_integrals(&mut rng, n);
        let bra_up = random_orthonormal(&mut rng, n, 2);
        let bra_dn = random_orthonormal(&mut rng, n, 2);
        let bra = SlaterDeterminant::new(bra_up.clone(), bra_dn.clone()).unwrap();
        let ket = SlaterDeterminant::new(soft_partner(&mut rng, &bra_up, soft, delta), bra_dn).unwrap();
        for op in [SpinBlockedOperator::hamiltonian(&ints), s2_operator(n).unwrap()] {
            let a = transition_element(&bra, &ket, &op).unwrap();
            let b = brute_force_transition(&bra, &ket, &op).unwrap();
            prop_assert!((a - b).abs() <= tol, "{} vs {}", a, b);
        }
    }
}

#[test]
fn diagonal_hamiltonian_is_scf_energy() {
    let (spec, ints) = common::load("lih_3.00.fcidump");
    let sol = cuhf_solve(&ints, &spec, 0.5, None, &ScfOptions::default()).unwrap();
    let d = &sol.determinant;
    let e = transition_element(d, d, &SpinBlockedOperator::hamiltonian(&ints)).unwrap();
    assert!((e - sol.energy).abs() < 1e-10);
}

#[test]
fn complete_two_electron_space_splits_into_singlets_and_triplet() {
    let dets: Vec<_> = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .iter()
        .map(|&(u, d)| SlaterDeterminant::new(unit(2, &[u]), unit(2, &[d])).unwrap())
        .collect();
    let op = s2_operator(2).unwrap();
    let m = DMatrix::from_fn(4, 4, |i, j| transition_element(&dets[i], &dets[j], &op).unwrap());
    let (w, _) = eigh(&m);
    let expect = [0.0, 0.0, 0.0, 2.0];
    for (x, y) in w.iter().zip(expect) {
        assert!((x - y).abs() < 1e-12, "{w}");
    }
}

#[test]
fn stretched_pair_gives_even_singlet_and_triplet() {
    let (spec, ints) = parse_fcidump(common::H2_STRETCHED).unwrap();
    let opts = ScfOptions::default();
    let u = spinproj::scf::uhf(&ints, &spec, &opts).unwrap();
    let basis = build_noci_basis(&u, 1e-6, &ProjectionSpace::Full).unwrap();
    assert_eq!(basis.k_eff, 2);
    let s = solve_noci(&basis, &ints).unwrap();
    let labels = classify_states(&s);
    let counts = labels.counts();
    assert_eq!(counts.get(&0), Some(&1));
    assert_eq!(counts.get(&2), Some(&1));
    assert!(s.energies[0] < u.energy);
    let c = s.coefficients.column(0);
    assert!((c[0].abs() - c[1].abs()).abs() < 1e-8, "{c}");
}

#[test]
fn matrices_are_symmetric_and_residuals_small() {
    let (spec, ints) = common::load("h4_1.40.fcidump");
    let sol = cuhf_solve(&ints, &spec, 1.2, None, &ScfOptions::default()).unwrap();
    let basis = build_noci_basis(&sol, 1e-6, &ProjectionSpace::Full).unwrap();
    let m = build_matrices(&basis.dets, &ints).unwrap();
    assert!(max_asymmetry(&m.hamiltonian) < 1e-12 * m.hamiltonian.abs().max());
    assert!(max_asymmetry(&m.overlap) < 1e-12);
    let s = solve_noci(&basis, &ints).unwrap();
    assert!(s.residuals.iter().all(|&r| r <= 1e-8), "{:?}", s.residuals);
    assert!(s.energies[0] <= sol.energy + 1e-10);
    assert!(s.energies.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn four_electron_projection_is_spin_pure() {
    let mut rng = common::rng(21);
    for _ in 0..20 {
        let g = random_overlaps(&mut rng, 0.9);
        let seed = synthetic_seed_4e(&g).unwrap();
        let ints = random_integrals(&mut rng, 4);
        let basis = build_noci_basis_from_det(&seed, 1e-6, &ProjectionSpace::Full).unwrap();
        if basis.k_eff != 6 {
            continue;
        }
        let s = solve_noci(&basis, &ints).unwrap();
        if s.effective_rank < 6 {
            continue;
        }
        for &x in &s.s2_values {
            let l = ((1.0 + 4.0 * x).sqrt() - 1.0) / 2.0;
            assert!((x - l.round() * (l.round() + 1.0)).abs() <= 1e-6, "{x}");
        }
        let counts = classify_states(&s).counts();
        assert_eq!((counts[&0], counts[&2], counts[&4]), (2, 3, 1));
    }
}

#[test]
fn dropping_a_determinant_contaminates() {
    let mut rng = common::rng(22);
    let seed = broken_pair_seed(&mut rng, 5, 2, 2);
    let ints = random_integrals(&mut rng, 5);
    let basis = build_noci_basis_from_det(&seed, 1e-6, &ProjectionSpace::Full).unwrap();
    let subset: Vec<_> = basis.dets[..5].to_vec();
    let s = solve_noci_dets(&subset, &ints).unwrap();
    assert!(classify_states(&s).any_contaminated());
}

#[test]
fn appending_determinants_never_raises_the_ground_state() {
    let (spec, ints) = common::load("c.fcidump");
    let sol = cuhf_solve(&ints, &spec, 1.46, None, &ScfOptions::default()).unwrap();
    let mut prev = f64::INFINITY;
    for space in [
        ProjectionSpace::Valence { pairs: 1 },
        ProjectionSpace::Valence { pairs: 2 },
        ProjectionSpace::Full,
    ] {
        let b = build_noci_basis(&sol, 1e-15, &space).unwrap();
        let e = solve_noci(&b, &ints).unwrap().energies[0];
        assert!(e <= prev + 1e-10, "{space:?}: {e} > {prev}");
        prev = e;
    }
}

#[test]
fn pairing_reduction_loses_nothing() {
    let mut rng = common::rng(23);
    for _ in 0..5 {
        let seed = broken_pair_seed(&mut rng, 6, 3, 1);
        let ints = random_integrals(&mut rng, 6);
        let reduced = build_noci_basis_from_det(&seed, 1e-6, &ProjectionSpace::Full).unwrap();
        let all = build_noci_basis_from_det(&seed, 1e-15, &ProjectionSpace::Full).unwrap();
        assert!(reduced.k_eff == 2 && all.k_eff >= reduced.k_eff);
        let a = solve_noci(&reduced, &ints).unwrap();
        let b = solve_noci(&all, &ints).unwrap();
        assert!((a.energies[0] - b.energies[0]).abs() < 1e-10);
    }
}

#[test]
fn carbon_triplet_lies_below_singlet() {
    let (spec, ints) = common::load("c.fcidump");
    let sol = cuhf_solve(&ints, &spec, 1.46, None, &ScfOptions::default()).unwrap();
    let b = build_noci_basis(&sol, 1e-6, &ProjectionSpace::Valence { pairs: 2 }).unwrap();
    assert_eq!(b.k_eff, 6);
    let lowest = classify_states(&solve_noci(&b, &ints).unwrap()).lowest;
    assert!(lowest[&2].energy < lowest[&0].energy);
}
