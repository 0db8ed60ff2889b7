mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use spinproj::recoupling::{
    analytic_overlap_4e, clebsch_gordan, closed_form_blocks, recouple, recoupling_matrix_4e, recoupling_matrix_from_cg,
    verify_block_diagonal, OverlapInputs4e,
};
use spinproj::selfcheck::{numeric_overlap_4e, random_overlaps};

#[test]
fn clebsch_gordan_values() {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    assert!((clebsch_gordan(0.5, 0.5, 0.5, -0.5, 0.0, 0.0).unwrap() - r).abs() < 1e-15);
    assert!((clebsch_gordan(0.5, 0.5, 0.5, -0.5, 1.0, 0.0).unwrap() - r).abs() < 1e-15);
    assert!((clebsch_gordan(1.0, 0.0, 1.0, 0.0, 2.0, 0.0).unwrap() - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(clebsch_gordan(0.5, 0.5, 0.5, 0.5, 1.0, 0.0).unwrap(), 0.0);
    assert_eq!(clebsch_gordan(0.5, 0.5, 0.5, -0.5, 2.0, 0.0).unwrap(), 0.0);
    assert!(clebsch_gordan(0.3, 0.3, 0.5, 0.5, 1.0, 0.8).is_err());
}

#[test]
fn printed_rows_and_orthogonality() {
    let u = recoupling_matrix_4e();
    let h = 2f64.sqrt() / 2.0;
    let row4 = [h, 0.0, 0.0, 0.0, 0.0, -h];
    let s = 6f64.sqrt() / 6.0;
    for j in 0..6 {
        assert!((u[(4, j)] - row4[j]).abs() < 1e-15);
        assert!((u[(5, j)] - s).abs() < 1e-15);
    }
    assert!((&u * u.transpose() - DMatrix::identity(6, 6)).abs().max() < 1e-15);
    let from_cg = recoupling_matrix_from_cg().unwrap();
    assert!((from_cg - u).abs().max() < 1e-14);
}

#[test]
fn zero_overlap_gives_unit_matrix() {
    let g = OverlapInputs4e::new(0.0, 0.0, 0.0, 0.0).unwrap();
    assert!((analytic_overlap_4e(&g) - DMatrix::identity(6, 6)).abs().max() < 1e-15);
}

#[test]
fn degenerate_limits() {
    for g23 in [-0.8, -0.3, 0.0, 0.4, 0.9] {
        let g = OverlapInputs4e::new(1.0, g23, 0.0, 0.0).unwrap();
        let b = verify_block_diagonal(&g);
        assert!((b.m0[0][0] - (2.0 + 2.0 * g23 * g23)).abs() < 1e-14);
        assert!((b.m1[0][0] - (2.0 - 2.0 * g23 * g23)).abs() < 1e-14);
        let mut rest: Vec<f64> = vec![b.m0[0][1], b.m0[1][1], b.m2];
        rest.extend((0..3).flat_map(|i| (0..3).map(move |j| (i, j))).filter(|&p| p != (0, 0)).map(|(i, j)| b.m1[i][j]));
        assert!(rest.iter().all(|x| x.abs() < 1e-14), "{rest:?}");
    }
    let b = verify_block_diagonal(&OverlapInputs4e::new(1.0, 1.0, 0.0, 0.0).unwrap());
    assert!((b.m0[0][0] - 4.0).abs() < 1e-14);
    assert!(b.m1[0][0].abs() < 1e-14 && b.m0[1][1].abs() < 1e-14 && b.m2.abs() < 1e-14);
}

#[test]
fn block_dimensions() {
    let b = verify_block_diagonal(&OverlapInputs4e::new(0.3, 0.2, 0.1, 0.4).unwrap());
    assert_eq!((b.m0.len(), b.m1.len(), 1), (2, 3, 1));
    assert!((b.m0[0][1] - b.m0[1][0]).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn numeric_overlap_matches_closed_form(seed in any::<u64>()) {
        let g = random_overlaps(&mut common::rng(seed), 0.9);
        let m = numeric_overlap_4e(&g).unwrap();
        prop_assert!((&m - analytic_overlap_4e(&g)).abs().max() <= 1e-12);
        let b = recouple(&m);
        prop_assert!(b.offblock_norm <= 1e-12);
        prop_assert!(b.max_abs_diff(&closed_form_blocks(&g)) <= 1e-12);
    }

    #[test]
    fn printed_block_formulas(g01 in -0.9f64..0.9, g23 in -0.9f64..0.9, g03 in -0.9f64..0.9, g21 in -0.9f64..0.9) {
        let g = OverlapInputs4e::new(g01, g23, g03, g21).unwrap();
        let b = verify_block_diagonal(&g);
        let (f3, f4) = (g01 * g23, g03 * g21);
        let m2 = 1.0 - g01 * g01 - g23 * g23 - g03 * g03 - g21 * g21 + (f3 - f4).powi(2);
        prop_assert!((b.m2 - m2).abs() < 1e-12);
        let m0_12 = -(3f64.sqrt() / 2.0) * (g03 * g03 + g21 * g21 - 2.0 * f3 * f4);
        prop_assert!((b.m0[0][1] - m0_12).abs() < 1e-12);
        prop_assert!(b.offblock_norm < 1e-12);
    }
}

#[test]
fn input_range_is_checked() {
    assert!(OverlapInputs4e::new(1.2, 0.0, 0.0, 0.0).is_err());
    assert!(OverlapInputs4e::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
    assert!(OverlapInputs4e::new(-1.0, 1.0, 0.0, 0.0).is_ok());
}
