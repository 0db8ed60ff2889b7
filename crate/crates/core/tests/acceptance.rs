//! One line per acceptance criterion. Self-contained criteria (A1-A7) fail the
//! target; reproduction criteria against published numbers are reported only.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use spinproj::driver::{Grid, SpinScan};
use spinproj::fci::brute_force_transition;
use spinproj::integrals::s2_operator;
use spinproj::linalg::binomial;
use spinproj::projection::build_noci_basis_from_det;
use spinproj::recoupling::{analytic_overlap_4e, recouple, synthetic_seed_4e, verify_block_diagonal, OverlapInputs4e};
use spinproj::scf::{rhf, uhf};
use spinproj::selfcheck::{numeric_overlap_4e, random_overlaps};
use spinproj::synthetic::{broken_pair_seed, determinant_pair, random_integrals};
use spinproj::{
    classify_states, cuhf_solve, run_restricted_scan, run_scan, solve_noci, transition_element, ProjectionSpace,
    ScanConfig, ScanMode, ScfOptions, SpinBlockedOperator,
};

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn line(id: &'static str, pass: bool, detail: String) -> Line {
    Line { id, pass, detail }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn a1() -> Line {
    let start = Instant::now();
    let mut rng = common::rng(101);
    let (mut entry, mut off) = (0.0_f64, 0.0_f64);
    for _ in 0..500 {
        let g = random_overlaps(&mut rng, 0.9);
        let m = numeric_overlap_4e(&g).unwrap();
        entry = entry.max((&m - analytic_overlap_4e(&g)).abs().max());
        off = off.max(recouple(&m).offblock_norm);
    }
    let secs = start.elapsed().as_secs_f64();
    line(
        "A1",
        entry <= 1e-12 && off <= 1e-12 && secs < 10.0,
        format!("500 samples: max |M - M_analytic| {entry:.1e}, off-block {off:.1e}, {secs:.2} s"),
    )
}

fn a2() -> Line {
    let mut worst = 0.0_f64;
    for g23 in [-0.9, -0.5, 0.0, 0.3, 0.7] {
        let b = verify_block_diagonal(&OverlapInputs4e::new(1.0, g23, 0.0, 0.0).unwrap());
        worst = worst
            .max((b.m0[0][0] - (2.0 + 2.0 * g23 * g23)).abs())
            .max((b.m1[0][0] - (2.0 - 2.0 * g23 * g23)).abs());
    }
    let b = verify_block_diagonal(&OverlapInputs4e::new(1.0, 1.0, 0.0, 0.0).unwrap());
    let others = [b.m0[0][1], b.m0[1][1], b.m1[0][0], b.m1[1][1], b.m1[2][2], b.m2];
    worst = worst.max((b.m0[0][0] - 4.0).abs()).max(others.iter().fold(0.0, |a, x| a.max(x.abs())));
    line("A2", worst <= 1e-14, format!("max deviation {worst:.1e}"))
}

fn a3() -> Line {
    let start = Instant::now();
    let mut rng = common::rng(103);
    let mut worst = 0.0_f64;
    let mut covered = [0usize; 4];
    for i in 0..200 {
        let zeros = i % 5;
        let (n, na, nb) = if zeros >= 3 { (6, 2, 2) } else { (rng.random_range(3..=6), 2, rng.random_range(1..=2)) };
        let ints = random_integrals(&mut rng, n);
        let (bra, ket) = determinant_pair(&mut rng, n, na, nb, zeros);
        let sv = |a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>| {
            (a.transpose() * b).singular_values().iter().filter(|&&s| s < 1e-10).count()
        };
        let actual = sv(&bra.c_up, &ket.c_up) + sv(&bra.c_down, &ket.c_down);
        covered[actual.min(3)] += 1;
        for op in [SpinBlockedOperator::hamiltonian(&ints), s2_operator(n).unwrap()] {
            let a = transition_element(&bra, &ket, &op).unwrap();
            let b = brute_force_transition(&bra, &ket, &op).unwrap();
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    line(
        "A3",
        worst <= 1e-10 && covered.iter().all(|&c| c > 0) && secs < 60.0,
        format!("200 pairs, zero channels 0/1/2/3+ = {covered:?}, max |delta| {worst:.1e}, {secs:.2} s"),
    )
}

fn a4() -> Line {
    let mut rng = common::rng(104);
    let (mut tested, mut worst, mut pattern_ok) = (0, 0.0_f64, true);
    while tested < 50 {
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
        tested += 1;
        for &x in &s.s2_values {
            let l = (((1.0 + 4.0 * x).sqrt() - 1.0) / 2.0).round();
            worst = worst.max((x - l * (l + 1.0)).abs());
        }
        let c = classify_states(&s).counts();
        pattern_ok &= (c.get(&0), c.get(&2), c.get(&4)) == (Some(&2), Some(&3), Some(&1));
    }
    line("A4", worst <= 1e-6 && pattern_ok, format!("{tested} seeds, max |<S^2> - l(l+1)| {worst:.1e}, multiplicities (2,3,1): {pattern_ok}"))
}

fn a5() -> Line {
    let mut rng = common::rng(105);
    let mut ok = true;
    let mut full = Vec::new();
    for n_el in [2usize, 4, 6, 8] {
        let pairs = n_el / 2;
        for broken in 0..=pairs {
            for _ in 0..3 {
                let d = broken_pair_seed(&mut rng, n_el + 2, pairs, broken);
                let k = build_noci_basis_from_det(&d, 1e-6, &ProjectionSpace::Full).unwrap().k_eff;
                ok &= k as u128 == binomial(2 * broken, broken);
                if broken == pairs {
                    full.push(k);
                }
            }
        }
    }
    full.dedup();
    line("A5", ok, format!("k_eff = binom(M, M/2) on all fuzzed seeds, fully unpaired {full:?}"))
}

fn a6(scans: &BTreeMap<&str, SpinScan>) -> Line {
    let mut bad = Vec::new();
    for (name, s) in scans {
        let b = &s.baselines;
        let Some(fci) = b.e_fci else { continue };
        let chain = s.successful().all(|(_, r)| fci <= r.e_noci() + 1e-10 && r.e_noci() <= r.e_cuhf + 1e-10);
        if !(chain && s.minimum.energy <= b.e_uhf + 1e-10 && b.e_uhf <= b.e_rhf + 1e-10) {
            bad.push(*name);
        }
    }
    line("A6", bad.is_empty(), format!("{} systems checked, violations {bad:?}", scans.len()))
}

fn a7() -> Line {
    let opts = ScfOptions::default();
    let mut worst = [0.0_f64; 3];
    for name in ["lih_5.00.fcidump", "h4_2.45.fcidump", "lih_2.75.fcidump"] {
        let (spec, ints) = common::load(name);
        let r = rhf(&ints, &spec, &opts).unwrap();
        let c0 = cuhf_solve(&ints, &spec, 0.0, None, &opts).unwrap();
        let u = uhf(&ints, &spec, &opts).unwrap();
        let cu = cuhf_solve(&ints, &spec, u.s2_achieved, Some(&u), &opts).unwrap();
        worst[0] = worst[0].max((c0.energy - r.energy).abs());
        worst[1] = worst[1].max((cu.energy - u.energy).abs());
        worst[2] = worst[2].max(cu.lambda.abs());
    }
    line(
        "A7",
        worst[0] <= 1e-8 && worst[1] <= 1e-8 && worst[2] <= 1e-4,
        format!("|E(0) - E_RHF| {:.1e}, |E(S_UHF) - E_UHF| {:.1e}, |lambda| {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn a8(be: &SpinScan) -> Line {
    let m = &be.minimum;
    let cap = be.capture.uhf_baseline.unwrap();
    line(
        "A8",
        within(m.s2_target, 0.62, 0.05) && within(cap, 37.69, 1.5),
        format!("minimum at <S^2> {:.2} (0.62 +- 0.05), UHF-baseline capture {cap:.2}% (37.69 +- 1.5)", m.s2_target),
    )
}

fn a9(scans: &BTreeMap<&str, SpinScan>, v1: &BTreeMap<&str, SpinScan>) -> Line {
    let onset = scans
        .iter()
        .filter_map(|(n, s)| n.strip_prefix("lih_").map(|r| (r.trim_end_matches(".fcidump").parse::<f64>().unwrap(), s)))
        .filter(|(_, s)| s.baselines.s2_uhf > 1e-3)
        .map(|(r, _)| r)
        .fold(f64::INFINITY, f64::min);
    let c275 = v1["lih_2.75.fcidump"].capture.rhf_baseline.unwrap();
    let c500 = v1["lih_5.00.fcidump"].capture.rhf_baseline.unwrap();
    let k_ok = v1.values().all(|s| s.successful().all(|(_, r)| r.k_eff <= 2));
    line(
        "A9",
        within(onset, 4.2, 0.2) && within(c275, 33.68, 1.5) && within(c500, 81.25, 1.5) && k_ok,
        format!("UHF breaks at R = {onset:.2} (4.2 +- 0.2), NOCI(2) capture {c275:.2}% at 2.75 (33.68 +- 1.5), {c500:.2}% at 5.00 (81.25 +- 1.5)"),
    )
}

fn a10(scans: &BTreeMap<&str, SpinScan>) -> Line {
    let s2 = scans["h4_2.45.fcidump"].baselines.s2_uhf;
    let c140 = scans["h4_1.40.fcidump"].capture.rhf_baseline.unwrap();
    let sq = scans["h4_2.45.fcidump"].capture.rhf_baseline.unwrap();
    line(
        "A10",
        within(s2, 1.17, 0.03) && within(c140, 34.15, 1.5) && within(sq, 94.98, 1.0),
        format!("<S^2>_UHF {s2:.4} at the square (1.17 +- 0.03), capture {c140:.2}% at 1.40 (34.15 +- 1.5), {sq:.2}% at the square (94.98 +- 1.0)"),
    )
}

fn a11(c6: &SpinScan) -> Line {
    let (spec, ints) = common::load("c.fcidump");
    let at = c6.minimum.s2_target;
    let cfg = ScanConfig {
        grid: Some(Grid::Points(vec![at])),
        epsilon_pair: 1e-15,
        refine: None,
        fci: false,
        ..ScanConfig::default()
    };
    let full = run_scan(&cfg, &spec, &ints).unwrap();
    let r20 = full.points[0].result.as_ref().unwrap();
    let e6 = c6.minimum.energy;
    let gap = e6 - r20.e_noci();
    let triplet = c6.minimum.two_s == 2;
    let cap = c6.capture.rhf_baseline.unwrap();
    line(
        "A11",
        triplet && gap <= 1e-4 && within(cap, 61.92, 1.5),
        format!(
            "ground state 2S = {} (triplet expected), NOCI({}) - NOCI({}) gap {gap:.2e} (<= 1e-4), capture {cap:.2}% (61.92 +- 1.5)",
            c6.minimum.two_s, c6.minimum.k_eff, r20.k_eff
        ),
    )
}

fn a12(be2: &[(f64, SpinScan)]) -> Line {
    let refs = [(-29.15513, 47.26), (-29.16235, 34.34)];
    let mut ok = true;
    let mut parts = Vec::new();
    for ((r, s), (e_ref, c_ref)) in be2.iter().zip(refs) {
        let cap = s.capture.rhf_baseline.unwrap();
        ok &= within(s.minimum.energy, e_ref, 1e-3) && within(cap, c_ref, 1.5);
        parts.push(format!("R={r:.2}: E {:.5} ({e_ref}), capture {cap:.2}% ({c_ref} +- 1.5)", s.minimum.energy));
    }
    line("A12", ok, parts.join("; "))
}

fn a13(scans: &BTreeMap<&str, SpinScan>) -> Line {
    let mut worst = 0.0_f64;
    let mut n = 0;
    for (name, s) in scans.iter().filter(|(n, _)| n.starts_with("lih_")) {
        let fci_t = s.baselines.fci_states.iter().find(|(_, s2)| (s2 - 2.0).abs() < 1e-4).map(|x| x.0);
        let (Some((_, e_t)), Some(fci_t)) = (s.minimum_for_spin(2), fci_t) else {
            panic!("{name}: no triplet");
        };
        worst = worst.max(e_t - fci_t);
        n += 1;
    }
    line(
        "A13",
        worst <= 5e-3,
        format!("LiH triplet vs FCI over {n} geometries, max deviation {worst:.2e} (<= 5e-3); Be2 triplet/quintet not evaluated (no exact reference)"),
    )
}

fn scan(name: &str, cfg: &ScanConfig) -> SpinScan {
    let (spec, ints) = common::load(name);
    spinproj::driver::run(cfg, &spec, &ints).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let self_contained: Vec<fn() -> Line> = vec![a1, a2, a3, a4, a5, a7];
    let mut lines: Vec<Line> = self_contained.par_iter().map(|f| f()).collect();

    let mut names: Vec<String> = std::fs::read_dir(common::data(""))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| !n.starts_with("be2_"))
        .collect();
    names.sort();
    let names: Vec<&'static str> = names.into_iter().map(|n| &*n.leak()).collect();
    let v1_cfg = ScanConfig { space: ProjectionSpace::Valence { pairs: 1 }, ..ScanConfig::default() };
    let c6_cfg = ScanConfig { space: ProjectionSpace::Valence { pairs: 2 }, ..ScanConfig::default() };
    let be2_cfg = |e| ScanConfig { mode: ScanMode::Restricted, fci: false, fci_reference: Some(e), ..ScanConfig::default() };

    let ((scans, v1), (c6, be2)) = rayon::join(
        || {
            rayon::join(
                || names.par_iter().map(|&n| (n, scan(n, &ScanConfig::default()))).collect::<BTreeMap<_, _>>(),
                || ["lih_2.75.fcidump", "lih_5.00.fcidump"].par_iter().map(|&n| (n, scan(n, &v1_cfg))).collect::<BTreeMap<_, _>>(),
            )
        },
        || {
            rayon::join(
                || scan("c.fcidump", &c6_cfg),
                || {
                    [(4.00, -29.21025), (5.75, -29.22415)]
                        .par_iter()
                        .map(|&(r, e)| {
                            let (spec, ints) = common::load(&format!("be2_{r:.2}.fcidump"));
                            (r, run_restricted_scan(&be2_cfg(e), &spec, &ints).unwrap())
                        })
                        .collect::<Vec<_>>()
                },
            )
        },
    );
    lines.push(a6(&scans));
    lines.push(a8(&scans["be.fcidump"]));
    lines.push(a9(&scans, &v1));
    lines.push(a10(&scans));
    lines.push(a11(&c6));
    lines.push(a12(&be2));
    lines.push(a13(&scans));
    lines.sort_by_key(|l| l.id[1..].parse::<u32>().unwrap());

    for l in &lines {
        println!("{} {:<4} {}", if l.pass { "PASS" } else { "FAIL" }, l.id, l.detail);
    }
    println!("total {:.0} s", start.elapsed().as_secs_f64());
    let broken: Vec<_> = lines.iter().filter(|l| !l.pass && l.id[1..].parse::<u32>().unwrap() <= 7).map(|l| l.id).collect();
    if broken.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("self-contained criteria failed: {broken:?}");
        ExitCode::FAILURE
    }
}
