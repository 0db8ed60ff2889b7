//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetric eigendecomposition with eigenvalues in ascending order.
pub fn eigh(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    // Symmetrize first; nalgebra reads only one triangle but rounding noise
    // in the other one should not matter either way.
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `m^{-1/2}` for a symmetric positive definite matrix.
pub fn inverse_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (w, v) = eigh(m);
    let d = DMatrix::from_diagonal(&w.map(|x| 1.0 / x.sqrt()));
    &v * d * v.transpose()
}

/// Flip each column so that its largest-magnitude entry is positive.
pub fn fix_column_phases(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0_f64;
        for &x in col.iter() {
            if x.abs() > best.abs() + 1e-14 {
                best = x;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

pub fn determinant(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    m.clone().lu().determinant()
}

/// Frobenius inner product `sum_ij a_ij b_ij`.
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Thin SVD of a square matrix by one-sided Jacobi rotations, `m = U diag(s) V^T`
/// with `s` descending. Small singular values keep full relative accuracy,
/// which the closed-form 2x2 path in nalgebra does not.
pub fn jacobi_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let n = m.ncols();
    assert_eq!(m.nrows(), n, "square input expected");
    let mut g = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = g.column(p).norm_squared();
                let beta = g.column(q).norm_squared();
                let gamma = g.column(p).dot(&g.column(q));
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut g, &mut v] {
                    for i in 0..n {
                        let (xp, xq) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * xp - s * xq;
                        mat[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|j| g.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let mut u = DMatrix::zeros(n, n);
    let mut vs = DMatrix::zeros(n, n);
    let mut s = DVector::zeros(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        vs.set_column(k, &v.column(j));
        if norms[j] > 1e-300 && norms[j] > f64::EPSILON * scale * 1e-3 {
            u.set_column(k, &(g.column(j) / norms[j]));
        } else {
            missing.push(k);
        }
    }
    // complete U for vanishing columns
    let mut e = 0;
    for k in missing {
        loop {
            let mut cand = DVector::<f64>::zeros(n);
            cand[e % n] = 1.0;
            e += 1;
            for _ in 0..2 {
                for j in 0..n {
                    if j != k {
                        let d = u.column(j).dot(&cand);
                        cand.axpy(-d, &u.column(j).into_owned(), 1.0);
                    }
                }
            }
            let nrm = cand.norm();
            if nrm > 0.5 {
                u.set_column(k, &(cand / nrm));
                break;
            }
        }
    }
    (u, s, vs)
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}
