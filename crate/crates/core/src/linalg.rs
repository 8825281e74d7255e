//! Dense helpers shared by the solver and certification layers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Smallest and largest eigenvalue of a symmetric matrix; (0, 0) when empty.
pub fn sym_eig_extremes(g: &Mat) -> (f64, f64) {
    if g.nrows() == 0 {
        return (0.0, 0.0);
    }
    let sym = (g + g.transpose()) * 0.5;
    let e = SymmetricEigen::new(sym).eigenvalues;
    let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Largest singular value; 0 for empty matrices.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Largest eigenvalue of a positive semidefinite matrix by power iteration.
pub fn power_lmax(g: &Mat, tol: f64, max_iter: usize) -> f64 {
    let n = g.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut x = Vector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    x /= x.norm();
    let mut lam = 0.0;
    for _ in 0..max_iter {
        let y = g * &x;
        let ny = y.norm();
        if ny == 0.0 {
            return 0.0;
        }
        let next = x.dot(&y);
        x = y / ny;
        if (next - lam).abs() <= tol * next.abs().max(1.0) {
            lam = next;
            break;
        }
        lam = next;
    }
    lam
}

/// Spectral radius of a square matrix; triangular inputs read the diagonal.
pub fn spectral_radius(a: &Mat) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let lower = (0..n).all(|i| (i + 1..n).all(|j| a[(i, j)] == 0.0));
    let upper = (0..n).all(|i| (0..i).all(|j| a[(i, j)] == 0.0));
    if lower || upper {
        return (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// 2-norm condition number; infinite when singular.
pub fn condition_number(m: &Mat) -> f64 {
    let s = m.clone().svd(false, false).singular_values;
    let hi = s.iter().cloned().fold(0.0, f64::max);
    let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves the symmetric positive semidefinite system `g x = b`.
///
/// Returns the solution and whether the minimum-norm pseudo-inverse path was used.
pub fn solve_psd(g: &Mat, b: &Mat) -> (Mat, bool) {
    let n = g.nrows();
    if n == 0 {
        return (Mat::zeros(0, b.ncols()), false);
    }
    let scale = (0..n)
        .map(|i| g[(i, i)].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    if let Some(ch) = g.clone().cholesky() {
        let d = ch.l_dirty().diagonal();
        let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
        if dmin * dmin > 1e-12 * scale {
            return (ch.solve(b), false);
        }
    }
    let eig = SymmetricEigen::new((g + g.transpose()) * 0.5);
    let tol = 1e-12 * scale * n as f64;
    let q = &eig.eigenvectors;
    let qtb = q.transpose() * b;
    let mut scaled = qtb.clone();
    let mut deficient = false;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let inv = if l > tol {
            1.0 / l
        } else {
            deficient = true;
            0.0
        };
        for c in 0..b.ncols() {
            scaled[(i, c)] *= inv;
        }
    }
    (q * scaled, deficient)
}
