//! Reference dense symmetric eigensolver (cyclic Jacobi rotations).
//!
//! Used by the verification suite and tests to cross-check the power
//! iteration on small problems. Deliberately shares no code with it.

use crate::kernel::DenseMatrix;

/// All eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let n = m.dim();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Largest root of the characteristic polynomial of a symmetric 2×2 matrix.
pub fn largest_eigenvalue_2x2(m: &DenseMatrix) -> f64 {
    assert_eq!(m.dim(), 2);
    let (p, q, r) = (m.get(0, 0), m.get(0, 1), m.get(1, 1));
    let mean = 0.5 * (p + r);
    let half_gap = 0.5 * (p - r);
    mean + (half_gap * half_gap + q * q).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_on_known_spectrum() {
        // tridiagonal (2, -1): eigenvalues 2 - 2cos(kπ/(n+1))
        let n = 6;
        let m = DenseMatrix::from_fn(n, |i, j| match i.abs_diff(j) {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        });
        let ev = symmetric_eigenvalues(&m);
        for (k, v) in ev.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((v - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_2x2() {
        let m = DenseMatrix::from_fn(2, |i, j| [[1.0, 0.5], [0.5, -2.0]][i][j]);
        let ev = symmetric_eigenvalues(&m);
        assert!((largest_eigenvalue_2x2(&m) - ev[1]).abs() < 1e-14);
    }
}
