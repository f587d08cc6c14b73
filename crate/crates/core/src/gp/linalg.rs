//! Dense factorization helpers.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Diagonal jitter levels tried in order, relative to the mean diagonal.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

const BLOCK: usize = 96;

/// Lower Cholesky factor of `K + ηI` together with the jitter `η` that made it succeed.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: DMatrix<f64>,
    jitter: f64,
}

/// Cholesky of `K + ηI`, escalating `η` through [`JITTER_LADDER`].
pub fn factorize(k: &DMatrix<f64>) -> Result<Cholesky> {
    let n = k.nrows();
    if n != k.ncols() {
        return Err(Error::DimensionMismatch { expected: n, got: k.ncols() });
    }
    if n == 0 {
        return Ok(Cholesky { l: DMatrix::zeros(0, 0), jitter: 0.0 });
    }
    let scale = k.diagonal().mean();
    if !scale.is_finite() {
        return Err(Error::NotPositiveDefinite { size: n, jitter: 0.0, detail: "non-finite diagonal".into() });
    }
    for rel in JITTER_LADDER {
        let eta = rel * scale.abs();
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += eta;
        }
        if let Some(l) = blocked_cholesky(m) {
            if l.iter().all(|v| v.is_finite()) {
                return Ok(Cholesky { l, jitter: eta });
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(k.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    Err(Error::NotPositiveDefinite {
        size: n,
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale.abs(),
        detail: format!("eigenvalues span [{lo:e}, {hi:e}]"),
    })
}

/// Right-looking block Cholesky; the trailing updates are matrix products.
fn blocked_cholesky(mut a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut j0 = 0;
    while j0 < n {
        let nb = BLOCK.min(n - j0);
        let l11 = nalgebra::Cholesky::new(a.view((j0, j0), (nb, nb)).clone_owned())?.unpack();
        a.view_mut((j0, j0), (nb, nb)).copy_from(&l11);
        let m = n - j0 - nb;
        if m > 0 {
            let mut xt = a.view((j0 + nb, j0), (m, nb)).transpose();
            l11.solve_lower_triangular_mut(&mut xt);
            let x = xt.transpose();
            a.view_mut((j0 + nb, j0), (m, nb)).copy_from(&x);
            a.view_mut((j0 + nb, j0 + nb), (m, m)).gemm(-1.0, &x, &xt, 1.0);
        }
        j0 += nb;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Some(a)
}

impl Cholesky {
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n(&self) -> usize {
        self.l.nrows()
    }

    /// `log det(K + ηI)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Overwrites `b` with `L^{-1} b`.
    pub fn solve_lower_in_place(&self, b: &mut DMatrix<f64>) {
        solve_lower_in_place(&self.l, b);
    }

    /// `(K + ηI)^{-1} b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }
}

/// Overwrites `b` with `L^{-1} b` for lower-triangular `L`, blocking so the bulk of the work is
/// matrix multiplication.
pub fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    assert_eq!(b.nrows(), n, "row count mismatch in triangular solve");
    let mut i0 = 0;
    while i0 < n {
        let nb = BLOCK.min(n - i0);
        let (mut top, mut rest) = b.rows_range_pair_mut(i0..i0 + nb, i0 + nb..);
        l.view((i0, i0), (nb, nb)).solve_lower_triangular_mut(&mut top);
        if i0 + nb < n {
            rest.gemm(-1.0, &l.view((i0 + nb, i0), (n - i0 - nb, nb)), &top, 1.0);
        }
        i0 += nb;
    }
}

/// Replaces `k` by `(k + k^T) / 2`.
pub fn symmetrize(k: &mut DMatrix<f64>) {
    let n = k.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_needs_no_jitter() {
        let c = factorize(&DMatrix::identity(5, 5)).unwrap();
        assert_eq!(c.jitter(), 0.0);
        assert_eq!(c.log_det(), 0.0);
    }

    #[test]
    fn rank_deficient_gets_jitter() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let k = &v * v.transpose();
        let c = factorize(&k).unwrap();
        assert!(c.jitter() > 0.0);
    }

    #[test]
    fn indefinite_is_rejected() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(factorize(&k), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn blocked_factor_matches_unblocked() {
        let n = 301;
        let a = DMatrix::from_fn(n, n, |i, j| (((i * 13 + j * 5) % 17) as f64 - 8.0) / 17.0);
        let k = &a * a.transpose() + DMatrix::identity(n, n);
        let blocked = blocked_cholesky(k.clone()).unwrap();
        let reference = nalgebra::Cholesky::new(k.clone()).unwrap().unpack();
        assert!((&blocked - reference).amax() < 1e-10);
        assert!((&blocked * blocked.transpose() - k).amax() < 1e-9);
    }

    #[test]
    fn blocked_solve_matches_reference() {
        let n = 250;
        let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let spd = &a * a.transpose() + DMatrix::identity(n, n) * n as f64;
        let c = factorize(&spd).unwrap();
        let b = DMatrix::from_fn(n, 7, |i, j| (i as f64 * 0.1 + j as f64).sin());
        let mut x = b.clone();
        c.solve_lower_in_place(&mut x);
        let back = c.l() * &x;
        assert!((back - b).amax() < 1e-10);
        let rhs = DVector::from_fn(n, |i, _| i as f64);
        let sol = c.solve_vec(&rhs);
        assert!((&spd * sol - rhs).amax() < 1e-8);
    }
}
