//! Small dense `p x p` linear algebra for the solver and the plug-in variance.
//! Matrices are row-major slices.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reciprocal condition numbers below this are treated as singular.
pub const RCOND_MIN: f64 = 1e-12;

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    p: usize,
    lu: Vec<T>,
    piv: Vec<usize>,
    rcond: f64,
}

fn norm1<T: Scalar>(a: &[T], p: usize) -> f64 {
    (0..p)
        .map(|c| (0..p).map(|r| a[r * p + c].abs().f64()).sum::<f64>())
        .fold(0.0, f64::max)
}

impl<T: Scalar> Lu<T> {
    /// Factors `a`; fails with [`Error::Singular`] when the 1-norm reciprocal
    /// condition number is below [`RCOND_MIN`].
    pub fn new(a: &[T], p: usize) -> Result<Self> {
        assert_eq!(a.len(), p * p, "matrix is not p x p");
        let anorm = norm1(a, p);
        let mut lu = a.to_vec();
        let mut piv: Vec<usize> = (0..p).collect();
        for c in 0..p {
            let (best, val) = (c..p)
                .map(|r| (r, lu[r * p + c].abs()))
                .fold((c, T::zero()), |m, x| if x.1 > m.1 { x } else { m });
            if val == T::zero() || !val.is_finite() {
                return Err(Error::Singular { rcond: 0.0 });
            }
            if best != c {
                for j in 0..p {
                    lu.swap(c * p + j, best * p + j);
                }
                piv.swap(c, best);
            }
            let d = lu[c * p + c];
            for r in (c + 1)..p {
                let f = lu[r * p + c] / d;
                lu[r * p + c] = f;
                for j in (c + 1)..p {
                    lu[r * p + j] = lu[r * p + j] - f * lu[c * p + j];
                }
            }
        }
        let mut out = Lu {
            p,
            lu,
            piv,
            rcond: 0.0,
        };
        // exact 1-norm of the inverse; p is small
        let inv = out.inverse();
        let inorm = norm1(&inv, p);
        out.rcond = if anorm == 0.0 || !inorm.is_finite() {
            0.0
        } else {
            1.0 / (anorm * inorm)
        };
        if !(out.rcond >= RCOND_MIN) {
            return Err(Error::Singular { rcond: out.rcond });
        }
        Ok(out)
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let p = self.p;
        let mut x: Vec<T> = self.piv.iter().map(|&i| b[i]).collect();
        for r in 0..p {
            for c in 0..r {
                x[r] = x[r] - self.lu[r * p + c] * x[c];
            }
        }
        for r in (0..p).rev() {
            for c in (r + 1)..p {
                x[r] = x[r] - self.lu[r * p + c] * x[c];
            }
            x[r] = x[r] / self.lu[r * p + r];
        }
        x
    }

    pub fn inverse(&self) -> Vec<T> {
        let p = self.p;
        let mut inv = vec![T::zero(); p * p];
        let mut e = vec![T::zero(); p];
        for c in 0..p {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[c] = T::one();
            for (r, v) in self.solve(&e).into_iter().enumerate() {
                inv[r * p + c] = v;
            }
        }
        inv
    }
}

pub fn norm2<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}
