//! Binomial machinery and the closed-form constants of the k-NN variance:
//! `zeta_k`, the sequences `a_t`, `b_t`, and the incrementality `eta_k(s)`.
//!
//! Nothing here forms a raw factorial. Large binomials live in log space;
//! short ratios of binomials are evaluated as products of ratios of their
//! factors. Exact rational versions back the tests.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `ln C(n, k)` for all `n <= max_n`, backed by a table of `ln m!`.
#[derive(Debug, Clone)]
pub struct LogBinomialTable<T> {
    ln_fact: Vec<T>,
}

impl<T: Scalar> LogBinomialTable<T> {
    pub fn new(max_n: usize) -> Self {
        // accumulate in f64 regardless of T
        let mut acc = 0.0f64;
        let mut ln_fact = Vec::with_capacity(max_n + 1);
        ln_fact.push(T::zero());
        for m in 1..=max_n {
            acc += (m as f64).ln();
            ln_fact.push(T::of(acc));
        }
        LogBinomialTable { ln_fact }
    }

    pub fn max_n(&self) -> usize {
        self.ln_fact.len() - 1
    }

    pub fn ln_factorial(&self, m: usize) -> T {
        self.ln_fact[m]
    }

    /// `ln C(n, k)`; `-inf` when `k > n`.
    pub fn ln_choose(&self, n: usize, k: usize) -> T {
        if k > n {
            return T::neg_infinity();
        }
        self.ln_fact[n] - self.ln_fact[k] - self.ln_fact[n - k]
    }

    pub fn choose(&self, n: usize, k: usize) -> T {
        self.ln_choose(n, k).exp()
    }
}

/// `C(n, k)` as an exact integer.
pub fn binomial_exact(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// `zeta_k = k + sum_{t=k}^{2k-2} 2^{-t} sum_{i=t-k+1}^{k-1} C(t, i)` as an
/// exact dyadic rational.
pub fn zeta_exact(k: usize) -> Result<BigRational> {
    if k == 0 {
        return Err(Error::pre("zeta needs k >= 1"));
    }
    let mut total = BigRational::from_integer(BigInt::from(k));
    for t in k..=(2 * k - 2) {
        let inner: BigUint = ((t + 1 - k)..k)
            .map(|i| binomial_exact(t as u64, i as u64))
            .sum();
        let denom = BigInt::one() << t;
        total += BigRational::new(BigInt::from(inner), denom);
    }
    Ok(total)
}

/// `zeta_k` as a real.
pub fn zeta<T: Scalar>(k: usize) -> Result<T> {
    let z = zeta_exact(k)?;
    Ok(T::of(z.to_f64().unwrap_or(f64::NAN)))
}

fn check_ks(k: usize, s: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::pre("k must be at least 1"));
    }
    if s < k {
        return Err(Error::pre(format!("sub-sample size s={s} below k={k}")));
    }
    Ok(())
}

/// `C(s-1, i) C(s-1, t-i) / C(2s-2, t)` as a product of `t` factor ratios:
/// `C(t, i) * prod (s-1-m)/(2s-2-m)` over the falling factorials.
fn pair_ratio(s: usize, t: usize, i: usize) -> f64 {
    let half = (s - 1) as f64;
    let full = (2 * s - 2) as f64;
    let mut r = 1.0f64;
    // C(t, i) as a running product, interleaved with the falling factorials
    // so intermediate values stay O(1)
    for m in 0..i {
        r *= (half - m as f64) / (full - m as f64);
        r *= (t - m) as f64 / (m + 1) as f64;
    }
    for m in 0..(t - i) {
        r *= (half - m as f64) / (full - (i + m) as f64);
    }
    r
}

/// The sequences `a_t`, `b_t` (`t = 0..=2k-2`) defining the k-NN incrementality.
///
/// `a_t = sum_{i=max(0,t-k+1)}^{min(t,k-1)} C(s-1,i) C(s-1,t-i)` and
/// `b_t = sum_{i=0}^{t} C(s-1,i) C(s-1,t-i) = C(2s-2, t)`.
#[derive(Debug, Clone)]
pub struct IncrementalitySequences<T> {
    pub k: usize,
    pub s: usize,
    pub ln_a: Vec<T>,
    pub ln_b: Vec<T>,
    /// `a_t / b_t`, evaluated directly rather than from the logs.
    pub ratio: Vec<T>,
}

impl<T: Scalar> IncrementalitySequences<T> {
    pub fn new(k: usize, s: usize) -> Result<Self> {
        check_ks(k, s)?;
        let table = LogBinomialTable::<f64>::new(2 * s);
        let len = 2 * k - 1;
        let mut ln_a = Vec::with_capacity(len);
        let mut ln_b = Vec::with_capacity(len);
        let mut ratio = Vec::with_capacity(len);
        for t in 0..len {
            let lo = t.saturating_sub(k - 1);
            let hi = t.min(k - 1);
            let terms: Vec<f64> = (lo..=hi)
                .map(|i| table.ln_choose(s - 1, i) + table.ln_choose(s - 1, t - i))
                .collect();
            ln_a.push(T::of(log_sum_exp(&terms)));
            ln_b.push(T::of(table.ln_choose(2 * s - 2, t)));
            let r: f64 = if t > 2 * s - 2 {
                0.0
            } else {
                (lo..=hi).map(|i| pair_ratio(s, t, i)).sum()
            };
            ratio.push(T::of(r));
        }
        Ok(IncrementalitySequences {
            k,
            s,
            ln_a,
            ln_b,
            ratio,
        })
    }

    /// `sum_t a_t / b_t`.
    pub fn ratio_sum(&self) -> T {
        self.ratio.iter().copied().sum()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// `eta_k(s) = (sum_t a_t / b_t) / ((2s-1) k^2)`.
pub fn incrementality<T: Scalar>(k: usize, s: usize) -> Result<T> {
    let seq = IncrementalitySequences::<T>::new(k, s)?;
    let denom = T::of_usize(2 * s - 1) * T::of_usize(k * k);
    Ok(seq.ratio_sum() / denom)
}

/// `eta_k(s)` in exact rational arithmetic.
pub fn incrementality_exact(k: usize, s: usize) -> Result<BigRational> {
    check_ks(k, s)?;
    let c = |n: usize, r: usize| BigInt::from(binomial_exact(n as u64, r as u64));
    let mut total = BigRational::zero();
    for t in 0..=(2 * k - 2) {
        let lo = t.saturating_sub(k - 1);
        let a: BigInt = (lo..=t.min(k - 1)).map(|i| c(s - 1, i) * c(s - 1, t - i)).sum();
        let b = c(2 * s - 2, t);
        if !b.is_zero() {
            total += BigRational::new(a, b);
        }
    }
    Ok(total / BigRational::from_integer(BigInt::from((2 * s - 1) * k * k)))
}

/// Lower and upper bounds on `sum_t a_t/b_t`:
/// `k + sum_{t=k}^{2k-2} (2k-1-t)/(t+1)` and `2k - 1`.
pub fn ratio_sum_bounds(k: usize) -> (f64, f64) {
    let lower = k as f64
        + (k..=(2 * k).saturating_sub(2))
            .map(|t| (2 * k - 1 - t) as f64 / (t + 1) as f64)
            .sum::<f64>();
    (lower, (2 * k - 1) as f64)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let m = order.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0f64, 0.0f64);
            for j in 0..order {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = order as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[order - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

/// Independent numerical check of `eta_k(s)`: integrates
/// `(sum_{i<k} C(s-1,i) (1-p)^{s-1-i} p^i)^2` over `p ~ U(0,1)` with composite
/// Gauss-Legendre quadrature and divides by `k^2`.
pub fn incrementality_oracle(k: usize, s: usize, points: usize) -> Result<f64> {
    check_ks(k, s)?;
    if points < 1000 {
        return Err(Error::pre("quadrature needs at least 1000 points"));
    }
    const ORDER: usize = 16;
    let panels = points.div_ceil(ORDER);
    let (nodes, weights) = gauss_legendre(ORDER);
    // binomials by the multiplicative formula, independent of the log table
    let coef: Vec<f64> = (0..k)
        .map(|i| (0..i).fold(1.0, |c, m| c * (s - 1 - m) as f64 / (m + 1) as f64))
        .collect();
    let h = 1.0 / panels as f64;
    let mut total = 0.0;
    for panel in 0..panels {
        let a = panel as f64 * h;
        for (z, w) in nodes.iter().zip(&weights) {
            let p = a + 0.5 * h * (z + 1.0);
            let tail: f64 = coef
                .iter()
                .enumerate()
                .take(s)
                .map(|(i, c)| c * (1.0 - p).powi((s - 1 - i) as i32) * p.powi(i as i32))
                .sum();
            total += 0.5 * h * w * tail * tail;
        }
    }
    Ok(total / (k * k) as f64)
}
