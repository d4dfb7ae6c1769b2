//! Plug-in asymptotic variance and normal confidence intervals.
//!
//! For coordinate `j`, `Var(theta_hat_j) ~ (s^2/n) sigma_j^2 / (2s-1) * zeta_k / k^2`
//! where `sigma_j^2 = Var[<e_j, M0^{-1} psi(Z; theta(x))> | X = x]`.
//! `sigma_j^2` is estimated from the residual scores of the `m = ceil(sqrt n)`
//! nearest neighbors of `x`, on the same sample used for estimation.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::combinatorics::zeta;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::knn::{complete_weights, rank_by_distance, DistanceRanking, WeightVector};
use crate::linalg::Lu;
use crate::moments::{MomentFunction, MomentStructure};
use crate::scalar::Scalar;
use crate::solver::{solve, weighted_moment_jacobian, SolveResult};

/// Standard normal quantile `Phi^{-1}(p)` for `p` in `(0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

pub fn normal_cdf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").cdf(z)
}

/// Estimates `M0 = d/d theta E[psi | X = x]` at `theta`.
///
/// Regression gives `[-1]` exactly; other smooth moments use the weighted
/// jacobian. Piecewise-constant moments need the conditional density at the
/// quantile, passed as `density`.
pub fn estimate_m0<T: Scalar, M: MomentFunction<T> + ?Sized>(
    weights: &WeightVector<T>,
    ds: &Dataset<T>,
    moment: &M,
    theta: &[T],
    density: Option<T>,
) -> Result<Vec<T>> {
    let p = moment.dim();
    let m0 = match moment.structure() {
        MomentStructure::Mean => vec![-T::one()],
        MomentStructure::Quantile(_) => match density {
            Some(f) if f > T::zero() && f.is_finite() => vec![f],
            Some(f) => return Err(Error::pre(format!("density {f} must be positive"))),
            None => {
                return Err(Error::UnsupportedInference(
                    "quantile inference needs the conditional density at the quantile".into(),
                ))
            }
        },
        _ => weighted_moment_jacobian(&weights.alpha, ds, moment, theta)?,
    };
    Lu::new(&m0, p)?;
    Ok(m0)
}

/// Sample variances (`1/(m-1)`) of `<e_j, M0^{-1} psi(Z_i; theta)>` over the
/// `m` nearest neighbors of `x`.
pub fn estimate_sigma_j<T: Scalar, M: MomentFunction<T> + ?Sized>(
    ds: &Dataset<T>,
    x: &[T],
    moment: &M,
    theta: &[T],
    m0: &[T],
    m: usize,
) -> Result<Vec<T>> {
    let ranking = rank_by_distance(ds, x)?;
    estimate_sigma_j_ranked(ds, &ranking, moment, theta, m0, m)
}

pub fn estimate_sigma_j_ranked<T: Scalar, M: MomentFunction<T> + ?Sized>(
    ds: &Dataset<T>,
    ranking: &DistanceRanking<T>,
    moment: &M,
    theta: &[T],
    m0: &[T],
    m: usize,
) -> Result<Vec<T>> {
    if m < 2 {
        return Err(Error::pre("need at least 2 neighbors for a variance"));
    }
    if m > ds.len() {
        return Err(Error::pre(format!("m={m} neighbors exceeds n={}", ds.len())));
    }
    let p = moment.dim();
    let lu = Lu::new(m0, p)?;
    let mut buf = vec![T::zero(); p];
    let scores: Vec<Vec<f64>> = ranking.order[..m]
        .iter()
        .map(|&i| {
            moment.evaluate(&ds.row(i), theta, &mut buf);
            lu.solve(&buf).into_iter().map(|v| v.f64()).collect()
        })
        .collect();
    let mf = m as f64;
    Ok((0..p)
        .map(|j| {
            let mean = scores.iter().map(|v| v[j]).sum::<f64>() / mf;
            let ss = scores.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>();
            T::of(ss / (mf - 1.0))
        })
        .collect())
}

/// Default neighbor count for the local variance: `ceil(sqrt(n))`, at least 2.
pub fn default_variance_neighbors(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).clamp(2, n.max(2))
}

/// `(s^2/n) sigma^2 / (2s-1) * zeta_k / k^2` coordinate-wise.
pub fn plugin_variance<T: Scalar>(sigma_j_sq: &[T], n: usize, s: usize, k: usize) -> Result<Vec<T>> {
    if k == 0 || s < k || n < s {
        return Err(Error::pre(format!(
            "plug-in variance needs 1 <= k <= s <= n (k={k}, s={s}, n={n})"
        )));
    }
    let sf = s as f64;
    let factor = sf * sf / (n as f64 * (2.0 * sf - 1.0)) * zeta::<f64>(k)? / (k * k) as f64;
    Ok(sigma_j_sq.iter().map(|&v| T::of(v.f64() * factor)).collect())
}

/// `theta_j -/+ z_{(1+gamma)/2} sqrt(variance_j)`.
pub fn confidence_interval<T: Scalar>(theta: &[T], variance: &[T], gamma: f64) -> Result<Vec<(T, T)>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::pre(format!("confidence level {gamma} outside (0, 1)")));
    }
    if theta.len() != variance.len() {
        return Err(Error::Dimension {
            expected: theta.len(),
            got: variance.len(),
        });
    }
    if variance.iter().any(|v| !(*v >= T::zero())) {
        return Err(Error::pre("variance must be non-negative"));
    }
    let z = T::of(normal_quantile((1.0 + gamma) / 2.0));
    Ok(theta
        .iter()
        .zip(variance)
        .map(|(&t, &v)| {
            let h = z * v.sqrt();
            (t - h, t + h)
        })
        .collect())
}

/// Sorted replicas paired with `N(mean, sd^2)` quantiles at `(i - 0.5)/N`.
pub fn qq_data(estimates: &[f64], mean: f64, sd: f64) -> Result<Vec<(f64, f64)>> {
    if estimates.len() < 10 {
        return Err(Error::pre("QQ data needs at least 10 replicas"));
    }
    if !(sd >= 0.0) {
        return Err(Error::pre("sd must be non-negative"));
    }
    let mut sorted = estimates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nn = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, e)| (e, normal_quantile((i as f64 + 0.5) / nn) * sd + mean))
        .collect())
}

/// Largest `|empirical - theoretical|` over pairs whose plotting position lies
/// in `[lo, hi]`.
pub fn qq_max_deviation(pairs: &[(f64, f64)], lo: f64, hi: f64) -> f64 {
    let nn = pairs.len() as f64;
    pairs
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let pos = (*i as f64 + 0.5) / nn;
            pos >= lo && pos <= hi
        })
        .map(|(_, (e, q))| (e - q).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct InferenceOptions {
    pub gamma: f64,
    /// Neighbors for the local variance; defaults to `ceil(sqrt(n))`.
    pub variance_neighbors: Option<usize>,
    /// Conditional density at the quantile, for quantile moments.
    pub density: Option<f64>,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            gamma: 0.95,
            variance_neighbors: None,
            density: None,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct InferenceResult<T> {
    pub theta: Vec<T>,
    pub sigma_tilde_sq: Vec<T>,
    pub ci_lower: Vec<T>,
    pub ci_upper: Vec<T>,
    pub m0: Vec<T>,
    pub sigma_j_sq: Vec<T>,
    pub gamma: f64,
    pub residual_norm: T,
    pub s: usize,
    pub k: usize,
}

impl<T: Scalar> InferenceResult<T> {
    pub fn covers(&self, truth: &[T]) -> bool {
        truth
            .iter()
            .enumerate()
            .all(|(j, &t)| self.ci_lower[j] <= t && t <= self.ci_upper[j])
    }

    pub fn width(&self, j: usize) -> T {
        self.ci_upper[j] - self.ci_lower[j]
    }
}

/// Solve, estimate `M0` and `sigma_j^2`, and form the interval, given weights
/// already computed for the ranked target point.
pub fn infer_with_weights<T: Scalar, M: MomentFunction<T> + ?Sized>(
    ds: &Dataset<T>,
    ranking: &DistanceRanking<T>,
    weights: &WeightVector<T>,
    moment: &M,
    opts: &InferenceOptions,
) -> Result<InferenceResult<T>> {
    let sol: SolveResult<T> = solve(weights, ds, moment, None)?;
    let m0 = estimate_m0(weights, ds, moment, &sol.theta, opts.density.map(T::of))?;
    let m = opts
        .variance_neighbors
        .unwrap_or_else(|| default_variance_neighbors(ds.len()));
    let sigma_j_sq = estimate_sigma_j_ranked(ds, ranking, moment, &sol.theta, &m0, m)?;
    let sigma_tilde_sq = plugin_variance(&sigma_j_sq, ds.len(), weights.s, weights.k)?;
    let ci = confidence_interval(&sol.theta, &sigma_tilde_sq, opts.gamma)?;
    Ok(InferenceResult {
        theta: sol.theta,
        sigma_tilde_sq,
        ci_lower: ci.iter().map(|c| c.0).collect(),
        ci_upper: ci.iter().map(|c| c.1).collect(),
        m0,
        sigma_j_sq,
        gamma: opts.gamma,
        residual_norm: sol.residual_norm,
        s: weights.s,
        k: weights.k,
    })
}

/// Complete-weight inference at `x` with fixed `(s, k)`.
pub fn infer<T: Scalar, M: MomentFunction<T> + ?Sized>(
    ds: &Dataset<T>,
    x: &[T],
    moment: &M,
    s: usize,
    k: usize,
    opts: &InferenceOptions,
) -> Result<InferenceResult<T>> {
    let ranking = rank_by_distance(ds, x)?;
    let weights = complete_weights(&ranking, s, k)?;
    infer_with_weights(ds, &ranking, &weights, moment, opts)
}
