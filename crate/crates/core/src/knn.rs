//! Distance ranking, sub-sampled k-NN ensemble weights and the shrinkage
//! statistic `H(s)`.
//!
//! Averaging the "1/k on the k nearest" rule over every size-`s` subset gives
//! weights that depend only on each point's distance rank. Writing
//! `T_j(i) = C(i-1, j) C(n-i, s-1-j) / C(n, s)` for the probability that rank
//! `i` is drawn together with exactly `j` closer points, the complete weight
//! of rank `i` is `(1/k) sum_{j<k} T_j(i)` and `H(s) = sum_i T_{k-1}(i) d_(i)`.

use std::cmp::Ordering;

use crate::dataset::{Dataset, RngSpec, Subsampler};
use crate::error::{Error, Result};
use crate::scalar::{sq_dist, Scalar};

/// Observations sorted by Euclidean distance to a target point.
#[derive(Debug, Clone)]
pub struct DistanceRanking<T> {
    pub target: Vec<T>,
    /// `order[r]` is the observation id at rank `r` (0-based).
    pub order: Vec<usize>,
    /// Non-decreasing; `distances[r]` belongs to `order[r]`.
    pub distances: Vec<T>,
}

impl<T: Scalar> DistanceRanking<T> {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Inverse permutation: `rank_of()[id]` is the rank of observation `id`.
    pub fn rank_of(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (r, &id) in self.order.iter().enumerate() {
            inv[id] = r;
        }
        inv
    }
}

/// Sorts the dataset by `||x - X_i||_2`, ties broken by original index.
pub fn rank_by_distance<T: Scalar>(ds: &Dataset<T>, x: &[T]) -> Result<DistanceRanking<T>> {
    if x.len() != ds.dim() {
        return Err(Error::Dimension {
            expected: ds.dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::pre("target point has non-finite coordinates"));
    }
    let mut pairs: Vec<(T, usize)> = (0..ds.len())
        .map(|i| (sq_dist(ds.x(i), x).sqrt(), i))
        .collect();
    pairs.sort_unstable_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    let (distances, order) = pairs.into_iter().unzip();
    Ok(DistanceRanking {
        target: x.to_vec(),
        order,
        distances,
    })
}

fn check_nsk(n: usize, s: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::pre("k must be at least 1"));
    }
    if s > n {
        return Err(Error::pre(format!("sub-sample size s={s} exceeds n={n}")));
    }
    if k > s {
        return Err(Error::pre(format!("k={k} exceeds sub-sample size s={s}")));
    }
    Ok(())
}

/// Calls `f(rank, T_j(rank + 1))` for every 0-based rank with a non-negligible
/// coefficient, in increasing rank order. Requires `j < s <= n`.
fn for_each_rank_coefficient(n: usize, s: usize, j: usize, mut f: impl FnMut(usize, f64)) {
    debug_assert!(j < s && s <= n);
    // T_j(j+1) = prod_{m=0}^{j} (s-m)/(n-m)
    let mut v: f64 = (0..=j).map(|m| (s - m) as f64 / (n - m) as f64).product();
    let last = n - s + j + 1; // 1-based; beyond this the coefficient is 0
    let mut seen_positive = false;
    for i in (j + 1)..=last {
        if v > 0.0 {
            seen_positive = true;
            f(i - 1, v);
        } else if seen_positive {
            // unimodal in i: once underflowed past the peak it stays below f64 range
            break;
        }
        if i < last {
            v *= i as f64 / (i - j) as f64;
            v *= (n - i - (s - 1 - j)) as f64 / (n - i) as f64;
        }
    }
}

/// Per-rank complete weights `alpha(X_(i))`, indexed by 0-based rank.
pub fn complete_weights_by_rank<T: Scalar>(n: usize, s: usize, k: usize) -> Result<Vec<T>> {
    check_nsk(n, s, k)?;
    let mut acc = vec![0.0f64; n];
    for j in 0..k {
        for_each_rank_coefficient(n, s, j, |r, v| acc[r] += v);
    }
    let kk = k as f64;
    Ok(acc.into_iter().map(|a| T::of(a / kk)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum WeightMode {
    /// Exact average over all `C(n, s)` subsets.
    Complete,
    /// Average over `draws` random subsets.
    Incomplete { draws: usize },
}

/// Kernel weights `alpha(X_i)` indexed by original observation id.
#[derive(Debug, Clone)]
pub struct WeightVector<T> {
    pub alpha: Vec<T>,
    pub s: usize,
    pub k: usize,
    pub mode: WeightMode,
}

impl<T: Scalar> WeightVector<T> {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn total(&self) -> T {
        self.alpha.iter().copied().sum()
    }

    pub fn positive_count(&self) -> usize {
        self.alpha.iter().filter(|&&a| a > T::zero()).count()
    }

    /// Ids with positive weight, in id order.
    pub fn support(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.alpha
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > T::zero())
            .map(|(i, &a)| (i, a))
    }
}

/// Complete U-statistic (L-statistic) k-NN weights for the ranked sample.
pub fn complete_weights<T: Scalar>(
    ranking: &DistanceRanking<T>,
    s: usize,
    k: usize,
) -> Result<WeightVector<T>> {
    let n = ranking.len();
    let by_rank = complete_weights_by_rank::<T>(n, s, k)?;
    let mut alpha = vec![T::zero(); n];
    for (r, &id) in ranking.order.iter().enumerate() {
        alpha[id] = by_rank[r];
    }
    Ok(WeightVector {
        alpha,
        s,
        k,
        mode: WeightMode::Complete,
    })
}

/// A base kernel `K(x, X_i, S)` evaluated on one sub-sample.
pub trait SubsampleKernel<T: Scalar> {
    /// Pushes `(id, weight)` for the members of `subset` with positive weight.
    /// Weights within one subset sum to 1.
    fn weigh(&self, subset: &[usize], out: &mut Vec<(usize, T)>);
}

/// `K(x, X_i, S) = 1{X_i in H_k(x, S)} / k`, using a precomputed ranking.
#[derive(Debug, Clone)]
pub struct KnnKernel {
    k: usize,
    rank_of: Vec<usize>,
}

impl KnnKernel {
    pub fn new<T: Scalar>(ranking: &DistanceRanking<T>, k: usize) -> Self {
        KnnKernel {
            k,
            rank_of: ranking.rank_of(),
        }
    }

    fn nearest(&self, subset: &[usize]) -> Vec<usize> {
        let mut ranks: Vec<usize> = subset.iter().map(|&i| self.rank_of[i]).collect();
        let k = self.k.min(ranks.len());
        if k < ranks.len() {
            ranks.select_nth_unstable(k - 1);
        }
        ranks.truncate(k);
        ranks
    }
}

impl<T: Scalar> SubsampleKernel<T> for KnnKernel {
    fn weigh(&self, subset: &[usize], out: &mut Vec<(usize, T)>) {
        let ranks = self.nearest(subset);
        let w = T::one() / T::of_usize(ranks.len());
        // map ranks back to ids through the subset
        for &i in subset {
            if ranks.contains(&self.rank_of[i]) {
                out.push((i, w));
            }
        }
    }
}

/// Generic sub-sampled kernel averaging: draw `draws` subsets of size `s`
/// without replacement, add each subset's kernel weights, divide by `draws`.
pub fn subsampled_kernel_weights<T: Scalar, K: SubsampleKernel<T>>(
    kernel: &K,
    n: usize,
    s: usize,
    draws: usize,
    rng: &RngSpec,
) -> Result<Vec<T>> {
    if draws == 0 {
        return Err(Error::pre("need at least one sub-sample draw"));
    }
    let mut sampler = Subsampler::new(n);
    let mut r = rng.rng();
    let mut alpha = vec![T::zero(); n];
    let mut buf = Vec::new();
    for _ in 0..draws {
        let subset = sampler.draw(s, &mut r)?;
        buf.clear();
        kernel.weigh(subset, &mut buf);
        for &(i, w) in &buf {
            alpha[i] = alpha[i] + w;
        }
    }
    let b = T::of_usize(draws);
    alpha.iter_mut().for_each(|a| *a = *a / b);
    Ok(alpha)
}

/// Incomplete k-NN weights from `draws` random sub-samples. Each positive
/// weight is an exact multiple of `1/(k draws)`.
pub fn incomplete_weights<T: Scalar>(
    ranking: &DistanceRanking<T>,
    s: usize,
    k: usize,
    draws: usize,
    rng: &RngSpec,
) -> Result<WeightVector<T>> {
    let n = ranking.len();
    check_nsk(n, s, k)?;
    if draws == 0 {
        return Err(Error::pre("need at least one sub-sample draw"));
    }
    let kernel = KnnKernel::new(ranking, k);
    let mut sampler = Subsampler::new(n);
    let mut r = rng.rng();
    let mut hits = vec![0u64; n];
    for _ in 0..draws {
        let subset = sampler.draw(s, &mut r)?;
        for rank in kernel.nearest(subset) {
            hits[ranking.order[rank]] += 1;
        }
    }
    let denom = T::of_usize(k * draws);
    let alpha = hits.into_iter().map(|h| T::of(h as f64) / denom).collect();
    Ok(WeightVector {
        alpha,
        s,
        k,
        mode: WeightMode::Incomplete { draws },
    })
}

/// Draw count for the incomplete ensemble: `ceil((n/s)^{5/4})` when the
/// estimate will be used for inference, `ceil(n/s)` otherwise.
pub fn default_draws(n: usize, s: usize, inference: bool) -> usize {
    let ratio = n as f64 / s as f64;
    let b = if inference { ratio.powf(1.25) } else { ratio };
    (b.ceil() as usize).max(1)
}

/// Closed-form U-statistic estimate of the expected k-NN radius of a
/// size-`s` sub-sample:
/// `H(s) = C(n,s)^{-1} sum_{i=k}^{n-s+k} C(i-1,k-1) C(n-i,s-k) ||x - X_(i)||`.
pub fn shrinkage_statistic<T: Scalar>(
    ranking: &DistanceRanking<T>,
    s: usize,
    k: usize,
) -> Result<T> {
    check_nsk(ranking.len(), s, k)?;
    Ok(T::of(shrinkage_unchecked(&ranking.distances, s, k)))
}

pub(crate) fn shrinkage_unchecked<T: Scalar>(distances: &[T], s: usize, k: usize) -> f64 {
    let mut h = 0.0f64;
    for_each_rank_coefficient(distances.len(), s, k - 1, |r, v| {
        h += v * distances[r].f64()
    });
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Observation;

    fn line(points: &[f64]) -> Dataset<f64> {
        Dataset::from_observations(
            points
                .iter()
                .map(|&p| Observation::new(vec![p], vec![0.0]))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn ranks_a_line() {
        let ds = line(&[0.0, 1.0, 2.0]);
        let r = rank_by_distance(&ds, &[0.6]).unwrap();
        assert_eq!(r.order, vec![1, 0, 2]);
        let expect = [0.4, 0.6, 1.4];
        for (d, e) in r.distances.iter().zip(expect) {
            assert!((d - e).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_by_index() {
        let mut pts = vec![5.0; 10];
        pts[3] = 0.5;
        pts[7] = -0.5;
        let r = rank_by_distance(&line(&pts), &[0.0]).unwrap();
        assert_eq!(&r.order[..2], &[3, 7]);
    }

    #[test]
    fn exact_hit_first() {
        let r = rank_by_distance(&line(&[3.0, 1.0, 2.0]), &[2.0]).unwrap();
        assert_eq!(r.order[0], 2);
        assert_eq!(r.distances[0], 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            rank_by_distance(&line(&[0.0]), &[0.0, 1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn three_choose_two() {
        let w = complete_weights_by_rank::<f64>(3, 2, 1).unwrap();
        let expect = [2.0 / 3.0, 1.0 / 3.0, 0.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn full_sample_is_plain_knn() {
        for k in 1..=4 {
            let w = complete_weights_by_rank::<f64>(9, 9, k).unwrap();
            for (r, &a) in w.iter().enumerate() {
                assert_eq!(a, if r < k { 1.0 / k as f64 } else { 0.0 });
            }
        }
    }

    #[test]
    fn preconditions() {
        assert!(complete_weights_by_rank::<f64>(3, 4, 1).is_err());
        assert!(complete_weights_by_rank::<f64>(5, 2, 3).is_err());
        assert!(complete_weights_by_rank::<f64>(5, 2, 0).is_err());
        let r = rank_by_distance(&line(&[0.0, 1.0]), &[0.0]).unwrap();
        assert!(shrinkage_statistic(&r, 3, 1).is_err());
        assert!(incomplete_weights(&r, 2, 1, 0, &RngSpec::new(0)).is_err());
    }

    #[test]
    fn h_three_choose_two() {
        let r = rank_by_distance(&line(&[0.1, 0.5, 2.0]), &[0.0]).unwrap();
        let h = shrinkage_statistic(&r, 2, 1).unwrap();
        assert!((h - (2.0 * 0.1 + 0.5) / 3.0).abs() < 1e-15);
        // s = n is the plain k-th distance
        assert!((shrinkage_statistic(&r, 3, 2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_draw_is_knn_of_subset() {
        let ds = line(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let r = rank_by_distance(&ds, &[0.0]).unwrap();
        let spec = RngSpec::new(4);
        let w = incomplete_weights(&r, 4, 2, 1, &spec).unwrap();
        let mut subset = crate::subsample_without_replacement(6, 4, &spec).unwrap();
        subset.sort_unstable();
        for (id, a) in w.alpha.iter().enumerate() {
            let expect = if subset[..2].contains(&id) { 0.5 } else { 0.0 };
            assert_eq!(*a, expect);
        }
    }

    #[test]
    fn full_subsample_incomplete_equals_complete() {
        let ds = line(&[0.3, -1.0, 2.0, 0.1, 4.0]);
        let r = rank_by_distance(&ds, &[0.0]).unwrap();
        for k in 1..=3 {
            let c = complete_weights(&r, 5, k).unwrap();
            let i = incomplete_weights(&r, 5, k, 7, &RngSpec::new(1)).unwrap();
            assert_eq!(c.alpha, i.alpha);
        }
    }

    #[test]
    fn generic_kernel_matches_specialized() {
        let pts: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let r = rank_by_distance(&line(&pts), &[0.2]).unwrap();
        let spec = RngSpec::new(8);
        let fast = incomplete_weights(&r, 7, 3, 50, &spec).unwrap();
        let slow: Vec<f64> =
            subsampled_kernel_weights(&KnnKernel::new(&r, 3), 30, 7, 50, &spec).unwrap();
        for (a, b) in fast.alpha.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_to_one_at_scale() {
        for &(n, s, k) in &[(20_000usize, 3usize, 1usize), (20_000, 150, 5), (20_000, 19_999, 2), (20_000, 1000, 3)] {
            let w = complete_weights_by_rank::<f64>(n, s, k).unwrap();
            let total: f64 = w.iter().sum();
            assert!((total - 1.0).abs() < 1e-10, "n={n} s={s} k={k}: {total}");
            assert!(w.iter().skip(n - s + k).all(|&a| a == 0.0));
            assert!(w.windows(2).all(|p| p[0] >= p[1]));
        }
    }

    #[test]
    fn default_draw_counts() {
        assert_eq!(default_draws(100, 10, false), 10);
        assert_eq!(default_draws(100, 10, true), 18);
    }
}
