//! Closed forms checked against independent brute-force computations.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use npmoment::adaptive::{select_s_estimation_ranked, GTrace};
use npmoment::combinatorics::{binomial_exact, ratio_sum_bounds, IncrementalitySequences};
use npmoment::knn::complete_weights_by_rank;
use npmoment::{
    complete_weights, incrementality, incrementality_exact, incrementality_oracle, plugin_variance,
    rank_by_distance, shrinkage_statistic, zeta, zeta_exact, Dataset, LogBinomialTable, Observation,
    RngSpec,
};
use rand::Rng;

fn line(points: &[f64]) -> Dataset<f64> {
    Dataset::from_observations(points.iter().map(|&p| Observation::new(vec![p], vec![0.0])).collect())
        .unwrap()
}

fn random_line(n: usize, seed: u64) -> Dataset<f64> {
    let mut rng = RngSpec::new(seed).rng();
    let pts: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    line(&pts)
}

/// Every size-`s` subset of `0..n` as a bitmask.
fn subsets(n: usize, s: usize) -> impl Iterator<Item = u32> {
    (0u32..(1 << n)).filter(move |m| m.count_ones() as usize == s)
}

/// Average over all subsets of the per-subset k-NN weight, indexed by rank.
fn enumerated_weights(n: usize, s: usize, k: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    let mut count = 0.0;
    for m in subsets(n, s) {
        count += 1.0;
        let members: Vec<usize> = (0..n).filter(|i| m & (1 << i) != 0).collect();
        for &r in members.iter().take(k) {
            w[r] += 1.0 / k as f64;
        }
    }
    w.iter().map(|v| v / count).collect()
}

/// Average over all subsets of the k-th nearest distance.
fn enumerated_h(distances: &[f64], s: usize, k: usize) -> f64 {
    let n = distances.len();
    let mut total = 0.0;
    let mut count = 0.0;
    for m in subsets(n, s) {
        let kth = (0..n).filter(|i| m & (1 << i) != 0).nth(k - 1).unwrap();
        total += distances[kth];
        count += 1.0;
    }
    total / count
}

#[test]
fn complete_weights_match_subset_enumeration() {
    for n in 1..=10 {
        for s in 1..=n {
            for k in 1..=s.min(3) {
                let oracle = enumerated_weights(n, s, k);
                let by_rank = complete_weights_by_rank::<f64>(n, s, k).unwrap();
                for (a, b) in by_rank.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-12, "n={n} s={s} k={k}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn weights_follow_original_ids() {
    let ds = random_line(9, 4);
    let ranking = rank_by_distance(&ds, &[0.1]).unwrap();
    let oracle = enumerated_weights(9, 4, 2);
    let w = complete_weights(&ranking, 4, 2).unwrap();
    for (r, &id) in ranking.order.iter().enumerate() {
        assert!((w.alpha[id] - oracle[r]).abs() < 1e-12);
    }
}

#[test]
fn shrinkage_matches_subset_enumeration() {
    for n in 1..=10 {
        let ds = random_line(n, n as u64);
        let ranking = rank_by_distance(&ds, &[0.25]).unwrap();
        for s in 1..=n {
            for k in 1..=s.min(3) {
                let h = shrinkage_statistic(&ranking, s, k).unwrap();
                let oracle = enumerated_h(&ranking.distances, s, k);
                assert!((h - oracle).abs() < 1e-12, "n={n} s={s} k={k}: {h} vs {oracle}");
            }
        }
    }
}

#[test]
fn shrinkage_worked_examples() {
    let ds = line(&[0.0, 0.3, 1.0, 2.0, 2.5, 4.0, 7.0, 9.0]);
    let ranking = rank_by_distance(&ds, &[0.1]).unwrap();
    let h = shrinkage_statistic(&ranking, 4, 2).unwrap();
    assert!((h - enumerated_h(&ranking.distances, 4, 2)).abs() < 1e-12);
    let d = &ranking.distances;
    let three = rank_by_distance(&line(&[0.0, 0.3, 1.0]), &[0.1]).unwrap();
    let want = (2.0 * three.distances[0] + three.distances[1]) / 3.0;
    assert!((shrinkage_statistic(&three, 2, 1).unwrap() - want).abs() < 1e-15);
    assert_eq!(shrinkage_statistic(&ranking, 8, 3).unwrap(), d[2]);
}

#[test]
fn zeta_closed_values() {
    let r = |a: i64, b: i64| BigRational::new(BigInt::from(a), BigInt::from(b));
    assert_eq!(zeta_exact(1).unwrap(), r(1, 1));
    assert_eq!(zeta_exact(2).unwrap(), r(5, 2));
    assert_eq!(zeta_exact(3).unwrap(), r(33, 8));
    assert_eq!(zeta::<f64>(3).unwrap(), 4.125);
    assert!(zeta_exact(0).is_err());
}

/// `zeta_k` straight from its definition sum, with exact binomials.
fn zeta_by_definition(k: usize) -> BigRational {
    let mut z = BigRational::from_integer(BigInt::from(k));
    for t in k..=(2 * k - 2) {
        let inner: BigInt = ((t + 1 - k)..=(k - 1))
            .map(|i| BigInt::from(binomial_exact(t as u64, i as u64)))
            .sum();
        z += BigRational::new(inner, BigInt::from(1u8) << t);
    }
    z
}

#[test]
fn zeta_matches_definition() {
    for k in 1..=12 {
        assert_eq!(zeta_exact(k).unwrap(), zeta_by_definition(k), "k={k}");
    }
}

#[test]
fn one_neighbor_incrementality_is_exact() {
    for s in [2usize, 3, 10, 77, 1000, 10_000] {
        let want = BigRational::new(BigInt::from(1), BigInt::from(2 * s - 1));
        assert_eq!(incrementality_exact(1, s).unwrap(), want);
        let f = incrementality::<f64>(1, s).unwrap();
        assert!((f - 1.0 / (2 * s - 1) as f64).abs() <= 1e-15 / s as f64);
    }
}

#[test]
fn incrementality_examples() {
    let r = BigRational::new(BigInt::from(2), BigInt::from(15));
    assert_eq!(incrementality_exact(2, 3).unwrap(), r);
    let s = 10_000;
    let eta = incrementality::<f64>(2, s).unwrap();
    assert!(((2 * s - 1) as f64 * 4.0 * eta - 2.5).abs() < 1e-3);
    assert!((incrementality_oracle(1, 5, 1000).unwrap() - 1.0 / 9.0).abs() < 1e-8);
    let q = incrementality_oracle(2, 3, 1000).unwrap();
    assert!((q - 2.0 / 15.0).abs() < 1e-6);
}

#[test]
fn quadrature_oracle_agrees() {
    for k in 1..=4 {
        for s in k.max(2)..=50 {
            let closed = incrementality::<f64>(k, s).unwrap();
            let q = incrementality_oracle(k, s, 2000).unwrap();
            assert!(((closed - q) / q).abs() < 1e-6, "k={k} s={s}: {closed} vs {q}");
        }
    }
}

#[test]
fn ratio_sum_respects_bounds() {
    for k in 1..=6 {
        let (lo, hi) = ratio_sum_bounds(k);
        for s in k.max(2)..=200 {
            let seq = IncrementalitySequences::<f64>::new(k, s).unwrap();
            let sum = seq.ratio_sum();
            assert!(sum >= lo - 1e-12 && sum <= hi + 1e-12, "k={k} s={s}: {sum} not in [{lo}, {hi}]");
            for t in 0..k.min(2 * s - 1) {
                assert!((seq.ratio[t] - 1.0).abs() < 1e-12, "a_t != b_t at t={t}");
            }
            assert!(seq.ratio.iter().all(|&r| r <= 1.0 + 1e-12));
        }
    }
}

#[test]
fn ratio_sum_converges_at_rate_one_over_s() {
    for k in 1..=4 {
        let z = zeta::<f64>(k).unwrap();
        let scaled: Vec<f64> = [10usize, 30, 100, 300, 1000, 3000, 10_000]
            .iter()
            .map(|&s| (IncrementalitySequences::<f64>::new(k, s).unwrap().ratio_sum() - z).abs() * s as f64)
            .collect();
        let max = scaled.iter().cloned().fold(0.0, f64::max);
        assert!(max < 4.0 * (k * k) as f64, "k={k}: {scaled:?}");
        // the scaled gap settles rather than growing
        let last = scaled[scaled.len() - 1];
        let prev = scaled[scaled.len() - 2];
        assert!(last <= prev * 1.05 + 1e-9, "k={k}: {scaled:?}");
    }
}

#[test]
fn b_t_is_vandermonde() {
    for s in 2..=30usize {
        for t in 0..=(2 * s - 2) {
            let sum: BigInt = (0..=t)
                .filter(|&i| i < s && t - i < s)
                .map(|i| BigInt::from(binomial_exact((s - 1) as u64, i as u64) * binomial_exact((s - 1) as u64, (t - i) as u64)))
                .sum();
            assert_eq!(sum, BigInt::from(binomial_exact((2 * s - 2) as u64, t as u64)));
        }
    }
}

#[test]
fn log_table_matches_exact_integers() {
    let table = LogBinomialTable::<f64>::new(60);
    for n in 0..=60u64 {
        for k in 0..=n {
            let exact = binomial_exact(n, k).to_f64().unwrap();
            let approx = table.choose(n as usize, k as usize);
            assert!(((approx - exact) / exact).abs() < 1e-12, "C({n},{k})");
        }
    }
}

#[test]
fn exact_incrementality_matches_float() {
    for k in 1..=4 {
        for s in k.max(2)..=40 {
            let e = incrementality_exact(k, s).unwrap();
            let f = incrementality::<f64>(k, s).unwrap();
            let ev = e.numer().to_f64().unwrap() / e.denom().to_f64().unwrap();
            assert!(((f - ev) / ev).abs() < 1e-12);
            assert!(!e.is_zero());
        }
    }
}

#[test]
fn plugin_variance_factors() {
    let (n, s) = (1000, 40);
    let base = (s * s) as f64 / (n as f64 * (2 * s - 1) as f64);
    let want = [1.0, 5.0 / 8.0, 11.0 / 24.0];
    for (k, factor) in (1..=3).zip(want) {
        let v = plugin_variance(&[1.0f64], n, s, k).unwrap()[0];
        assert!((v - factor * base).abs() < 1e-15, "k={k}");
    }
}

/// Independent recomputation of the crossing on a small sample.
#[test]
fn crossing_index_matches_brute_force() {
    let ds = random_line(10, 99);
    let ranking = rank_by_distance(&ds, &[0.0]).unwrap();
    let n = 10;
    for k in 1..=2 {
        let h: Vec<f64> = (0..=n)
            .map(|s| if s < k { f64::NAN } else { enumerated_h(&ranking.distances, s, k) })
            .collect();
        for diameter in [1e-4, 1e-3, 0.01, 0.03, 0.05, 0.1, 0.3, 1.0, 10.0] {
            let g = GTrace::new(n, 1, 0.1, diameter);
            let above: Vec<usize> = (k..=n).filter(|&s| h[s] > 2.0 * g.g(s)).collect();
            let want = match above.last() {
                None => k,
                Some(&s) if s == n => n - 1,
                Some(&s) => s,
            };
            for exact in [true, false] {
                let sel = select_s_estimation_ranked(&ranking, diameter, k, 1, 0.1, exact).unwrap();
                assert_eq!(sel.s2, want, "k={k} diameter={diameter} exact={exact}");
                assert_eq!(sel.s1, want + 1);
                assert_eq!(sel.s_star, (9 * sel.s1 + 1).clamp(k, n - 1));
                for t in &sel.trace {
                    assert!((t.h - h[t.s]).abs() < 1e-12);
                    assert!((t.g - g.g(t.s)).abs() < 1e-15);
                }
            }
        }
    }
}
