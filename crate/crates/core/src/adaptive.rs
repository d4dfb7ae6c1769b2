//! Data-driven choice of the sub-sample size `s`.
//!
//! `H(s)` (the closed-form average k-NN radius over size-`s` subsets) is
//! non-increasing in `s`, while the envelope
//! `G(s) = Delta sqrt(C p s / n)`, `C = 2 log(2 p n / delta)`, is increasing.
//! The rule takes `s2` as the last `s` (scanning down from `n`) where the
//! bias proxy still dominates, `H(s) > 2 G(s)`, sets `s1 = s2 + 1`, and
//! estimates with `s* = 9 s1 + 1`. For inference the size is inflated to
//! `s_zeta = s* n^zeta` so that bias is negligible against the standard error.

use log::warn;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::knn::{rank_by_distance, shrinkage_unchecked, DistanceRanking};
use crate::scalar::Scalar;

/// `G_delta(s)` for fixed `(n, p, delta, Delta)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GTrace {
    pub n: usize,
    pub p: usize,
    pub delta: f64,
    /// Diameter bound `Delta >= Delta_X`.
    pub diameter: f64,
    /// `C_{n,p,delta} = 2 log(2 p n / delta)`.
    pub c_npd: f64,
}

impl GTrace {
    pub fn new(n: usize, p: usize, delta: f64, diameter: f64) -> Self {
        let c_npd = 2.0 * (2.0 * p as f64 * n as f64 / delta).ln();
        GTrace {
            n,
            p,
            delta,
            diameter,
            c_npd,
        }
    }

    pub fn g(&self, s: usize) -> f64 {
        self.diameter * (self.c_npd * self.p as f64 * s as f64 / self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub s: usize,
    pub h: f64,
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// `H(s) <= 2 G(s)` everywhere; `s2 = k`.
    AllCovered,
    /// `H(s) > 2 G(s)` everywhere; `s2 = n - 1`.
    NeverCovered,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptiveSelection {
    pub k: usize,
    pub s1: usize,
    pub s2: usize,
    pub s_star: usize,
    /// Inference size; equal to `s_star` for pure estimation.
    pub s_zeta: usize,
    pub zeta: Option<f64>,
    pub g: GTrace,
    pub fallback: Option<Fallback>,
    /// Largest admissible `zeta`, computed with `s_star` (used) and with `s1`.
    pub zeta_bound_s_star: Option<f64>,
    pub zeta_bound_s1: Option<f64>,
    pub warnings: Vec<String>,
    /// Evaluated `(s, H(s), G(s))`, ascending in `s`.
    pub trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, Default)]
pub struct AdaptiveOptions {
    /// Overrides the bounding-box diameter used as `Delta`.
    pub diameter: Option<f64>,
    /// Evaluate every `s` from `n` down to the crossing instead of a
    /// geometric grid with bisection.
    pub exact_scan: bool,
}

struct Scan<'a, T> {
    distances: &'a [T],
    k: usize,
    g: GTrace,
    trace: Vec<TracePoint>,
}

impl<T: Scalar> Scan<'_, T> {
    /// True when `H(s) > 2 G(s)`.
    fn above(&mut self, s: usize) -> bool {
        let h = shrinkage_unchecked(self.distances, s, self.k);
        let g = self.g.g(s);
        self.trace.push(TracePoint { s, h, g });
        h > 2.0 * g
    }
}

fn geometric_grid(k: usize, n: usize) -> Vec<usize> {
    let mut grid = vec![k];
    let mut s = k;
    while s < n {
        s = ((s as f64 * 1.1).ceil() as usize).max(s + 1).min(n);
        grid.push(s);
    }
    grid
}

/// Adaptive `s*` for estimation at the ranked target.
pub fn select_s_estimation_ranked<T: Scalar>(
    ranking: &DistanceRanking<T>,
    diameter: f64,
    k: usize,
    p: usize,
    delta: f64,
    exact_scan: bool,
) -> Result<AdaptiveSelection> {
    let n = ranking.len();
    if k == 0 || n <= k {
        return Err(Error::pre(format!("adaptive selection needs n > k >= 1 (n={n}, k={k})")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::pre(format!("delta={delta} outside (0, 1)")));
    }
    if p == 0 {
        return Err(Error::pre("parameter dimension p must be positive"));
    }
    if !(diameter > 0.0 && diameter.is_finite()) {
        return Err(Error::pre(format!("diameter bound {diameter} must be positive")));
    }
    let mut scan = Scan {
        distances: &ranking.distances,
        k,
        g: GTrace::new(n, p, delta, diameter),
        trace: Vec::new(),
    };
    // s2 = largest s in [k, n] with H(s) > 2 G(s); H - 2G is decreasing in s
    let s2: Option<usize> = if exact_scan {
        (k..=n).rev().find(|&s| scan.above(s))
    } else {
        let grid = geometric_grid(k, n);
        let mut found = None;
        for w in (0..grid.len()).rev() {
            if scan.above(grid[w]) {
                found = Some(w);
                break;
            }
        }
        found.map(|w| {
            if w + 1 == grid.len() {
                return grid[w];
            }
            // above at lo, not above at hi
            let (mut lo, mut hi) = (grid[w], grid[w + 1]);
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                if scan.above(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        })
    };
    let mut warnings = Vec::new();
    let (s2, fallback) = match s2 {
        None => {
            warnings.push("H(s) <= 2G(s) for every s; using s2 = k".to_string());
            (k, Some(Fallback::AllCovered))
        }
        Some(s) if s == n => {
            warnings.push("H(s) > 2G(s) for every s; using s2 = n - 1".to_string());
            (n - 1, Some(Fallback::NeverCovered))
        }
        Some(s) => (s, None),
    };
    for w in &warnings {
        warn!("{w}");
    }
    let s1 = s2 + 1;
    let s_star = (9 * s1 + 1).clamp(k, n - 1);
    let mut trace = scan.trace;
    trace.sort_by_key(|t| t.s);
    trace.dedup_by_key(|t| t.s);
    Ok(AdaptiveSelection {
        k,
        s1,
        s2,
        s_star,
        s_zeta: s_star,
        zeta: None,
        g: scan.g,
        fallback,
        zeta_bound_s_star: None,
        zeta_bound_s1: None,
        warnings,
        trace,
    })
}

/// Diameter bound used when none is given: the bounding-box diagonal.
pub fn default_diameter<T: Scalar>(ds: &Dataset<T>) -> f64 {
    ds.bounding_box_diameter().f64()
}

/// Adaptive `s*` for estimation at `x` with confidence `delta`.
pub fn select_s_estimation<T: Scalar>(
    ds: &Dataset<T>,
    x: &[T],
    k: usize,
    p: usize,
    delta: f64,
    opts: &AdaptiveOptions,
) -> Result<AdaptiveSelection> {
    let ranking = rank_by_distance(ds, x)?;
    let diameter = opts.diameter.unwrap_or_else(|| default_diameter(ds));
    select_s_estimation_ranked(&ranking, diameter, k, p, delta, opts.exact_scan)
}

/// `(log n - log s - log log^2 n) / log n`: the largest `zeta` keeping
/// `s n^zeta <= n / log^2 n`.
pub fn admissible_zeta(n: usize, s: usize) -> f64 {
    let ln = (n as f64).ln();
    (ln - (s as f64).ln() - (ln * ln).ln()) / ln
}

/// Inference size from an estimation selection made with `delta = 1/n`.
pub fn inflate_for_inference(mut sel: AdaptiveSelection, n: usize, zeta: f64) -> Result<AdaptiveSelection> {
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return Err(Error::pre(format!("zeta={zeta} must be non-negative")));
    }
    let k = sel.k;
    sel.zeta = Some(zeta);
    sel.zeta_bound_s_star = Some(admissible_zeta(n, sel.s_star));
    sel.zeta_bound_s1 = Some(admissible_zeta(n, sel.s1));
    if zeta == 0.0 {
        sel.s_zeta = sel.s_star;
        return Ok(sel);
    }
    let bound = sel.zeta_bound_s_star.unwrap_or(f64::NEG_INFINITY);
    if zeta > bound {
        let msg = format!(
            "zeta={zeta} exceeds the admissible bound {bound:.4} (computed with s*={}; with s1={} it is {:.4}); s_zeta clamped to n/log^2 n",
            sel.s_star,
            sel.s1,
            sel.zeta_bound_s1.unwrap_or(f64::NAN)
        );
        warn!("{msg}");
        sel.warnings.push(msg);
    }
    let ln = (n as f64).ln();
    let cap = ((n as f64 / (ln * ln)).floor() as usize).min(n - 1);
    let raw = (sel.s_star as f64 * (n as f64).powf(zeta)).floor() as usize;
    sel.s_zeta = raw.min(cap).max(k + 1).min(n - 1);
    Ok(sel)
}

pub fn select_s_inference_ranked<T: Scalar>(
    ranking: &DistanceRanking<T>,
    diameter: f64,
    k: usize,
    p: usize,
    zeta: f64,
    exact_scan: bool,
) -> Result<AdaptiveSelection> {
    let n = ranking.len();
    let sel = select_s_estimation_ranked(ranking, diameter, k, p, 1.0 / n as f64, exact_scan)?;
    inflate_for_inference(sel, n, zeta)
}

/// Adaptive `s_zeta` for inference at `x`, with `delta = 1/n`.
pub fn select_s_inference<T: Scalar>(
    ds: &Dataset<T>,
    x: &[T],
    k: usize,
    p: usize,
    zeta: f64,
    opts: &AdaptiveOptions,
) -> Result<AdaptiveSelection> {
    let ranking = rank_by_distance(ds, x)?;
    let diameter = opts.diameter.unwrap_or_else(|| default_diameter(ds));
    select_s_inference_ranked(&ranking, diameter, k, p, zeta, opts.exact_scan)
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionEstimate {
    pub d_hat: f64,
    pub slope: f64,
    pub intercept: f64,
    /// `(s, H(s))` used in the fit.
    pub points: Vec<(usize, f64)>,
}

/// `d_hat = -1 / slope` of the least-squares fit of `log H(s)` on `log s`.
pub fn estimate_intrinsic_dimension_ranked<T: Scalar>(
    ranking: &DistanceRanking<T>,
    k: usize,
    s_grid: &[usize],
) -> Result<DimensionEstimate> {
    let n = ranking.len();
    if s_grid.len() < 3 {
        return Err(Error::pre("dimension fit needs at least 3 sub-sample sizes"));
    }
    let lo = *s_grid.iter().min().expect("non-empty");
    let hi = *s_grid.iter().max().expect("non-empty");
    if (hi as f64) < 10.0 * lo as f64 {
        return Err(Error::pre("sub-sample grid must span at least one decade"));
    }
    if k == 0 || lo < k || hi > n {
        return Err(Error::pre(format!("grid must lie in [k, n] = [{k}, {n}]")));
    }
    let points: Vec<(usize, f64)> = s_grid
        .iter()
        .map(|&s| (s, shrinkage_unchecked(&ranking.distances, s, k)))
        .collect();
    if points.iter().any(|p| !(p.1 > 0.0)) {
        return Err(Error::Diagnostic("H(s) vanished on the grid (duplicate points at x)".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    if !(slope < -1e-8) {
        return Err(Error::Diagnostic(format!(
            "log H(s) does not decrease in log s (slope {slope:.4}); data not locally homogeneous at this scale"
        )));
    }
    Ok(DimensionEstimate {
        d_hat: -1.0 / slope,
        slope,
        intercept: my - slope * mx,
        points,
    })
}

pub fn estimate_intrinsic_dimension<T: Scalar>(
    ds: &Dataset<T>,
    x: &[T],
    k: usize,
    s_grid: &[usize],
) -> Result<DimensionEstimate> {
    estimate_intrinsic_dimension_ranked(&rank_by_distance(ds, x)?, k, s_grid)
}

/// `count` log-spaced sizes from `lo` to `hi`, deduplicated.
pub fn log_grid(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let (a, b) = ((lo.max(1) as f64).ln(), (hi.max(lo) as f64).ln());
    let mut g: Vec<usize> = (0..count)
        .map(|i| {
            let t = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
            (a + t * (b - a)).exp().round() as usize
        })
        .collect();
    g.dedup();
    g
}

/// Grid used when the caller does not give one: 12 sizes from `n/1000` to
/// `n/10` (at least `k`).
pub fn default_dimension_grid(n: usize, k: usize) -> Vec<usize> {
    let lo = (n / 1000).max(k).max(2);
    let hi = (n / 10).max(lo * 10).min(n);
    log_grid(lo, hi, 12)
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
    fn g_is_increasing() {
        let g = GTrace::new(1000, 1, 0.1, 2.0);
        assert!((g.c_npd - 2.0 * (20_000f64).ln()).abs() < 1e-12);
        assert!((1..1000).all(|s| g.g(s + 1) > g.g(s)));
        let tighter = GTrace::new(1000, 1, 0.01, 2.0);
        assert!(tighter.g(10) > g.g(10));
    }

    #[test]
    fn all_covered_fallback() {
        let pts: Vec<f64> = (0..50).map(|i| i as f64 * 1e-6).collect();
        let ds = line(&pts);
        let opts = AdaptiveOptions {
            diameter: Some(1e6),
            exact_scan: false,
        };
        let sel = select_s_estimation(&ds, &[0.0], 1, 1, 0.1, &opts).unwrap();
        assert_eq!((sel.s2, sel.s1, sel.fallback), (1, 2, Some(Fallback::AllCovered)));
    }

    #[test]
    fn never_covered_fallback() {
        let pts: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let opts = AdaptiveOptions {
            diameter: Some(1e-9),
            exact_scan: false,
        };
        let sel = select_s_estimation(&line(&pts), &[0.0], 1, 1, 0.1, &opts).unwrap();
        assert_eq!((sel.s2, sel.s_star, sel.fallback), (49, 49, Some(Fallback::NeverCovered)));
    }

    #[test]
    fn grid_matches_exact_scan() {
        let pts: Vec<f64> = (0..400).map(|i| ((i * 7919) % 400) as f64 / 400.0).collect();
        let ds = line(&pts);
        for diameter in [0.05, 0.2, 0.5, 1.0, 3.0] {
            for k in 1..=3 {
                let fast = AdaptiveOptions { diameter: Some(diameter), exact_scan: false };
                let slow = AdaptiveOptions { diameter: Some(diameter), exact_scan: true };
                let a = select_s_estimation(&ds, &[0.31], k, 1, 0.1, &fast).unwrap();
                let b = select_s_estimation(&ds, &[0.31], k, 1, 0.1, &slow).unwrap();
                assert_eq!((a.s1, a.s2, a.s_star), (b.s1, b.s2, b.s_star), "diameter {diameter} k {k}");
            }
        }
    }

    #[test]
    fn zeta_zero_is_s_star() {
        let pts: Vec<f64> = (0..300).map(|i| (i as f64 * 0.618).fract()).collect();
        let ds = line(&pts);
        let opts = AdaptiveOptions::default();
        let inf = select_s_inference(&ds, &[0.5], 1, 1, 0.0, &opts).unwrap();
        let est = select_s_estimation(&ds, &[0.5], 1, 1, 1.0 / 300.0, &opts).unwrap();
        assert_eq!(inf.s_zeta, est.s_star);
        let big = select_s_inference(&ds, &[0.5], 1, 1, 5.0, &opts).unwrap();
        let ln = 300f64.ln();
        assert!(big.s_zeta <= (300.0 / (ln * ln)).floor() as usize);
        assert!(!big.warnings.is_empty());
    }

    #[test]
    fn dimension_preconditions() {
        let pts: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let ds = line(&pts);
        assert!(estimate_intrinsic_dimension(&ds, &[0.0], 1, &[2, 5]).is_err());
        assert!(estimate_intrinsic_dimension(&ds, &[0.0], 1, &[2, 5, 10]).is_err());
        assert!(estimate_intrinsic_dimension(&ds, &[0.0], 1, &[2, 10, 200]).is_err());
        let flat = line(&[1.0; 100]);
        assert!(matches!(
            estimate_intrinsic_dimension(&flat, &[0.0], 1, &[2, 10, 50]),
            Err(Error::Diagnostic(_))
        ));
    }

    #[test]
    fn grids() {
        assert_eq!(log_grid(10, 1000, 3), vec![10, 100, 1000]);
        let g = geometric_grid(1, 100);
        assert_eq!((g[0], *g.last().unwrap()), (1, 100));
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
