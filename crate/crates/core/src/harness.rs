//! Monte Carlo experiments: replicate distributions, interval coverage, and
//! error rates, written as plot-ready CSV files plus a JSON manifest.
//!
//! Replicas run in parallel, each on its own RNG stream, and are merged in
//! replica order, so output files depend only on the configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{default_diameter, inflate_for_inference, select_s_estimation_ranked, AdaptiveSelection};
use crate::dataset::{Dataset, RngSpec};
use crate::error::{Error, Result};
use crate::inference::{
    default_variance_neighbors, infer_with_weights, qq_data, qq_max_deviation, InferenceOptions,
};
use crate::knn::{complete_weights, default_draws, incomplete_weights, rank_by_distance};
use crate::moments::{regression_moment, MomentName};
use crate::synth::{Generator, GeneratorSpec};

/// How `s` is chosen for each (replica, test point, k).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SPolicy {
    /// Adaptive inference size `s_zeta`.
    Adaptive { zeta: f64 },
    /// `s = n^{1.05 d / (d + 2)}` with the intrinsic dimension `d`.
    #[serde(alias = "theory-d")]
    TheoryIntrinsic,
    /// `s = n^{1.05 D / (D + 2)}` with the ambient dimension `D`.
    #[serde(alias = "theory-D")]
    TheoryAmbient,
    Fixed { s: usize },
}

impl SPolicy {
    pub fn label(&self) -> String {
        match self {
            SPolicy::Adaptive { zeta } => format!("adaptive(zeta={zeta})"),
            SPolicy::TheoryIntrinsic => "theory_d".into(),
            SPolicy::TheoryAmbient => "theory_D".into(),
            SPolicy::Fixed { s } => format!("fixed({s})"),
        }
    }
}

/// `round(n^{1.05 dim / (dim + 2)})` clamped to `[k, n - 1]`.
pub fn theory_s(n: usize, dim: usize, k: usize) -> usize {
    let e = 1.05 * dim as f64 / (dim as f64 + 2.0);
    ((n as f64).powf(e).round() as usize).clamp(k, n - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WeightPolicy {
    /// All `C(n, s)` sub-samples, through the closed-form weights.
    #[default]
    Complete,
    /// `draws` random sub-samples; `ceil((n/s)^{5/4})` when absent.
    Incomplete { draws: Option<usize> },
}

fn default_moment() -> String {
    "regression".into()
}
fn default_one() -> usize {
    1
}
fn default_gamma() -> f64 {
    0.98
}
fn default_inflation() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    #[serde(default = "default_moment")]
    pub moment: String,
    pub k_list: Vec<usize>,
    /// Policies compared on the same replicas; the first is the headline one.
    pub s_policies: Vec<SPolicy>,
    pub replicas: usize,
    #[serde(default = "default_one")]
    pub test_points: usize,
    /// Place the first test point on the embedding with this `x[0]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor_first: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub weights: WeightPolicy,
    /// Seeds the replica streams; the generator's own seed fixes the design.
    pub seed: u64,
    /// Sample sizes for the rate experiment.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_list: Vec<usize>,
    /// Intrinsic dimensions compared by the rate experiment.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub d_list: Vec<usize>,
    /// Multiplies every plug-in variance (1 = none).
    #[serde(default = "default_inflation")]
    pub variance_inflation: f64,
    /// Neighbors for the local variance; `ceil(sqrt(n))` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_neighbors: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.generator.validate().map_err(|e| Error::Config(e.to_string()))?;
        if !matches!(self.moment.parse::<MomentName>(), Ok(MomentName::Regression)) {
            return bad(format!("experiments support the regression moment only, got '{}'", self.moment));
        }
        if self.replicas == 0 {
            return bad("replicas must be at least 1".into());
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return bad("k_list must hold positive neighbor counts".into());
        }
        if self.s_policies.is_empty() {
            return bad("s_policies must not be empty".into());
        }
        if self.test_points == 0 {
            return bad("test_points must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma={} outside (0, 1)", self.gamma));
        }
        if !(self.variance_inflation >= 0.0 && self.variance_inflation.is_finite()) {
            return bad("variance_inflation must be finite and non-negative".into());
        }
        for p in &self.s_policies {
            match *p {
                SPolicy::Adaptive { zeta } if !(zeta >= 0.0) => {
                    return bad(format!("zeta={zeta} must be non-negative"))
                }
                SPolicy::Fixed { s } => {
                    let kmax = *self.k_list.iter().max().expect("non-empty");
                    let nmin = self.n_list.iter().copied().chain([self.generator.n]).min().expect("non-empty");
                    if s < kmax || s >= nmin {
                        return bad(format!("fixed s={s} must satisfy k <= s < n"));
                    }
                }
                _ => {}
            }
        }
        let kmax = *self.k_list.iter().max().expect("non-empty");
        if self.generator.n <= kmax + 1 || self.n_list.iter().any(|&n| n <= kmax + 1) {
            return bad("every sample size must exceed k + 1".into());
        }
        Ok(())
    }
}

/// One interval from one replica.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub replica: usize,
    pub policy: usize,
    pub k: usize,
    pub point: usize,
    pub s: usize,
    pub s1: Option<usize>,
    pub theta_hat: f64,
    pub truth: f64,
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Record {
    pub fn covered(&self) -> bool {
        self.lower <= self.truth && self.truth <= self.upper
    }
}

struct Setup {
    generator: Generator,
    points: Vec<Vec<f64>>,
    truths: Vec<f64>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let generator = Generator::new(cfg.generator.clone())?;
    let mut points = Vec::with_capacity(cfg.test_points);
    if let Some(first) = cfg.anchor_first {
        points.push(generator.anchored_point(first)?);
    }
    let rest = cfg.test_points - points.len();
    points.extend(generator.draw_points(rest, &cfg.generator.rng.child(0x7e57)));
    let truth = generator.truth();
    let truths = points.iter().map(|x| truth.theta(x)).collect();
    Ok(Setup {
        generator,
        points,
        truths,
    })
}

fn replica_stream(seed: u64, n: usize, r: usize) -> RngSpec {
    RngSpec::new(seed).child(n as u64).child(r as u64)
}

struct ReplicaOutput {
    records: Vec<Record>,
    /// Adaptive traces `(point, k, selection)` kept for the first replica.
    selections: Vec<(usize, usize, AdaptiveSelection)>,
    seconds: f64,
}

fn run_replica(
    cfg: &ExperimentConfig,
    st: &Setup,
    n: usize,
    r: usize,
    keep_traces: bool,
) -> Result<ReplicaOutput> {
    let start = Instant::now();
    let stream = replica_stream(cfg.seed, n, r);
    let ds: Dataset<f64> = st.generator.sample(n, &stream);
    let moment = regression_moment::<f64>();
    let diameter = default_diameter(&ds);
    let opts = InferenceOptions {
        gamma: cfg.gamma,
        variance_neighbors: Some(cfg.variance_neighbors.unwrap_or_else(|| default_variance_neighbors(n))),
        density: None,
    };
    let (dd, d) = (cfg.generator.ambient_dim, cfg.generator.intrinsic_dim);
    let mut records = Vec::new();
    let mut selections = Vec::new();
    for (pi, x) in st.points.iter().enumerate() {
        let ranking = rank_by_distance(&ds, x)?;
        for &k in &cfg.k_list {
            let mut base: Option<AdaptiveSelection> = None;
            for (qi, policy) in cfg.s_policies.iter().enumerate() {
                let (s, s1) = match *policy {
                    SPolicy::Adaptive { zeta } => {
                        if base.is_none() {
                            base = Some(select_s_estimation_ranked(&ranking, diameter, k, 1, 1.0 / n as f64, false)?);
                        }
                        let sel = inflate_for_inference(base.clone().expect("set above"), n, zeta)?;
                        let out = (sel.s_zeta, Some(sel.s1));
                        if keep_traces && qi == 0 {
                            selections.push((pi, k, sel));
                        }
                        out
                    }
                    SPolicy::TheoryIntrinsic => (theory_s(n, d, k), None),
                    SPolicy::TheoryAmbient => (theory_s(n, dd, k), None),
                    SPolicy::Fixed { s } => (s, None),
                };
                let weights = match cfg.weights {
                    WeightPolicy::Complete => complete_weights(&ranking, s, k)?,
                    WeightPolicy::Incomplete { draws } => {
                        let b = draws.unwrap_or_else(|| default_draws(n, s, true));
                        let label = ((pi as u64) << 40) | ((k as u64) << 20) | qi as u64;
                        incomplete_weights(&ranking, s, k, b, &stream.child(1).child(label))?
                    }
                };
                let res = infer_with_weights(&ds, &ranking, &weights, &moment, &opts)?;
                let variance = res.sigma_tilde_sq[0] * cfg.variance_inflation;
                let half = if variance > 0.0 {
                    (res.ci_upper[0] - res.theta[0]) * cfg.variance_inflation.sqrt()
                } else {
                    0.0
                };
                records.push(Record {
                    replica: r,
                    policy: qi,
                    k,
                    point: pi,
                    s,
                    s1,
                    theta_hat: res.theta[0],
                    truth: st.truths[pi],
                    variance,
                    lower: res.theta[0] - half,
                    upper: res.theta[0] + half,
                });
            }
        }
    }
    Ok(ReplicaOutput {
        records,
        selections,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_replicas(cfg: &ExperimentConfig, st: &Setup, n: usize) -> Result<Vec<ReplicaOutput>> {
    (0..cfg.replicas)
        .into_par_iter()
        .map(|r| run_replica(cfg, st, n, r, r == 0))
        .collect()
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Plotting-position window used for the QQ deviation summary.
pub const QQ_WINDOW: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, Serialize)]
pub struct DistributionSummary {
    pub k: usize,
    pub replicas: usize,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    /// `sqrt` of the average plug-in variance.
    pub plugin_sd: f64,
    pub mean_s: f64,
    /// Central QQ deviation against `N(truth, plugin_sd^2)`, in units of `plugin_sd`.
    pub qq_max_deviation: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistributionReport {
    pub point: Vec<f64>,
    pub truth: f64,
    pub records: Vec<Record>,
    pub summaries: Vec<DistributionSummary>,
    /// `(k, [(empirical, theoretical)])`
    pub qq: Vec<(usize, Vec<(f64, f64)>)>,
    pub selections: Vec<(usize, usize, AdaptiveSelection)>,
    pub replica_seconds: Vec<f64>,
}

/// Replicate estimates at one test point for each `k`, under the first policy.
pub fn run_distribution_experiment(cfg: &ExperimentConfig) -> Result<DistributionReport> {
    cfg.validate()?;
    let mut one = cfg.clone();
    one.test_points = 1;
    one.s_policies.truncate(1);
    let st = setup(&one)?;
    info!("distribution experiment: {} replicas, n={}", one.replicas, one.generator.n);
    let outs = run_replicas(&one, &st, one.generator.n)?;
    let replica_seconds = outs.iter().map(|o| o.seconds).collect();
    let selections = outs.first().map(|o| o.selections.clone()).unwrap_or_default();
    let records: Vec<Record> = outs.into_iter().flat_map(|o| o.records).collect();
    let mut summaries = Vec::new();
    let mut qq = Vec::new();
    for &k in &one.k_list {
        let rows: Vec<&Record> = records.iter().filter(|r| r.k == k).collect();
        let est: Vec<f64> = rows.iter().map(|r| r.theta_hat).collect();
        let (mean, sd) = mean_sd(&est);
        let plugin_sd = (rows.iter().map(|r| r.variance).sum::<f64>() / rows.len() as f64).sqrt();
        let (qq_dev, pairs) = if est.len() >= 10 {
            let pairs = qq_data(&est, st.truths[0], plugin_sd)?;
            let dev = qq_max_deviation(&pairs, QQ_WINDOW.0, QQ_WINDOW.1);
            (if plugin_sd > 0.0 { dev / plugin_sd } else { dev }, pairs)
        } else {
            (f64::NAN, Vec::new())
        };
        summaries.push(DistributionSummary {
            k,
            replicas: rows.len(),
            truth: st.truths[0],
            mean,
            sd,
            plugin_sd,
            mean_s: rows.iter().map(|r| r.s as f64).sum::<f64>() / rows.len() as f64,
            qq_max_deviation: qq_dev,
            coverage: rows.iter().filter(|r| r.covered()).count() as f64 / rows.len() as f64,
        });
        qq.push((k, pairs));
    }
    Ok(DistributionReport {
        point: st.points[0].clone(),
        truth: st.truths[0],
        records,
        summaries,
        qq,
        selections,
        replica_seconds,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageCell {
    pub policy: usize,
    pub k: usize,
    pub point: usize,
    pub truth: f64,
    pub coverage: f64,
    pub mean_width: f64,
    pub mean_estimate: f64,
    pub sd_estimate: f64,
    pub mean_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageAggregate {
    pub policy: usize,
    pub label: String,
    pub k: usize,
    pub coverage: f64,
    pub mean_width: f64,
    pub mean_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub points: Vec<Vec<f64>>,
    pub truths: Vec<f64>,
    pub cells: Vec<CoverageCell>,
    pub aggregates: Vec<CoverageAggregate>,
    pub records: Vec<Record>,
    pub selections: Vec<(usize, usize, AdaptiveSelection)>,
    pub replica_seconds: Vec<f64>,
}

impl CoverageReport {
    pub fn aggregate(&self, policy: usize, k: usize) -> Option<&CoverageAggregate> {
        self.aggregates.iter().find(|a| a.policy == policy && a.k == k)
    }
}

/// Interval coverage of the ground truth over replicas and test points, for
/// every `(policy, k)`.
pub fn run_coverage_experiment(cfg: &ExperimentConfig) -> Result<CoverageReport> {
    cfg.validate()?;
    let st = setup(cfg)?;
    info!(
        "coverage experiment: {} replicas x {} points, n={}",
        cfg.replicas, cfg.test_points, cfg.generator.n
    );
    let outs = run_replicas(cfg, &st, cfg.generator.n)?;
    let replica_seconds = outs.iter().map(|o| o.seconds).collect();
    let selections = outs.first().map(|o| o.selections.clone()).unwrap_or_default();
    let records: Vec<Record> = outs.into_iter().flat_map(|o| o.records).collect();
    let mut cells = Vec::new();
    let mut aggregates = Vec::new();
    for qi in 0..cfg.s_policies.len() {
        for &k in &cfg.k_list {
            let group: Vec<&Record> = records.iter().filter(|r| r.policy == qi && r.k == k).collect();
            for pi in 0..st.points.len() {
                let rows: Vec<&&Record> = group.iter().filter(|r| r.point == pi).collect();
                let est: Vec<f64> = rows.iter().map(|r| r.theta_hat).collect();
                let (mean_estimate, sd_estimate) = mean_sd(&est);
                let m = rows.len() as f64;
                cells.push(CoverageCell {
                    policy: qi,
                    k,
                    point: pi,
                    truth: st.truths[pi],
                    coverage: rows.iter().filter(|r| r.covered()).count() as f64 / m,
                    mean_width: rows.iter().map(|r| r.upper - r.lower).sum::<f64>() / m,
                    mean_estimate,
                    sd_estimate,
                    mean_s: rows.iter().map(|r| r.s as f64).sum::<f64>() / m,
                });
            }
            let m = group.len() as f64;
            aggregates.push(CoverageAggregate {
                policy: qi,
                label: cfg.s_policies[qi].label(),
                k,
                coverage: group.iter().filter(|r| r.covered()).count() as f64 / m,
                mean_width: group.iter().map(|r| r.upper - r.lower).sum::<f64>() / m,
                mean_s: group.iter().map(|r| r.s as f64).sum::<f64>() / m,
            });
        }
    }
    Ok(CoverageReport {
        points: st.points,
        truths: st.truths,
        cells,
        aggregates,
        records,
        selections,
        replica_seconds,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub d: usize,
    pub n: usize,
    pub mean_s: f64,
    pub rmse: f64,
    pub bias: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub d: usize,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub fits: Vec<RateFit>,
}

impl RateReport {
    pub fn slope(&self, d: usize) -> Option<f64> {
        self.fits.iter().find(|f| f.d == d).map(|f| f.slope)
    }
}

fn loglog_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// RMSE at the first test point against `n`, for each intrinsic dimension in
/// `d_list` (default: the generator's), using the first `k` and policy.
/// Replica streams are shared across dimensions.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<RateReport> {
    cfg.validate()?;
    if cfg.n_list.len() < 3 {
        return Err(Error::Config("rate experiment needs at least 3 sample sizes".into()));
    }
    let lo = *cfg.n_list.iter().min().expect("non-empty");
    let hi = *cfg.n_list.iter().max().expect("non-empty");
    if hi < 10 * lo {
        return Err(Error::Config("sample sizes must span at least one decade".into()));
    }
    let dims = if cfg.d_list.is_empty() {
        vec![cfg.generator.intrinsic_dim]
    } else {
        cfg.d_list.clone()
    };
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &d in &dims {
        let mut one = cfg.clone();
        one.generator.intrinsic_dim = d;
        one.test_points = 1;
        one.k_list.truncate(1);
        one.s_policies.truncate(1);
        one.validate()?;
        let st = setup(&one)?;
        let mut ns = Vec::new();
        let mut rmses = Vec::new();
        for &n in &cfg.n_list {
            info!("rate experiment: d={d}, n={n}");
            let outs = run_replicas(&one, &st, n)?;
            let recs: Vec<Record> = outs.into_iter().flat_map(|o| o.records).collect();
            let err: Vec<f64> = recs.iter().map(|r| r.theta_hat - r.truth).collect();
            let m = err.len() as f64;
            let rmse = (err.iter().map(|e| e * e).sum::<f64>() / m).sqrt();
            let (bias, sd) = mean_sd(&err);
            rows.push(RateRow {
                d,
                n,
                mean_s: recs.iter().map(|r| r.s as f64).sum::<f64>() / m,
                rmse,
                bias,
                sd,
            });
            ns.push(n as f64);
            rmses.push(rmse);
        }
        let (slope, intercept) = if rmses.iter().all(|&r| r > 0.0) {
            loglog_fit(&ns, &rmses)
        } else {
            (0.0, f64::NEG_INFINITY)
        };
        fits.push(RateFit { d, slope, intercept });
    }
    Ok(RateReport { rows, fits })
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| Error::Io { path, source })
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn opt(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn records_csv(records: &[Record]) -> String {
    let mut out = String::from("replica,policy,k,point,s,s1,theta_hat,truth,variance,lower,upper,covered\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.replica,
            r.policy,
            r.k,
            r.point,
            r.s,
            opt(r.s1),
            r.theta_hat,
            r.truth,
            r.variance,
            r.lower,
            r.upper,
            u8::from(r.covered())
        );
    }
    out
}

fn trace_csv(selections: &[(usize, usize, AdaptiveSelection)]) -> String {
    let mut out = String::from("point,k,s,h,g,two_g\n");
    for (pi, k, sel) in selections {
        for t in &sel.trace {
            let _ = writeln!(out, "{pi},{k},{},{},{},{}", t.s, t.h, t.g, 2.0 * t.g);
        }
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a, D: Serialize> {
    experiment: &'a str,
    version: &'a str,
    config: &'a ExperimentConfig,
    derived: D,
}

fn write_manifest<D: Serialize>(dir: &Path, kind: &str, cfg: &ExperimentConfig, derived: D) -> Result<()> {
    let m = Manifest {
        experiment: kind,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        derived,
    };
    write_file(dir, "manifest.json", &(serde_json::to_string_pretty(&m)? + "\n"))
}

fn write_timing(dir: &Path, seconds: &[f64]) -> Result<()> {
    write_file(dir, "timing.json", &(serde_json::to_string_pretty(seconds)? + "\n"))
}

/// Writes `estimates.csv`, `qq_k<k>.csv`, `summary.csv`, `s_trace.csv`,
/// `manifest.json` and `timing.json`.
pub fn write_distribution(dir: &Path, cfg: &ExperimentConfig, rep: &DistributionReport) -> Result<()> {
    prepare_dir(dir)?;
    write_file(dir, "estimates.csv", &records_csv(&rep.records))?;
    for (k, pairs) in &rep.qq {
        let mut out = String::from("position,theoretical,empirical\n");
        let nn = pairs.len() as f64;
        for (i, (e, q)) in pairs.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", (i as f64 + 0.5) / nn, q, e);
        }
        write_file(dir, &format!("qq_k{k}.csv"), &out)?;
    }
    let mut out = String::from("k,replicas,truth,mean,sd,plugin_sd,mean_s,qq_max_deviation,coverage\n");
    for s in &rep.summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.k, s.replicas, s.truth, s.mean, s.sd, s.plugin_sd, s.mean_s, s.qq_max_deviation, s.coverage
        );
    }
    write_file(dir, "summary.csv", &out)?;
    write_file(dir, "s_trace.csv", &trace_csv(&rep.selections))?;
    #[derive(Serialize)]
    struct Derived<'a> {
        test_point: &'a [f64],
        truth: f64,
    }
    write_manifest(
        dir,
        "distribution",
        cfg,
        Derived {
            test_point: &rep.point,
            truth: rep.truth,
        },
    )?;
    write_timing(dir, &rep.replica_seconds)
}

/// Writes `intervals.csv`, `coverage_by_point.csv`, `coverage.csv`,
/// `s_trace.csv`, `manifest.json` and `timing.json`.
pub fn write_coverage(dir: &Path, cfg: &ExperimentConfig, rep: &CoverageReport) -> Result<()> {
    prepare_dir(dir)?;
    write_file(dir, "intervals.csv", &records_csv(&rep.records))?;
    let mut out = String::from("policy,k,point,truth,coverage,mean_width,mean_estimate,sd_estimate,mean_s\n");
    for c in &rep.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.policy, c.k, c.point, c.truth, c.coverage, c.mean_width, c.mean_estimate, c.sd_estimate, c.mean_s
        );
    }
    write_file(dir, "coverage_by_point.csv", &out)?;
    let mut out = String::from("policy,label,k,coverage,mean_width,mean_s\n");
    for a in &rep.aggregates {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            a.policy, a.label, a.k, a.coverage, a.mean_width, a.mean_s
        );
    }
    write_file(dir, "coverage.csv", &out)?;
    write_file(dir, "s_trace.csv", &trace_csv(&rep.selections))?;
    #[derive(Serialize)]
    struct Derived<'a> {
        test_points: &'a [Vec<f64>],
        truths: &'a [f64],
    }
    write_manifest(
        dir,
        "coverage",
        cfg,
        Derived {
            test_points: &rep.points,
            truths: &rep.truths,
        },
    )?;
    write_timing(dir, &rep.replica_seconds)
}

/// Writes `rate.csv`, `rate_fit.csv` and `manifest.json`.
pub fn write_rate(dir: &Path, cfg: &ExperimentConfig, rep: &RateReport) -> Result<()> {
    prepare_dir(dir)?;
    let mut out = String::from("d,n,mean_s,rmse,bias,sd\n");
    for r in &rep.rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.d, r.n, r.mean_s, r.rmse, r.bias, r.sd);
    }
    write_file(dir, "rate.csv", &out)?;
    let mut out = String::from("d,slope,intercept\n");
    for f in &rep.fits {
        let _ = writeln!(out, "{},{},{}", f.d, f.slope, f.intercept);
    }
    write_file(dir, "rate_fit.csv", &out)?;
    write_manifest(dir, "rate", cfg, ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::MeanFunction;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            generator: GeneratorSpec::linear(400, 5, 2, 3),
            moment: "regression".into(),
            k_list: vec![1, 2],
            s_policies: vec![SPolicy::Adaptive { zeta: 0.1 }, SPolicy::TheoryAmbient],
            replicas: 12,
            test_points: 2,
            anchor_first: None,
            gamma: 0.98,
            weights: WeightPolicy::Complete,
            seed: 5,
            n_list: vec![],
            d_list: vec![],
            variance_inflation: 1.0,
            variance_neighbors: None,
        }
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let cfg = small();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.replicas = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        bad = cfg.clone();
        bad.moment = "quantile:0.5".into();
        assert!(bad.validate().is_err());
        bad = cfg;
        bad.s_policies = vec![SPolicy::Fixed { s: 400 }];
        assert!(bad.validate().is_err());
        assert!(ExperimentConfig::from_json("{\"replicas\": 1}").is_err());
    }

    #[test]
    fn policy_json_names() {
        let p: Vec<SPolicy> = serde_json::from_str(
            r#"[{"kind":"adaptive","zeta":0.1},{"kind":"theory-d"},{"kind":"theory_ambient"},{"kind":"fixed","s":9}]"#,
        )
        .unwrap();
        assert_eq!(p[1], SPolicy::TheoryIntrinsic);
        assert_eq!(p[3], SPolicy::Fixed { s: 9 });
    }

    #[test]
    fn noise_free_constant_replicas_agree() {
        let mut cfg = small();
        cfg.generator.mean = MeanFunction::Constant;
        cfg.generator.constant = 0.3;
        cfg.generator.noise_sd = 0.0;
        let rep = run_distribution_experiment(&cfg).unwrap();
        for s in &rep.summaries {
            assert!((s.mean - 0.3).abs() < 1e-12 && s.sd < 1e-12);
        }
    }

    #[test]
    fn huge_variance_covers_everything() {
        let mut cfg = small();
        cfg.variance_inflation = 1e6;
        let rep = run_coverage_experiment(&cfg).unwrap();
        assert!(rep.aggregates.iter().all(|a| a.coverage == 1.0));
    }

    #[test]
    fn theory_sizes() {
        assert_eq!(theory_s(20_000, 2, 1), (20_000f64.powf(0.525)).round() as usize);
        assert_eq!(theory_s(100, 50, 1), 99);
    }
}
