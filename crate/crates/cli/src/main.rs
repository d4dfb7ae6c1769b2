use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use npmoment::adaptive::{
    default_diameter, default_dimension_grid, estimate_intrinsic_dimension_ranked,
    select_s_estimation_ranked, select_s_inference_ranked, AdaptiveSelection,
};
use npmoment::harness::{
    run_coverage_experiment, run_distribution_experiment, run_rate_experiment, write_coverage,
    write_distribution, write_rate, ExperimentConfig,
};
use npmoment::inference::{infer_with_weights, InferenceOptions};
use npmoment::knn::{complete_weights, default_draws, incomplete_weights, rank_by_distance, WeightVector};
use npmoment::synth::{Generator, GeneratorKind, GeneratorSpec, MeanFunction};
use npmoment::{
    csv_header, expand_columns, load_csv, load_json, solve, write_csv, zeta, zeta_exact, Dataset,
    DistanceRanking, Error, MomentFunction, MomentName, Result, RngSpec, Schema,
};

#[derive(Parser)]
#[command(name = "npmoment", version, about = "Sub-sampled k-NN estimation and inference for conditional moment models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and a sidecar JSON with its design.
    Synth(SynthArgs),
    /// Print the ensemble weight of every observation for a target point.
    Weights(WeightsArgs),
    /// Solve the weighted moment equation at a target point.
    Estimate(EstimateArgs),
    /// Point estimate with a plug-in normal confidence interval.
    Ci(CiArgs),
    /// Adaptive sub-sample size selection and intrinsic-dimension estimate.
    Adapt(AdaptArgs),
    /// The variance constant zeta_k.
    Zeta { k: usize },
    /// Run a Monte Carlo experiment from a JSON config.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Distribution,
    Coverage,
    Rate,
}

#[derive(Args)]
struct DataArgs {
    /// CSV (with header) or JSON dataset.
    #[arg(long)]
    data: PathBuf,
    /// Covariate columns, e.g. `c0..c19`; default: all unassigned columns.
    #[arg(long)]
    covariates: Option<String>,
    #[arg(long, default_value = "y")]
    outcome: String,
    #[arg(long)]
    treatment: Option<String>,
    #[arg(long)]
    instrument: Option<String>,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset<f64>> {
        let is_json = self.data.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            return load_json(&self.data);
        }
        let outcome = expand_columns(&self.outcome)?;
        let treatment = match &self.treatment {
            Some(t) => expand_columns(t)?,
            None => Vec::new(),
        };
        let covariates = match &self.covariates {
            Some(c) => expand_columns(c)?,
            None => csv_header(&self.data)?
                .into_iter()
                .filter(|h| {
                    !outcome.contains(h) && !treatment.contains(h) && self.instrument.as_ref() != Some(h)
                })
                .collect(),
        };
        let schema = Schema {
            covariates,
            outcome,
            treatment,
            instrument: self.instrument.clone(),
        };
        load_csv(&self.data, &schema)
    }
}

fn parse_vec(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{v}' in vector")))
        })
        .collect()
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "linear-embedding")]
    kind: KindArg,
    #[arg(long)]
    n: usize,
    #[arg(long = "D")]
    ambient: usize,
    #[arg(long = "d")]
    intrinsic: usize,
    #[arg(long, value_enum, default_value = "logistic3")]
    mean: MeanArg,
    #[arg(long, default_value_t = 0.0)]
    constant: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Test points stored in the sidecar.
    #[arg(long, default_value_t = 1)]
    test_points: usize,
    /// Anchor the first test point at this first coordinate (linear embedding).
    #[arg(long)]
    anchor_first: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    LinearEmbedding,
    Sparse,
    Mixture,
    Product,
    ManifoldCircle,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeanArg {
    Logistic3,
    Linear,
    Constant,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Complete,
    Incomplete,
}

#[derive(Args)]
struct TargetArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Target point, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    x: String,
    #[arg(long, default_value_t = 1)]
    k: usize,
}

#[derive(Args)]
struct WeightsArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long)]
    s: usize,
    #[arg(long, value_enum, default_value = "complete")]
    mode: ModeArg,
    /// Sub-sample draws in incomplete mode; default ceil(n/s).
    #[arg(long = "B")]
    draws: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also print zero weights.
    #[arg(long)]
    all: bool,
}

#[derive(Args)]
struct SizeArgs {
    #[arg(long, conflicts_with = "adaptive")]
    s: Option<usize>,
    #[arg(long)]
    adaptive: bool,
    #[arg(long = "Delta")]
    diameter: Option<f64>,
    #[arg(long)]
    exact_scan: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, default_value = "regression")]
    moment: String,
    #[command(flatten)]
    size: SizeArgs,
    /// Confidence parameter for the adaptive estimation rule.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
}

#[derive(Args)]
struct CiArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, default_value = "regression")]
    moment: String,
    #[command(flatten)]
    size: SizeArgs,
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    zeta: f64,
    /// Conditional density at the quantile (quantile moments only).
    #[arg(long)]
    density: Option<f64>,
    /// Neighbors for the local variance; default ceil(sqrt(n)).
    #[arg(long)]
    variance_neighbors: Option<usize>,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, conflicts_with = "zeta")]
    delta: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long = "Delta")]
    diameter: Option<f64>,
    /// Parameter dimension p used in the envelope.
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long)]
    exact_scan: bool,
    /// Write the (s, H, G) trace here as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

struct Target {
    ds: Dataset<f64>,
    ranking: DistanceRanking<f64>,
    k: usize,
}

fn prepare(t: &TargetArgs) -> Result<Target> {
    let ds = t.data.load()?;
    let x = parse_vec(&t.x)?;
    let ranking = rank_by_distance(&ds, &x)?;
    Ok(Target { ds, ranking, k: t.k })
}

fn choose_s(
    tg: &Target,
    size: &SizeArgs,
    p: usize,
    inference: Option<f64>,
    delta: f64,
) -> Result<(usize, Option<AdaptiveSelection>)> {
    if let Some(s) = size.s {
        return Ok((s, None));
    }
    if !size.adaptive {
        return Err(Error::Config("give either --s or --adaptive".into()));
    }
    let diameter = size.diameter.unwrap_or_else(|| default_diameter(&tg.ds));
    let sel = match inference {
        Some(z) => select_s_inference_ranked(&tg.ranking, diameter, tg.k, p, z, size.exact_scan)?,
        None => select_s_estimation_ranked(&tg.ranking, diameter, tg.k, p, delta, size.exact_scan)?,
    };
    Ok((if inference.is_some() { sel.s_zeta } else { sel.s_star }, Some(sel)))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let kind = match a.kind {
        KindArg::LinearEmbedding => GeneratorKind::LinearEmbedding,
        KindArg::Sparse => GeneratorKind::Sparse,
        KindArg::Mixture => GeneratorKind::Mixture,
        KindArg::Product => GeneratorKind::Product,
        KindArg::ManifoldCircle => GeneratorKind::ManifoldCircle,
    };
    let mut spec = GeneratorSpec::linear(a.n, a.ambient, a.intrinsic, a.seed).with_kind(kind);
    spec.mean = match a.mean {
        MeanArg::Logistic3 => MeanFunction::Logistic3,
        MeanArg::Linear => MeanFunction::Linear,
        MeanArg::Constant => MeanFunction::Constant,
    };
    spec.constant = a.constant;
    spec.noise_sd = a.noise_sd;
    let g = Generator::new(spec.clone())?;
    let ds = g.sample(a.n, &spec.rng.child(0xda7a));
    write_csv(&ds, &a.out, None)?;
    let mut points = Vec::new();
    if let Some(first) = a.anchor_first {
        points.push(g.anchored_point(first)?);
    }
    let rest = a.test_points.saturating_sub(points.len());
    points.extend(g.draw_points(rest, &spec.rng.child(0x7e57)));
    let truth = g.truth();
    let truths: Vec<f64> = points.iter().map(|x| truth.theta(x)).collect();
    let sidecar = a.out.with_extension("json");
    let body = json!({
        "spec": spec,
        "design": g.design,
        "test_points": points,
        "truths": truths,
    });
    std::fs::write(&sidecar, serde_json::to_string_pretty(&body)? + "\n").map_err(|source| Error::Io {
        path: sidecar.clone(),
        source,
    })?;
    eprintln!("wrote {} and {}", a.out.display(), sidecar.display());
    Ok(())
}

fn cmd_weights(a: &WeightsArgs) -> Result<()> {
    let tg = prepare(&a.target)?;
    let w: WeightVector<f64> = match a.mode {
        ModeArg::Complete => complete_weights(&tg.ranking, a.s, tg.k)?,
        ModeArg::Incomplete => {
            let b = a.draws.unwrap_or_else(|| default_draws(tg.ds.len(), a.s, false));
            incomplete_weights(&tg.ranking, a.s, tg.k, b, &RngSpec::new(a.seed))?
        }
    };
    let mut out = String::from("id,weight\n");
    for (i, &v) in w.alpha.iter().enumerate() {
        if a.all || v > 0.0 {
            out.push_str(&format!("{i},{v}\n"));
        }
    }
    print!("{out}");
    Ok(())
}

fn weights_for(tg: &Target, s: usize) -> Result<WeightVector<f64>> {
    complete_weights(&tg.ranking, s, tg.k)
}

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let tg = prepare(&a.target)?;
    let moment = a.moment.parse::<MomentName>()?.build(&tg.ds)?;
    let (s, sel) = choose_s(&tg, &a.size, moment.dim(), None, a.delta)?;
    let w = weights_for(&tg, s)?;
    let r = solve(&w, &tg.ds, &moment, None)?;
    print_json(&json!({
        "theta": r.theta,
        "residual": r.residual_norm,
        "iterations": r.iterations,
        "method": r.method,
        "s_used": s,
        "k": tg.k,
        "selection": sel.map(|s| json!({"s1": s.s1, "s2": s.s2, "s_star": s.s_star, "warnings": s.warnings})),
    }));
    Ok(())
}

fn cmd_ci(a: &CiArgs) -> Result<()> {
    let tg = prepare(&a.target)?;
    let moment = a.moment.parse::<MomentName>()?.build(&tg.ds)?;
    let (s, sel) = choose_s(&tg, &a.size, moment.dim(), Some(a.zeta), 0.0)?;
    let w = weights_for(&tg, s)?;
    let opts = InferenceOptions {
        gamma: a.gamma,
        variance_neighbors: a.variance_neighbors,
        density: a.density,
    };
    let r = infer_with_weights(&tg.ds, &tg.ranking, &w, &moment, &opts)?;
    let ci: Vec<[f64; 2]> = r.ci_lower.iter().zip(&r.ci_upper).map(|(l, u)| [*l, *u]).collect();
    print_json(&json!({
        "theta": r.theta,
        "variance": r.sigma_tilde_sq,
        "ci": ci,
        "gamma": r.gamma,
        "sigma_sq": r.sigma_j_sq,
        "s_used": s,
        "k": tg.k,
        "selection": sel.map(|s| json!({"s1": s.s1, "s_star": s.s_star, "s_zeta": s.s_zeta, "warnings": s.warnings})),
    }));
    Ok(())
}

fn cmd_adapt(a: &AdaptArgs) -> Result<()> {
    let tg = prepare(&a.target)?;
    let n = tg.ds.len();
    let diameter = a.diameter.unwrap_or_else(|| default_diameter(&tg.ds));
    let sel = match a.zeta {
        Some(z) => select_s_inference_ranked(&tg.ranking, diameter, tg.k, a.p, z, a.exact_scan)?,
        None => select_s_estimation_ranked(&tg.ranking, diameter, tg.k, a.p, a.delta.unwrap_or(0.1), a.exact_scan)?,
    };
    let d_hat = estimate_intrinsic_dimension_ranked(&tg.ranking, tg.k, &default_dimension_grid(n, tg.k))
        .map(|d| d.d_hat)
        .ok();
    if let Some(path) = &a.trace {
        let mut out = String::from("s,h,g,two_g\n");
        for t in &sel.trace {
            out.push_str(&format!("{},{},{},{}\n", t.s, t.h, t.g, 2.0 * t.g));
        }
        std::fs::write(path, out).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
    }
    print_json(&json!({
        "s1": sel.s1,
        "s2": sel.s2,
        "s_star": sel.s_star,
        "s_zeta": sel.s_zeta,
        "zeta": sel.zeta,
        "delta": sel.g.delta,
        "Delta": sel.g.diameter,
        "c_npd": sel.g.c_npd,
        "fallback": sel.fallback,
        "zeta_bound_s_star": sel.zeta_bound_s_star,
        "zeta_bound_s1": sel.zeta_bound_s1,
        "d_hat": d_hat,
        "warnings": sel.warnings,
        "trace_points": sel.trace.len(),
    }));
    Ok(())
}

fn cmd_zeta(k: usize) -> Result<()> {
    let exact = zeta_exact(k)?;
    print_json(&json!({"k": k, "exact": exact.to_string(), "value": zeta::<f64>(k)?}));
    Ok(())
}

fn cmd_experiment(kind: ExperimentKind, config: &Path, out_dir: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    match kind {
        ExperimentKind::Distribution => {
            let rep = run_distribution_experiment(&cfg)?;
            write_distribution(out_dir, &cfg, &rep)?;
            print_json(&serde_json::to_value(&rep.summaries)?);
        }
        ExperimentKind::Coverage => {
            let rep = run_coverage_experiment(&cfg)?;
            write_coverage(out_dir, &cfg, &rep)?;
            print_json(&serde_json::to_value(&rep.aggregates)?);
        }
        ExperimentKind::Rate => {
            let rep = run_rate_experiment(&cfg)?;
            write_rate(out_dir, &cfg, &rep)?;
            print_json(&serde_json::to_value(&rep.fits)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Weights(a) => cmd_weights(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Ci(a) => cmd_ci(a),
        Command::Adapt(a) => cmd_adapt(a),
        Command::Zeta { k } => cmd_zeta(*k),
        Command::Experiment { kind, config, out_dir } => cmd_experiment(*kind, config, out_dir),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
