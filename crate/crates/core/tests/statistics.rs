//! Seeded Monte Carlo checks of the estimators against generator ground truth.

use rand::Rng;
use rand_distr::StandardNormal;

use npmoment::adaptive::default_dimension_grid;
use npmoment::inference::{normal_cdf, qq_max_deviation};
use npmoment::knn::WeightMode;
use npmoment::synth::Design;
use npmoment::{
    complete_weights, doubling_diagnostic, estimate_intrinsic_dimension, estimate_sigma_j,
    generate_het_effect, het_effect_moment, incomplete_weights, infer, qq_data, rank_by_distance,
    regression_moment, solve, solve_weighted, weighted_loss_gradient_check, Dataset, Generator,
    GeneratorKind, GeneratorSpec, InferenceOptions, MeanFunction, Observation, RngSpec,
    SolveOptions,
};

fn sample(spec: &GeneratorSpec) -> (Generator, Dataset<f64>) {
    let g = Generator::new(spec.clone()).unwrap();
    let ds = g.sample(spec.n, &spec.rng.child(0xda7a));
    (g, ds)
}

#[test]
fn local_variance_of_pure_noise() {
    let mut rng = RngSpec::new(5).rng();
    let n = 10_000;
    let obs: Vec<Observation<f64>> = (0..n)
        .map(|_| Observation::new(vec![rng.gen::<f64>()], vec![rng.sample(StandardNormal)]))
        .collect();
    let ds = Dataset::from_observations(obs).unwrap();
    let reg = regression_moment::<f64>();
    let s = estimate_sigma_j(&ds, &[0.5], &reg, &[0.0], &[-1.0], n).unwrap();
    assert!((s[0] - 1.0).abs() < 0.05, "{}", s[0]);
}

#[test]
fn local_variance_near_generator_points() {
    // average over seeds: one estimate from 142 neighbors has sd near 0.12
    let reg = regression_moment::<f64>();
    let mut total = 0.0;
    let seeds = 8;
    for seed in 0..seeds {
        let spec = GeneratorSpec::linear(20_000, 20, 2, 100 + seed);
        let (g, ds) = sample(&spec);
        let x = g.anchored_point(0.2451).unwrap();
        let theta = g.truth().theta(&x);
        let m = (20_000f64).sqrt().ceil() as usize;
        total += estimate_sigma_j(&ds, &x, &reg, &[theta], &[-1.0], m).unwrap()[0];
    }
    let mean = total / seeds as f64;
    assert!((mean - 1.0).abs() < 0.1, "{mean}");
}

fn d_hat(spec: &GeneratorSpec, x: &[f64]) -> f64 {
    let (_, ds) = sample(spec);
    estimate_intrinsic_dimension(&ds, x, 1, &default_dimension_grid(spec.n, 1))
        .unwrap()
        .d_hat
}

#[test]
fn dimension_of_embedded_plane() {
    let spec = GeneratorSpec::linear(20_000, 20, 2, 7);
    let d = d_hat(&spec, &[0.0; 20]);
    assert!((1.6..=2.4).contains(&d), "{d}");
}

#[test]
fn dimension_of_segment() {
    let spec = GeneratorSpec::linear(20_000, 5, 1, 8);
    let d = d_hat(&spec, &[0.0; 5]);
    assert!((0.8..=1.2).contains(&d), "{d}");
}

#[test]
fn dimension_of_sparse_data() {
    let spec = GeneratorSpec::linear(20_000, 50, 3, 9).with_kind(GeneratorKind::Sparse);
    let g = Generator::new(spec.clone()).unwrap();
    // a point inside one support pattern, away from the cube faces
    let Design::Sparse { supports } = &g.design else { panic!("sparse design") };
    let mut x = vec![0.0; 50];
    for (c, v) in supports[0].iter().zip([0.3, -0.2, 0.1]) {
        x[*c] = v;
    }
    let d = d_hat(&spec, &x);
    assert!((2.4..=3.6).contains(&d), "{d}");
}

#[test]
fn sparse_points_have_small_support() {
    let spec = GeneratorSpec::linear(2000, 50, 3, 2).with_kind(GeneratorKind::Sparse);
    let (_, ds) = sample(&spec);
    for i in 0..ds.len() {
        assert!(ds.x(i).iter().filter(|v| **v != 0.0).count() <= 3);
    }
}

#[test]
fn embedded_points_lie_in_the_column_span() {
    let spec = GeneratorSpec::linear(500, 20, 2, 3);
    let (g, ds) = sample(&spec);
    let Design::LinearEmbedding { a } = &g.design else { panic!("linear design") };
    // normal equations of the 2-column least-squares fit
    let (mut g00, mut g01, mut g11) = (0.0, 0.0, 0.0);
    for r in a {
        g00 += r[0] * r[0];
        g01 += r[0] * r[1];
        g11 += r[1] * r[1];
    }
    let det = g00 * g11 - g01 * g01;
    for i in 0..ds.len() {
        let x = ds.x(i);
        let b0: f64 = a.iter().zip(x).map(|(r, v)| r[0] * v).sum();
        let b1: f64 = a.iter().zip(x).map(|(r, v)| r[1] * v).sum();
        let u0 = (g11 * b0 - g01 * b1) / det;
        let u1 = (g00 * b1 - g01 * b0) / det;
        let resid: f64 = a
            .iter()
            .zip(x)
            .map(|(r, v)| (v - r[0] * u0 - r[1] * u1).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(resid < 1e-10, "{resid}");
        assert!(u0.abs() <= 1.0 + 1e-9 && u1.abs() <= 1.0 + 1e-9);
    }
}

/// Ball-mass ratio at half radius, with the outer ball holding `count` points.
fn half_radius_ratio(ds: &Dataset<f64>, x: &[f64], count: usize) -> f64 {
    let r = rank_by_distance(ds, x).unwrap();
    let radius = r.distances[count];
    doubling_diagnostic(ds, x, &[radius], &[0.5]).unwrap()[0].ratio
}

#[test]
fn doubling_ratios_follow_dimension() {
    let plane = GeneratorSpec::linear(20_000, 20, 2, 11);
    let (_, ds) = sample(&plane);
    let ratio = half_radius_ratio(&ds, &[0.0; 20], 2000);
    assert!((ratio - 4.0).abs() <= 1.0, "plane: {ratio}");

    let segment = GeneratorSpec::linear(20_000, 5, 1, 12);
    let (_, ds) = sample(&segment);
    let ratio = half_radius_ratio(&ds, &[0.0; 5], 2000);
    assert!((ratio - 2.0).abs() <= 0.5, "segment: {ratio}");

    let product = GeneratorSpec::linear(20_000, 10, 2, 13).with_kind(GeneratorKind::Product);
    let (_, ds) = sample(&product);
    let ratio = half_radius_ratio(&ds, &[0.0; 10], 2000);
    assert!((ratio - 4.0).abs() <= 1.2, "product: {ratio}");

    let rows = doubling_diagnostic(&ds, &[0.0; 10], &[0.5], &[1.0]).unwrap();
    assert_eq!(rows[0].ratio, 1.0);
}

#[test]
fn mixture_and_circle_generators_run() {
    let mix = GeneratorSpec::linear(3000, 10, 2, 14).with_kind(GeneratorKind::Mixture);
    let (_, ds) = sample(&mix);
    assert_eq!(ds.len(), 3000);
    let circle = GeneratorSpec::linear(3000, 6, 1, 15).with_kind(GeneratorKind::ManifoldCircle);
    let (g, ds) = sample(&circle);
    let x = g.draw_points(1, &RngSpec::new(1))[0].clone();
    let d = estimate_intrinsic_dimension(&ds, &x, 1, &default_dimension_grid(3000, 1))
        .unwrap()
        .d_hat;
    assert!((0.7..=1.3).contains(&d), "{d}");
}

#[test]
fn constant_effects_are_recovered_exactly() {
    let mut spec = GeneratorSpec::linear(300, 5, 2, 21);
    spec.noise_sd = 0.0;
    let ds = generate_het_effect(&spec, |_| vec![1.0, -1.0], 2).unwrap();
    let het = het_effect_moment::<f64>(2).unwrap();
    let w = vec![1.0; ds.len()];
    let r = solve_weighted(&w, &ds, &het, None, &SolveOptions::default()).unwrap();
    assert!((r.theta[0] - 1.0).abs() < 1e-8 && (r.theta[1] + 1.0).abs() < 1e-8, "{:?}", r.theta);
}

#[test]
fn varying_effects_are_covered() {
    let het = het_effect_moment::<f64>(2).unwrap();
    let opts = InferenceOptions::default();
    let seeds = 20;
    let mut inside = 0;
    for seed in 0..seeds {
        let spec = GeneratorSpec::linear(20_000, 20, 2, 300 + seed);
        let ds = generate_het_effect(&spec, |x| vec![x[0], 0.0], 2).unwrap();
        let g = Generator::new(spec).unwrap();
        let x = g.anchored_point(0.2).unwrap();
        let r = infer(&ds, &x, &het, 181, 1, &opts).unwrap();
        let truth = [x[0], 0.0];
        let ok = (0..2).all(|j| (r.theta[j] - truth[j]).abs() <= 3.0 * r.sigma_tilde_sq[j].sqrt());
        inside += ok as usize;
    }
    assert!(inside as f64 >= 0.95 * seeds as f64, "{inside}/{seeds}");
}

#[test]
fn moment_is_a_descent_direction() {
    let mut spec = GeneratorSpec::linear(400, 4, 2, 31);
    spec.noise_sd = 0.5;
    let ds = generate_het_effect(&spec, |x| vec![1.0 + x[0], -0.5], 2).unwrap();
    let het = het_effect_moment::<f64>(2).unwrap();
    let ranking = rank_by_distance(&ds, &[0.0; 4]).unwrap();
    let w = complete_weights(&ranking, 100, 1).unwrap();
    let fit = solve(&w, &ds, &het, None).unwrap();
    for theta in [[0.0, 0.0], [3.0, -2.0], [fit.theta[0] + 0.1, fit.theta[1]]] {
        let check = weighted_loss_gradient_check(&w, &ds, &het, &theta).unwrap();
        assert!(check.descent, "{theta:?}: {check:?}");
    }
    let at = weighted_loss_gradient_check(&w, &ds, &het, &fit.theta).unwrap();
    assert!(at.step_norm < 1e-8);
}

#[test]
fn normal_draws_track_normal_quantiles() {
    let mut passes = 0;
    for seed in 0..100 {
        let mut rng = RngSpec::new(seed).rng();
        let draws: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
        let qq = qq_data(&draws, 0.0, 1.0).unwrap();
        // KS distance: empirical quantiles mapped back through the normal cdf
        let nn = qq.len() as f64;
        let ks = qq
            .iter()
            .enumerate()
            .map(|(i, (e, _))| (normal_cdf(*e) - (i as f64 + 0.5) / nn).abs())
            .fold(0.0, f64::max);
        passes += (ks < 0.15) as usize;
        assert!(qq_max_deviation(&qq, 0.25, 0.75) < 0.2);
    }
    assert!(passes >= 99, "{passes}/100");
}

#[test]
fn incomplete_weights_average_to_complete() {
    let spec = GeneratorSpec::linear(8, 2, 2, 41);
    let (_, ds) = sample(&spec);
    let ranking = rank_by_distance(&ds, &[0.0, 0.0]).unwrap();
    let complete = complete_weights(&ranking, 3, 2).unwrap();
    let inc = incomplete_weights(&ranking, 3, 2, 100_000, &RngSpec::new(3)).unwrap();
    assert_eq!(inc.mode, WeightMode::Incomplete { draws: 100_000 });
    for (a, b) in inc.alpha.iter().zip(&complete.alpha) {
        assert!((a - b).abs() < 5e-3);
    }
}

#[test]
fn quantile_truth_shifts_by_normal_quantile() {
    let mut spec = GeneratorSpec::linear(10, 3, 2, 1);
    spec.mean = MeanFunction::Constant;
    spec.constant = 2.0;
    let g = Generator::new(spec).unwrap();
    let t = g.truth();
    assert!((t.quantile(&[0.0; 3], 0.975) - (2.0 + 1.959964)).abs() < 1e-5);
}
