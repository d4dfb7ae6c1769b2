//! Solves the locally weighted moment equation
//! `Psi(x; theta) = sum_i alpha_i psi(Z_i; theta) = 0`.

use std::cmp::Ordering;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::knn::WeightVector;
use crate::linalg::{norm2, Lu};
use crate::moments::{finite_difference_jacobian, MomentFunction, MomentStructure, Smoothness};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    ClosedForm,
    OrderStatistic,
    Newton,
}

#[derive(Debug, Clone)]
pub struct SolveResult<T> {
    pub theta: Vec<T>,
    /// `||Psi(x; theta_hat)||_2` under the normalized weights.
    pub residual_norm: T,
    pub iterations: usize,
    pub method: SolveMethod,
}

#[derive(Debug, Clone)]
pub struct SolveOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Use exact formulas for mean and affine moments. Disabling forces Newton.
    pub closed_form: bool,
    /// Relative step for the finite-difference jacobian fallback.
    pub fd_step: T,
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        SolveOptions {
            tol: T::of(1e-10).max(T::epsilon() * T::of(64.0)),
            max_iter: 100,
            max_halvings: 30,
            closed_form: true,
            fd_step: T::epsilon().cbrt(),
        }
    }
}

/// The positive-weight part of a weight vector, normalized to sum 1.
struct Support<T> {
    ids: Vec<usize>,
    w: Vec<T>,
}

impl<T: Scalar> Support<T> {
    fn new(alpha: &[T], n: usize) -> Result<Self> {
        if alpha.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: alpha.len(),
            });
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < T::zero()) {
            return Err(Error::pre("weights must be finite and non-negative"));
        }
        let (ids, w): (Vec<usize>, Vec<T>) = alpha
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > T::zero())
            .map(|(i, &a)| (i, a))
            .unzip();
        let total: T = w.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(Error::pre("weights sum to zero"));
        }
        let w = w.into_iter().map(|a| a / total).collect();
        Ok(Support { ids, w })
    }
}

fn weighted_psi<T: Scalar, M: MomentFunction<T> + ?Sized>(
    sup: &Support<T>,
    ds: &Dataset<T>,
    moment: &M,
    theta: &[T],
) -> Vec<T> {
    let p = moment.dim();
    let mut acc = vec![T::zero(); p];
    let mut buf = vec![T::zero(); p];
    for (&i, &a) in sup.ids.iter().zip(&sup.w) {
        moment.evaluate(&ds.row(i), theta, &mut buf);
        for (s, &v) in acc.iter_mut().zip(&buf) {
            *s = *s + a * v;
        }
    }
    acc
}

fn weighted_jacobian<T: Scalar, M: MomentFunction<T> + ?Sized>(
    sup: &Support<T>,
    ds: &Dataset<T>,
    moment: &M,
    theta: &[T],
    fd_step: T,
) -> Vec<T> {
    let p = moment.dim();
    let mut acc = vec![T::zero(); p * p];
    let mut buf = vec![T::zero(); p * p];
    for (&i, &a) in sup.ids.iter().zip(&sup.w) {
        let row = ds.row(i);
        if !moment.jacobian(&row, theta, &mut buf) {
            buf = finite_difference_jacobian(moment, &row, theta, fd_step);
        }
        for (s, &v) in acc.iter_mut().zip(&buf) {
            *s = *s + a * v;
        }
    }
    acc
}

/// Weighted Jacobian `sum_i alpha_i d psi(Z_i; theta) / d theta` under
/// normalized weights, row-major.
pub fn weighted_moment_jacobian<T: Scalar, M: MomentFunction<T> + ?Sized>(
    alpha: &[T],
    ds: &Dataset<T>,
    moment: &M,
    theta: &[T],
) -> Result<Vec<T>> {
    let sup = Support::new(alpha, ds.len())?;
    Ok(weighted_jacobian(&sup, ds, moment, theta, SolveOptions::<T>::default().fd_step))
}

/// Weighted score `Psi(x; theta)` under normalized weights.
pub fn weighted_moment<T: Scalar, M: MomentFunction<T> + ?Sized>(
    alpha: &[T],
    ds: &Dataset<T>,
    moment: &M,
    theta: &[T],
) -> Result<Vec<T>> {
    let sup = Support::new(alpha, ds.len())?;
    Ok(weighted_psi(&sup, ds, moment, theta))
}

pub fn solve<T: Scalar, M: MomentFunction<T> + ?Sized>(
    weights: &WeightVector<T>,
    ds: &Dataset<T>,
    moment: &M,
    init: Option<&[T]>,
) -> Result<SolveResult<T>> {
    solve_weighted(&weights.alpha, ds, moment, init, &SolveOptions::default())
}

/// Solves with raw (not necessarily normalized) weights indexed by id.
pub fn solve_weighted<T: Scalar, M: MomentFunction<T> + ?Sized>(
    alpha: &[T],
    ds: &Dataset<T>,
    moment: &M,
    init: Option<&[T]>,
    opts: &SolveOptions<T>,
) -> Result<SolveResult<T>> {
    moment.validate(ds)?;
    let p = moment.dim();
    if let Some(t0) = init {
        if t0.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: t0.len(),
            });
        }
    }
    let sup = Support::new(alpha, ds.len())?;
    match moment.structure() {
        MomentStructure::Quantile(level) => return Ok(weighted_quantile(&sup, ds, level)),
        MomentStructure::Mean if opts.closed_form => {
            let theta = vec![sup
                .ids
                .iter()
                .zip(&sup.w)
                .fold(T::zero(), |acc, (&i, &a)| acc + a * ds.y(i)[0])];
            return Ok(finish(&sup, ds, moment, theta, 0, SolveMethod::ClosedForm));
        }
        MomentStructure::Affine if opts.closed_form => {
            let zero = vec![T::zero(); p];
            let b = weighted_psi(&sup, ds, moment, &zero);
            let jac = weighted_jacobian(&sup, ds, moment, &zero, opts.fd_step);
            let step = Lu::new(&jac, p)?.solve(&b);
            let theta = step.into_iter().map(|v| -v).collect();
            return Ok(finish(&sup, ds, moment, theta, 0, SolveMethod::ClosedForm));
        }
        _ => {}
    }
    if moment.smoothness() == Smoothness::PiecewiseConstant {
        return Err(Error::pre(
            "piecewise-constant moments are solvable only with a quantile structure",
        ));
    }
    let theta0 = match init {
        Some(t) => t.to_vec(),
        None if p == 1 && ds.outcome_dim() == 1 => vec![sup
            .ids
            .iter()
            .zip(&sup.w)
            .fold(T::zero(), |acc, (&i, &a)| acc + a * ds.y(i)[0])],
        None => vec![T::zero(); p],
    };
    newton(&sup, ds, moment, theta0, opts)
}

fn finish<T: Scalar, M: MomentFunction<T> + ?Sized>(
    sup: &Support<T>,
    ds: &Dataset<T>,
    moment: &M,
    theta: Vec<T>,
    iterations: usize,
    method: SolveMethod,
) -> SolveResult<T> {
    let residual_norm = norm2(&weighted_psi(sup, ds, moment, &theta));
    SolveResult {
        theta,
        residual_norm,
        iterations,
        method,
    }
}

/// Smallest `y` whose cumulative weight (ordered by `y`, ties by id) reaches
/// `level`.
fn weighted_quantile<T: Scalar>(sup: &Support<T>, ds: &Dataset<T>, level: T) -> SolveResult<T> {
    let mut pairs: Vec<(T, usize, T)> = sup
        .ids
        .iter()
        .zip(&sup.w)
        .map(|(&i, &a)| (ds.y(i)[0], i, a))
        .collect();
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    let slack = T::epsilon() * T::of_usize(pairs.len().max(1));
    let mut cum = T::zero();
    let mut theta = pairs.last().map(|p| p.0).unwrap_or_else(T::zero);
    for &(y, _, a) in &pairs {
        cum = cum + a;
        if cum + slack >= level {
            theta = y;
            break;
        }
    }
    // Psi(theta) = F(theta) - level, counting ties at theta
    let f: T = pairs
        .iter()
        .filter(|p| p.0 <= theta)
        .map(|p| p.2)
        .sum();
    SolveResult {
        theta: vec![theta],
        residual_norm: (f - level).abs(),
        iterations: 0,
        method: SolveMethod::OrderStatistic,
    }
}

fn newton<T: Scalar, M: MomentFunction<T> + ?Sized>(
    sup: &Support<T>,
    ds: &Dataset<T>,
    moment: &M,
    mut theta: Vec<T>,
    opts: &SolveOptions<T>,
) -> Result<SolveResult<T>> {
    let p = theta.len();
    let mut psi = weighted_psi(sup, ds, moment, &theta);
    let mut norm = norm2(&psi);
    let fail = |iterations: usize, norm: T, theta: &[T]| Error::Convergence {
        iterations,
        residual: norm.f64(),
        last: theta.iter().map(|v| v.f64()).collect(),
    };
    for it in 0..opts.max_iter {
        if norm <= opts.tol {
            return Ok(SolveResult {
                theta,
                residual_norm: norm,
                iterations: it,
                method: SolveMethod::Newton,
            });
        }
        let jac = weighted_jacobian(sup, ds, moment, &theta, opts.fd_step);
        let step = Lu::new(&jac, p)?.solve(&psi);
        let mut lambda = T::one();
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<T> = theta
                .iter()
                .zip(&step)
                .map(|(&t, &d)| t - lambda * d)
                .collect();
            let cpsi = weighted_psi(sup, ds, moment, &cand);
            let cnorm = norm2(&cpsi);
            if cnorm < norm {
                theta = cand;
                psi = cpsi;
                norm = cnorm;
                accepted = true;
                break;
            }
            lambda = lambda * T::of(0.5);
        }
        if !accepted {
            return Err(fail(it + 1, norm, &theta));
        }
    }
    if norm <= opts.tol {
        return Ok(SolveResult {
            theta,
            residual_norm: norm,
            iterations: opts.max_iter,
            method: SolveMethod::Newton,
        });
    }
    Err(fail(opts.max_iter, norm, &theta))
}

/// Outcome of [`weighted_loss_gradient_check`].
#[derive(Debug, Clone)]
pub struct GradientCheck<T> {
    /// Newton step `-J^{-1} Psi(theta)`.
    pub step: Vec<T>,
    pub step_norm: T,
    /// Finite-difference derivative of the implied loss along the step.
    pub directional_derivative: T,
    /// Finite-difference second derivative along the step.
    pub curvature: T,
    pub descent: bool,
    pub stationary: bool,
}

/// Checks numerically that the Newton step at `theta` descends the weighted
/// loss `L` implied by `grad L = -Psi`.
///
/// `L` is reconstructed along the line `theta + u d` by integrating
/// `-Psi(theta + v d) . d` with Simpson's rule, which is exact for the
/// quadratic losses behind the regression-type moments; its derivative and
/// curvature at `u = 0` are then taken by central differences.
pub fn weighted_loss_gradient_check<T: Scalar, M: MomentFunction<T> + ?Sized>(
    weights: &WeightVector<T>,
    ds: &Dataset<T>,
    moment: &M,
    theta: &[T],
) -> Result<GradientCheck<T>> {
    if moment.smoothness() != Smoothness::Smooth {
        return Err(Error::pre("gradient check needs a smooth moment"));
    }
    let sup = Support::new(&weights.alpha, ds.len())?;
    let p = moment.dim();
    let fd = SolveOptions::<T>::default().fd_step;
    let psi = weighted_psi(&sup, ds, moment, theta);
    let jac = weighted_jacobian(&sup, ds, moment, theta, fd);
    let step: Vec<T> = Lu::new(&jac, p)?
        .solve(&psi)
        .into_iter()
        .map(|v| -v)
        .collect();
    let step_norm = norm2(&step);
    let stationary = step_norm.f64() < 1e-8;
    if stationary {
        return Ok(GradientCheck {
            step,
            step_norm,
            directional_derivative: T::zero(),
            curvature: T::zero(),
            descent: true,
            stationary,
        });
    }
    let dir: Vec<T> = step.iter().map(|&v| v / step_norm).collect();
    let slope = |u: T| -> T {
        let pt: Vec<T> = theta.iter().zip(&dir).map(|(&t, &d)| t + u * d).collect();
        -weighted_psi(&sup, ds, moment, &pt)
            .iter()
            .zip(&dir)
            .fold(T::zero(), |a, (&g, &d)| a + g * d)
    };
    // L(theta + u d) - L(theta) by Simpson on [0, u]
    let line_loss = |u: T| -> T {
        let six = T::of(6.0);
        u / six * (slope(T::zero()) + T::of(4.0) * slope(u * T::of(0.5)) + slope(u))
    };
    let h = T::of(1e-3) * step_norm.min(T::one());
    let lp = line_loss(h);
    let lm = line_loss(-h);
    let directional_derivative = (lp - lm) / (T::of(2.0) * h);
    let curvature = (lp + lm) / (h * h);
    Ok(GradientCheck {
        step,
        step_norm,
        directional_derivative,
        curvature,
        descent: directional_derivative < T::zero(),
        stationary,
    })
}
