//! Moment (score) functions `psi(Z; theta)` with values in `R^p`.

use std::fmt;
use std::str::FromStr;

use crate::dataset::{Dataset, Row};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    Smooth,
    /// Step function of `theta`; solved by order statistics, never by Newton.
    PiecewiseConstant,
}

/// Structural hints the solver uses to pick an exact method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentStructure<T> {
    /// `psi = y - theta`: the root is the weighted mean of `y`.
    Mean,
    /// `psi = 1{y <= theta} - alpha`: the root is a weighted order statistic.
    Quantile(T),
    /// `psi` affine in `theta` with a `theta`-independent jacobian.
    Affine,
    General,
}

/// A pluggable score `psi: Z x R^p -> R^p`.
pub trait MomentFunction<T: Scalar>: Send + Sync {
    /// Parameter dimension `p`.
    fn dim(&self) -> usize;

    /// Writes `psi(row; theta)` into `out` (length `p`).
    fn evaluate(&self, row: &Row<'_, T>, theta: &[T], out: &mut [T]);

    /// Writes the row-major `p x p` jacobian `d psi_a / d theta_b` into `out`
    /// and returns `true`, or returns `false` when no analytic form exists.
    fn jacobian(&self, _row: &Row<'_, T>, _theta: &[T], _out: &mut [T]) -> bool {
        false
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::Smooth
    }

    fn structure(&self) -> MomentStructure<T> {
        MomentStructure::General
    }

    /// Checks that `ds` carries the fields this moment reads.
    fn validate(&self, _ds: &Dataset<T>) -> Result<()> {
        Ok(())
    }

    fn name(&self) -> String {
        "custom".into()
    }
}

/// Built-in moments for regression, quantile regression, heterogeneous
/// treatment effects and instrumental variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Moment<T> {
    Regression,
    Quantile { alpha: T },
    HetEffect { treatments: usize },
    Iv,
}

pub fn regression_moment<T: Scalar>() -> Moment<T> {
    Moment::Regression
}

pub fn quantile_moment<T: Scalar>(alpha: T) -> Result<Moment<T>> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::pre(format!("quantile level {alpha} outside (0, 1)")));
    }
    Ok(Moment::Quantile { alpha })
}

pub fn het_effect_moment<T: Scalar>(treatments: usize) -> Result<Moment<T>> {
    if treatments == 0 {
        return Err(Error::pre("het_effect needs at least one treatment"));
    }
    Ok(Moment::HetEffect { treatments })
}

pub fn iv_moment<T: Scalar>() -> Moment<T> {
    Moment::Iv
}

fn scalar_outcome<T: Scalar>(ds: &Dataset<T>) -> Result<()> {
    if ds.outcome_dim() != 1 {
        return Err(Error::Dimension {
            expected: 1,
            got: ds.outcome_dim(),
        });
    }
    Ok(())
}

impl<T: Scalar> MomentFunction<T> for Moment<T> {
    fn dim(&self) -> usize {
        match *self {
            Moment::HetEffect { treatments } => treatments,
            _ => 1,
        }
    }

    fn evaluate(&self, row: &Row<'_, T>, theta: &[T], out: &mut [T]) {
        let y = row.y[0];
        match *self {
            Moment::Regression => out[0] = y - theta[0],
            Moment::Quantile { alpha } => {
                let ind = if y <= theta[0] { T::one() } else { T::zero() };
                out[0] = ind - alpha;
            }
            Moment::HetEffect { .. } => {
                let t = row.t.expect("validated: treatment present");
                let fit = t.iter().zip(theta).fold(T::zero(), |a, (&ti, &th)| a + ti * th);
                let r = y - fit;
                for (o, &ti) in out.iter_mut().zip(t) {
                    *o = r * ti;
                }
            }
            Moment::Iv => {
                let t = row.t.expect("validated: treatment present")[0];
                let w = row.w.expect("validated: instrument present");
                out[0] = (y - theta[0] * t) * w;
            }
        }
    }

    fn jacobian(&self, row: &Row<'_, T>, _theta: &[T], out: &mut [T]) -> bool {
        match *self {
            Moment::Regression => out[0] = -T::one(),
            Moment::Quantile { .. } => return false,
            Moment::HetEffect { treatments: p } => {
                let t = row.t.expect("validated: treatment present");
                for a in 0..p {
                    for b in 0..p {
                        out[a * p + b] = -t[a] * t[b];
                    }
                }
            }
            Moment::Iv => {
                let t = row.t.expect("validated: treatment present")[0];
                out[0] = -t * row.w.expect("validated: instrument present");
            }
        }
        true
    }

    fn smoothness(&self) -> Smoothness {
        match self {
            Moment::Quantile { .. } => Smoothness::PiecewiseConstant,
            _ => Smoothness::Smooth,
        }
    }

    fn structure(&self) -> MomentStructure<T> {
        match *self {
            Moment::Regression => MomentStructure::Mean,
            Moment::Quantile { alpha } => MomentStructure::Quantile(alpha),
            Moment::HetEffect { .. } | Moment::Iv => MomentStructure::Affine,
        }
    }

    fn validate(&self, ds: &Dataset<T>) -> Result<()> {
        scalar_outcome(ds)?;
        match *self {
            Moment::Regression | Moment::Quantile { .. } => Ok(()),
            Moment::HetEffect { treatments } => match ds.treatment_dim() {
                None => Err(Error::Schema("het_effect moment needs a treatment vector".into())),
                Some(p) if p != treatments => Err(Error::Dimension {
                    expected: treatments,
                    got: p,
                }),
                Some(_) => Ok(()),
            },
            Moment::Iv => match (ds.treatment_dim(), ds.has_instrument()) {
                (Some(1), true) => Ok(()),
                (Some(p), true) => Err(Error::Dimension { expected: 1, got: p }),
                _ => Err(Error::Schema(
                    "iv moment needs a scalar treatment and an instrument".into(),
                )),
            },
        }
    }

    fn name(&self) -> String {
        self.to_string()
    }
}

impl<T: Scalar> fmt::Display for Moment<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Moment::Regression => f.write_str("regression"),
            Moment::Quantile { alpha } => write!(f, "quantile:{alpha}"),
            Moment::HetEffect { .. } => f.write_str("het_effect"),
            Moment::Iv => f.write_str("iv"),
        }
    }
}

/// Moment name as accepted on the command line:
/// `regression | quantile:<alpha> | het_effect | iv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentName {
    Regression,
    Quantile(f64),
    HetEffect,
    Iv,
}

impl FromStr for MomentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "regression" => Ok(MomentName::Regression),
            "het_effect" => Ok(MomentName::HetEffect),
            "iv" => Ok(MomentName::Iv),
            other => match other.strip_prefix("quantile:") {
                Some(a) => a
                    .parse::<f64>()
                    .map(MomentName::Quantile)
                    .map_err(|_| Error::Config(format!("bad quantile level '{a}'"))),
                None => Err(Error::Config(format!("unknown moment '{other}'"))),
            },
        }
    }
}

impl MomentName {
    /// Instantiates the moment for `ds`, taking `p` from its treatment width.
    pub fn build<T: Scalar>(self, ds: &Dataset<T>) -> Result<Moment<T>> {
        let m = match self {
            MomentName::Regression => regression_moment(),
            MomentName::Quantile(a) => quantile_moment(T::of(a))?,
            MomentName::HetEffect => het_effect_moment(ds.treatment_dim().ok_or_else(|| {
                Error::Schema("het_effect moment needs a treatment vector".into())
            })?)?,
            MomentName::Iv => iv_moment(),
        };
        m.validate(ds)?;
        Ok(m)
    }
}

/// Central finite-difference jacobian of `psi` at `theta`, row-major.
pub fn finite_difference_jacobian<T: Scalar, M: MomentFunction<T> + ?Sized>(
    moment: &M,
    row: &Row<'_, T>,
    theta: &[T],
    step: T,
) -> Vec<T> {
    let p = moment.dim();
    let mut jac = vec![T::zero(); p * p];
    let mut th = theta.to_vec();
    let mut plus = vec![T::zero(); p];
    let mut minus = vec![T::zero(); p];
    let two = T::of(2.0);
    for b in 0..p {
        let h = step * (T::one() + theta[b].abs());
        th[b] = theta[b] + h;
        moment.evaluate(row, &th, &mut plus);
        th[b] = theta[b] - h;
        moment.evaluate(row, &th, &mut minus);
        th[b] = theta[b];
        for a in 0..p {
            jac[a * p + b] = (plus[a] - minus[a]) / (two * h);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Observation;
    use rand::Rng;

    fn row<'a>(x: &'a [f64], y: &'a [f64], t: Option<&'a [f64]>, w: Option<f64>) -> Row<'a, f64> {
        Row { x, y, t, w }
    }

    fn eval(m: &Moment<f64>, r: &Row<'_, f64>, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; MomentFunction::<f64>::dim(m)];
        m.evaluate(r, theta, &mut out);
        out
    }

    #[test]
    fn regression_values() {
        let m = regression_moment::<f64>();
        assert_eq!(eval(&m, &row(&[0.0], &[2.0], None, None), &[0.5]), vec![1.5]);
        assert_eq!(eval(&m, &row(&[0.0], &[0.7], None, None), &[0.7]), vec![0.0]);
        let mut j = [0.0];
        assert!(m.jacobian(&row(&[0.0], &[3.0], None, None), &[11.0], &mut j));
        assert_eq!(j, [-1.0]);
    }

    #[test]
    fn quantile_values() {
        let m = quantile_moment(0.5).unwrap();
        assert_eq!(eval(&m, &row(&[0.0], &[1.0], None, None), &[2.0]), vec![0.5]);
        assert_eq!(eval(&m, &row(&[0.0], &[3.0], None, None), &[2.0]), vec![-0.5]);
        let m9 = quantile_moment(0.9).unwrap();
        let v = eval(&m9, &row(&[0.0], &[2.0], None, None), &[2.0])[0];
        assert!((v - 0.1).abs() < 1e-15);
        assert_eq!(m9.smoothness(), Smoothness::PiecewiseConstant);
        assert!(quantile_moment(0.0).is_err());
        assert!(quantile_moment(1.0).is_err());
        assert!(quantile_moment(f64::NAN).is_err());
    }

    #[test]
    fn het_effect_values() {
        let m = het_effect_moment::<f64>(2).unwrap();
        let t = [1.0, 0.0];
        assert_eq!(eval(&m, &row(&[0.0], &[1.0], Some(&t), None), &[1.0, 5.0]), vec![0.0, 0.0]);
        let t = [1.0, 1.0];
        assert_eq!(eval(&m, &row(&[0.0], &[2.0], Some(&t), None), &[0.0, 0.0]), vec![2.0, 2.0]);
        let t = [1.0, 2.0];
        let mut j = [0.0; 4];
        m.jacobian(&row(&[0.0], &[0.0], Some(&t), None), &[0.0, 0.0], &mut j);
        assert_eq!(j, [-1.0, -2.0, -2.0, -4.0]);
    }

    #[test]
    fn iv_values() {
        let m = iv_moment::<f64>();
        let t = [1.0];
        assert_eq!(eval(&m, &row(&[0.0], &[2.0], Some(&t), Some(3.0)), &[2.0]), vec![0.0]);
        assert_eq!(eval(&m, &row(&[0.0], &[2.0], Some(&t), Some(3.0)), &[0.0]), vec![6.0]);
        let t = [2.0];
        let mut j = [0.0];
        m.jacobian(&row(&[0.0], &[0.0], Some(&t), Some(0.5)), &[0.0], &mut j);
        assert_eq!(j, [-1.0]);
    }

    #[test]
    fn schema_checks() {
        let plain = Dataset::from_observations(vec![Observation::new(vec![0.0], vec![1.0])]).unwrap();
        assert!(matches!(
            het_effect_moment::<f64>(2).unwrap().validate(&plain),
            Err(Error::Schema(_))
        ));
        assert!(iv_moment::<f64>().validate(&plain).is_err());
        let vec_y =
            Dataset::from_observations(vec![Observation::new(vec![0.0], vec![1.0, 2.0])]).unwrap();
        assert!(matches!(
            regression_moment::<f64>().validate(&vec_y),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn names_parse() {
        assert_eq!("quantile:0.25".parse::<MomentName>().unwrap(), MomentName::Quantile(0.25));
        assert_eq!("iv".parse::<MomentName>().unwrap(), MomentName::Iv);
        assert!("nope".parse::<MomentName>().is_err());
        assert!("quantile:x".parse::<MomentName>().is_err());
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let mut rng = crate::RngSpec::new(99).rng();
        let moments = [regression_moment(), het_effect_moment(3).unwrap(), iv_moment()];
        for m in &moments {
            let p = MomentFunction::<f64>::dim(m);
            for _ in 0..100 {
                let x = [0.0];
                let y = [rng.gen_range(-3.0..3.0)];
                let t: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let w = rng.gen_range(-2.0..2.0);
                let theta: Vec<f64> = (0..p).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let r = row(&x, &y, Some(&t), Some(w));
                let mut jac = vec![0.0; p * p];
                assert!(m.jacobian(&r, &theta, &mut jac));
                let fd = finite_difference_jacobian(m, &r, &theta, 1e-6);
                for (a, b) in jac.iter().zip(&fd) {
                    assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{m}: {a} vs {b}");
                }
            }
        }
    }
}
