//! Observations, datasets, and the seeded randomness shared by every
//! stochastic routine in the crate.
//!
//! Covariates are stored row-major in one contiguous buffer so that the
//! distance pass over `n` points touches memory linearly. Auxiliary fields
//! (outcome, treatment, instrument) are laid out the same way and are
//! uniform across observations.

mod io;
mod sampling;

pub use io::{csv_header, expand_columns, load_csv, load_json, write_csv, Schema};
pub use sampling::{subsample_without_replacement, RngSpec, Subsampler};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One owned observation `Z = (X, Y[, T][, W])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub t: Option<Vec<T>>,
    pub w: Option<T>,
}

impl<T> Observation<T> {
    pub fn new(x: Vec<T>, y: Vec<T>) -> Self {
        Observation {
            x,
            y,
            t: None,
            w: None,
        }
    }

    pub fn with_treatment(mut self, t: Vec<T>) -> Self {
        self.t = Some(t);
        self
    }

    pub fn with_instrument(mut self, w: T) -> Self {
        self.w = Some(w);
        self
    }
}

/// Borrowed view of observation `i` inside a [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct Row<'a, T> {
    pub x: &'a [T],
    pub y: &'a [T],
    pub t: Option<&'a [T]>,
    pub w: Option<T>,
}

/// Immutable collection of `n >= 1` observations with covariates in `R^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    n: usize,
    dim: usize,
    outcome_dim: usize,
    treatment_dim: Option<usize>,
    x: Vec<T>,
    y: Vec<T>,
    t: Option<Vec<T>>,
    w: Option<Vec<T>>,
}

impl<T: Scalar> Dataset<T> {
    /// Builds a dataset, checking that every observation has the same layout.
    pub fn from_observations(obs: Vec<Observation<T>>) -> Result<Self> {
        let first = obs.first().ok_or(Error::EmptyDataset)?;
        let dim = first.x.len();
        let outcome_dim = first.y.len();
        let treatment_dim = first.t.as_ref().map(Vec::len);
        let has_w = first.w.is_some();
        if dim == 0 {
            return Err(Error::Schema("covariate dimension must be at least 1".into()));
        }
        if outcome_dim == 0 {
            return Err(Error::Schema("outcome dimension must be at least 1".into()));
        }

        let n = obs.len();
        let mut x = Vec::with_capacity(n * dim);
        let mut y = Vec::with_capacity(n * outcome_dim);
        let mut t = treatment_dim.map(|p| Vec::with_capacity(n * p));
        let mut w = has_w.then(|| Vec::with_capacity(n));
        for (i, o) in obs.into_iter().enumerate() {
            if o.x.len() != dim {
                return Err(Error::Schema(format!(
                    "observation {i}: covariate length {} != {dim}",
                    o.x.len()
                )));
            }
            if o.y.len() != outcome_dim {
                return Err(Error::Schema(format!(
                    "observation {i}: outcome length {} != {outcome_dim}",
                    o.y.len()
                )));
            }
            if o.x.iter().chain(&o.y).any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("observation {i}: non-finite value")));
            }
            match (&mut t, o.t) {
                (Some(buf), Some(ti)) if Some(ti.len()) == treatment_dim => buf.extend(ti),
                (None, None) => {}
                _ => {
                    return Err(Error::Schema(format!(
                        "observation {i}: treatment layout differs from observation 0"
                    )))
                }
            }
            match (&mut w, o.w) {
                (Some(buf), Some(wi)) => buf.push(wi),
                (None, None) => {}
                _ => {
                    return Err(Error::Schema(format!(
                        "observation {i}: instrument layout differs from observation 0"
                    )))
                }
            }
            x.extend(o.x);
            y.extend(o.y);
        }
        Ok(Dataset {
            n,
            dim,
            outcome_dim,
            treatment_dim,
            x,
            y,
            t,
            w,
        })
    }

    /// Builds a dataset directly from row-major buffers.
    pub fn from_columns(
        dim: usize,
        x: Vec<T>,
        outcome_dim: usize,
        y: Vec<T>,
        treatment: Option<(usize, Vec<T>)>,
        instrument: Option<Vec<T>>,
    ) -> Result<Self> {
        if dim == 0 || outcome_dim == 0 {
            return Err(Error::Schema("dimensions must be at least 1".into()));
        }
        if x.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if x.len() % dim != 0 {
            return Err(Error::Schema("covariate buffer is not a multiple of D".into()));
        }
        let n = x.len() / dim;
        if y.len() != n * outcome_dim {
            return Err(Error::Schema("outcome buffer length mismatch".into()));
        }
        let (treatment_dim, t) = match treatment {
            Some((p, t)) if t.len() == n * p && p > 0 => (Some(p), Some(t)),
            Some(_) => return Err(Error::Schema("treatment buffer length mismatch".into())),
            None => (None, None),
        };
        if matches!(&instrument, Some(w) if w.len() != n) {
            return Err(Error::Schema("instrument buffer length mismatch".into()));
        }
        Ok(Dataset {
            n,
            dim,
            outcome_dim,
            treatment_dim,
            x,
            y,
            t,
            w: instrument,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Covariate dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outcome_dim(&self) -> usize {
        self.outcome_dim
    }

    pub fn treatment_dim(&self) -> Option<usize> {
        self.treatment_dim
    }

    pub fn has_instrument(&self) -> bool {
        self.w.is_some()
    }

    #[inline]
    pub fn x(&self, i: usize) -> &[T] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn y(&self, i: usize) -> &[T] {
        &self.y[i * self.outcome_dim..(i + 1) * self.outcome_dim]
    }

    #[inline]
    pub fn row(&self, i: usize) -> Row<'_, T> {
        Row {
            x: self.x(i),
            y: self.y(i),
            t: self
                .t
                .as_ref()
                .zip(self.treatment_dim)
                .map(|(t, p)| &t[i * p..(i + 1) * p]),
            w: self.w.as_ref().map(|w| w[i]),
        }
    }

    pub fn covariates(&self) -> &[T] {
        &self.x
    }

    pub fn observation(&self, i: usize) -> Observation<T> {
        let r = self.row(i);
        Observation {
            x: r.x.to_vec(),
            y: r.y.to_vec(),
            t: r.t.map(<[T]>::to_vec),
            w: r.w,
        }
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation<T>> + '_ {
        (0..self.n).map(move |i| self.observation(i))
    }

    /// Converts every stored value to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        let conv = |v: &Vec<T>| v.iter().map(|&a| U::of(a.f64())).collect::<Vec<U>>();
        Dataset {
            n: self.n,
            dim: self.dim,
            outcome_dim: self.outcome_dim,
            treatment_dim: self.treatment_dim,
            x: conv(&self.x),
            y: conv(&self.y),
            t: self.t.as_ref().map(conv),
            w: self.w.as_ref().map(conv),
        }
    }

    /// Side lengths of the axis-aligned bounding box of the covariates.
    pub fn bounding_box(&self) -> Vec<(T, T)> {
        let mut bb = vec![(T::infinity(), T::neg_infinity()); self.dim];
        for i in 0..self.n {
            for (b, &v) in bb.iter_mut().zip(self.x(i)) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        bb
    }

    /// Length of the bounding-box diagonal, an upper bound on the in-sample diameter.
    pub fn bounding_box_diameter(&self) -> T {
        self.bounding_box()
            .into_iter()
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<T>()
            .sqrt()
    }
}
