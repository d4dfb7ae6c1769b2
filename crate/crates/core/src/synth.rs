//! Synthetic covariate processes with known intrinsic dimension and known
//! conditional mean.
//!
//! A [`Generator`] freezes the structural randomness (embedding matrices,
//! sparsity patterns, mixture shifts) from the spec's seed once; replicas
//! then draw fresh samples from their own [`RngSpec`] streams.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, RngSpec, Subsampler};
use crate::error::{Error, Result};
use crate::inference::normal_quantile;
use crate::scalar::{sq_dist, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// `X = A u`, `u ~ U[-1,1]^d`, `A` in `R^{D x d}` with `U[-1,1]` entries.
    LinearEmbedding,
    /// `d` nonzero coordinates out of `D`, on one of a few frozen supports.
    Sparse,
    /// Equal-weight mixture of shifted linear embeddings.
    Mixture,
    /// Independent product of two linear embeddings of dimensions `d1 + d2`.
    Product,
    /// Uniform on a unit circle in a random 2-plane of `R^D` (`d = 1`). An
    /// extension: a curved manifold next to the flat embeddings.
    ManifoldCircle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanFunction {
    /// `1 / (1 + exp(-3 x[0]))`
    Logistic3,
    /// `x[0]`
    Linear,
    Constant,
}

fn default_noise() -> f64 {
    1.0
}
fn default_components() -> usize {
    3
}
fn default_patterns() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// Ambient dimension `D`.
    #[serde(rename = "D")]
    pub ambient_dim: usize,
    /// Intrinsic dimension `d`.
    #[serde(rename = "d")]
    pub intrinsic_dim: usize,
    pub n: usize,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    pub mean: MeanFunction,
    /// Value of the constant mean function.
    #[serde(default)]
    pub constant: f64,
    /// Seeds the frozen structure (and the default sample stream).
    pub rng: RngSpec,
    /// Explicit `D x d` embedding for the linear-embedding kind, row-major rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_components")]
    pub components: usize,
    #[serde(default = "default_patterns")]
    pub patterns: usize,
    /// `d1` for the product kind; defaults to `ceil(d/2)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<usize>,
}

impl GeneratorSpec {
    /// Linear embedding with the logistic mean and unit noise.
    pub fn linear(n: usize, ambient: usize, intrinsic: usize, seed: u64) -> Self {
        GeneratorSpec {
            kind: GeneratorKind::LinearEmbedding,
            ambient_dim: ambient,
            intrinsic_dim: intrinsic,
            n,
            noise_sd: 1.0,
            mean: MeanFunction::Logistic3,
            constant: 0.0,
            rng: RngSpec::new(seed),
            embedding: None,
            components: default_components(),
            patterns: default_patterns(),
            split: None,
        }
    }

    pub fn with_kind(mut self, kind: GeneratorKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (dd, d) = (self.ambient_dim, self.intrinsic_dim);
        if d == 0 || dd == 0 {
            return Err(Error::pre("dimensions must be positive"));
        }
        if d > dd {
            return Err(Error::pre(format!("intrinsic dimension d={d} exceeds D={dd}")));
        }
        if self.n == 0 {
            return Err(Error::pre("sample count must be positive"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::pre("noise sd must be finite and non-negative"));
        }
        match self.kind {
            GeneratorKind::ManifoldCircle if d != 1 || dd < 2 => {
                Err(Error::pre("manifold-circle needs d = 1 and D >= 2"))
            }
            GeneratorKind::Mixture if self.components == 0 => {
                Err(Error::pre("mixture needs at least one component"))
            }
            GeneratorKind::Sparse if self.patterns == 0 => {
                Err(Error::pre("sparse kind needs at least one support pattern"))
            }
            GeneratorKind::Product => {
                let d1 = self.split.unwrap_or(d.div_ceil(2));
                let d2 = d.saturating_sub(d1);
                let big1 = dd.div_ceil(2);
                if d1 == 0 || d1 > d || d1 > big1 || d2 > dd - big1 {
                    Err(Error::pre(format!("product split d1={d1} incompatible with d={d}, D={dd}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Frozen structural draws of a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Design {
    LinearEmbedding {
        /// `D x d`, one inner vector per ambient coordinate.
        a: Vec<Vec<f64>>,
    },
    Sparse {
        /// Each pattern lists `d` distinct coordinates.
        supports: Vec<Vec<usize>>,
    },
    Mixture {
        a: Vec<Vec<Vec<f64>>>,
        shift: Vec<Vec<f64>>,
    },
    Product {
        a1: Vec<Vec<f64>>,
        a2: Vec<Vec<f64>>,
    },
    ManifoldCircle {
        u: Vec<f64>,
        v: Vec<f64>,
    },
}

fn unif<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    2.0 * rng.gen::<f64>() - 1.0
}

fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| unif(rng)).collect()).collect()
}

fn mat_vec(a: &[Vec<f64>], u: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(a) {
        *o = row.iter().zip(u).map(|(x, y)| x * y).sum();
    }
}

/// The conditional law `theta(x)` behind generated outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruth {
    pub mean: MeanFunction,
    pub constant: f64,
    pub noise_sd: f64,
}

impl GroundTruth {
    /// `E[Y | X = x]`.
    pub fn theta(&self, x: &[f64]) -> f64 {
        match self.mean {
            MeanFunction::Logistic3 => 1.0 / (1.0 + (-3.0 * x[0]).exp()),
            MeanFunction::Linear => x[0],
            MeanFunction::Constant => self.constant,
        }
    }

    /// Conditional `alpha`-quantile of `Y` given `x` (Gaussian noise).
    pub fn quantile(&self, x: &[f64], alpha: f64) -> f64 {
        self.theta(x) + self.noise_sd * normal_quantile(alpha)
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub design: Design,
}

impl Generator {
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let (dd, d) = (spec.ambient_dim, spec.intrinsic_dim);
        let mut rng = spec.rng.child(0x5eed).rng();
        let design = match spec.kind {
            GeneratorKind::LinearEmbedding => {
                let a = match &spec.embedding {
                    Some(a) => {
                        if a.len() != dd || a.iter().any(|r| r.len() != d) {
                            return Err(Error::Dimension {
                                expected: dd * d,
                                got: a.iter().map(Vec::len).sum(),
                            });
                        }
                        a.clone()
                    }
                    None => random_matrix(dd, d, &mut rng),
                };
                Design::LinearEmbedding { a }
            }
            GeneratorKind::Sparse => {
                let mut sampler = Subsampler::new(dd);
                let mut supports = Vec::with_capacity(spec.patterns);
                for _ in 0..spec.patterns {
                    let mut idx = sampler.draw(d, &mut rng)?.to_vec();
                    idx.sort_unstable();
                    supports.push(idx);
                }
                Design::Sparse { supports }
            }
            GeneratorKind::Mixture => {
                let a = (0..spec.components).map(|_| random_matrix(dd, d, &mut rng)).collect();
                let shift = (0..spec.components)
                    .map(|_| (0..dd).map(|_| unif(&mut rng)).collect())
                    .collect();
                Design::Mixture { a, shift }
            }
            GeneratorKind::Product => {
                let d1 = spec.split.unwrap_or(d.div_ceil(2));
                let big1 = dd.div_ceil(2);
                Design::Product {
                    a1: random_matrix(big1, d1, &mut rng),
                    a2: random_matrix(dd - big1, d - d1, &mut rng),
                }
            }
            GeneratorKind::ManifoldCircle => {
                let mut u: Vec<f64> = (0..dd).map(|_| rng.sample(StandardNormal)).collect();
                let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                u.iter_mut().for_each(|x| *x /= nu);
                let mut v: Vec<f64> = (0..dd).map(|_| rng.sample(StandardNormal)).collect();
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(&u).for_each(|(x, a)| *x -= dot * a);
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= nv);
                Design::ManifoldCircle { u, v }
            }
        };
        Ok(Generator { spec, design })
    }

    pub fn truth(&self) -> GroundTruth {
        GroundTruth {
            mean: self.spec.mean,
            constant: self.spec.constant,
            noise_sd: self.spec.noise_sd,
        }
    }

    /// One covariate draw into `out` (length `D`).
    pub fn draw_x<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.spec.intrinsic_dim;
        match &self.design {
            Design::LinearEmbedding { a } => {
                let u: Vec<f64> = (0..d).map(|_| unif(rng)).collect();
                mat_vec(a, &u, out);
            }
            Design::Sparse { supports } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let pat = &supports[rng.gen_range(0..supports.len() as u64) as usize];
                for &c in pat {
                    out[c] = unif(rng);
                }
            }
            Design::Mixture { a, shift } => {
                let c = rng.gen_range(0..a.len() as u64) as usize;
                let u: Vec<f64> = (0..d).map(|_| unif(rng)).collect();
                mat_vec(&a[c], &u, out);
                out.iter_mut().zip(&shift[c]).for_each(|(o, b)| *o += b);
            }
            Design::Product { a1, a2 } => {
                let u1: Vec<f64> = (0..a1.first().map_or(0, Vec::len)).map(|_| unif(rng)).collect();
                let u2: Vec<f64> = (0..a2.first().map_or(0, Vec::len)).map(|_| unif(rng)).collect();
                let (head, tail) = out.split_at_mut(a1.len());
                mat_vec(a1, &u1, head);
                mat_vec(a2, &u2, tail);
            }
            Design::ManifoldCircle { u, v } => {
                let phi = rng.gen::<f64>() * std::f64::consts::TAU;
                let (s, c) = phi.sin_cos();
                for (o, (a, b)) in out.iter_mut().zip(u.iter().zip(v)) {
                    *o = c * a + s * b;
                }
            }
        }
    }

    /// Draws `n` observations `(X, Y = f(X) + noise)` from `rng`.
    pub fn sample(&self, n: usize, rng: &RngSpec) -> Dataset<f64> {
        let dd = self.spec.ambient_dim;
        let truth = self.truth();
        let mut r = rng.rng();
        let mut x = vec![0.0; n * dd];
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let row = &mut x[i * dd..(i + 1) * dd];
            self.draw_x(&mut r, row);
            let eps: f64 = r.sample(StandardNormal);
            y.push(truth.theta(row) + self.spec.noise_sd * eps);
        }
        Dataset::from_columns(dd, x, 1, y, None, None).expect("generator output is well formed")
    }

    /// `count` covariate points drawn from the generator's law.
    pub fn draw_points(&self, count: usize, rng: &RngSpec) -> Vec<Vec<f64>> {
        let mut r = rng.rng();
        (0..count)
            .map(|_| {
                let mut x = vec![0.0; self.spec.ambient_dim];
                self.draw_x(&mut r, &mut x);
                x
            })
            .collect()
    }

    /// The minimum-norm point `A u` of a linear embedding with first ambient
    /// coordinate equal to `first`; fails if `u` leaves `[-1, 1]^d`.
    pub fn anchored_point(&self, first: f64) -> Result<Vec<f64>> {
        let a = match &self.design {
            Design::LinearEmbedding { a } => a,
            _ => return Err(Error::Config("anchored test points need the linear-embedding kind".into())),
        };
        let a0 = &a[0];
        let nn: f64 = a0.iter().map(|v| v * v).sum();
        if nn == 0.0 {
            return Err(Error::Config("first embedding row is zero".into()));
        }
        let u: Vec<f64> = a0.iter().map(|v| v * first / nn).collect();
        if u.iter().any(|v| v.abs() > 1.0) {
            return Err(Error::Config(format!(
                "x[0]={first} is not reachable inside the latent cube"
            )));
        }
        let mut x = vec![0.0; a.len()];
        mat_vec(a, &u, &mut x);
        Ok(x)
    }
}

/// Builds the generator, draws `spec.n` observations on the spec's own stream
/// and returns them with the ground truth.
pub fn generate(spec: &GeneratorSpec) -> Result<(Dataset<f64>, GroundTruth)> {
    let g = Generator::new(spec.clone())?;
    let ds = g.sample(spec.n, &spec.rng.child(0xda7a));
    Ok((ds, g.truth()))
}

/// Heterogeneous-effect data: treatments `T ~ U[0,1]^p`,
/// `Y = <theta(X), T> + noise`.
pub fn generate_het_effect<F>(spec: &GeneratorSpec, theta: F, treatments: usize) -> Result<Dataset<f64>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if treatments == 0 {
        return Err(Error::pre("need at least one treatment"));
    }
    let g = Generator::new(spec.clone())?;
    let dd = spec.ambient_dim;
    let n = spec.n;
    let mut r = spec.rng.child(0x7ea7).rng();
    let mut x = vec![0.0; n * dd];
    let mut y = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n * treatments);
    for i in 0..n {
        let row = &mut x[i * dd..(i + 1) * dd];
        g.draw_x(&mut r, row);
        let th = theta(row);
        if th.len() != treatments {
            return Err(Error::Dimension {
                expected: treatments,
                got: th.len(),
            });
        }
        let ti: Vec<f64> = (0..treatments).map(|_| r.gen::<f64>()).collect();
        let eps: f64 = r.sample(StandardNormal);
        y.push(th.iter().zip(&ti).map(|(a, b)| a * b).sum::<f64>() + spec.noise_sd * eps);
        t.extend(ti);
    }
    Dataset::from_columns(dd, x, 1, y, Some((treatments, t)), None)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoublingRow {
    pub radius: f64,
    pub theta: f64,
    /// Points strictly inside `B(x, r)`.
    pub outer: usize,
    /// Points strictly inside `B(x, theta r)`.
    pub inner: usize,
    /// `mu(B(x, r)) / mu(B(x, theta r))`; infinite when the inner ball is empty.
    pub ratio: f64,
}

/// Empirical ball-mass ratios around `x` for each `(radius, theta)` pair.
/// For a `(C, d)`-homogeneous law the ratio stays below `C theta^{-d}`.
pub fn doubling_diagnostic<T: Scalar>(
    ds: &Dataset<T>,
    x: &[T],
    radii: &[f64],
    thetas: &[f64],
) -> Result<Vec<DoublingRow>> {
    if x.len() != ds.dim() {
        return Err(Error::Dimension {
            expected: ds.dim(),
            got: x.len(),
        });
    }
    if radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::pre("radii must be positive"));
    }
    if thetas.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(Error::pre("thetas must lie in (0, 1]"));
    }
    let mut dist: Vec<f64> = (0..ds.len()).map(|i| sq_dist(ds.x(i), x).f64().sqrt()).collect();
    dist.sort_by(f64::total_cmp);
    let count = |r: f64| dist.partition_point(|&d| d < r);
    let mut rows = Vec::with_capacity(radii.len() * thetas.len());
    for &r in radii {
        for &th in thetas {
            let outer = count(r);
            let inner = if th == 1.0 { outer } else { count(th * r) };
            let ratio = if inner == 0 {
                f64::INFINITY
            } else {
                outer as f64 / inner as f64
            };
            rows.push(DoublingRow {
                radius: r,
                theta: th,
                outer,
                inner,
                ratio,
            });
        }
    }
    Ok(rows)
}
