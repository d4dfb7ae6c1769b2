use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Assignment of CSV header names to observation fields.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub covariates: Vec<String>,
    pub outcome: Vec<String>,
    #[serde(default)]
    pub treatment: Vec<String>,
    #[serde(default)]
    pub instrument: Option<String>,
}

impl Schema {
    /// Column names used when writing `ds` without an explicit schema:
    /// `c0..`, `y` (or `y0..`), `t0..`, `w`.
    pub fn default_for<T: Scalar>(ds: &Dataset<T>) -> Self {
        let names = |prefix: &str, m: usize| -> Vec<String> {
            (0..m).map(|i| format!("{prefix}{i}")).collect()
        };
        Schema {
            covariates: names("c", ds.dim()),
            outcome: if ds.outcome_dim() == 1 {
                vec!["y".into()]
            } else {
                names("y", ds.outcome_dim())
            },
            treatment: names("t", ds.treatment_dim().unwrap_or(0)),
            instrument: ds.has_instrument().then(|| "w".into()),
        }
    }

    fn columns(&self) -> impl Iterator<Item = &String> {
        self.covariates
            .iter()
            .chain(&self.outcome)
            .chain(&self.treatment)
            .chain(self.instrument.as_ref())
    }

    fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::Schema("no covariate columns".into()));
        }
        if self.outcome.is_empty() {
            return Err(Error::Schema("no outcome column".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for c in self.columns() {
            if !seen.insert(c) {
                return Err(Error::Schema(format!("column '{c}' assigned to more than one role")));
            }
        }
        Ok(())
    }
}

/// Expands a column list such as `c0..c19,z` into names. A range
/// `<prefix><a>..<prefix><b>` is inclusive and needs a shared prefix.
pub fn expand_columns(spec: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Some((lo, hi)) = item.split_once("..") else {
            out.push(item.to_string());
            continue;
        };
        let split = |s: &str| -> Option<(String, usize)> {
            let at = s.find(|c: char| c.is_ascii_digit())?;
            Some((s[..at].to_string(), s[at..].parse().ok()?))
        };
        match (split(lo), split(hi)) {
            (Some((p, a)), Some((q, b))) if p == q && a <= b => {
                out.extend((a..=b).map(|i| format!("{p}{i}")));
            }
            _ => return Err(Error::Config(format!("bad column range '{item}'"))),
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("empty column list '{spec}'")));
    }
    Ok(out)
}

/// Header names of a CSV file.
pub fn csv_header(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    Ok(rdr.headers()?.iter().map(str::to_string).collect())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a headed, comma-separated file. Rows keep file order.
pub fn load_csv<T: Scalar>(path: &Path, schema: &Schema) -> Result<Dataset<T>> {
    schema.validate()?;
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = rdr.headers()?.clone();
    let width = header.len();
    let pos: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let lookup = |names: &[String]| -> Result<Vec<usize>> {
        names
            .iter()
            .map(|c| {
                pos.get(c.as_str())
                    .copied()
                    .ok_or_else(|| Error::Schema(format!("column '{c}' not found in header")))
            })
            .collect()
    };
    let xc = lookup(&schema.covariates)?;
    let yc = lookup(&schema.outcome)?;
    let tc = lookup(&schema.treatment)?;
    let wc = lookup(schema.instrument.as_slice())?;

    let mut obs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Schema(format!(
                "line {line}: {} fields, header has {width}",
                rec.len()
            )));
        }
        let field = |c: usize| -> Result<T> {
            let raw = &rec[c];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(T::of)
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("column '{}': '{raw}' is not a finite number", &header[c]),
                })
        };
        let pick = |cols: &[usize]| cols.iter().map(|&c| field(c)).collect::<Result<Vec<T>>>();
        let mut o = Observation::new(pick(&xc)?, pick(&yc)?);
        if !tc.is_empty() {
            o.t = Some(pick(&tc)?);
        }
        if let Some(&c) = wc.first() {
            o.w = Some(field(c)?);
        }
        obs.push(o);
    }
    if obs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::from_observations(obs)
}

/// Writes `ds` with the given (or default) header. Values use the shortest
/// representation that parses back to the same bits.
pub fn write_csv<T: Scalar>(ds: &Dataset<T>, path: &Path, schema: Option<&Schema>) -> Result<()> {
    let default;
    let schema = match schema {
        Some(s) => s,
        None => {
            default = Schema::default_for(ds);
            &default
        }
    };
    schema.validate()?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(schema.columns())?;
    let mut rec: Vec<String> = Vec::new();
    for i in 0..ds.len() {
        let r = ds.row(i);
        rec.clear();
        rec.extend(r.x.iter().chain(r.y).chain(r.t.unwrap_or(&[])).map(ToString::to_string));
        rec.extend(r.w.map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScalarOrVec {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Deserialize)]
struct JsonObservation {
    x: Vec<f64>,
    y: ScalarOrVec,
    #[serde(default)]
    t: Option<ScalarOrVec>,
    #[serde(default)]
    w: Option<ScalarOrVec>,
}

impl ScalarOrVec {
    fn into_vec(self) -> Vec<f64> {
        match self {
            ScalarOrVec::One(v) => vec![v],
            ScalarOrVec::Many(v) => v,
        }
    }
}

/// Reads an array of `{"x": [...], "y": [...], "t": [...], "w": [...]}` objects.
pub fn load_json<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let raw: Vec<JsonObservation> = serde_json::from_reader(std::io::BufReader::new(file))?;
    let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
    let obs = raw
        .into_iter()
        .enumerate()
        .map(|(i, o)| {
            let w = match o.w.map(ScalarOrVec::into_vec) {
                None => None,
                Some(v) if v.len() == 1 => Some(T::of(v[0])),
                Some(_) => {
                    return Err(Error::Schema(format!("observation {i}: 'w' must be a scalar")))
                }
            };
            Ok(Observation {
                x: cast(o.x),
                y: cast(o.y.into_vec()),
                t: o.t.map(|t| cast(t.into_vec())),
                w,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_observations(obs)
}
