//! Base generators. External generators enter as CSV sample pools; two
//! simple built-in baselines and the SCM oracle cover self-contained runs.

use std::path::Path;

use nalgebra::DMatrix;
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{self, read_csv_with_schema, ColumnKind, ColumnSchema, Provenance, Table};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::Rng64;
use crate::scm::Scm;

/// A black-box source of synthetic rows in raw (unstandardized) units.
pub trait Sampler: Send + Sync {
    fn schema(&self) -> &[ColumnSchema];

    fn sample(&self, n: usize, rng: &mut Rng64) -> Result<Table>;

    fn name(&self) -> &str;
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid normal")
}

#[derive(Debug, Clone, PartialEq)]
enum Marginal {
    /// Sorted observed values; sampled by interpolated quantiles.
    Empirical(Vec<f64>),
    Bernoulli(f64),
    Constant(f64),
}

/// Gaussian copula with empirical marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCopula {
    schema: Vec<ColumnSchema>,
    marginals: Vec<Marginal>,
    /// Correlation of the normal scores.
    pub correlation: DMatrix<f64>,
    chol: DMatrix<f64>,
}

/// Normal scores of a column from mid-ranks `(rank − ½)/n`.
fn normal_scores(x: &[f64], normal: &Normal) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut scores = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let mid = (start + end) as f64 / 2.0;
        let z = normal.inverse_cdf(mid / n as f64);
        for &i in &idx[start..end] {
            scores[i] = z;
        }
        start = end;
    }
    scores
}

fn quantile(sorted: &[f64], u: f64) -> f64 {
    let pos = u.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn fit_gaussian_copula(real: &Table) -> Result<GaussianCopula> {
    if real.n_rows() < 50 {
        return Err(Error::validation("Gaussian copula needs at least 50 rows"));
    }
    let normal = std_normal();
    let d = real.n_cols();
    let mut marginals = Vec::with_capacity(d);
    let mut scores = Vec::with_capacity(d);
    for (j, c) in real.schema().iter().enumerate() {
        let col = real.column(j);
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            marginals.push(Marginal::Constant(first));
            scores.push(vec![0.0; col.len()]);
            continue;
        }
        marginals.push(match c.kind {
            ColumnKind::Binary => Marginal::Bernoulli(data::mean(&col)),
            ColumnKind::Continuous => {
                let mut s = col.clone();
                s.sort_by(|a, b| a.total_cmp(b));
                Marginal::Empirical(s)
            }
        });
        scores.push(normal_scores(&col, &normal));
    }
    let mut correlation = DMatrix::identity(d, d);
    for a in 0..d {
        for b in a + 1..d {
            let r = linalg::pearson(&scores[a], &scores[b]);
            correlation[(a, b)] = r;
            correlation[(b, a)] = r;
        }
    }
    let chol = jittered_cholesky(&correlation)?;
    Ok(GaussianCopula { schema: plain_schema(real.schema()), marginals, correlation, chol })
}

fn jittered_cholesky(correlation: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut jitter = 1e-8;
    loop {
        let mut m = correlation.clone();
        for k in 0..m.nrows() {
            m[(k, k)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok(c.l());
        }
        jitter *= 10.0;
        if jitter > 1.0 {
            return Err(Error::numeric("copula correlation is not positive definite"));
        }
    }
}

impl GaussianCopula {
    /// Same marginals, different dependence between the normal scores.
    pub fn with_correlation(mut self, correlation: DMatrix<f64>) -> Result<GaussianCopula> {
        let d = self.marginals.len();
        if correlation.shape() != (d, d) {
            return Err(Error::validation(format!("correlation must be {d}x{d}")));
        }
        self.chol = jittered_cholesky(&correlation)?;
        self.correlation = correlation;
        Ok(self)
    }
}

fn plain_schema(schema: &[ColumnSchema]) -> Vec<ColumnSchema> {
    schema.iter().map(|c| ColumnSchema { standardization: None, ..c.clone() }).collect()
}

impl Sampler for GaussianCopula {
    fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    fn name(&self) -> &str {
        "copula"
    }

    fn sample(&self, n: usize, rng: &mut Rng64) -> Result<Table> {
        let d = self.schema.len();
        let normal = std_normal();
        let z: DMatrix<f64> = DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut *rng));
        let correlated = z * self.chol.transpose();
        let rows = DMatrix::from_fn(n, d, |i, j| {
            let u = normal.cdf(correlated[(i, j)]);
            match &self.marginals[j] {
                Marginal::Empirical(s) => quantile(s, u),
                Marginal::Bernoulli(p) => {
                    if u > 1.0 - p {
                        1.0
                    } else {
                        0.0
                    }
                }
                Marginal::Constant(c) => *c,
            }
        });
        Table::new(self.schema.clone(), rows, Provenance::BaseSynthetic)
    }
}

/// Row bootstrap with Gaussian jitter on continuous columns and random bit
/// flips on binary ones.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyBootstrap {
    source: Table,
    noise: f64,
    col_std: Vec<f64>,
}

pub fn noisy_bootstrap(real: &Table, noise: f64) -> Result<NoisyBootstrap> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::validation("bootstrap noise must be non-negative"));
    }
    let col_std = (0..real.n_cols()).map(|j| data::sample_std(&real.column(j))).collect();
    let source = Table::new(plain_schema(real.schema()), real.rows().clone(), Provenance::Real)?;
    Ok(NoisyBootstrap { source, noise, col_std })
}

impl NoisyBootstrap {
    pub fn flip_probability(&self) -> f64 {
        self.noise / 10.0
    }
}

impl Sampler for NoisyBootstrap {
    fn schema(&self) -> &[ColumnSchema] {
        self.source.schema()
    }

    fn name(&self) -> &str {
        "bootstrap"
    }

    fn sample(&self, n: usize, rng: &mut Rng64) -> Result<Table> {
        let src = self.source.rows();
        let pick: Vec<usize> = (0..n).map(|_| rng.random_range(0..src.nrows())).collect();
        let flip = self.flip_probability();
        let mut rows = DMatrix::zeros(n, src.ncols());
        for (i, &r) in pick.iter().enumerate() {
            for (j, c) in self.source.schema().iter().enumerate() {
                let v = src[(r, j)];
                rows[(i, j)] = if c.is_binary() {
                    if flip > 0.0 && rng.random::<f64>() < flip {
                        1.0 - v
                    } else {
                        v
                    }
                } else if self.noise > 0.0 {
                    let e: f64 = StandardNormal.sample(&mut *rng);
                    v + self.noise * self.col_std[j] * e
                } else {
                    v
                };
            }
        }
        Table::new(self.source.schema().to_vec(), rows, Provenance::BaseSynthetic)
    }
}

/// A finite pool of rows from an external generator, drawn with replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct FileBacked {
    pool: Table,
}

impl FileBacked {
    pub fn new(pool: Table) -> FileBacked {
        FileBacked { pool }
    }

    pub fn pool(&self) -> &Table {
        &self.pool
    }
}

/// Load an external sample pool. Columns must match `schema`; binary
/// columns may hold relaxed values in `[0, 1]` only if `relaxed` is set.
pub fn load_samples(path: impl AsRef<Path>, schema: &[ColumnSchema], relaxed: bool, min_rows: usize) -> Result<FileBacked> {
    let pool = read_csv_with_schema(path, schema, Provenance::BaseSynthetic, relaxed)?;
    if pool.n_rows() < min_rows {
        return Err(Error::validation(format!("sample pool has {} rows, fewer than one batch of {min_rows}", pool.n_rows())));
    }
    Ok(FileBacked { pool })
}

impl Sampler for FileBacked {
    fn schema(&self) -> &[ColumnSchema] {
        self.pool.schema()
    }

    fn name(&self) -> &str {
        "file"
    }

    fn sample(&self, n: usize, rng: &mut Rng64) -> Result<Table> {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.pool.n_rows())).collect();
        Ok(self.pool.select_rows(&idx))
    }
}

/// Ancestral sampling from the true SCM.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSampler {
    scm: Scm,
    schema: Vec<ColumnSchema>,
}

impl OracleSampler {
    pub fn new(scm: Scm) -> OracleSampler {
        let schema = scm.schema();
        OracleSampler { scm, schema }
    }
}

impl Sampler for OracleSampler {
    fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    fn name(&self) -> &str {
        "oracle"
    }

    fn sample(&self, n: usize, rng: &mut Rng64) -> Result<Table> {
        let t = self.scm.ancestral_sample(n, rng, None)?;
        Table::new(self.schema.clone(), t.into_rows(), Provenance::Oracle)
    }
}

/// Which base generator to use, as written in configs and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseSpec {
    Copula,
    Bootstrap { noise: f64 },
    File { path: String, #[serde(default)] relaxed: bool },
    Oracle,
}

impl BaseSpec {
    /// Parse the CLI form: `copula`, `bootstrap:0.5`, `file:path.csv`,
    /// `file-relaxed:path.csv` or `oracle`.
    pub fn parse(s: &str) -> Result<BaseSpec> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind, arg) {
            ("copula", None) => Ok(BaseSpec::Copula),
            ("oracle", None) => Ok(BaseSpec::Oracle),
            ("bootstrap", a) => {
                let noise = match a {
                    Some(a) => a.parse().map_err(|_| Error::validation(format!("bad bootstrap noise '{a}'")))?,
                    None => 0.5,
                };
                Ok(BaseSpec::Bootstrap { noise })
            }
            ("file", Some(p)) => Ok(BaseSpec::File { path: p.to_string(), relaxed: false }),
            ("file-relaxed", Some(p)) => Ok(BaseSpec::File { path: p.to_string(), relaxed: true }),
            _ => Err(Error::validation(format!("unknown base generator '{s}'"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            BaseSpec::Copula => "copula".into(),
            BaseSpec::Bootstrap { noise } => format!("bootstrap({noise})"),
            BaseSpec::File { path, .. } => format!("file({path})"),
            BaseSpec::Oracle => "oracle".into(),
        }
    }

    /// Build the sampler. `real` is the raw training table; `scm` is needed
    /// only for the oracle; `min_rows` guards file pools.
    pub fn build(&self, real: &Table, scm: Option<&Scm>, min_rows: usize) -> Result<Box<dyn Sampler>> {
        Ok(match self {
            BaseSpec::Copula => Box::new(fit_gaussian_copula(real)?),
            BaseSpec::Bootstrap { noise } => Box::new(noisy_bootstrap(real, *noise)?),
            BaseSpec::File { path, relaxed } => Box::new(load_samples(path, real.schema(), *relaxed, min_rows)?),
            BaseSpec::Oracle => {
                Box::new(OracleSampler::new(scm.ok_or_else(|| Error::validation("oracle base needs a known SCM"))?.clone()))
            }
        })
    }
}
