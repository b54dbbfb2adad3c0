//! Differentiable loss terms: residualized HSIC for forbidden edges, the
//! monotonicity hinge, and the moment-matching utility surrogate.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Table;
use crate::error::{Error, Result};
use crate::knowledge::CausalKnowledge;
use crate::linalg::{self, sigmoid, LinearFit, LogisticFit, DEFAULT_RIDGE};
use crate::nn::{CorrectionMap, ParamGrads};

pub const BANDWIDTH_FLOOR: f64 = 1e-6;
const MEDIAN_SUBSAMPLE: usize = 1000;

/// `σ²` for the kernel `exp(−(u−v)²/(2σ²))`: the median pairwise squared
/// distance over at most 1,000 evenly spaced points, floored at 1e-6.
pub fn median_heuristic(x: &[f64]) -> f64 {
    let m = x.len();
    if m < 2 {
        return BANDWIDTH_FLOOR;
    }
    let pts: Vec<f64> = if m > MEDIAN_SUBSAMPLE {
        (0..MEDIAN_SUBSAMPLE).map(|k| x[k * m / MEDIAN_SUBSAMPLE]).collect()
    } else {
        x.to_vec()
    };
    let mut d2 = Vec::with_capacity(pts.len() * (pts.len() - 1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d2.push((pts[i] - pts[j]).powi(2));
        }
    }
    linalg::median(&mut d2).max(BANDWIDTH_FLOOR)
}

/// Gram matrix of one column plus its doubly centered version.
struct ColumnKernel {
    x: Vec<f64>,
    sigma2: f64,
    k: DMatrix<f64>,
    kc: DMatrix<f64>,
}

fn gram(x: &[f64], sigma2: f64) -> DMatrix<f64> {
    let m = x.len();
    let mut k = DMatrix::from_element(m, m, 1.0);
    let inv = -0.5 / sigma2;
    for j in 0..m {
        for i in j + 1..m {
            let v = (inv * (x[i] - x[j]).powi(2)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let m = k.nrows();
    let col_means: Vec<f64> = k.column_iter().map(|c| c.sum() / m as f64).collect();
    let grand = col_means.iter().sum::<f64>() / m as f64;
    // k is symmetric, so row means equal column means.
    DMatrix::from_fn(m, m, |i, j| k[(i, j)] - col_means[i] - col_means[j] + grand)
}

impl ColumnKernel {
    fn new(x: Vec<f64>, sigma2: f64) -> ColumnKernel {
        let k = gram(&x, sigma2);
        let kc = center(&k);
        ColumnKernel { x, sigma2, k, kc }
    }
}

fn pair_value(a: &ColumnKernel, b: &ColumnKernel) -> f64 {
    let m = a.x.len() as f64;
    a.k.iter().zip(b.kc.iter()).map(|(p, q)| p * q).sum::<f64>() / (m * m)
}

/// `∂ HSIC / ∂ x_i = −2/(m²σ²) Σ_j Lc_ij K_ij (x_i − x_j)`.
fn pair_grad(own: &ColumnKernel, other: &ColumnKernel) -> Vec<f64> {
    let m = own.x.len();
    let scale = -2.0 / ((m * m) as f64 * own.sigma2);
    (0..m)
        .map(|i| {
            let xi = own.x[i];
            // Both matrices are symmetric; walk column i contiguously.
            let (lc, k) = (other.kc.column(i), own.k.column(i));
            let s: f64 = (0..m).map(|j| lc[j] * k[j] * (xi - own.x[j])).sum();
            scale * s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hsic {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
}

/// Biased HSIC `(1/m²) tr(K H L H)` with Gaussian kernels of squared
/// bandwidths `sx2`, `sy2`, and its exact gradients.
pub fn hsic(x: &[f64], y: &[f64], sx2: f64, sy2: f64) -> Result<Hsic> {
    if x.len() != y.len() {
        return Err(Error::validation("HSIC inputs differ in length"));
    }
    if x.len() < 4 {
        return Err(Error::validation("HSIC needs at least 4 samples"));
    }
    let a = ColumnKernel::new(x.to_vec(), sx2.max(BANDWIDTH_FLOOR));
    let b = ColumnKernel::new(y.to_vec(), sy2.max(BANDWIDTH_FLOOR));
    Ok(Hsic { value: pair_value(&a, &b), grad_x: pair_grad(&a, &b), grad_y: pair_grad(&b, &a) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EdgeFit {
    Linear(LinearFit),
    Logistic(LogisticFit),
}

/// Frozen regression of column `target` on its trusted parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeModel {
    pub target: usize,
    pub parents: Vec<usize>,
    pub fit: EdgeFit,
}

impl EdgeModel {
    fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let vals = self.parents.iter().map(|&p| x[(i, p)]);
        match &self.fit {
            EdgeFit::Linear(f) => f.predict_row(vals),
            EdgeFit::Logistic(f) => sigmoid(f.score_row(vals)),
        }
    }

    fn coef(&self) -> &[f64] {
        match &self.fit {
            EdgeFit::Linear(f) => &f.coef,
            EdgeFit::Logistic(f) => &f.coef,
        }
    }
}

/// One edge model per column with a nonempty trusted parent set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeModels {
    pub d: usize,
    pub models: Vec<EdgeModel>,
}

/// Fit edge models on real (standardized) data: least squares for
/// continuous targets, Newton logistic regression for binary ones.
pub fn fit_edge_models(real: &Table, k: &CausalKnowledge) -> Result<EdgeModels> {
    if k.d() != real.n_cols() {
        return Err(Error::validation(format!("knowledge covers {} columns, table has {}", k.d(), real.n_cols())));
    }
    let pa = k.trusted_parents();
    let mut models = Vec::new();
    for j in 0..real.n_cols() {
        let parents = pa.of(j).to_vec();
        if parents.is_empty() {
            continue;
        }
        let x = linalg::select_columns(real.rows(), &parents);
        let y = real.column(j);
        let fit = if real.schema()[j].is_binary() {
            EdgeFit::Logistic(linalg::logistic_regression(&x, &y, DEFAULT_RIDGE, 1e-8, 100)?)
        } else {
            EdgeFit::Linear(linalg::least_squares(&x, &y, DEFAULT_RIDGE)?)
        };
        models.push(EdgeModel { target: j, parents, fit });
    }
    Ok(EdgeModels { d: real.n_cols(), models })
}

impl EdgeModels {
    pub fn none(d: usize) -> EdgeModels {
        EdgeModels { d, models: Vec::new() }
    }

    /// `X̃_j = X_j − m̂_j(X_{Pa⁺(j)})`, or `X_j` when unmodeled.
    pub fn residualize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = x.clone();
        for m in &self.models {
            for i in 0..x.nrows() {
                r[(i, m.target)] -= m.predict_row(x, i);
            }
        }
        r
    }

    /// Pull a gradient wrt residuals back to the batch.
    pub fn backprop(&self, x: &DMatrix<f64>, grad_resid: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = grad_resid.clone();
        for m in &self.models {
            let coef = m.coef();
            for i in 0..x.nrows() {
                let up = grad_resid[(i, m.target)];
                if up == 0.0 {
                    continue;
                }
                let slope = match &m.fit {
                    EdgeFit::Linear(_) => 1.0,
                    EdgeFit::Logistic(_) => {
                        let p = m.predict_row(x, i);
                        p * (1.0 - p)
                    }
                };
                for (&p, &c) in m.parents.iter().zip(coef) {
                    g[(i, p)] -= up * slope * c;
                }
            }
        }
        g
    }
}

/// Per-column squared bandwidths, frozen for one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths(pub Vec<f64>);

impl Bandwidths {
    pub fn from_residuals(resid: &DMatrix<f64>) -> Bandwidths {
        Bandwidths(resid.column_iter().map(|c| median_heuristic(c.as_slice())).collect())
    }
}

/// Uniform subsample of at most `cap` pair indices, sorted.
pub fn sample_pairs<R: Rng + ?Sized>(n_pairs: usize, cap: usize, rng: &mut R) -> Vec<usize> {
    if n_pairs <= cap {
        return (0..n_pairs).collect();
    }
    let mut idx = index::sample(rng, n_pairs, cap).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiPenalty {
    /// `(forbidden index, w·HSIC)` for each evaluated pair.
    pub components: Vec<(usize, f64)>,
    /// Gradient of `Σ coef_c · component_c` wrt the batch.
    pub grad: DMatrix<f64>,
}

/// Maps `(component index, component value)` to the loss multiplier on that
/// component, so the gradient of `Σ_c M_c · value_c` is accumulated.
pub type Multiplier<'a> = &'a dyn Fn(usize, f64) -> f64;

/// Weighted residual-HSIC over the forbidden pairs listed in `pairs`.
/// Gradients are accumulated only when `coef` is given.
pub fn ci_penalty(
    batch: &DMatrix<f64>,
    models: &EdgeModels,
    k: &CausalKnowledge,
    bw: &Bandwidths,
    pairs: &[usize],
    coef: Option<Multiplier>,
) -> Result<CiPenalty> {
    let (m, d) = batch.shape();
    let mut grad = DMatrix::zeros(m, d);
    if pairs.is_empty() {
        return Ok(CiPenalty { components: Vec::new(), grad });
    }
    if m < 4 {
        return Err(Error::validation("HSIC needs at least 4 samples"));
    }
    let resid = models.residualize(batch);
    let mut used = vec![false; d];
    for &p in pairs {
        let f = &k.forbidden[p];
        used[f.from] = true;
        used[f.to] = true;
    }
    let kernels: Vec<Option<ColumnKernel>> = (0..d)
        .map(|j| used[j].then(|| ColumnKernel::new(resid.column(j).iter().copied().collect(), bw.0[j])))
        .collect();
    let mut components = Vec::with_capacity(pairs.len());
    let mut grad_resid = DMatrix::zeros(m, d);
    for &p in pairs {
        let f = &k.forbidden[p];
        let (a, b) = (kernels[f.from].as_ref().expect("kernel"), kernels[f.to].as_ref().expect("kernel"));
        let value = f.weight * pair_value(a, b);
        components.push((p, value));
        if let Some(coef) = coef {
            let c = coef(p, value) * f.weight;
            if c != 0.0 {
                for (i, g) in pair_grad(a, b).into_iter().enumerate() {
                    grad_resid[(i, f.from)] += c * g;
                }
                for (i, g) in pair_grad(b, a).into_iter().enumerate() {
                    grad_resid[(i, f.to)] += c * g;
                }
            }
        }
    }
    if coef.is_some() {
        grad = models.backprop(batch, &grad_resid);
    }
    Ok(CiPenalty { components, grad })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonoPenalty {
    pub components: Vec<f64>,
    /// Gradient of `Σ coef_c · component_c` wrt the corrected batch `f(x̃)`.
    pub grad_output: DMatrix<f64>,
    /// Parameter gradient contributed through the twin forward passes.
    pub twin_grads: ParamGrads,
}

/// Clamp flagged columns to `[0, 1]`; the mask is 1 where the gradient
/// passes through and 0 where the clamp is active.
pub fn clamp_binary(x: &DMatrix<f64>, binary: &[bool]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut out = x.clone();
    let mut mask = DMatrix::from_element(x.nrows(), x.ncols(), 1.0);
    for (j, &b) in binary.iter().enumerate() {
        if !b {
            continue;
        }
        for i in 0..x.nrows() {
            let v = x[(i, j)];
            if !(0.0..=1.0).contains(&v) {
                out[(i, j)] = v.clamp(0.0, 1.0);
                mask[(i, j)] = 0.0;
            }
        }
    }
    (out, mask)
}

/// Twin-sample hinge: for each `(i, j, S, σ)` forward `x̃` and `x̃ + δe_i`
/// and average `max(0, −σ(x′_j − x_j))` over the batch. `corrected` is
/// `f(x̃)` (already clamped where `binary` is set); twin outputs are clamped
/// on the same columns.
pub fn mono_penalty(
    map: &CorrectionMap,
    base: &DMatrix<f64>,
    corrected: &DMatrix<f64>,
    k: &CausalKnowledge,
    delta: f64,
    binary: &[bool],
    coef: Option<Multiplier>,
) -> Result<MonoPenalty> {
    if delta <= 0.0 {
        return Err(Error::validation("monotonicity step must be positive"));
    }
    let (m, d) = base.shape();
    let mut grad_output = DMatrix::zeros(m, d);
    let mut twin_grads = ParamGrads::zeros_like(map);
    let mut components = Vec::with_capacity(k.monotone.len());
    for (c, con) in k.monotone.iter().enumerate() {
        let mut twin = base.clone();
        for i in 0..m {
            twin[(i, con.cause)] += delta;
        }
        let (raw, tape) = map.forward(&twin)?;
        let (out, mask) = clamp_binary(&raw, binary);
        let s = con.sign.value();
        let violated: Vec<bool> =
            (0..m).map(|i| -s * (out[(i, con.effect)] - corrected[(i, con.effect)]) > 0.0).collect();
        let total: f64 = (0..m)
            .filter(|&i| violated[i])
            .map(|i| -s * (out[(i, con.effect)] - corrected[(i, con.effect)]))
            .sum();
        let value = total / m as f64;
        components.push(value);
        let weight = coef.map_or(0.0, |f| f(c, value));
        if weight != 0.0 {
            let mut g_twin = DMatrix::zeros(m, d);
            for i in (0..m).filter(|&i| violated[i]) {
                g_twin[(i, con.effect)] = -s * weight * mask[(i, con.effect)] / m as f64;
                grad_output[(i, con.effect)] += s * weight / m as f64;
            }
            let (g, _) = map.backward(&tape, &g_twin)?;
            twin_grads.add_assign(&g);
        }
    }
    Ok(MonoPenalty { components, grad_output, twin_grads })
}

fn col_means(x: &DMatrix<f64>) -> Vec<f64> {
    x.column_iter().map(|c| c.sum() / x.nrows() as f64).collect()
}

fn covariance(x: &DMatrix<f64>, mu: &[f64]) -> DMatrix<f64> {
    let m = x.nrows() as f64;
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mu[j]);
    centered.transpose() * &centered / m
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utility {
    pub value: f64,
    pub grad: DMatrix<f64>,
}

/// `‖mean(c) − mean(r)‖² + ‖cov(c) − cov(r)‖²_F + id_weight · mean_i ‖c_i − b_i‖²`,
/// with covariances over denominator `m`; gradient is wrt `corrected`.
pub fn utility_surrogate(
    real: &DMatrix<f64>,
    corrected: &DMatrix<f64>,
    base: &DMatrix<f64>,
    id_weight: f64,
) -> Result<Utility> {
    if real.nrows() < 2 || corrected.nrows() < 2 {
        return Err(Error::validation("utility surrogate needs at least 2 rows per batch"));
    }
    if real.ncols() != corrected.ncols() || corrected.shape() != base.shape() {
        return Err(Error::validation("utility surrogate batches differ in shape"));
    }
    let (m, d) = corrected.shape();
    let mf = m as f64;
    let mu_c = col_means(corrected);
    let mu_r = col_means(real);
    let dmu: Vec<f64> = mu_c.iter().zip(&mu_r).map(|(a, b)| a - b).collect();
    let dcov = covariance(corrected, &mu_c) - covariance(real, &mu_r);
    let diff = corrected - base;
    let value = dmu.iter().map(|v| v * v).sum::<f64>() + dcov.norm_squared() + id_weight * diff.norm_squared() / mf;
    let centered = DMatrix::from_fn(m, d, |i, j| corrected[(i, j)] - mu_c[j]);
    let mut grad = centered * &dcov * (4.0 / mf);
    for i in 0..m {
        for j in 0..d {
            grad[(i, j)] += 2.0 * dmu[j] / mf + 2.0 * id_weight * diff[(i, j)] / mf;
        }
    }
    Ok(Utility { value, grad })
}

/// Everything fixed for one training run that the combined penalty needs.
#[derive(Debug, Clone)]
pub struct PenaltyContext {
    pub knowledge: CausalKnowledge,
    pub models: EdgeModels,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub id_weight: f64,
    /// Columns clamped to `[0, 1]` inside the constraint penalties.
    pub binary: Vec<bool>,
}

/// How constraint components enter the training loss.
#[derive(Debug, Clone, Copy)]
pub enum Weighting<'a> {
    /// Values only, no gradients.
    ValuesOnly,
    /// `Σ_c w_c Ω_c`.
    Linear(&'a [f64]),
    /// `Σ_c μ_c Ω_c + (λ/2) Σ_c Ω_c²`.
    Augmented { mu: &'a [f64], lambda: f64 },
}

impl Weighting<'_> {
    /// `∂ loss / ∂ Ω_c` at the current value of `Ω_c`.
    pub fn multiplier(&self, c: usize, omega: f64) -> f64 {
        match self {
            Weighting::ValuesOnly => 0.0,
            Weighting::Linear(w) => w[c],
            Weighting::Augmented { mu, lambda } => mu[c] + lambda * omega,
        }
    }

    /// Contribution of the given components to the loss.
    pub fn loss(&self, components: &[Option<f64>]) -> f64 {
        components
            .iter()
            .enumerate()
            .filter_map(|(c, o)| o.map(|o| (c, o)))
            .map(|(c, o)| match self {
                Weighting::ValuesOnly => 0.0,
                Weighting::Linear(w) => w[c] * o,
                Weighting::Augmented { mu, lambda } => mu[c] * o + 0.5 * lambda * o * o,
            })
            .sum()
    }
}

/// Values and gradients of one evaluation of every loss term.
#[derive(Debug, Clone)]
pub struct PenaltyBundle {
    pub utility: f64,
    /// `Ω_c` for forbidden pairs (scaled by `α w`) then monotone constraints
    /// (scaled by `β`); `None` for pairs not sampled this step.
    pub components: Vec<Option<f64>>,
    pub grads: Option<ParamGrads>,
}

impl PenaltyBundle {
    pub fn total(&self) -> f64 {
        self.components.iter().flatten().sum()
    }
}

impl PenaltyContext {
    pub fn n_components(&self) -> usize {
        self.knowledge.forbidden.len() + self.knowledge.monotone.len()
    }

    pub fn component_names(&self) -> Vec<String> {
        let k = &self.knowledge;
        let n = |j: usize| k.columns[j].as_str();
        k.forbidden
            .iter()
            .map(|f| format!("ci:{}->{}", n(f.from), n(f.to)))
            .chain(k.monotone.iter().map(|c| format!("mono:{}->{}", n(c.cause), n(c.effect))))
            .collect()
    }

    /// Evaluate the utility and the constraint components on `f(base)`,
    /// with parameter gradients of `U + weighting(Ω)` unless `ValuesOnly`.
    /// `pairs` selects which forbidden pairs to measure.
    pub fn evaluate(
        &self,
        map: &CorrectionMap,
        real: &DMatrix<f64>,
        base: &DMatrix<f64>,
        bw: &Bandwidths,
        pairs: &[usize],
        weighting: Weighting,
    ) -> Result<PenaltyBundle> {
        let k = &self.knowledge;
        let n_ci = k.forbidden.len();
        let want_grads = !matches!(weighting, Weighting::ValuesOnly);
        let (corrected, tape) = map.forward(base)?;
        let util = utility_surrogate(real, &corrected, base, self.id_weight)?;
        let mut components = vec![None; self.n_components()];

        let ci_pairs: &[usize] = if self.alpha == 0.0 { &[] } else { pairs };
        let alpha = self.alpha;
        let ci_coef = move |p: usize, v: f64| alpha * weighting.multiplier(p, alpha * v);
        let (clamped, mask) = clamp_binary(&corrected, &self.binary);
        let ci = ci_penalty(&clamped, &self.models, k, bw, ci_pairs, want_grads.then_some(&ci_coef as Multiplier))?;
        for &p in pairs {
            components[p] = Some(0.0);
        }
        for &(p, v) in &ci.components {
            components[p] = Some(self.alpha * v);
        }

        let beta = self.beta;
        let mono_coef = move |c: usize, v: f64| beta * weighting.multiplier(n_ci + c, beta * v);
        let mono = if self.beta == 0.0 {
            None
        } else {
            let coef = want_grads.then_some(&mono_coef as Multiplier);
            Some(mono_penalty(map, base, &clamped, k, self.delta, &self.binary, coef)?)
        };
        for c in 0..k.monotone.len() {
            components[n_ci + c] = Some(mono.as_ref().map_or(0.0, |mp| self.beta * mp.components[c]));
        }

        let grads = match want_grads {
            false => None,
            true => {
                let mut g_con = ci.grad;
                if let Some(mp) = &mono {
                    g_con += &mp.grad_output;
                }
                let g_out = util.grad + g_con.component_mul(&mask);
                let (mut g, _) = map.backward(&tape, &g_out)?;
                if let Some(mp) = &mono {
                    g.add_assign(&mp.twin_grads);
                }
                Some(g)
            }
        };
        Ok(PenaltyBundle { utility: util.value, components, grads })
    }
}
