//! Treatment-effect estimators: outcome regression, IPW, AIPW and TMLE, plus
//! PEHE and the ensemble agreement score.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Table;
use crate::error::{Error, Result};
use crate::linalg::{self, logit, sigmoid, LinearFit, DEFAULT_RIDGE};

pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);
/// Scaled TMLE predictions are kept this far inside `(0, 1)`.
pub const TMLE_BOUND: f64 = 1e-6;
/// `ate_agreement` is undefined when the mean absolute real estimate is below this.
pub const AGREEMENT_MIN_DENOMINATOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Estimator {
    Or,
    Ipw,
    Aipw,
    Tmle,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Or, Estimator::Ipw, Estimator::Aipw, Estimator::Tmle];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Or => "OR",
            Estimator::Ipw => "IPW",
            Estimator::Aipw => "AIPW",
            Estimator::Tmle => "TMLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimator: Estimator,
    /// `None` exactly when the estimate failed; `flags` says why.
    pub ate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl EffectEstimate {
    fn ok(estimator: Estimator, ate: f64) -> Self {
        EffectEstimate { estimator, ate: Some(ate), clip_fraction: None, flags: Vec::new() }
    }

    fn failed(estimator: Estimator, why: impl Into<String>) -> Self {
        EffectEstimate { estimator, ate: None, clip_fraction: None, flags: vec![why.into()] }
    }
}

fn check_columns(table: &Table, cols: &[usize]) -> Result<()> {
    match cols.iter().find(|&&c| c >= table.n_cols()) {
        Some(c) => Err(Error::validation(format!("column index {c} out of range for {} columns", table.n_cols()))),
        None => Ok(()),
    }
}

fn binary_treatment(table: &Table, t: usize) -> Result<Vec<f64>> {
    let tv = table.column(t);
    if tv.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::validation(format!("treatment column '{}' is not binary", table.schema()[t].name)));
    }
    Ok(tv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propensity {
    pub scores: Vec<f64>,
    /// Fraction of rows whose raw score fell outside the clip bounds.
    pub clip_fraction: f64,
    pub converged: bool,
}

/// Logistic-regression propensity scores clipped to [`PROPENSITY_CLIP`].
pub fn fit_propensity(table: &Table, t: usize, covariates: &[usize]) -> Result<Propensity> {
    check_columns(table, covariates)?;
    let tv = binary_treatment(table, t)?;
    if tv.iter().all(|&v| v == tv[0]) {
        return Err(Error::validation("treatment has no variation"));
    }
    let x = linalg::select_columns(table.rows(), covariates);
    let fit = linalg::logistic_regression(&x, &tv, DEFAULT_RIDGE, 1e-8, 100)?;
    let (lo, hi) = PROPENSITY_CLIP;
    let raw = fit.predict_proba(&x);
    let clipped = raw.iter().filter(|&&p| p < lo || p > hi).count();
    Ok(Propensity {
        scores: raw.iter().map(|p| p.clamp(lo, hi)).collect(),
        clip_fraction: clipped as f64 / raw.len() as f64,
        converged: fit.converged,
    })
}

/// Coefficient of `T` in the linear regression `Y ~ T + X`.
pub fn ate_or(table: &Table, t: usize, y: usize, covariates: &[usize]) -> Result<f64> {
    check_columns(table, &[t, y])?;
    check_columns(table, covariates)?;
    let mut cols = vec![t];
    cols.extend(covariates.iter().filter(|&&c| c != t && c != y));
    let fit = linalg::least_squares(&linalg::select_columns(table.rows(), &cols), &table.column(y), DEFAULT_RIDGE)?;
    Ok(fit.coef[0])
}

/// `mean(T·Y/e) − mean((1−T)·Y/(1−e))`.
pub fn ate_ipw(table: &Table, t: usize, y: usize, scores: &[f64]) -> Result<f64> {
    let tv = binary_treatment(table, t)?;
    let yv = table.column(y);
    if scores.len() != tv.len() {
        return Err(Error::validation("one propensity score per row is required"));
    }
    let n = tv.len() as f64;
    Ok(tv.iter().zip(&yv).zip(scores).map(|((t, y), e)| t * y / e - (1.0 - t) * y / (1.0 - e)).sum::<f64>() / n)
}

/// Per-arm linear outcome models `μ̂₀`, `μ̂₁` over `covariates`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModels {
    pub covariates: Vec<usize>,
    pub mu0: LinearFit,
    pub mu1: LinearFit,
}

impl OutcomeModels {
    pub fn fit(table: &Table, t: usize, y: usize, covariates: &[usize]) -> Result<OutcomeModels> {
        check_columns(table, covariates)?;
        let tv = binary_treatment(table, t)?;
        let yv = table.column(y);
        let covariates: Vec<usize> = covariates.iter().copied().filter(|&c| c != t && c != y).collect();
        let arm = |value: f64| -> Result<LinearFit> {
            let idx: Vec<usize> = (0..tv.len()).filter(|&i| tv[i] == value).collect();
            if idx.len() < 2 {
                return Err(Error::validation(format!("treatment arm {value} has fewer than 2 rows")));
            }
            let x = DMatrix::from_fn(idx.len(), covariates.len(), |i, k| table.rows()[(idx[i], covariates[k])]);
            let ys: Vec<f64> = idx.iter().map(|&i| yv[i]).collect();
            linalg::least_squares(&x, &ys, DEFAULT_RIDGE)
        };
        Ok(OutcomeModels { mu0: arm(0.0)?, mu1: arm(1.0)?, covariates })
    }

    /// `(μ̂₀(x_i), μ̂₁(x_i))` for every row of `table`.
    pub fn predict(&self, table: &Table) -> (Vec<f64>, Vec<f64>) {
        let x = linalg::select_columns(table.rows(), &self.covariates);
        (self.mu0.predict(&x), self.mu1.predict(&x))
    }

    pub fn cate(&self, table: &Table) -> Vec<f64> {
        let (m0, m1) = self.predict(table);
        m1.iter().zip(&m0).map(|(a, b)| a - b).collect()
    }
}

/// Augmented IPW with the given outcome models.
pub fn ate_aipw(table: &Table, t: usize, y: usize, scores: &[f64], models: &OutcomeModels) -> Result<f64> {
    let tv = binary_treatment(table, t)?;
    let yv = table.column(y);
    if scores.len() != tv.len() {
        return Err(Error::validation("one propensity score per row is required"));
    }
    let (m0, m1) = models.predict(table);
    let n = tv.len() as f64;
    Ok((0..tv.len())
        .map(|i| {
            let (t, y, e) = (tv[i], yv[i], scores[i]);
            m1[i] - m0[i] + t * (y - m1[i]) / e - (1.0 - t) * (y - m0[i]) / (1.0 - e)
        })
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TmleResult {
    pub ate: f64,
    pub epsilon: f64,
    pub converged: bool,
    /// Outcome had no range; the estimate is zero.
    pub degenerate: bool,
}

/// Newton iterations for the fluctuation `logit Q* = logit Q + ε·H`.
fn fluctuation(offset: &[f64], h: &[f64], ys: &[f64]) -> (f64, bool) {
    let mut eps = 0.0;
    for _ in 0..100 {
        let mut score = 0.0;
        let mut info = 0.0;
        for ((o, h), y) in offset.iter().zip(h).zip(ys) {
            let p = sigmoid(o + eps * h);
            score += h * (y - p);
            info += h * h * p * (1.0 - p);
        }
        if score.abs() <= 1e-10 * offset.len() as f64 {
            return (eps, true);
        }
        if !(info > 0.0) || !info.is_finite() {
            return (eps, false);
        }
        eps += score / info;
        if !eps.is_finite() {
            return (0.0, false);
        }
    }
    (eps, false)
}

/// One-step TMLE on the min-max scaled outcome.
pub fn ate_tmle(table: &Table, t: usize, y: usize, scores: &[f64], models: &OutcomeModels) -> Result<TmleResult> {
    let tv = binary_treatment(table, t)?;
    let yv = table.column(y);
    if scores.len() != tv.len() {
        return Err(Error::validation("one propensity score per row is required"));
    }
    let lo = yv.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = yv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Ok(TmleResult { ate: 0.0, epsilon: 0.0, converged: true, degenerate: true });
    }
    let span = hi - lo;
    let scale = |v: f64| ((v - lo) / span).clamp(TMLE_BOUND, 1.0 - TMLE_BOUND);
    let (m0, m1) = models.predict(table);
    let q0: Vec<f64> = m0.iter().map(|&v| scale(v)).collect();
    let q1: Vec<f64> = m1.iter().map(|&v| scale(v)).collect();
    let ys: Vec<f64> = yv.iter().map(|v| (v - lo) / span).collect();
    let h: Vec<f64> = tv.iter().zip(scores).map(|(t, e)| t / e - (1.0 - t) / (1.0 - e)).collect();
    let offset: Vec<f64> = (0..tv.len()).map(|i| logit(if tv[i] == 1.0 { q1[i] } else { q0[i] })).collect();
    let (epsilon, converged) = fluctuation(&offset, &h, &ys);
    let n = tv.len() as f64;
    let ate = span
        * (0..tv.len())
            .map(|i| {
                let e = scores[i];
                sigmoid(logit(q1[i]) + epsilon / e) - sigmoid(logit(q0[i]) - epsilon / (1.0 - e))
            })
            .sum::<f64>()
        / n;
    Ok(TmleResult { ate, epsilon, converged, degenerate: false })
}

/// All four estimators. With a non-binary treatment only OR is available and
/// the others are returned as flagged failures.
pub fn estimate_all(table: &Table, t: usize, y: usize, covariates: &[usize]) -> Result<Vec<EffectEstimate>> {
    check_columns(table, &[t, y])?;
    let or = match ate_or(table, t, y, covariates) {
        Ok(v) => EffectEstimate::ok(Estimator::Or, v),
        Err(e) => EffectEstimate::failed(Estimator::Or, e.to_string()),
    };
    let rest = |why: String| [Estimator::Ipw, Estimator::Aipw, Estimator::Tmle].map(|e| EffectEstimate::failed(e, why.clone()));
    let mut out = vec![or];
    let prop = match fit_propensity(table, t, covariates) {
        Ok(p) => p,
        Err(e) => {
            out.extend(rest(e.to_string()));
            return Ok(out);
        }
    };
    let clip = Some(prop.clip_fraction);
    let mut ipw = match ate_ipw(table, t, y, &prop.scores) {
        Ok(v) => EffectEstimate::ok(Estimator::Ipw, v),
        Err(e) => EffectEstimate::failed(Estimator::Ipw, e.to_string()),
    };
    ipw.clip_fraction = clip;
    if !prop.converged {
        ipw.flags.push("propensity model did not converge".into());
    }
    out.push(ipw);
    let models = match OutcomeModels::fit(table, t, y, covariates) {
        Ok(m) => m,
        Err(e) => {
            out.extend([Estimator::Aipw, Estimator::Tmle].map(|k| EffectEstimate::failed(k, e.to_string())));
            return Ok(out);
        }
    };
    let aipw = ate_aipw(table, t, y, &prop.scores, &models)?;
    out.push(EffectEstimate { clip_fraction: clip, ..EffectEstimate::ok(Estimator::Aipw, aipw) });
    let tmle = ate_tmle(table, t, y, &prop.scores, &models)?;
    let mut est = EffectEstimate { clip_fraction: clip, ..EffectEstimate::ok(Estimator::Tmle, tmle.ate) };
    if tmle.degenerate {
        est.flags.push("degenerate outcome".into());
    }
    if !tmle.converged {
        est.ate = Some(aipw);
        est.flags.push("fluctuation did not converge; AIPW value used".into());
    }
    out.push(est);
    for e in &mut out {
        if matches!(e.ate, Some(v) if !v.is_finite()) {
            e.ate = None;
            e.flags.push("non-finite estimate".into());
        }
    }
    Ok(out)
}

/// Root mean squared difference between estimated and true individual effects.
pub fn pehe(tau_hat: &[f64], tau: &[f64]) -> Result<f64> {
    if tau_hat.len() != tau.len() || tau.is_empty() {
        return Err(Error::validation("PEHE needs equally many estimated and true effects"));
    }
    Ok((tau_hat.iter().zip(tau).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / tau.len() as f64).sqrt())
}

/// Fit per-arm outcome models on `syn` and score them against the true
/// individual effects `ite` of the rows of `truth`.
pub fn cate_pehe(syn: &Table, truth: &Table, ite: &[f64], t: usize, y: usize, covariates: &[usize]) -> Result<f64> {
    if ite.len() != truth.n_rows() {
        return Err(Error::validation("missing individual treatment effects for the truth table"));
    }
    if syn.schema_hash() != truth.schema_hash() {
        return Err(Error::SchemaMismatch("synthetic and truth tables have different schemas".into()));
    }
    pehe(&OutcomeModels::fit(syn, t, y, covariates)?.cate(truth), ite)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// `None` when the real estimates are all (near) zero.
    pub value: Option<f64>,
    pub real: Vec<EffectEstimate>,
    pub syn: Vec<EffectEstimate>,
    /// `|τ̂_l^syn − τ̂_l^real|` for each estimator used.
    pub components: Vec<(Estimator, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// `1 − mean_l |syn_l − real_l| / mean_l |real_l|`, clipped to `[0, 1]`.
/// `None` when the denominator is below [`AGREEMENT_MIN_DENOMINATOR`].
pub fn agreement_score(real: &[f64], syn: &[f64]) -> Option<f64> {
    assert_eq!(real.len(), syn.len(), "estimate vectors must align");
    if real.is_empty() {
        return None;
    }
    let l = real.len() as f64;
    let denom = real.iter().map(|r| r.abs()).sum::<f64>() / l;
    if denom < AGREEMENT_MIN_DENOMINATOR {
        return None;
    }
    let num = real.iter().zip(syn).map(|(r, s)| (s - r).abs()).sum::<f64>() / l;
    Some((1.0 - num / denom).clamp(0.0, 1.0))
}

/// Ensemble agreement between estimates on real and synthetic data. Estimators
/// that fail on either table are left out of both sums.
pub fn ate_agreement(real: &Table, syn: &Table, t: usize, y: usize, covariates: &[usize]) -> Result<Agreement> {
    if real.schema_hash() != syn.schema_hash() {
        return Err(Error::SchemaMismatch("real and synthetic tables have different schemas".into()));
    }
    let r = estimate_all(real, t, y, covariates)?;
    let s = estimate_all(syn, t, y, covariates)?;
    let mut flags = Vec::new();
    let (mut rv, mut sv, mut components) = (Vec::new(), Vec::new(), Vec::new());
    for (a, b) in r.iter().zip(&s) {
        match (a.ate, b.ate) {
            (Some(x), Some(y)) => {
                rv.push(x);
                sv.push(y);
                components.push((a.estimator, (y - x).abs()));
            }
            _ => flags.push(format!("{} unavailable", a.estimator.label())),
        }
    }
    let value = agreement_score(&rv, &sv);
    if value.is_none() {
        flags.push("real estimates are all near zero; agreement undefined".into());
    }
    for (e, c) in &components {
        log::debug!("ate agreement component {}: {c:.5}", e.label());
    }
    Ok(Agreement { value, real: r, syn: s, components, flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnSchema, Provenance};
    use crate::rng;
    use rand::RngExt;
    use rand_distr::{Distribution, StandardNormal};

    fn table(cols: &[(&str, bool)], rows: DMatrix<f64>) -> Table {
        let schema = cols
            .iter()
            .map(|&(n, b)| if b { ColumnSchema::binary(n) } else { ColumnSchema::continuous(n) })
            .collect();
        Table::new(schema, rows, Provenance::Real).unwrap()
    }

    fn normal(r: &mut crate::rng::Rng64) -> f64 {
        Distribution::<f64>::sample(&StandardNormal, r)
    }

    /// Confounded design: X ~ N(0,1), T ~ Bernoulli(σ(0.5 X)), Y = τT + X + ε.
    fn confounded(n: usize, tau: f64, seed: u64) -> Table {
        let mut r = rng::seeded(seed);
        let rows = DMatrix::from_fn(n, 3, |_, _| 0.0);
        let mut rows = rows;
        for i in 0..n {
            let x = normal(&mut r);
            let t = if r.random::<f64>() < sigmoid(0.5 * x) { 1.0 } else { 0.0 };
            rows[(i, 0)] = x;
            rows[(i, 1)] = t;
            rows[(i, 2)] = tau * t + x + normal(&mut r);
        }
        table(&[("x", false), ("t", true), ("y", false)], rows)
    }

    #[test]
    fn propensity_null_is_flat() {
        let mut r = rng::seeded(1);
        let n = 5000;
        let rows = DMatrix::from_fn(n, 2, |_, j| if j == 0 { normal(&mut r) } else if r.random::<f64>() < 0.5 { 1.0 } else { 0.0 });
        let t = table(&[("x", false), ("t", true)], rows);
        let p = fit_propensity(&t, 1, &[0]).unwrap();
        assert!(p.scores.iter().all(|s| (s - 0.5).abs() < 0.05));
        assert_eq!(p.clip_fraction, 0.0);
    }

    #[test]
    fn separable_propensity_is_clipped() {
        let n = 200;
        let rows = DMatrix::from_fn(n, 2, |i, j| if j == 0 { i as f64 / n as f64 - 0.5 } else if i >= n / 2 { 1.0 } else { 0.0 });
        let t = table(&[("x", false), ("t", true)], rows);
        let p = fit_propensity(&t, 1, &[0]).unwrap();
        assert!(p.clip_fraction > 0.5);
        assert!(p.scores.iter().all(|&s| (0.01..=0.99).contains(&s)));
    }

    #[test]
    fn constant_treatment_is_rejected() {
        let rows = DMatrix::from_fn(20, 2, |i, j| if j == 0 { i as f64 } else { 1.0 });
        let t = table(&[("x", false), ("t", true)], rows);
        assert!(matches!(fit_propensity(&t, 1, &[0]), Err(Error::Validation(_))));
    }

    #[test]
    fn outcome_regression_examples() {
        let rows = DMatrix::from_fn(10, 2, |i, _| (i % 2) as f64);
        let t = table(&[("t", true), ("y", false)], rows);
        assert!((ate_or(&t, 0, 1, &[]).unwrap() - 1.0).abs() < 1e-10);

        let mut r = rng::seeded(2);
        let n = 5000;
        let rows = DMatrix::from_fn(n, 2, |_, j| if j == 0 { (r.random::<f64>() < 0.5) as u8 as f64 } else { normal(&mut r) });
        let t = table(&[("t", true), ("y", false)], rows);
        assert!(ate_or(&t, 0, 1, &[]).unwrap().abs() < 0.06);

        let mut rows = DMatrix::zeros(n, 3);
        for i in 0..n {
            let x = normal(&mut r);
            let tt = (r.random::<f64>() < sigmoid(x)) as u8 as f64;
            rows[(i, 0)] = x;
            rows[(i, 1)] = tt;
            rows[(i, 2)] = 2.0 * tt + 3.0 * x;
        }
        let t = table(&[("x", false), ("t", true), ("y", false)], rows);
        assert!((ate_or(&t, 1, 2, &[0]).unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn ipw_examples() {
        let rows = DMatrix::from_fn(10, 2, |i, _| (i % 2) as f64);
        let t = table(&[("t", true), ("y", false)], rows);
        assert!((ate_ipw(&t, 0, 1, &[0.5; 10]).unwrap() - 1.0).abs() < 1e-15);
        let rows = DMatrix::from_fn(10, 2, |i, j| if j == 0 { (i % 2) as f64 } else { 0.0 });
        let t = table(&[("t", true), ("y", false)], rows);
        assert_eq!(ate_ipw(&t, 0, 1, &[0.3; 10]).unwrap(), 0.0);
    }

    #[test]
    fn aipw_with_perfect_outcome_models_is_plug_in() {
        let mut r = rng::seeded(3);
        let n = 300;
        let mut rows = DMatrix::zeros(n, 3);
        // Both arms are observed at x = ±1, so every prediction lies inside the outcome range.
        for i in 0..n {
            let (x, tt) = match i {
                0..4 => (if i % 2 == 0 { -1.0 } else { 1.0 }, (i / 2) as f64),
                _ => (r.random_range(-1.0..1.0), (r.random::<f64>() < 0.4) as u8 as f64),
            };
            rows[(i, 0)] = x;
            rows[(i, 1)] = tt;
            rows[(i, 2)] = 1.0 + 2.0 * x + tt * (0.5 - x);
        }
        let t = table(&[("x", false), ("t", true), ("y", false)], rows);
        let models = OutcomeModels::fit(&t, 1, 2, &[0]).unwrap();
        let plug_in = crate::data::mean(&models.cate(&t));
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0.05..0.95)).collect();
        assert!((ate_aipw(&t, 1, 2, &scores, &models).unwrap() - plug_in).abs() < 1e-9);
        let tmle = ate_tmle(&t, 1, 2, &scores, &models).unwrap();
        // The extreme rows sit on the scaling clamp, so ε is zero only up to that bound.
        assert!(tmle.epsilon.abs() < 1e-5);
        assert!((tmle.ate - plug_in).abs() < 1e-5);
    }

    #[test]
    fn constant_outcome_gives_zero() {
        let rows = DMatrix::from_fn(20, 3, |i, j| match j {
            0 => i as f64,
            1 => (i % 2) as f64,
            _ => 4.0,
        });
        let t = table(&[("x", false), ("t", true), ("y", false)], rows);
        let models = OutcomeModels::fit(&t, 1, 2, &[0]).unwrap();
        assert!(ate_aipw(&t, 1, 2, &[0.5; 20], &models).unwrap().abs() < 1e-12);
        let tmle = ate_tmle(&t, 1, 2, &[0.5; 20], &models).unwrap();
        assert!(tmle.degenerate && tmle.ate == 0.0);
    }

    #[test]
    fn arm_with_one_row_is_rejected() {
        let rows = DMatrix::from_fn(10, 3, |i, j| if j == 1 { (i == 0) as u8 as f64 } else { i as f64 });
        let t = table(&[("x", false), ("t", true), ("y", false)], rows);
        assert!(OutcomeModels::fit(&t, 1, 2, &[0]).is_err());
    }

    #[test]
    fn ensemble_recovers_confounded_effect() {
        let t = confounded(5000, 1.5, 4);
        let est = estimate_all(&t, 1, 2, &[0]).unwrap();
        assert_eq!(est.len(), 4);
        for e in &est {
            let v = e.ate.unwrap();
            assert!((v - 1.5).abs() < 0.15, "{:?} gave {v}", e.estimator);
        }
        // Ignoring the confounder biases the naive contrast upward.
        let naive = ate_or(&t, 1, 2, &[]).unwrap();
        assert!(naive > 1.7);
    }

    #[test]
    fn continuous_treatment_only_supports_or() {
        let mut r = rng::seeded(5);
        let rows = DMatrix::from_fn(200, 2, |_, _| normal(&mut r));
        let t = table(&[("t", false), ("y", false)], rows);
        let est = estimate_all(&t, 0, 1, &[]).unwrap();
        assert!(est[0].ate.is_some());
        assert!(est[1..].iter().all(|e| e.ate.is_none() && !e.flags.is_empty()));
    }

    #[test]
    fn pehe_examples() {
        assert_eq!(pehe(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((pehe(&[2.0, 3.0, -1.0], &[1.0, 2.0, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(pehe(&[1.0], &[]).is_err());
    }

    #[test]
    fn agreement_examples() {
        let real = [0.1; 4];
        assert_eq!(agreement_score(&real, &real), Some(1.0));
        assert_eq!(agreement_score(&real, &[0.2; 4]), Some(0.0));
        assert_eq!(agreement_score(&[2.0, -2.0, 4.0, -4.0], &[3.5, -3.5, 5.5, -5.5]), Some(0.5));
        assert_eq!(agreement_score(&[0.0; 4], &[0.1; 4]), None);
        assert_eq!(agreement_score(&[1.0; 4], &[5.0; 4]), Some(0.0));
    }

    #[test]
    fn agreement_on_tables() {
        let real = confounded(2000, 1.0, 6);
        let same = ate_agreement(&real, &real, 1, 2, &[0]).unwrap();
        assert_eq!(same.value, Some(1.0));
        assert_eq!(same.components.len(), 4);
        let other = confounded(2000, 1.0, 7);
        let a = ate_agreement(&real, &other, 1, 2, &[0]).unwrap().value.unwrap();
        assert!(a > 0.8 && a < 1.0);
    }
}
