//! Distributional, utility and structural metrics, and the per-run report.

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ColumnStats, Provenance, Table};
use crate::error::{Error, Result};
use crate::estimators::{self, EffectEstimate, Estimator};
use crate::knowledge::CausalKnowledge;
use crate::linalg::{self, DEFAULT_RIDGE};
use crate::penalties::{fit_edge_models, EdgeModels};
use crate::rng;

pub const MMD_SUBSAMPLE: usize = 2000;
const MMD_BANDWIDTH_POINTS: usize = 1000;
pub const JSD_BINS: usize = 20;
pub const CI_PASS_THRESHOLD: f64 = 0.08;
pub const TSTR_TEST_FRACTION: f64 = 0.2;
pub const REPORT_VERSION: u32 = 1;

fn same_schema(a: &Table, b: &Table) -> Result<()> {
    if a.schema_hash() != b.schema_hash() {
        return Err(Error::SchemaMismatch(format!("tables differ: {:?} vs {:?}", a.names(), b.names())));
    }
    Ok(())
}

fn subsample(rows: &DMatrix<f64>, cap: usize, r: &mut rng::Rng64) -> DMatrix<f64> {
    if rows.nrows() <= cap {
        return rows.clone();
    }
    let mut idx = index::sample(r, rows.nrows(), cap).into_vec();
    idx.sort_unstable();
    DMatrix::from_fn(cap, rows.ncols(), |i, j| rows[(idx[i], j)])
}

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|k| (a[(i, k)] - b[(j, k)]).powi(2)).sum()
}

fn mean_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, inv: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            s += (inv * sq_dist(a, i, b, j)).exp();
        }
    }
    s / (a.nrows() * b.nrows()) as f64
}

/// Biased RBF-kernel MMD² on at most [`MMD_SUBSAMPLE`] rows of each table,
/// after standardizing both with their pooled statistics. The bandwidth is the
/// median pairwise squared distance over points drawn evenly from both tables.
/// Symmetric in its arguments.
pub fn mmd(a: &Table, b: &Table, seed: u64) -> Result<f64> {
    same_schema(a, b)?;
    let pooled = a.with_rows(
        DMatrix::from_fn(a.n_rows() + b.n_rows(), a.n_cols(), |i, j| {
            if i < a.n_rows() { a.rows()[(i, j)] } else { b.rows()[(i - a.n_rows(), j)] }
        }),
        a.provenance(),
    )?;
    let stats = ColumnStats::fit(&pooled);
    let x = subsample(&stats.apply(a.rows()), MMD_SUBSAMPLE, &mut rng::stream(seed, "mmd"));
    let y = subsample(&stats.apply(b.rows()), MMD_SUBSAMPLE, &mut rng::stream(seed, "mmd"));
    let even = |m: &DMatrix<f64>| -> Vec<usize> {
        let k = (MMD_BANDWIDTH_POINTS / 2).min(m.nrows());
        (0..k).map(|i| i * m.nrows() / k).collect()
    };
    let mut pts: Vec<Vec<f64>> = even(&x).into_iter().map(|i| x.row(i).iter().copied().collect()).collect();
    pts.extend(even(&y).into_iter().map(|i| y.row(i).iter().copied().collect::<Vec<f64>>()));
    pts.sort_by(|p, q| p.iter().zip(q).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let mut d2 = Vec::with_capacity(pts.len() * pts.len() / 2);
    for (i, p) in pts.iter().enumerate() {
        for q in &pts[i + 1..] {
            d2.push(p.iter().zip(q).map(|(u, v)| (u - v).powi(2)).sum::<f64>());
        }
    }
    let sigma2 = if d2.is_empty() { 1.0 } else { linalg::median(&mut d2).max(1e-12) };
    let inv = -1.0 / (2.0 * sigma2);
    let v = mean_kernel(&x, &x, inv) + mean_kernel(&y, &y, inv) - 2.0 * mean_kernel(&x, &y, inv);
    Ok(v.max(0.0))
}

fn jsd_counts(p: &[f64], q: &[f64]) -> f64 {
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    let mut v = 0.0;
    for (a, b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        if a > 0.0 {
            v += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            v += 0.5 * b * (b / m).ln();
        }
    }
    v.max(0.0)
}

/// Jensen–Shannon divergence of one column pair, natural log, add-one smoothed.
pub fn column_jsd(real: &[f64], syn: &[f64], kind: ColumnKind) -> f64 {
    match kind {
        ColumnKind::Binary => {
            let ones = |c: &[f64]| c.iter().filter(|&&v| v >= 0.5).count() as f64;
            let (a, b) = (ones(real), ones(syn));
            jsd_counts(&[a + 1.0, real.len() as f64 - a + 1.0], &[b + 1.0, syn.len() as f64 - b + 1.0])
        }
        ColumnKind::Continuous => {
            let lo = real.iter().chain(syn).cloned().fold(f64::INFINITY, f64::min);
            let hi = real.iter().chain(syn).cloned().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return 0.0;
            }
            let hist = |c: &[f64]| {
                let mut h = vec![1.0; JSD_BINS];
                for &v in c {
                    let b = (((v - lo) / (hi - lo)) * JSD_BINS as f64).floor() as usize;
                    h[b.min(JSD_BINS - 1)] += 1.0;
                }
                h
            };
            jsd_counts(&hist(real), &hist(syn))
        }
    }
}

/// Per-column JSD; the reported metric is their mean.
pub fn jsd_columns(real: &Table, syn: &Table) -> Result<Vec<f64>> {
    same_schema(real, syn)?;
    Ok(real.schema().iter().enumerate().map(|(j, c)| column_jsd(&real.column(j), &syn.column(j), c.kind)).collect())
}

pub fn jsd(real: &Table, syn: &Table) -> Result<f64> {
    Ok(crate::data::mean(&jsd_columns(real, syn)?))
}

/// Seeded 80/20 split of the real rows into (train, test).
pub fn split_train_test(real: &Table, seed: u64) -> (Table, Table) {
    let mut idx: Vec<usize> = (0..real.n_rows()).collect();
    idx.shuffle(&mut rng::stream(seed, "tstr-split"));
    let n_test = ((real.n_rows() as f64) * TSTR_TEST_FRACTION).round() as usize;
    let (test, train) = idx.split_at(n_test);
    (real.select_rows(train), real.select_rows(test))
}

/// How the TSTR label is read from a table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TstrLabel {
    pub column: usize,
    /// Continuous labels are `1` above this threshold.
    pub threshold: Option<f64>,
}

impl TstrLabel {
    /// Binary columns are used as is; continuous ones are split at the median
    /// of `reference`.
    pub fn for_column(reference: &Table, column: usize) -> TstrLabel {
        let threshold = match reference.schema()[column].kind {
            ColumnKind::Binary => None,
            ColumnKind::Continuous => Some(linalg::median(&mut reference.column(column))),
        };
        TstrLabel { column, threshold }
    }

    fn labels(&self, t: &Table) -> Vec<f64> {
        t.column(self.column)
            .into_iter()
            .map(|v| match self.threshold {
                Some(th) => (v > th) as u8 as f64,
                None => (v >= 0.5) as u8 as f64,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tstr {
    pub accuracy: f64,
    /// Training labels had a single class; the majority rule was used.
    pub single_class: bool,
}

/// Logistic regression trained on `syn_train`, accuracy on `real_test`.
pub fn tstr(real_test: &Table, syn_train: &Table, label: TstrLabel) -> Result<Tstr> {
    same_schema(real_test, syn_train)?;
    let features: Vec<usize> = (0..real_test.n_cols()).filter(|&j| j != label.column).collect();
    let y_train = label.labels(syn_train);
    let y_test = label.labels(real_test);
    let n_test = y_test.len() as f64;
    let positives = y_train.iter().sum::<f64>();
    if positives == 0.0 || positives == y_train.len() as f64 {
        let class = if positives == 0.0 { 0.0 } else { 1.0 };
        let acc = y_test.iter().filter(|&&y| y == class).count() as f64 / n_test;
        return Ok(Tstr { accuracy: acc, single_class: true });
    }
    // Features are standardized with the training statistics for conditioning.
    let stats = ColumnStats::fit(syn_train);
    let x_train = linalg::select_columns(&stats.apply(syn_train.rows()), &features);
    let x_test = linalg::select_columns(&stats.apply(real_test.rows()), &features);
    let fit = linalg::logistic_regression(&x_train, &y_train, DEFAULT_RIDGE, 1e-8, 100)?;
    let correct = fit.predict_proba(&x_test).iter().zip(&y_test).filter(|(p, y)| ((**p >= 0.5) as u8 as f64) == **y).count();
    Ok(Tstr { accuracy: correct as f64 / n_test, single_class: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiPass {
    pub rate: f64,
    /// Residual correlation of each forbidden pair, in knowledge order.
    pub correlations: Vec<f64>,
    /// No forbidden pairs; the rate is reported as 1.
    pub empty: bool,
}

pub fn ci_passes(corr: f64) -> bool {
    corr.abs() < CI_PASS_THRESHOLD
}

/// Fraction of forbidden pairs whose residual correlation on `syn_std` (already
/// standardized with the real statistics) is below the threshold.
pub fn ci_pass_rate(syn_std: &DMatrix<f64>, k: &CausalKnowledge, models: &EdgeModels) -> CiPass {
    if k.forbidden.is_empty() {
        return CiPass { rate: 1.0, correlations: Vec::new(), empty: true };
    }
    let resid = models.residualize(syn_std);
    let correlations: Vec<f64> = k
        .forbidden
        .iter()
        .map(|e| linalg::pearson(resid.column(e.from).as_slice(), resid.column(e.to).as_slice()))
        .collect();
    let passed = correlations.iter().filter(|&&c| ci_passes(c)).count();
    CiPass { rate: passed as f64 / correlations.len() as f64, correlations, empty: false }
}

/// Causal quantities a report can be scored against.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub ate: f64,
    /// Rows with their true individual effects, for PEHE.
    pub ite: Option<(&'a Table, &'a [f64])>,
}

pub struct EvalInputs<'a> {
    pub real: &'a Table,
    pub syn: &'a Table,
    pub knowledge: &'a CausalKnowledge,
    pub seed: u64,
    /// Treatment and outcome columns.
    pub effect: Option<(usize, usize)>,
    pub covariates: Vec<usize>,
    pub truth: Option<Truth<'a>>,
    pub tstr_label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub report_version: u32,
    pub seed: u64,
    pub real_provenance: Provenance,
    pub syn_provenance: Provenance,
    pub mmd: f64,
    pub jsd: f64,
    pub jsd_columns: Vec<f64>,
    pub tstr: f64,
    pub tstr_label: String,
    pub ci_pass: f64,
    pub ci_correlations: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ate_syn: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ate_true: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ate_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pehe: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ate_agreement: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimates: Vec<EffectEstimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agreement_components: Vec<(Estimator, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn finite(name: &str, v: f64, flags: &mut Vec<String>) -> Option<f64> {
    if v.is_finite() {
        Some(v)
    } else {
        flags.push(format!("{name} is not finite"));
        None
    }
}

/// Every metric for one synthetic table. With ground truth the ATE error (and
/// PEHE when individual effects are given) is reported; without it the
/// estimator-ensemble agreement with the real table is reported instead.
pub fn assemble_report(inp: &EvalInputs) -> Result<EvalReport> {
    let (real, syn) = (inp.real, inp.syn);
    same_schema(real, syn)?;
    if syn.n_rows() == 0 || real.n_rows() == 0 {
        return Err(Error::validation("evaluation needs non-empty real and synthetic tables"));
    }
    if inp.tstr_label >= real.n_cols() {
        return Err(Error::validation("TSTR label column out of range"));
    }
    let mut flags = Vec::new();
    let mmd = mmd(real, syn, inp.seed)?;
    let jsd_columns = jsd_columns(real, syn)?;
    let (train, test) = split_train_test(real, inp.seed);
    let label = TstrLabel::for_column(&train, inp.tstr_label);
    let t = tstr(&test, syn, label)?;
    if t.single_class {
        flags.push("TSTR training labels have a single class".into());
    }
    let stats = ColumnStats::fit(real);
    let real_std = real.with_rows(stats.apply(real.rows()), real.provenance())?;
    let models = fit_edge_models(&real_std, inp.knowledge)?;
    let ci = ci_pass_rate(&stats.apply(syn.rows()), inp.knowledge, &models);
    if ci.empty {
        flags.push("no forbidden pairs; CI pass reported as 1".into());
    }
    let mut report = EvalReport {
        report_version: REPORT_VERSION,
        seed: inp.seed,
        real_provenance: real.provenance(),
        syn_provenance: syn.provenance(),
        mmd,
        jsd: crate::data::mean(&jsd_columns),
        jsd_columns,
        tstr: t.accuracy,
        tstr_label: real.schema()[inp.tstr_label].name.clone(),
        ci_pass: ci.rate,
        ci_correlations: ci.correlations,
        ate_syn: None,
        ate_true: None,
        ate_error: None,
        pehe: None,
        ate_agreement: None,
        estimates: Vec::new(),
        agreement_components: Vec::new(),
        flags: Vec::new(),
    };
    if let Some((tc, yc)) = inp.effect {
        match inp.truth {
            Some(truth) => {
                report.ate_true = Some(truth.ate);
                match estimators::ate_or(syn, tc, yc, &inp.covariates) {
                    Ok(v) => {
                        report.ate_syn = finite("synthetic ATE", v, &mut flags);
                        report.ate_error = report.ate_syn.map(|v| (v - truth.ate).abs());
                    }
                    Err(e) => flags.push(format!("ATE estimate failed: {e}")),
                }
                if let Some((rows, ite)) = truth.ite {
                    let covs: Vec<usize> = (0..syn.n_cols()).filter(|&c| c != tc && c != yc).collect();
                    match estimators::cate_pehe(syn, rows, ite, tc, yc, &covs) {
                        Ok(v) => report.pehe = finite("PEHE", v, &mut flags),
                        Err(e) => flags.push(format!("PEHE unavailable: {e}")),
                    }
                }
            }
            None => {
                let a = estimators::ate_agreement(real, syn, tc, yc, &inp.covariates)?;
                report.ate_agreement = a.value;
                report.estimates = a.syn;
                report.agreement_components = a.components;
                flags.extend(a.flags);
            }
        }
    }
    for (name, v) in [("MMD", report.mmd), ("JSD", report.jsd), ("TSTR", report.tstr), ("CI pass", report.ci_pass)] {
        if !v.is_finite() {
            return Err(Error::numeric(format!("{name} is not finite")));
        }
    }
    report.flags = flags;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnSchema;
    use crate::knowledge::parse_knowledge_str;
    use rand::RngExt;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, shift: f64, seed: u64) -> Table {
        let mut r = rng::seeded(seed);
        let rows = DMatrix::from_fn(n, d, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut r) + shift);
        let schema = (0..d).map(|j| ColumnSchema::continuous(format!("x{j}"))).collect();
        Table::new(schema, rows, Provenance::Real).unwrap()
    }

    fn bernoulli(n: usize, p: f64, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| (r.random::<f64>() < p) as u8 as f64).collect()
    }

    #[test]
    fn mmd_examples() {
        let a = gaussian(2000, 3, 0.0, 1);
        assert!(mmd(&a, &a, 0).unwrap() <= 1e-12);
        let mut null = Vec::new();
        for s in 0..10 {
            let v = mmd(&gaussian(2000, 3, 0.0, 100 + s), &gaussian(2000, 3, 0.0, 200 + s), s).unwrap();
            assert!(v < 0.005, "null MMD {v}");
            null.push(v);
        }
        let shifted = mmd(&gaussian(2000, 3, 0.0, 1), &gaussian(2000, 3, 1.0, 2), 0).unwrap();
        assert!(shifted > null.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn mmd_is_symmetric() {
        let (a, b) = (gaussian(2500, 2, 0.0, 3), gaussian(800, 2, 0.3, 4));
        let ab = mmd(&a, &b, 5).unwrap();
        let ba = mmd(&b, &a, 5).unwrap();
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn jsd_examples() {
        let a = gaussian(1000, 2, 0.0, 5);
        assert!(jsd(&a, &a).unwrap() < 1e-3);
        let zeros = vec![0.0; 5000];
        let ones = vec![1.0; 5000];
        let max = column_jsd(&zeros, &ones, ColumnKind::Binary);
        // Entropy form of JSD for the smoothed laws Bernoulli(1/5002) and Bernoulli(5001/5002).
        let h = |p: f64| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        let (p, q) = (1.0 / 5002.0, 5001.0 / 5002.0);
        let oracle = h(0.5 * (p + q)) - 0.5 * (h(p) + h(q));
        assert!((max - oracle).abs() < 1e-12);
        assert!(max < 2f64.ln() && 2f64.ln() - max < 0.01);
        for s in 0..10 {
            let v = column_jsd(&bernoulli(5000, 0.3, s), &bernoulli(5000, 0.3, 100 + s), ColumnKind::Binary);
            assert!(v < 1e-3);
        }
        let b = gaussian(1000, 2, 0.5, 6);
        let (ab, ba) = (jsd(&a, &b).unwrap(), jsd(&b, &a).unwrap());
        assert!((ab - ba).abs() < 1e-12);
        assert!(jsd_columns(&a, &b).unwrap().iter().all(|&v| (0.0..=2f64.ln()).contains(&v)));
    }

    fn labelled(n: usize, separable: bool, seed: u64) -> Table {
        let mut r = rng::seeded(seed);
        let mut rows = DMatrix::zeros(n, 3);
        for i in 0..n {
            let x0: f64 = Distribution::<f64>::sample(&StandardNormal, &mut r);
            let x1: f64 = Distribution::<f64>::sample(&StandardNormal, &mut r);
            rows[(i, 0)] = x0;
            rows[(i, 1)] = x1;
            rows[(i, 2)] = if separable { (x0 + x1 > 0.0) as u8 as f64 } else { (r.random::<f64>() < 0.7) as u8 as f64 };
        }
        let schema = vec![ColumnSchema::continuous("a"), ColumnSchema::continuous("b"), ColumnSchema::binary("y")];
        Table::new(schema, rows, Provenance::Real).unwrap()
    }

    #[test]
    fn tstr_examples() {
        let real = labelled(5000, true, 7);
        let (train, test) = split_train_test(&real, 1);
        assert_eq!(test.n_rows(), 1000);
        let label = TstrLabel::for_column(&train, 2);
        let on_real = tstr(&test, &train, label).unwrap();
        assert!(on_real.accuracy > 0.95);
        assert_eq!(tstr(&test, &train, label).unwrap(), on_real);

        let null = labelled(5000, false, 8);
        let (train, test) = split_train_test(&null, 1);
        let acc = tstr(&test, &train, TstrLabel::for_column(&train, 2)).unwrap().accuracy;
        let prior = crate::data::mean(&test.column(2));
        assert!((acc - prior.max(1.0 - prior)).abs() < 0.03);
    }

    #[test]
    fn tstr_single_class_uses_majority() {
        let real = labelled(500, true, 9);
        let mut rows = real.rows().clone();
        rows.column_mut(2).fill(1.0);
        let syn = real.with_rows(rows, Provenance::Corrected).unwrap();
        let t = tstr(&real, &syn, TstrLabel::for_column(&real, 2)).unwrap();
        assert!(t.single_class);
        assert!((t.accuracy - crate::data::mean(&real.column(2))).abs() < 1e-15);
    }

    #[test]
    fn continuous_labels_split_at_median() {
        let a = gaussian(101, 2, 0.0, 10);
        let label = TstrLabel::for_column(&a, 1);
        let pos = label.labels(&a).iter().sum::<f64>();
        assert_eq!(pos, 50.0);
    }

    #[test]
    fn ci_pass_examples() {
        let k = parse_knowledge_str("[forbidden]\na -> b\n", &["a".to_string(), "b".to_string()]).unwrap();
        let indep = gaussian(5000, 2, 0.0, 11);
        let models = fit_edge_models(&indep, &k).unwrap();
        assert_eq!(ci_pass_rate(indep.rows(), &k, &models).rate, 1.0);
        let mut same = indep.rows().clone();
        let a = same.column(0).clone_owned();
        same.set_column(1, &a);
        let c = ci_pass_rate(&same, &k, &models);
        assert_eq!(c.rate, 0.0);
        assert!((c.correlations[0] - 1.0).abs() < 1e-12);
        assert!(!ci_passes(0.08) && !ci_passes(-0.08) && ci_passes(0.0799));
        let none = crate::knowledge::CausalKnowledge::empty(vec!["a".into(), "b".into()]);
        let e = ci_pass_rate(indep.rows(), &none, &models);
        assert!(e.empty && e.rate == 1.0);
    }

    #[test]
    fn reports_switch_between_truth_and_agreement() {
        let real = labelled(1000, true, 12);
        let other = labelled(1000, true, 13);
        let syn = other.with_rows(other.rows().clone(), Provenance::BaseSynthetic).unwrap();
        let k = parse_knowledge_str("[forbidden]\na -> b\n", &real.names()).unwrap();
        let base = EvalInputs { real: &real, syn: &syn, knowledge: &k, seed: 0, effect: Some((2, 0)), covariates: vec![1], truth: None, tstr_label: 2 };
        let r = assemble_report(&base).unwrap();
        assert!(r.ate_error.is_none());
        assert!(r.ate_agreement.is_some());
        let json = r.to_json().unwrap();
        assert!(!json.contains("ate_error"));
        let with_truth = EvalInputs { truth: Some(Truth { ate: 0.5, ite: None }), ..base };
        let r = assemble_report(&with_truth).unwrap();
        assert!(r.ate_error.is_some() && r.ate_agreement.is_none());
        assert!((r.ate_error.unwrap() - (r.ate_syn.unwrap() - 0.5).abs()).abs() < 1e-15);
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
