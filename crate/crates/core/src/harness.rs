//! Benchmark and ablation runs over simulated SCMs.
//!
//! A cell is one (family, seed) pair. Each cell draws its own SCM, training
//! table, ground truth and knowledge from streams derived from the seed, so
//! cells can run in any order and in parallel while the aggregate output stays
//! byte-identical.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alm::{generate, train, AlmConfig, Checkpoint, TrainingProblem};
use crate::base_gen::{BaseSpec, OracleSampler, Sampler};
use crate::data::{self, standardize, Table};
use crate::error::{Error, Result};
use crate::knowledge::{derive_knowledge_from_scm, CausalKnowledge, DeriveOptions};
use crate::metrics::{assemble_report, EvalInputs, EvalReport, Truth};
use crate::rng;
use crate::scm::{random_scm, Family, MonteCarloAte, Scm, ScmParams};

/// Give up on a cell after this many SCM draws without a usable graph.
pub const MAX_SCM_ATTEMPTS: usize = 1000;

/// Minimum relative oracle headroom for a gap-closed value to be shown.
pub const GAP_MIN_HEADROOM: f64 = 0.05;

/// How each simulated problem instance is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub d: usize,
    pub expected_degree: f64,
    pub scm: ScmParams,
    pub n_train: usize,
    pub n_mc: usize,
    /// Rows with known individual effects used for PEHE.
    pub pehe_rows: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            d: 10,
            expected_degree: 2.0,
            scm: ScmParams::default(),
            n_train: 5000,
            n_mc: 100_000,
            pehe_rows: 2000,
        }
    }
}

/// One simulated problem: SCM, training data, ground truth and derived knowledge.
#[derive(Debug, Clone)]
pub struct Instance {
    pub family: Family,
    pub seed: u64,
    pub scm: Scm,
    pub real: Table,
    pub treatment: usize,
    pub outcome: usize,
    pub truth: MonteCarloAte,
    pub ite_rows: Table,
    pub ite: Vec<f64>,
}

/// Seed of the cell for `family` and run seed `seed`.
pub fn cell_seed(family: Family, seed: u64) -> u64 {
    rng::derive_seed(seed, &format!("cell/{}", family.tag()))
}

impl Instance {
    /// Draw an SCM until the sink has an ancestor and the graph has at least
    /// `min_edges` edges, then sample everything else from it.
    pub fn build(family: Family, seed: u64, sim: &SimulationConfig, min_edges: usize) -> Result<Instance> {
        let cell = cell_seed(family, seed);
        let mut r = rng::stream(cell, "scm");
        let (scm, (treatment, outcome)) = (0..MAX_SCM_ATTEMPTS)
            .find_map(|_| {
                let scm = random_scm(family, sim.d, sim.expected_degree, &sim.scm, &mut r).ok()?;
                if scm.edges().len() < min_edges.max(1) {
                    return None;
                }
                let ty = scm.choose_treatment_outcome().ok()?;
                Some((scm, ty))
            })
            .ok_or_else(|| Error::validation(format!("no SCM with a causal path after {MAX_SCM_ATTEMPTS} draws")))?;
        let real = scm.ancestral_sample(sim.n_train, &mut rng::stream(cell, "train"), None)?;
        let truth = scm.ground_truth_ate(treatment, outcome, sim.n_mc, rng::derive_seed(cell, "truth"));
        let (rows, ite) = scm.sample_with_ite(sim.pehe_rows, treatment, outcome, &mut rng::stream(cell, "ite"));
        let ite_rows = real.with_rows(rows, real.provenance())?;
        Ok(Instance { family, seed, scm, real, treatment, outcome, truth, ite_rows, ite })
    }

    pub fn cell_seed(&self) -> u64 {
        cell_seed(self.family, self.seed)
    }

    pub fn knowledge(&self, opts: &DeriveOptions) -> Result<CausalKnowledge> {
        derive_knowledge_from_scm(&self.scm, opts, &mut rng::stream(self.cell_seed(), "knowledge"))
    }

    /// Columns before the treatment in topological order.
    pub fn pre_treatment(&self) -> Vec<usize> {
        let pos = self.scm.order.iter().position(|&j| j == self.treatment).expect("treatment in order");
        let mut c = self.scm.order[..pos].to_vec();
        c.sort_unstable();
        c
    }

    /// Report against the ground truth; PEHE is scored only for a binary treatment.
    pub fn evaluate(&self, syn: &Table, knowledge: &CausalKnowledge) -> Result<EvalReport> {
        assemble_report(&EvalInputs {
            real: &self.real,
            syn,
            knowledge,
            seed: rng::derive_seed(self.cell_seed(), "eval"),
            effect: Some((self.treatment, self.outcome)),
            covariates: self.pre_treatment(),
            truth: Some(Truth {
                ate: self.truth.ate,
                ite: self.scm.is_binary(self.treatment).then_some((&self.ite_rows, self.ite.as_slice())),
            }),
            tstr_label: self.outcome,
        })
    }

    pub fn sampler(&self, base: &BaseSpec) -> Result<Box<dyn Sampler>> {
        base.build(&self.real, Some(&self.scm), 1)
    }

    /// Base samples. Corrected samples are drawn from the same stream, so
    /// each corrected row is the image of the matching base row.
    pub fn base_samples(&self, sampler: &dyn Sampler, n: usize) -> Result<Table> {
        sampler.sample(n, &mut rng::stream(self.cell_seed(), "syn"))
    }

    /// Train the correction map around `sampler` and draw `n` corrected rows.
    pub fn wrap(&self, sampler: &dyn Sampler, knowledge: &CausalKnowledge, alm: &AlmConfig, n: usize) -> Result<Wrapped> {
        let (real_std, stats) = standardize(&self.real, false)?;
        let cfg = AlmConfig { seed: rng::derive_seed(self.cell_seed(), "alm"), ..alm.clone() };
        let problem = TrainingProblem::new(&real_std, &stats, sampler, knowledge, &cfg)?;
        let state = train(&problem, &cfg)?;
        let checkpoint = Checkpoint::new(self.real.schema(), &stats, &cfg, &state, false);
        let syn = generate(&state.map, sampler, n, &checkpoint, &mut rng::stream(self.cell_seed(), "syn"))?;
        Ok(Wrapped { syn, monitor: state.log.monitor_totals() })
    }
}

pub struct Wrapped {
    pub syn: Table,
    /// Total penalty on the monitor batch before training and after each outer iteration.
    pub monitor: Vec<f64>,
}

/// Settings for the Tier-1 style benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub families: Vec<Family>,
    pub seeds: Vec<u64>,
    pub simulation: SimulationConfig,
    pub n_syn: usize,
    pub bases: Vec<BaseSpec>,
    pub knowledge: DeriveOptions,
    pub alm: AlmConfig,
    pub oracle: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            families: vec![Family::LinearGaussian, Family::NonlinearAdditive, Family::MixedType],
            seeds: (0..5).collect(),
            simulation: SimulationConfig::default(),
            n_syn: 5000,
            bases: vec![BaseSpec::Copula, BaseSpec::Bootstrap { noise: 0.5 }],
            knowledge: DeriveOptions::default(),
            alm: AlmConfig::default(),
            oracle: true,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.alm.validate()?;
        if self.families.is_empty() || self.seeds.is_empty() {
            return Err(Error::validation("benchmark needs at least one family and one seed"));
        }
        if self.bases.iter().any(|b| matches!(b, BaseSpec::Oracle)) {
            return Err(Error::validation("the oracle is added by the 'oracle' switch, not as a base"));
        }
        if self.n_syn < 2 || self.simulation.n_train < 10 {
            return Err(Error::validation("benchmark needs n_syn ≥ 2 and n_train ≥ 10"));
        }
        Ok(())
    }
}

/// One evaluated synthetic table in the aggregate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub family: String,
    pub seed: u64,
    pub setting: String,
    pub generator: String,
    pub mmd: Option<f64>,
    pub jsd: Option<f64>,
    pub tstr: Option<f64>,
    pub ci_pass: Option<f64>,
    pub ate_true: Option<f64>,
    pub ate_syn: Option<f64>,
    pub ate_error: Option<f64>,
    pub pehe: Option<f64>,
    pub omega_initial: Option<f64>,
    pub omega_final: Option<f64>,
    pub flags: String,
}

impl CellRow {
    fn new(family: Family, seed: u64, setting: &str, generator: String) -> CellRow {
        CellRow {
            family: family.tag().into(),
            seed,
            setting: setting.into(),
            generator,
            mmd: None,
            jsd: None,
            tstr: None,
            ci_pass: None,
            ate_true: None,
            ate_syn: None,
            ate_error: None,
            pehe: None,
            omega_initial: None,
            omega_final: None,
            flags: String::new(),
        }
    }

    fn fill(mut self, report: Result<EvalReport>) -> CellRow {
        match report {
            Ok(r) => {
                self.mmd = Some(r.mmd);
                self.jsd = Some(r.jsd);
                self.tstr = Some(r.tstr);
                self.ci_pass = Some(r.ci_pass);
                self.ate_true = r.ate_true;
                self.ate_syn = r.ate_syn;
                self.ate_error = r.ate_error;
                self.pehe = r.pehe;
                self.flags = r.flags.join("; ");
            }
            Err(e) => self.fail(&e),
        }
        self
    }

    fn fail(&mut self, e: &Error) {
        if !self.flags.is_empty() {
            self.flags.push_str("; ");
        }
        self.flags.push_str(&format!("failed: {e}"));
    }

    pub fn failed(&self) -> bool {
        self.flags.contains("failed:")
    }
}

/// Generator label of the corrected version of `base`.
pub fn cw_label(base: &BaseSpec) -> String {
    format!("{}+CW", base.label())
}

pub const ORACLE_LABEL: &str = "oracle";

fn run_base(inst: &Instance, base: &BaseSpec, k: &CausalKnowledge, alm: &AlmConfig, n: usize, setting: &str) -> Vec<CellRow> {
    let row = |g: String| CellRow::new(inst.family, inst.seed, setting, g);
    let sampler = match inst.sampler(base) {
        Ok(s) => s,
        Err(e) => {
            return [base.label(), cw_label(base)]
                .into_iter()
                .map(|g| {
                    let mut r = row(g);
                    r.fail(&e);
                    r
                })
                .collect()
        }
    };
    let base_row = row(base.label()).fill(inst.base_samples(sampler.as_ref(), n).and_then(|s| inst.evaluate(&s, k)));
    let mut cw_row = row(cw_label(base));
    match inst.wrap(sampler.as_ref(), k, alm, n) {
        Ok(w) => {
            cw_row = cw_row.fill(inst.evaluate(&w.syn, k));
            cw_row.omega_initial = w.monitor.first().copied();
            cw_row.omega_final = w.monitor.last().copied();
        }
        Err(e) => cw_row.fail(&e),
    }
    vec![base_row, cw_row]
}

fn run_benchmark_cell(cfg: &BenchmarkConfig, family: Family, seed: u64) -> Vec<CellRow> {
    let mut generators: Vec<String> = cfg.bases.iter().flat_map(|b| [b.label(), cw_label(b)]).collect();
    if cfg.oracle {
        generators.push(ORACLE_LABEL.into());
    }
    let failed_all = |e: Error| {
        generators
            .iter()
            .map(|g| {
                let mut r = CellRow::new(family, seed, "", g.clone());
                r.fail(&e);
                r
            })
            .collect()
    };
    let inst = match Instance::build(family, seed, &cfg.simulation, cfg.knowledge.n_mono) {
        Ok(i) => i,
        Err(e) => return failed_all(e),
    };
    let k = match inst.knowledge(&cfg.knowledge) {
        Ok(k) => k,
        Err(e) => return failed_all(e),
    };
    log::info!("cell {}/{seed}: {} edges, T={} Y={}", family.tag(), inst.scm.edges().len(), inst.treatment, inst.outcome);
    let mut rows: Vec<CellRow> = cfg.bases.iter().flat_map(|b| run_base(&inst, b, &k, &cfg.alm, cfg.n_syn, "")).collect();
    if cfg.oracle {
        let oracle = OracleSampler::new(inst.scm.clone());
        rows.push(CellRow::new(family, seed, "", ORACLE_LABEL.into()).fill(inst.base_samples(&oracle, cfg.n_syn).and_then(|s| inst.evaluate(&s, &k))));
    }
    rows
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::validation(format!("cannot start worker pool: {e}")))
}

/// Run every (family, seed) cell on `jobs` threads; rows come back in
/// family, seed, generator order regardless of scheduling.
pub fn run_benchmark(cfg: &BenchmarkConfig, jobs: usize) -> Result<Vec<CellRow>> {
    cfg.validate()?;
    let cells: Vec<(Family, u64)> = cfg.families.iter().flat_map(|&f| cfg.seeds.iter().map(move |&s| (f, s))).collect();
    let rows: Vec<Vec<CellRow>> = pool(jobs.max(1))?.install(|| cells.par_iter().map(|&(f, s)| run_benchmark_cell(cfg, f, s)).collect());
    Ok(rows.into_iter().flatten().collect())
}

/// `(e_base − e_cw) / (e_base − e_oracle)`, or `None` when the oracle is no
/// better than the base or its relative headroom is under 5%.
pub fn gap_closed(e_base: f64, e_cw: f64, e_oracle: f64) -> Option<f64> {
    if e_oracle >= e_base || (e_base - e_oracle) / e_base < GAP_MIN_HEADROOM {
        return None;
    }
    Some((e_base - e_cw) / (e_base - e_oracle))
}

/// `(cw − base) / base × 100`.
pub fn delta_pct(e_base: f64, e_cw: f64) -> f64 {
    (e_cw - e_base) / e_base * 100.0
}

/// One line of the Tier-1 summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub base: String,
    /// SCM family tag, or `Overall`.
    pub family: String,
    pub e_base: Option<f64>,
    pub e_cw: Option<f64>,
    pub e_oracle: Option<f64>,
    pub delta_pct: Option<f64>,
    pub gap_closed: Option<f64>,
    pub n_seeds: usize,
}

fn mean_of(rows: &[&CellRow], f: impl Fn(&CellRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (!v.is_empty()).then(|| data::mean(&v))
}

fn summary_row(base: &str, family: &str, e_base: Option<f64>, e_cw: Option<f64>, e_oracle: Option<f64>, n_seeds: usize) -> SummaryRow {
    let delta = match (e_base, e_cw) {
        (Some(b), Some(c)) if b > 0.0 => Some(delta_pct(b, c)),
        _ => None,
    };
    let gap = match (e_base, e_cw, e_oracle) {
        (Some(b), Some(c), Some(o)) => gap_closed(b, c, o),
        _ => None,
    };
    SummaryRow { base: base.into(), family: family.into(), e_base, e_cw, e_oracle, delta_pct: delta, gap_closed: gap, n_seeds }
}

/// Seed-averaged ATE errors per (base, family) with Δ% and gap closed, plus
/// an `Overall` row per base that averages the family errors unweighted
/// before forming Δ% and gap closed.
pub fn summarize(cfg: &BenchmarkConfig, rows: &[CellRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    let err = |fam: &str, gen: &str| -> (Option<f64>, usize) {
        let sel: Vec<&CellRow> = rows.iter().filter(|r| r.family == fam && r.generator == gen && r.ate_error.is_some()).collect();
        (mean_of(&sel, |r| r.ate_error), sel.len())
    };
    for base in &cfg.bases {
        let mut fam_rows = Vec::new();
        for fam in &cfg.families {
            let (b, n) = err(fam.tag(), &base.label());
            let (c, _) = err(fam.tag(), &cw_label(base));
            let (o, _) = err(fam.tag(), ORACLE_LABEL);
            fam_rows.push(summary_row(&base.label(), fam.tag(), b, c, o, n));
        }
        let avg = |f: fn(&SummaryRow) -> Option<f64>| -> Option<f64> {
            let v: Option<Vec<f64>> = fam_rows.iter().map(f).collect();
            v.map(|v| data::mean(&v))
        };
        let overall = summary_row(&base.label(), "Overall", avg(|r| r.e_base), avg(|r| r.e_cw), avg(|r| r.e_oracle), cfg.seeds.len());
        out.extend(fam_rows);
        out.push(overall);
    }
    out
}

/// Percent or `--` as printed in the summary table.
pub fn format_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:+.1}%"),
        None => "--".into(),
    }
}

/// Which ablation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    ConstraintType,
    KnowledgeFraction,
    WrongEdges,
    AlmVsFixed,
    E0,
}

impl AblationKind {
    pub const ALL: [AblationKind; 5] = [
        AblationKind::ConstraintType,
        AblationKind::KnowledgeFraction,
        AblationKind::WrongEdges,
        AblationKind::AlmVsFixed,
        AblationKind::E0,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AblationKind::ConstraintType => "constraint_type",
            AblationKind::KnowledgeFraction => "knowledge_fraction",
            AblationKind::WrongEdges => "wrong_edges",
            AblationKind::AlmVsFixed => "alm_vs_fixed",
            AblationKind::E0 => "e0",
        }
    }

    pub fn parse(s: &str) -> Result<AblationKind> {
        AblationKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::validation(format!("unknown ablation '{s}'")))
    }

    /// Settings swept, in output order.
    pub fn settings(self) -> Vec<Setting> {
        match self {
            AblationKind::ConstraintType => [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.0, 0.0)]
                .into_iter()
                .map(|(alpha, beta)| Setting::Weights { alpha, beta })
                .collect(),
            AblationKind::KnowledgeFraction => [0.0, 0.25, 0.5, 0.75, 1.0].into_iter().map(Setting::Reveal).collect(),
            AblationKind::WrongEdges => [0.0, 0.1, 0.3, 0.5].into_iter().map(Setting::Corrupt).collect(),
            AblationKind::AlmVsFixed => {
                let mut s = vec![Setting::Alm];
                s.extend([0.1, 1.0, 10.0].into_iter().map(Setting::Fixed));
                s
            }
            AblationKind::E0 => vec![Setting::NoForbidden, Setting::FullKnowledge],
        }
    }
}

/// One configuration within an ablation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting {
    Weights { alpha: f64, beta: f64 },
    Reveal(f64),
    Corrupt(f64),
    Alm,
    Fixed(f64),
    NoForbidden,
    FullKnowledge,
}

impl Setting {
    pub fn label(self) -> String {
        match self {
            Setting::Weights { alpha, beta } => format!("alpha={alpha},beta={beta}"),
            Setting::Reveal(r) => format!("reveal={r}"),
            Setting::Corrupt(c) => format!("corrupt={c}"),
            Setting::Alm => "alm".into(),
            Setting::Fixed(l) => format!("fixed={l}"),
            Setting::NoForbidden => "e0=empty".into(),
            Setting::FullKnowledge => "e0=full".into(),
        }
    }

    /// Knowledge options and ALM config for this setting.
    fn apply(self, opts: &DeriveOptions, alm: &AlmConfig) -> (DeriveOptions, AlmConfig) {
        let (mut o, mut a) = (*opts, alm.clone());
        match self {
            Setting::Weights { alpha, beta } => {
                a.alpha = alpha;
                a.beta = beta;
            }
            Setting::Reveal(r) => o.reveal_fraction = r,
            Setting::Corrupt(c) => o.corrupt_fraction = c,
            Setting::Alm => a.fixed_lambda = None,
            Setting::Fixed(l) => a.fixed_lambda = Some(l),
            Setting::NoForbidden | Setting::FullKnowledge => {}
        }
        (o, a)
    }
}

/// An ablation reuses the benchmark settings and only the first base
/// generator. Without a `benchmark` table the run is LG with the noisy
/// bootstrap; fields missing from a given table take the benchmark defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub kind: AblationKind,
    pub benchmark: BenchmarkConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            kind: AblationKind::AlmVsFixed,
            benchmark: BenchmarkConfig {
                families: vec![Family::LinearGaussian],
                bases: vec![BaseSpec::Bootstrap { noise: 0.5 }],
                oracle: false,
                ..BenchmarkConfig::default()
            },
        }
    }
}

/// Ablation output: aggregate rows plus the monitor curve of every
/// corrected run, keyed like the rows.
pub struct AblationRun {
    pub rows: Vec<CellRow>,
    pub curves: Vec<(String, String, u64, Vec<f64>)>,
}

fn run_ablation_cell(cfg: &AblationConfig, family: Family, seed: u64) -> (Vec<CellRow>, Vec<(String, String, u64, Vec<f64>)>) {
    let b = &cfg.benchmark;
    let base = &b.bases[0];
    let settings = cfg.kind.settings();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let fail_setting = |rows: &mut Vec<CellRow>, s: &Setting, e: &Error| {
        for g in [base.label(), cw_label(base)] {
            let mut r = CellRow::new(family, seed, &s.label(), g);
            r.fail(e);
            rows.push(r);
        }
    };
    let inst = match Instance::build(family, seed, &b.simulation, b.knowledge.n_mono) {
        Ok(i) => i,
        Err(e) => {
            settings.iter().for_each(|s| fail_setting(&mut rows, s, &e));
            return (rows, curves);
        }
    };
    let sampler = match inst.sampler(base) {
        Ok(s) => s,
        Err(e) => {
            settings.iter().for_each(|s| fail_setting(&mut rows, s, &e));
            return (rows, curves);
        }
    };
    let base_syn = inst.base_samples(sampler.as_ref(), b.n_syn);
    for s in &settings {
        let (opts, alm) = s.apply(&b.knowledge, &b.alm);
        let k = match inst.knowledge(&opts) {
            Ok(k) if *s == Setting::NoForbidden => k.without_forbidden(),
            Ok(k) => k,
            Err(e) => {
                fail_setting(&mut rows, s, &e);
                continue;
            }
        };
        let label = s.label();
        let base_report = match &base_syn {
            Ok(t) => inst.evaluate(t, &k),
            Err(e) => Err(Error::validation(format!("base sampling failed: {e}"))),
        };
        rows.push(CellRow::new(family, seed, &label, base.label()).fill(base_report));
        let mut cw = CellRow::new(family, seed, &label, cw_label(base));
        match inst.wrap(sampler.as_ref(), &k, &alm, b.n_syn) {
            Ok(w) => {
                cw = cw.fill(inst.evaluate(&w.syn, &k));
                cw.omega_initial = w.monitor.first().copied();
                cw.omega_final = w.monitor.last().copied();
                curves.push((family.tag().to_string(), label, seed, w.monitor));
            }
            Err(e) => cw.fail(&e),
        }
        rows.push(cw);
    }
    (rows, curves)
}

pub fn run_ablation(cfg: &AblationConfig, jobs: usize) -> Result<AblationRun> {
    cfg.benchmark.validate()?;
    if cfg.benchmark.bases.is_empty() {
        return Err(Error::validation("ablation needs a base generator"));
    }
    let b = &cfg.benchmark;
    let cells: Vec<(Family, u64)> = b.families.iter().flat_map(|&f| b.seeds.iter().map(move |&s| (f, s))).collect();
    let out: Vec<_> = pool(jobs.max(1))?.install(|| cells.par_iter().map(|&(f, s)| run_ablation_cell(cfg, f, s)).collect());
    let mut run = AblationRun { rows: Vec::new(), curves: Vec::new() };
    for (r, c) in out {
        run.rows.extend(r);
        run.curves.extend(c);
    }
    Ok(run)
}

/// Seed-averaged metrics for one (family, setting, generator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummaryRow {
    pub family: String,
    pub setting: String,
    pub generator: String,
    pub ate_error: Option<f64>,
    pub ate_error_sd: Option<f64>,
    pub mmd: Option<f64>,
    pub tstr: Option<f64>,
    pub ci_pass: Option<f64>,
    pub omega_final: Option<f64>,
    pub n_seeds: usize,
}

fn sd_of(rows: &[&CellRow], f: impl Fn(&CellRow) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    (v.len() >= 2).then(|| data::sample_std(&v))
}

pub fn summarize_ablation(cfg: &AblationConfig, rows: &[CellRow]) -> Vec<AblationSummaryRow> {
    let base = &cfg.benchmark.bases[0];
    let mut out = Vec::new();
    for fam in &cfg.benchmark.families {
        for s in cfg.kind.settings() {
            for g in [base.label(), cw_label(base)] {
                let sel: Vec<&CellRow> =
                    rows.iter().filter(|r| r.family == fam.tag() && r.setting == s.label() && r.generator == g && !r.failed()).collect();
                out.push(AblationSummaryRow {
                    family: fam.tag().into(),
                    setting: s.label(),
                    generator: g,
                    ate_error: mean_of(&sel, |r| r.ate_error),
                    ate_error_sd: sd_of(&sel, |r| r.ate_error),
                    mmd: mean_of(&sel, |r| r.mmd),
                    tstr: mean_of(&sel, |r| r.tstr),
                    ci_pass: mean_of(&sel, |r| r.ci_pass),
                    omega_final: mean_of(&sel, |r| r.omega_final),
                    n_seeds: sel.len(),
                });
            }
        }
    }
    out
}

/// The two-configuration comparison: change from base to corrected within
/// each knowledge configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E0Row {
    pub family: String,
    pub base: String,
    pub setting: String,
    /// Relative MMD change in percent.
    pub delta_mmd_pct: Option<f64>,
    /// Relative TSTR change in percent.
    pub delta_tstr_pct: Option<f64>,
    /// Reduction in ATE error; positive means the correction helped.
    pub delta_ate: Option<f64>,
}

pub fn e0_table(cfg: &AblationConfig, summary: &[AblationSummaryRow]) -> Vec<E0Row> {
    let base = &cfg.benchmark.bases[0];
    let find = |fam: &str, s: &str, g: &str| summary.iter().find(|r| r.family == fam && r.setting == s && r.generator == g);
    let mut out = Vec::new();
    for fam in &cfg.benchmark.families {
        for s in [Setting::NoForbidden, Setting::FullKnowledge] {
            let (b, c) = (find(fam.tag(), &s.label(), &base.label()), find(fam.tag(), &s.label(), &cw_label(base)));
            let rel = |f: fn(&AblationSummaryRow) -> Option<f64>| match (b.and_then(f), c.and_then(f)) {
                (Some(x), Some(y)) if x != 0.0 => Some((y - x) / x * 100.0),
                _ => None,
            };
            out.push(E0Row {
                family: fam.tag().into(),
                base: base.label(),
                setting: s.label(),
                delta_mmd_pct: rel(|r| r.mmd),
                delta_tstr_pct: rel(|r| r.tstr),
                delta_ate: match (b.and_then(|r| r.ate_error), c.and_then(|r| r.ate_error)) {
                    (Some(x), Some(y)) => Some(x - y),
                    _ => None,
                },
            });
        }
    }
    out
}

/// Write serializable rows as CSV with a header; `None` becomes an empty field.
pub fn write_rows<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Summary table with `--` for hidden gap-closed values.
pub fn write_summary(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["base", "family", "e_base", "e_cw", "e_oracle", "delta_pct", "gap_closed", "n_seeds"])?;
    let num = |v: Option<f64>| v.map(data::format_value).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.base.clone(),
            r.family.clone(),
            num(r.e_base),
            num(r.e_cw),
            num(r.e_oracle),
            r.delta_pct.map(|v| format!("{v:+.1}%")).unwrap_or_else(|| "--".into()),
            format_pct(r.gap_closed.map(|g| g * 100.0)),
            r.n_seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean monitor curve per (family, setting) across seeds, one line per
/// outer iteration.
pub fn write_curves(curves: &[(String, String, u64, Vec<f64>)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["family", "setting", "outer", "omega_mean", "n_seeds"])?;
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for (f, s, _, _) in curves {
        if !keys.contains(&(f.as_str(), s.as_str())) {
            keys.push((f, s));
        }
    }
    for (f, s) in keys {
        let sel: Vec<&Vec<f64>> = curves.iter().filter(|c| c.0 == f && c.1 == s).map(|c| &c.3).collect();
        let len = sel.iter().map(|c| c.len()).min().unwrap_or(0);
        for k in 0..len {
            let v: Vec<f64> = sel.iter().map(|c| c[k]).collect();
            w.write_record([f.to_string(), s.to_string(), k.to_string(), data::format_value(data::mean(&v)), sel.len().to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Everything needed to rerun a command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    /// Unix seconds at start and end.
    pub started: u64,
    pub finished: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunManifest> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
