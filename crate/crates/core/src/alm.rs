//! Augmented-Lagrangian training of the correction map, generation from the
//! corrected generator, and checkpoints.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::base_gen::Sampler;
use crate::data::{schema_hash, ColumnKind, ColumnSchema, ColumnStats, Provenance, Table};
use crate::error::{Error, Result};
use crate::knowledge::CausalKnowledge;
use crate::nn::{adam_step, AdamConfig, AdamState, CorrectionMap, MapShape};
use crate::penalties::{clamp_binary, fit_edge_models, sample_pairs, Bandwidths, EdgeModels, PenaltyContext, Weighting};
use crate::rng::{self, Rng64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlmConfig {
    pub lambda0: f64,
    pub rho: f64,
    pub lambda_cap: f64,
    pub lr: f64,
    /// Learning rate for outer iteration `k` (from 0) is `lr · lr_decay^k`.
    pub lr_decay: f64,
    pub k_outer: usize,
    pub t_inner: usize,
    pub batch_size: usize,
    /// Dual updates use a fresh batch this many times larger.
    pub eval_multiplier: usize,
    pub delta: f64,
    pub id_weight: f64,
    pub alpha: f64,
    pub beta: f64,
    pub pair_cap: usize,
    pub seed: u64,
    /// Constant penalty weight with no dual updates.
    pub fixed_lambda: Option<f64>,
    pub width: usize,
    pub depth: usize,
}

impl Default for AlmConfig {
    fn default() -> Self {
        AlmConfig {
            lambda0: 1.0,
            rho: 1.5,
            lambda_cap: 1e4,
            lr: 5e-2,
            lr_decay: 1.0,
            k_outer: 20,
            t_inner: 200,
            batch_size: 256,
            eval_multiplier: 4,
            delta: 0.5,
            id_weight: 0.1,
            alpha: 1.0,
            beta: 1.0,
            pair_cap: 32,
            seed: 0,
            fixed_lambda: None,
            width: 64,
            depth: 2,
        }
    }
}

impl AlmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::validation(msg.to_string()));
        if !(self.lambda0 > 0.0) {
            return bad("lambda0 must be positive");
        }
        if !(self.rho >= 1.0) {
            return bad("rho must be at least 1");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.batch_size < 4 {
            return bad("batch size must be at least 4");
        }
        if self.eval_multiplier == 0 || self.pair_cap == 0 {
            return bad("eval_multiplier and pair_cap must be at least 1");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.id_weight < 0.0 {
            return bad("alpha, beta and id_weight must be non-negative");
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0) {
                return bad("fixed lambda must be non-negative");
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> MapShape {
        MapShape { width: self.width, depth: self.depth }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }
}

/// Dual variables and penalty weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub mu: Vec<f64>,
    pub lambda: f64,
    pub last_omega: Vec<f64>,
}

impl DualState {
    pub fn new(n: usize, cfg: &AlmConfig) -> DualState {
        DualState { mu: vec![0.0; n], lambda: cfg.fixed_lambda.unwrap_or(cfg.lambda0), last_omega: vec![0.0; n] }
    }

    /// `μ_c ← μ_c + λ Ω_c`, then `λ ← min(ρλ, cap)`. Fixed mode leaves both alone.
    pub fn update(&mut self, omega: &[f64], cfg: &AlmConfig) {
        self.last_omega = omega.to_vec();
        if cfg.fixed_lambda.is_some() {
            return;
        }
        for (m, o) in self.mu.iter_mut().zip(omega) {
            *m += self.lambda * o;
        }
        self.lambda = (cfg.rho * self.lambda).min(cfg.lambda_cap);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub outer: usize,
    pub lambda: f64,
    pub utility: f64,
    pub loss: f64,
    /// `None` for forbidden pairs not sampled at this step.
    pub omega: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    /// Number of completed outer iterations (0 = before training).
    pub outer: usize,
    pub lambda: f64,
    pub mu: Vec<f64>,
    /// Components on the fresh dual-update batch.
    pub omega: Vec<f64>,
    /// Total penalty and utility on the fixed monitor batch.
    pub monitor_total: f64,
    pub monitor_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEvent {
    Start { components: Vec<String>, config: AlmConfig },
    Step(StepRecord),
    Outer(OuterRecord),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub events: Vec<LogEvent>,
}

impl TrainingLog {
    pub fn outer_records(&self) -> impl Iterator<Item = &OuterRecord> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Outer(o) => Some(o),
            _ => None,
        })
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.events.iter().filter_map(|e| match e {
            LogEvent::Step(s) => Some(s),
            _ => None,
        })
    }

    /// Monitor-batch total penalty after each completed outer iteration,
    /// starting with the untrained map.
    pub fn monitor_totals(&self) -> Vec<f64> {
        self.outer_records().map(|o| o.monitor_total).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<TrainingLog> {
        let text = fs::read_to_string(path)?;
        let events = text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<std::result::Result<_, _>>()?;
        Ok(TrainingLog { events })
    }
}

/// Everything needed to continue training from an outer-iteration boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub map: CorrectionMap,
    pub adam: AdamState,
    pub duals: DualState,
    pub outer_done: usize,
    pub step: usize,
    pub monitor_bandwidths: Bandwidths,
    pub log: TrainingLog,
}

/// Standardized real data plus the frozen objects derived from it.
pub struct TrainingProblem<'a> {
    pub real: &'a Table,
    pub stats: &'a ColumnStats,
    pub sampler: &'a dyn Sampler,
    pub context: PenaltyContext,
}

impl<'a> TrainingProblem<'a> {
    /// `real` must be standardized with `stats`; edge models are fit on it.
    pub fn new(
        real: &'a Table,
        stats: &'a ColumnStats,
        sampler: &'a dyn Sampler,
        knowledge: &CausalKnowledge,
        cfg: &AlmConfig,
    ) -> Result<TrainingProblem<'a>> {
        cfg.validate()?;
        if knowledge.columns != real.names() {
            return Err(Error::SchemaMismatch("knowledge columns differ from the table".into()));
        }
        if schema_hash(sampler.schema()) != real.schema_hash() {
            return Err(Error::SchemaMismatch("base generator schema differs from the real table".into()));
        }
        let models = fit_edge_models(real, knowledge)?;
        Ok(TrainingProblem { real, stats, sampler, context: context_for(knowledge.clone(), models, real.schema(), cfg) })
    }

    fn base_batch(&self, n: usize, rng: &mut Rng64) -> Result<DMatrix<f64>> {
        Ok(self.stats.apply(self.sampler.sample(n, rng)?.rows()))
    }

    fn real_batch(&self, n: usize, rng: &mut Rng64) -> DMatrix<f64> {
        let total = self.real.n_rows();
        let idx: Vec<usize> = if n <= total {
            index::sample(rng, total, n).into_vec()
        } else {
            (0..n).map(|_| rng.random_range(0..total)).collect()
        };
        DMatrix::from_fn(n, self.real.n_cols(), |i, j| self.real.rows()[(idx[i], j)])
    }
}

pub fn context_for(knowledge: CausalKnowledge, models: EdgeModels, schema: &[ColumnSchema], cfg: &AlmConfig) -> PenaltyContext {
    PenaltyContext {
        knowledge,
        models,
        alpha: cfg.alpha,
        beta: cfg.beta,
        delta: cfg.delta,
        id_weight: cfg.id_weight,
        binary: schema.iter().map(ColumnSchema::is_binary).collect(),
    }
}

fn bandwidths_for(ctx: &PenaltyContext, map: &CorrectionMap, base: &DMatrix<f64>) -> Result<Bandwidths> {
    let (clamped, _) = clamp_binary(&map.apply(base)?, &ctx.binary);
    Ok(Bandwidths::from_residuals(&ctx.models.residualize(&clamped)))
}

struct Monitor {
    real: DMatrix<f64>,
    base: DMatrix<f64>,
}

impl Monitor {
    fn new(problem: &TrainingProblem, cfg: &AlmConfig) -> Result<Monitor> {
        let mut r = rng::stream(cfg.seed, "monitor");
        let n = cfg.batch_size * cfg.eval_multiplier;
        Ok(Monitor { base: problem.base_batch(n, &mut r)?, real: problem.real_batch(n, &mut r) })
    }
}

fn record_outer(
    problem: &TrainingProblem,
    monitor: &Monitor,
    state: &TrainerState,
    omega: Vec<f64>,
) -> Result<OuterRecord> {
    let ctx = &problem.context;
    let all: Vec<usize> = (0..ctx.knowledge.forbidden.len()).collect();
    let m = ctx.evaluate(&state.map, &monitor.real, &monitor.base, &state.monitor_bandwidths, &all, Weighting::ValuesOnly)?;
    Ok(OuterRecord {
        outer: state.outer_done,
        lambda: state.duals.lambda,
        mu: state.duals.mu.clone(),
        omega,
        monitor_total: m.total(),
        monitor_utility: m.utility,
    })
}

/// Fresh trainer state: identity map, zero duals, and the record of the
/// untrained map.
pub fn initial_state(problem: &TrainingProblem, cfg: &AlmConfig) -> Result<TrainerState> {
    let ctx = &problem.context;
    let d = problem.real.n_cols();
    let map = CorrectionMap::new(d, cfg.shape(), &mut rng::stream(cfg.seed, "init"))?;
    let adam = AdamState::new(&map, cfg.adam());
    let n = ctx.n_components();
    if n == 0 {
        log::warn!("no forbidden edges or monotone constraints: training the utility surrogate only");
    }
    let monitor = Monitor::new(problem, cfg)?;
    let monitor_bandwidths = bandwidths_for(ctx, &map, &monitor.base)?;
    let mut state = TrainerState {
        map,
        adam,
        duals: DualState::new(n, cfg),
        outer_done: 0,
        step: 0,
        monitor_bandwidths,
        log: TrainingLog { events: vec![LogEvent::Start { components: ctx.component_names(), config: cfg.clone() }] },
    };
    let all: Vec<usize> = (0..ctx.knowledge.forbidden.len()).collect();
    let mut r = rng::stream(cfg.seed, "eval/0");
    let eval_n = cfg.batch_size * cfg.eval_multiplier;
    let (eb, er) = (problem.base_batch(eval_n, &mut r)?, problem.real_batch(eval_n, &mut r));
    let bw = bandwidths_for(ctx, &state.map, &eb)?;
    let omega = ctx.evaluate(&state.map, &er, &eb, &bw, &all, Weighting::ValuesOnly)?.components;
    let omega: Vec<f64> = omega.into_iter().map(|o| o.unwrap_or(0.0)).collect();
    state.duals.last_omega = omega.clone();
    let rec = record_outer(problem, &monitor, &state, omega)?;
    state.log.events.push(LogEvent::Outer(rec));
    Ok(state)
}

/// Run outer iterations until `cfg.k_outer` are complete. `after_outer` is
/// called at every outer boundary (for checkpointing).
pub fn train_from(
    problem: &TrainingProblem,
    cfg: &AlmConfig,
    mut state: TrainerState,
    after_outer: &mut dyn FnMut(&TrainerState) -> Result<()>,
) -> Result<TrainerState> {
    let ctx = &problem.context;
    let n_forbidden = ctx.knowledge.forbidden.len();
    let all: Vec<usize> = (0..n_forbidden).collect();
    let monitor = Monitor::new(problem, cfg)?;
    let eval_n = cfg.batch_size * cfg.eval_multiplier;
    while state.outer_done < cfg.k_outer {
        let k = state.outer_done;
        state.adam.config.lr = cfg.lr * cfg.lr_decay.powi(k as i32);
        let mut batches = rng::stream(cfg.seed, &format!("batches/{k}"));
        let mut pair_rng = rng::stream(cfg.seed, &format!("pairs/{k}"));
        let mut bw = None;
        for _ in 0..cfg.t_inner {
            let base = problem.base_batch(cfg.batch_size, &mut batches)?;
            let real = problem.real_batch(cfg.batch_size, &mut batches);
            if bw.is_none() {
                bw = Some(bandwidths_for(ctx, &state.map, &base)?);
            }
            let pairs = sample_pairs(n_forbidden, cfg.pair_cap, &mut pair_rng);
            let lambda = state.duals.lambda;
            let weights;
            let weighting = match cfg.fixed_lambda {
                Some(l) => {
                    weights = vec![l; ctx.n_components()];
                    Weighting::Linear(&weights)
                }
                None => Weighting::Augmented { mu: &state.duals.mu, lambda },
            };
            let bundle = ctx.evaluate(&state.map, &real, &base, bw.as_ref().expect("set"), &pairs, weighting)?;
            let loss = bundle.utility + weighting.loss(&bundle.components);
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at step {} (outer iteration {}); last checkpoint is at outer iteration {}",
                    state.step, k, state.outer_done
                )));
            }
            state.step += 1;
            state.log.events.push(LogEvent::Step(StepRecord {
                step: state.step,
                outer: k + 1,
                lambda,
                utility: bundle.utility,
                loss,
                omega: bundle.components.clone(),
            }));
            let grads = bundle.grads.expect("gradients requested");
            adam_step(&mut state.map, &mut state.adam, &grads)?;
        }
        let mut r = rng::stream(cfg.seed, &format!("eval/{}", k + 1));
        let (eb, er) = (problem.base_batch(eval_n, &mut r)?, problem.real_batch(eval_n, &mut r));
        let bw = match bw {
            Some(b) => b,
            None => bandwidths_for(ctx, &state.map, &eb)?,
        };
        let eval = ctx.evaluate(&state.map, &er, &eb, &bw, &all, Weighting::ValuesOnly)?;
        let omega: Vec<f64> = eval.components.into_iter().map(|o| o.unwrap_or(0.0)).collect();
        state.duals.update(&omega, cfg);
        state.outer_done += 1;
        let rec = record_outer(problem, &monitor, &state, omega)?;
        log::debug!("outer {}: lambda {:.3}, monitor penalty {:.5}", rec.outer, rec.lambda, rec.monitor_total);
        state.log.events.push(LogEvent::Outer(rec));
        after_outer(&state)?;
    }
    Ok(state)
}

/// Full training run from the identity map.
pub fn train(problem: &TrainingProblem, cfg: &AlmConfig) -> Result<TrainerState> {
    let state = initial_state(problem, cfg)?;
    train_from(problem, cfg, state, &mut |_| Ok(()))
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained map plus what `generate` needs to map back to raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub schema: Vec<ColumnSchema>,
    pub schema_hash: String,
    pub stats: ColumnStats,
    pub config: AlmConfig,
    pub map: CorrectionMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerState>,
}

impl Checkpoint {
    pub fn new(schema: &[ColumnSchema], stats: &ColumnStats, config: &AlmConfig, state: &TrainerState, keep_trainer: bool) -> Checkpoint {
        let schema: Vec<ColumnSchema> = schema.iter().map(|c| ColumnSchema { standardization: None, ..c.clone() }).collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            schema_hash: schema_hash(&schema),
            schema,
            stats: stats.clone(),
            config: config.clone(),
            map: state.map.clone(),
            trainer: keep_trainer.then(|| state.clone()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let c: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(Error::validation(format!("unsupported checkpoint version {}", c.format_version)));
        }
        if c.schema_hash != schema_hash(&c.schema) {
            return Err(Error::validation("checkpoint schema hash does not match its schema"));
        }
        Ok(c)
    }

    pub fn check_schema(&self, schema: &[ColumnSchema]) -> Result<()> {
        if schema_hash(schema) != self.schema_hash {
            let names: Vec<&str> = schema.iter().map(|c| c.name.as_str()).collect();
            return Err(Error::SchemaMismatch(format!("checkpoint was trained on a different schema than {names:?}")));
        }
        Ok(())
    }
}

/// Tolerance within which an already-binary base column is left untouched.
pub const BINARY_PASS_THROUGH: f64 = 0.02;

/// Clamp corrected values to `[0, 1]` and shift them so their mean matches
/// `target`, yielding Bernoulli probabilities.
pub fn calibrate_binary(values: &[f64], target: f64) -> Vec<f64> {
    let clamped: Vec<f64> = values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mean = clamped.iter().sum::<f64>() / clamped.len().max(1) as f64;
    let shift = target - mean;
    clamped.iter().map(|p| (p + shift).clamp(0.0, 1.0)).collect()
}

/// Draw `n` rows from the corrected generator `f#Q_base` in raw units.
pub fn generate(map: &CorrectionMap, sampler: &dyn Sampler, n: usize, checkpoint: &Checkpoint, rng: &mut Rng64) -> Result<Table> {
    checkpoint.check_schema(sampler.schema())?;
    let base = sampler.sample(n, rng)?;
    let stats = &checkpoint.stats;
    let corrected = stats.invert(&map.apply(&stats.apply(base.rows()))?);
    let mut rows = corrected;
    for (j, c) in checkpoint.schema.iter().enumerate() {
        if c.kind != ColumnKind::Binary {
            continue;
        }
        let target = stats.columns[j].mean;
        let base_col = base.column(j);
        let strictly_binary = base_col.iter().all(|&v| v == 0.0 || v == 1.0);
        let base_mean = base_col.iter().sum::<f64>() / n as f64;
        if strictly_binary && (base_mean - target).abs() <= BINARY_PASS_THROUGH {
            for (i, v) in base_col.into_iter().enumerate() {
                rows[(i, j)] = v;
            }
            continue;
        }
        let col: Vec<f64> = rows.column(j).iter().copied().collect();
        for (i, p) in calibrate_binary(&col, target).into_iter().enumerate() {
            rows[(i, j)] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        }
    }
    Table::new(checkpoint.schema.clone(), rows, Provenance::Corrected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_gen::{fit_gaussian_copula, noisy_bootstrap};
    use crate::data::standardize;
    use crate::knowledge::{derive_knowledge_from_scm, parse_knowledge_str, DeriveOptions};
    use crate::scm::{random_scm, Family, ScmParams};

    fn small_cfg() -> AlmConfig {
        AlmConfig { k_outer: 3, t_inner: 5, batch_size: 64, width: 16, seed: 7, ..AlmConfig::default() }
    }

    fn lg_problem_data(seed: u64) -> (Table, CausalKnowledge) {
        let mut r = rng::seeded(seed);
        let scm = loop {
            let s = random_scm(Family::LinearGaussian, 5, 2.0, &ScmParams::default(), &mut r).unwrap();
            if s.edges().len() >= 3 {
                break s;
            }
        };
        let real = scm.ancestral_sample(600, &mut r, None).unwrap();
        let k = derive_knowledge_from_scm(&scm, &DeriveOptions::default(), &mut r).unwrap();
        (real, k)
    }

    #[test]
    fn dual_update_arithmetic() {
        let cfg = AlmConfig::default();
        let mut d = DualState::new(1, &cfg);
        d.update(&[0.2], &cfg);
        assert_eq!(d.mu, vec![0.2]);
        assert_eq!(d.lambda, 1.5);
        let fixed = AlmConfig { fixed_lambda: Some(3.0), ..cfg };
        let mut d = DualState::new(2, &fixed);
        for _ in 0..5 {
            d.update(&[0.4, 1.0], &fixed);
        }
        assert_eq!(d.mu, vec![0.0, 0.0]);
        assert_eq!(d.lambda, 3.0);
    }

    #[test]
    fn lambda_schedule_is_geometric_and_duals_grow() {
        let (raw, k) = lg_problem_data(1);
        let (real, stats) = standardize(&raw, false).unwrap();
        let sampler = fit_gaussian_copula(&raw).unwrap();
        let cfg = small_cfg();
        let problem = TrainingProblem::new(&real, &stats, &sampler, &k, &cfg).unwrap();
        let state = train(&problem, &cfg).unwrap();
        let outer: Vec<&OuterRecord> = state.log.outer_records().collect();
        assert_eq!(outer.len(), cfg.k_outer + 1);
        for o in &outer {
            assert_eq!(o.lambda, cfg.lambda0 * cfg.rho.powi(o.outer as i32));
        }
        for w in outer.windows(2) {
            assert!(w[0].mu.iter().zip(&w[1].mu).all(|(a, b)| b >= a));
            assert!(w[1].mu.iter().all(|&m| m >= 0.0));
        }
        assert_eq!(state.log.steps().count(), cfg.k_outer * cfg.t_inner);
    }

    #[test]
    fn zero_outer_iterations_return_identity() {
        let (raw, k) = lg_problem_data(2);
        let (real, stats) = standardize(&raw, false).unwrap();
        let sampler = fit_gaussian_copula(&raw).unwrap();
        let cfg = AlmConfig { k_outer: 0, ..small_cfg() };
        let problem = TrainingProblem::new(&real, &stats, &sampler, &k, &cfg).unwrap();
        let state = train(&problem, &cfg).unwrap();
        let x = real.rows().rows(0, 10).into_owned();
        assert_eq!(state.map.apply(&x).unwrap(), x);
    }

    #[test]
    fn fixed_lambda_keeps_duals_at_zero() {
        let (raw, k) = lg_problem_data(3);
        let (real, stats) = standardize(&raw, false).unwrap();
        let sampler = fit_gaussian_copula(&raw).unwrap();
        let cfg = AlmConfig { fixed_lambda: Some(10.0), ..small_cfg() };
        let problem = TrainingProblem::new(&real, &stats, &sampler, &k, &cfg).unwrap();
        let state = train(&problem, &cfg).unwrap();
        for o in state.log.outer_records() {
            assert_eq!(o.lambda, 10.0);
            assert!(o.mu.iter().all(|&m| m == 0.0));
        }
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let (raw, k) = lg_problem_data(4);
        let (real, stats) = standardize(&raw, false).unwrap();
        let sampler = noisy_bootstrap(&raw, 0.5).unwrap();
        let cfg = small_cfg();
        let problem = TrainingProblem::new(&real, &stats, &sampler, &k, &cfg).unwrap();
        let a = train(&problem, &cfg).unwrap();
        let b = train(&problem, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.map.layers(), b.map.layers());

        let mut saved = None;
        let partial = AlmConfig { k_outer: 1, ..cfg.clone() };
        let _ = train_from(&problem, &partial, initial_state(&problem, &partial).unwrap(), &mut |s| {
            saved = Some(Checkpoint::new(real.schema(), &stats, &partial, s, true));
            Ok(())
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        saved.unwrap().save(&path).unwrap();
        let ckpt = Checkpoint::load(&path).unwrap();
        let resumed = train_from(&problem, &cfg, ckpt.trainer.unwrap(), &mut |_| Ok(())).unwrap();
        assert_eq!(resumed.map.layers(), a.map.layers());
        assert_eq!(resumed.log.outer_records().last(), a.log.outer_records().last());
    }

    #[test]
    fn empty_knowledge_trains_surrogate_only() {
        let (raw, _) = lg_problem_data(5);
        let (real, stats) = standardize(&raw, false).unwrap();
        let sampler = noisy_bootstrap(&raw, 0.5).unwrap();
        let k = parse_knowledge_str("", &real.names()).unwrap();
        let cfg = small_cfg();
        let problem = TrainingProblem::new(&real, &stats, &sampler, &k, &cfg).unwrap();
        let state = train(&problem, &cfg).unwrap();
        assert!(state.log.steps().all(|s| s.omega.is_empty() && s.loss == s.utility));
    }

    #[test]
    fn log_round_trips_through_jsonl() {
        let (raw, k) = lg_problem_data(6);
        let (real, stats) = standardize(&raw, false).unwrap();
        let sampler = fit_gaussian_copula(&raw).unwrap();
        let cfg = AlmConfig { k_outer: 1, ..small_cfg() };
        let problem = TrainingProblem::new(&real, &stats, &sampler, &k, &cfg).unwrap();
        let state = train(&problem, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        state.log.write_jsonl(&path).unwrap();
        assert_eq!(TrainingLog::read_jsonl(&path).unwrap(), state.log);
    }

    #[test]
    fn identity_generation_reproduces_base_samples() {
        let (raw, k) = lg_problem_data(7);
        let (real, stats) = standardize(&raw, false).unwrap();
        let sampler = fit_gaussian_copula(&raw).unwrap();
        let cfg = AlmConfig { k_outer: 0, ..small_cfg() };
        let problem = TrainingProblem::new(&real, &stats, &sampler, &k, &cfg).unwrap();
        let state = train(&problem, &cfg).unwrap();
        let ckpt = Checkpoint::new(real.schema(), &stats, &cfg, &state, false);
        let out = generate(&state.map, &sampler, 200, &ckpt, &mut rng::seeded(1)).unwrap();
        let base = sampler.sample(200, &mut rng::seeded(1)).unwrap();
        assert!((out.rows() - base.rows()).amax() < 1e-12);
        assert_eq!(out.provenance(), Provenance::Corrected);
    }

    #[test]
    fn generation_refuses_other_schemas() {
        let (raw, k) = lg_problem_data(8);
        let (real, stats) = standardize(&raw, false).unwrap();
        let sampler = fit_gaussian_copula(&raw).unwrap();
        let cfg = AlmConfig { k_outer: 0, ..small_cfg() };
        let problem = TrainingProblem::new(&real, &stats, &sampler, &k, &cfg).unwrap();
        let state = train(&problem, &cfg).unwrap();
        let mut schema = real.schema().to_vec();
        schema[0].name = "renamed".into();
        let ckpt = Checkpoint::new(&schema, &stats, &cfg, &state, false);
        assert!(matches!(generate(&state.map, &sampler, 10, &ckpt, &mut rng::seeded(1)), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn binary_calibration_rules() {
        let p = calibrate_binary(&[0.5; 10_000], 0.5);
        let mut r = rng::seeded(9);
        let draws: Vec<f64> = p.iter().map(|&p| if r.random::<f64>() < p { 1.0 } else { 0.0 }).collect();
        let mean = draws.iter().sum::<f64>() / 10_000.0;
        assert!((mean - 0.5).abs() < 3.0 * (0.25f64 / 10_000.0).sqrt());
        assert_eq!(calibrate_binary(&[1.3, 1.3], 1.0), vec![1.0, 1.0]);
        let shifted = calibrate_binary(&[0.2, 0.4], 0.5);
        assert!((shifted[0] - 0.4).abs() < 1e-15 && (shifted[1] - 0.6).abs() < 1e-15);
    }
}
