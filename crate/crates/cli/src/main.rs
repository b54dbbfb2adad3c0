use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use causalwrap::alm::{self, AlmConfig, Checkpoint, TrainingProblem};
use causalwrap::base_gen::BaseSpec;
use causalwrap::data::{self, Table};
use causalwrap::harness::{self, AblationConfig, AblationKind, BenchmarkConfig, Instance, RunManifest, SimulationConfig};
use causalwrap::knowledge::{parse_knowledge, CausalKnowledge};
use causalwrap::metrics::{assemble_report, EvalInputs, Truth};
use causalwrap::rng;
use causalwrap::scm::{Family, Scm};
use clap::{Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "causalwrap", version, about = "Causal-constraint wrappers for tabular synthetic data")]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random SCM and write scm.json, train.csv and truth.json.
    Simulate {
        #[arg(long, default_value = "LG")]
        family: String,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a correction map around a base generator.
    Wrap {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        knowledge: Option<PathBuf>,
        /// copula, bootstrap:NOISE, file:PATH, file-relaxed:PATH or oracle.
        #[arg(long, default_value = "copula")]
        base: String,
        /// SCM for the oracle base.
        #[arg(long)]
        scm: Option<PathBuf>,
        /// Constant penalty weight instead of the ALM schedule.
        #[arg(long)]
        fixed_lambda: Option<f64>,
        /// Continue from a checkpoint saved with trainer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw corrected samples from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training table the base generator is fit on.
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "copula")]
        base: String,
        #[arg(long)]
        scm: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a synthetic table against real data.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        syn: PathBuf,
        #[arg(long)]
        knowledge: Option<PathBuf>,
        /// truth.json from `simulate`; without it ATE agreement is reported.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        treatment: Option<String>,
        #[arg(long)]
        outcome: Option<String>,
        /// Covariates for the causal estimators; default is every other column.
        #[arg(long, value_delimiter = ',')]
        covariates: Vec<String>,
        /// TSTR label column; defaults to the outcome, else the last column.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run base, base+CW and oracle over families and seeds.
    Benchmark {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run one ablation sweep.
    Ablate {
        /// constraint_type, knowledge_fraction, wrong_edges, alm_vs_fixed or e0.
        #[arg(long)]
        kind: String,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write per-figure CSVs.
    #[arg(long)]
    emit_plot_data: bool,
    /// Rerun the configuration stored in a manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// `truth.json` written by `simulate`.
#[derive(Debug, Serialize, Deserialize)]
struct TruthFile {
    family: Family,
    seed: u64,
    treatment: String,
    outcome: String,
    ate: f64,
    ate_std_error: f64,
    n_mc: usize,
    edges: Vec<(String, String)>,
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).map_err(|e| causalwrap::Error::Validation(format!("config {}: {e}", p.display())).into())
        }
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn column(table: &Table, name: &str) -> Result<usize> {
    table.column_index(name).ok_or_else(|| causalwrap::Error::Validation(format!("no column named '{name}'")).into())
}

fn load_knowledge(path: Option<&Path>, table: &Table) -> Result<CausalKnowledge> {
    match path {
        Some(p) => Ok(parse_knowledge(p, &table.names()).with_context(|| format!("knowledge file {}", p.display()))?),
        None => Ok(CausalKnowledge::empty(table.names())),
    }
}

fn load_scm(path: Option<&Path>) -> Result<Option<Scm>> {
    path.map(|p| Scm::load(p).with_context(|| format!("SCM {}", p.display()))).transpose()
}

fn simulate(cli: &Cli, family: &str, d: Option<usize>, out: &Path) -> Result<()> {
    let mut sim: SimulationConfig = read_config(cli.config.as_deref())?;
    if let Some(d) = d {
        sim.d = d;
    }
    let family = Family::parse(family)?;
    let seed = cli.seed.unwrap_or(0);
    let inst = Instance::build(family, seed, &sim, 1)?;
    fs::create_dir_all(out)?;
    inst.scm.save(out.join("scm.json"))?;
    data::write_table(&inst.real, out.join("train.csv"), None)?;
    let names = inst.scm.names();
    let truth = TruthFile {
        family,
        seed,
        treatment: names[inst.treatment].clone(),
        outcome: names[inst.outcome].clone(),
        ate: inst.truth.ate,
        ate_std_error: inst.truth.std_error,
        n_mc: sim.n_mc,
        edges: inst.scm.edges().into_iter().map(|(a, b)| (names[a].clone(), names[b].clone())).collect(),
    };
    fs::write(out.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
    log::info!("{} SCM with {} edges; ATE {:.4}", family.tag(), truth.edges.len(), truth.ate);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn wrap(
    cli: &Cli,
    train: &Path,
    knowledge: Option<&Path>,
    base: &str,
    scm: Option<&Path>,
    fixed_lambda: Option<f64>,
    resume: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let real = data::read_table(train).with_context(|| format!("training table {}", train.display()))?;
    let resumed = resume.map(Checkpoint::load).transpose()?;
    let mut cfg: AlmConfig = match &resumed {
        Some(c) => c.config.clone(),
        None => read_config(cli.config.as_deref())?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if fixed_lambda.is_some() {
        cfg.fixed_lambda = fixed_lambda;
    }
    let k = load_knowledge(knowledge, &real)?;
    if k.is_empty() {
        log::warn!("knowledge is empty; training uses the utility surrogate only");
    }
    let sampler = BaseSpec::parse(base)?.build(&real, load_scm(scm)?.as_ref(), 1)?;
    let (real_std, stats) = data::standardize(&real, false)?;
    let problem = TrainingProblem::new(&real_std, &stats, sampler.as_ref(), &k, &cfg)?;
    let state = match resumed {
        Some(c) => {
            c.check_schema(real.schema())?;
            let st = c.trainer.context("checkpoint has no trainer state to resume from")?;
            log::info!("resuming after outer iteration {}", st.outer_done);
            st
        }
        None => alm::initial_state(&problem, &cfg)?,
    };
    fs::create_dir_all(out)?;
    let ckpt_path = out.join("checkpoint.json");
    let state = alm::train_from(&problem, &cfg, state, &mut |st| {
        Checkpoint::new(real.schema(), &stats, &cfg, st, true).save(&ckpt_path)
    })?;
    Checkpoint::new(real.schema(), &stats, &cfg, &state, true).save(&ckpt_path)?;
    state.log.write_jsonl(out.join("training_log.jsonl"))?;
    if let Some(last) = state.log.monitor_totals().last() {
        log::info!("final penalty {last:.6}");
    }
    Ok(())
}

fn generate(cli: &Cli, checkpoint: &Path, train: &Path, base: &str, scm: Option<&Path>, n: usize, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("checkpoint {}", checkpoint.display()))?;
    let real = data::read_table(train)?;
    ckpt.check_schema(real.schema())?;
    let sampler = BaseSpec::parse(base)?.build(&real, load_scm(scm)?.as_ref(), 1)?;
    let mut r = rng::stream(cli.seed.unwrap_or(ckpt.config.seed), "generate");
    let syn = alm::generate(&ckpt.map, sampler.as_ref(), n, &ckpt, &mut r)?;
    data::write_table(&syn, out, None)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cli: &Cli,
    real: &Path,
    syn: &Path,
    knowledge: Option<&Path>,
    truth: Option<&Path>,
    treatment: Option<&str>,
    outcome: Option<&str>,
    covariates: &[String],
    label: Option<&str>,
    out: Option<&Path>,
) -> Result<()> {
    let real = data::read_table(real)?;
    let syn = data::read_table(syn)?;
    let k = load_knowledge(knowledge, &real)?;
    let truth_file: Option<TruthFile> = truth.map(|p| -> Result<TruthFile> { Ok(serde_json::from_str(&fs::read_to_string(p)?)?) }).transpose()?;
    let t_name = treatment.map(str::to_string).or_else(|| truth_file.as_ref().map(|t| t.treatment.clone()));
    let y_name = outcome.map(str::to_string).or_else(|| truth_file.as_ref().map(|t| t.outcome.clone()));
    let effect = match (&t_name, &y_name) {
        (Some(t), Some(y)) => Some((column(&real, t)?, column(&real, y)?)),
        (None, None) => None,
        _ => bail!(causalwrap::Error::Validation("give both treatment and outcome".into())),
    };
    let covs = if covariates.is_empty() {
        (0..real.n_cols()).filter(|c| effect.is_none_or(|(t, y)| *c != t && *c != y)).collect()
    } else {
        covariates.iter().map(|c| column(&real, c)).collect::<Result<Vec<_>>>()?
    };
    let tstr_label = match (label, effect) {
        (Some(l), _) => column(&real, l)?,
        (None, Some((_, y))) => y,
        (None, None) => real.n_cols() - 1,
    };
    let report = assemble_report(&EvalInputs {
        real: &real,
        syn: &syn,
        knowledge: &k,
        seed: cli.seed.unwrap_or(0),
        effect,
        covariates: covs,
        truth: truth_file.as_ref().map(|t| Truth { ate: t.ate, ite: None }),
        tstr_label,
    })?;
    let json = report.to_json()?;
    match out {
        Some(p) => fs::write(p, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

/// Config from the manifest when given, else from the config file, with
/// `--seed` narrowing the seed list.
fn run_config<T: DeserializeOwned + Default>(cli: &Cli, run: &RunArgs, command: &str) -> Result<T> {
    match &run.manifest {
        Some(m) => {
            let manifest = RunManifest::load(m)?;
            if manifest.command != command {
                bail!(causalwrap::Error::Validation(format!("manifest is for '{}', not '{command}'", manifest.command)));
            }
            Ok(serde_json::from_value(manifest.config)?)
        }
        None => read_config(cli.config.as_deref()),
    }
}

fn write_manifest(out: &Path, command: &str, seeds: &[u64], config: &impl Serialize, started: u64, outputs: Vec<String>) -> Result<()> {
    RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        seeds: seeds.to_vec(),
        config: serde_json::to_value(config)?,
        started,
        finished: now(),
        outputs,
    }
    .save(out.join("manifest.json"))?;
    Ok(())
}

fn benchmark(cli: &Cli, run: &RunArgs) -> Result<()> {
    let started = now();
    let mut cfg: BenchmarkConfig = run_config(cli, run, "benchmark")?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    fs::create_dir_all(&run.out)?;
    let rows = harness::run_benchmark(&cfg, run.jobs)?;
    let failed = rows.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        log::warn!("{failed} of {} cells failed; see the flags column", rows.len());
    }
    harness::write_rows(&rows, run.out.join("aggregate.csv"))?;
    let summary = harness::summarize(&cfg, &rows);
    harness::write_summary(&summary, run.out.join("summary.csv"))?;
    let mut outputs = vec!["aggregate.csv".to_string(), "summary.csv".into()];
    if run.emit_plot_data {
        harness::write_rows(&summary, run.out.join("plot_tier1.csv"))?;
        outputs.push("plot_tier1.csv".into());
    }
    write_manifest(&run.out, "benchmark", &cfg.seeds, &cfg, started, outputs)
}

fn ablate(cli: &Cli, kind: &str, run: &RunArgs) -> Result<()> {
    let started = now();
    let kind = AblationKind::parse(kind)?;
    let mut cfg: AblationConfig = run_config(cli, run, "ablate")?;
    if run.manifest.is_none() {
        cfg.kind = kind;
    } else if cfg.kind != kind {
        bail!(causalwrap::Error::Validation(format!("manifest is for the {} ablation", cfg.kind.tag())));
    }
    if let Some(s) = cli.seed {
        cfg.benchmark.seeds = vec![s];
    }
    fs::create_dir_all(&run.out)?;
    let res = harness::run_ablation(&cfg, run.jobs)?;
    let tag = kind.tag();
    harness::write_rows(&res.rows, run.out.join(format!("ablation_{tag}.csv")))?;
    let summary = harness::summarize_ablation(&cfg, &res.rows);
    harness::write_rows(&summary, run.out.join(format!("ablation_{tag}_summary.csv")))?;
    let mut outputs = vec![format!("ablation_{tag}.csv"), format!("ablation_{tag}_summary.csv")];
    if kind == AblationKind::E0 {
        harness::write_rows(&harness::e0_table(&cfg, &summary), run.out.join("ablation_e0_table.csv"))?;
        outputs.push("ablation_e0_table.csv".into());
    }
    if run.emit_plot_data {
        harness::write_rows(&summary, run.out.join(format!("plot_{tag}.csv")))?;
        outputs.push(format!("plot_{tag}.csv"));
        if kind == AblationKind::AlmVsFixed {
            harness::write_curves(&res.curves, run.out.join("plot_alm_curves.csv"))?;
            outputs.push("plot_alm_curves.csv".into());
        }
    }
    write_manifest(&run.out, "ablate", &cfg.benchmark.seeds, &cfg, started, outputs)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate { family, d, out } => simulate(cli, family, *d, out),
        Command::Wrap { train, knowledge, base, scm, fixed_lambda, resume, out } => {
            wrap(cli, train, knowledge.as_deref(), base, scm.as_deref(), *fixed_lambda, resume.as_deref(), out)
        }
        Command::Generate { checkpoint, train, base, scm, n, out } => generate(cli, checkpoint, train, base, scm.as_deref(), *n, out),
        Command::Evaluate { real, syn, knowledge, truth, treatment, outcome, covariates, label, out } => evaluate(
            cli,
            real,
            syn,
            knowledge.as_deref(),
            truth.as_deref(),
            treatment.as_deref(),
            outcome.as_deref(),
            covariates,
            label.as_deref(),
            out.as_deref(),
        ),
        Command::Benchmark { run: r } => benchmark(cli, r),
        Command::Ablate { kind, run: r } => ablate(cli, kind, r),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<causalwrap::Error>() {
            return e.exit_code() as u8;
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 4;
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAUSALWRAP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
