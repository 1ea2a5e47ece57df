//! Command-line entry points: synthesis, validation, evaluation and loss checks.
//!
//! Exit codes: 0 success, 1 validation or contract failure, 2 configuration
//! error, 3 backend or transport error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attrbench::backend::{BackendConfig, BackendRegistry};
use attrbench::dataset::{
    build_dataset, dataset_checksum, read_manifest, validate_dataset, BuildConfig, StoredCase,
    ValidationReport,
};
use attrbench::eval::{aggregate, class_prompts, score_case, ScorerConfig, ScorerRegistry};
use attrbench::hardneg::matrix::read_matrix;
use attrbench::hardneg::{
    build_hn_batch, gradcheck, loss_parts, EmbeddingBatch, GradcheckConfig, HnScope, HnSource,
    LossConfig, Temperature,
};
use attrbench::semantics::SubsetKind;
use attrbench::Error;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const BACKEND_ENV: &str = "ATTRBENCH_BACKEND";

#[derive(Parser)]
#[command(
    name = "attrbench",
    version,
    about = "Single-attribute image/text benchmark tooling"
)]
struct Cli {
    /// JSON run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset and validate it.
    Synth(SynthArgs),
    /// Re-check a stored dataset.
    Validate(ValidateArgs),
    /// Score a dataset with a named scorer.
    Eval(EvalArgs),
    /// Compare analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Evaluate the loss on embedding matrix files.
    Loss(LossArgs),
    /// Compose a hard-negative batch from a dataset's candidate sets.
    HnBatch(HnBatchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Subset name, comma-separated list, or `all`.
    #[arg(long)]
    subset: Option<String>,
    /// Cases per subset.
    #[arg(long)]
    cases: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `procedural` or an http(s) endpoint.
    #[arg(long, env = BACKEND_ENV)]
    backend: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Registered scorer name.
    #[arg(long)]
    scorer: Option<String>,
    /// Score table for the `table` scorer.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, env = BACKEND_ENV)]
    backend: Option<String>,
    /// Skip the 80-class probe.
    #[arg(long)]
    no_cls: bool,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

#[derive(Args)]
struct LossArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    texts: PathBuf,
    #[arg(long, requires = "hn_texts")]
    hn_images: Option<PathBuf>,
    #[arg(long, requires = "hn_images")]
    hn_texts: Option<PathBuf>,
    /// JSON array tagging each hard negative with its source case.
    #[arg(long)]
    hn_groups: Option<PathBuf>,
    /// JSON array tagging each trivial pair with a source case, or null.
    #[arg(long)]
    groups: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    own_group: bool,
}

#[derive(Args)]
struct HnBatchArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    trivial_pool: usize,
    #[arg(long)]
    n_t: Option<usize>,
    #[arg(long)]
    n_hn: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Values a `--config` file may supply.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    subset: Option<String>,
    cases: Option<usize>,
    seed: Option<u64>,
    backend: Option<String>,
    out: Option<PathBuf>,
    dataset: Option<PathBuf>,
    width: Option<u32>,
    height: Option<u32>,
    scorer: Option<String>,
    table: Option<PathBuf>,
    tau: Option<f64>,
    jobs: Option<usize>,
    loss: Option<LossConfig>,
}

enum Failure {
    Contract(String),
    Config(String),
    Backend(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Contract(_) => 1,
            Failure::Config(_) => 2,
            Failure::Backend(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Contract(m) | Failure::Config(m) | Failure::Backend(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Backend(_)
            | Error::Transport(_)
            | Error::Protocol(_)
            | Error::MissingCapability(_)
            | Error::Step { .. } => Failure::Backend(m),
            Error::InvalidInput(_)
            | Error::UnknownCategory(_)
            | Error::Io { .. }
            | Error::Json(_) => Failure::Config(m),
            _ => Failure::Contract(m),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn config_err(m: impl Into<String>) -> Failure {
    Failure::Config(m.into())
}

fn load_config(path: Option<&Path>) -> std::result::Result<RunConfig, Failure> {
    let Some(p) = path else {
        return Ok(RunConfig::default());
    };
    let bytes =
        std::fs::read(p).map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| config_err(format!("{}: {e}", p.display())))
}

fn parse_subsets(s: &str) -> std::result::Result<Vec<SubsetKind>, Failure> {
    if s == "all" {
        return Ok(SubsetKind::ALL.to_vec());
    }
    let mut out: Vec<SubsetKind> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let k: SubsetKind = part.parse().map_err(|e: Error| config_err(e.to_string()))?;
        if !out.contains(&k) {
            out.push(k);
        }
    }
    if out.is_empty() {
        return Err(config_err("no subset selected"));
    }
    out.sort_by_key(|k| k.index());
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| config_err(e.to_string()))?;
    v.push(b'\n');
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| config_err(e.to_string()))?;
    }
    std::fs::write(path, v).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn print_validation(r: &ValidationReport) {
    for v in &r.violations {
        println!("violation {} {:?}: {}", v.case_id, v.kind, v.detail);
    }
    println!(
        "validated {} cases, {} violations",
        r.cases_checked,
        r.violations.len()
    );
}

fn check_validation(dir: &Path) -> Outcome {
    let r = validate_dataset(dir)?;
    print_validation(&r);
    if r.is_clean() {
        Ok(())
    } else {
        Err(Failure::Contract(format!(
            "{} violations in {}",
            r.violations.len(),
            dir.display()
        )))
    }
}

fn synth(a: SynthArgs, cfg: &RunConfig, jobs: usize) -> Outcome {
    let seed = a
        .seed
        .or(cfg.seed)
        .ok_or_else(|| config_err("synth requires --seed"))?;
    let out = a
        .out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| config_err("synth requires --out"))?;
    let subsets = parse_subsets(
        a.subset
            .as_deref()
            .or(cfg.subset.as_deref())
            .unwrap_or("all"),
    )?;
    let defaults = BuildConfig::default();
    let build = BuildConfig {
        subsets,
        cases_per_subset: a.cases.or(cfg.cases).unwrap_or(defaults.cases_per_subset),
        seed,
        width: a.width.or(cfg.width).unwrap_or(defaults.width),
        height: a.height.or(cfg.height).unwrap_or(defaults.height),
    };
    let spec = a
        .backend
        .or_else(|| cfg.backend.clone())
        .unwrap_or_else(|| "procedural".into());
    let backend = BackendRegistry::default().create(&BackendConfig::new(spec))?;
    let m = build_dataset(&out, backend.as_ref(), &build, jobs)?;
    for f in &m.failures {
        println!("infeasible {}: {}", f.id, f.error);
    }
    println!(
        "wrote {} cases ({} infeasible) to {}",
        m.cases.len(),
        m.failures.len(),
        out.display()
    );
    check_validation(&out)
}

fn dataset_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> std::result::Result<PathBuf, Failure> {
    flag.or_else(|| cfg.dataset.clone())
        .ok_or_else(|| config_err("--dataset is required"))
}

fn validate(a: ValidateArgs, cfg: &RunConfig) -> Outcome {
    let dir = dataset_dir(a.dataset, cfg)?;
    let r = validate_dataset(&dir)?;
    print_validation(&r);
    if let Some(p) = a.report {
        write_json(&p, &r)?;
    }
    if r.is_clean() {
        Ok(())
    } else {
        Err(Failure::Contract(format!(
            "{} violations",
            r.violations.len()
        )))
    }
}

fn eval(a: EvalArgs, cfg: &RunConfig) -> Outcome {
    let dir = dataset_dir(a.dataset, cfg)?;
    let name = a
        .scorer
        .or_else(|| cfg.scorer.clone())
        .ok_or_else(|| config_err("--scorer is required"))?;
    let registry = ScorerRegistry::default();
    let backend = match a.backend.or_else(|| cfg.backend.clone()) {
        Some(spec) if name == "embedding" => {
            Some(BackendRegistry::default().create(&BackendConfig::new(spec))?)
        }
        _ => None,
    };
    let scorer = registry.create(
        &name,
        &ScorerConfig {
            seed: a.seed.or(cfg.seed).unwrap_or(0),
            table: a.table.or_else(|| cfg.table.clone()),
            backend,
            tau: a.tau.or(cfg.tau),
        },
    )?;
    let manifest = read_manifest(&dir)?;
    check_validation(&dir)?;
    let prompts = (!a.no_cls).then(class_prompts);
    let cases: Vec<StoredCase> = manifest
        .cases
        .iter()
        .map(|case| StoredCase { root: &dir, case })
        .collect();
    let scores = cases
        .par_iter()
        .map(|c| score_case(c, scorer.as_ref(), prompts.as_deref()))
        .collect::<attrbench::Result<Vec<_>>>()?;
    let report = aggregate(scores, scorer.name(), Some(dataset_checksum(&dir)?));
    let table = report.to_table();
    print!("{table}");
    if let Some(out) = a.out {
        write_json(&out.join("report.json"), &report)?;
        std::fs::write(out.join("report.txt"), table).map_err(|e| config_err(e.to_string()))?;
    }
    Ok(())
}

fn run_gradcheck(a: GradcheckArgs, cfg: &RunConfig) -> Outcome {
    let d = GradcheckConfig::default();
    let lambda = a.lambda.or(cfg.loss.map(|l| l.lambda)).unwrap_or(d.lambda);
    let gc = GradcheckConfig {
        batches: a.batches.unwrap_or(d.batches),
        seed: a.seed.or(cfg.seed).unwrap_or(d.seed),
        lambda,
        tolerance: a.tolerance.unwrap_or(d.tolerance),
        inject_sign_flip: a.inject_sign_flip,
        ..d
    };
    let r = gradcheck(&gc)?;
    println!(
        "gradcheck: {} batches, lambda {}, max rel err {:.3e}, tolerance {:.1e}, {}",
        r.batches.len(),
        gc.lambda,
        r.max_rel_error,
        gc.tolerance,
        if r.passed { "pass" } else { "FAIL" }
    );
    if let Some(p) = a.report {
        write_json(&p, &r)?;
    }
    if r.passed {
        Ok(())
    } else {
        Err(Failure::Contract(format!("{} batches failed", r.failures)))
    }
}

fn loss(a: LossArgs, cfg: &RunConfig) -> Outcome {
    let mut batch = EmbeddingBatch::trivial(read_matrix(&a.images)?, read_matrix(&a.texts)?);
    if let (Some(hi), Some(ht)) = (&a.hn_images, &a.hn_texts) {
        let (hi, ht) = (read_matrix(hi)?, read_matrix(ht)?);
        let groups: Vec<String> = match &a.hn_groups {
            Some(p) => read_json(p)?,
            None => vec!["hn".into(); hi.len()],
        };
        batch = batch.with_hard_negatives(hi, ht, groups);
    }
    if let Some(p) = &a.groups {
        batch.trivial_groups = read_json(p)?;
    }
    let mut lc = cfg.loss.unwrap_or_default();
    if let Some(l) = a.lambda {
        lc.lambda = l;
    }
    if a.own_group {
        lc.scope = HnScope::OwnGroup;
    }
    let temp = match a.tau.or(cfg.tau) {
        Some(t) => Temperature::new(t)?,
        None => Temperature::default(),
    };
    let parts = loss_parts(&batch, temp, &lc)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&parts).map_err(|e| config_err(e.to_string()))?
    );
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T, Failure> {
    let bytes = std::fs::read(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| config_err(e.to_string()))
}

fn hn_batch(a: HnBatchArgs, cfg: &RunConfig) -> Outcome {
    let dir = dataset_dir(a.dataset, cfg)?;
    let seed = a
        .seed
        .or(cfg.seed)
        .ok_or_else(|| config_err("hn-batch requires --seed"))?;
    let lc = cfg.loss.unwrap_or_default();
    let manifest = read_manifest(&dir)?;
    let sources: Vec<HnSource> = manifest
        .cases
        .iter()
        .map(|c| HnSource {
            case_id: c.id.clone(),
            k: c.k,
        })
        .collect();
    let spec = build_hn_batch(
        &sources,
        a.trivial_pool,
        a.n_t.unwrap_or(lc.n_trivial),
        a.n_hn.unwrap_or(lc.n_hard_negative),
        seed,
    )?;
    match a.out {
        Some(p) => write_json(&p, &spec)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&spec).map_err(|e| config_err(e.to_string()))?
        ),
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let cfg = load_config(cli.config.as_deref())?;
    let jobs = cli.jobs.or(cfg.jobs).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| config_err(e.to_string()))?;
    match cli.command {
        Command::Synth(a) => synth(a, &cfg, jobs),
        Command::Validate(a) => validate(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::Gradcheck(a) => run_gradcheck(a, &cfg),
        Command::Loss(a) => loss(a, &cfg),
        Command::HnBatch(a) => hn_batch(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
