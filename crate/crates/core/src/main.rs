//! Command-line entry point: corpus curation, the two training stages,
//! evaluation, and the ablation runners, all driven by one TOML config and a
//! master seed. Every command writes its artifacts under the output
//! directory and is byte-reproducible given identical inputs and seeds.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use tabcpt::checkpoint::{load_checkpoint, params_digest, save_checkpoint, Checkpoint, Stage};
use tabcpt::config::RunConfig;
use tabcpt::contamination::{render_report_jsonl, scan_corpus};
use tabcpt::error::exit;
use tabcpt::eval::{
    aggregate_report, evaluate_suite, parse_baselines, prepare_suite, render_ablation,
    render_jsonl, render_table, run_ablation, AblationArm, AblationKind, EvalProtocol, MethodEval,
};
use tabcpt::manifest::{read_manifest, write_curated};
use tabcpt::table::Table;
use tabcpt::train::{continue_pretrain, prepare_corpus, pretrain_base, LogEntry, TrainConfig};
use tabcpt::{Error, Result};

#[derive(Parser)]
#[command(name = "tabcpt", version, about = "In-context tabular learner: curation, two-stage training, evaluation")]
struct Cli {
    /// Run configuration (TOML); a built-in desk-scale default is used when
    /// omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Snap the training section to the reference-scale constants.
    #[arg(long, global = true)]
    paper_fidelity: bool,
    /// Proceed past a failing curation guard (logged loudly).
    #[arg(long, global = true)]
    override_curation: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AblationKindArg {
    ContextSize,
    DataSource,
}

#[derive(Subcommand)]
enum Command {
    /// Screen a training corpus against an evaluation suite; write the
    /// findings report and a curated corpus manifest.
    Curate {
        /// Training-corpus manifest (JSONL); falls back to the config's
        /// corpus_manifest.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Evaluation-suite manifest (JSONL).
        #[arg(long)]
        eval: PathBuf,
    },
    /// Stage one: pre-train a base model on the synthetic prior.
    TrainBase {
        /// Checkpoint path; defaults to <output-dir>/base.ckpt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stage two: continue pre-training a base checkpoint on a curated
    /// corpus under the anchor penalty.
    ContinuePretrain {
        /// Base checkpoint from train-base.
        #[arg(long)]
        base: PathBuf,
        /// Curated corpus manifest; falls back to the config's
        /// corpus_manifest.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Checkpoint path; defaults to <output-dir>/continued.ckpt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate one or more checkpoints on an evaluation suite and
    /// write the aggregate report.
    Evaluate {
        /// Checkpoint as name=path; repeatable.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<String>,
        /// Evaluation-suite manifest; falls back to the config's
        /// eval.suite_manifest.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Optional baselines file (method dataset metric value per line).
        #[arg(long)]
        baselines: Option<PathBuf>,
    },
    /// Continued-pre-training ablation along one factor, reporting per-seed
    /// AUC deltas against the base checkpoint.
    Ablation {
        #[arg(long)]
        kind: AblationKindArg,
        /// Base checkpoint from train-base.
        #[arg(long)]
        base: PathBuf,
        /// context-size: the corpus manifest shared by all arms.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// context-size: a row cap per arm; repeatable.
        #[arg(long = "rows")]
        rows: Vec<usize>,
        /// data-source: an arm as name=manifest[+manifest...]; repeatable.
        #[arg(long = "arm")]
        arms: Vec<String>,
        /// Evaluation-suite manifest; falls back to the config's
        /// eval.suite_manifest.
        #[arg(long)]
        suite: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::desk_default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if cli.paper_fidelity {
        for change in cfg.apply_paper_fidelity() {
            log::info!("paper-fidelity: {change}");
        }
        cfg.validate()?;
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;

    match cli.command {
        Command::Curate { corpus, eval } => cmd_curate(&cfg, corpus, &eval),
        Command::TrainBase { out } => cmd_train_base(&cfg, out),
        Command::ContinuePretrain { base, corpus, out } => {
            cmd_continue_pretrain(&cfg, &base, corpus, out, cli.override_curation)
        }
        Command::Evaluate { checkpoints, suite, baselines } => {
            cmd_evaluate(&cfg, &checkpoints, suite, baselines)
        }
        Command::Ablation { kind, base, corpus, rows, arms, suite } => {
            cmd_ablation(&cfg, kind, &base, corpus, &rows, &arms, suite, cli.override_curation)
        }
    }
}

/// Resolve a manifest path from a flag or the config, in that order.
fn manifest_path(flag: Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone()).ok_or_else(|| {
        Error::Input(format!("no {what} manifest given (flag or config file)"))
    })
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_train_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    let mut out = String::new();
    for entry in log {
        out.push_str(&serde_json::to_string(entry).expect("log entry serializes"));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Rewrite relative dataset paths to absolute, anchored at the manifest's
/// own directory. Curated manifests land in the output directory, away from
/// the source manifest, so relative paths must be pinned down before that.
fn absolutize_datasets(
    datasets: &[tabcpt::manifest::DatasetManifest],
    base: &Path,
) -> Result<Vec<tabcpt::manifest::DatasetManifest>> {
    datasets
        .iter()
        .cloned()
        .map(|mut d| {
            if !d.path.is_absolute() {
                d.path = std::path::absolute(base.join(&d.path))
                    .map_err(|e| Error::io(&d.path, e))?;
            }
            Ok(d)
        })
        .collect()
}

fn cmd_curate(cfg: &RunConfig, corpus: Option<PathBuf>, eval: &Path) -> Result<i32> {
    let corpus_path = manifest_path(corpus, &cfg.corpus_manifest, "corpus")?;
    let corpus_manifest = read_manifest(&corpus_path)?;
    let eval_manifest = read_manifest(eval)?;
    // Dataset paths in each manifest resolve relative to that manifest.
    let train = absolutize_datasets(&corpus_manifest.datasets, &manifest_dir(&corpus_path))?;
    let eval_ds = absolutize_datasets(&eval_manifest.datasets, &manifest_dir(eval))?;
    let report = scan_corpus(&train, &eval_ds, Path::new("."), &cfg.curate)?;

    let report_path = cfg.output_dir.join("curation_report.jsonl");
    write_text(&report_path, &render_report_jsonl(&report))?;

    let kept: Vec<_> = train
        .iter()
        .filter(|d| report.kept.contains(&d.id))
        .cloned()
        .collect();
    let curated_path = cfg.output_dir.join("curated_manifest.jsonl");
    write_curated(
        &curated_path,
        &corpus_path.display().to_string(),
        &kept,
        report.excluded.len(),
    )?;

    println!(
        "curation: {} kept, {} excluded, {} findings ({} load errors)",
        report.kept.len(),
        report.excluded.len(),
        report.findings.len(),
        report.errors.len(),
    );
    println!("report: {}", report_path.display());
    println!("curated manifest: {}", curated_path.display());
    Ok(if report.excluded.is_empty() { exit::SUCCESS } else { exit::CURATION_EXCLUSIONS })
}

fn cmd_train_base(cfg: &RunConfig, out: Option<PathBuf>) -> Result<i32> {
    log::info!(
        "stage 1: {} steps on the {} prior, peak lr {}, seed {}",
        cfg.train.steps,
        cfg.prior.family,
        cfg.train.peak_lr,
        cfg.seed
    );
    let outcome = pretrain_base(&cfg.model, &cfg.prior, &cfg.train, cfg.seed)?;
    write_train_log(&cfg.output_dir.join("train_base_log.jsonl"), &outcome.log)?;
    let path = out.unwrap_or_else(|| cfg.output_dir.join("base.ckpt"));
    save_checkpoint(
        &path,
        &Checkpoint {
            config: cfg.model.clone(),
            stage: Stage::Base,
            steps: cfg.train.steps,
            seed: cfg.seed,
            anchor_digest: [0; 32],
            params: outcome.params,
        },
    )?;
    if let Some(last) = outcome.log.last() {
        println!("final step {}: loss {:.6}", last.step, last.loss);
    }
    println!("checkpoint: {}", path.display());
    Ok(exit::SUCCESS)
}

/// Load a corpus manifest for stage-2 training, enforcing the curation
/// guard: the manifest must be an unmodified `curate` output unless the
/// override flag is set, in which case the bypass is logged loudly.
fn load_curated_corpus(
    path: &Path,
    override_curation: bool,
) -> Result<(Vec<Table>, usize)> {
    let manifest = read_manifest(path)?;
    match manifest.verify_curated(path) {
        Ok(()) => {}
        Err(e) if override_curation => {
            log::warn!("CURATION GUARD OVERRIDDEN: {e}");
            log::warn!("training corpus was NOT verified against an evaluation suite");
        }
        Err(e) => return Err(e),
    }
    let (tables, failures) = prepare_corpus(&manifest.datasets, &manifest_dir(path));
    for (id, why) in &failures {
        log::warn!("corpus dataset {id} skipped: {why}");
    }
    if tables.is_empty() {
        return Err(Error::Input(format!(
            "{}: no readable dataset in corpus",
            path.display()
        )));
    }
    Ok((tables, failures.len()))
}

fn cmd_continue_pretrain(
    cfg: &RunConfig,
    base: &Path,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
    override_curation: bool,
) -> Result<i32> {
    let base_ckpt = load_checkpoint(base)?;
    base_ckpt.expect_config(&cfg.model)?;
    let corpus_path = manifest_path(corpus, &cfg.corpus_manifest, "corpus")?;
    let (tables, skipped) = load_curated_corpus(&corpus_path, override_curation)?;
    log::info!(
        "stage 2: {} steps over {} tables ({} skipped), alpha {}, peak lr {}, seed {}",
        cfg.train.steps,
        tables.len(),
        skipped,
        cfg.train.alpha,
        cfg.train.peak_lr,
        cfg.seed
    );
    let outcome = continue_pretrain(&cfg.model, &base_ckpt.params, &tables, &cfg.train, cfg.seed)?;
    write_train_log(&cfg.output_dir.join("continue_log.jsonl"), &outcome.log)?;
    let path = out.unwrap_or_else(|| cfg.output_dir.join("continued.ckpt"));
    save_checkpoint(
        &path,
        &Checkpoint {
            config: cfg.model.clone(),
            stage: Stage::Continued,
            steps: cfg.train.steps,
            seed: cfg.seed,
            anchor_digest: params_digest(&base_ckpt.params),
            params: outcome.params,
        },
    )?;
    if let Some(last) = outcome.log.last() {
        println!(
            "final step {}: loss {:.6}, anchor distance {:.6}",
            last.step, last.loss, last.anchor_distance
        );
    }
    println!("checkpoint: {}", path.display());
    Ok(exit::SUCCESS)
}

fn parse_named(spec: &str, what: &str) -> Result<(String, String)> {
    spec.split_once('=')
        .map(|(n, p)| (n.to_string(), p.to_string()))
        .ok_or_else(|| Error::Input(format!("{what} must be name=path, got `{spec}`")))
}

fn load_suite(cfg: &RunConfig, suite: Option<PathBuf>) -> Result<Vec<Table>> {
    let path = manifest_path(suite, &cfg.eval.suite_manifest, "evaluation-suite")?;
    let manifest = read_manifest(&path)?;
    prepare_suite(&manifest.datasets, &manifest_dir(&path))
}

fn eval_protocol(cfg: &RunConfig) -> EvalProtocol {
    EvalProtocol {
        k: cfg.eval.k,
        max_context_rows: cfg.eval.max_context_rows,
        max_cells: cfg.eval.max_cells,
    }
}

fn cmd_evaluate(
    cfg: &RunConfig,
    checkpoints: &[String],
    suite: Option<PathBuf>,
    baselines: Option<PathBuf>,
) -> Result<i32> {
    let tables = load_suite(cfg, suite)?;
    let proto = eval_protocol(cfg);
    let seed = cfg.eval.seeds[0];
    let mut live = Vec::new();
    for spec in checkpoints {
        let (name, path) = parse_named(spec, "--checkpoint")?;
        let ckpt = load_checkpoint(Path::new(&path))?;
        log::info!("evaluating {name} ({} checkpoint, {} steps)", ckpt.stage, ckpt.steps);
        let datasets = evaluate_suite(&ckpt.config, &ckpt.params, &tables, &proto, seed)?;
        live.push(MethodEval { method: name, datasets });
    }
    let base_scores = match baselines {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Some(parse_baselines(&text)?)
        }
        None => None,
    };
    let echo = format!(
        "k={} seed={} max_context_rows={} max_cells={} methods={}",
        proto.k,
        seed,
        proto.max_context_rows,
        proto.max_cells,
        live.iter().map(|m| m.method.as_str()).collect::<Vec<_>>().join(","),
    );
    let report = aggregate_report(&live, base_scores.as_ref(), &echo)?;
    let jsonl_path = cfg.output_dir.join("eval_report.jsonl");
    let table_path = cfg.output_dir.join("eval_report.txt");
    write_text(&jsonl_path, &render_jsonl(&report))?;
    let table_text = render_table(&report);
    write_text(&table_path, &table_text)?;
    print!("{table_text}");
    println!("report: {}", jsonl_path.display());
    Ok(exit::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablation(
    cfg: &RunConfig,
    kind: AblationKindArg,
    base: &Path,
    corpus: Option<PathBuf>,
    rows: &[usize],
    arm_specs: &[String],
    suite: Option<PathBuf>,
    override_curation: bool,
) -> Result<i32> {
    let base_ckpt = load_checkpoint(base)?;
    let tables = load_suite(cfg, suite)?;
    let proto = eval_protocol(cfg);

    let (kind, arms) = match kind {
        AblationKindArg::ContextSize => {
            if !arm_specs.is_empty() {
                return Err(Error::Config(
                    "--arm is for data-source ablations; use --rows here".into(),
                ));
            }
            let corpus_path = manifest_path(corpus, &cfg.corpus_manifest, "corpus")?;
            let (corpus_tables, _) = load_curated_corpus(&corpus_path, override_curation)?;
            let arms: Vec<AblationArm> = rows
                .iter()
                .map(|&cap| AblationArm {
                    name: format!("rows-{cap}"),
                    train: TrainConfig { max_context_rows: cap, ..cfg.train.clone() },
                    corpus: corpus_tables.clone(),
                })
                .collect();
            (AblationKind::ContextSize, arms)
        }
        AblationKindArg::DataSource => {
            if !rows.is_empty() {
                return Err(Error::Config(
                    "--rows is for context-size ablations; use --arm here".into(),
                ));
            }
            let mut arms = Vec::new();
            for spec in arm_specs {
                let (name, paths) = parse_named(spec, "--arm")?;
                let mut corpus_tables = Vec::new();
                for part in paths.split('+') {
                    let (mut tables, _) =
                        load_curated_corpus(Path::new(part), override_curation)?;
                    corpus_tables.append(&mut tables);
                }
                arms.push(AblationArm { name, train: cfg.train.clone(), corpus: corpus_tables });
            }
            (AblationKind::DataSource, arms)
        }
    };

    let report = run_ablation(
        kind,
        &base_ckpt.config,
        &base_ckpt.params,
        &arms,
        &tables,
        &proto,
        &cfg.eval.seeds,
    )?;
    let path = cfg.output_dir.join("ablation_report.jsonl");
    write_text(&path, &render_ablation(&report))?;
    for arm in &report.arms {
        println!(
            "{} ({}): mean AUC delta {:+.4} over {} seeds",
            arm.name,
            arm.factor,
            arm.mean_delta,
            arm.per_seed.len()
        );
    }
    println!("report: {}", path.display());
    Ok(exit::SUCCESS)
}
