//! `mixloop` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mixloop_core::annotation_model::AnnotationModel;
use mixloop_core::corpus::{load_corpus, seed_pools_with, DataFormat, Instance};
use mixloop_core::eval::report::{discrepancy_records, write_aggregate};
use mixloop_core::eval::{aggregate_curves, discrepancy_detection, emit_ablation_table, emit_report, negative_label_audit};
use mixloop_core::orchestrator::{annotate_with_model, fit_molam, load_data, load_latest, Runner};
use mixloop_core::{Ablation, Error, Result, RunConfig, StrategyName};

#[derive(Parser)]
#[command(name = "mixloop", version, about = "Active learning with a mixture of LLM annotators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run (or an ablation suite) from a config file.
    Run(RunArgs),
    /// Label a file of instances with the annotation model.
    Annotate(AnnotateArgs),
    /// Negative-label and discrepancy diagnostics for a finished run.
    Audit(AuditArgs),
    /// Re-emit report files from checkpoints, or aggregate several runs.
    Report(ReportArgs),
    /// Check a config file and list every problem found.
    ValidateConfig(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; ablation suites get one subdirectory per configuration.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    strategy: Option<String>,
    /// A, B, C, D or `all`.
    #[arg(long)]
    ablation: Option<String>,
    /// Continue the run already in `--out` from its newest checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    config: PathBuf,
    /// JSONL or CSV with `id`, `text` and (for simulated annotators) `label`.
    #[arg(long)]
    input: PathBuf,
    /// Trained annotation model; fitted from the config's seed pool when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output JSONL path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory to re-emit.
    #[arg(long, conflicts_with = "aggregate")]
    run: Option<PathBuf>,
    /// Run directories whose curves are averaged into `--out/curve_aggregate.csv`.
    #[arg(long, num_args = 1..)]
    aggregate: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "annotator" => 3,
        "io" => 4,
        "checkpoint" | "state" => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Annotate(a) => cmd_annotate(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Report(a) => cmd_report(a),
        Command::ValidateConfig(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut config = RunConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn drive(config: RunConfig, dir: &Path, resume: bool) -> Result<Runner> {
    let mut runner = if resume {
        Runner::resume(dir)?
    } else {
        Runner::start(config, dir)?
    };
    while let mixloop_core::orchestrator::StepOutcome::Advanced(t) = runner.step()? {
        if let Some(m) = runner.state().metrics.last() {
            eprintln!(
                "iteration {t}: pool {} micro-F1 {:.4}",
                m.pool_size, m.micro_f1
            );
        }
    }
    Ok(runner)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = load_config(&args.config, args.seed)?;
    if let Some(name) = &args.strategy {
        config.strategy = StrategyName::parse(name).ok_or_else(|| {
            Error::Config(vec![format!("unknown strategy `{name}`")])
        })?;
    }
    let suite: Vec<Ablation> = match args.ablation.as_deref() {
        None => Vec::new(),
        Some(a) if a.eq_ignore_ascii_case("all") => Ablation::ALL.to_vec(),
        Some(a) => vec![a.parse()?],
    };
    config.validate()?;

    if suite.is_empty() {
        let runner = drive(config, &args.out, args.resume)?;
        println!("{}", runner.dir().join("summary.txt").display());
        return Ok(());
    }
    let mut curves = Vec::new();
    for ablation in suite {
        let mut c = config.clone();
        ablation.apply(&mut c);
        let dir = args.out.join(ablation.to_string());
        let runner = drive(c, &dir, args.resume && dir.join("manifest.json").exists())?;
        curves.push((ablation.to_string(), vec![runner.state().metrics.clone()]));
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    emit_ablation_table(&args.out, &curves)?;
    println!("{}", args.out.join("ablation.csv").display());
    Ok(())
}

fn cmd_annotate(args: AnnotateArgs) -> Result<()> {
    let config = load_config(&args.config, args.seed)?;
    config.validate()?;
    let data = load_data(&config)?;
    let space = &data.label_space;
    let corpus = load_corpus(&args.input, DataFormat::from_path(&args.input), space)?;
    let model = match &args.model {
        Some(p) => AnnotationModel::load(p)?,
        None => {
            let pools = seed_pools_with(&data.train, config.n_init, config.seed, space.len(), config.stratified_init)?;
            let unlabeled: Vec<String> = pools.unlabeled().iter().cloned().collect();
            fit_molam(&config, &data, pools.labeled(), &unlabeled)?.0
        }
    };
    let instances: Vec<&Instance> = corpus.iter().collect();
    let labels = annotate_with_model(
        &model,
        &data.annotators,
        &instances,
        space,
        config.seed,
        config.molam.delta,
        config.annotation.max_in_flight,
    )?;
    let mut out = String::new();
    for (inst, l) in instances.iter().zip(&labels) {
        let a = &l.annotation;
        let row = json!({
            "id": inst.id,
            "y_plus": a.y_plus,
            "label": space.name(a.y_plus),
            "y_minus": a.y_minus.iter().filter_map(|&k| space.name(k)).collect::<Vec<_>>(),
            "confidence": a.confidence,
        });
        out.push_str(&row.to_string());
        out.push('\n');
    }
    match &args.output {
        Some(p) => mixloop_core::io::write_atomic(p, out.as_bytes()),
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn run_label_space(dir: &Path) -> Result<(RunConfig, mixloop_core::LabelSpace)> {
    let config = RunConfig::load(&dir.join("config.toml"))?;
    let space = load_data(&config)?.label_space;
    Ok((config, space))
}

fn cmd_audit(args: AuditArgs) -> Result<()> {
    let (_, space) = run_label_space(&args.run)?;
    let (state, _) = load_latest(&args.run)?;
    let audited: Vec<_> = state
        .records
        .iter()
        .filter(|r| r.iteration.is_some() && r.gold.is_some())
        .collect();
    let nl = negative_label_audit(
        audited.iter().map(|r| (r.y_minus.as_slice(), r.gold.unwrap_or(0))),
        space.len(),
    );
    let detection = discrepancy_detection(&discrepancy_records(&state.records)).ok();
    let report = json!({
        "iterations": state.iteration,
        "annotated_with_gold": audited.len(),
        "negative_labels": nl,
        "discrepancy_detection": detection,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    if let Some(dir) = &args.run {
        let (_, space) = run_label_space(dir)?;
        let (state, _) = load_latest(dir)?;
        emit_report(&state, &space, dir)?;
        println!("{}", dir.join("summary.txt").display());
        return Ok(());
    }
    if args.aggregate.is_empty() {
        return Err(Error::Config(vec!["give --run DIR or --aggregate DIR...".into()]));
    }
    let states = args
        .aggregate
        .iter()
        .map(|d| load_latest(d).map(|(s, _)| s.metrics))
        .collect::<Result<Vec<_>>>()?;
    let slices: Vec<&[_]> = states.iter().map(Vec::as_slice).collect();
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let path = args.out.join("curve_aggregate.csv");
    write_aggregate(&path, &aggregate_curves(&slices))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    config.validate()?;
    println!("ok");
    Ok(())
}
