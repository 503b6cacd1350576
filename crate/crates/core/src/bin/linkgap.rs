use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use linkgap::classifier::gradcheck::gradient_check;
use linkgap::classifier::MlpHyperparams;
use linkgap::config::RunConfig;
use linkgap::ensemble::VoteMode;
use linkgap::pipeline::{
    cmd_experiment, cmd_ingest, cmd_predict, predictions_json, replay_manifest, PredictOptions,
    OUT_DIR_ENV,
};
use linkgap::synth::{SynthConfig, SynthGenerator};
use linkgap::util::write_atomic;
use linkgap::Error;

#[derive(Parser)]
#[command(name = "linkgap", version, about = "Find sentences that should cite something but do not")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; strategy i uses seed + i.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the LINKGAP_OUT_DIR environment variable).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Extra setting, same keys as the configuration file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    settings: Vec<String>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label and tokenize a jsonlines article file into corpus.jsonl.
    Ingest(InputArg),
    /// Train every strategy, vote, and write reports and a manifest.
    Experiment(ExperimentArgs),
    /// Score the sentences of new articles with a trained bundle.
    Predict(PredictArgs),
    /// Compare backpropagation with finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a seeded synthetic article collection.
    Synth(SynthArgs),
}

#[derive(Args)]
struct InputArg {
    /// Input jsonlines file.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    input: InputArg,
    /// Comma-separated strategy ids, or `all`.
    #[arg(long)]
    strategies: Option<String>,
    /// Re-run the experiment recorded in this manifest.
    #[arg(long, conflicts_with_all = ["input", "strategies"])]
    replay: Option<PathBuf>,
    /// Ignore and do not fill the model cache.
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Jsonlines file with the articles to score.
    #[arg(long)]
    input: PathBuf,
    /// Output directory of an `experiment` run.
    #[arg(long)]
    bundle: PathBuf,
    /// Comma-separated strategy ids to combine (default: all in the bundle).
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long, default_value = "soft", value_parser = ["soft", "hard"])]
    mode: String,
    /// Write the json here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 10)]
    trials: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    documents: Option<usize>,
}

fn run_config(cli: &Cli, input: Option<&Path>) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for s in &cli.settings {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(p) = input {
        cfg.input = Some(p.to_path_buf());
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.out_dir = resolve_out_dir(cli, &cfg.out_dir);
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_out_dir(cli: &Cli, configured: &Path) -> PathBuf {
    if let Some(p) = &cli.out_dir {
        return p.clone();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => configured.to_path_buf(),
    }
}

fn parse_ids(s: &str) -> Result<Option<Vec<u32>>, Error> {
    if s == "all" {
        return Ok(None);
    }
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad strategy id {x:?}")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Ingest(args) => {
            let cfg = run_config(&cli, args.input.as_deref())?;
            let summary = cmd_ingest(&cfg)?;
            println!(
                "{} documents, {} sentences ({} skipped lines); {} eligible anchors, positive fraction {:.4}",
                summary.report.documents,
                summary.report.sentences,
                summary.report.skipped_lines,
                summary.report.eligible_anchors,
                summary.positive_anchor_fraction
            );
            println!("wrote {}", cfg.out_dir.join("corpus.jsonl").display());
        }
        Command::Experiment(args) => {
            let outcome = if let Some(manifest) = &args.replay {
                let out_dir = resolve_out_dir(&cli, Path::new(linkgap::config::DEFAULT_OUT_DIR));
                replay_manifest(manifest, &out_dir, !args.no_cache)?
            } else {
                let mut cfg = run_config(&cli, args.input.input.as_deref())?;
                if let Some(s) = &args.strategies {
                    cfg.strategies = parse_ids(s)?;
                }
                if args.no_cache {
                    cfg.cache = false;
                }
                cfg.validate()?;
                cmd_experiment(&cfg)?
            };
            for row in &outcome.report.strategies {
                println!(
                    "strategy {} (n={}, m={}): F1 {:.4}",
                    row.strategy_id, row.n, row.m, row.f1
                );
            }
            for row in &outcome.report.voting {
                println!(
                    "{} voting, {} estimators: F1 {:.4}{}",
                    row.mode,
                    row.ensemble_size,
                    row.f1,
                    if row.degenerate { " (degenerate)" } else { "" }
                );
            }
            for w in &outcome.report.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {}", outcome.manifest_path.display());
        }
        Command::Predict(args) => {
            let opts = PredictOptions {
                strategies: match &args.strategies {
                    Some(s) => parse_ids(s)?,
                    None => None,
                },
                mode: args.mode.parse::<VoteMode>()?,
            };
            let rows = cmd_predict(&args.input, &args.bundle, &opts)?;
            if rows.is_empty() {
                eprintln!("notice: no eligible sentences to score");
            }
            let json = predictions_json(&rows)?;
            match &args.output {
                Some(p) => write_atomic(p, &json)?,
                None => print!("{}", String::from_utf8_lossy(&json)),
            }
        }
        Command::Gradcheck(args) => {
            let hp = MlpHyperparams {
                seed: cli.seed.unwrap_or(0),
                ..Default::default()
            };
            let r = gradient_check(&hp, args.trials);
            let err = r.max_rel_error;
            println!(
                "max relative error over {} trials: {err:.3e} ({} coordinates, {} skipped at ReLU kinks)",
                args.trials, r.checked, r.skipped_kinks
            );
            if !(err < 1e-4) {
                return Err(Error::Invariant(format!(
                    "gradient check failed: {err:.3e} >= 1e-4"
                )));
            }
        }
        Command::Synth(args) => {
            let mut cfg = SynthConfig::default();
            if let Some(n) = args.documents {
                cfg.documents = n;
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            SynthGenerator::new(cfg)?.write_jsonl(&args.output)?;
            println!("wrote {}", args.output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
