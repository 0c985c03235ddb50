//! `sqlprompt`: batch runs, evaluation and reports over a text-to-SQL corpus.
//!
//! Exit status: 0 on success, 2 for usage or configuration errors, 1 for
//! anything that fails at runtime.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sqlprompt_core::eval::{evaluate_run, render_efficiency_table, render_report_text};
use sqlprompt_core::pipeline::{
    build_counter, eval_options, export_sft_pairs, load_dataset, load_predictions, run_dataset, write_report,
    write_run_dir, BackendKind, ConfigError, RunConfig, RunContext,
};
use sqlprompt_core::{Error, EvalReport};

#[derive(Parser, Debug)]
#[command(name = "sqlprompt", version, about = "Prompted text-to-SQL runs and evaluation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set selection.tau=0.85`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Completion backend.
    #[arg(long, value_enum, global = true)]
    backend: Option<BackendArg>,
    /// Record every backend call into this fixture directory.
    #[arg(long, value_name = "DIR", global = true, conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Answer backend calls from this fixture directory.
    #[arg(long, value_name = "DIR", global = true)]
    replay: Option<PathBuf>,
    /// Output location: a run directory, or a file for export-sft.
    #[arg(long, value_name = "PATH", global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check dataset paths and warm the embedding cache.
    Prepare,
    /// Run inference over the evaluation split and score it.
    Run,
    /// Score an existing predictions file.
    Evaluate {
        /// JSON lines, one prediction per instance.
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Accuracy against token cost for one or more run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Write zero-shot {prompt, response} pairs for fine-tuning.
    ExportSft {
        #[arg(long, value_enum, default_value_t = SplitArg::Pool)]
        split: SplitArg,
    },
    /// `run` with every backend call recorded (needs `--record`).
    Record,
    /// `run` answered entirely from fixtures (needs `--replay`).
    Replay,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BackendArg {
    Oracle,
    Http,
    Replay,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SplitArg {
    /// The candidate pool (the training split).
    Pool,
    /// The evaluation instances.
    Instances,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(c) = config_error(&e) {
                match c.key() {
                    Some(key) => eprintln!("error: bad config key `{key}`: {c}"),
                    None => eprintln!("error: {c}"),
                }
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn config_error(e: &anyhow::Error) -> Option<&ConfigError> {
    e.chain().find_map(|cause| {
        cause
            .downcast_ref::<ConfigError>()
            .or_else(|| match cause.downcast_ref::<Error>() {
                Some(Error::Config(c)) => Some(c),
                _ => None,
            })
    })
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Report { runs } => report(runs),
        Command::Prepare => prepare(&load_config(g)?),
        Command::Run => run(&load_config(g)?, g),
        Command::Record => {
            if g.record.is_none() {
                bail!(ConfigError::Invalid {
                    key: "backend.fixtures".into(),
                    reason: "record needs --record <dir>".into()
                });
            }
            run(&load_config(g)?, g)
        }
        Command::Replay => {
            if g.replay.is_none() {
                bail!(ConfigError::Invalid {
                    key: "backend.fixtures".into(),
                    reason: "replay needs --replay <dir>".into()
                });
            }
            run(&load_config(g)?, g)
        }
        Command::Evaluate { predictions } => evaluate(&load_config(g)?, predictions, g.out.as_deref()),
        Command::ExportSft { split } => export_sft(&load_config(g)?, *split, g.out.as_deref()),
    }
}

/// Config file plus `--set` overrides, then the dedicated flags.
fn load_config(g: &Global) -> Result<RunConfig> {
    let Some(path) = &g.config else {
        bail!(ConfigError::Invalid {
            key: "--config".into(),
            reason: "a configuration file is required".into()
        });
    };
    let mut cfg = RunConfig::load(path, &g.overrides)?;
    if let Some(jobs) = g.jobs {
        cfg.jobs = jobs;
    }
    if let Some(b) = g.backend {
        cfg.backend.kind = match b {
            BackendArg::Oracle => BackendKind::Oracle,
            BackendArg::Http => BackendKind::Http,
            BackendArg::Replay => BackendKind::Replay,
        };
    }
    if let Some(dir) = &g.record {
        cfg.backend.record = true;
        cfg.backend.fixtures = Some(dir.clone());
    }
    if let Some(dir) = &g.replay {
        cfg.backend.kind = BackendKind::Replay;
        cfg.backend.record = false;
        cfg.backend.fixtures = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare(cfg: &RunConfig) -> Result<()> {
    let (ctx, instances, skipped) = RunContext::from_config(cfg)?;
    println!(
        "{} schemas, {} instances, {} pool candidates, {} skipped records",
        ctx.schemas.len(),
        instances.len(),
        ctx.pool.len(),
        skipped.len()
    );
    for s in &skipped {
        println!("  skipped record {}: {}", s.index, s.reason);
    }
    Ok(())
}

fn run(cfg: &RunConfig, g: &Global) -> Result<()> {
    let (ctx, instances, skipped) = RunContext::from_config(cfg)?;
    let out = run_dataset(&instances, &ctx, cfg)?;
    if let Some(dir) = g.out.as_ref().or(cfg.output.run_dir.as_ref()) {
        write_run_dir(dir, cfg, &out, skipped.len())?;
        log::info!("wrote {}", dir.display());
    }
    print!("{}", render_report_text(&out.report));
    Ok(())
}

fn evaluate(cfg: &RunConfig, predictions: &Path, out: Option<&Path>) -> Result<()> {
    let data = load_dataset(&cfg.dataset)?;
    let preds = load_predictions(predictions)?;
    let counter = build_counter(&cfg.tokens)?;
    let report = evaluate_run(&preds, &data.instances, &data.schemas, &eval_options(cfg, counter.as_ref())?);
    if let Some(dir) = out {
        write_report(dir, &report)?;
    }
    print!("{}", render_report_text(&report));
    Ok(())
}

fn report(runs: &[PathBuf]) -> Result<()> {
    let mut rows: Vec<(String, EvalReport)> = Vec::new();
    for dir in runs {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let report = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        rows.push((dir.display().to_string(), report));
    }
    print!("{}", render_efficiency_table(&rows));
    Ok(())
}

fn export_sft(cfg: &RunConfig, split: SplitArg, out: Option<&Path>) -> Result<()> {
    let Some(out) = out else {
        bail!(ConfigError::Invalid {
            key: "--out".into(),
            reason: "export-sft needs an output file".into()
        });
    };
    let data = load_dataset(&cfg.dataset)?;
    let instances = match split {
        SplitArg::Pool => &data.pool.instances,
        SplitArg::Instances => &data.instances,
    };
    let e = export_sft_pairs(instances, &data.schemas, &cfg.representation_config(), out)?;
    println!("wrote {} pairs to {} ({} skipped)", e.written, out.display(), e.skipped);
    Ok(())
}
