//! Command-line surface. Exit codes: 0 success, 1 validation/usage error,
//! 2 runtime failure. Seed precedence: --set > config file > GEOWORLD_SEED
//! environment variable > built-in default.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use geoworld::ablation::{default_grid, run_grid};
use geoworld::config::RunConfig;
use geoworld::harness;
use geoworld::report::{emit_plots, emit_tables};
use geoworld::scene::{generate_corpus, read_jsonl, write_jsonl};
use geoworld::tensor::load_params;
use geoworld::train::evaluate;

#[derive(Parser)]
#[command(name = "geoworld", version, about = "Geometry distillation for a miniature VLM")]
struct Cli {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. --set loss.lambda_align=0 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a QA corpus as JSON Lines.
    GenData {
        /// First scene seed; later examples use successive seeds.
        #[arg(long, default_value_t = 1)]
        seed_start: u64,
        #[arg(long)]
        count: usize,
        /// Output .jsonl path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every configured seed and evaluate on the held-out split.
    Train {
        /// Run output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved checkpoint on the configured eval split.
    Eval {
        /// Directory holding params.bin + manifest.json.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the default one-axis-at-a-time ablation grid.
    Ablate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate tables and plots from stored metrics.
    Report {
        /// Metrics root (a finished train/ablate output directory).
        #[arg(long)]
        metrics: PathBuf,
        /// Report directory; defaults to <metrics>/report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig, String> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read {}: {}", p.display(), e))?;
            serde_json::from_str::<serde_json::Value>(&text)
                .map_err(|e| format!("{}: {}", p.display(), e))?
        }
        None => serde_json::json!({}),
    };
    let obj = value
        .as_object_mut()
        .ok_or_else(|| "config root must be a JSON object".to_string())?;
    if !obj.contains_key("seeds") {
        if let Ok(raw) = std::env::var("GEOWORLD_SEED") {
            let seed: u64 = raw
                .parse()
                .map_err(|_| format!("GEOWORLD_SEED must be an integer, got '{}'", raw))?;
            obj.insert("seeds".into(), serde_json::json!([seed]));
        }
    }
    let cfg = RunConfig::from_value(value).map_err(|e| e.to_string())?;
    let pairs: Vec<(String, String)> = sets
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("--set expects KEY=VALUE, got '{}'", s))
        })
        .collect::<Result<_, _>>()?;
    cfg.with_overrides(&pairs).map_err(|e| e.to_string())
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("resolved_config.json"),
        format!("{}\n", serde_json::to_string_pretty(cfg).expect("config serializes")),
    )
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let cfg = resolve_config(cli.config.as_deref(), &cli.sets).map_err(|e| (1, e))?;
    let fail = |e: String| (2u8, e);
    match cli.command {
        Command::GenData { seed_start, count, out } => {
            let corpus =
                generate_corpus(seed_start, count, &cfg.scene).map_err(|e| fail(e.to_string()))?;
            write_jsonl(&out, &corpus).map_err(|e| fail(e.to_string()))?;
            if let Some(dir) = out.parent() {
                write_resolved(dir, &cfg).map_err(|e| fail(e.to_string()))?;
            }
            println!("wrote {} examples to {}", corpus.len(), out.display());
        }
        Command::Train { out } => {
            let outcome = harness::run(&cfg, &out).map_err(|e| fail(e.to_string()))?;
            println!(
                "method {}: mean overall accuracy {:.4} over {} seed(s)",
                outcome.method,
                outcome.mean_overall,
                outcome.seeds.len()
            );
        }
        Command::Eval { checkpoint, out } => {
            let params = load_params(&checkpoint).map_err(|e| fail(e.to_string()))?;
            let corpus = read_jsonl(&cfg.data.eval_path).map_err(|e| fail(e.to_string()))?;
            let seed = cfg.seeds[0];
            let record = evaluate(&params, &corpus, "eval", seed).map_err(|e| fail(e.to_string()))?;
            write_resolved(&out, &cfg).map_err(|e| fail(e.to_string()))?;
            let text = serde_json::to_string_pretty(&record).expect("record serializes");
            std::fs::write(out.join("eval.json"), format!("{}\n", text))
                .map_err(|e| fail(e.to_string()))?;
            println!("{}", text);
        }
        Command::Ablate { out } => {
            write_resolved(&out, &cfg).map_err(|e| fail(e.to_string()))?;
            let cells = default_grid(&cfg);
            let report = run_grid(&cells, &out).map_err(|e| fail(e.to_string()))?;
            let failed = report.failed_cells().len();
            emit_tables(&out, &out.join("report")).map_err(|e| fail(e.to_string()))?;
            emit_plots(&out, &out.join("report")).map_err(|e| fail(e.to_string()))?;
            println!(
                "{} cells completed, {} failed; report under {}",
                report.cells.len() - failed,
                failed,
                out.join("report").display()
            );
            if failed > 0 {
                return Err((2, format!("{} ablation cell(s) failed", failed)));
            }
        }
        Command::Report { metrics, out } => {
            let dir = out.unwrap_or_else(|| metrics.join("report"));
            let tables = emit_tables(&metrics, &dir).map_err(|e| fail(e.to_string()))?;
            let plots = emit_plots(&metrics, &dir).map_err(|e| fail(e.to_string()))?;
            println!(
                "wrote {} tables and {} plots to {}",
                tables.len(),
                plots.len(),
                dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprintln!("{}", e);
                return ExitCode::from(1);
            }
            // --help / --version
            print!("{}", e);
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {}", msg);
            ExitCode::from(code)
        }
    }
}
