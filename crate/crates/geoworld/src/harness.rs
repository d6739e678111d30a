//! Run orchestration: trains every configured seed, evaluates on the
//! held-out split, and writes the on-disk run layout (resolved config,
//! metrics JSONL, checkpoints, timing sidecar).
//!
//! metrics.jsonl is the determinism surface: identical (config, seed)
//! re-runs produce byte-identical files, so wall time lives in a separate
//! timing.json that hashes are expected to ignore.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::scene::{read_jsonl, CorpusEntry};
use crate::tensor::save_params;
use crate::train::{
    corpus_id_of, ensure_cache, evaluate, method_teacher_config, train_prepared, EvalRecord,
    StepRecord, TrainError,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub eval: EvalRecord,
    pub final_step: Option<StepRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub method: String,
    pub seeds: Vec<SeedOutcome>,
    pub mean_overall: f64,
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed{}", seed))
}

/// Serialize one seed's full metrics stream. Field order is fixed by the
/// struct definitions, so the file is byte-stable across re-runs.
pub fn write_metrics(
    path: &Path,
    cfg: &RunConfig,
    seed: u64,
    steps: &[StepRecord],
    evals: &[&EvalRecord],
) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header = json!({
        "kind": "header",
        "seed": seed,
        "config": serde_json::to_value(cfg).expect("config serializes"),
    });
    writeln!(f, "{}", header)?;
    for s in steps {
        let mut v = serde_json::to_value(s).expect("step serializes");
        v.as_object_mut()
            .unwrap()
            .insert("kind".into(), json!("step"));
        writeln!(f, "{}", v)?;
    }
    for e in evals {
        let mut v = serde_json::to_value(e).expect("eval serializes");
        v.as_object_mut()
            .unwrap()
            .insert("kind".into(), json!("eval"));
        writeln!(f, "{}", v)?;
    }
    f.flush()
}

/// Train and evaluate one seed, writing the seed directory.
pub fn run_seed(
    cfg: &RunConfig,
    seed: u64,
    train_corpus: &[CorpusEntry],
    eval_corpus: &[CorpusEntry],
    features: Option<&BTreeMap<u64, Vec<f64>>>,
    run_dir: &Path,
) -> Result<SeedOutcome, TrainError> {
    let started = Instant::now();
    let dir = seed_dir(run_dir, seed);
    std::fs::create_dir_all(&dir)?;

    let result = train_prepared(cfg, seed, train_corpus, features)?;
    let eval = evaluate(&result.params, eval_corpus, "eval", seed)?;

    save_params(&dir.join("checkpoint_initial"), &result.initial)?;
    save_params(&dir.join("checkpoint_final"), &result.params)?;
    write_metrics(&dir.join("metrics.jsonl"), cfg, seed, &result.steps, &[&eval])?;
    let timing = json!({ "wall_time_s": started.elapsed().as_secs_f64() });
    std::fs::write(dir.join("timing.json"), format!("{}\n", timing))?;

    Ok(SeedOutcome {
        seed,
        final_step: result.steps.last().cloned(),
        eval,
    })
}

/// Full run: every seed in the config, data loaded once, teacher cache
/// built on demand. Writes resolved_config.json at the run root.
pub fn run(cfg: &RunConfig, run_dir: &Path) -> Result<RunOutcome, TrainError> {
    cfg.validate()
        .map_err(|e| TrainError::Invalid(e.to_string()))?;
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(
        run_dir.join("resolved_config.json"),
        format!(
            "{}\n",
            serde_json::to_string_pretty(cfg).expect("config serializes")
        ),
    )?;

    let train_corpus = read_jsonl(&cfg.data.train_path)?;
    let eval_corpus = read_jsonl(&cfg.data.eval_path)?;
    let features = match method_teacher_config(cfg) {
        None => None,
        Some(tcfg) => {
            ensure_cache(cfg)?;
            Some(crate::cache::load_cache(
                &cfg.data.cache_root,
                &corpus_id_of(&cfg.data.train_path),
                &tcfg.cache_key(),
            )?)
        }
    };

    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        seeds.push(run_seed(
            cfg,
            seed,
            &train_corpus,
            &eval_corpus,
            features.as_ref(),
            run_dir,
        )?);
    }
    let mean_overall = seeds.iter().map(|s| s.eval.overall).sum::<f64>() / seeds.len() as f64;
    Ok(RunOutcome {
        method: cfg.method.name().to_string(),
        seeds,
        mean_overall,
    })
}
