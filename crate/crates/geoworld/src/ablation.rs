//! Ablation grid runner: one-axis-at-a-time sweeps around the full-method
//! baseline, cells executed in parallel with per-cell failure isolation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Method, RunConfig};
use crate::harness::{run, RunOutcome};
use crate::teacher::Pooling;
use crate::train::{ensure_cache, TrainError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cell {
    /// Sweep axis, e.g. "method" or "denoise_steps".
    pub axis: String,
    /// Row label within the axis table, e.g. "ours" or "2".
    pub label: String,
    pub cfg: RunConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellOutcome {
    pub axis: String,
    pub label: String,
    pub result: Result<RunOutcome, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    pub cells: Vec<CellOutcome>,
}

impl AblationReport {
    pub fn failed_cells(&self) -> Vec<&CellOutcome> {
        self.cells.iter().filter(|c| c.result.is_err()).collect()
    }
}

fn cell(axis: &str, label: impl ToString, mut edit: impl FnMut(&mut RunConfig), base: &RunConfig) -> Cell {
    let mut cfg = base.clone();
    edit(&mut cfg);
    Cell {
        axis: axis.to_string(),
        label: label.to_string(),
        cfg,
    }
}

/// The default sweep: each axis varies one knob around `base` (which
/// should carry `method = ours`). Includes the exact-check cells: the
/// zero-weight alignment cell and the single-frame pooling triple.
pub fn default_grid(base: &RunConfig) -> Vec<Cell> {
    let mut cells = Vec::new();

    for method in [Method::Base, Method::FtOnly, Method::StaticTeacher, Method::Ours] {
        cells.push(cell("method", method.name(), |c| c.method = method, base));
    }
    for b in [2usize, 3, 4] {
        cells.push(cell("block_index", b, |c| c.teacher.block_index = b, base));
    }
    for steps in 0usize..=3 {
        cells.push(cell("denoise_steps", steps, |c| c.teacher.denoise_steps = steps, base));
    }
    for la in [0.0, 0.05, 0.10, 0.20] {
        cells.push(cell(
            "lambda_align",
            format!("{:.2}", la),
            |c| c.loss.lambda_align = la,
            base,
        ));
    }
    for lp in [0.0, 0.05] {
        cells.push(cell(
            "lambda_preserve",
            format!("{:.2}", lp),
            |c| c.loss.lambda_preserve = lp,
            base,
        ));
    }
    for f in [5usize, 9, 13] {
        cells.push(cell("frame_count", f, |c| c.teacher.frame_count = f, base));
    }
    for pooling in [Pooling::Mean, Pooling::First, Pooling::Last] {
        cells.push(cell(
            "pooling",
            format!("{:?}", pooling).to_lowercase(),
            |c| c.teacher.pooling = pooling,
            base,
        ));
        // single-frame identity triple: all three must agree bit-exactly
        cells.push(cell(
            "pooling_f1",
            format!("{:?}", pooling).to_lowercase(),
            |c| {
                c.teacher.pooling = pooling;
                c.teacher.frame_count = 1;
            },
            base,
        ));
    }
    // exact-equivalence pair: zeroing both weights must reproduce the
    // task-only baseline bit for bit
    cells.push(cell(
        "ft_equivalence",
        "ft_only",
        |c| c.method = Method::FtOnly,
        base,
    ));
    cells.push(cell(
        "ft_equivalence",
        "lambda_zero",
        |c| {
            c.loss.lambda_align = 0.0;
            c.loss.lambda_preserve = 0.0;
        },
        base,
    ));
    for (label, camera, prompt) in [
        ("camera+prompt", true, true),
        ("camera_only", true, false),
        ("prompt_only", false, true),
        ("none", false, false),
    ] {
        cells.push(cell(
            "conditioning",
            label,
            |c| {
                c.teacher.use_camera = camera;
                c.teacher.use_prompt = prompt;
            },
            base,
        ));
    }
    cells
}

pub fn cell_dir(out_dir: &Path, c: &Cell) -> PathBuf {
    out_dir.join(&c.axis).join(&c.label)
}

/// Build every distinct teacher cache the grid needs, in parallel, before
/// cells start; cells then only read.
fn prefill_caches(cells: &[Cell]) -> Result<(), TrainError> {
    let mut seen = BTreeSet::new();
    let mut unique: Vec<&RunConfig> = Vec::new();
    for c in cells {
        if let Some(tcfg) = crate::train::method_teacher_config(&c.cfg) {
            if seen.insert(tcfg.cache_key()) {
                unique.push(&c.cfg);
            }
        }
    }
    unique
        .par_iter()
        .map(|cfg| ensure_cache(cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(())
}

/// Run the whole grid. A failing cell is recorded and skipped; the rest
/// continue.
pub fn run_grid(cells: &[Cell], out_dir: &Path) -> Result<AblationReport, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    prefill_caches(cells)?;
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|c| {
            let dir = cell_dir(out_dir, c);
            let result = run(&c.cfg, &dir).map_err(|e| e.to_string());
            if let Err(msg) = &result {
                let _ = std::fs::create_dir_all(&dir);
                let _ = std::fs::write(dir.join("FAILED"), format!("{}\n", msg));
            }
            CellOutcome {
                axis: c.axis.clone(),
                label: c.label.clone(),
                result,
            }
        })
        .collect();
    let report = AblationReport { cells: outcomes };
    std::fs::write(
        out_dir.join("ablation.json"),
        format!("{}\n", serde_json::to_string_pretty(&report).expect("report serializes")),
    )?;
    Ok(report)
}
