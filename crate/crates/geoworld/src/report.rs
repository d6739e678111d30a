//! Report emission: per-axis CSV tables (the source of truth), a markdown
//! summary derived from the CSVs, and hand-written SVG plots. Everything
//! here is a pure function of the stored metrics, so regeneration is
//! byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::train::{EvalRecord, StepRecord};

pub const RELATION_ORDER: [&str; 8] = [
    "left", "right", "above", "under", "behind", "front", "close", "far",
];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad metrics line in {path}: {detail}")]
    BadMetrics { path: PathBuf, detail: String },
    #[error("no runs found under {0}")]
    Empty(PathBuf),
}

#[derive(Debug, Clone)]
pub struct SeedMetrics {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub eval: Option<EvalRecord>,
}

#[derive(Debug, Clone)]
pub struct CellMetrics {
    pub label: String,
    pub failed: bool,
    pub seeds: Vec<SeedMetrics>,
}

impl CellMetrics {
    pub fn mean_overall(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .seeds
            .iter()
            .filter_map(|s| s.eval.as_ref().map(|e| e.overall))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn mean_relation(&self, relation: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .seeds
            .iter()
            .filter_map(|s| s.eval.as_ref())
            .filter_map(|e| e.per_relation.get(relation).copied())
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// axis name -> ordered cells.
pub type Collected = BTreeMap<String, Vec<CellMetrics>>;

#[derive(Deserialize)]
struct TaggedLine {
    kind: String,
    #[serde(flatten)]
    rest: serde_json::Value,
}

/// Parse one seed's metrics.jsonl into step and eval records.
pub fn parse_metrics(path: &Path) -> Result<(Vec<StepRecord>, Vec<EvalRecord>), ReportError> {
    let text = std::fs::read_to_string(path)?;
    let mut steps = Vec::new();
    let mut evals = Vec::new();
    for line in text.lines() {
        let tagged: TaggedLine =
            serde_json::from_str(line).map_err(|e| ReportError::BadMetrics {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        match tagged.kind.as_str() {
            "step" => steps.push(serde_json::from_value(tagged.rest).map_err(|e| {
                ReportError::BadMetrics {
                    path: path.to_path_buf(),
                    detail: e.to_string(),
                }
            })?),
            "eval" => evals.push(serde_json::from_value(tagged.rest).map_err(|e| {
                ReportError::BadMetrics {
                    path: path.to_path_buf(),
                    detail: e.to_string(),
                }
            })?),
            _ => {}
        }
    }
    Ok((steps, evals))
}

fn sorted_entries(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

/// Walk an ablation (or single-run) output directory:
/// `<root>/<axis>/<label>/seed<k>/metrics.jsonl`, with a `FAILED` file
/// marking a cell that produced no metrics.
pub fn collect(root: &Path) -> Result<Collected, ReportError> {
    let mut collected: Collected = BTreeMap::new();
    for axis_dir in sorted_entries(root)? {
        if !axis_dir.is_dir() {
            continue;
        }
        let axis = axis_dir.file_name().unwrap().to_string_lossy().into_owned();
        for cell_path in sorted_entries(&axis_dir)? {
            if !cell_path.is_dir() {
                continue;
            }
            let label = cell_path.file_name().unwrap().to_string_lossy().into_owned();
            let failed = cell_path.join("FAILED").exists();
            let mut seeds = Vec::new();
            for seed_path in sorted_entries(&cell_path)? {
                let name = seed_path.file_name().unwrap().to_string_lossy().into_owned();
                let metrics = seed_path.join("metrics.jsonl");
                if let Some(seed) = name.strip_prefix("seed").and_then(|s| s.parse().ok()) {
                    if metrics.is_file() {
                        let (steps, evals) = parse_metrics(&metrics)?;
                        seeds.push(SeedMetrics {
                            seed,
                            steps,
                            eval: evals.into_iter().next(),
                        });
                    }
                }
            }
            seeds.sort_by_key(|s| s.seed);
            if failed || !seeds.is_empty() {
                collected
                    .entry(axis.clone())
                    .or_default()
                    .push(CellMetrics { label, failed, seeds });
            }
        }
    }
    if collected.is_empty() {
        return Err(ReportError::Empty(root.to_path_buf()));
    }
    Ok(collected)
}

fn fmt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.4}", v),
        None => "FAILED".to_string(),
    }
}

/// One CSV per axis. Columns: label, seed (or `mean`), the eight
/// relations, overall. Failed cells emit a single FAILED row.
pub fn axis_csv(cells: &[CellMetrics]) -> String {
    let mut out = String::from("label,seed");
    for r in RELATION_ORDER {
        let _ = write!(out, ",{}", r);
    }
    out.push_str(",overall\n");
    for cell in cells {
        if cell.failed || cell.seeds.iter().all(|s| s.eval.is_none()) {
            let _ = writeln!(out, "{},FAILED{}", cell.label, ",".repeat(9));
            continue;
        }
        for s in &cell.seeds {
            let e = match &s.eval {
                Some(e) => e,
                None => continue,
            };
            let _ = write!(out, "{},{}", cell.label, s.seed);
            for r in RELATION_ORDER {
                let _ = write!(out, ",{}", fmt(e.per_relation.get(r).copied()));
            }
            let _ = writeln!(out, ",{:.4}", e.overall);
        }
        let _ = write!(out, "{},mean", cell.label);
        for r in RELATION_ORDER {
            let _ = write!(out, ",{}", fmt(cell.mean_relation(r)));
        }
        let _ = writeln!(out, ",{}", fmt(cell.mean_overall()));
    }
    out
}

#[derive(Debug, Clone)]
struct CsvRow {
    label: String,
    seed: String,
    values: Vec<String>,
}

fn parse_csv(text: &str) -> Vec<CsvRow> {
    text.lines()
        .skip(1)
        .map(|line| {
            let mut parts = line.split(',');
            let label = parts.next().unwrap_or_default().to_string();
            let seed = parts.next().unwrap_or_default().to_string();
            CsvRow {
                label,
                seed,
                values: parts.map(|s| s.to_string()).collect(),
            }
        })
        .collect()
}

/// Markdown table for one axis, derived from the CSV text so the CSV
/// stays the source of truth. Best mean overall bold, second underlined.
fn axis_markdown(axis: &str, csv: &str) -> String {
    let rows = parse_csv(csv);
    let mean_rows: Vec<&CsvRow> = rows
        .iter()
        .filter(|r| r.seed == "mean" || r.seed == "FAILED")
        .collect();
    let mut ranked: Vec<(usize, f64)> = mean_rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.values.last()?.parse::<f64>().ok().map(|v| (i, v)))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let best = ranked.first().map(|r| r.0);
    let second = ranked.get(1).map(|r| r.0);

    let mut out = format!("### Axis: {}\n\n", axis);
    out.push_str("| setting |");
    for r in RELATION_ORDER {
        let _ = write!(out, " {} |", r);
    }
    out.push_str(" overall | per-seed overall |\n");
    out.push_str(&format!("|---|{}---|---|\n", "---|".repeat(8)));
    for (i, row) in mean_rows.iter().enumerate() {
        let failed = row.seed == "FAILED" || row.values.len() < 9;
        let _ = write!(out, "| {} |", row.label);
        if failed {
            out.push_str(&" FAILED |".repeat(10));
            out.push('\n');
            continue;
        }
        for v in &row.values[..8] {
            let _ = write!(out, " {} |", v);
        }
        let overall = row.values.last().cloned().unwrap_or_default();
        let overall = if Some(i) == best {
            format!("**{}**", overall)
        } else if Some(i) == second {
            format!("<u>{}</u>", overall)
        } else {
            overall
        };
        let per_seed: Vec<String> = rows
            .iter()
            .filter(|r| r.label == row.label && r.seed != "mean")
            .map(|r| {
                format!(
                    "{}={}",
                    r.seed,
                    r.values.last().cloned().unwrap_or_default()
                )
            })
            .collect();
        let _ = writeln!(out, " {} | {} |", overall, per_seed.join(" "));
    }
    out.push('\n');
    out
}

/// Seed-mean ordering checks that are reported but never hard-fail:
/// full conditioning should beat each single-signal variant.
fn conditioning_flags(collected: &Collected) -> Vec<String> {
    let mut notes = Vec::new();
    if let Some(cells) = collected.get("conditioning") {
        let mean = |label: &str| {
            cells
                .iter()
                .find(|c| c.label == label)
                .and_then(|c| c.mean_overall())
        };
        if let (Some(full), Some(cam), Some(prompt)) =
            (mean("camera+prompt"), mean("camera_only"), mean("prompt_only"))
        {
            if full < cam {
                notes.push(format!(
                    "conditioning ordering flag: camera+prompt ({:.4}) below camera_only ({:.4})",
                    full, cam
                ));
            }
            if full < prompt {
                notes.push(format!(
                    "conditioning ordering flag: camera+prompt ({:.4}) below prompt_only ({:.4})",
                    full, prompt
                ));
            }
        }
    }
    notes
}

/// Write `table_<axis>.csv` for every axis plus `report.md`; returns the
/// written file paths in order.
pub fn emit_tables(metrics_root: &Path, report_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let collected = collect(metrics_root)?;
    std::fs::create_dir_all(report_dir)?;
    let mut written = Vec::new();
    let mut md = String::from("# Results\n\nAll values are accuracies in [0,1]; `overall` is micro accuracy (correct/total). Best mean overall per table in bold, second underlined.\n\n");
    for (axis, cells) in &collected {
        let csv = axis_csv(cells);
        let csv_path = report_dir.join(format!("table_{}.csv", axis));
        std::fs::write(&csv_path, &csv)?;
        md.push_str(&axis_markdown(axis, &csv));
        written.push(csv_path);
    }
    let flags = conditioning_flags(&collected);
    if !flags.is_empty() {
        md.push_str("### Flags\n\n");
        for f in &flags {
            let _ = writeln!(md, "- {}", f);
        }
        md.push('\n');
    }
    let md_path = report_dir.join("report.md");
    std::fs::write(&md_path, md)?;
    written.push(md_path);
    Ok(written)
}

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 420.0;
const MARGIN: f64 = 50.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{tx}\" y=\"24\" font-family=\"monospace\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        w = SVG_W,
        h = SVG_H,
        tx = SVG_W / 2.0,
        title = title,
        m = MARGIN,
        t = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN,
    )
}

fn polyline(series: &[f64], max_y: f64, color: &str) -> String {
    let span_x = SVG_W - 2.0 * MARGIN;
    let span_y = SVG_H - 2.0 * MARGIN;
    let n = series.len();
    let points: Vec<String> = series
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = MARGIN + if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 } * span_x;
            let y = SVG_H - MARGIN - (v / max_y).clamp(0.0, 1.0) * span_y;
            format!("{:.2},{:.2}", x, y)
        })
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        color,
        points.join(" ")
    )
}

const SERIES_COLORS: [(&str, &str); 4] = [
    ("total", "#000000"),
    ("task", "#1f77b4"),
    ("align", "#d62728"),
    ("preserve", "#2ca02c"),
];

/// Per-term loss curves for one training stream.
pub fn loss_curves_svg(steps: &[StepRecord]) -> String {
    let mut out = svg_open("training loss by term");
    if steps.is_empty() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\">no data</text>\n",
            SVG_W / 2.0,
            SVG_H / 2.0
        ));
        out.push_str("</svg>\n");
        return out;
    }
    let max_y = steps
        .iter()
        .map(|s| s.loss.total)
        .fold(f64::MIN, f64::max)
        .max(1e-9);
    for (i, (name, color)) in SERIES_COLORS.iter().enumerate() {
        let series: Vec<f64> = steps
            .iter()
            .map(|s| match *name {
                "total" => s.loss.total,
                "task" => s.loss.task,
                "align" => s.loss.align,
                _ => s.loss.preserve,
            })
            .collect();
        out.push_str(&polyline(&series, max_y, color));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"{}\">{}</text>\n",
            SVG_W - MARGIN - 90.0,
            MARGIN + 16.0 * (i + 1) as f64,
            color,
            name
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per cell, one bar per seed, height = overall.
pub fn accuracy_bars_svg(cells: &[CellMetrics]) -> String {
    let mut out = svg_open("eval overall accuracy by setting and seed");
    let groups: Vec<&CellMetrics> = cells
        .iter()
        .filter(|c| c.seeds.iter().any(|s| s.eval.is_some()))
        .collect();
    if groups.is_empty() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"14\" text-anchor=\"middle\">no data</text>\n",
            SVG_W / 2.0,
            SVG_H / 2.0
        ));
        out.push_str("</svg>\n");
        return out;
    }
    let span_x = SVG_W - 2.0 * MARGIN;
    let span_y = SVG_H - 2.0 * MARGIN;
    let group_w = span_x / groups.len() as f64;
    for (gi, cell) in groups.iter().enumerate() {
        let evals: Vec<&SeedMetrics> =
            cell.seeds.iter().filter(|s| s.eval.is_some()).collect();
        let bar_w = (group_w * 0.8) / evals.len() as f64;
        for (bi, s) in evals.iter().enumerate() {
            let v = s.eval.as_ref().unwrap().overall;
            let x = MARGIN + gi as f64 * group_w + group_w * 0.1 + bi as f64 * bar_w;
            let h = v.clamp(0.0, 1.0) * span_y;
            out.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#1f77b4\" stroke=\"black\" stroke-width=\"0.5\"/>\n",
                x,
                SVG_H - MARGIN - h,
                bar_w,
                h
            ));
        }
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            MARGIN + (gi as f64 + 0.5) * group_w,
            SVG_H - MARGIN + 18.0,
            cell.label
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Write loss curves (first seed of every cell of the first axis with
/// step records) and the accuracy bar chart for every axis.
pub fn emit_plots(metrics_root: &Path, report_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let collected = collect(metrics_root)?;
    let plots = report_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let mut written = Vec::new();
    for (axis, cells) in &collected {
        let bars = plots.join(format!("accuracy_{}.svg", axis));
        std::fs::write(&bars, accuracy_bars_svg(cells))?;
        written.push(bars);
        for cell in cells {
            if let Some(seed) = cell.seeds.iter().find(|s| !s.steps.is_empty()) {
                let p = plots.join(format!("loss_{}_{}_seed{}.svg", axis, cell.label, seed.seed));
                std::fs::write(&p, loss_curves_svg(&seed.steps))?;
                written.push(p);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::LossBreakdown;

    fn eval_with(overall: f64, seed: u64) -> EvalRecord {
        let mut per_relation = BTreeMap::new();
        let mut per_relation_counts = BTreeMap::new();
        for r in RELATION_ORDER {
            per_relation.insert(r.to_string(), overall);
            per_relation_counts.insert(r.to_string(), 10);
        }
        EvalRecord {
            split: "eval".into(),
            seed,
            per_relation,
            per_relation_counts,
            correct: (overall * 80.0) as usize,
            total: 80,
            overall,
        }
    }

    fn cell_with(label: &str, overalls: &[f64]) -> CellMetrics {
        CellMetrics {
            label: label.into(),
            failed: false,
            seeds: overalls
                .iter()
                .enumerate()
                .map(|(i, v)| SeedMetrics {
                    seed: 42 + i as u64,
                    steps: vec![],
                    eval: Some(eval_with(*v, 42 + i as u64)),
                })
                .collect(),
        }
    }

    #[test]
    fn csv_mean_row_matches_hand_average() {
        let cells = vec![cell_with("ours", &[0.5, 0.7])];
        let csv = axis_csv(&cells);
        let mean_line = csv.lines().find(|l| l.contains(",mean,")).unwrap();
        assert!(mean_line.ends_with("0.6000"), "{}", mean_line);
    }

    #[test]
    fn markdown_bolds_best_and_underlines_second() {
        let cells = vec![
            cell_with("base", &[0.3]),
            cell_with("ft_only", &[0.5]),
            cell_with("ours", &[0.7]),
        ];
        let md = axis_markdown("method", &axis_csv(&cells));
        assert!(md.contains("**0.7000**"));
        assert!(md.contains("<u>0.5000</u>"));
    }

    #[test]
    fn failed_cell_marked_in_csv_and_markdown() {
        let cells = vec![
            cell_with("ok", &[0.5]),
            CellMetrics {
                label: "broken".into(),
                failed: true,
                seeds: vec![],
            },
        ];
        let csv = axis_csv(&cells);
        assert!(csv.lines().any(|l| l.starts_with("broken,FAILED")));
        let md = axis_markdown("method", &csv);
        assert!(md.contains("FAILED"));
    }

    #[test]
    fn loss_curve_polyline_vertex_count_equals_series_length() {
        let steps: Vec<StepRecord> = (0..37)
            .map(|i| StepRecord {
                step: i,
                epoch: 0,
                loss: LossBreakdown {
                    task: 1.0 / (i + 1) as f64,
                    align: 0.5,
                    preserve: 0.1,
                    total: 1.0 / (i + 1) as f64 + 0.055,
                },
                grad_norm: 1.0,
            })
            .collect();
        let svg = loss_curves_svg(&steps);
        for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
            let pts = line.split("points=\"").nth(1).unwrap();
            let pts = pts.split('"').next().unwrap();
            assert_eq!(pts.split_whitespace().count(), 37);
        }
    }

    #[test]
    fn empty_plots_say_no_data() {
        assert!(loss_curves_svg(&[]).contains("no data"));
        assert!(accuracy_bars_svg(&[]).contains("no data"));
    }

    #[test]
    fn svg_is_well_formed_markup() {
        // generic tag-balance pass over emitted markup
        fn check(svg: &str) {
            let mut depth = 0i32;
            for tag in svg.split('<').skip(1) {
                let tag = tag.split('>').next().unwrap();
                if tag.ends_with('/') || tag.starts_with('?') {
                    continue;
                } else if tag.starts_with('/') {
                    depth -= 1;
                } else {
                    depth += 1;
                }
                assert!(depth >= 0);
            }
            assert_eq!(depth, 0);
        }
        check(&loss_curves_svg(&[]));
        check(&accuracy_bars_svg(&[cell_with("a", &[0.4, 0.6]), cell_with("b", &[0.5])]));
    }

    #[test]
    fn csv_roundtrip_matches_markdown_numbers() {
        let cells = vec![cell_with("ours", &[0.512345, 0.712345])];
        let csv = axis_csv(&cells);
        let rows = parse_csv(&csv);
        let mean_row = rows.iter().find(|r| r.seed == "mean").unwrap();
        let reagg = (0.512345 + 0.712345) / 2.0;
        let printed: f64 = mean_row.values.last().unwrap().parse().unwrap();
        assert!((printed - reagg).abs() < 5e-5);
        let md = axis_markdown("x", &csv);
        assert!(md.contains(mean_row.values.last().unwrap().as_str()));
    }
}
