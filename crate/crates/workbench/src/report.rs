//! Report emission: `report.json`, per-factor CSV and markdown tables, the
//! sensitivity ranking and PNG traversal grids.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use acai_core::generative::{traversal_grid, GeneratorHandle};
use acai_core::harness::{code_name, EvalReport, ReportRow};

use crate::config::EvaluationConfig;
use crate::dataset::save_png;
use crate::{write_atomic, write_json, Error, Result};

pub const TABLE_COLUMNS: [&str; 7] = ["Setting", "Interv.", "Acc", "Acc_gap", "Acc_min", "CAI_0.5", "CAI_0.75"];

fn values(row: &ReportRow) -> [f64; 5] {
    [row.bundle.acc, row.bundle.acc_gap, row.bundle.acc_min, row.cai_05, row.cai_075]
}

/// Index of the best row per numeric column; gap is better when lower.
pub fn best_rows(rows: &[ReportRow]) -> [Option<usize>; 5] {
    let mut best = [None; 5];
    for (col, slot) in best.iter_mut().enumerate() {
        let lower_is_better = col == 1;
        let mut pick: Option<(usize, f64)> = None;
        for (i, row) in rows.iter().enumerate() {
            let v = values(row)[col];
            let better = match pick {
                None => true,
                Some((_, b)) => if lower_is_better { v < b } else { v > b },
            };
            if better {
                pick = Some((i, v));
            }
        }
        *slot = pick.map(|p| p.0);
    }
    best
}

/// Full-precision CSV, one row per model.
pub fn table_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TABLE_COLUMNS).map_err(|e| Error::runtime(e.to_string()))?;
    for row in rows {
        let mut rec = vec![row.setting.as_str().to_string(), row.label.clone()];
        rec.extend(values(row).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| Error::runtime(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

/// Markdown table with two decimals; the best entry per column is bold.
pub fn table_markdown(title: &str, rows: &[ReportRow]) -> String {
    let best = best_rows(rows);
    let mut out = format!("### {title}\n\n| {} |\n|", TABLE_COLUMNS.join(" | "));
    for _ in TABLE_COLUMNS {
        out.push_str("---|");
    }
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        let _ = write!(out, "| {} | {} |", row.setting.as_str(), row.label);
        for (col, v) in values(row).iter().enumerate() {
            if best[col] == Some(i) && rows.len() > 1 {
                let _ = write!(out, " **{v:.2}** |");
            } else {
                let _ = write!(out, " {v:.2} |");
            }
        }
        out.push('\n');
    }
    out
}

pub fn ranking_markdown(report: &EvalReport) -> String {
    let mut out = String::from("### Sorted sensitive factors\n\n| Rank | Code | Acc | Acc_gap | Acc_min |\n|---|---|---|---|---|\n");
    for (rank, r) in report.ranking.iter().enumerate() {
        let _ = writeln!(
            out,
            "| {} | {} | {:.2} | {:.2} | {:.2} |",
            rank + 1,
            code_name(r.code),
            r.bundle.acc,
            r.bundle.acc_gap,
            r.bundle.acc_min
        );
    }
    out
}

fn ranking_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "code", "acc", "acc_gap", "acc_min"]).map_err(|e| Error::runtime(e.to_string()))?;
    for (rank, r) in report.ranking.iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            r.code.to_string(),
            r.bundle.acc.to_string(),
            r.bundle.acc_gap.to_string(),
            r.bundle.acc_min.to_string(),
        ])
        .map_err(|e| Error::runtime(e.to_string()))?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::runtime(e.to_string()))?).expect("utf-8"))
}

/// Writes every report artifact under `dir`. Traversal grids are drawn only
/// when a generator is supplied. A report without any factor table is still
/// written, with a warning on stderr.
pub fn emit_report(report: &EvalReport, dir: &Path, gen: Option<&GeneratorHandle>, eval: &EvaluationConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    write_json(&dir.join("report.json"), report)?;
    if report.factors.is_empty() {
        eprintln!("warning: report has no intervention tables; writing the ranking only");
    }
    let mut summary = format!("# Evaluation report\n\nReal factor: `{}`\n\n", report.real_factor);
    for f in &report.factors {
        let name = code_name(f.code);
        for (setting, rows) in [("unsupervised", &f.unsupervised), ("generalization", &f.generalization)] {
            if rows.is_empty() {
                continue;
            }
            let stem = format!("{}_{setting}", name.to_lowercase());
            write_atomic(&dir.join(format!("{stem}.csv")), table_csv(rows)?.as_bytes())?;
            let title = match setting {
                "unsupervised" => format!("{name}: unsupervised ({name} bins)"),
                _ => format!("{name}: generalization ({} bins)", report.real_factor),
            };
            let md = table_markdown(&title, rows);
            write_atomic(&dir.join(format!("{stem}.md")), md.as_bytes())?;
            summary.push_str(&md);
            summary.push('\n');
        }
    }
    if let Some(sel) = &report.acai {
        let _ = writeln!(summary, "ACAI selection: {} ({})\n", sel.label(), sel.criterion);
    }
    let ranking = ranking_markdown(report);
    write_atomic(&dir.join("ranking.md"), ranking.as_bytes())?;
    write_atomic(&dir.join("ranking.csv"), ranking_csv(report)?.as_bytes())?;
    summary.push_str(&ranking);
    write_atomic(&dir.join("report.md"), summary.as_bytes())?;

    if let Some(gen) = gen {
        let figs = dir.join("figures");
        fs::create_dir_all(&figs).map_err(|e| Error::write(&figs, e))?;
        for f in &report.factors {
            let grid = traversal_grid(gen, f.code, eval.traversal_steps, eval.traversal_rows, f.code as u64)?;
            save_png(&figs.join(format!("traversal_{}.png", code_name(f.code).to_lowercase())), &grid)?;
        }
    }
    Ok(())
}
