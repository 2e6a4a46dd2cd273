use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScrError};
use crate::metrics::MetricReport;

fn check_grids<'a>(reports: impl IntoIterator<Item = &'a MetricReport>) -> Result<Option<&'a [f64]>> {
    let mut grid: Option<&[f64]> = None;
    for r in reports {
        r.validate()?;
        match grid {
            None => grid = Some(&r.grid),
            Some(g) if g != r.grid.as_slice() => {
                return Err(ScrError::Data(format!(
                    "report {} ({}) does not share the grid {g:?}",
                    r.name,
                    r.file_stem()
                )));
            }
            _ => {}
        }
    }
    Ok(grid)
}

/// Whitespace-delimited `x y` lines. With several reports each series is
/// preceded by a `# <variant> seed<seed>` label and separated by a blank line.
pub fn plot_series(reports: &[MetricReport]) -> Result<String> {
    if check_grids(reports)?.is_none() {
        return Err(ScrError::Data("no reports to plot".into()));
    }
    let mut out = String::new();
    for (i, r) in reports.iter().enumerate() {
        if reports.len() > 1 {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "# {} seed{}", r.metadata.model_id, r.metadata.seed);
        }
        for (g, v) in r.grid.iter().zip(&r.values) {
            let _ = writeln!(out, "{g} {v}");
        }
    }
    Ok(out)
}

pub fn emit_plotdata(reports: &[MetricReport], path: &Path) -> Result<()> {
    let text = plot_series(reports)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub grid: f64,
    pub baseline: f64,
    pub scr: f64,
    /// `scr - baseline`, both averaged over seeds.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub metric: String,
    pub grid_name: String,
    pub seeds: usize,
    pub rows: Vec<ComparisonRow>,
    /// Mean of the per-point deltas.
    pub mean_delta: f64,
}

fn seed_mean(reports: &[MetricReport], i: usize) -> f64 {
    reports.iter().map(|r| r.values[i]).sum::<f64>() / reports.len() as f64
}

/// Per-point seed means of both variants and their differences.
pub fn compare_summary(baseline: &[MetricReport], scr: &[MetricReport]) -> Result<ComparisonSummary> {
    if baseline.is_empty() || scr.is_empty() {
        return Err(ScrError::Data("both variants need at least one report".into()));
    }
    let grid = check_grids(baseline.iter().chain(scr))?.expect("non-empty").to_vec();
    let rows: Vec<ComparisonRow> = grid
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let (b, s) = (seed_mean(baseline, i), seed_mean(scr, i));
            ComparisonRow { grid: g, baseline: b, scr: s, delta: s - b }
        })
        .collect();
    let mean_delta = rows.iter().map(|r| r.delta).sum::<f64>() / rows.len() as f64;
    Ok(ComparisonSummary {
        metric: baseline[0].name.clone(),
        grid_name: baseline[0].grid_name.clone(),
        seeds: baseline.len().max(scr.len()),
        rows,
        mean_delta,
    })
}

impl ComparisonSummary {
    pub fn to_markdown(&self, title: &str) -> String {
        let mut s = format!("# {title}\n\nMean over {} seed(s).\n\n", self.seeds);
        let _ = writeln!(s, "| {} | baseline | scr | delta |", self.grid_name);
        s.push_str("|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(s, "| {} | {:.6} | {:.6} | {:+.6} |", r.grid, r.baseline, r.scr, r.delta);
        }
        let _ = writeln!(s, "\nMean delta: {:+.6}", self.mean_delta);
        s
    }
}
