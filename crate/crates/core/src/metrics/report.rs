use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScrError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: u64,
    /// Model variant, e.g. `baseline` or `scr`.
    pub model_id: String,
    pub config_hash: String,
}

/// One metric evaluated over a grid of an independent variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    /// Column header of the independent variable.
    pub grid_name: String,
    /// Column header of the metric values.
    pub value_name: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub metadata: ReportMetadata,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        if self.grid.len() != self.values.len() {
            return Err(ScrError::Data(format!(
                "{}: {} grid points for {} values",
                self.name,
                self.grid.len(),
                self.values.len()
            )));
        }
        if self.values.iter().chain(&self.grid).any(|v| !v.is_finite()) {
            return Err(ScrError::Numeric(format!("report {}", self.name)));
        }
        Ok(())
    }

    /// `<name>_<model_id>_seed<seed>`
    pub fn file_stem(&self) -> String {
        format!("{}_{}_seed{}", self.name, self.metadata.model_id, self.metadata.seed)
    }

    /// Two columns; values use the shortest representation that parses
    /// back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},{}\n", self.grid_name, self.value_name);
        for (g, v) in self.grid.iter().zip(&self.values) {
            let _ = writeln!(s, "{g},{v}");
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<(String, String, Vec<f64>, Vec<f64>)> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| ScrError::Format("empty csv".into()))?;
        let (gname, vname) =
            header.split_once(',').ok_or_else(|| ScrError::Format(format!("bad csv header {header:?}")))?;
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let (g, v) = line.split_once(',').ok_or_else(|| ScrError::Format(format!("bad csv row {line:?}")))?;
            let parse = |x: &str| x.parse::<f64>().map_err(|e| ScrError::Format(format!("{x:?}: {e}")));
            grid.push(parse(g)?);
            values.push(parse(v)?);
        }
        Ok((gname.to_string(), vname.to_string(), grid, values))
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`, returning both paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        self.validate()?;
        std::fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{}.csv", self.file_stem()));
        let json = dir.join(format!("{}.json", self.file_stem()));
        std::fs::write(&csv, self.to_csv())?;
        std::fs::write(&json, serde_json::to_string_pretty(self)? + "\n")?;
        Ok((csv, json))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let r: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        r.validate()?;
        Ok(r)
    }
}
