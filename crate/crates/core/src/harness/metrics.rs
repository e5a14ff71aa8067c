use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{EvalReport, HarnessError};

pub const METRICS_HEADER: &str =
    "step,episode,mean_reward,mean_cost,cvar_cost,lambda,entropy_temp,delta,path_short,path_long,path_none";

/// One evaluation snapshot as written to `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    /// Training episodes completed so far.
    pub episode: u64,
    pub mean_reward: f64,
    pub mean_cost: f64,
    pub cvar_cost: f64,
    pub lambda: f64,
    pub entropy_temp: f64,
    pub delta: f64,
    pub path_short: usize,
    pub path_long: usize,
    pub path_none: usize,
}

impl MetricsRow {
    pub fn new(report: &EvalReport, episode: u64, lambda: f64, entropy_temp: f64, delta: f64) -> Self {
        Self {
            step: report.step,
            episode,
            mean_reward: report.mean_reward,
            mean_cost: report.mean_cost,
            cvar_cost: report.cvar_cost,
            lambda,
            entropy_temp,
            delta,
            path_short: report.path_histogram.short,
            path_long: report.path_histogram.long,
            path_none: report.path_histogram.none,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.episode,
            self.mean_reward,
            self.mean_cost,
            self.cvar_cost,
            self.lambda,
            self.entropy_temp,
            self.delta,
            self.path_short,
            self.path_long,
            self.path_none
        )
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 11 {
            return Err(format!("expected 11 fields, found {}", f.len()));
        }
        let float = |i: usize| f[i].parse::<f64>().map_err(|e| format!("field {i}: {e}"));
        let int = |i: usize| f[i].parse::<u64>().map_err(|e| format!("field {i}: {e}"));
        Ok(Self {
            step: int(0)?,
            episode: int(1)?,
            mean_reward: float(2)?,
            mean_cost: float(3)?,
            cvar_cost: float(4)?,
            lambda: float(5)?,
            entropy_temp: float(6)?,
            delta: float(7)?,
            path_short: int(8)? as usize,
            path_long: int(9)? as usize,
            path_none: int(10)? as usize,
        })
    }
}

/// Appends rows to a CSV file. Each append writes the full new contents to a
/// temporary file in the same directory and renames it over the old file, so a reader
/// never observes a partial row.
#[derive(Debug, Clone)]
pub struct MetricsWriter {
    path: PathBuf,
}

impl MetricsWriter {
    /// Creates (or truncates to) a header-only file.
    pub fn create(path: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let w = Self { path: path.into() };
        w.replace(&format!("{METRICS_HEADER}\n"))?;
        Ok(w)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, row: &MetricsRow) -> Result<(), HarnessError> {
        let mut text = fs::read_to_string(&self.path).map_err(|e| HarnessError::io(&self.path, e))?;
        text.push_str(&row.to_csv());
        text.push('\n');
        self.replace(&text)
    }

    fn replace(&self, text: &str) -> Result<(), HarnessError> {
        let dir = self.path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
        tmp.write_all(text.as_bytes()).map_err(|e| HarnessError::io(tmp.path(), e))?;
        tmp.as_file().sync_all().map_err(|e| HarnessError::io(tmp.path(), e))?;
        tmp.persist(&self.path).map_err(|e| HarnessError::io(&self.path, e.error))?;
        Ok(())
    }

    pub fn read_rows(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(METRICS_HEADER) {
            return Err(HarnessError::Format { path: path.into(), message: "missing metrics header".into() });
        }
        lines
            .map(|l| MetricsRow::parse(l).map_err(|message| HarnessError::Format { path: path.into(), message }))
            .collect()
    }
}
