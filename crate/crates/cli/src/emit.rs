//! CSV and JSON artifacts plus the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{to_json, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// `step, z_<label>...`
    BeliefConvergence,
    /// `budget, cdf_<label>...`
    BudgetCdf,
    /// `bid, frac_<label>...`
    BidHist,
    /// `k, <column>...` with caller-chosen column names.
    Sweep,
}

impl PlotKind {
    pub fn stem(self) -> &'static str {
        match self {
            PlotKind::BeliefConvergence => "belief_convergence",
            PlotKind::BudgetCdf => "budget_cdf",
            PlotKind::BidHist => "bid_hist",
            PlotKind::Sweep => "sweep",
        }
    }

    fn x_name(self) -> &'static str {
        match self {
            PlotKind::BeliefConvergence => "step",
            PlotKind::BudgetCdf => "budget",
            PlotKind::BidHist => "bid",
            PlotKind::Sweep => "k",
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            PlotKind::BeliefConvergence => "z_",
            PlotKind::BudgetCdf => "cdf_",
            PlotKind::BidHist => "frac_",
            PlotKind::Sweep => "",
        }
    }
}

/// Columns sharing one x axis.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotTable {
    pub x: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl PlotTable {
    pub fn new(x: Vec<f64>) -> Self {
        PlotTable { x, columns: Vec::new() }
    }

    pub fn push(&mut self, label: impl Into<String>, y: Vec<f64>) {
        self.columns.push((label.into(), y));
    }
}

/// Shortest round-trip decimal; non-finite values become empty cells.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

/// Writes `<stem>.csv` or `<stem>_<suffix>.csv` into `dir`.
pub fn emit_plot_data(dir: &Path, kind: PlotKind, suffix: Option<&str>, table: &PlotTable) -> Result<PathBuf> {
    if table.x.is_empty() || table.columns.is_empty() {
        return Err(CliError::config("plot", format!("{} series is empty", kind.stem())));
    }
    if let Some((label, _)) = table.columns.iter().find(|(_, y)| y.len() != table.x.len()) {
        return Err(CliError::config("plot", format!("column `{label}` length differs from the x axis")));
    }
    let name = match suffix {
        Some(s) => format!("{}_{}.csv", kind.stem(), s),
        None => format!("{}.csv", kind.stem()),
    };
    let mut out = String::new();
    out.push_str(kind.x_name());
    for (label, _) in &table.columns {
        out.push(',');
        out.push_str(kind.prefix());
        out.push_str(label);
    }
    out.push('\n');
    for (i, x) in table.x.iter().enumerate() {
        out.push_str(&fmt_f64(*x));
        for (_, y) in &table.columns {
            out.push(',');
            out.push_str(&fmt_f64(y[i]));
        }
        out.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, out).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// `U[0,5]` → `U0-5`, safe for file names.
pub fn slug(s: &str) -> String {
    let mut out = String::new();
    for ch in s.chars() {
        if ch.is_ascii_alphanumeric() || ch == '.' {
            out.push(ch);
        } else if !out.ends_with('-') && !out.is_empty() && !out.ends_with(|c: char| c.is_ascii_alphabetic()) {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

/// Tracks every artifact a command writes so the manifest can hash them.
#[derive(Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    pub fn create(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Artifacts { dir, files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        self.track(p.clone());
        Ok(p)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, s)
    }

    /// Writes through a closure; used for streamed CSVs.
    pub fn with_writer(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, buf)
    }

    pub fn plot(&mut self, kind: PlotKind, suffix: Option<&str>, table: &PlotTable) -> Result<PathBuf> {
        let p = emit_plot_data(&self.dir, kind, suffix, table)?;
        self.track(p.clone());
        Ok(p)
    }

    fn track(&mut self, p: PathBuf) {
        if !self.files.contains(&p) {
            self.files.push(p);
        }
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct ManifestFile {
    name: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    workers: usize,
    config_sha256: String,
    config: &'a RunConfig,
    outputs: Vec<ManifestFile>,
}

/// `manifest.json`: the resolved config, its hash and a hash per artifact.
/// Feeding `config` back through `--config` reproduces the outputs.
pub fn write_manifest(art: &mut Artifacts, cfg: &RunConfig) -> Result<PathBuf> {
    let mut outputs = Vec::new();
    for p in art.files() {
        let bytes = fs::read(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        outputs.push(ManifestFile {
            name: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    let m = Manifest {
        tool: "mfe",
        version: env!("CARGO_PKG_VERSION"),
        command: cfg.mode.as_str(),
        seed: cfg.seed,
        workers: cfg.workers,
        config_sha256: sha256_hex(to_json(cfg).as_bytes()),
        config: cfg,
        outputs,
    };
    let mut s = serde_json::to_string_pretty(&m).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    let p = art.path("manifest.json");
    let mut f = fs::File::create(&p)?;
    f.write_all(s.as_bytes())?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = PlotTable::new(vec![0.0, 1.0]);
        t.push("hard", vec![1.0, 1.0]);
        t.push("bank", vec![0.5, f64::NAN]);
        let p = emit_plot_data(dir.path(), PlotKind::BeliefConvergence, None, &t).unwrap();
        assert_eq!(p.file_name().unwrap(), "belief_convergence.csv");
        assert_eq!(fs::read_to_string(p).unwrap(), "step,z_hard,z_bank\n0,1,0.5\n1,1,\n");
    }

    #[test]
    fn empty_series_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plot_data(dir.path(), PlotKind::BudgetCdf, None, &PlotTable::default()).is_err());
        let mut t = PlotTable::new(vec![0.0]);
        t.push("bank", vec![]);
        assert!(emit_plot_data(dir.path(), PlotKind::BudgetCdf, None, &t).is_err());
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("U[0,5]"), "U0-5");
        assert_eq!(slug("U[2.5,10]"), "U2.5-10");
        assert_eq!(slug("T[1:0.5;2:0.5]"), "T1-0.5-2-0.5");
    }
}
