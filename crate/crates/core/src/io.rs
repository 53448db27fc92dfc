//! Gains files and trace tables.
//!
//! Each certificate is stored as one JSON file per index set, with matrices
//! written row by row. A manifest records the content hash of the inputs the
//! gains were synthesized from, so unchanged inputs can skip synthesis.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index_set::IndexSet;
use crate::observer::ObserverGains;
use crate::sim::SimTrace;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverMeta {
    pub seed: u64,
    pub restart: usize,
    pub lambda_max: f64,
    pub p_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainsFile {
    index_set: IndexSet,
    state_dim: usize,
    sensors: usize,
    p: Vec<Vec<f64>>,
    l: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    nu: f64,
    mu: f64,
    solver: SolverMeta,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> std::result::Result<DMatrix<f64>, String> {
    if r.len() != nrows || r.iter().any(|row| row.len() != ncols) {
        return Err(format!("{what} must be {nrows}x{ncols}"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| r[i][j]))
}

pub fn gains_file_name(set: &IndexSet) -> String {
    format!("gains_{}.json", set.label())
}

pub fn write_gains(path: &Path, gains: &ObserverGains, sensors: usize, meta: SolverMeta) -> Result<()> {
    let file = GainsFile {
        index_set: gains.index_set.clone(),
        state_dim: gains.p.nrows(),
        sensors,
        p: rows(&gains.p),
        l: rows(&gains.l),
        k: rows(&gains.k),
        nu: gains.nu,
        mu: gains.mu,
        solver: meta,
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Loads and validates one gains file; every failure names the file.
pub fn read_gains(path: &Path) -> Result<(ObserverGains, SolverMeta)> {
    let bad = |reason: String| Error::GainsFile {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let f: GainsFile = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let (n, ns, nj) = (f.state_dim, f.sensors, f.index_set.len());
    let gains = ObserverGains {
        index_set: f.index_set,
        p: from_rows(&f.p, n, n, "P").map_err(bad)?,
        l: from_rows(&f.l, n, nj, "L").map_err(bad)?,
        k: from_rows(&f.k, ns, nj, "K").map_err(bad)?,
        nu: f.nu,
        mu: f.mu,
    };
    gains.validate(n, ns).map_err(|e| bad(e.to_string()))?;
    Ok((gains, f.solver))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index_set: IndexSet,
    pub file: String,
    pub lambda_max: f64,
    pub nu: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub input_hash: String,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Option<Manifest>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        Ok(serde_json::from_str(&text).ok())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Loads every gains file listed in the manifest.
pub fn read_gains_dir(dir: &Path, manifest: &Manifest) -> Result<BTreeMap<IndexSet, ObserverGains>> {
    let mut out = BTreeMap::new();
    for e in &manifest.entries {
        let path = dir.join(&e.file);
        let (g, _) = read_gains(&path)?;
        if g.index_set != e.index_set {
            return Err(Error::GainsFile {
                path,
                reason: format!("certified for {} but listed for {}", g.index_set, e.index_set),
            });
        }
        out.insert(g.index_set.clone(), g);
    }
    Ok(out)
}

/// Float formatting used in all tables: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Column names of the trace table for a bank with the given tier sets.
pub fn trace_header(n: usize, sensors: usize, tier1: &[IndexSet], tier2: &[IndexSet]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x[{i}]")));
    for s in tier1 {
        h.extend((1..=n).map(|i| format!("xhat_S{}[{i}]", s.label())));
    }
    for s in tier2 {
        h.extend((1..=n).map(|i| format!("xhat_P{}[{i}]", s.label())));
    }
    h.extend(tier1.iter().map(|s| format!("pi_S{}", s.label())));
    h.push("sigma".into());
    h.extend((1..=sensors).map(|i| format!("y[{i}]")));
    h.extend((1..=sensors).map(|i| format!("a[{i}]")));
    h
}

pub fn write_trace(path: &Path, trace: &SimTrace, tier2: &[IndexSet]) -> Result<()> {
    let n = trace.x.first().map_or(0, |x| x.len());
    let sensors = trace.y.first().map_or(0, |y| y.len());
    let tier1 = &trace.selection.sets;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(trace_header(n, sensors, tier1, tier2))?;
    for k in 0..trace.len() {
        let mut row = vec![fmt_f64(trace.times[k])];
        row.extend(trace.x[k].iter().map(|v| fmt_f64(*v)));
        for xh in &trace.xhat[k] {
            row.extend(xh.iter().map(|v| fmt_f64(*v)));
        }
        row.extend(trace.selection.pi[k].iter().map(|v| fmt_f64(*v)));
        row.push(trace.selection.selected_set(k).label());
        row.extend(trace.y[k].iter().map(|v| fmt_f64(*v)));
        row.extend(trace.a[k].iter().map(|v| fmt_f64(*v)));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Generic column table: numeric columns by name plus raw text for non-numeric ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn read(path: &Path) -> Result<Table> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column_text(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.index(name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.index(name)?;
        Some(self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect())
    }

    /// Names of columns starting with `prefix`, in table order.
    pub fn columns_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.header.iter().filter(|h| h.starts_with(prefix)).cloned().collect()
    }
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}
