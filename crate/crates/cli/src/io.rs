//! Dataset files: CSV records, hidden-state sidecars, the campaign
//! manifest, and a loader that enforces the train/test firewall.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use steerid::signal::{Dataset, SplitPlan};
use steerid::sim::Experiment;

use crate::error::{CliError, CliResult};

/// Shortest round-trip decimal formatting; rereads bit-identically.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn write_dataset_csv(path: &Path, d: &Dataset) -> CliResult<()> {
    let mut out = String::from("t,u_s,v,r\n");
    for k in 0..d.len() {
        out.push_str(&fmt_f64(d.t[k]));
        out.push(',');
        out.push_str(&fmt_f64(d.u_s[k]));
        out.push(',');
        out.push_str(&fmt_f64(d.v[k]));
        out.push(',');
        out.push_str(&fmt_f64(d.r[k]));
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

pub fn write_truth_csv(path: &Path, e: &Experiment) -> CliResult<()> {
    let t = &e.truth;
    let mut out = String::from("t,v_x,v_y,delta,delta_dot\n");
    for k in 0..t.t.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(t.t[k]),
            fmt_f64(t.v_x[k]),
            fmt_f64(t.v_y[k]),
            fmt_f64(t.delta[k]),
            fmt_f64(t.delta_dot[k]),
        ));
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

pub fn read_dataset_csv(path: &Path, id: &str) -> CliResult<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("t,u_s,v,r") => {}
        other => {
            return Err(CliError::data(format!(
                "{}: expected header 't,u_s,v,r', got {other:?}",
                path.display()
            )))
        }
    }
    let mut cols: [Vec<f64>; 4] = Default::default();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        for col in &mut cols {
            let field = fields.next().ok_or_else(|| {
                CliError::data(format!("{} line {}: short row", path.display(), lineno + 2))
            })?;
            col.push(field.parse::<f64>().map_err(|e| {
                CliError::data(format!("{} line {}: {e}", path.display(), lineno + 2))
            })?);
        }
        if fields.next().is_some() {
            return Err(CliError::data(format!(
                "{} line {}: too many columns",
                path.display(),
                lineno + 2
            )));
        }
    }
    let [t, u_s, v, r] = cols;
    if t.len() < 2 {
        return Err(CliError::data(format!("{}: too few samples", path.display())));
    }
    let t_s = t[1] - t[0];
    Dataset::new(id.to_string(), t, u_s, v, r, t_s)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub speed: f64,
    pub duration: f64,
    pub samples: usize,
    pub t_s: f64,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> CliResult<()> {
    let json = serde_json::to_string_pretty(entries)
        .map_err(|e| CliError::data(format!("manifest serialization: {e}")))?;
    std::fs::write(path, json)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// What a dataset is being loaded for; fitting must never touch test sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Fit,
    Evaluate,
}

/// Loader over the generated data directory that records every access and
/// refuses to hand test records to a fit.
pub struct DatasetStore {
    data_dir: PathBuf,
    test_ids: BTreeSet<String>,
    accesses: RefCell<Vec<(String, Purpose)>>,
}

impl DatasetStore {
    pub fn new(data_dir: PathBuf, split: &SplitPlan) -> Self {
        DatasetStore {
            data_dir,
            test_ids: split.test_ids.iter().cloned().collect(),
            accesses: RefCell::new(Vec::new()),
        }
    }

    pub fn load(&self, id: &str, purpose: Purpose) -> CliResult<Dataset> {
        if purpose == Purpose::Fit && self.test_ids.contains(id) {
            return Err(CliError::data(format!(
                "refusing to load test dataset {id:?} for fitting"
            )));
        }
        self.accesses.borrow_mut().push((id.to_string(), purpose));
        let path = self.data_dir.join(format!("{id}.csv"));
        read_dataset_csv(&path, id)
    }

    pub fn load_all(&self, ids: &[String], purpose: Purpose) -> CliResult<Vec<Dataset>> {
        ids.iter().map(|id| self.load(id, purpose)).collect()
    }

    pub fn accesses(&self) -> Vec<(String, Purpose)> {
        self.accesses.borrow().clone()
    }
}
