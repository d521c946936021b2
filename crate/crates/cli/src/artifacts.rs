//! JSON model artifacts.
//!
//! Fitted models are stored as plain JSON documents of their public
//! fields. The GP artifact stores the raw training rows and targets and
//! refits its Cholesky factor on load, which is deterministic and keeps
//! the file human-readable.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use steerid::encoder::{EncoderModel, Standardizer};
use steerid::gp::{gp_fit, GpModel, NarxOrders, SeKernel};
use steerid::linear::LinearSsModel;
use steerid::nn::Mlp;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ModelArtifact {
    Lti(LtiArtifact),
    Gp(GpArtifact),
    Encoder(EncoderArtifact),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LtiArtifact {
    pub decimate: usize,
    /// Dead-zone edges on the steering command; the LTI-SS* variant.
    pub dead_zone: Option<[f64; 2]>,
    /// Operating point: the model works in deviations from these training
    /// means, `(u_s, v)` and the yaw rate.
    pub u_mean: [f64; 2],
    pub y_mean: f64,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpArtifact {
    pub decimate: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub signal_var: f64,
    pub lengthscales: Vec<f64>,
    pub noise_var: f64,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpJson {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub bypass: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderArtifact {
    pub decimate: usize,
    pub n_x: usize,
    pub n_past: usize,
    pub y_mean: f64,
    pub y_std: f64,
    pub u_mean: [f64; 2],
    pub u_std: [f64; 2],
    pub psi: MlpJson,
    pub f: MlpJson,
    pub h: MlpJson,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::data(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl MlpJson {
    pub fn from_mlp(m: &Mlp) -> Self {
        MlpJson {
            weights: m.weights.iter().map(matrix_rows).collect(),
            biases: m.biases.iter().map(|b| b.iter().copied().collect()).collect(),
            bypass: matrix_rows(&m.bypass),
        }
    }

    pub fn to_mlp(&self) -> CliResult<Mlp> {
        if self.weights.len() != self.biases.len() || self.weights.is_empty() {
            return Err(CliError::data("network layer counts do not match"));
        }
        let weights = self
            .weights
            .iter()
            .map(|w| rows_matrix(w, "weights"))
            .collect::<CliResult<Vec<_>>>()?;
        let biases = self
            .biases
            .iter()
            .map(|b| DVector::from_column_slice(b))
            .collect();
        let bypass = rows_matrix(&self.bypass, "bypass")?;
        Ok(Mlp { weights, biases, bypass })
    }
}

impl LtiArtifact {
    pub fn from_model(
        m: &LinearSsModel,
        decimate: usize,
        dead_zone: Option<[f64; 2]>,
        u_mean: [f64; 2],
        y_mean: f64,
    ) -> Self {
        LtiArtifact {
            decimate,
            dead_zone,
            u_mean,
            y_mean,
            a: matrix_rows(&m.a),
            b: matrix_rows(&m.b),
            c: m.c.iter().copied().collect(),
        }
    }

    pub fn to_model(&self) -> CliResult<LinearSsModel> {
        let a = rows_matrix(&self.a, "A")?;
        let n_x = a.nrows();
        let mut b = rows_matrix(&self.b, "B")?;
        if n_x == 0 {
            b = DMatrix::zeros(0, 2);
        }
        let c = DMatrix::from_fn(1, self.c.len(), |_, j| self.c[j]);
        LinearSsModel::new(a, b, c).map_err(|e| CliError::data(e.to_string()))
    }
}

impl GpArtifact {
    pub fn from_model(m: &GpModel, orders: NarxOrders, decimate: usize) -> Self {
        // Store raw targets; the mean is re-estimated on load.
        let targets = m.y.iter().map(|&y| y + m.y_mean).collect();
        GpArtifact {
            decimate,
            n_a: orders.n_a,
            n_b: orders.n_b,
            signal_var: m.kernel.signal_var,
            lengthscales: m.kernel.lengthscales.clone(),
            noise_var: m.kernel.noise_var,
            rows: matrix_rows(&m.z),
            targets,
        }
    }

    pub fn orders(&self) -> CliResult<NarxOrders> {
        NarxOrders::new(self.n_a, self.n_b).map_err(|e| CliError::data(e.to_string()))
    }

    pub fn to_model(&self) -> CliResult<GpModel> {
        let kernel = SeKernel {
            signal_var: self.signal_var,
            lengthscales: self.lengthscales.clone(),
            noise_var: self.noise_var,
        };
        gp_fit(&self.rows, &self.targets, &kernel).map_err(|e| CliError::data(e.to_string()))
    }
}

impl EncoderArtifact {
    pub fn from_model(m: &EncoderModel, decimate: usize) -> Self {
        EncoderArtifact {
            decimate,
            n_x: m.n_x,
            n_past: m.n_past,
            y_mean: m.norm.y_mean,
            y_std: m.norm.y_std,
            u_mean: m.norm.u_mean,
            u_std: m.norm.u_std,
            psi: MlpJson::from_mlp(&m.psi),
            f: MlpJson::from_mlp(&m.f),
            h: MlpJson::from_mlp(&m.h),
        }
    }

    pub fn to_model(&self) -> CliResult<EncoderModel> {
        let norm = Standardizer {
            y_mean: self.y_mean,
            y_std: self.y_std,
            u_mean: self.u_mean,
            u_std: self.u_std,
        };
        Ok(EncoderModel {
            psi: self.psi.to_mlp()?,
            f: self.f.to_mlp()?,
            h: self.h.to_mlp()?,
            n_x: self.n_x,
            n_past: self.n_past,
            norm,
        })
    }
}

pub fn save_artifact(path: &Path, artifact: &ModelArtifact) -> CliResult<()> {
    let json = serde_json::to_string(artifact)
        .map_err(|e| CliError::data(format!("model serialization: {e}")))?;
    std::fs::write(path, json)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

pub fn load_artifact(path: &Path) -> CliResult<ModelArtifact> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("missing model file {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
