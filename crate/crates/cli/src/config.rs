//! TOML experiment configuration.
//!
//! One file describes the whole campaign: the datasets to simulate, the
//! train/validation/test split, and per-method hyper-parameters. See
//! `README.md` for a complete schema example.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use steerid::signal::SplitPlan;
use steerid::sim::{CurvatureProfile, ExperimentSpec, NoiseModel, SimParams};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory; overridable with `--out`.
    pub out_dir: PathBuf,
    #[serde(default)]
    pub sim: SimOverrides,
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<DatasetSpec>,
    pub split: SplitConfig,
    #[serde(default)]
    pub lti: LtiConfig,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub id: String,
    /// Target speed [m/s].
    pub speed: f64,
    /// Record length [s].
    pub duration: f64,
    pub seed: u64,
    pub prbs_amplitude: Option<f64>,
    pub prbs_band_hz: Option<f64>,
    /// Yaw-rate noise standard deviation; omit for the default noise model,
    /// set to 0 for a noiseless record.
    pub noise_sigma: Option<f64>,
    pub noise_ar: Option<Vec<f64>>,
    pub path: Option<PathSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSpec {
    Constant { curvature: f64 },
    Slalom { amplitude: f64, period: f64 },
    Segments { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Optional overrides of the physical simulator parameters.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimOverrides {
    pub mass: Option<f64>,
    pub inertia_z: Option<f64>,
    pub l_f: Option<f64>,
    pub l_r: Option<f64>,
    pub c_f: Option<f64>,
    pub c_r: Option<f64>,
    pub steering_inertia: Option<f64>,
    pub steering_damping: Option<f64>,
    pub linkage_ratio: Option<f64>,
    pub rack_friction: Option<f64>,
    pub trail_n0: Option<f64>,
    pub trail_delta_crit: Option<f64>,
    pub brake_torque_max: Option<f64>,
    pub brake_speed_scale: Option<f64>,
    pub servo_dz_low: Option<f64>,
    pub servo_dz_high: Option<f64>,
    pub servo_gain: Option<f64>,
    pub servo_tau: Option<f64>,
    pub servo_t_max: Option<f64>,
}

impl SimOverrides {
    pub fn apply(&self, p: &mut SimParams) {
        let set = |target: &mut f64, v: &Option<f64>| {
            if let Some(v) = v {
                *target = *v;
            }
        };
        set(&mut p.chassis.m, &self.mass);
        set(&mut p.chassis.i_z, &self.inertia_z);
        set(&mut p.chassis.l_f, &self.l_f);
        set(&mut p.chassis.l_r, &self.l_r);
        set(&mut p.chassis.c_f, &self.c_f);
        set(&mut p.chassis.c_r, &self.c_r);
        set(&mut p.steering.theta_delta, &self.steering_inertia);
        set(&mut p.steering.d_delta, &self.steering_damping);
        set(&mut p.steering.i_l, &self.linkage_ratio);
        set(&mut p.steering.f_sr, &self.rack_friction);
        set(&mut p.steering.trail_n0, &self.trail_n0);
        set(&mut p.steering.trail_delta_crit, &self.trail_delta_crit);
        set(&mut p.steering.t_b_max, &self.brake_torque_max);
        set(&mut p.steering.v_b, &self.brake_speed_scale);
        set(&mut p.servo.dz_low, &self.servo_dz_low);
        set(&mut p.servo.dz_high, &self.servo_dz_high);
        set(&mut p.servo.gain, &self.servo_gain);
        set(&mut p.servo.tau_servo, &self.servo_tau);
        set(&mut p.servo.t_max, &self.servo_t_max);
    }
}

fn default_decimate_10hz() -> usize {
    5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LtiConfig {
    /// FIR decimation factor applied to the 50 Hz records before fitting.
    pub decimate: usize,
    pub n_a: usize,
    pub n_b: [usize; 2],
    pub n_k: [usize; 2],
    pub n_x: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Fit the LTI-SS* variant: pass the steering command through a
    /// dead-zone before fitting and simulating.
    pub dead_zone: bool,
    pub dead_zone_edges: [f64; 2],
    /// Per-method split override; falls back to `[split]`.
    pub train: Option<Vec<String>>,
    pub val: Option<Vec<String>>,
}

impl Default for LtiConfig {
    fn default() -> Self {
        LtiConfig {
            decimate: default_decimate_10hz(),
            n_a: 10,
            n_b: [10, 10],
            n_k: [1, 1],
            n_x: 10,
            epochs: 500,
            lr: 1e-3,
            dead_zone: false,
            dead_zone_edges: [-0.13, 0.17],
            train: None,
            val: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub decimate: usize,
    /// n-step cross-validation horizon.
    pub horizon: usize,
    /// Training-row cap; larger sets are subsampled with a uniform stride.
    pub row_cap: usize,
    /// Order grid, `[n_a, n_b]` pairs.
    pub orders: Vec<[usize; 2]>,
    /// Lengthscale scale grid; per-dimension scales are this value times
    /// the regressor column's standard deviation.
    pub lengthscale_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
    pub train: Option<Vec<String>>,
    pub val: Option<Vec<String>>,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            decimate: default_decimate_10hz(),
            horizon: 100,
            row_cap: 2000,
            orders: vec![[9, 9]],
            lengthscale_scales: vec![2.0, 5.0, 10.0],
            signal_var: 1.0,
            noise_var: 1e-4,
            train: None,
            val: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub decimate: usize,
    pub n_x: usize,
    pub n_past: usize,
    pub hidden: Vec<usize>,
    /// Rollout horizon in samples.
    pub n: usize,
    pub tau0: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub val_patience: usize,
    pub train: Option<Vec<String>>,
    pub val: Option<Vec<String>>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            decimate: 10,
            n_x: 40,
            n_past: 40,
            hidden: vec![64, 64],
            n: 100,
            tau0: 0,
            batch_size: 512,
            lr: 1e-3,
            epochs: 50,
            seed: 1,
            val_patience: 10,
            train: None,
            val: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let mut seen = BTreeSet::new();
        for d in &self.datasets {
            if d.id.is_empty() || d.id.contains(['/', '\\', ',']) {
                return Err(CliError::config(format!("invalid dataset id {:?}", d.id)));
            }
            if !seen.insert(d.id.clone()) {
                return Err(CliError::config(format!("duplicate dataset id {:?}", d.id)));
            }
            if d.speed <= 0.0 || d.duration <= 0.0 {
                return Err(CliError::config(format!(
                    "dataset {:?} needs positive speed and duration",
                    d.id
                )));
            }
        }
        let referenced = |ids: &[String], role: &str| -> CliResult<()> {
            for id in ids {
                if !seen.contains(id) {
                    return Err(CliError::config(format!(
                        "{role} references unknown dataset {id:?}"
                    )));
                }
            }
            Ok(())
        };
        referenced(&self.split.train, "split.train")?;
        referenced(&self.split.val, "split.val")?;
        referenced(&self.split.test, "split.test")?;
        for (ids, role) in [
            (&self.lti.train, "lti.train"),
            (&self.lti.val, "lti.val"),
            (&self.gp.train, "gp.train"),
            (&self.gp.val, "gp.val"),
            (&self.encoder.train, "encoder.train"),
            (&self.encoder.val, "encoder.val"),
        ] {
            if let Some(ids) = ids {
                referenced(ids, role)?;
            }
        }
        self.split_plan()
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        if self.lti.decimate == 0 || self.gp.decimate == 0 || self.encoder.decimate == 0 {
            return Err(CliError::config("decimation factors must be >= 1"));
        }
        Ok(())
    }

    pub fn split_plan(&self) -> SplitPlan {
        SplitPlan {
            train_ids: self.split.train.clone(),
            val_ids: self.split.val.clone(),
            test_ids: self.split.test.clone(),
        }
    }

    /// Simulator parameters with overrides applied.
    pub fn sim_params(&self) -> SimParams {
        let mut p = SimParams::default();
        self.sim.apply(&mut p);
        p
    }
}

impl DatasetSpec {
    /// The closed-loop experiment this spec describes. `seed_offset` shifts
    /// every seed, for `--seed` overrides.
    pub fn experiment_spec(&self) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(self.id.clone(), self.speed, self.duration);
        let amplitude = self.prbs_amplitude.unwrap_or(spec.prbs_amplitude);
        let band_hz = self.prbs_band_hz.unwrap_or(spec.prbs_band_hz);
        spec = spec.with_prbs(amplitude, band_hz);
        if let Some(path) = &self.path {
            let profile = match path {
                PathSpec::Constant { curvature } => CurvatureProfile::Constant(*curvature),
                PathSpec::Slalom { amplitude, period } => CurvatureProfile::Slalom {
                    amplitude: *amplitude,
                    period: *period,
                },
                PathSpec::Segments { points } => CurvatureProfile::Segments(points.clone()),
            };
            spec = spec.with_path(profile);
        }
        spec
    }

    pub fn noise_model(&self) -> NoiseModel {
        match (self.noise_sigma, &self.noise_ar) {
            (None, None) => NoiseModel::default(),
            (sigma, ar) => {
                let mut n = NoiseModel::default();
                if let Some(s) = sigma {
                    n.sigma_e = s;
                }
                if let Some(ar) = ar {
                    n.ar_coeffs = ar.clone();
                }
                if n.sigma_e == 0.0 {
                    NoiseModel::noiseless()
                } else {
                    n
                }
            }
        }
    }
}
