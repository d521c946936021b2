//! Signal and dataset utilities: PRBS excitation, FIR anti-alias decimation,
//! dead-zone transform, dataset splitting and the NRMSE metric.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One uniformly sampled experiment record.
///
/// Channels: `u_s` requested steering torque command, `v` absolute speed
/// \[m/s\], `r` yaw rate \[rad/s\].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub t: Vec<f64>,
    pub u_s: Vec<f64>,
    pub v: Vec<f64>,
    pub r: Vec<f64>,
    pub t_s: f64,
}

impl Dataset {
    pub fn new(
        id: String,
        t: Vec<f64>,
        u_s: Vec<f64>,
        v: Vec<f64>,
        r: Vec<f64>,
        t_s: f64,
    ) -> Result<Self> {
        let n = t.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "dataset {id} needs at least 2 samples, got {n}"
            )));
        }
        if u_s.len() != n || v.len() != n || r.len() != n {
            return Err(Error::InvalidArgument(format!(
                "dataset {id} channel lengths differ: t {n}, u_s {}, v {}, r {}",
                u_s.len(),
                v.len(),
                r.len()
            )));
        }
        for w in t.windows(2) {
            if libm::fabs(w[1] - w[0] - t_s) > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "dataset {id} time vector is not uniform with spacing {t_s}"
                )));
            }
        }
        Ok(Dataset { id, t, u_s, v, r, t_s })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Input rows `[u_s, v]` per sample.
    pub fn inputs(&self) -> Vec<[f64; 2]> {
        self.u_s.iter().zip(&self.v).map(|(&a, &b)| [a, b]).collect()
    }

    /// Anti-alias filter and subsample every channel by `factor`.
    pub fn decimate(&self, factor: usize) -> Result<Dataset> {
        if factor == 1 {
            return Ok(self.clone());
        }
        let u_s = fir_decimate(&self.u_s, factor)?;
        let v = fir_decimate(&self.v, factor)?;
        let r = fir_decimate(&self.r, factor)?;
        let t: Vec<f64> = (0..u_s.len()).map(|k| self.t[0] + k as f64 * self.t_s * factor as f64).collect();
        Dataset::new(self.id.clone(), t, u_s, v, r, self.t_s * factor as f64)
    }

    /// Copy with the dead-zone transform applied to the command channel.
    pub fn with_dead_zone(&self, lo: f64, hi: f64) -> Result<Dataset> {
        let mut d = self.clone();
        for u in &mut d.u_s {
            *u = dead_zone(*u, lo, hi)?;
        }
        Ok(d)
    }
}

/// Disjoint train/validation/test partition by dataset label.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitPlan {
    /// The 13/3/4 split over the 21-set campaign.
    pub fn campaign_default() -> Self {
        let d = |ids: &[usize]| ids.iter().map(|i| format!("D{i}")).collect();
        SplitPlan {
            train_ids: d(&[1, 3, 4, 7, 8, 9, 10, 11, 12, 15, 16, 18, 20]),
            val_ids: d(&[2, 6, 19]),
            test_ids: d(&[5, 13, 14, 17]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all: Vec<&String> = self
            .train_ids
            .iter()
            .chain(&self.val_ids)
            .chain(&self.test_ids)
            .collect();
        for (i, a) in all.iter().enumerate() {
            if all[i + 1..].contains(a) {
                return Err(Error::InvalidArgument(format!(
                    "split plan mentions dataset {a} more than once"
                )));
            }
        }
        Ok(())
    }
}

/// Partition datasets by the plan. Every plan id must be present and the
/// plan must cover all provided datasets.
pub fn split(
    datasets: Vec<Dataset>,
    plan: &SplitPlan,
) -> Result<(Vec<Dataset>, Vec<Dataset>, Vec<Dataset>)> {
    plan.validate()?;
    let mut remaining = datasets;
    let pick = |ids: &[String], pool: &mut Vec<Dataset>| -> Result<Vec<Dataset>> {
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            match pool.iter().position(|d| &d.id == id) {
                Some(pos) => out.push(pool.remove(pos)),
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "split plan references unknown dataset {id}"
                    )))
                }
            }
        }
        Ok(out)
    };
    let train = pick(&plan.train_ids, &mut remaining)?;
    let val = pick(&plan.val_ids, &mut remaining)?;
    let test = pick(&plan.test_ids, &mut remaining)?;
    if let Some(d) = remaining.first() {
        return Err(Error::InvalidArgument(format!(
            "dataset {} is not covered by the split plan",
            d.id
        )));
    }
    Ok((train, val, test))
}

/// Pseudo-random binary excitation.
///
/// Two-level signal in `{-amplitude, +amplitude}`; level switches are clocked
/// by a maximal-length 16-bit LFSR at intervals of
/// `round(1 / (2 band_hz T_s))` samples.
pub fn prbs(n_samples: usize, band_hz: f64, amplitude: f64, t_s: f64, seed: u64) -> Result<Vec<f64>> {
    if !(band_hz > 0.0) || t_s <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "prbs needs band_hz > 0 and T_s > 0 (got {band_hz}, {t_s})"
        )));
    }
    if band_hz > 0.5 / t_s {
        return Err(Error::InvalidArgument(format!(
            "prbs bandwidth {band_hz} Hz exceeds Nyquist {} Hz",
            0.5 / t_s
        )));
    }
    let hold = (libm::round(1.0 / (2.0 * band_hz * t_s)) as usize).max(1);
    // Non-zero 16-bit state from the seed.
    let mut state: u16 = {
        let mixed = seed ^ (seed >> 16) ^ (seed >> 32) ^ (seed >> 48);
        let s = mixed as u16;
        if s == 0 {
            0xACE1
        } else {
            s
        }
    };
    let mut out = Vec::with_capacity(n_samples);
    while out.len() < n_samples {
        let level = if state & 1 == 1 { amplitude } else { -amplitude };
        for _ in 0..hold {
            if out.len() == n_samples {
                break;
            }
            out.push(level);
        }
        // Fibonacci LFSR, taps 16,15,13,4 (maximal length).
        let bit = (state ^ (state >> 1) ^ (state >> 3) ^ (state >> 12)) & 1;
        state = (state >> 1) | (bit << 15);
    }
    Ok(out)
}

/// Minimum number of samples a PRBS level is held for.
pub fn prbs_hold_interval(band_hz: f64, t_s: f64) -> usize {
    (libm::round(1.0 / (2.0 * band_hz * t_s)) as usize).max(1)
}

/// Hamming-windowed-sinc low-pass taps, unity DC gain.
fn fir_lowpass(order: usize, cutoff: f64) -> Vec<f64> {
    let m = order as f64 / 2.0;
    let mut taps: Vec<f64> = (0..=order)
        .map(|k| {
            let x = k as f64 - m;
            let sinc = if x == 0.0 {
                2.0 * cutoff
            } else {
                libm::sin(2.0 * core::f64::consts::PI * cutoff * x) / (core::f64::consts::PI * x)
            };
            let window = 0.54
                - 0.46 * libm::cos(2.0 * core::f64::consts::PI * k as f64 / order as f64);
            sinc * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Anti-alias filter and subsample by `factor`.
///
/// Linear-phase windowed-sinc low-pass of order `8 * factor` with cutoff
/// `0.8 * pi / factor`, applied with group-delay compensation (edge samples
/// replicated), then every `factor`-th sample kept.
pub fn fir_decimate(x: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(Error::InvalidArgument("decimation factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(x.to_vec());
    }
    let order = 8 * factor;
    if x.len() < order + 1 {
        return Err(Error::InvalidArgument(format!(
            "signal of length {} is shorter than the filter ({} taps)",
            x.len(),
            order + 1
        )));
    }
    let filtered = fir_filter(x, factor);
    Ok(filtered.into_iter().step_by(factor).collect())
}

/// The anti-alias filter of [`fir_decimate`] without the subsampling step.
pub(crate) fn fir_filter(x: &[f64], factor: usize) -> Vec<f64> {
    let order = 8 * factor;
    let taps = fir_lowpass(order, 0.4 / factor as f64);
    let delay = order / 2;
    let n = x.len();
    let mut padded = Vec::with_capacity(n + order);
    padded.extend(core::iter::repeat(x[0]).take(delay));
    padded.extend_from_slice(x);
    padded.extend(core::iter::repeat(x[n - 1]).take(delay));

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Output i is centered on x[i] in the padded buffer.
        let mut acc = 0.0;
        for (k, &h) in taps.iter().enumerate() {
            acc += h * padded[i + order - k];
        }
        out.push(acc);
    }
    out
}

/// Dead-zone nonlinearity: zero inside `[lo, hi]`, shifted identity outside.
pub fn dead_zone(u: f64, lo: f64, hi: f64) -> Result<f64> {
    if lo > hi || lo > 0.0 || hi < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "dead-zone edges must satisfy lo <= 0 <= hi (got [{lo}, {hi}])"
        )));
    }
    Ok(if u > hi {
        u - hi
    } else if u < lo {
        u - lo
    } else {
        0.0
    })
}

/// Cumulative normalized RMS error up to sample `k` (1-based).
///
/// The denominator uses the mean of the *whole* reference signal regardless
/// of `k`.
pub fn nrmse(y: &[f64], y_hat: &[f64], k: usize) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::InvalidArgument(format!(
            "signal lengths differ: {} vs {}",
            y.len(),
            y_hat.len()
        )));
    }
    if k == 0 || k > y.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside 1..={}",
            y.len()
        )));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let num: f64 = y[..k]
        .iter()
        .zip(&y_hat[..k])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = y[..k].iter().map(|a| (a - mean) * (a - mean)).sum();
    if den == 0.0 {
        return Err(Error::UndefinedMetric(
            "reference signal is constant on the evaluated window".into(),
        ));
    }
    Ok(libm::sqrt(num) / libm::sqrt(den))
}

/// NRMSE(k) for every k = 1..=N in one pass.
pub fn nrmse_evolution(y: &[f64], y_hat: &[f64]) -> Result<Vec<f64>> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "signal lengths differ or empty: {} vs {}",
            y.len(),
            y_hat.len()
        )));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut out = Vec::with_capacity(y.len());
    for (a, b) in y.iter().zip(y_hat) {
        num += (a - b) * (a - b);
        den += (a - mean) * (a - mean);
        out.push(if den == 0.0 {
            f64::NAN
        } else {
            libm::sqrt(num) / libm::sqrt(den)
        });
    }
    Ok(out)
}
