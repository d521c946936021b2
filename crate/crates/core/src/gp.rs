//! Gaussian-process NARX estimator.
//!
//! A squared-exponential GP regresses the next yaw rate on lagged outputs
//! and inputs. Evaluation is free-run: predicted outputs are fed back into
//! the regressor while inputs come from the record. Hyper-parameters are
//! tuned by cross validation on the n-step-ahead error.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::signal::Dataset;

/// NARX lag structure: `n_a` output lags, `n_b` lags of both inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NarxOrders {
    pub n_a: usize,
    pub n_b: usize,
}

impl NarxOrders {
    pub fn new(n_a: usize, n_b: usize) -> Result<Self> {
        if n_a == 0 || n_b == 0 {
            return Err(Error::InvalidArgument(String::from(
                "NARX orders must be at least 1",
            )));
        }
        Ok(NarxOrders { n_a, n_b })
    }

    /// Regressor dimension: `n_a` output lags plus two inputs per lag.
    pub fn dim(&self) -> usize {
        self.n_a + 2 * self.n_b
    }

    pub fn max_lag(&self) -> usize {
        self.n_a.max(self.n_b)
    }
}

/// Squared-exponential kernel with one lengthscale per regressor dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SeKernel {
    pub signal_var: f64,
    pub lengthscales: Vec<f64>,
    pub noise_var: f64,
}

impl SeKernel {
    pub fn validate(&self) -> Result<()> {
        if !(self.signal_var > 0.0) {
            return Err(Error::InvalidArgument(String::from(
                "signal variance must be positive",
            )));
        }
        if !(self.noise_var > 0.0) {
            return Err(Error::InvalidArgument(String::from(
                "noise variance must be positive",
            )));
        }
        if self.lengthscales.is_empty() || self.lengthscales.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidArgument(String::from(
                "lengthscales must be positive",
            )));
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            let d = (a[i] - b[i]) / self.lengthscales[i];
            s += d * d;
        }
        self.signal_var * libm::exp(-0.5 * s)
    }

    /// Expands a scalar lengthscale template to per-dimension ARD scales
    /// proportional to each regressor column's standard deviation.
    pub fn expand(&self, rows: &[Vec<f64>]) -> Result<SeKernel> {
        if self.lengthscales.len() != 1 {
            return Err(Error::InvalidArgument(String::from(
                "template kernel must have a single lengthscale scale",
            )));
        }
        if rows.is_empty() {
            return Err(Error::InvalidArgument(String::from("no regressor rows")));
        }
        let scale = self.lengthscales[0];
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut out = Vec::with_capacity(dim);
        for j in 0..dim {
            let mean: f64 = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var: f64 = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
            let sd = libm::sqrt(var);
            // Constant columns fall back to the raw scale.
            out.push(if sd > 1e-12 { scale * sd } else { scale });
        }
        Ok(SeKernel {
            signal_var: self.signal_var,
            lengthscales: out,
            noise_var: self.noise_var,
        })
    }
}

/// Fitted GP: training regressors, centered targets, and the Cholesky
/// factor of the regularized Gram matrix.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub y_mean: f64,
    pub kernel: SeKernel,
    pub chol: DMatrix<f64>,
    pub alpha: DVector<f64>,
}

/// NARX regressor rows and targets for one record; rows never span
/// record boundaries. Row `k` holds `[y_{k-1..k-n_a}, (u_s, v)_{k-1..k-n_b}]`.
pub fn build_regressors(d: &Dataset, orders: NarxOrders) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let lag = orders.max_lag();
    if d.len() <= lag {
        return Err(Error::InvalidArgument(format!(
            "record {} has {} samples, need more than {lag}",
            d.id,
            d.len()
        )));
    }
    let mut rows = Vec::with_capacity(d.len() - lag);
    let mut targets = Vec::with_capacity(d.len() - lag);
    for k in lag..d.len() {
        let mut row = Vec::with_capacity(orders.dim());
        for i in 1..=orders.n_a {
            row.push(d.r[k - i]);
        }
        for j in 1..=orders.n_b {
            row.push(d.u_s[k - j]);
            row.push(d.v[k - j]);
        }
        rows.push(row);
        targets.push(d.r[k]);
    }
    Ok((rows, targets))
}

/// Concatenates regressors over several records.
pub fn build_regressors_all(
    data: &[Dataset],
    orders: NarxOrders,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for d in data {
        let (r, t) = build_regressors(d, orders)?;
        rows.extend(r);
        targets.extend(t);
    }
    Ok((rows, targets))
}

/// Uniform strided subsampling to at most `cap` rows.
pub fn subsample_rows(rows: &mut Vec<Vec<f64>>, targets: &mut Vec<f64>, cap: usize) {
    if cap == 0 || rows.len() <= cap {
        return;
    }
    let stride = rows.len().div_ceil(cap);
    let mut keep = 0;
    for i in (0..rows.len()).step_by(stride) {
        rows.swap(keep, i);
        targets.swap(keep, i);
        keep += 1;
    }
    rows.truncate(keep);
    targets.truncate(keep);
}

fn try_cholesky(gram: &DMatrix<f64>, noise_var: f64) -> Option<Cholesky<f64, Dyn>> {
    let n = gram.nrows();
    let mut k = gram.clone();
    for i in 0..n {
        k[(i, i)] += noise_var;
    }
    Cholesky::new(k)
}

/// Fits the GP: one Cholesky of `K(Z,Z) + noise_var I`, escalating the
/// jitter tenfold up to three times if the factorization fails.
pub fn gp_fit(rows: &[Vec<f64>], targets: &[f64], kernel: &SeKernel) -> Result<GpModel> {
    kernel.validate()?;
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} regressor rows for {} targets",
            rows.len(),
            targets.len()
        )));
    }
    let dim = rows[0].len();
    if kernel.lengthscales.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "kernel has {} lengthscales for regressor dimension {dim}",
            kernel.lengthscales.len()
        )));
    }

    let n = rows.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let k = kernel.eval(&rows[i], &rows[j]);
            gram[(i, j)] = k;
            gram[(j, i)] = k;
        }
    }

    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let y = DVector::from_fn(n, |i, _| targets[i] - y_mean);

    let mut noise = kernel.noise_var;
    let mut chol = None;
    for _ in 0..4 {
        if let Some(c) = try_cholesky(&gram, noise) {
            chol = Some(c);
            break;
        }
        noise *= 10.0;
    }
    let chol = chol.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "Gram matrix not positive definite even with jitter {noise:.3e}"
        ))
    })?;
    let alpha = chol.solve(&y);
    let mut kernel = kernel.clone();
    kernel.noise_var = noise;
    Ok(GpModel {
        z: DMatrix::from_fn(n, dim, |i, j| rows[i][j]),
        y,
        y_mean,
        kernel,
        chol: chol.l(),
        alpha,
    })
}

/// Posterior mean at `z`: `k(z, Z) alpha` plus the target mean.
pub fn gp_predict(m: &GpModel, z: &[f64]) -> Result<f64> {
    if z.len() != m.z.ncols() {
        return Err(Error::InvalidArgument(format!(
            "regressor has dimension {}, model expects {}",
            z.len(),
            m.z.ncols()
        )));
    }
    let mut acc = 0.0;
    for i in 0..m.z.nrows() {
        let row: Vec<f64> = m.z.row(i).iter().copied().collect();
        acc += m.kernel.eval(z, &row) * m.alpha[i];
    }
    Ok(acc + m.y_mean)
}

/// Free-run simulation: output lags start from measured `r`, then predicted
/// outputs are fed back while inputs come from the record.
pub fn gp_simulate(m: &GpModel, d: &Dataset, orders: NarxOrders) -> Result<Vec<f64>> {
    let lag = orders.max_lag();
    if d.len() <= lag {
        return Err(Error::InvalidArgument(format!(
            "record {} too short for lag {lag}",
            d.id
        )));
    }
    if orders.dim() != m.z.ncols() {
        return Err(Error::InvalidArgument(format!(
            "orders give dimension {}, model expects {}",
            orders.dim(),
            m.z.ncols()
        )));
    }
    let mut y_hat: Vec<f64> = d.r[..lag].to_vec();
    let mut row = vec![0.0; orders.dim()];
    for k in lag..d.len() {
        for i in 1..=orders.n_a {
            row[i - 1] = y_hat[k - i];
        }
        for j in 1..=orders.n_b {
            row[orders.n_a + 2 * (j - 1)] = d.u_s[k - j];
            row[orders.n_a + 2 * (j - 1) + 1] = d.v[k - j];
        }
        let p = gp_predict(m, &row)?;
        if !p.is_finite() {
            return Err(Error::SimulationFailure { index: k });
        }
        y_hat.push(p);
    }
    Ok(y_hat)
}

/// Mean squared n-step-ahead prediction error over non-overlapping windows.
pub fn n_step_error(m: &GpModel, d: &Dataset, orders: NarxOrders, horizon: usize) -> Result<f64> {
    let lag = orders.max_lag();
    let horizon = horizon.max(1);
    if d.len() < lag + horizon {
        return Err(Error::InvalidArgument(format!(
            "record {} too short for horizon {horizon}",
            d.id
        )));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    let mut row = vec![0.0; orders.dim()];
    let mut start = lag;
    while start + horizon <= d.len() {
        // Lag buffer over the whole record: measured before the window,
        // predicted inside it.
        let mut buf: Vec<f64> = d.r[..start].to_vec();
        for k in start..start + horizon {
            for i in 1..=orders.n_a {
                row[i - 1] = buf[k - i];
            }
            for j in 1..=orders.n_b {
                row[orders.n_a + 2 * (j - 1)] = d.u_s[k - j];
                row[orders.n_a + 2 * (j - 1) + 1] = d.v[k - j];
            }
            let p = gp_predict(m, &row)?;
            if !p.is_finite() {
                return Err(Error::SimulationFailure { index: k });
            }
            let e = p - d.r[k];
            acc += e * e;
            count += 1;
            buf.push(p);
        }
        start += horizon;
    }
    Ok(acc / count as f64)
}

/// Grid search over orders and kernel templates, scored by the n-step
/// validation error. Order candidates are tried from small to large and
/// lengthscale scales from large to small, so on exact ties the smaller
/// orders and larger lengthscales win.
pub fn tune_hyperparameters(
    train: &[Dataset],
    val: &[Dataset],
    order_grid: &[NarxOrders],
    kernel_grid: &[SeKernel],
    horizon: usize,
    row_cap: usize,
) -> Result<(SeKernel, NarxOrders)> {
    if order_grid.is_empty() || kernel_grid.is_empty() {
        return Err(Error::TuningFailure(String::from("empty candidate grid")));
    }
    let mut orders_sorted = order_grid.to_vec();
    orders_sorted.sort_by_key(|o| (o.n_a + o.n_b, o.n_a));
    let mut kernels_sorted = kernel_grid.to_vec();
    kernels_sorted.sort_by(|a, b| {
        b.lengthscales[0]
            .partial_cmp(&a.lengthscales[0])
            .unwrap_or(core::cmp::Ordering::Equal)
    });

    let mut best: Option<(f64, SeKernel, NarxOrders)> = None;
    for &orders in &orders_sorted {
        let built = build_regressors_all(train, orders);
        let (mut rows, mut targets) = match built {
            Ok(rt) => rt,
            Err(_) => continue,
        };
        subsample_rows(&mut rows, &mut targets, row_cap);
        for template in &kernels_sorted {
            let kernel = match template.expand(&rows) {
                Ok(k) => k,
                Err(_) => continue,
            };
            let model = match gp_fit(&rows, &targets, &kernel) {
                Ok(m) => m,
                Err(_) => continue,
            };
            let mut err = 0.0;
            let mut ok = true;
            for d in val {
                match n_step_error(&model, d, orders, horizon) {
                    Ok(e) => err += e,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok || !err.is_finite() {
                continue;
            }
            if best.as_ref().map_or(true, |(b, _, _)| err < *b) {
                best = Some((err, template.clone(), orders));
            }
        }
    }
    best.map(|(_, k, o)| (k, o))
        .ok_or_else(|| Error::TuningFailure(String::from("no candidate could be fitted")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::signal::nrmse;
    use approx::assert_relative_eq;

    fn toy_dataset(id: &str, n: usize, seed: u64, f: impl Fn(f64, f64, f64) -> f64) -> Dataset {
        // y_k = f(y_{k-1}, u_s_{k-1}, v_{k-1}) driven by random inputs.
        let mut rng = Rng::new(seed);
        let t_s = 0.1;
        let mut u_s = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut hold = 0.0;
        for k in 0..n {
            if k % 5 == 0 {
                hold = rng.uniform(-1.0, 1.0);
            }
            u_s.push(hold);
            v.push(2.0 + 0.5 * rng.uniform(-1.0, 1.0));
            let prev = if k == 0 { 0.0 } else { y[k - 1] };
            let y_k = if k == 0 {
                0.0
            } else {
                f(prev, u_s[k - 1], v[k - 1])
            };
            y.push(y_k);
        }
        let t: Vec<f64> = (0..n).map(|k| k as f64 * t_s).collect();
        Dataset::new(String::from(id), t, u_s, v, y, t_s).unwrap()
    }

    fn iso_kernel(dim: usize, l: f64, noise: f64) -> SeKernel {
        SeKernel {
            signal_var: 1.0,
            lengthscales: vec![l; dim],
            noise_var: noise,
        }
    }

    #[test]
    fn regressor_counting() {
        let d = Dataset::new(
            String::from("D1"),
            vec![0.0, 0.1, 0.2],
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.0],
            0.1,
        )
        .unwrap();
        let orders = NarxOrders::new(1, 1).unwrap();
        let (rows, targets) = build_regressors(&d, orders).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0], vec![7.0, 1.0, 4.0]);
        assert_eq!(rows[1], vec![8.0, 2.0, 5.0]);
        assert_eq!(targets, vec![8.0, 9.0]);
    }

    #[test]
    fn regressor_dimension_nine_nine() {
        let orders = NarxOrders::new(9, 9).unwrap();
        assert_eq!(orders.dim(), 27);
        let d = toy_dataset("D1", 30, 1, |y, u, _| 0.5 * y + 0.1 * u);
        let (rows, _) = build_regressors(&d, orders).unwrap();
        assert_eq!(rows.len(), 30 - 9);
        assert_eq!(rows[0].len(), 27);
    }

    #[test]
    fn constant_record_identical_rows() {
        let n = 10;
        let d = Dataset::new(
            String::from("D1"),
            (0..n).map(|k| k as f64 * 0.1).collect(),
            vec![0.3; n],
            vec![2.0; n],
            vec![0.7; n],
            0.1,
        )
        .unwrap();
        let (rows, _) = build_regressors(&d, NarxOrders::new(2, 2).unwrap()).unwrap();
        for r in &rows {
            assert_eq!(r, &rows[0]);
        }
    }

    #[test]
    fn kernel_self_similarity() {
        let k = SeKernel {
            signal_var: 2.5,
            lengthscales: vec![0.3, 1.0, 4.0],
            noise_var: 1e-6,
        };
        let z = [0.2, -1.0, 3.0];
        assert_relative_eq!(k.eval(&z, &z), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn single_point_interpolation() {
        let k = iso_kernel(2, 1.0, 1e-12);
        let m = gp_fit(&[vec![0.5, -0.5]], &[3.0], &k).unwrap();
        let p = gp_predict(&m, &[0.5, -0.5]).unwrap();
        assert_relative_eq!(p, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn posterior_matches_dense_solve() {
        let rows = vec![vec![0.0], vec![0.5], vec![1.0], vec![1.7], vec![2.3]];
        let targets = [0.1, 0.4, 0.2, -0.5, 0.3];
        let k = iso_kernel(1, 0.8, 1e-4);
        let m = gp_fit(&rows, &targets, &k).unwrap();

        let n = rows.len();
        let y_mean = targets.iter().sum::<f64>() / n as f64;
        let gram = DMatrix::from_fn(n, n, |i, j| {
            k.eval(&rows[i], &rows[j]) + if i == j { k.noise_var } else { 0.0 }
        });
        let y = DVector::from_fn(n, |i, _| targets[i] - y_mean);
        let alpha = gram.try_inverse().unwrap() * y;
        for (i, row) in rows.iter().enumerate() {
            let mut want = y_mean;
            for j in 0..n {
                want += k.eval(row, &rows[j]) * alpha[j];
            }
            let got = gp_predict(&m, row).unwrap();
            assert_relative_eq!(got, want, epsilon = 1e-10);
            let _ = i;
        }
    }

    #[test]
    fn far_query_returns_prior_mean() {
        let rows = vec![vec![0.0], vec![1.0], vec![-1.0], vec![0.5]];
        // Zero-mean targets make the prior mean exactly zero.
        let targets = [0.4, 0.1, -0.2, -0.3];
        let k = iso_kernel(1, 0.5, 1e-6);
        let m = gp_fit(&rows, &targets, &k).unwrap();
        let p = gp_predict(&m, &[100.0]).unwrap();
        assert!(p.abs() < 1e-10, "far prediction {p}");
    }

    #[test]
    fn odd_symmetry_is_preserved() {
        let rows = vec![vec![-1.0], vec![-0.4], vec![0.4], vec![1.0]];
        let targets = [-0.8, -0.3, 0.3, 0.8];
        let k = iso_kernel(1, 0.7, 1e-8);
        let m = gp_fit(&rows, &targets, &k).unwrap();
        let a = gp_predict(&m, &[0.6]).unwrap();
        let b = gp_predict(&m, &[-0.6]).unwrap();
        assert_relative_eq!(a, -b, epsilon = 1e-9);
    }

    #[test]
    fn permutation_invariance() {
        let rows = vec![vec![0.1, 0.0], vec![0.7, -0.2], vec![-0.3, 0.5], vec![0.2, 0.9]];
        let targets = [1.0, -0.5, 0.2, 0.8];
        let k = iso_kernel(2, 0.6, 1e-5);
        let m1 = gp_fit(&rows, &targets, &k).unwrap();
        let perm = [2usize, 0, 3, 1];
        let rows2: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let targets2: Vec<f64> = perm.iter().map(|&i| targets[i]).collect();
        let m2 = gp_fit(&rows2, &targets2, &k).unwrap();
        for q in [[0.0, 0.0], [0.5, 0.5], [-1.0, 2.0]] {
            let a = gp_predict(&m1, &q).unwrap();
            let b = gp_predict(&m2, &q).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        let mut rng = Rng::new(8);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| vec![rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)])
            .collect();
        let k = iso_kernel(2, 0.5, 1e-9);
        let n = rows.len();
        let gram = DMatrix::from_fn(n, n, |i, j| k.eval(&rows[i], &rows[j]));
        let eigs = gram.symmetric_eigenvalues();
        assert!(eigs.iter().all(|&e| e > -1e-10), "min eig {}", eigs.min());
    }

    #[test]
    fn jitter_escalation_rescues_duplicates() {
        // Two identical rows make the noiseless Gram exactly singular.
        let rows = vec![vec![0.5], vec![0.5], vec![1.0]];
        let targets = [0.2, 0.2, 0.4];
        let k = iso_kernel(1, 1.0, 1e-18);
        let m = gp_fit(&rows, &targets, &k).unwrap();
        assert!(m.kernel.noise_var >= 1e-18);
        assert!(gp_predict(&m, &[0.75]).unwrap().is_finite());
    }

    #[test]
    fn predict_rejects_wrong_dimension() {
        let k = iso_kernel(2, 1.0, 1e-6);
        let m = gp_fit(&[vec![0.0, 0.0]], &[1.0], &k).unwrap();
        assert!(gp_predict(&m, &[0.0]).is_err());
    }

    #[test]
    fn simulate_initialization_contract() {
        let orders = NarxOrders::new(3, 2).unwrap();
        let d = toy_dataset("D1", 60, 4, |y, u, _| 0.8 * y + 0.2 * u);
        let (rows, targets) = build_regressors(&d, orders).unwrap();
        let k = iso_kernel(orders.dim(), 1.0, 1e-6);
        let m = gp_fit(&rows, &targets, &k).unwrap();
        let y_hat = gp_simulate(&m, &d, orders).unwrap();
        assert_eq!(y_hat.len(), d.len());
        for i in 0..orders.max_lag() {
            assert_eq!(y_hat[i], d.r[i]);
        }
    }

    #[test]
    fn zero_alpha_model_predicts_mean() {
        let orders = NarxOrders::new(2, 1).unwrap();
        let d = toy_dataset("D1", 40, 6, |y, u, _| 0.5 * y + 0.3 * u);
        let (rows, targets) = build_regressors(&d, orders).unwrap();
        let k = iso_kernel(orders.dim(), 1.0, 1e-4);
        let mut m = gp_fit(&rows, &targets, &k).unwrap();
        m.alpha.fill(0.0);
        m.y_mean = 0.0;
        let y_hat = gp_simulate(&m, &d, orders).unwrap();
        for &v in &y_hat[orders.max_lag()..] {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn recovers_linear_arx_system() {
        let f = |y: f64, u: f64, v: f64| 0.85 * y + 0.15 * u + 0.02 * (v - 2.0);
        let d_train = toy_dataset("D1", 400, 10, f);
        let d_test = toy_dataset("D2", 200, 11, f);
        let orders = NarxOrders::new(1, 1).unwrap();
        let (rows, targets) = build_regressors_all(&[d_train], orders).unwrap();
        let template = SeKernel {
            signal_var: 1.0,
            lengthscales: vec![3.0],
            noise_var: 1e-8,
        };
        let k = template.expand(&rows).unwrap();
        let m = gp_fit(&rows, &targets, &k).unwrap();
        let y_hat = gp_simulate(&m, &d_test, orders).unwrap();
        let e = nrmse(&d_test.r, &y_hat, d_test.len() - 1).unwrap();
        assert!(e < 0.05, "NRMSE {e}");
    }

    #[test]
    fn subsample_respects_cap() {
        let mut rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let mut targets: Vec<f64> = (0..100).map(|i| i as f64).collect();
        subsample_rows(&mut rows, &mut targets, 30);
        assert!(rows.len() <= 30);
        assert_eq!(rows.len(), targets.len());
        // Strided selection keeps the first row and spans the range.
        assert_eq!(rows[0][0], 0.0);
        assert!(rows.last().unwrap()[0] >= 90.0);
    }

    #[test]
    fn tune_single_candidate() {
        let d_train = toy_dataset("D1", 200, 12, |y, u, _| 0.7 * y + 0.2 * u);
        let d_val = toy_dataset("D2", 100, 13, |y, u, _| 0.7 * y + 0.2 * u);
        let orders = NarxOrders::new(2, 2).unwrap();
        let template = SeKernel {
            signal_var: 1.0,
            lengthscales: vec![2.0],
            noise_var: 1e-6,
        };
        let (k, o) =
            tune_hyperparameters(&[d_train], &[d_val], &[orders], &[template.clone()], 10, 500)
                .unwrap();
        assert_eq!(o, orders);
        assert_eq!(k, template);
    }

    #[test]
    fn tune_selects_generating_orders() {
        // Second-order dynamics: y_k depends on y_{k-1} and y_{k-2}.
        let mut rng = Rng::new(20);
        let make = |seed: u64, n: usize, rng: &mut Rng| {
            let t_s = 0.1;
            let mut u_s = Vec::with_capacity(n);
            let mut v = Vec::with_capacity(n);
            let mut y = vec![0.0, 0.0];
            let mut hold = 0.0;
            for k in 0..n {
                if k % 4 == 0 {
                    hold = rng.uniform(-1.0, 1.0);
                }
                u_s.push(hold);
                v.push(2.0);
                if k >= 2 {
                    y.push(1.2 * y[k - 1] - 0.5 * y[k - 2] + 0.3 * u_s[k - 1]);
                }
            }
            y.truncate(n);
            let t: Vec<f64> = (0..n).map(|k| k as f64 * t_s).collect();
            Dataset::new(format!("D{seed}"), t, u_s, v, y, t_s).unwrap()
        };
        let d_train = make(1, 300, &mut rng);
        let d_val = make(2, 150, &mut rng);
        let grid = [NarxOrders::new(1, 1).unwrap(), NarxOrders::new(2, 2).unwrap()];
        let template = SeKernel {
            signal_var: 1.0,
            lengthscales: vec![3.0],
            noise_var: 1e-8,
        };
        let (_, o) = tune_hyperparameters(&[d_train], &[d_val], &grid, &[template], 20, 500).unwrap();
        assert_eq!(o, NarxOrders::new(2, 2).unwrap());
    }

    #[test]
    fn one_step_horizon_matches_direct_error() {
        let d = toy_dataset("D1", 80, 15, |y, u, _| 0.6 * y + 0.2 * u);
        let orders = NarxOrders::new(1, 1).unwrap();
        let (rows, targets) = build_regressors(&d, orders).unwrap();
        let k = iso_kernel(orders.dim(), 1.0, 1e-4);
        let m = gp_fit(&rows, &targets, &k).unwrap();
        let err = n_step_error(&m, &d, orders, 1).unwrap();
        // With horizon 1 every prediction uses measured lags.
        let mut want = 0.0;
        for (row, &t) in rows.iter().zip(targets.iter()) {
            let e = gp_predict(&m, row).unwrap() - t;
            want += e * e;
        }
        want /= rows.len() as f64;
        assert_relative_eq!(err, want, epsilon = 1e-12);
    }
}
