//! Linear time-invariant baselines.
//!
//! The pipeline initializes a state-space model from data in three steps:
//! an ARX least-squares fit, extraction of the implied impulse response,
//! and a Ho-Kalman realization of that impulse response. The realized
//! model is then refined by output-error minimization, i.e. gradient
//! descent on the free-run simulation error.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::signal::{nrmse, Dataset};

pub const N_INPUTS: usize = 2;

/// Discrete-time state-space model `x+ = A x + B u, y = C x` with an
/// optional innovation gain `K` (zero in output-error mode).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSsModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub n_x: usize,
}

impl LinearSsModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n_x = a.nrows();
        if a.ncols() != n_x {
            return Err(Error::InvalidArgument(String::from("A must be square")));
        }
        if b.nrows() != n_x || b.ncols() != N_INPUTS {
            return Err(Error::InvalidArgument(format!(
                "B must be {n_x}x{N_INPUTS}, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.nrows() != 1 || c.ncols() != n_x {
            return Err(Error::InvalidArgument(format!(
                "C must be 1x{n_x}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        let k = DMatrix::zeros(n_x, 1);
        Ok(LinearSsModel { a, b, c, k, n_x })
    }

    /// Largest eigenvalue magnitude of `A`; < 1 means the free run is stable.
    pub fn spectral_radius(&self) -> f64 {
        if self.n_x == 0 {
            return 0.0;
        }
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|e| libm::sqrt(e.norm_sqr()))
            .fold(0.0, f64::max)
    }

    /// Impulse-response coefficients `g_k = C A^(k-1) B`, with `g_0 = 0`.
    pub fn markov_params(&self, count: usize) -> Vec<[f64; N_INPUTS]> {
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return out;
        }
        out.push([0.0; N_INPUTS]);
        // Track A^(k-1) B as a running product.
        let mut akb = self.b.clone();
        for _ in 1..count {
            let g = &self.c * &akb;
            out.push([g[(0, 0)], g[(0, 1)]]);
            akb = &self.a * akb;
        }
        out
    }
}

/// One-step ARX predictor
/// `y_k = sum_i a_i y_{k-i} + sum_c sum_j b_c[j] u_c[k - n_k_c - j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArxModel {
    pub n_a: usize,
    pub n_b: [usize; N_INPUTS],
    pub n_k: [usize; N_INPUTS],
    pub a: Vec<f64>,
    pub b: [Vec<f64>; N_INPUTS],
}

impl ArxModel {
    /// Smallest sample index with a complete regressor window.
    fn first_valid(&self) -> usize {
        let mut k = self.n_a;
        for c in 0..N_INPUTS {
            if self.n_b[c] > 0 {
                k = k.max(self.n_k[c] + self.n_b[c] - 1);
            }
        }
        k
    }

    fn param_count(&self) -> usize {
        self.n_a + self.n_b.iter().sum::<usize>()
    }

    /// Deterministic response to the given input, zero initial conditions.
    pub fn simulate(&self, u: &[[f64; N_INPUTS]]) -> Vec<f64> {
        let n = u.len();
        let mut y = vec![0.0; n];
        for k in 0..n {
            let mut acc = 0.0;
            for i in 1..=self.n_a {
                if k >= i {
                    acc += self.a[i - 1] * y[k - i];
                }
            }
            for c in 0..N_INPUTS {
                for j in 0..self.n_b[c] {
                    let lag = self.n_k[c] + j;
                    if k >= lag {
                        acc += self.b[c][j] * u[k - lag][c];
                    }
                }
            }
            y[k] = acc;
        }
        y
    }

    /// Impulse response: `markov_params(count)[k][c]` is the output at
    /// sample `k` for a unit impulse on channel `c` at sample 0.
    pub fn markov_params(&self, count: usize) -> Vec<[f64; N_INPUTS]> {
        let mut out = vec![[0.0; N_INPUTS]; count];
        for c in 0..N_INPUTS {
            let mut u = vec![[0.0; N_INPUTS]; count];
            if count > 0 {
                u[0][c] = 1.0;
            }
            let y = self.simulate(&u);
            for (k, &v) in y.iter().enumerate() {
                out[k][c] = v;
            }
        }
        out
    }
}

/// Least-squares ARX fit over all records; regressors never cross record
/// boundaries.
pub fn arx_fit(
    data: &[Dataset],
    n_a: usize,
    n_b: [usize; N_INPUTS],
    n_k: [usize; N_INPUTS],
) -> Result<ArxModel> {
    let template = ArxModel {
        n_a,
        n_b,
        n_k,
        a: vec![0.0; n_a],
        b: [vec![0.0; n_b[0]], vec![0.0; n_b[1]]],
    };
    let n_params = template.param_count();
    if n_params == 0 {
        return Err(Error::InvalidArgument(String::from(
            "ARX model needs at least one coefficient",
        )));
    }
    let k_min = template.first_valid();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for d in data {
        let u = d.inputs();
        for k in k_min..d.len() {
            let mut row = Vec::with_capacity(n_params);
            for i in 1..=n_a {
                row.push(d.r[k - i]);
            }
            for c in 0..N_INPUTS {
                for j in 0..n_b[c] {
                    row.push(u[k - n_k[c] - j][c]);
                }
            }
            rows.push(row);
            targets.push(d.r[k]);
        }
    }
    if rows.len() <= n_params {
        return Err(Error::InvalidArgument(format!(
            "{} regression rows for {} parameters",
            rows.len(),
            n_params
        )));
    }

    let phi = DMatrix::from_fn(rows.len(), n_params, |i, j| rows[i][j]);
    let y = DVector::from_vec(targets);
    let svd = phi.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if !(s_min > s_max * 1e-12) {
        return Err(Error::IllConditioned { condition });
    }
    // Truncated solve: directions with near-degenerate singular values
    // (e.g. an almost constant speed channel) get no coefficient mass
    // instead of amplified noise.
    let theta = svd
        .solve(&y, s_max * 1e-8)
        .map_err(|_| Error::IllConditioned { condition })?;

    let mut model = template;
    let mut idx = 0;
    for i in 0..n_a {
        model.a[i] = theta[idx];
        idx += 1;
    }
    for c in 0..N_INPUTS {
        for j in 0..n_b[c] {
            model.b[c][j] = theta[idx];
            idx += 1;
        }
    }
    Ok(model)
}

/// Ho-Kalman realization from impulse-response coefficients.
///
/// The Hankel matrix of `g_1, g_2, ...` is factored by SVD; singular
/// values below `1e-10` times the largest reduce the realized order.
pub fn realize_ss(markov: &[[f64; N_INPUTS]], n_x: usize) -> Result<LinearSsModel> {
    if markov.len() < 2 * n_x + 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} Markov parameters for order {n_x}, got {}",
            2 * n_x + 2,
            markov.len()
        )));
    }
    let q = (markov.len() - 2) / 2;
    let q = q.max(n_x);
    let h0 = DMatrix::from_fn(q, q * N_INPUTS, |i, j| {
        markov[i + j / N_INPUTS + 1][j % N_INPUTS]
    });
    let h1 = DMatrix::from_fn(q, q * N_INPUTS, |i, j| {
        markov[i + j / N_INPUTS + 2][j % N_INPUTS]
    });

    let svd = h0.svd(true, true);
    let s_max = svd.singular_values.max();
    let mut rank = 0;
    for i in 0..svd.singular_values.len().min(n_x) {
        if svd.singular_values[i] > s_max * 1e-10 && svd.singular_values[i] > 1e-300 {
            rank += 1;
        }
    }
    if rank == 0 {
        return LinearSsModel::new(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, N_INPUTS),
            DMatrix::zeros(1, 0),
        );
    }

    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let ur = u.columns(0, rank).clone_owned();
    let vr_t = vt.rows(0, rank).clone_owned();
    let s_sqrt = DVector::from_fn(rank, |i, _| libm::sqrt(svd.singular_values[i]));
    let s_inv_sqrt = DVector::from_fn(rank, |i, _| 1.0 / s_sqrt[i]);

    // Observability Gamma = U S^(1/2), controllability Omega = S^(1/2) V^T.
    let mut gamma = ur.clone();
    for j in 0..rank {
        gamma.column_mut(j).scale_mut(s_sqrt[j]);
    }
    let mut omega = vr_t.clone();
    for i in 0..rank {
        omega.row_mut(i).scale_mut(s_sqrt[i]);
    }

    // A = S^(-1/2) U^T H1 V S^(-1/2).
    let mut a = &ur.transpose() * &h1 * vr_t.transpose();
    for i in 0..rank {
        for j in 0..rank {
            a[(i, j)] *= s_inv_sqrt[i] * s_inv_sqrt[j];
        }
    }
    let b = omega.columns(0, N_INPUTS).clone_owned();
    let c = gamma.rows(0, 1).clone_owned();
    LinearSsModel::new(a, b, c)
}

/// Free-run simulation `x+ = A x + B u, y = C x`.
pub fn simulate_lti(m: &LinearSsModel, u: &[[f64; N_INPUTS]], x0: &DVector<f64>) -> Result<Vec<f64>> {
    if x0.len() != m.n_x {
        return Err(Error::InvalidArgument(format!(
            "x0 has {} entries, model order is {}",
            x0.len(),
            m.n_x
        )));
    }
    let mut x = x0.clone();
    let mut y = Vec::with_capacity(u.len());
    for uk in u {
        y.push((&m.c * &x)[(0, 0)]);
        let u_vec = DVector::from_column_slice(&[uk[0], uk[1]]);
        x = &m.a * &x + &m.b * &u_vec;
    }
    Ok(y)
}

fn flatten_ss(m: &LinearSsModel, out: &mut Vec<f64>) {
    out.clear();
    out.extend(m.a.iter());
    out.extend(m.b.iter());
    out.extend(m.c.iter());
}

fn unflatten_ss(m: &mut LinearSsModel, flat: &[f64]) {
    let mut idx = 0;
    for v in m.a.iter_mut() {
        *v = flat[idx];
        idx += 1;
    }
    for v in m.b.iter_mut() {
        *v = flat[idx];
        idx += 1;
    }
    for v in m.c.iter_mut() {
        *v = flat[idx];
        idx += 1;
    }
}

/// Simulation loss and its gradient over one record, by adjoint recursion.
fn oe_loss_grad(
    m: &LinearSsModel,
    u: &[[f64; N_INPUTS]],
    y: &[f64],
    grad_a: &mut DMatrix<f64>,
    grad_b: &mut DMatrix<f64>,
    grad_c: &mut DMatrix<f64>,
) -> Result<f64> {
    let n = u.len();
    let n_x = m.n_x;
    let mut states = Vec::with_capacity(n);
    let mut x = DVector::zeros(n_x);
    let mut errors = Vec::with_capacity(n);
    let mut loss = 0.0;
    for k in 0..n {
        states.push(x.clone());
        let y_hat = (&m.c * &x)[(0, 0)];
        let e = y_hat - y[k];
        if !e.is_finite() {
            return Err(Error::SimulationFailure { index: k });
        }
        errors.push(e);
        loss += 0.5 * e * e;
        let u_vec = DVector::from_column_slice(&[u[k][0], u[k][1]]);
        x = &m.a * &x + &m.b * &u_vec;
    }

    // lambda_k = dL/dx_k, running backwards.
    let mut lambda = DVector::<f64>::zeros(n_x);
    for k in (0..n).rev() {
        if k + 1 < n {
            // x_{k+1} = A x_k + B u_k feeds lambda_{k+1} into A, B grads.
            for i in 0..n_x {
                for j in 0..n_x {
                    grad_a[(i, j)] += lambda[i] * states[k][j];
                }
                grad_b[(i, 0)] += lambda[i] * u[k][0];
                grad_b[(i, 1)] += lambda[i] * u[k][1];
            }
        }
        for j in 0..n_x {
            grad_c[(0, j)] += errors[k] * states[k][j];
        }
        lambda = m.a.transpose() * lambda + m.c.transpose() * errors[k];
    }
    Ok(loss)
}

fn mean_val_nrmse(m: &LinearSsModel, val: &[Dataset]) -> Result<f64> {
    let mut acc = 0.0;
    for d in val {
        let y_hat = simulate_lti(m, &d.inputs(), &DVector::zeros(m.n_x))?;
        if y_hat.iter().any(|v| !v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        acc += nrmse(&d.r, &y_hat, d.len() - 1)?;
    }
    Ok(acc / val.len() as f64)
}

/// Output-error refinement: Adam on the entries of (A, B, C), minimizing
/// the summed free-run squared error over all training records. Returns
/// the iterate with the best validation NRMSE (training records double as
/// validation when `val` is empty), so the result is never worse than the
/// initialization under that metric.
pub fn oe_refine(
    init: &LinearSsModel,
    train: &[Dataset],
    val: &[Dataset],
    epochs: usize,
    lr: f64,
) -> Result<LinearSsModel> {
    if train.is_empty() {
        return Err(Error::InvalidArgument(String::from("no training records")));
    }
    let val_set = if val.is_empty() { train } else { val };

    let mut model = init.clone();
    let mut best = model.clone();
    let mut best_score = mean_val_nrmse(&model, val_set).unwrap_or(f64::INFINITY);
    let n_params = model.n_x * model.n_x + model.n_x * N_INPUTS + model.n_x;
    let mut adam = Adam::new(n_params);
    let mut params = Vec::with_capacity(n_params);
    let mut grads = Vec::with_capacity(n_params);
    let mut last_loss = f64::INFINITY;

    let n_samples: usize = train.iter().map(|d| d.len()).sum();
    for _ in 0..epochs {
        let mut grad_a = DMatrix::zeros(model.n_x, model.n_x);
        let mut grad_b = DMatrix::zeros(model.n_x, N_INPUTS);
        let mut grad_c = DMatrix::zeros(1, model.n_x);
        let mut loss = 0.0;
        for d in train {
            loss += oe_loss_grad(&model, &d.inputs(), &d.r, &mut grad_a, &mut grad_b, &mut grad_c)
                .map_err(|_| Error::OptimizationFailure { last_loss })?;
        }
        loss /= n_samples as f64;
        if !loss.is_finite() {
            return Err(Error::OptimizationFailure { last_loss });
        }
        last_loss = loss;

        flatten_ss(&model, &mut params);
        grads.clear();
        grads.extend(grad_a.iter().map(|g| g / n_samples as f64));
        grads.extend(grad_b.iter().map(|g| g / n_samples as f64));
        grads.extend(grad_c.iter().map(|g| g / n_samples as f64));
        adam.step(&mut params, &grads, lr)?;
        unflatten_ss(&mut model, &params);

        if let Ok(score) = mean_val_nrmse(&model, val_set) {
            if score < best_score {
                best_score = score;
                best = model.clone();
            }
        }
    }
    Ok(best)
}

/// The full LTI pipeline: ARX fit, impulse-response extraction,
/// Ho-Kalman realization, and OE refinement.
pub fn fit_lti(
    train: &[Dataset],
    val: &[Dataset],
    n_a: usize,
    n_b: [usize; N_INPUTS],
    n_k: [usize; N_INPUTS],
    n_x: usize,
    epochs: usize,
    lr: f64,
) -> Result<LinearSsModel> {
    let arx = arx_fit(train, n_a, n_b, n_k)?;
    let markov = arx.markov_params((2 * n_x + 2).max(40));
    let init = realize_ss(&markov, n_x)?;
    oe_refine(&init, train, val, epochs, lr)
}
