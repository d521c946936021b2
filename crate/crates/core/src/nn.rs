//! Minimal neural-network engine: an MLP with tanh hidden layers, identity
//! output and a linear bypass from input to output, exact reverse-mode
//! gradients, and the Adam optimizer.
//!
//! The forward map is `net(x) + bypass * x` where `net` is the dense layer
//! stack. Parameters are initialized from `U(-1/sqrt(fan_in), +1/sqrt(fan_in))`
//! per layer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Multilayer perceptron with linear bypass.
///
/// `weights[i]` maps the input of layer `i` to its pre-activation; all layers
/// but the last are followed by `tanh`, the last is identity. `bypass` is
/// `n_out x n_in` and added to the stack output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub bypass: DMatrix<f64>,
}

/// Parameter-shaped gradient set for an [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrad {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub bypass: DMatrix<f64>,
}

/// Forward-pass record needed by [`Mlp::backward`]: the input of every layer.
#[derive(Debug, Clone)]
pub struct Trace {
    acts: Vec<DVector<f64>>,
}

impl Mlp {
    /// Random initialization: every weight, bias and bypass entry is drawn
    /// from `U(-1/sqrt(fan_in), +1/sqrt(fan_in))` of its layer. Identical
    /// seeds give identical parameters.
    pub fn init(n_in: usize, n_out: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        check_dims(n_in, n_out, hidden)?;
        let mut rng = Rng::new(seed);
        let mut dims = vec![n_in];
        dims.extend_from_slice(hidden);
        dims.push(n_out);

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
                rng.uniform(-bound, bound)
            }));
            biases.push(DVector::from_fn(fan_out, |_, _| rng.uniform(-bound, bound)));
        }
        let bound = 1.0 / libm::sqrt(n_in as f64);
        let bypass = DMatrix::from_fn(n_out, n_in, |_, _| rng.uniform(-bound, bound));
        Ok(Mlp { weights, biases, bypass })
    }

    /// All-zero network of the given shape.
    pub fn zeroed(n_in: usize, n_out: usize, hidden: &[usize]) -> Result<Self> {
        check_dims(n_in, n_out, hidden)?;
        let mut dims = vec![n_in];
        dims.extend_from_slice(hidden);
        dims.push(n_out);
        let weights = dims
            .windows(2)
            .map(|w| DMatrix::zeros(w[1], w[0]))
            .collect();
        let biases = dims[1..].iter().map(|&d| DVector::zeros(d)).collect();
        Ok(Mlp { weights, biases, bypass: DMatrix::zeros(n_out, n_in) })
    }

    pub fn n_in(&self) -> usize {
        self.bypass.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.bypass.nrows()
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward_trace(x)?.0)
    }

    /// Forward pass that also records per-layer inputs for [`Self::backward`].
    pub fn forward_trace(&self, x: &DVector<f64>) -> Result<(DVector<f64>, Trace)> {
        if x.len() != self.n_in() {
            return Err(Error::InvalidArgument(format!(
                "input dimension {} does not match network input {}",
                x.len(),
                self.n_in()
            )));
        }
        let mut acts = Vec::with_capacity(self.weights.len());
        let mut a = x.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            acts.push(a.clone());
            let mut z = w * &a + b;
            if i < last {
                z.apply(|v| *v = libm::tanh(*v));
            }
            a = z;
        }
        let out = a + &self.bypass * x;
        Ok((out, Trace { acts }))
    }

    /// Reverse-mode gradients of `adjoint . output` with respect to every
    /// parameter, plus the adjoint of the input.
    pub fn backward(&self, trace: &Trace, adjoint: &DVector<f64>) -> Result<(MlpGrad, DVector<f64>)> {
        if adjoint.len() != self.n_out() {
            return Err(Error::InvalidArgument(format!(
                "adjoint dimension {} does not match network output {}",
                adjoint.len(),
                self.n_out()
            )));
        }
        let x = &trace.acts[0];
        let mut grad = MlpGrad::zeros_like(self);

        grad.bypass += adjoint * x.transpose();
        let mut input_adj = self.bypass.transpose() * adjoint;

        // Last layer is identity; hidden layers carry tanh'(z) = 1 - a^2
        // where a is the stored input of the following layer.
        let mut delta = adjoint.clone();
        for i in (0..self.weights.len()).rev() {
            if i < self.weights.len() - 1 {
                let a_next = &trace.acts[i + 1];
                for (d, a) in delta.iter_mut().zip(a_next.iter()) {
                    *d *= 1.0 - a * a;
                }
            }
            grad.weights[i] += &delta * trace.acts[i].transpose();
            grad.biases[i] += &delta;
            delta = self.weights[i].transpose() * delta;
        }
        input_adj += delta;
        Ok((grad, input_adj))
    }

    /// Number of scalar parameters (weights, biases, bypass).
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
            + self.bypass.len()
    }

    /// Flatten parameters in canonical order: per layer the row-major weight
    /// matrix then the bias, finally the row-major bypass.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            push_row_major(w, out);
            out.extend(b.iter());
        }
        push_row_major(&self.bypass, out);
    }

    /// Inverse of [`Self::flatten_into`]; returns the number of values read.
    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<usize> {
        if flat.len() < self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "parameter vector too short: {} < {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            pos += read_row_major(w, &flat[pos..]);
            for v in b.iter_mut() {
                *v = flat[pos];
                pos += 1;
            }
        }
        pos += read_row_major(&mut self.bypass, &flat[pos..]);
        Ok(pos)
    }

    /// Binary serialization: shapes as little-endian `u32`, values as
    /// little-endian `f64` bits in canonical flat order. Round-trips
    /// bit-exactly.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend((self.weights.len() as u32).to_le_bytes());
        for w in &self.weights {
            out.extend((w.nrows() as u32).to_le_bytes());
            out.extend((w.ncols() as u32).to_le_bytes());
        }
        out.extend((self.bypass.nrows() as u32).to_le_bytes());
        out.extend((self.bypass.ncols() as u32).to_le_bytes());
        let mut flat = Vec::with_capacity(self.param_count());
        self.flatten_into(&mut flat);
        for v in flat {
            out.extend(v.to_bits().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let n_layers = read_u32(bytes, &mut pos)? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::InvalidArgument(format!("bad layer count {n_layers}")));
        }
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let r = read_u32(bytes, &mut pos)? as usize;
            let c = read_u32(bytes, &mut pos)? as usize;
            shapes.push((r, c));
        }
        let br = read_u32(bytes, &mut pos)? as usize;
        let bc = read_u32(bytes, &mut pos)? as usize;

        let hidden: Vec<usize> = shapes[..n_layers - 1].iter().map(|&(r, _)| r).collect();
        let mut mlp = Mlp::zeroed(bc, br, &hidden)?;
        let count = mlp.param_count();
        if bytes.len() - pos != count * 8 {
            return Err(Error::InvalidArgument(format!(
                "payload size {} does not match {} parameters",
                bytes.len() - pos,
                count
            )));
        }
        let mut flat = Vec::with_capacity(count);
        for _ in 0..count {
            let mut raw = [0u8; 8];
            raw.copy_from_slice(&bytes[pos..pos + 8]);
            flat.push(f64::from_bits(u64::from_le_bytes(raw)));
            pos += 8;
        }
        mlp.unflatten_from(&flat)?;
        Ok(mlp)
    }
}

impl MlpGrad {
    pub fn zeros_like(m: &Mlp) -> Self {
        MlpGrad {
            weights: m
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            biases: m.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            bypass: DMatrix::zeros(m.bypass.nrows(), m.bypass.ncols()),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
        self.bypass += &other.bypass;
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
        for b in &mut self.biases {
            *b *= s;
        }
        self.bypass *= s;
    }

    /// Same canonical flat order as [`Mlp::flatten_into`].
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            push_row_major(w, out);
            out.extend(b.iter());
        }
        push_row_major(&self.bypass, out);
    }
}

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "shape mismatch: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / c1;
            let v_hat = self.second_moment[i] / c2;
            params[i] -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }
}

fn check_dims(n_in: usize, n_out: usize, hidden: &[usize]) -> Result<()> {
    if n_in == 0 || n_out == 0 || hidden.iter().any(|&h| h == 0) {
        return Err(Error::InvalidArgument(format!(
            "non-positive network dimension (n_in {n_in}, n_out {n_out}, hidden {hidden:?})"
        )));
    }
    Ok(())
}

fn push_row_major(m: &DMatrix<f64>, out: &mut Vec<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

fn read_row_major(m: &mut DMatrix<f64>, flat: &[f64]) -> usize {
    let mut pos = 0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] = flat[pos];
            pos += 1;
        }
    }
    pos
}

fn read_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    if *pos + 4 > bytes.len() {
        return Err(Error::InvalidArgument("truncated parameter document".into()));
    }
    let mut raw = [0u8; 4];
    raw.copy_from_slice(&bytes[*pos..*pos + 4]);
    *pos += 4;
    Ok(u32::from_le_bytes(raw))
}
