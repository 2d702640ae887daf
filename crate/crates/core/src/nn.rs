//! Minimal dense-network training machinery.
//!
//! Layers work on row-major mini-batches (`batch x features`) and keep the
//! activations they need for the backward pass. Parameters carry their own
//! gradient and Adam moment buffers. The element type is generic so training
//! can run in `f32` while gradient checks run in `f64`.

use crate::linalg::Matrix;
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;

/// Floating-point element usable by the layers in this module.
pub trait Real: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n`
    /// matrices, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `C = op(A) op(B) + beta C` on row-major buffers. `op(A)` is `m x k`; when
/// `a_t` is set, `a` holds the `k x m` matrix. Likewise for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; `c` is a distinct &mut borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let n = value.len();
        Self {
            value,
            grad: vec![T::zero(); n],
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Uniform Kaiming initialization with bound `gain * sqrt(3 / fan_in)`.
pub fn kaiming_uniform<T: Real, R: Rng + ?Sized>(
    out_dim: usize,
    in_dim: usize,
    gain: f64,
    rng: &mut R,
) -> Vec<T> {
    let bound = gain * (3.0 / in_dim as f64).sqrt();
    (0..out_dim * in_dim)
        .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
        .collect()
}

/// Gain for layers feeding a rectifier; gives the familiar `sqrt(6 / fan_in)` bound.
pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;
/// Gain for layers with no nonlinearity after them.
pub const LINEAR_GAIN: f64 = 1.0;

/// `out x in` matrix with entries uniform on `[-sqrt(6/in), sqrt(6/in)]`.
pub fn kaiming_uniform_init(out_dim: usize, in_dim: usize, seed: u64) -> Matrix {
    assert!(out_dim >= 1 && in_dim >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(out_dim, in_dim, kaiming_uniform(out_dim, in_dim, RELU_GAIN, &mut rng))
}

/// Parameter initialization for dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights and biases uniform on `±1/sqrt(fan_in)`: Kaiming uniform with
    /// negative slope `sqrt(5)`, the stock linear-layer default of common
    /// deep-learning frameworks.
    #[default]
    FanIn,
    /// Weights uniform with the gain of the following activation
    /// (`sqrt(6 / fan_in)` before a ReLU), biases zero.
    Kaiming,
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss<T: Real>(pred: &[T], target: &[T]) -> (T, Vec<T>) {
    assert_eq!(pred.len(), target.len(), "prediction/target length mismatch");
    assert!(!pred.is_empty());
    let n = T::from_f64(pred.len() as f64);
    let two = T::from_f64(2.0);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss = loss + d * d;
            two * d / n
        })
        .collect();
    (loss / n, grad)
}

/// Fully connected layer `y = x W^T (+ b)`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    input: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(weight: Vec<T>, out_dim: usize, in_dim: usize, bias: Option<Vec<T>>) -> Self {
        assert_eq!(weight.len(), out_dim * in_dim);
        if let Some(b) = &bias {
            assert_eq!(b.len(), out_dim);
        }
        Self {
            in_dim,
            out_dim,
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            input: Vec::new(),
        }
    }

    pub fn kaiming<R: Rng + ?Sized>(
        out_dim: usize,
        in_dim: usize,
        gain: f64,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = kaiming_uniform(out_dim, in_dim, gain, rng);
        let b = with_bias.then(|| vec![T::zero(); out_dim]);
        Self::new(w, out_dim, in_dim, b)
    }

    /// Layer initialized with `scheme`; `relu_follows` selects the gain under
    /// [`InitScheme::Kaiming`].
    pub fn initialized<R: Rng + ?Sized>(
        out_dim: usize,
        in_dim: usize,
        with_bias: bool,
        scheme: InitScheme,
        relu_follows: bool,
        rng: &mut R,
    ) -> Self {
        match scheme {
            InitScheme::Kaiming => {
                let gain = if relu_follows { RELU_GAIN } else { LINEAR_GAIN };
                Self::kaiming(out_dim, in_dim, gain, with_bias, rng)
            }
            InitScheme::FanIn => {
                let bound = 1.0 / (in_dim as f64).sqrt();
                let w = kaiming_uniform(out_dim, in_dim, (1.0f64 / 3.0).sqrt(), rng);
                let b = with_bias.then(|| {
                    (0..out_dim)
                        .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
                        .collect()
                });
                Self::new(w, out_dim, in_dim, b)
            }
        }
    }

    pub fn forward(&mut self, x: &[T], batch: usize) -> Vec<T> {
        let y = self.apply(x, batch);
        self.input.clear();
        self.input.extend_from_slice(x);
        y
    }

    /// Forward pass without caching anything for backward.
    pub fn apply(&self, x: &[T], batch: usize) -> Vec<T> {
        assert_eq!(x.len(), batch * self.in_dim, "dense input shape");
        let mut y = vec![T::zero(); batch * self.out_dim];
        gemm(batch, self.in_dim, self.out_dim, x, false, &self.weight.value, true, T::zero(), &mut y);
        if let Some(b) = &self.bias {
            for row in y.chunks_exact_mut(self.out_dim) {
                for (yi, &bi) in row.iter_mut().zip(&b.value) {
                    *yi = *yi + bi;
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &[T], batch: usize) -> Vec<T> {
        assert_eq!(dy.len(), batch * self.out_dim, "dense output-gradient shape");
        assert_eq!(self.input.len(), batch * self.in_dim, "backward before forward");
        gemm(self.out_dim, batch, self.in_dim, dy, true, &self.input, false, T::one(), &mut self.weight.grad);
        if let Some(b) = &mut self.bias {
            for row in dy.chunks_exact(self.out_dim) {
                for (g, &d) in b.grad.iter_mut().zip(row) {
                    *g = *g + d;
                }
            }
        }
        let mut dx = vec![T::zero(); batch * self.in_dim];
        gemm(batch, self.out_dim, self.in_dim, dy, false, &self.weight.value, false, T::zero(), &mut dx);
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
        out
    }

    pub fn weight_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.out_dim,
            self.in_dim,
            self.weight.value.iter().map(|v| Real::to_f64(*v)).collect(),
        )
    }
}

/// Batch normalization over the feature axis with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub features: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    trained_batch: bool,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(features: usize) -> Self {
        Self {
            features,
            gamma: Param::new(vec![T::one(); features]),
            beta: Param::new(vec![T::zero(); features]),
            running_mean: vec![T::zero(); features],
            running_var: vec![T::one(); features],
            momentum: 0.1,
            eps: 1e-5,
            xhat: Vec::new(),
            inv_std: Vec::new(),
            trained_batch: false,
        }
    }

    pub fn forward(&mut self, x: &[T], batch: usize, train: bool) -> Vec<T> {
        let f = self.features;
        assert_eq!(x.len(), batch * f, "batch-norm input shape");
        let eps = T::from_f64(self.eps);
        let (mean, var) = if train {
            let nb = T::from_f64(batch as f64);
            let mut mean = vec![T::zero(); f];
            for row in x.chunks_exact(f) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m = *m + v;
                }
            }
            mean.iter_mut().for_each(|m| *m = *m / nb);
            let mut var = vec![T::zero(); f];
            for row in x.chunks_exact(f) {
                for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                    *s = *s + (v - m) * (v - m);
                }
            }
            let unbiased = if batch > 1 {
                T::from_f64(batch as f64 / (batch - 1) as f64)
            } else {
                T::one()
            };
            var.iter_mut().for_each(|s| *s = *s / nb);
            let mom = T::from_f64(self.momentum);
            for i in 0..f {
                self.running_mean[i] = (T::one() - mom) * self.running_mean[i] + mom * mean[i];
                self.running_var[i] = (T::one() - mom) * self.running_var[i] + mom * var[i] * unbiased;
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        self.inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.trained_batch = train;
        self.xhat.clear();
        self.xhat.reserve(x.len());
        for row in x.chunks_exact(f) {
            for i in 0..f {
                self.xhat.push((row[i] - mean[i]) * self.inv_std[i]);
            }
        }
        let mut y = self.xhat.clone();
        for row in y.chunks_exact_mut(f) {
            for i in 0..f {
                row[i] = row[i] * self.gamma.value[i] + self.beta.value[i];
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &[T], batch: usize) -> Vec<T> {
        let f = self.features;
        assert_eq!(dy.len(), batch * f);
        let mut sum_dxhat = vec![T::zero(); f];
        let mut sum_dxhat_xhat = vec![T::zero(); f];
        for (drow, xrow) in dy.chunks_exact(f).zip(self.xhat.chunks_exact(f)) {
            for i in 0..f {
                self.gamma.grad[i] = self.gamma.grad[i] + drow[i] * xrow[i];
                self.beta.grad[i] = self.beta.grad[i] + drow[i];
                let dxh = drow[i] * self.gamma.value[i];
                sum_dxhat[i] = sum_dxhat[i] + dxh;
                sum_dxhat_xhat[i] = sum_dxhat_xhat[i] + dxh * xrow[i];
            }
        }
        let mut dx = vec![T::zero(); batch * f];
        if self.trained_batch {
            let nb = T::from_f64(batch as f64);
            for ((dxrow, drow), xrow) in dx
                .chunks_exact_mut(f)
                .zip(dy.chunks_exact(f))
                .zip(self.xhat.chunks_exact(f))
            {
                for i in 0..f {
                    let dxh = drow[i] * self.gamma.value[i];
                    dxrow[i] = self.inv_std[i] / nb
                        * (nb * dxh - sum_dxhat[i] - xrow[i] * sum_dxhat_xhat[i]);
                }
            }
        } else {
            for (dxrow, drow) in dx.chunks_exact_mut(f).zip(dy.chunks_exact(f)) {
                for i in 0..f {
                    dxrow[i] = drow[i] * self.gamma.value[i] * self.inv_std[i];
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

fn relu_in_place<T: Real>(x: &mut [T], mask: &mut Vec<bool>) {
    mask.clear();
    mask.extend(x.iter().map(|&v| v > T::zero()));
    for (v, &keep) in x.iter_mut().zip(mask.iter()) {
        if !keep {
            *v = T::zero();
        }
    }
}

fn relu_backward<T: Real>(dy: &mut [T], mask: &[bool]) {
    for (d, &keep) in dy.iter_mut().zip(mask) {
        if !keep {
            *d = T::zero();
        }
    }
}

/// Head architecture: hidden widths plus an optional batch-norm after each
/// hidden linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    #[serde(default)]
    pub init: InitScheme,
}

#[derive(Debug, Clone)]
struct HiddenBlock<T> {
    linear: Dense<T>,
    norm: Option<BatchNorm<T>>,
    mask: Vec<bool>,
}

/// Scalar regressor: `[Linear -> (BatchNorm) -> ReLU]* -> Linear(1)`.
#[derive(Debug, Clone)]
pub struct MlpHead<T> {
    pub in_dim: usize,
    hidden: Vec<HiddenBlock<T>>,
    output: Dense<T>,
}

impl<T: Real> MlpHead<T> {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, spec: &HeadSpec, rng: &mut R) -> Self {
        let mut hidden = Vec::with_capacity(spec.hidden.len());
        let mut prev = in_dim;
        for &width in &spec.hidden {
            hidden.push(HiddenBlock {
                linear: Dense::initialized(width, prev, true, spec.init, true, rng),
                norm: spec.batch_norm.then(|| BatchNorm::new(width)),
                mask: Vec::new(),
            });
            prev = width;
        }
        Self {
            in_dim,
            hidden,
            output: Dense::initialized(1, prev, true, spec.init, false, rng),
        }
    }

    /// Builds a head from explicit layers; the last layer must have one output.
    pub fn from_layers(mut layers: Vec<Dense<T>>, batch_norm: bool) -> Result<Self, NnError> {
        let output = layers
            .pop()
            .ok_or_else(|| NnError::ShapeMismatch("head needs at least one layer".into()))?;
        if output.out_dim != 1 {
            return Err(NnError::ShapeMismatch(format!(
                "head output dimension must be 1, got {}",
                output.out_dim
            )));
        }
        let in_dim = layers.first().map_or(output.in_dim, |l| l.in_dim);
        let mut prev = in_dim;
        let mut hidden = Vec::with_capacity(layers.len());
        for linear in layers {
            if linear.in_dim != prev {
                return Err(NnError::ShapeMismatch("consecutive layer widths differ".into()));
            }
            prev = linear.out_dim;
            hidden.push(HiddenBlock {
                norm: batch_norm.then(|| BatchNorm::new(linear.out_dim)),
                linear,
                mask: Vec::new(),
            });
        }
        if output.in_dim != prev {
            return Err(NnError::ShapeMismatch("output layer width differs".into()));
        }
        Ok(Self {
            in_dim,
            hidden,
            output,
        })
    }

    /// Predictions for a batch. In training mode batch-norm uses batch
    /// statistics and updates its running averages.
    pub fn forward(&mut self, x: &[T], batch: usize, train: bool) -> Vec<T> {
        let mut h = x.to_vec();
        for block in &mut self.hidden {
            h = block.linear.forward(&h, batch);
            if let Some(bn) = &mut block.norm {
                h = bn.forward(&h, batch, train);
            }
            relu_in_place(&mut h, &mut block.mask);
        }
        self.output.forward(&h, batch)
    }

    /// Evaluation-mode prediction without caching.
    pub fn predict(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut h = x.to_vec();
        for block in &self.hidden {
            h = block.linear.apply(&h, batch);
            if let Some(bn) = &block.norm {
                let eps = T::from_f64(bn.eps);
                for row in h.chunks_exact_mut(bn.features) {
                    for i in 0..bn.features {
                        let inv = T::one() / (bn.running_var[i] + eps).sqrt();
                        row[i] = (row[i] - bn.running_mean[i]) * inv * bn.gamma.value[i]
                            + bn.beta.value[i];
                    }
                }
            }
            h.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        self.output.apply(&h, batch)
    }

    /// Backpropagates `d loss / d prediction`; returns the input gradient.
    pub fn backward(&mut self, dpred: &[T], batch: usize) -> Vec<T> {
        let mut d = self.output.backward(dpred, batch);
        for block in self.hidden.iter_mut().rev() {
            relu_backward(&mut d, &block.mask);
            if let Some(bn) = &mut block.norm {
                d = bn.backward(&d, batch);
            }
            d = block.linear.backward(&d, batch);
        }
        d
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for block in &mut self.hidden {
            out.extend(block.linear.params_mut());
            if let Some(bn) = &mut block.norm {
                out.extend(bn.params_mut());
            }
        }
        out.extend(self.output.params_mut());
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}

/// Forward + backward of a head on one batch under MSE loss. Parameter
/// gradients are accumulated into the head; the input gradient is returned so
/// layers below the head receive the signal.
pub fn mlp_forward_backward<T: Real>(
    head: &mut MlpHead<T>,
    input: &[T],
    target: &[T],
    train: bool,
) -> Result<(T, Vec<T>), NnError> {
    let batch = target.len();
    if batch == 0 || input.len() != batch * head.in_dim {
        return Err(NnError::ShapeMismatch(format!(
            "input of length {} does not match batch {} x dim {}",
            input.len(),
            batch,
            head.in_dim
        )));
    }
    let pred = head.forward(input, batch, train);
    let (loss, dpred) = mse_loss(&pred, target);
    let dx = head.backward(&dpred, batch);
    Ok((loss, dx))
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers live in each [`Param`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter using its accumulated gradient.
    pub fn step<'a, T: Real>(&mut self, params: impl IntoIterator<Item = &'a mut Param<T>>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one, lr, eps) = (T::one(), T::from_f64(c.lr), T::from_f64(c.eps));
        let (inv_bc1, inv_bc2) = (T::from_f64(1.0 / bc1), T::from_f64(1.0 / bc2));
        for p in params {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = b1 * p.m[i] + (one - b1) * g;
                p.v[i] = b2 * p.v[i] + (one - b2) * g * g;
                let m_hat = p.m[i] * inv_bc1;
                let v_hat = p.v[i] * inv_bc2;
                p.value[i] = p.value[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
