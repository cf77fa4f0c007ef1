//! Per-item relevance scorer: a fully connected ReLU network whose layer
//! widths halve from the input width down to a scalar output, trained with
//! hand-written backpropagation and Adam.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

const CHECKPOINT_MAGIC: &[u8; 4] = b"FLTR";
const CHECKPOINT_VERSION: u32 = 1;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Affine map `z = W h + b` with `W` of shape `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Matrix::zeros(fan_out, fan_in),
            bias: vec![T::zero(); fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    fn values(&self) -> impl Iterator<Item = &T> {
        self.weights.as_slice().iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.as_mut_slice().iter_mut().chain(self.bias.iter_mut())
    }
}

/// Layer widths for input width `k`: `k, k/2, k/4, …` while the width stays
/// above one, then `1`.
pub fn layer_sizes(k: usize) -> Vec<usize> {
    let mut sizes = vec![k];
    let mut h = k / 2;
    while h > 1 {
        sizes.push(h);
        h /= 2;
    }
    sizes.push(1);
    sizes
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    layers: Vec<Layer<T>>,
    version: u64,
}

/// Gradient with the same shape as [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, other: &Self, s: T) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, &y) in a.values_mut().zip(b.values()) {
                *x += s * y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.values_mut().for_each(|x| *x *= s);
        }
    }
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct Tape<T> {
    version: u64,
    /// Input to each layer, `n × fan_in`.
    inputs: Vec<Matrix<T>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Matrix<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Dimension {
                    expected: pair[0].fan_out(),
                    got: pair[1].fan_in(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::Dimension {
                    expected: l.fan_out(),
                    got: l.bias.len(),
                });
            }
        }
        let last = layers.last().expect("non-empty").fan_out();
        if last != 1 {
            return Err(Error::Dimension { expected: 1, got: last });
        }
        Ok(Self {
            layers,
            version: next_version(),
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.fan_out()));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    /// Overwrites all parameters from a flat vector in [`flatten`](Self::flatten) order.
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for x in l.values_mut() {
                *x = *it.next().expect("length checked");
            }
        }
        self.version = next_version();
        Ok(())
    }

    /// Changes whenever the parameters are modified; tapes record it.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.cast(),
                    bias: l.bias.iter().map(|b| U::of(b.as_f64())).collect(),
                })
                .collect(),
            version: next_version(),
        }
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_network<T: Scalar>(k: usize, seed: u64) -> Result<ModelParams<T>> {
    if k == 0 {
        return Err(Error::InvalidArgument("feature width must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = layer_sizes(k);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut layer = Layer::zeros(fan_in, fan_out);
            for x in layer.weights.as_mut_slice() {
                *x = T::of(rng.random_range(-limit..limit));
            }
            layer
        })
        .collect();
    ModelParams::from_layers(layers)
}

fn affine<T: Scalar>(input: &Matrix<T>, layer: &Layer<T>) -> Matrix<T> {
    let n = input.rows();
    let mut out = Matrix::zeros(n, layer.fan_out());
    for r in 0..n {
        let h = input.row(r);
        for o in 0..layer.fan_out() {
            out[(r, o)] = crate::linalg::dot(layer.weights.row(o), h) + layer.bias[o];
        }
    }
    out
}

/// Scores every row of `features` independently.
pub fn forward<T: Scalar>(params: &ModelParams<T>, features: &Matrix<T>) -> Result<(Vec<T>, Tape<T>)> {
    if features.cols() != params.input_dim() {
        return Err(Error::Dimension {
            expected: params.input_dim(),
            got: features.cols(),
        });
    }
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre = Vec::with_capacity(last);
    let mut h = features.clone();
    for (idx, layer) in params.layers.iter().enumerate() {
        let z = affine(&h, layer);
        inputs.push(h);
        if idx == last {
            let scores = z.into_vec();
            return Ok((
                scores,
                Tape {
                    version: params.version,
                    inputs,
                    pre,
                },
            ));
        }
        h = z.map(|x| x.max(T::zero()));
        pre.push(z);
    }
    unreachable!("network has at least one layer")
}

/// Scores without keeping a tape.
pub fn predict<T: Scalar>(params: &ModelParams<T>, features: &Matrix<T>) -> Result<Vec<T>> {
    forward(params, features).map(|(s, _)| s)
}

/// Gradient of `upstreamᵀ ŷ` with respect to the parameters.
pub fn backward<T: Scalar>(params: &ModelParams<T>, tape: &Tape<T>, upstream: &[T]) -> Result<Gradients<T>> {
    if tape.version != params.version {
        return Err(Error::StaleTape {
            tape: tape.version,
            params: params.version,
        });
    }
    let n = tape.inputs[0].rows();
    if upstream.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: upstream.len(),
        });
    }
    let mut grads = Gradients::zeros_like(params);
    let mut delta = Matrix::from_vec(n, 1, upstream.to_vec());
    for idx in (0..params.layers.len()).rev() {
        let layer = &params.layers[idx];
        let input = &tape.inputs[idx];
        let g = &mut grads.layers[idx];
        for r in 0..n {
            let h = input.row(r);
            for o in 0..layer.fan_out() {
                let d = delta[(r, o)];
                if d == T::zero() {
                    continue;
                }
                g.bias[o] += d;
                for (gw, &hi) in g.weights.row_mut(o).iter_mut().zip(h) {
                    *gw += d * hi;
                }
            }
        }
        if idx == 0 {
            break;
        }
        let z = &tape.pre[idx - 1];
        let mut next = Matrix::zeros(n, layer.fan_in());
        for r in 0..n {
            for o in 0..layer.fan_out() {
                let d = delta[(r, o)];
                if d == T::zero() {
                    continue;
                }
                for (i, &wi) in layer.weights.row(o).iter().enumerate() {
                    next[(r, i)] += d * wi;
                }
            }
            for i in 0..layer.fan_in() {
                if z[(r, i)] <= T::zero() {
                    next[(r, i)] = T::zero();
                }
            }
        }
        delta = next;
    }
    Ok(grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>, lr: T) -> Self {
        let p = params.num_params();
        Self {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            m: vec![T::zero(); p],
            v: vec![T::zero(); p],
        }
    }
}

/// One bias-corrected Adam descent step.
pub fn adam_step<T: Scalar>(params: &mut ModelParams<T>, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
    let g = grads.flatten();
    if g.len() != state.m.len() || g.len() != params.num_params() {
        return Err(Error::Dimension {
            expected: params.num_params(),
            got: g.len(),
        });
    }
    if let Some(k) = g.iter().position(|x| !x.is_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient at parameter {k}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = T::one() - state.beta1.powi(t);
    let c2 = T::one() - state.beta2.powi(t);
    let mut flat = params.flatten();
    for (k, x) in flat.iter_mut().enumerate() {
        state.m[k] = state.beta1 * state.m[k] + (T::one() - state.beta1) * g[k];
        state.v[k] = state.beta2 * state.v[k] + (T::one() - state.beta2) * g[k] * g[k];
        let m_hat = state.m[k] / c1;
        let v_hat = state.v[k] / c2;
        *x -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence("non-finite parameter after update".into()));
    }
    params.set_flat(&flat)
}

/// Writes a checkpoint: magic, format version, layer count, layer widths,
/// then each layer's weights (row-major) and bias as little-endian `f64`.
pub fn save_checkpoint<T: Scalar, W: Write>(params: &ModelParams<T>, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(params.layers.len() as u32).to_le_bytes())?;
    for s in params.sizes() {
        out.write_all(&(s as u64).to_le_bytes())?;
    }
    for x in params.flatten() {
        out.write_all(&x.as_f64().to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar, R: Read>(mut input: R) -> Result<ModelParams<T>> {
    let mut buf4 = [0u8; 4];
    let mut buf8 = [0u8; 8];
    input.read_exact(&mut buf4)?;
    if &buf4 != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    input.read_exact(&mut buf4)?;
    let version = u32::from_le_bytes(buf4);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    input.read_exact(&mut buf4)?;
    let count = u32::from_le_bytes(buf4) as usize;
    if count == 0 || count > 64 {
        return Err(Error::Checkpoint(format!("implausible layer count {count}")));
    }
    let mut sizes = Vec::with_capacity(count + 1);
    for _ in 0..=count {
        input.read_exact(&mut buf8)?;
        let s = u64::from_le_bytes(buf8);
        if s == 0 || s > 1 << 20 {
            return Err(Error::Checkpoint(format!("implausible layer width {s}")));
        }
        sizes.push(s as usize);
    }
    let mut layers = Vec::with_capacity(count);
    for w in sizes.windows(2) {
        let mut layer = Layer::zeros(w[0], w[1]);
        for x in layer.values_mut() {
            input.read_exact(&mut buf8)?;
            *x = T::of(f64::from_le_bytes(buf8));
        }
        layers.push(layer);
    }
    ModelParams::from_layers(layers).map_err(|e| Error::Checkpoint(e.to_string()))
}
