//! Small dense feed-forward networks with analytic gradients and plain SGD.
//!
//! Every encoder, decoder and projection in the crate is an [`Mlp`]: a chain of
//! affine layers with a shared hidden activation and an identity output layer.
//! Weights are row-major with shape `(out_dim, in_dim)`. All arithmetic is f64.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

const NET_MAGIC: &[u8; 4] = b"MTNN";
const NET_VERSION: u32 = 1;

/// Hidden-layer activation. The output layer is always the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    ReLU,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::ReLU => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    /// For ReLU, `a > 0` iff `z > 0`, so the subgradient at 0 is 0.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::ReLU => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::ReLU),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// A multilayer perceptron with explicit parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hidden: Activation,
}

/// Gradients for every parameter of an [`Mlp`], plus the input gradient of
/// the most recent backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
    pub d_input: Vec<f64>,
}

/// Layer activations recorded during a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape always holds the input")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

impl Mlp {
    /// Glorot-uniform weights in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases. Deterministic in `seed`.
    pub fn init(seed: u64, dims: &[usize], hidden: Activation) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-s..=s))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
            hidden,
        })
    }

    /// Builds a net from explicit parameters, checking every shape.
    pub fn from_parts(
        dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        hidden: Activation,
    ) -> Result<Self> {
        validate_dims(&dims)?;
        let n = dims.len() - 1;
        if weights.len() != n || biases.len() != n {
            return Err(Error::invalid(format!(
                "expected {n} layers, got {} weight and {} bias blocks",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..n {
            if weights[l].len() != dims[l] * dims[l + 1] || biases[l].len() != dims[l + 1] {
                return Err(Error::invalid(format!("layer {l} parameter shape mismatch")));
            }
        }
        let net = Self {
            dims,
            weights,
            biases,
            hidden,
        };
        if !net.all_finite() {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn all_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has length {}, net expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(input)?.acts.pop().unwrap())
    }

    pub fn forward_tape(&self, input: &[f64]) -> Result<Tape> {
        self.check_input(input)?;
        let last = self.num_layers() - 1;
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(input.to_vec());
        for l in 0..=last {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let x = &acts[l];
            let w = &self.weights[l];
            let mut out = self.biases[l].clone();
            for (o, row) in out.iter_mut().zip(w.chunks_exact(n_in)) {
                *o += dot(row, x);
            }
            debug_assert_eq!(out.len(), n_out);
            if l != last {
                for o in &mut out {
                    *o = self.hidden.apply(*o);
                }
            }
            acts.push(out);
        }
        Ok(Tape { acts })
    }

    /// Pre-activation values of every hidden layer for `input`.
    pub fn hidden_preactivations(&self, input: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut out = Vec::new();
        for l in 0..self.num_layers() - 1 {
            let z: Vec<f64> = self.weights[l]
                .chunks_exact(self.dims[l])
                .zip(&self.biases[l])
                .map(|(row, b)| dot(row, &x) + b)
                .collect();
            x = z.iter().map(|&v| self.hidden.apply(v)).collect();
            out.push(z);
        }
        Ok(out)
    }

    /// Accumulates the parameter gradients of `upstream · output` into
    /// `grads` and returns the input gradient.
    pub fn backward_tape(
        &self,
        tape: &Tape,
        upstream: &[f64],
        grads: &mut GradBundle,
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::invalid(format!(
                "upstream gradient has length {}, net output is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if tape.acts.len() != self.dims.len() || tape.input().len() != self.input_dim() {
            return Err(Error::invalid("tape does not belong to this net"));
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            let n_in = self.dims[l];
            let a_in = &tape.acts[l];
            let dw = &mut grads.d_weights[l];
            for (row, &d) in dw.chunks_exact_mut(n_in).zip(&delta) {
                if d != 0.0 {
                    axpy(d, a_in, row);
                }
            }
            for (db, &d) in grads.d_biases[l].iter_mut().zip(&delta) {
                *db += d;
            }
            let mut d_in = vec![0.0; n_in];
            for (row, &d) in self.weights[l].chunks_exact(n_in).zip(&delta) {
                if d != 0.0 {
                    axpy(d, row, &mut d_in);
                }
            }
            if l > 0 {
                for (g, &a) in d_in.iter_mut().zip(a_in) {
                    *g *= self.hidden.derivative_from_output(a);
                }
            }
            delta = d_in;
        }
        Ok(delta)
    }

    /// Exact gradients of `upstream · forward(input)` with respect to every
    /// parameter and to the input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<GradBundle> {
        let tape = self.forward_tape(input)?;
        let mut grads = GradBundle::zeros_like(self);
        grads.d_input = self.backward_tape(&tape, upstream, &mut grads)?;
        Ok(grads)
    }

    /// `p <- p - learning_rate * grad(p)` for every parameter.
    pub fn sgd_step(&mut self, grads: &GradBundle, learning_rate: f64) -> Result<()> {
        if !grads.matches(self) {
            return Err(Error::invalid("gradient shapes do not match the net"));
        }
        if !grads.params_finite() {
            return Err(Error::Numeric("non-finite gradient in sgd step".into()));
        }
        for (w, dw) in self.weights.iter_mut().zip(&grads.d_weights) {
            axpy(-learning_rate, dw, w);
        }
        for (b, db) in self.biases.iter_mut().zip(&grads.d_biases) {
            axpy(-learning_rate, db, b);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        self.write_into(&mut w);
        w.buf
    }

    pub(crate) fn write_into(&self, w: &mut Writer) {
        w.bytes(NET_MAGIC);
        w.u32(NET_VERSION);
        w.u32(self.hidden.code());
        w.u32(self.dims.len() as u32);
        for &d in &self.dims {
            w.u32(d as u32);
        }
        for (wl, bl) in self.weights.iter().zip(&self.biases) {
            w.f64s(wl);
            w.f64s(bl);
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let net = Self::read_from(&mut r)?;
        r.expect_end()?;
        Ok(net)
    }

    pub(crate) fn read_from(r: &mut Reader<'_>) -> Result<Self> {
        r.expect_magic(NET_MAGIC)?;
        let version = r.u32()?;
        if version != NET_VERSION {
            return Err(r.fail(format!("unsupported net format version {version}")));
        }
        let act_code = r.u32()?;
        let hidden = Activation::from_code(act_code)
            .ok_or_else(|| r.fail(format!("unknown activation code {act_code}")))?;
        let n_dims = r.u32()? as usize;
        if n_dims < 2 {
            return Err(r.fail(format!("net needs at least 2 dims, header says {n_dims}")));
        }
        let dims = (0..n_dims)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims.contains(&0) {
            return Err(r.fail("zero layer dimension"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            weights.push(r.f64s(pair[0] * pair[1])?);
            biases.push(r.f64s(pair[1])?);
        }
        Self::from_parts(dims, weights, biases, hidden)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl GradBundle {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            d_weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            d_input: vec![0.0; net.input_dim()],
        }
    }

    pub fn matches(&self, net: &Mlp) -> bool {
        self.d_weights.len() == net.weights.len()
            && self.d_biases.len() == net.biases.len()
            && self
                .d_weights
                .iter()
                .zip(&net.weights)
                .all(|(a, b)| a.len() == b.len())
            && self
                .d_biases
                .iter()
                .zip(&net.biases)
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn params_finite(&self) -> bool {
        self.d_weights
            .iter()
            .chain(self.d_biases.iter())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.d_weights.iter_mut().chain(self.d_biases.iter_mut()) {
            for x in v {
                *x *= c;
            }
        }
    }

    pub fn zero(&mut self) {
        for v in self
            .d_weights
            .iter_mut()
            .chain(self.d_biases.iter_mut())
            .chain(std::iter::once(&mut self.d_input))
        {
            v.fill(0.0);
        }
    }
}

/// Max relative error between analytic and central-difference gradients of
/// `u · forward(input)` over every parameter and input entry, for a fixed
/// non-symmetric probe vector `u`.
pub fn finite_diff_check(net: &Mlp, input: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let upstream: Vec<f64> = (0..net.output_dim())
        .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 } / (j + 1) as f64)
        .collect();
    let analytic = net.backward(input, &upstream)?;
    let objective = |n: &Mlp, x: &[f64]| -> Result<f64> { Ok(dot(&n.forward(x)?, &upstream)) };
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-8);

    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for l in 0..net.num_layers() {
        for i in 0..net.weights[l].len() {
            let orig = net.weights[l][i];
            probe.weights[l][i] = orig + eps;
            let plus = objective(&probe, input)?;
            probe.weights[l][i] = orig - eps;
            let minus = objective(&probe, input)?;
            probe.weights[l][i] = orig;
            worst = worst.max(rel(analytic.d_weights[l][i], (plus - minus) / (2.0 * eps)));
        }
        for i in 0..net.biases[l].len() {
            let orig = net.biases[l][i];
            probe.biases[l][i] = orig + eps;
            let plus = objective(&probe, input)?;
            probe.biases[l][i] = orig - eps;
            let minus = objective(&probe, input)?;
            probe.biases[l][i] = orig;
            worst = worst.max(rel(analytic.d_biases[l][i], (plus - minus) / (2.0 * eps)));
        }
    }
    let mut x = input.to_vec();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = objective(net, &x)?;
        x[i] = orig - eps;
        let minus = objective(net, &x)?;
        x[i] = orig;
        worst = worst.max(rel(analytic.d_input[i], (plus - minus) / (2.0 * eps)));
    }
    Ok(worst)
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid(format!(
            "layer_dims needs at least 2 entries, got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::invalid(format!("layer_dims must be positive: {dims:?}")));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Deterministic sub-seed for component `tag` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shuffled mini-batch index lists covering `0..n`.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
