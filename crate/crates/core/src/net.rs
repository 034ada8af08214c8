//! A small dense ReLU network with hand-written gradients.
//!
//! The training objective differentiates through a *tempered* softmax (an
//! inverse temperature `beta` sharpens the likelihoods toward hard votes),
//! so [`backward`] takes the loss gradient with respect to the softmax
//! output and pulls it back through the temperature, the max-shifted
//! exponentials, and the affine/ReLU stack in one pass. Optimization state
//! is explicit: [`sgd_step`] applies classic momentum
//! (`v <- m v + g; theta <- theta - lr v`).
//!
//! Checkpoints are a flat binary layout: the magic bytes `SMNET1`, a u32
//! little-endian count of layer dims, the dims themselves as u32 LE, then
//! each layer's weights (row-major, f64 LE) followed by its bias.

use crate::statmath::RngStream;
use crate::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 6] = b"SMNET1";

/// Fully connected feed-forward net: ReLU on hidden layers, raw logits out.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallNet {
    layer_dims: Vec<usize>,
    layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq)]
struct DenseLayer {
    /// `out_dim x in_dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.out_dim {
            let row = &self.weights[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.bias[r];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::invalid(
            "layer_dims",
            "needs at least input and output dims",
        ));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("layer_dims", "zero-width layer"));
    }
    if *layer_dims.last().unwrap() < 2 {
        return Err(Error::invalid(
            "layer_dims",
            "output layer needs at least two classes",
        ));
    }
    Ok(())
}

impl SmallNet {
    /// All-zero parameters (mostly useful in tests).
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| DenseLayer::zeros(w[0], w[1]))
            .collect();
        Ok(SmallNet {
            layer_dims: layer_dims.to_vec(),
            layers,
        })
    }

    /// He-style fan-in init: weights uniform on `+-sqrt(6 / fan_in)`,
    /// biases zero. Deterministic in `rng`.
    pub fn he_init(layer_dims: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut net = SmallNet::zeros(layer_dims)?;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let limit = (6.0 / layer.in_dim as f64).sqrt();
            let mut stream = rng.substream(l as u64);
            for w in layer.weights.iter_mut() {
                *w = limit * (2.0 * stream.next_f64() - 1.0);
            }
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flat parameter access (weights then bias, layer by layer); used by
    /// the finite-difference tests and nothing else on the hot path.
    pub fn param(&self, mut i: usize) -> f64 {
        for l in &self.layers {
            if i < l.weights.len() {
                return l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut i: usize, v: f64) {
        for l in &mut self.layers {
            if i < l.weights.len() {
                l.weights[i] = v;
                return;
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                l.bias[i] = v;
                return;
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Logits for one input. ReLU after every layer but the last.
    pub fn forward_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if l != last {
                for v in next.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass keeping every post-activation (input first, logits
    /// last); the backward pass consumes this.
    fn forward_trace(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.apply(acts.last().unwrap(), &mut out);
            if l != last {
                for v in out.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Pre-ReLU values of every hidden layer, outermost first. Gradient
    /// checks use this to reject finite-difference points sitting near a
    /// ReLU kink; it is not part of the supported API surface.
    #[doc(hidden)]
    pub fn hidden_preactivations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut pres = Vec::new();
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.apply(&cur, &mut out);
            if l != last {
                pres.push(out.clone());
                for v in out.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            cur = out;
        }
        Ok(pres)
    }

    /// Reverse-mode gradient of `sum_c dloss_dprobs[c] * probs_c(x)` with
    /// `probs = softmax_temp(logits, beta)`, with respect to every
    /// parameter. The softmax Jacobian contributes
    /// `beta * z_j * (g_j - <g, z>)` at the logits.
    pub fn backward(&self, x: &[f64], dloss_dprobs: &[f64], beta: f64) -> Result<GradientSet> {
        if dloss_dprobs.len() != self.num_classes() {
            return Err(Error::DimensionMismatch {
                what: "dloss_dprobs",
                expected: self.num_classes(),
                got: dloss_dprobs.len(),
            });
        }
        let acts = self.forward_trace(x)?;
        let logits = acts.last().unwrap();
        let z = softmax_temp(logits, beta)?;
        let z = z.values();
        let inner: f64 = dloss_dprobs.iter().zip(z).map(|(g, p)| g * p).sum();
        let mut delta: Vec<f64> = z
            .iter()
            .zip(dloss_dprobs)
            .map(|(p, g)| beta * p * (g - inner))
            .collect();

        let mut grads = GradientSet::zeros_like(self);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts[l];
            let g = &mut grads.layers[l];
            for r in 0..layer.out_dim {
                let d = delta[r];
                g.bias[r] += d;
                let row = &mut g.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (gw, v) in row.iter_mut().zip(input) {
                    *gw += d * v;
                }
            }
            if l > 0 {
                // propagate through W^T, then mask by the ReLU that produced
                // acts[l] (post-activation > 0 iff the unit was live)
                let mut prev = vec![0.0; layer.in_dim];
                for r in 0..layer.out_dim {
                    let d = delta[r];
                    let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                for (p, a) in prev.iter_mut().zip(&acts[l]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    // -- checkpoint i/o -----------------------------------------------------

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.layer_dims.len() as u32).to_le_bytes());
        for &d in &self.layer_dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for l in &self.layers {
            for w in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |context: &str| Error::format("checkpoint", context);
        if bytes.len() < 6 || &bytes[..6] != CHECKPOINT_MAGIC {
            return Err(err("bad magic, expected SMNET1"));
        }
        let mut off = 6usize;
        let read_u32 = |off: &mut usize| -> Result<u32> {
            let end = *off + 4;
            if end > bytes.len() {
                return Err(err("truncated header"));
            }
            let v = u32::from_le_bytes(bytes[*off..end].try_into().unwrap());
            *off = end;
            Ok(v)
        };
        let ndims = read_u32(&mut off)? as usize;
        if !(2..=64).contains(&ndims) {
            return Err(err("implausible layer count"));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(read_u32(&mut off)? as usize);
        }
        check_dims(&dims).map_err(|_| err("invalid layer dims"))?;

        let mut net = SmallNet::zeros(&dims)?;
        let expected = off + 8 * net.param_count();
        if bytes.len() != expected {
            return Err(err(&format!(
                "parameter payload is {} bytes, expected {}",
                bytes.len() - off,
                expected - off
            )));
        }
        for l in &mut net.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                if !w.is_finite() {
                    return Err(err("non-finite parameter"));
                }
                off += 8;
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        SmallNet::from_bytes(&bytes)
    }
}

/// A point on the probability simplex, as produced by [`softmax_temp`] or by
/// averaging several of them.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodVector(Vec<f64>);

impl LikelihoodVector {
    /// Validates non-negativity and a total within 1e-9 of one.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("likelihoods", "needs at least two classes"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "likelihoods",
                "entries must be finite and non-negative",
            ));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "likelihoods",
                format!("entries sum to {total}, not 1"),
            ));
        }
        Ok(LikelihoodVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, c: usize) -> f64 {
        self.0[c]
    }

    /// Index of the largest entry, lowest index winning ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Lowest-index argmax, the tie-break used everywhere in this crate.
pub fn argmax(values: &[f64]) -> usize {
    assert!(!values.is_empty());
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax with inverse temperature `beta >= 0`:
/// `z_c = exp(beta u_c) / sum exp(beta u)`, computed max-shifted.
/// `beta = 0` is the uniform distribution; large `beta` approaches the hard
/// argmax vote.
pub fn softmax_temp(logits: &[f64], beta: f64) -> Result<LikelihoodVector> {
    if logits.len() < 2 {
        return Err(Error::invalid("logits", "needs at least two classes"));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(Error::invalid("beta", format!("{beta} not in [0, inf)")));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::invalid("logits", "non-finite logit"));
    }
    let mut exps: Vec<f64> = logits.iter().map(|u| (beta * (u - m)).exp()).collect();
    let total: f64 = exps.iter().sum();
    for e in exps.iter_mut() {
        *e /= total;
    }
    LikelihoodVector::new(exps)
}

/// Hard class decision from logits (lowest index wins ties).
pub fn hard_predict(logits: &[f64]) -> usize {
    argmax(logits)
}

/// Per-parameter gradients (or momentum state), same shapes as the net.
#[derive(Debug, Clone)]
pub struct GradientSet {
    layers: Vec<GradLayer>,
}

#[derive(Debug, Clone)]
struct GradLayer {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(net: &SmallNet) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| GradLayer {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in self.layers.iter_mut() {
            l.weights.iter_mut().for_each(|v| *v *= s);
            l.bias.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Flattened view in the same order as [`SmallNet::param`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// One SGD step with classic momentum: `v <- momentum v + g`,
/// `theta <- theta - lr v`. `state` holds `v` and is updated in place.
pub fn sgd_step(
    net: &mut SmallNet,
    grads: &GradientSet,
    lr: f64,
    momentum: f64,
    state: &mut GradientSet,
) -> Result<()> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::invalid("lr", format!("{lr} not in [0, inf)")));
    }
    if !momentum.is_finite() || !(0.0..1.0).contains(&momentum) {
        return Err(Error::invalid("momentum", format!("{momentum} not in [0, 1)")));
    }
    if grads.layers.len() != net.layers.len() || state.layers.len() != net.layers.len() {
        return Err(Error::DimensionMismatch {
            what: "gradients",
            expected: net.layers.len(),
            got: grads.layers.len(),
        });
    }
    for ((layer, g), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.layers.iter_mut())
    {
        for ((w, gw), vw) in layer
            .weights
            .iter_mut()
            .zip(&g.weights)
            .zip(v.weights.iter_mut())
        {
            *vw = momentum * *vw + gw;
            *w -= lr * *vw;
        }
        for ((b, gb), vb) in layer.bias.iter_mut().zip(&g.bias).zip(v.bias.iter_mut()) {
            *vb = momentum * *vb + gb;
            *b -= lr * *vb;
        }
    }
    Ok(())
}
