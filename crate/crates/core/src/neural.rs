//! Small fully connected networks with hand-written backpropagation.
//!
//! Both the parameter gradient and the gradient with respect to the input are
//! produced by one reverse sweep. The actor needs the former; the deterministic
//! policy gradient needs the critic's input gradient along the control
//! coordinates as well.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Weights (row-major, `fan_out × fan_in`) and biases of one affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        LayerParams {
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
    output_scale: f64,
    layers: Vec<LayerParams>,
}

/// Parameter gradients with the shape of an [`Mlp`], plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord {
    pub params: Vec<LayerParams>,
    pub input_grad: Vec<f64>,
}

impl GradientRecord {
    pub fn zeros_like(net: &Mlp) -> Self {
        GradientRecord {
            params: net
                .layer_dims
                .windows(2)
                .map(|d| LayerParams::zeros(d[0], d[1]))
                .collect(),
            input_grad: vec![0.0; net.input_dim()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.values_mut() {
            *v *= s;
        }
        for v in &mut self.input_grad {
            *v *= s;
        }
    }

    pub fn param_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite()) && self.input_grad.iter().all(|v| v.is_finite())
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.params
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.params
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }
}

/// Activations saved by a forward pass for the reverse sweep.
struct ForwardTrace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Mlp {
    /// Weights `~ U(±1/√fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(
        layer_dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        output_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|d| {
                let bound = 1.0 / (d[0] as f64).sqrt();
                LayerParams {
                    weights: (0..d[0] * d[1])
                        .map(|_| rng.random_range(-bound..bound))
                        .collect(),
                    biases: vec![0.0; d[1]],
                }
            })
            .collect();
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            hidden_activation,
            output_activation,
            output_scale,
            layers,
        })
    }

    pub fn from_params(
        layer_dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        output_scale: f64,
        layers: Vec<LayerParams>,
    ) -> Result<Self> {
        validate_dims(layer_dims)?;
        check_dim("layer count", layer_dims.len() - 1, layers.len())?;
        for (d, l) in layer_dims.windows(2).zip(&layers) {
            check_dim("layer weights", d[0] * d[1], l.weights.len())?;
            check_dim("layer biases", d[1], l.biases.len())?;
        }
        Ok(Mlp {
            layer_dims: layer_dims.to_vec(),
            hidden_activation,
            output_activation,
            output_scale,
            layers,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    fn trace(&self, input: &[f64]) -> ForwardTrace {
        let n = self.layers.len();
        let mut pre = Vec::with_capacity(n);
        let mut post = Vec::with_capacity(n + 1);
        post.push(input.to_vec());
        for (idx, layer) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (self.layer_dims[idx], self.layer_dims[idx + 1]);
            let x = &post[idx];
            let act = self.activation_for(idx);
            let mut z = layer.biases.clone();
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &layer.weights[j * fan_in..(j + 1) * fan_in];
                *zj += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
            }
            let a: Vec<f64> = z.iter().map(|&zj| act.apply(zj)).collect();
            debug_assert_eq!(a.len(), fan_out);
            pre.push(z);
            post.push(a);
        }
        ForwardTrace { pre, post }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut out = self.trace(input).post.pop().unwrap();
        for v in &mut out {
            *v *= self.output_scale;
        }
        Ok(out)
    }

    /// Gradients of `upstreamᵀ · forward(input)` by reverse accumulation.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<GradientRecord> {
        let mut grads = GradientRecord::zeros_like(self);
        grads.input_grad = self.backward_accumulate(input, upstream, &mut grads.params, 1.0)?;
        Ok(grads)
    }

    /// Adds `weight ·` the parameter gradient of `upstreamᵀ · forward(input)`
    /// into `acc` and returns the (unweighted) input gradient.
    pub fn backward_accumulate(
        &self,
        input: &[f64],
        upstream: &[f64],
        acc: &mut [LayerParams],
        weight: f64,
    ) -> Result<Vec<f64>> {
        check_dim("gradient layers", self.layers.len(), acc.len())?;
        self.reverse(input, upstream, Some((acc, weight)))
    }

    /// Gradient of `upstreamᵀ · forward(input)` with respect to the input only.
    pub fn input_gradient(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        self.reverse(input, upstream, None)
    }

    fn reverse(
        &self,
        input: &[f64],
        upstream: &[f64],
        mut acc: Option<(&mut [LayerParams], f64)>,
    ) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), input.len())?;
        check_dim("upstream gradient", self.output_dim(), upstream.len())?;
        let tr = self.trace(input);
        // gradient w.r.t. the last activation output
        let mut delta: Vec<f64> = upstream.iter().map(|g| g * self.output_scale).collect();
        for idx in (0..self.layers.len()).rev() {
            let fan_in = self.layer_dims[idx];
            let act = self.activation_for(idx);
            let z = &tr.pre[idx];
            let a = &tr.post[idx + 1];
            for (j, d) in delta.iter_mut().enumerate() {
                *d *= act.derivative(z[j], a[j]);
            }
            let x = &tr.post[idx];
            let layer = &self.layers[idx];
            let mut prev = vec![0.0; fan_in];
            for (j, &dj) in delta.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                let row = &layer.weights[j * fan_in..(j + 1) * fan_in];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += dj * w;
                }
                if let Some((acc, weight)) = acc.as_mut() {
                    let g = &mut acc[idx];
                    let scaled = *weight * dj;
                    g.biases[j] += scaled;
                    let grow = &mut g.weights[j * fan_in..(j + 1) * fan_in];
                    for (gw, xi) in grow.iter_mut().zip(x) {
                        *gw += scaled * xi;
                    }
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Polyak averaging `self ← (1-τ) self + τ other`.
    pub fn soft_update_from(&mut self, other: &Mlp, tau: f64) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in mine
                .weights
                .iter_mut()
                .chain(mine.biases.iter_mut())
                .zip(theirs.weights.iter().chain(&theirs.biases))
            {
                *a = (1.0 - tau) * *a + tau * b;
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            layer_dims: self.layer_dims.clone(),
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
            output_scale: self.output_scale,
            layers: self
                .layers
                .iter()
                .zip(self.layer_dims.windows(2))
                .map(|(l, d)| CheckpointLayer {
                    weights: l.weights.chunks(d[0]).map(<[f64]>::to_vec).collect(),
                    biases: l.biases.clone(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                ck.format_version
            )));
        }
        validate_dims(&ck.layer_dims).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut layers = Vec::with_capacity(ck.layers.len());
        for (l, d) in ck.layers.iter().zip(ck.layer_dims.windows(2)) {
            if l.weights.len() != d[1] || l.weights.iter().any(|r| r.len() != d[0]) {
                return Err(Error::Checkpoint("weight shape disagrees with layer_dims".into()));
            }
            layers.push(LayerParams {
                weights: l.weights.concat(),
                biases: l.biases.clone(),
            });
        }
        Mlp::from_params(
            &ck.layer_dims,
            ck.hidden_activation,
            ck.output_activation,
            ck.output_scale,
            layers,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Mlp::from_checkpoint(&ck)
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(Error::Config(format!(
            "invalid layer dimensions {layer_dims:?}"
        )));
    }
    Ok(())
}

/// On-disk network description. Weight rows are listed per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub output_scale: f64,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointLayer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

/// Adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
    step_count: u64,
    first_moment: Vec<LayerParams>,
    second_moment: Vec<LayerParams>,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        let zeros = GradientRecord::zeros_like(net).params;
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One descent step on `net` along `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &[LayerParams]) {
        let norm = grads
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let clip = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, g), m), v) in net
            .layers
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            let params = p.weights.iter_mut().chain(p.biases.iter_mut());
            let gs = g.weights.iter().chain(&g.biases);
            let ms = m.weights.iter_mut().chain(m.biases.iter_mut());
            let vs = v.weights.iter_mut().chain(v.biases.iter_mut());
            for (((theta, &gi), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
                let gi = gi * clip;
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn zero_net(dims: &[usize], out: Activation) -> Mlp {
        let layers = dims
            .windows(2)
            .map(|d| LayerParams::zeros(d[0], d[1]))
            .collect();
        Mlp::from_params(dims, Activation::Relu, out, 5.0, layers).unwrap()
    }

    /// Straight-line re-evaluation of a network, independent of `trace`.
    fn reference_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let n = net.layers().len();
        for (k, layer) in net.layers().iter().enumerate() {
            let fan_in = x.len();
            let fan_out = layer.biases.len();
            let mut y = vec![0.0; fan_out];
            for j in 0..fan_out {
                let mut s = layer.biases[j];
                for i in 0..fan_in {
                    s += layer.weights[j * fan_in + i] * x[i];
                }
                let act = if k + 1 == n { net.output_activation() } else { net.hidden_activation() };
                y[j] = match act {
                    Activation::Identity => s,
                    Activation::Relu => if s > 0.0 { s } else { 0.0 },
                    Activation::Tanh => s.tanh(),
                };
            }
            x = y;
        }
        x.iter().map(|v| v * net.output_scale()).collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = zero_net(&[9, 64, 1], Activation::Tanh);
        assert_eq!(net.forward(&[3.0; 9]).unwrap(), vec![0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layers = vec![LayerParams {
            weights: vec![1.0, 0.0, 0.0, 1.0],
            biases: vec![0.0, 0.0],
        }];
        let net = Mlp::from_params(&[2, 2], Activation::Relu, Activation::Identity, 1.0, layers)
            .unwrap();
        assert_eq!(net.forward(&[-1.5, 2.25]).unwrap(), vec![-1.5, 2.25]);
    }

    #[test]
    fn forward_matches_reference() {
        let mut r = rng(3);
        for (hidden, out) in [
            (Activation::Relu, Activation::Identity),
            (Activation::Tanh, Activation::Tanh),
        ] {
            let net = Mlp::init(&[4, 8, 2], hidden, out, 1.7, &mut r).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
                let a = net.forward(&x).unwrap();
                let b = reference_forward(&net, &x);
                for (p, q) in a.iter().zip(&b) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let net = zero_net(&[3, 2], Activation::Identity);
        assert!(net.forward(&[1.0, 2.0]).is_err());
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let net = Mlp::init(&[4, 8, 2], Activation::Tanh, Activation::Identity, 1.0, &mut rng(4))
            .unwrap();
        let g = net.backward(&[0.1, 0.2, 0.3, 0.4], &[0.0, 0.0]).unwrap();
        assert!(g.values().all(|v| *v == 0.0));
        assert!(g.input_grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = Mlp::init(&[9, 64, 1], Activation::Relu, Activation::Tanh, 5.0, &mut rng(9)).unwrap();
        let b = Mlp::init(&[9, 64, 1], Activation::Relu, Activation::Tanh, 5.0, &mut rng(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.layers().iter().all(|l| l.biases.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn init_weight_spread() {
        // U(-c, c) has standard deviation c/√3
        let net = Mlp::init(&[64, 160], Activation::Relu, Activation::Identity, 1.0, &mut rng(5))
            .unwrap();
        let w = &net.layers()[0].weights;
        assert!(w.len() >= 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let expected = 1.0 / (3f64.sqrt() * 8.0);
        assert!((sd - expected).abs() / expected < 0.05);
        assert!(w.iter().all(|v| v.abs() <= 1.0 / 8.0));
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut net =
            Mlp::init(&[3, 4, 1], Activation::Relu, Activation::Identity, 1.0, &mut rng(1)).unwrap();
        let before = net.clone();
        let mut opt = Adam::new(&net, 1e-3);
        let zeros = GradientRecord::zeros_like(&net).params;
        opt.step(&mut net, &zeros);
        assert_eq!(net, before);
        assert_eq!(opt.step_count(), 1);
    }

    fn scalar_param_net(theta: &[f64]) -> Mlp {
        let layers = vec![LayerParams {
            weights: theta.to_vec(),
            biases: vec![0.0],
        }];
        Mlp::from_params(&[theta.len(), 1], Activation::Relu, Activation::Identity, 1.0, layers)
            .unwrap()
    }

    #[test]
    fn adam_descends_scalar_quadratic() {
        let mut net = scalar_param_net(&[1.0]);
        let mut opt = Adam::new(&net, 1e-3);
        // f(θ) = θ²/2 => ∇f = θ
        let mut g = GradientRecord::zeros_like(&net).params;
        g[0].weights[0] = 1.0;
        opt.step(&mut net, &g);
        assert!(net.layers()[0].weights[0] < 1.0);
    }

    #[test]
    fn adam_converges_on_convex_quadratic() {
        // f(θ) = ½ (θ - c)ᵀ D (θ - c), minimizer c
        let c = [1.5, -0.75];
        let d = [2.0, 0.5];
        let mut net = scalar_param_net(&[0.0, 0.0]);
        let mut opt = Adam::new(&net, 1e-3);
        let mut g = GradientRecord::zeros_like(&net).params;
        for _ in 0..10_000 {
            let th = net.layers()[0].weights.clone();
            for i in 0..2 {
                g[0].weights[i] = d[i] * (th[i] - c[i]);
            }
            opt.step(&mut net, &g);
        }
        let th = &net.layers()[0].weights;
        let dist = ((th[0] - c[0]).powi(2) + (th[1] - c[1]).powi(2)).sqrt();
        assert!(dist < 1e-3, "distance {dist}");
    }

    #[test]
    fn clipping_bounds_update_direction() {
        let mut net = scalar_param_net(&[0.0, 0.0]);
        let mut opt = Adam::new(&net, 1e-3);
        opt.clip_norm = Some(1.0);
        let mut g = GradientRecord::zeros_like(&net).params;
        g[0].weights = vec![300.0, 400.0];
        opt.step(&mut net, &g);
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= 1.0001e-3));
    }

    #[test]
    fn checkpoint_rejects_bad_version_and_shape() {
        let net = Mlp::init(&[3, 4, 1], Activation::Relu, Activation::Tanh, 5.0, &mut rng(2)).unwrap();
        let mut ck = net.to_checkpoint();
        ck.format_version = 99;
        assert!(matches!(Mlp::from_checkpoint(&ck), Err(Error::Checkpoint(_))));
        let mut ck = net.to_checkpoint();
        ck.layers[0].weights[0].pop();
        assert!(Mlp::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn soft_update_mixes() {
        let mut a = scalar_param_net(&[0.0]);
        let b = scalar_param_net(&[1.0]);
        a.soft_update_from(&b, 0.25);
        assert_eq!(a.layers()[0].weights[0], 0.25);
    }
}
