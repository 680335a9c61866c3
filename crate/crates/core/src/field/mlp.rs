use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Field, FieldKind};
use crate::error::invalid;
use crate::math::{cos, sin, sqrt, tanh, PI};
use crate::rng::normal_vec;
use crate::Result;

/// Fully connected layer, `y = W x + b` with `W` row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// `Wᵀ g`
    fn transpose_apply(&self, g: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.inputs];
        for (row, gi) in self.weights.chunks_exact(self.inputs).zip(g) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        out
    }
}

/// Multilayer perceptron with `tanh` hidden activations and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs recorded during a forward pass; `acts[0]` is the network
/// input and `acts[l]` the (activated) input of layer `l`.
pub(crate) struct Trace {
    acts: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Mlp {
    /// Random network with layer widths `[in, h_1, …, out]`; weights drawn
    /// from `N(0, 1/fan_in)`, biases zero.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        Self::validate_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| {
                let scale = 1.0 / sqrt(w[0] as f64);
                Dense {
                    inputs: w[0],
                    outputs: w[1],
                    weights: normal_vec(rng, w[0] * w[1])
                        .into_iter()
                        .map(|v| v * scale)
                        .collect(),
                    bias: alloc::vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        Self::validate_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                inputs: w[0],
                outputs: w[1],
                weights: alloc::vec![0.0; w[0] * w[1]],
                bias: alloc::vec![0.0; w[1]],
            })
            .collect();
        Ok(Self { layers })
    }

    fn validate_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(invalid("an MLP needs at least two positive layer widths"));
        }
        Ok(())
    }

    /// Checks that consecutive layers have matching shapes.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(invalid("MLP has no layers"));
        }
        for l in &self.layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(invalid("layer parameter shape mismatch"));
            }
        }
        if self.layers.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return Err(invalid("consecutive layer widths disagree"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters in a fixed order: per layer, weights then biases.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i != last {
                h.iter_mut().for_each(|v| *v = tanh(*v));
            }
        }
        h
    }

    pub(crate) fn trace(&self, input: &[f64]) -> Trace {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut h = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(&h);
            if i != last {
                z.iter_mut().for_each(|v| *v = tanh(*v));
            }
            acts.push(core::mem::replace(&mut h, z));
        }
        Trace { acts, output: h }
    }

    /// Reverse pass: returns `[∂out/∂in]ᵀ g` and, when `param_grad` is given,
    /// accumulates the parameter gradient of `⟨out, g⟩` into it (same order as
    /// [`Mlp::params_mut`]).
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        g: &[f64],
        mut param_grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.weights.len() + l.bias.len();
        }
        let mut g = g.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if i != last {
                // `acts[i + 1]` holds tanh(z_i)
                for (gj, a) in g.iter_mut().zip(&trace.acts[i + 1]) {
                    *gj *= 1.0 - a * a;
                }
            }
            if let Some(pg) = param_grad.as_deref_mut() {
                let base = offsets[i];
                let input = &trace.acts[i];
                for (r, gr) in g.iter().enumerate() {
                    let row = &mut pg[base + r * layer.inputs..base + (r + 1) * layer.inputs];
                    for (w, x) in row.iter_mut().zip(input) {
                        *w += gr * x;
                    }
                }
                let bbase = base + layer.weights.len();
                for (b, gr) in pg[bbase..bbase + layer.outputs].iter_mut().zip(&g) {
                    *b += gr;
                }
            }
            g = layer.transpose_apply(&g);
        }
        g
    }

    pub(crate) fn trace_output(trace: &Trace) -> &[f64] {
        &trace.output
    }

    /// `[∂out/∂in]ᵀ g`
    pub fn input_vjp(&self, input: &[f64], g: &[f64]) -> Vec<f64> {
        let trace = self.trace(input);
        self.backward(&trace, g, None)
    }
}

/// Sinusoidal features `sin(ω_k t), cos(ω_k t)` with `ω_k = π (k + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub frequencies: usize,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self { frequencies: 8 }
    }
}

impl TimeEmbedding {
    pub fn width(&self) -> usize {
        2 * self.frequencies
    }

    pub fn append(&self, t: f64, out: &mut Vec<f64>) {
        for k in 0..self.frequencies {
            let w = PI * (k + 1) as f64;
            out.push(sin(w * t));
            out.push(cos(w * t));
        }
    }
}

/// Learned ε- or velocity-network on `R^d`; the input is `x` followed by the
/// time embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMlpField")]
pub struct MlpField {
    kind: FieldKind,
    dim: usize,
    embedding: TimeEmbedding,
    net: Mlp,
}

#[derive(Deserialize)]
struct RawMlpField {
    kind: FieldKind,
    dim: usize,
    embedding: TimeEmbedding,
    net: Mlp,
}

impl TryFrom<RawMlpField> for MlpField {
    type Error = crate::Error;

    fn try_from(r: RawMlpField) -> Result<Self> {
        Self::new(r.kind, r.dim, r.embedding, r.net)
    }
}

impl MlpField {
    pub fn new(kind: FieldKind, dim: usize, embedding: TimeEmbedding, net: Mlp) -> Result<Self> {
        net.validate()?;
        if net.input_dim() != dim + embedding.width() || net.output_dim() != dim {
            return Err(invalid("network shape does not match the field dimension"));
        }
        Ok(Self {
            kind,
            dim,
            embedding,
            net,
        })
    }

    /// Randomly initialized field with the given hidden widths.
    pub fn random<R: Rng + ?Sized>(
        kind: FieldKind,
        dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let embedding = TimeEmbedding::default();
        let widths = Self::widths(dim, embedding, hidden);
        Self::new(kind, dim, embedding, Mlp::random(&widths, rng)?)
    }

    pub fn zeros(kind: FieldKind, dim: usize, hidden: &[usize]) -> Result<Self> {
        let embedding = TimeEmbedding::default();
        let widths = Self::widths(dim, embedding, hidden);
        Self::new(kind, dim, embedding, Mlp::zeros(&widths)?)
    }

    fn widths(dim: usize, embedding: TimeEmbedding, hidden: &[usize]) -> Vec<usize> {
        let mut w = alloc::vec![dim + embedding.width()];
        w.extend_from_slice(hidden);
        w.push(dim);
        w
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub(crate) fn input(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim + self.embedding.width());
        v.extend_from_slice(x);
        self.embedding.append(t, &mut v);
        v
    }
}

impl Field for MlpField {
    fn kind(&self) -> FieldKind {
        self.kind
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.net.forward(&self.input(x, t))
    }

    fn vjp(&self, x: &[f64], t: f64, y: &[f64]) -> Vec<f64> {
        let mut g = self.net.input_vjp(&self.input(x, t), y);
        g.truncate(self.dim);
        g
    }
}

/// Small MLP classifier producing `classes` logits for points of `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawClassifier")]
pub struct ToyClassifier {
    classes: usize,
    net: Mlp,
}

#[derive(Deserialize)]
struct RawClassifier {
    classes: usize,
    net: Mlp,
}

impl TryFrom<RawClassifier> for ToyClassifier {
    type Error = crate::Error;

    fn try_from(r: RawClassifier) -> Result<Self> {
        let c = Self::new(r.net)?;
        if c.classes != r.classes {
            return Err(invalid("class count disagrees with the network output"));
        }
        Ok(c)
    }
}

impl ToyClassifier {
    pub fn new(net: Mlp) -> Result<Self> {
        net.validate()?;
        Ok(Self {
            classes: net.output_dim(),
            net,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.net.forward(x)
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.logits(x);
        (0..l.len()).fold(0, |best, i| if l[i] > l[best] { i } else { best })
    }

    /// Gradient of logit `class` with respect to the input.
    pub fn logit_grad(&self, x: &[f64], class: usize) -> Vec<f64> {
        let mut e = alloc::vec![0.0; self.classes];
        e[class] = 1.0;
        self.net.input_vjp(x, &e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::dot;
    use crate::rng::seeded;
    use alloc::vec;

    #[test]
    fn zero_network_is_zero() {
        let f = MlpField::zeros(FieldKind::DiffusionEps, 3, &[16, 16]).unwrap();
        assert_eq!(f.eval(&[1.0, -2.0, 0.5], 0.3), vec![0.0; 3]);
        assert_eq!(
            f.vjp(&[1.0, -2.0, 0.5], 0.3, &[1.0, 1.0, 1.0]),
            vec![0.0; 3]
        );
    }

    #[test]
    fn vjp_matches_central_differences() {
        let mut rng = seeded(21);
        for d in [1usize, 2, 5, 8] {
            let f = MlpField::random(FieldKind::FlowVelocity, d, &[24, 24], &mut rng).unwrap();
            let x = normal_vec(&mut rng, d);
            let y = normal_vec(&mut rng, d);
            let t = 0.37;
            let got = f.vjp(&x, t, &y);
            let h = 1e-5;
            for i in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (dot(&f.eval(&xp, t), &y) - dot(&f.eval(&xm, t), &y)) / (2.0 * h);
                assert!(
                    (fd - got[i]).abs() <= 1e-5 * fd.abs().max(1e-3),
                    "d={d} i={i}: {fd} vs {}",
                    got[i]
                );
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_central_differences() {
        let mut rng = seeded(4);
        let net = Mlp::random(&[3, 5, 2], &mut rng).unwrap();
        let x = [0.3, -0.7, 1.1];
        let g = [0.4, -1.3];
        let trace = net.trace(&x);
        let mut pg = vec![0.0; net.param_count()];
        net.backward(&trace, &g, Some(&mut pg));
        let h = 1e-6;
        for (idx, analytic) in pg.iter().enumerate() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            *plus.params_mut().nth(idx).unwrap() += h;
            *minus.params_mut().nth(idx).unwrap() -= h;
            let fd = (dot(&plus.forward(&x), &g) - dot(&minus.forward(&x), &g)) / (2.0 * h);
            assert!((fd - analytic).abs() < 1e-7, "param {idx}");
        }
    }

    #[test]
    fn shape_validation() {
        assert!(Mlp::zeros(&[3]).is_err());
        assert!(Mlp::zeros(&[3, 0, 2]).is_err());
        let net = Mlp::zeros(&[4, 2]).unwrap();
        assert!(MlpField::new(FieldKind::FlowVelocity, 2, TimeEmbedding::default(), net).is_err());
    }
}
