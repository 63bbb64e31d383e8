//! Fully-connected generator network with a hand-written vector-Jacobian
//! product.
//!
//! Parameters live in one flat vector; layer `l` contributes its weight
//! matrix (row-major, `out × in`) followed by its bias.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{streams, SeededRng};
use crate::samples::SampleSet;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub leaky_slope: f64,
}

impl Default for Architecture {
    /// Latent dimension 10, seven hidden layers of 10 units, 2-D output.
    fn default() -> Self {
        Self {
            latent_dim: 10,
            hidden: vec![10; 7],
            out_dim: 2,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

impl Architecture {
    pub fn new(latent_dim: usize, hidden: Vec<usize>, out_dim: usize, leaky_slope: f64) -> Result<Self> {
        let arch = Self {
            latent_dim,
            hidden,
            out_dim,
            leaky_slope,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.out_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid("all layer widths must be at least 1"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::invalid(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Widths from input to output: `[p, hidden.., d]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.latent_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.out_dim);
        w
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerShape {
    fn weights<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        &theta[self.offset..self.offset + self.fan_in * self.fan_out]
    }

    fn bias<'a>(&self, theta: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.fan_in * self.fan_out;
        &theta[start..start + self.fan_out]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    arch: Architecture,
    theta: Vec<f64>,
}

impl GeneratorParams {
    pub fn from_flat(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "architecture has {} parameters, got {}",
                arch.param_count(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        let n = arch.param_count();
        Self::from_flat(arch, vec![0.0; n])
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Index range of the biases of layer `l` inside the flat vector.
    pub fn bias_range(&self, l: usize) -> std::ops::Range<usize> {
        let shape = self.layers()[l];
        let start = shape.offset + shape.fan_in * shape.fan_out;
        start..start + shape.fan_out
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.arch
            .widths()
            .windows(2)
            .map(|w| {
                let l = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    offset,
                };
                offset += w[0] * w[1] + w[1];
                l
            })
            .collect()
    }

    /// `(weights, bias)` of layer `l`, weights row-major `out × in`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let shape = self.layers()[l];
        (shape.weights(&self.theta), shape.bias(&self.theta))
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::invalid(format!(
                "latent vector has dimension {}, generator expects {}",
                z.len(),
                self.arch.latent_dim
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<GeneratorParams> {
    arch.validate()?;
    let mut rng = SeededRng::new(seed, streams::INIT);
    let mut theta = Vec::with_capacity(arch.param_count());
    for w in arch.widths().windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let half_width = (6.0 / (fan_in + fan_out) as f64).sqrt();
        theta.extend((0..fan_in * fan_out).map(|_| half_width * (2.0 * rng.uniform() - 1.0)));
        theta.extend(std::iter::repeat_n(0.0, fan_out));
    }
    GeneratorParams::from_flat(arch.clone(), theta)
}

#[inline]
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        w.chunks_exact(x.len())
            .zip(b)
            .map(|(row, bi)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bi),
    );
}

#[inline]
fn leaky(t: f64, slope: f64) -> f64 {
    if t >= 0.0 {
        t
    } else {
        slope * t
    }
}

pub fn forward(params: &GeneratorParams, z: &[f64]) -> Result<Vec<f64>> {
    params.check_latent(z)?;
    Ok(forward_unchecked(params, z))
}

fn forward_unchecked(params: &GeneratorParams, z: &[f64]) -> Vec<f64> {
    let layers = params.layers();
    let last = layers.len() - 1;
    let slope = params.arch.leaky_slope;
    let mut x = z.to_vec();
    let mut y = Vec::new();
    for (l, shape) in layers.iter().enumerate() {
        affine(shape.weights(&params.theta), shape.bias(&params.theta), &x, &mut y);
        if l < last {
            y.iter_mut().for_each(|t| *t = leaky(*t, slope));
        }
        std::mem::swap(&mut x, &mut y);
    }
    x
}

/// Latent inputs drawn i.i.d. from `N(0, I_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z: SampleSet,
    pub seed: u64,
}

impl LatentBatch {
    pub fn sample(p: usize, n: usize, seed: u64) -> Result<Self> {
        if p == 0 {
            return Err(Error::invalid("latent dimension must be at least 1"));
        }
        let mut rng = SeededRng::new(seed, streams::LATENT);
        let data = (0..p * n).map(|_| rng.normal()).collect();
        Ok(Self {
            z: SampleSet::new(p, data)?,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Push every latent row through the generator, preserving order.
pub fn forward_batch(params: &GeneratorParams, z: &SampleSet) -> Result<SampleSet> {
    forward_batch_with(params, z, Exec::default())
}

pub fn forward_batch_with(params: &GeneratorParams, z: &SampleSet, exec: Exec) -> Result<SampleSet> {
    if z.dim() != params.arch.latent_dim {
        return Err(Error::invalid(format!(
            "latent batch has dimension {}, generator expects {}",
            z.dim(),
            params.arch.latent_dim
        )));
    }
    let d = params.arch.out_dim;
    let mut out = vec![0.0; z.len() * d];
    exec.for_each_chunk_mut(&mut out, d, |i, row| {
        row.copy_from_slice(&forward_unchecked(params, z.row(i)));
    });
    SampleSet::new(d, out)
}

/// `vᵀ·∂G_θ(z)/∂θ`, i.e. the parameter gradient of `⟨v, G_θ(z)⟩`.
pub fn backprop_vjp(params: &GeneratorParams, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    backprop_vjp_accumulate(params, z, v, 1.0, &mut grad)?;
    Ok(grad)
}

/// Adds `scale · vᵀ·∂G_θ(z)/∂θ` into `grad`.
pub fn backprop_vjp_accumulate(
    params: &GeneratorParams,
    z: &[f64],
    v: &[f64],
    scale: f64,
    grad: &mut [f64],
) -> Result<()> {
    params.check_latent(z)?;
    if v.len() != params.arch.out_dim {
        return Err(Error::invalid(format!(
            "cotangent has dimension {}, generator output is {}",
            v.len(),
            params.arch.out_dim
        )));
    }
    if grad.len() != params.len() {
        return Err(Error::invalid("gradient buffer does not match parameter count"));
    }
    let layers = params.layers();
    let last = layers.len() - 1;
    let slope = params.arch.leaky_slope;

    // inputs[l] feeds layer l; pre[l] is layer l's affine output.
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut x = z.to_vec();
    for (l, shape) in layers.iter().enumerate() {
        let mut y = Vec::new();
        affine(shape.weights(&params.theta), shape.bias(&params.theta), &x, &mut y);
        let next = if l < last {
            y.iter().map(|&t| leaky(t, slope)).collect()
        } else {
            Vec::new()
        };
        inputs.push(std::mem::replace(&mut x, next));
        pre.push(y);
    }

    let mut g: Vec<f64> = v.iter().map(|vi| vi * scale).collect();
    for l in (0..layers.len()).rev() {
        let shape = layers[l];
        let a = &inputs[l];
        let w_off = shape.offset;
        let b_off = shape.offset + shape.fan_in * shape.fan_out;
        for (o, go) in g.iter().enumerate() {
            let row = &mut grad[w_off + o * shape.fan_in..w_off + (o + 1) * shape.fan_in];
            for (gw, ai) in row.iter_mut().zip(a) {
                *gw += go * ai;
            }
            grad[b_off + o] += go;
        }
        if l == 0 {
            break;
        }
        let w = shape.weights(&params.theta);
        let mut prev = vec![0.0; shape.fan_in];
        for (o, go) in g.iter().enumerate() {
            for (p, wi) in prev.iter_mut().zip(&w[o * shape.fan_in..(o + 1) * shape.fan_in]) {
                *p += wi * go;
            }
        }
        for (p, t) in prev.iter_mut().zip(&pre[l - 1]) {
            if *t <= 0.0 {
                *p *= slope;
            }
        }
        g = prev;
    }
    Ok(())
}
