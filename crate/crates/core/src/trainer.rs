//! Sketch-matching cost, its analytic gradient, and the training loop.
//!
//! The cost of a generator against a dataset sketch `z_X` is
//! `‖z_X − mean_i Φ(G_θ(z_i))‖²`. Its gradient chains the feature-map
//! Jacobian with the generator's vector-Jacobian product:
//! `∇θ = −(2/n)·Σ_i vjp(z_i, Re[rᴴ·∂Φ/∂u(G_θ(z_i))])`, with `r` the residual.
//!
//! With minibatching, each step recomputes the residual from the current
//! batch only, so every step is the exact gradient of the batch-restricted
//! cost. That cost is a biased estimate of the full-pool cost; the bias
//! shrinks with the batch size, and small batches (a few dozen samples) train
//! poorly. The default batch size is 1000.

use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::generator::{backprop_vjp_accumulate, forward_batch_with, init_params, Architecture, GeneratorParams, LatentBatch};
use crate::rff_sketch::{
    dot, draw_frequencies, sketch_samples, FrequencyLaw, FrequencyMatrix, LawKind, Sketch, SketchAccumulator,
};
use crate::rng::{streams, SeededRng};
use crate::samples::SampleSet;

/// Samples per gradient work unit. Fixed so that the reduction order does
/// not depend on the thread count.
const GRAD_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_prime: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub resample_latents: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_prime: 100_000,
            batch_size: 1000,
            epochs: 100,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            resample_latents: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > self.n_prime {
            return Err(Error::invalid(format!(
                "batch size must lie in 1..={}, got {}",
                self.n_prime, self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.optimizer == OptimizerKind::Adam
            && !((0.0..1.0).contains(&self.adam_beta1)
                && (0.0..1.0).contains(&self.adam_beta2)
                && self.adam_eps > 0.0)
        {
            return Err(Error::invalid("Adam needs β₁, β₂ in [0, 1) and ε > 0"));
        }
        Ok(())
    }
}

/// `r = z_X − mean_i Φ(G_θ(z_i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub r: Vec<Complex64>,
}

impl Residual {
    pub fn norm_sqr(&self) -> f64 {
        self.r.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }
}

/// The feature map as a fixed output layer: pools `Φ` over generated samples.
pub fn sketch_layer_forward(generated: &SampleSet, omega: &FrequencyMatrix) -> Result<Sketch> {
    sketch_samples(generated, omega, Exec::default())
}

fn check_inputs(params: &GeneratorParams, target: &Sketch, latents: &SampleSet, omega: &FrequencyMatrix) -> Result<()> {
    target.check_compatible(omega)?;
    if params.arch().out_dim != omega.dim() {
        return Err(Error::invalid(format!(
            "generator outputs {}-vectors but frequencies are {}-dimensional",
            params.arch().out_dim,
            omega.dim()
        )));
    }
    if latents.is_empty() {
        return Err(Error::invalid("latent batch is empty"));
    }
    Ok(())
}

fn residual_of(target: &Sketch, generated: &SampleSet, omega: &FrequencyMatrix, exec: Exec) -> Result<Residual> {
    let s = sketch_samples(generated, omega, exec)?;
    Ok(Residual {
        r: target.z.iter().zip(&s.z).map(|(a, b)| a - b).collect(),
    })
}

pub fn residual(
    params: &GeneratorParams,
    target: &Sketch,
    latents: &SampleSet,
    omega: &FrequencyMatrix,
    exec: Exec,
) -> Result<Residual> {
    check_inputs(params, target, latents, omega)?;
    let generated = forward_batch_with(params, latents, exec)?;
    residual_of(target, &generated, omega, exec)
}

/// Sketch-matching cost over the given latent inputs.
pub fn cl_cost(params: &GeneratorParams, target: &Sketch, latents: &SampleSet, omega: &FrequencyMatrix) -> Result<f64> {
    cl_cost_with(params, target, latents, omega, Exec::default())
}

pub fn cl_cost_with(
    params: &GeneratorParams,
    target: &Sketch,
    latents: &SampleSet,
    omega: &FrequencyMatrix,
    exec: Exec,
) -> Result<f64> {
    Ok(residual(params, target, latents, omega, exec)?.norm_sqr())
}

/// Analytic gradient of [`cl_cost`] over the batch `latents`.
pub fn cl_gradient(
    params: &GeneratorParams,
    target: &Sketch,
    latents: &SampleSet,
    omega: &FrequencyMatrix,
) -> Result<Vec<f64>> {
    Ok(cl_cost_and_gradient_with(params, target, latents, omega, Exec::default())?.1)
}

/// Largest batch phasor table (samples × frequencies) kept in memory during a
/// gradient step; bigger batches recompute the phasors instead.
const PHASOR_CACHE_LIMIT: usize = 1 << 22;

/// Cost and gradient from a single forward pass over the batch.
pub fn cl_cost_and_gradient_with(
    params: &GeneratorParams,
    target: &Sketch,
    latents: &SampleSet,
    omega: &FrequencyMatrix,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    let cache = latents.len().saturating_mul(omega.m()) <= PHASOR_CACHE_LIMIT;
    cost_and_gradient(params, target, latents, omega, exec, cache)
}

fn cost_and_gradient(
    params: &GeneratorParams,
    target: &Sketch,
    latents: &SampleSet,
    omega: &FrequencyMatrix,
    exec: Exec,
    cache: bool,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(params, target, latents, omega)?;
    let generated = forward_batch_with(params, latents, exec)?;
    let n = latents.len();
    let m = omega.m();

    // exp(iω_jᵀu_i), row-major by sample
    let phasors = if cache {
        let mut table = vec![Complex64::new(0.0, 0.0); n * m];
        exec.for_each_chunk_mut(&mut table, m, |i, row| {
            let u = generated.row(i);
            for (p, w) in row.iter_mut().zip(omega.columns()) {
                let (sin, cos) = dot(w, u).sin_cos();
                *p = Complex64::new(cos, sin);
            }
        });
        Some(table)
    } else {
        None
    };

    let res = match &phasors {
        Some(table) => {
            let mut sums = vec![Complex64::new(0.0, 0.0); m];
            for row in table.chunks_exact(m) {
                for (s, p) in sums.iter_mut().zip(row) {
                    s.re += p.re;
                    s.im += p.im;
                }
            }
            let s = SketchAccumulator::from_sums(*omega.spec(), sums, n as u64).finish();
            Residual {
                r: target.z.iter().zip(&s.z).map(|(a, b)| a - b).collect(),
            }
        }
        None => residual_of(target, &generated, omega, exec)?,
    };
    let cost = res.norm_sqr();

    let d = omega.dim();
    let s = omega.feature_scale();
    let scale = -2.0 / n as f64;
    let n_chunks = n.div_ceil(GRAD_CHUNK);
    let partials = exec.map_range(n_chunks, |c| -> Result<Vec<f64>> {
        let mut g = vec![0.0; params.len()];
        let mut v = vec![0.0; d];
        for i in c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n) {
            let u = generated.row(i);
            // v = Re[rᴴ·∂Φ/∂u]; with r = a + ib and ∂Φ_j/∂u = (i/√m)·e^{iθ_j}·ω_j,
            // Re[(a − ib)·i·e^{iθ}] = b·cos θ − a·sin θ.
            v.iter_mut().for_each(|x| *x = 0.0);
            for (j, (w, rj)) in omega.columns().zip(&res.r).enumerate() {
                let (sin, cos) = match &phasors {
                    Some(table) => {
                        let p = table[i * m + j];
                        (p.im, p.re)
                    }
                    None => dot(w, u).sin_cos(),
                };
                let coeff = rj.im * cos - rj.re * sin;
                for (vk, wk) in v.iter_mut().zip(w) {
                    *vk += coeff * wk;
                }
            }
            v.iter_mut().for_each(|x| *x *= s);
            backprop_vjp_accumulate(params, latents.row(i), &v, scale, &mut g)?;
        }
        Ok(g)
    });
    let mut grad = vec![0.0; params.len()];
    for part in partials {
        for (a, b) in grad.iter_mut().zip(part?) {
            *a += b;
        }
    }
    Ok((cost, grad))
}

/// Result of comparing the analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Relative error with an absolute floor for entries that are nearly zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Central finite differences of [`cl_cost`] over every parameter.
pub fn gradient_check(
    params: &GeneratorParams,
    target: &Sketch,
    latents: &SampleSet,
    omega: &FrequencyMatrix,
    step: f64,
) -> Result<GradCheck> {
    let exec = Exec::default();
    let (_, analytic) = cl_cost_and_gradient_with(params, target, latents, omega, exec)?;
    let numeric = exec
        .map_range(params.len(), |t| -> Result<f64> {
            let mut p = params.clone();
            let orig = p.as_slice()[t];
            p.as_mut_slice()[t] = orig + step;
            let up = cl_cost_with(&p, target, latents, omega, Exec::Sequential)?;
            p.as_mut_slice()[t] = orig - step;
            let dn = cl_cost_with(&p, target, latents, omega, Exec::Sequential)?;
            Ok((up - dn) / (2.0 * step))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (worst_index, max_rel_err) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, f)| relative_error(*a, *f))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheck {
        max_rel_err,
        worst_index,
        analytic,
        numeric,
    })
}

/// Builds a self-contained gradient-check problem and runs it: Glorot weights
/// with `N(0, 0.01)` biases (so that pre-activations are not tied at zero), a
/// Gaussian-law sketch of 100 six-mode mixture samples as the target, and
/// `batch_size` latent draws.
pub fn gradient_check_random(
    arch: &Architecture,
    m: usize,
    batch_size: usize,
    sigma2: f64,
    seed: u64,
    step: f64,
) -> Result<GradCheck> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut params = init_params(arch, seed)?;
    let mut rng = SeededRng::new(seed, streams::INIT + 16);
    for l in 0..arch.num_layers() {
        let range = params.bias_range(l);
        for b in &mut params.as_mut_slice()[range] {
            *b = 0.1 * rng.normal();
        }
    }
    let law = FrequencyLaw::new(LawKind::Gaussian, sigma2, arch.out_dim)?;
    let omega = draw_frequencies(law, m, seed)?;
    let mut data = SampleSet::with_capacity(arch.out_dim, 100);
    let mut row = vec![0.0; arch.out_dim];
    for i in 0..100 {
        let mean = crate::datasets::gmm6_mean(i % crate::datasets::GMM_COMPONENTS, 1.0);
        for (k, r) in row.iter_mut().enumerate() {
            *r = mean.get(k).copied().unwrap_or(0.0) + 0.12 * rng.normal();
        }
        data.push(&row)?;
    }
    let target = sketch_samples(&data, &omega, Exec::default())?;
    let latents = LatentBatch::sample(arch.latent_dim, batch_size, seed)?;
    gradient_check(&params, &target, &latents.z, &omega, step)
}

/// First-order optimizer state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, n_params: usize) -> Self {
        Self {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in theta.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                for (((p, g), m), v) in theta
                    .iter_mut()
                    .zip(grad)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    /// Batch-restricted cost before the update.
    pub loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub iterations: Vec<IterationRecord>,
    /// Full-pool cost of the initial parameters.
    pub initial_cost: f64,
    /// Full-pool cost after each epoch.
    pub epoch_costs: Vec<f64>,
    pub final_params: GeneratorParams,
    pub config: TrainConfig,
    pub sketch_fingerprint: u64,
}

impl TrainReport {
    pub fn final_cost(&self) -> f64 {
        self.epoch_costs.last().copied().unwrap_or(self.initial_cost)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,epoch,loss,wall_ms")?;
        for r in &self.iterations {
            writeln!(w, "{},{},{:e},{:.4}", r.iteration, r.epoch, r.loss, r.wall_ms)?;
        }
        Ok(())
    }
}

/// Snapshot handed to the epoch observer.
pub struct EpochEvent<'a> {
    pub epoch: usize,
    pub cost: f64,
    pub params: &'a GeneratorParams,
}

pub fn train(
    target: &Sketch,
    omega: &FrequencyMatrix,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(GeneratorParams, TrainReport)> {
    train_with(target, omega, arch, cfg, Exec::default(), |_| Ok(()))
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_add((epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Training loop with an observer called after every epoch (used for
/// checkpointing and progress logs).
pub fn train_with<F>(
    target: &Sketch,
    omega: &FrequencyMatrix,
    arch: &Architecture,
    cfg: &TrainConfig,
    exec: Exec,
    mut on_epoch: F,
) -> Result<(GeneratorParams, TrainReport)>
where
    F: FnMut(&EpochEvent<'_>) -> Result<()>,
{
    cfg.validate()?;
    arch.validate()?;
    target.check_compatible(omega)?;
    if arch.out_dim != omega.dim() {
        return Err(Error::Config(format!(
            "architecture output dimension {} does not match sketch dimension {}",
            arch.out_dim,
            omega.dim()
        )));
    }

    let mut params = init_params(arch, cfg.seed)?;
    let mut pool = LatentBatch::sample(arch.latent_dim, cfg.n_prime, cfg.seed)?;
    let mut shuffler = SeededRng::new(cfg.seed, streams::SHUFFLE);
    let mut opt = Optimizer::new(cfg, params.len());

    let initial_cost = cl_cost_with(&params, target, &pool.z, omega, exec)?;
    let mut report = TrainReport {
        iterations: Vec::new(),
        initial_cost,
        epoch_costs: Vec::with_capacity(cfg.epochs),
        final_params: params.clone(),
        config: cfg.clone(),
        sketch_fingerprint: target.fingerprint(),
    };
    if !initial_cost.is_finite() {
        return Err(Error::TrainingDiverged {
            epoch: 0,
            last_report: Box::new(report),
        });
    }

    let mut order: Vec<usize> = (0..cfg.n_prime).collect();
    let mut iteration = 0;
    for epoch in 0..cfg.epochs {
        if cfg.resample_latents && epoch > 0 {
            pool = LatentBatch::sample(arch.latent_dim, cfg.n_prime, epoch_seed(cfg.seed, epoch))?;
        }
        shuffler.shuffle(&mut order);
        for batch_idx in order.chunks(cfg.batch_size) {
            let started = Instant::now();
            let batch = pool.z.select(batch_idx);
            let (loss, grad) = cl_cost_and_gradient_with(&params, target, &batch, omega, exec)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                report.final_params = params;
                return Err(Error::TrainingDiverged {
                    epoch,
                    last_report: Box::new(report),
                });
            }
            opt.step(params.as_mut_slice(), &grad);
            report.iterations.push(IterationRecord {
                iteration,
                epoch,
                loss,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
            iteration += 1;
        }
        let cost = cl_cost_with(&params, target, &pool.z, omega, exec)?;
        if !cost.is_finite() || params.as_slice().iter().any(|t| !t.is_finite()) {
            return Err(Error::TrainingDiverged {
                epoch,
                last_report: Box::new(report),
            });
        }
        report.epoch_costs.push(cost);
        report.final_params = params.clone();
        on_epoch(&EpochEvent {
            epoch,
            cost,
            params: &params,
        })?;
    }
    Ok((params, report))
}
