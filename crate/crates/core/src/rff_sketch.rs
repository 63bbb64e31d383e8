//! Random Fourier features and dataset sketches.
//!
//! A [`FrequencyMatrix`] holds `m` frequencies `ω_j ∈ R^d` drawn from a
//! [`FrequencyLaw`]. The feature map is `Φ(x) = m^{-1/2} · exp(i Ωᵀx)` and the
//! sketch of a dataset is the average of `Φ` over its samples. Sketches carry
//! a fingerprint of the frequency draw so that sketches computed under
//! different frequencies cannot be compared or merged by accident.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{streams, SeededRng};
use crate::samples::SampleSet;

/// Rows buffered per pass when sketching a stream.
pub const STREAM_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawKind {
    Gaussian,
    FoldedGaussian,
}

impl LawKind {
    pub fn code(self) -> u8 {
        match self {
            LawKind::Gaussian => 0,
            LawKind::FoldedGaussian => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(LawKind::Gaussian),
            1 => Ok(LawKind::FoldedGaussian),
            other => Err(Error::Format(format!("unknown frequency law code {other}"))),
        }
    }
}

/// Sampling law for the frequencies.
///
/// `sigma2` is the variance of the law in frequency space: Gaussian columns
/// are `N(0, σ²·I_d)`, folded-Gaussian columns are `|g|·φ` with
/// `g ~ N(0, σ²)` and `φ` uniform on the unit sphere. The Gaussian law is dual
/// to the kernel `exp(-σ²‖u‖²/2)`, i.e. a data-space bandwidth of `1/σ²`; use
/// [`FrequencyLaw::from_kernel_variance`] to specify the law by that bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyLaw {
    pub kind: LawKind,
    pub sigma2: f64,
    pub dim: usize,
}

impl FrequencyLaw {
    pub fn new(kind: LawKind, sigma2: f64, dim: usize) -> Result<Self> {
        let law = Self { kind, sigma2, dim };
        law.validate()?;
        Ok(law)
    }

    /// Law whose frequency scale is the inverse of a data-space kernel
    /// variance: `sigma2 = 1 / kernel_variance`.
    pub fn from_kernel_variance(kind: LawKind, kernel_variance: f64, dim: usize) -> Result<Self> {
        if !(kernel_variance > 0.0 && kernel_variance.is_finite()) {
            return Err(Error::invalid("kernel variance must be positive and finite"));
        }
        Self::new(kind, 1.0 / kernel_variance, dim)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::invalid(format!(
                "frequency law scale must be positive and finite, got {}",
                self.sigma2
            )));
        }
        if self.dim == 0 {
            return Err(Error::invalid("frequency law dimension must be at least 1"));
        }
        Ok(())
    }
}

/// Everything needed to regenerate a frequency matrix bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencySpec {
    pub law: FrequencyLaw,
    pub m: usize,
    pub seed: u64,
}

impl FrequencySpec {
    /// FNV-1a over (law kind, σ², d, m, seed) in little-endian encoding.
    pub fn fingerprint(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut bytes = Vec::with_capacity(25);
        bytes.push(self.law.kind.code());
        bytes.extend_from_slice(&self.law.sigma2.to_le_bytes());
        bytes.extend_from_slice(&(self.law.dim as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.m as u32).to_le_bytes());
        bytes.extend_from_slice(&self.seed.to_le_bytes());
        bytes
            .iter()
            .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
    }
}

/// The `d × m` frequency matrix Ω, stored column-major (one frequency per
/// contiguous column).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrix {
    omega: Vec<f64>,
    spec: FrequencySpec,
}

/// Draw `m` frequencies from `law`, deterministically in `seed`.
pub fn draw_frequencies(law: FrequencyLaw, m: usize, seed: u64) -> Result<FrequencyMatrix> {
    law.validate()?;
    if m == 0 {
        return Err(Error::invalid("number of frequencies must be at least 1"));
    }
    let d = law.dim;
    let scale = law.sigma2.sqrt();
    let mut rng = SeededRng::new(seed, streams::FREQUENCIES);
    let mut omega = vec![0.0; d * m];
    for col in omega.chunks_exact_mut(d) {
        match law.kind {
            LawKind::Gaussian => {
                for w in col.iter_mut() {
                    *w = scale * rng.normal();
                }
            }
            LawKind::FoldedGaussian => {
                let norm = loop {
                    for w in col.iter_mut() {
                        *w = rng.normal();
                    }
                    let norm = col.iter().map(|w| w * w).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        break norm;
                    }
                };
                let radius = scale * rng.normal().abs();
                for w in col.iter_mut() {
                    *w *= radius / norm;
                }
            }
        }
    }
    Ok(FrequencyMatrix {
        omega,
        spec: FrequencySpec { law, m, seed },
    })
}

impl FrequencyMatrix {
    pub fn regenerate(spec: &FrequencySpec) -> Result<Self> {
        draw_frequencies(spec.law, spec.m, spec.seed)
    }

    /// Build from explicit column-major frequencies. The spec is kept only as
    /// a label and fingerprint source.
    pub fn from_raw(spec: FrequencySpec, omega: Vec<f64>) -> Result<Self> {
        spec.law.validate()?;
        if spec.m == 0 || omega.len() != spec.law.dim * spec.m {
            return Err(Error::invalid(format!(
                "expected {}×{} frequencies, got {} values",
                spec.law.dim,
                spec.m,
                omega.len()
            )));
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("frequencies must be finite"));
        }
        Ok(Self { omega, spec })
    }

    pub fn dim(&self) -> usize {
        self.spec.law.dim
    }

    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn spec(&self) -> &FrequencySpec {
        &self.spec
    }

    pub fn law(&self) -> &FrequencyLaw {
        &self.spec.law
    }

    pub fn fingerprint(&self) -> u64 {
        self.spec.fingerprint()
    }

    /// Column-major `d × m` values.
    pub fn as_slice(&self) -> &[f64] {
        &self.omega
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.omega[j * d..(j + 1) * d]
    }

    pub fn columns(&self) -> std::slice::ChunksExact<'_, f64> {
        self.omega.chunks_exact(self.dim())
    }

    /// `1/√m`, the modulus of every feature entry.
    pub fn feature_scale(&self) -> f64 {
        1.0 / (self.m() as f64).sqrt()
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, frequencies have dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Φ(x) = m^{-1/2} · exp(i Ωᵀx)`.
pub fn rff_map(x: &[f64], omega: &FrequencyMatrix) -> Result<Vec<Complex64>> {
    omega.check_dim(x)?;
    let s = omega.feature_scale();
    Ok(omega
        .columns()
        .map(|w| {
            let (sin, cos) = dot(w, x).sin_cos();
            Complex64::new(cos * s, sin * s)
        })
        .collect())
}

/// Jacobian `∂Φ/∂u = (i/√m)·diag(exp(iΩᵀu))·Ω`, returned row-major as `m × d`.
pub fn rff_jacobian(u: &[f64], omega: &FrequencyMatrix) -> Result<Vec<Complex64>> {
    omega.check_dim(u)?;
    let s = omega.feature_scale();
    let mut jac = Vec::with_capacity(omega.m() * omega.dim());
    for w in omega.columns() {
        let (sin, cos) = dot(w, u).sin_cos();
        // i·exp(iθ) = -sin θ + i cos θ
        let factor = Complex64::new(-sin * s, cos * s);
        jac.extend(w.iter().map(|&wk| factor * wk));
    }
    Ok(jac)
}

/// Pooled random Fourier features of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    pub z: Vec<Complex64>,
    pub count: u64,
    pub spec: FrequencySpec,
}

impl Sketch {
    pub fn empty(spec: FrequencySpec) -> Self {
        Self {
            z: vec![Complex64::new(0.0, 0.0); spec.m],
            count: 0,
            spec,
        }
    }

    pub fn m(&self) -> usize {
        self.z.len()
    }

    pub fn fingerprint(&self) -> u64 {
        self.spec.fingerprint()
    }

    pub fn check_compatible(&self, omega: &FrequencyMatrix) -> Result<()> {
        if self.fingerprint() != omega.fingerprint() || self.m() != omega.m() {
            return Err(Error::IncompatibleSketch {
                expected: omega.fingerprint(),
                found: self.fingerprint(),
            });
        }
        Ok(())
    }

    /// Count-weighted average of two sketches over the same frequencies.
    pub fn merge(&self, other: &Sketch) -> Result<Sketch> {
        if self.fingerprint() != other.fingerprint() || self.m() != other.m() {
            return Err(Error::IncompatibleSketch {
                expected: self.fingerprint(),
                found: other.fingerprint(),
            });
        }
        if other.count == 0 {
            return Ok(self.clone());
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let total = self.count + other.count;
        let (wa, wb) = (self.count as f64, other.count as f64);
        let inv = 1.0 / total as f64;
        let z = self
            .z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| (a * wa + b * wb) * inv)
            .collect();
        Ok(Sketch {
            z,
            count: total,
            spec: self.spec,
        })
    }

    /// `‖self − other‖²₂`.
    pub fn distance_sq(&self, other: &Sketch) -> Result<f64> {
        if self.fingerprint() != other.fingerprint() || self.m() != other.m() {
            return Err(Error::IncompatibleSketch {
                expected: self.fingerprint(),
                found: other.fingerprint(),
            });
        }
        Ok(self
            .z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum())
    }
}

/// Running sums of unscaled phasors `exp(iω_jᵀx)`. Each entry is summed in
/// sample order, so the result does not depend on chunking or thread count.
#[derive(Debug, Clone)]
pub struct SketchAccumulator {
    sums: Vec<Complex64>,
    count: u64,
    spec: FrequencySpec,
}

impl SketchAccumulator {
    pub fn new(omega: &FrequencyMatrix) -> Self {
        Self {
            sums: vec![Complex64::new(0.0, 0.0); omega.m()],
            count: 0,
            spec: *omega.spec(),
        }
    }

    /// Add a row-major block of samples.
    pub fn push_block(&mut self, block: &[f64], omega: &FrequencyMatrix, exec: Exec) -> Result<()> {
        let d = omega.dim();
        if omega.fingerprint() != self.spec.fingerprint() {
            return Err(Error::IncompatibleSketch {
                expected: self.spec.fingerprint(),
                found: omega.fingerprint(),
            });
        }
        if !block.len().is_multiple_of(d) {
            return Err(Error::invalid(format!(
                "sample block is not a whole number of {d}-vectors"
            )));
        }
        exec.for_each_mut(&mut self.sums, |j, acc| {
            let w = omega.column(j);
            let mut a = *acc;
            for x in block.chunks_exact(d) {
                let (sin, cos) = dot(w, x).sin_cos();
                a.re += cos;
                a.im += sin;
            }
            *acc = a;
        });
        self.count += (block.len() / d) as u64;
        Ok(())
    }

    /// Accumulator seeded with precomputed phasor sums over `count` samples.
    pub(crate) fn from_sums(spec: FrequencySpec, sums: Vec<Complex64>, count: u64) -> Self {
        debug_assert_eq!(sums.len(), spec.m);
        Self { sums, count, spec }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(&self) -> Sketch {
        if self.count == 0 {
            return Sketch::empty(self.spec);
        }
        let s = 1.0 / (self.spec.m as f64).sqrt();
        let n = self.count as f64;
        Sketch {
            z: self.sums.iter().map(|a| (a * s) / n).collect(),
            count: self.count,
            spec: self.spec,
        }
    }
}

/// Sketch a stream of samples in one pass. Memory use is bounded by the
/// accumulator and one buffered block of [`STREAM_CHUNK`] rows.
pub fn sketch_dataset<I, R>(rows: I, omega: &FrequencyMatrix) -> Result<Sketch>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    sketch_dataset_with(rows, omega, Exec::default())
}

pub fn sketch_dataset_with<I, R>(rows: I, omega: &FrequencyMatrix, exec: Exec) -> Result<Sketch>
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    sketch_stream(rows.into_iter().map(Ok), omega, exec)
}

/// Single-pass sketch of a fallible stream, e.g. rows parsed from a file.
/// The first error aborts the pass.
pub fn sketch_stream<I, R>(rows: I, omega: &FrequencyMatrix, exec: Exec) -> Result<Sketch>
where
    I: IntoIterator<Item = Result<R>>,
    R: AsRef<[f64]>,
{
    let mut acc = SketchAccumulator::new(omega);
    let mut buf = Vec::with_capacity(STREAM_CHUNK * omega.dim());
    for row in rows {
        let row = row?;
        let row = row.as_ref();
        omega.check_dim(row)?;
        buf.extend_from_slice(row);
        if buf.len() == STREAM_CHUNK * omega.dim() {
            acc.push_block(&buf, omega, exec)?;
            buf.clear();
        }
    }
    if !buf.is_empty() {
        acc.push_block(&buf, omega, exec)?;
    }
    Ok(acc.finish())
}

/// Sketch an in-memory sample set.
pub fn sketch_samples(samples: &SampleSet, omega: &FrequencyMatrix, exec: Exec) -> Result<Sketch> {
    if samples.dim() != omega.dim() {
        return Err(Error::invalid(format!(
            "samples have dimension {}, frequencies have dimension {}",
            samples.dim(),
            omega.dim()
        )));
    }
    let mut acc = SketchAccumulator::new(omega);
    acc.push_block(samples.as_slice(), omega, exec)?;
    Ok(acc.finish())
}

/// `merge` as a free function.
pub fn merge(a: &Sketch, b: &Sketch) -> Result<Sketch> {
    a.merge(b)
}
