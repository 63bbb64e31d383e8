//! Exact kernel and MMD computations.
//!
//! These are quadratic-time reference computations. They exist to check the
//! sketch-based quantities, never to train with.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rff_sketch::{draw_frequencies, dot, sketch_samples, FrequencyLaw, FrequencyMatrix, LawKind};
use crate::samples::SampleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    GaussianRbf,
}

/// Shift-invariant kernel `K(u) = exp(−σ²‖u‖²/2)`, dual to the Gaussian
/// frequency law `N(0, σ²·I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth_sigma2: f64,
}

impl KernelSpec {
    pub fn gaussian(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel bandwidth must be positive and finite, got {sigma2}"
            )));
        }
        Ok(Self {
            kind: KernelKind::GaussianRbf,
            bandwidth_sigma2: sigma2,
        })
    }

    /// The frequency law paired with this kernel in dimension `dim`.
    pub fn dual_law(&self, dim: usize) -> Result<FrequencyLaw> {
        FrequencyLaw::new(LawKind::Gaussian, self.bandwidth_sigma2, dim)
    }

    #[inline]
    fn profile(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-0.5 * self.bandwidth_sigma2 * d2).exp()
    }
}

pub fn kernel_eval(x: &[f64], y: &[f64], k: &KernelSpec) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "kernel arguments have dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(k.profile(x, y))
}

fn check_pair(x: &SampleSet, y: &SampleSet) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("MMD needs two nonempty sample sets"));
    }
    if x.dim() != y.dim() {
        return Err(Error::invalid(format!(
            "sample sets have dimensions {} and {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Mean of `κ(a_i, b_j)` over all pairs. Rows are evaluated in parallel and
/// reduced in row order.
pub fn mean_kernel(a: &SampleSet, b: &SampleSet, k: &KernelSpec, exec: Exec) -> f64 {
    let row_sums = exec.map_range(a.len(), |i| {
        let x = a.row(i);
        b.rows().map(|y| k.profile(x, y)).sum::<f64>()
    });
    row_sums.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64)
}

/// Cross term with a canonical argument order, so that swapping the sets
/// yields a bit-identical value.
fn cross_kernel(x: &SampleSet, y: &SampleSet, k: &KernelSpec, exec: Exec) -> f64 {
    let order = x.len().cmp(&y.len()).then_with(|| {
        x.as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    if order == Ordering::Greater {
        mean_kernel(y, x, k, exec)
    } else {
        mean_kernel(x, y, k, exec)
    }
}

/// Biased (V-statistic) squared MMD between two empirical measures.
pub fn mmd_squared_exact(x: &SampleSet, y: &SampleSet, k: &KernelSpec) -> Result<f64> {
    mmd_squared_exact_with(x, y, k, Exec::default())
}

pub fn mmd_squared_exact_with(x: &SampleSet, y: &SampleSet, k: &KernelSpec, exec: Exec) -> Result<f64> {
    check_pair(x, y)?;
    let kxx = mean_kernel(x, x, k, exec);
    let kyy = mean_kernel(y, y, k, exec);
    let kxy = cross_kernel(x, y, k, exec);
    Ok(kxx + kyy - 2.0 * kxy)
}

/// The generator-dependent part of the squared MMD: `mean κ(G,G) − 2·mean κ(X,G)`.
/// Adding the data self-term `mean κ(X,X)` recovers [`mmd_squared_exact`].
pub fn mmd_gn_cost_exact(x: &SampleSet, generated: &SampleSet, k: &KernelSpec) -> Result<f64> {
    mmd_gn_cost_exact_with(x, generated, k, Exec::default())
}

pub fn mmd_gn_cost_exact_with(
    x: &SampleSet,
    generated: &SampleSet,
    k: &KernelSpec,
    exec: Exec,
) -> Result<f64> {
    check_pair(x, generated)?;
    let kgg = mean_kernel(generated, generated, k, exec);
    let kxg = cross_kernel(x, generated, k, exec);
    Ok(kgg - 2.0 * kxg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BochnerEstimate {
    pub estimate: f64,
    pub closed_form: Option<f64>,
}

/// Monte-Carlo estimate of `K(u) = E_ω cos(ωᵀu)` from `m` frequency draws,
/// alongside the closed form when the law has one.
pub fn bochner_check(law: FrequencyLaw, u: &[f64], m: usize, seed: u64) -> Result<BochnerEstimate> {
    let omega = draw_frequencies(law, m, seed)?;
    omega.check_dim(u)?;
    let estimate = omega.columns().map(|w| dot(w, u).cos()).sum::<f64>() / m as f64;
    let closed_form = match law.kind {
        LawKind::Gaussian => Some((-0.5 * law.sigma2 * dot(u, u)).exp()),
        LawKind::FoldedGaussian => None,
    };
    Ok(BochnerEstimate {
        estimate,
        closed_form,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchMmdComparison {
    pub sketch_distance_sq: f64,
    pub mmd_sq: f64,
}

impl SketchMmdComparison {
    pub fn gap(&self) -> f64 {
        (self.sketch_distance_sq - self.mmd_sq).abs()
    }

    pub fn relative_gap(&self) -> f64 {
        self.gap() / self.mmd_sq
    }
}

/// Sketch distance and exact MMD² for the same pair of sets. Ω must be drawn
/// from the Gaussian law dual to `k`.
pub fn compare_sketch_mmd(
    x: &SampleSet,
    y: &SampleSet,
    omega: &FrequencyMatrix,
    k: &KernelSpec,
) -> Result<SketchMmdComparison> {
    let law = omega.law();
    if law.kind != LawKind::Gaussian || law.sigma2 != k.bandwidth_sigma2 {
        return Err(Error::invalid(format!(
            "frequency law ({:?}, σ²={}) is not dual to the kernel (σ²={})",
            law.kind, law.sigma2, k.bandwidth_sigma2
        )));
    }
    let mmd_sq = mmd_squared_exact(x, y, k)?;
    let exec = Exec::default();
    let sx = sketch_samples(x, omega, exec)?;
    let sy = sketch_samples(y, omega, exec)?;
    Ok(SketchMmdComparison {
        sketch_distance_sq: sx.distance_sq(&sy)?,
        mmd_sq,
    })
}

/// `|‖z_X − z_Y‖² − MMD²(X, Y)|`.
pub fn sketch_mmd_gap(x: &SampleSet, y: &SampleSet, omega: &FrequencyMatrix, k: &KernelSpec) -> Result<f64> {
    Ok(compare_sketch_mmd(x, y, omega, k)?.gap())
}

/// Wall-clock cost of one discrepancy evaluation at a given dataset size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingRow {
    pub n: usize,
    pub exact_ms: f64,
    pub sketch_ms: f64,
}

const SKETCH_TIMING_LOOP: usize = 1000;

fn median_ms(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v[v.len() / 2]
}

/// Times exact MMD² between the first `n` rows of `x` and of `y` against the
/// sketch distance for the same pair. The two sketches are built once outside
/// the timer, so the sketch column measures only the comparison of two
/// m-dimensional vectors; it is averaged over an inner loop because a single
/// comparison is close to the timer resolution. Each entry is the median of
/// `reps` runs.
pub fn time_exact_vs_sketch(
    x: &SampleSet,
    y: &SampleSet,
    omega: &FrequencyMatrix,
    k: &KernelSpec,
    sizes: &[usize],
    reps: usize,
    exec: Exec,
) -> Result<Vec<TimingRow>> {
    if reps == 0 {
        return Err(Error::invalid("timing needs at least one repetition"));
    }
    let max_n = x.len().min(y.len());
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n == 0 || n > max_n {
            return Err(Error::invalid(format!("timing size {n} outside 1..={max_n}")));
        }
        let (xs, ys) = (x.truncated(n), y.truncated(n));
        let sx = sketch_samples(&xs, omega, exec)?;
        let sy = sketch_samples(&ys, omega, exec)?;
        let mut exact = Vec::with_capacity(reps);
        let mut sketch = Vec::with_capacity(reps);
        for _ in 0..reps {
            let t = std::time::Instant::now();
            std::hint::black_box(mmd_squared_exact_with(&xs, &ys, k, exec)?);
            exact.push(t.elapsed().as_secs_f64() * 1e3);
            let t = std::time::Instant::now();
            for _ in 0..SKETCH_TIMING_LOOP {
                std::hint::black_box(std::hint::black_box(&sx).distance_sq(&sy)?);
            }
            sketch.push(t.elapsed().as_secs_f64() * 1e3 / SKETCH_TIMING_LOOP as f64);
        }
        rows.push(TimingRow {
            n,
            exact_ms: median_ms(exact),
            sketch_ms: median_ms(sketch),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;
    use crate::rng::SeededRng;

    fn random_set(n: usize, d: usize, seed: u64) -> SampleSet {
        let mut rng = SeededRng::new(seed, 0);
        SampleSet::new(d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Straight triple loop over the V-statistic definition.
    fn naive_mmd(x: &SampleSet, y: &SampleSet, sigma2: f64) -> f64 {
        let kern = |a: &[f64], b: &[f64]| {
            let mut s = 0.0;
            for t in 0..a.len() {
                s += (a[t] - b[t]) * (a[t] - b[t]);
            }
            (-sigma2 * s / 2.0).exp()
        };
        let mut kxx = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                kxx += kern(x.row(i), x.row(j));
            }
        }
        let mut kyy = 0.0;
        for i in 0..y.len() {
            for j in 0..y.len() {
                kyy += kern(y.row(i), y.row(j));
            }
        }
        let mut kxy = 0.0;
        for i in 0..x.len() {
            for j in 0..y.len() {
                kxy += kern(x.row(i), y.row(j));
            }
        }
        let (n, n2) = (x.len() as f64, y.len() as f64);
        kxx / (n * n) + kyy / (n2 * n2) - 2.0 * kxy / (n * n2)
    }

    #[test]
    fn kernel_examples() {
        let k = KernelSpec::gaussian(2.0).unwrap();
        assert_eq!(kernel_eval(&[0.3, 1.0], &[0.3, 1.0], &k).unwrap(), 1.0);
        assert_relative_eq!(kernel_eval(&[0.0], &[1.0], &k).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert!(kernel_eval(&[0.0], &[1.0, 2.0], &k).is_err());
        assert!(KernelSpec::gaussian(0.0).is_err());
    }

    #[test]
    fn kernel_matches_bochner_monte_carlo() {
        let k = KernelSpec::gaussian(1.5).unwrap();
        let (x, y) = ([0.2, -0.4], [-0.5, 0.3]);
        let m = 100_000;
        let om = draw_frequencies(k.dual_law(2).unwrap(), m, 3).unwrap();
        let u = [x[0] - y[0], x[1] - y[1]];
        let mc = om.columns().map(|w| dot(w, &u).cos()).sum::<f64>() / m as f64;
        let exact = kernel_eval(&x, &y, &k).unwrap();
        assert!((mc - exact).abs() <= 3.0 / (m as f64).sqrt());
    }

    #[test]
    fn mmd_of_identical_sets_vanishes() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let x = random_set(40, 2, 1);
        assert!(mmd_squared_exact(&x, &x, &k).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn mmd_two_point_closed_form() {
        let k = KernelSpec::gaussian(2.0).unwrap();
        let x = SampleSet::new(1, vec![0.0]).unwrap();
        let y = SampleSet::new(1, vec![1.0]).unwrap();
        let v = mmd_squared_exact(&x, &y, &k).unwrap();
        assert_relative_eq!(v, 2.0 * (1.0 - (-1.0f64).exp()), epsilon = 1e-15);
        assert_relative_eq!(v, 1.264241, epsilon = 1e-6);
    }

    #[test]
    fn mmd_matches_triple_loop() {
        let k = KernelSpec::gaussian(0.7).unwrap();
        let x = random_set(50, 3, 2);
        let y = random_set(50, 3, 3);
        let fast = mmd_squared_exact(&x, &y, &k).unwrap();
        let slow = naive_mmd(&x, &y, 0.7);
        assert!(((fast - slow) / slow).abs() <= 1e-12, "{fast} vs {slow}");
    }

    #[test]
    fn mmd_rejects_empty_or_mismatched() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let x = random_set(3, 2, 1);
        let e = SampleSet::with_capacity(2, 0);
        assert!(mmd_squared_exact(&x, &e, &k).is_err());
        assert!(mmd_squared_exact(&x, &random_set(3, 1, 1), &k).is_err());
        assert!(mmd_gn_cost_exact(&e, &x, &k).is_err());
    }

    #[test]
    fn gn_cost_examples() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let x = random_set(20, 2, 5);
        let self_term = mean_kernel(&x, &x, &k, Exec::Sequential);
        assert_relative_eq!(mmd_gn_cost_exact(&x, &x, &k).unwrap(), -self_term, epsilon = 1e-14);
        let o = SampleSet::new(1, vec![0.0]).unwrap();
        assert_eq!(mmd_gn_cost_exact(&o, &o, &KernelSpec::gaussian(9.0).unwrap()).unwrap(), -1.0);
    }

    #[test]
    fn gn_cost_recombines_to_mmd() {
        let k = KernelSpec::gaussian(1.3).unwrap();
        for seed in 0..5 {
            let x = random_set(30, 2, 100 + seed);
            let g = random_set(30, 2, 200 + seed);
            let lhs = mmd_gn_cost_exact(&x, &g, &k).unwrap() + mean_kernel(&x, &x, &k, Exec::default());
            let rhs = mmd_squared_exact(&x, &g, &k).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12);
        }
    }

    #[test]
    fn bochner_examples() {
        let law = FrequencyLaw::new(LawKind::Gaussian, 1.0, 2).unwrap();
        let at0 = bochner_check(law, &[0.0, 0.0], 100, 1).unwrap();
        assert_eq!(at0.estimate, 1.0);
        assert_eq!(at0.closed_form, Some(1.0));

        let m = 100_000;
        let u = [0.6, 0.8];
        let b = bochner_check(law, &u, m, 2).unwrap();
        assert!((b.estimate - (-0.5f64).exp()).abs() <= 3.0 / (m as f64).sqrt());

        let law4 = FrequencyLaw::new(LawKind::Gaussian, 4.0, 2).unwrap();
        let c = bochner_check(law4, &[1.0, 0.0], 10, 3).unwrap();
        assert_relative_eq!(c.closed_form.unwrap(), (-2.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(c.closed_form.unwrap(), 0.135335, epsilon = 1e-6);

        let folded = FrequencyLaw::new(LawKind::FoldedGaussian, 1.0, 2).unwrap();
        assert_eq!(bochner_check(folded, &u, 10, 3).unwrap().closed_form, None);
        assert!(bochner_check(law, &u, 0, 3).is_err());
    }

    #[test]
    fn bochner_consistency_on_grid() {
        let m = 10_000;
        let tol = 3.0 / (m as f64).sqrt();
        let law = FrequencyLaw::new(LawKind::Gaussian, 1.0, 2).unwrap();
        let mut failures = 0;
        for seed in 0..20 {
            for r in [0.0, 0.5, 1.0, 2.0, 4.0] {
                let u = [r * 0.6, r * 0.8];
                let b = bochner_check(law, &u, m, seed).unwrap();
                if (b.estimate - b.closed_form.unwrap()).abs() > tol {
                    failures += 1;
                }
            }
        }
        assert!(failures <= 1, "{failures} grid failures");
    }

    #[test]
    fn sketch_gap_examples() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let om = draw_frequencies(k.dual_law(2).unwrap(), 512, 1).unwrap();
        let x = random_set(30, 2, 1);
        assert!(sketch_mmd_gap(&x, &x, &om, &k).unwrap() <= 1e-12);

        let bad = draw_frequencies(FrequencyLaw::new(LawKind::Gaussian, 2.0, 2).unwrap(), 8, 1).unwrap();
        assert!(sketch_mmd_gap(&x, &x, &bad, &k).is_err());
        let folded = draw_frequencies(FrequencyLaw::new(LawKind::FoldedGaussian, 1.0, 2).unwrap(), 8, 1).unwrap();
        assert!(sketch_mmd_gap(&x, &x, &folded, &k).is_err());
    }

    #[test]
    fn sketch_gap_shrinks_with_m() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let x = random_set(64, 2, 10);
        let y = random_set(64, 2, 11);
        let median_gap = |m: usize| {
            let mut gaps: Vec<f64> = (0..15)
                .map(|s| {
                    let om = draw_frequencies(k.dual_law(2).unwrap(), m, s).unwrap();
                    sketch_mmd_gap(&x, &y, &om, &k).unwrap()
                })
                .collect();
            gaps.sort_by(f64::total_cmp);
            gaps[gaps.len() / 2]
        };
        let (a, b, c) = (median_gap(64), median_gap(1024), median_gap(16384));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    proptest! {
        #[test]
        fn mmd_symmetric_and_nonnegative(n1 in 1usize..20, n2 in 1usize..20, seed in 0u64..500, s2 in 0.05f64..5.0) {
            let k = KernelSpec::gaussian(s2).unwrap();
            let x = random_set(n1, 2, seed);
            let y = random_set(n2, 2, seed + 1000);
            let a = mmd_squared_exact(&x, &y, &k).unwrap();
            let b = mmd_squared_exact(&y, &x, &k).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!(a >= -1e-12);
        }
    }
}
