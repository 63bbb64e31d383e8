//! Synthetic 2-D datasets and histogram comparison.

use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{streams, SeededRng};
use crate::samples::SampleSet;

pub const DEFAULT_SPIRAL_SIGMA_R: f64 = 0.02;
pub const DEFAULT_CIRCLE_RADIUS: f64 = 1.0;
pub const DEFAULT_CIRCLE_SIGMA_R: f64 = 0.05;
pub const DEFAULT_GMM_RADIUS: f64 = 1.0;
pub const DEFAULT_GMM_SIGMA: f64 = 0.12;
pub const GMM_COMPONENTS: usize = 6;

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("number of samples must be at least 1"));
    }
    Ok(())
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::invalid(format!("{name} must be nonnegative and finite, got {v}")));
    }
    Ok(())
}

/// Polar pairs `(r, φ)` with `φ ~ U[0, 2π)` and `r` drawn by `radius(φ, rng)`.
fn polar_pairs<F>(n: usize, seed: u64, mut radius: F) -> Vec<(f64, f64)>
where
    F: FnMut(f64, &mut SeededRng) -> f64,
{
    let mut rng = SeededRng::new(seed, streams::DATASET);
    (0..n)
        .map(|_| {
            let phi = TAU * rng.uniform();
            (radius(phi, &mut rng), phi)
        })
        .collect()
}

fn to_cartesian(pairs: &[(f64, f64)]) -> SampleSet {
    let mut out = SampleSet::with_capacity(2, pairs.len());
    for &(r, phi) in pairs {
        let (s, c) = phi.sin_cos();
        out.push(&[r * c, r * s]).expect("2-D row");
    }
    out
}

/// Spiral in polar form, `(r_i, φ_i)` pairs.
pub fn gen_spiral_polar(n: usize, sigma_r: f64, seed: u64) -> Result<Vec<(f64, f64)>> {
    check_n(n)?;
    check_scale("sigma_r", sigma_r)?;
    Ok(polar_pairs(n, seed, |phi, rng| phi / TAU + sigma_r * rng.normal()))
}

/// Spiral: `r = φ/(2π) + N(0, σ_r²)`.
pub fn gen_spiral(n: usize, sigma_r: f64, seed: u64) -> Result<SampleSet> {
    Ok(to_cartesian(&gen_spiral_polar(n, sigma_r, seed)?))
}

/// Circle: `r = R + N(0, σ_r²)`.
pub fn gen_circle(n: usize, radius: f64, sigma_r: f64, seed: u64) -> Result<SampleSet> {
    check_n(n)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("circle radius must be positive, got {radius}")));
    }
    check_scale("sigma_r", sigma_r)?;
    Ok(to_cartesian(&polar_pairs(n, seed, |_, rng| radius + sigma_r * rng.normal())))
}

/// Mean of GMM-6 component `k`.
pub fn gmm6_mean(k: usize, radius: f64) -> [f64; 2] {
    let a = TAU * k as f64 / GMM_COMPONENTS as f64;
    [radius * a.cos(), radius * a.sin()]
}

/// Equal-weight mixture of six isotropic Gaussians with means evenly spaced
/// on a circle.
pub fn gen_gmm6(n: usize, seed: u64, radius: f64, comp_sigma: f64) -> Result<SampleSet> {
    check_n(n)?;
    check_scale("radius", radius)?;
    check_scale("comp_sigma", comp_sigma)?;
    let mut rng = SeededRng::new(seed, streams::DATASET);
    let mut out = SampleSet::with_capacity(2, n);
    for _ in 0..n {
        let mu = gmm6_mean(rng.below(GMM_COMPONENTS), radius);
        let (gx, gy) = (rng.normal(), rng.normal());
        out.push(&[mu[0] + comp_sigma * gx, mu[1] + comp_sigma * gy])?;
    }
    Ok(out)
}

/// Named dataset with its generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Spiral { sigma_r: f64 },
    Gmm6 { radius: f64, comp_sigma: f64 },
    Circle { radius: f64, sigma_r: f64 },
}

impl DatasetSpec {
    pub fn default_for(name: &str) -> Result<Self> {
        match name {
            "spiral" => Ok(DatasetSpec::Spiral {
                sigma_r: DEFAULT_SPIRAL_SIGMA_R,
            }),
            "gmm6" | "gmm" => Ok(DatasetSpec::Gmm6 {
                radius: DEFAULT_GMM_RADIUS,
                comp_sigma: DEFAULT_GMM_SIGMA,
            }),
            "circle" => Ok(DatasetSpec::Circle {
                radius: DEFAULT_CIRCLE_RADIUS,
                sigma_r: DEFAULT_CIRCLE_SIGMA_R,
            }),
            other => Err(Error::invalid(format!(
                "unknown dataset `{other}` (expected spiral, gmm6 or circle)"
            ))),
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<SampleSet> {
        match *self {
            DatasetSpec::Spiral { sigma_r } => gen_spiral(n, sigma_r, seed),
            DatasetSpec::Gmm6 { radius, comp_sigma } => gen_gmm6(n, seed, radius, comp_sigma),
            DatasetSpec::Circle { radius, sigma_r } => gen_circle(n, radius, sigma_r, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistRange {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for HistRange {
    fn default() -> Self {
        Self {
            x_min: -1.5,
            x_max: 1.5,
            y_min: -1.5,
            y_max: 1.5,
        }
    }
}

pub const DEFAULT_BINS: usize = 64;

/// Equal-width 2-D histogram. Bins are right-open except the last one in each
/// axis, which also takes the upper edge. Samples outside the range go to
/// `overflow`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub bins_x: usize,
    pub bins_y: usize,
    pub range: HistRange,
    /// Row-major counts, `counts[iy * bins_x + ix]`.
    pub counts: Vec<u64>,
    pub overflow: u64,
    pub total: u64,
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> Option<usize> {
    if !(v >= lo && v <= hi) {
        return None;
    }
    let idx = ((v - lo) / (hi - lo) * bins as f64).floor() as usize;
    Some(idx.min(bins - 1))
}

impl Histogram2D {
    pub fn new(bins_x: usize, bins_y: usize, range: HistRange) -> Result<Self> {
        if bins_x == 0 || bins_y == 0 {
            return Err(Error::invalid("histogram needs at least one bin per axis"));
        }
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && hi > lo;
        if !ok(range.x_min, range.x_max) || !ok(range.y_min, range.y_max) {
            return Err(Error::invalid(format!("degenerate histogram range {range:?}")));
        }
        Ok(Self {
            bins_x,
            bins_y,
            range,
            counts: vec![0; bins_x * bins_y],
            overflow: 0,
            total: 0,
        })
    }

    pub fn add(&mut self, p: &[f64]) {
        self.total += 1;
        let r = &self.range;
        match (
            bin_index(p[0], r.x_min, r.x_max, self.bins_x),
            bin_index(p[1], r.y_min, r.y_max, self.bins_y),
        ) {
            (Some(ix), Some(iy)) => self.counts[iy * self.bins_x + ix] += 1,
            _ => self.overflow += 1,
        }
    }

    pub fn count(&self, ix: usize, iy: usize) -> u64 {
        self.counts[iy * self.bins_x + ix]
    }

    pub fn in_range(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn same_binning(&self, other: &Histogram2D) -> bool {
        self.bins_x == other.bins_x && self.bins_y == other.bins_y && self.range == other.range
    }

    /// CSV grid, one line per y-bin from bottom to top.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for row in self.counts.chunks_exact(self.bins_x) {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Plain PGM (P2). Gray levels are log-scaled counts, white for empty
    /// bins and black for the fullest bin; the top row is the largest y.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "P2")?;
        writeln!(w, "{} {}", self.bins_x, self.bins_y)?;
        writeln!(w, "255")?;
        let max = self.counts.iter().copied().max().unwrap_or(0);
        let denom = (1.0 + max as f64).ln();
        for row in self.counts.chunks_exact(self.bins_x).rev() {
            let line: Vec<String> = row
                .iter()
                .map(|&c| {
                    let level = if max == 0 {
                        0.0
                    } else {
                        (1.0 + c as f64).ln() / denom
                    };
                    (255.0 - (255.0 * level).round()).to_string()
                })
                .collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

pub fn histogram2d(samples: &SampleSet, bins_x: usize, bins_y: usize, range: HistRange) -> Result<Histogram2D> {
    if samples.dim() != 2 {
        return Err(Error::invalid(format!(
            "histograms need 2-D samples, got dimension {}",
            samples.dim()
        )));
    }
    let mut h = Histogram2D::new(bins_x, bins_y, range)?;
    for p in samples.rows() {
        h.add(p);
    }
    Ok(h)
}

/// Total variation between the normalized histograms, with the overflow mass
/// treated as one extra cell.
pub fn tv_distance(h1: &Histogram2D, h2: &Histogram2D) -> Result<f64> {
    if !h1.same_binning(h2) {
        return Err(Error::invalid("histograms have different binning"));
    }
    if h1.total == 0 || h2.total == 0 {
        return Err(Error::invalid("cannot normalize an empty histogram"));
    }
    let (t1, t2) = (h1.total as f64, h2.total as f64);
    let cells: f64 = h1
        .counts
        .iter()
        .zip(&h2.counts)
        .chain(std::iter::once((&h1.overflow, &h2.overflow)))
        .map(|(a, b)| (*a as f64 / t1 - *b as f64 / t2).abs())
        .sum();
    Ok(0.5 * cells)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    use super::*;
    use crate::test_support::ks_uniform_pvalue;

    fn angle(p: &[f64]) -> f64 {
        p[1].atan2(p[0]).rem_euclid(TAU)
    }

    #[test]
    fn noiseless_spiral_on_manifold() {
        let s = gen_spiral(5000, 0.0, 1).unwrap();
        for p in s.rows() {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - angle(p) / TAU).abs() <= 1e-9);
        }
    }

    #[test]
    fn spiral_angles_uniform() {
        let pairs = gen_spiral_polar(100_000, DEFAULT_SPIRAL_SIGMA_R, 2).unwrap();
        let mut u: Vec<f64> = pairs.iter().map(|(_, phi)| phi / TAU).collect();
        assert!(ks_uniform_pvalue(&mut u) > 0.01);
        assert_eq!(to_cartesian(&pairs), gen_spiral(100_000, DEFAULT_SPIRAL_SIGMA_R, 2).unwrap());
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_spiral(100, 0.1, 3).unwrap(), gen_spiral(100, 0.1, 3).unwrap());
        assert_eq!(gen_circle(100, 1.0, 0.1, 3).unwrap(), gen_circle(100, 1.0, 0.1, 3).unwrap());
        assert_eq!(gen_gmm6(100, 3, 1.0, 0.1).unwrap(), gen_gmm6(100, 3, 1.0, 0.1).unwrap());
        assert_ne!(gen_circle(100, 1.0, 0.1, 3).unwrap(), gen_circle(100, 1.0, 0.1, 4).unwrap());
    }

    #[test]
    fn invalid_arguments() {
        assert!(gen_spiral(0, 0.1, 1).is_err());
        assert!(gen_spiral(10, -0.1, 1).is_err());
        assert!(gen_circle(10, 0.0, 0.1, 1).is_err());
        assert!(gen_circle(10, 1.0, f64::NAN, 1).is_err());
        assert!(gen_gmm6(0, 1, 1.0, 0.1).is_err());
        assert!(DatasetSpec::default_for("moons").is_err());
    }

    #[test]
    fn degenerate_gmm_hits_means() {
        let s = gen_gmm6(600, 5, 1.0, 0.0).unwrap();
        for p in s.rows() {
            let near = (0..6).any(|k| {
                let mu = gmm6_mean(k, 1.0);
                ((p[0] - mu[0]).powi(2) + (p[1] - mu[1]).powi(2)).sqrt() <= 1e-9
            });
            assert!(near);
        }
    }

    #[test]
    fn gmm_component_counts_multinomial() {
        let n = 60_000;
        let s = gen_gmm6(n, 6, 1.0, 0.0).unwrap();
        let mut counts = [0usize; 6];
        for p in s.rows() {
            let k = (0..6)
                .min_by(|&a, &b| {
                    let da = { let m = gmm6_mean(a, 1.0); (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2) };
                    let db = { let m = gmm6_mean(b, 1.0); (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2) };
                    da.total_cmp(&db)
                })
                .unwrap();
            counts[k] += 1;
        }
        let expect = n as f64 / 6.0;
        let sd = (n as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expect).abs() <= 4.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn gmm_sample_mean_near_origin() {
        let n = 60_000;
        let sigma = DEFAULT_GMM_SIGMA;
        let s = gen_gmm6(n, 7, 1.0, sigma).unwrap();
        // the component label contributes variance 1/2 per axis on top of σ²
        let sd = ((0.5 + sigma * sigma) / n as f64).sqrt();
        for k in 0..2 {
            let mean = s.rows().map(|p| p[k]).sum::<f64>() / n as f64;
            assert!(mean.abs() <= 4.0 * sd, "axis {k}: {mean}");
        }
    }

    #[test]
    fn noiseless_circle_has_fixed_radius() {
        let s = gen_circle(1000, 1.7, 0.0, 1).unwrap();
        for p in s.rows() {
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.7).abs() <= 1e-12);
        }
    }

    #[test]
    fn circle_mean_radius_clt() {
        let n = 100_000;
        let s = gen_circle(n, 1.0, 0.05, 9).unwrap();
        let mean = s.rows().map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() <= 4.0 * 0.05 / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn histogram_single_center_sample() {
        let s = SampleSet::new(2, vec![0.1, 0.1]).unwrap();
        let h = histogram2d(&s, 4, 4, HistRange { x_min: 0.0, x_max: 0.2, y_min: 0.0, y_max: 0.2 }).unwrap();
        assert_eq!(h.in_range(), 1);
        assert_eq!(h.count(2, 2), 1);
        assert_eq!(h.counts.iter().filter(|c| **c > 0).count(), 1);
    }

    #[test]
    fn histogram_bin_centers_and_edges() {
        let range = HistRange::default();
        let (bx, by) = (8, 5);
        let mut s = SampleSet::with_capacity(2, bx * by);
        let (wx, wy) = (3.0 / bx as f64, 3.0 / by as f64);
        for iy in 0..by {
            for ix in 0..bx {
                s.push(&[-1.5 + (ix as f64 + 0.5) * wx, -1.5 + (iy as f64 + 0.5) * wy]).unwrap();
            }
        }
        let h = histogram2d(&s, bx, by, range).unwrap();
        assert!(h.counts.iter().all(|c| *c == 1));

        let edges = SampleSet::new(2, vec![1.5, 1.5, -1.5, -1.5, 1.6, 0.0, f64::NAN, 0.0]).unwrap();
        let h = histogram2d(&edges, bx, by, range).unwrap();
        assert_eq!(h.count(bx - 1, by - 1), 1);
        assert_eq!(h.count(0, 0), 1);
        assert_eq!(h.overflow, 2);
        assert_eq!(h.total, 4);
    }

    #[test]
    fn histogram_rejects_degenerate_range() {
        let s = SampleSet::new(2, vec![0.0, 0.0]).unwrap();
        let r = HistRange { x_min: 1.0, x_max: 1.0, ..Default::default() };
        assert!(histogram2d(&s, 4, 4, r).is_err());
        assert!(histogram2d(&s, 0, 4, HistRange::default()).is_err());
        assert!(histogram2d(&SampleSet::new(1, vec![0.0]).unwrap(), 4, 4, HistRange::default()).is_err());
    }

    #[test]
    fn uniform_samples_pass_chi_square() {
        let mut rng = SeededRng::new(4, 0);
        let data = (0..20_000).map(|_| 3.0 * rng.uniform() - 1.5).collect();
        let s = SampleSet::new(2, data).unwrap();
        let h = histogram2d(&s, 8, 8, HistRange::default()).unwrap();
        let expect = 10_000.0 / 64.0;
        let chi2: f64 = h.counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        let p = 1.0 - ChiSquared::new(63.0).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn tv_examples() {
        let range = HistRange::default();
        let a = histogram2d(&gen_circle(1000, 1.0, 0.05, 1).unwrap(), 16, 16, range).unwrap();
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        let left = SampleSet::new(2, vec![-1.0, 0.0, -1.2, 0.3]).unwrap();
        let right = SampleSet::new(2, vec![1.0, 0.0, 1.2, 0.3, 1.1, 1.1]).unwrap();
        let (hl, hr) = (histogram2d(&left, 16, 16, range).unwrap(), histogram2d(&right, 16, 16, range).unwrap());
        assert!((tv_distance(&hl, &hr).unwrap() - 1.0).abs() <= 1e-15);
        let other = histogram2d(&left, 8, 16, range).unwrap();
        assert!(tv_distance(&hl, &other).is_err());
    }

    #[test]
    fn same_law_circle_baseline() {
        let range = HistRange::default();
        let a = histogram2d(&gen_circle(50_000, 1.0, 0.05, 1).unwrap(), 64, 64, range).unwrap();
        let b = histogram2d(&gen_circle(50_000, 1.0, 0.05, 2).unwrap(), 64, 64, range).unwrap();
        let tv = tv_distance(&a, &b).unwrap();
        assert!(tv <= 0.25, "{tv}");
    }

    #[test]
    fn pgm_is_valid_p2() {
        let h = histogram2d(&gen_spiral(2000, 0.02, 1).unwrap(), 10, 6, HistRange::default()).unwrap();
        let mut buf = Vec::new();
        h.write_pgm(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut tokens = text.split_whitespace();
        assert_eq!(tokens.next(), Some("P2"));
        assert_eq!(tokens.next(), Some("10"));
        assert_eq!(tokens.next(), Some("6"));
        assert_eq!(tokens.next(), Some("255"));
        let px: Vec<u32> = tokens.map(|t| t.parse().unwrap()).collect();
        assert_eq!(px.len(), 60);
        assert!(px.iter().all(|v| *v <= 255));
        assert!(px.contains(&0));
    }

    proptest! {
        #[test]
        fn histogram_conserves_mass(pts in prop::collection::vec(prop::array::uniform2(-3.0f64..3.0), 0..200)) {
            let rows: Vec<f64> = pts.iter().flatten().copied().collect();
            let s = SampleSet::new(2, rows).unwrap();
            let h = histogram2d(&s, 7, 9, HistRange::default()).unwrap();
            prop_assert_eq!(h.in_range() + h.overflow, h.total);
            prop_assert_eq!(h.total as usize, pts.len());
        }

        #[test]
        fn tv_is_a_metric(s1 in 0u64..50, s2 in 0u64..50, s3 in 0u64..50) {
            let range = HistRange::default();
            let h = |seed: u64| histogram2d(&gen_gmm6(300, seed, 1.0, 0.3).unwrap(), 12, 12, range).unwrap();
            let (a, b, c) = (h(s1), h(s2), h(s3));
            let ab = tv_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, tv_distance(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!(tv_distance(&a, &c).unwrap() <= ab + tv_distance(&b, &c).unwrap() + 1e-12);
        }
    }
}
