use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use super::{
    ArchArgs, BinningArgs, GenArgs, GenerateArgs, GradcheckArgs, HistArgs, HistCompareArgs, OracleArgs, SketchArgs,
    TrainArgs,
};
use crate::datasets::{histogram2d, tv_distance, DatasetSpec, HistRange, Histogram2D};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::formats::{
    read_checkpoint, read_samples_csv, read_sketch, write_checkpoint, write_frequencies, write_samples_csv,
    write_sketch, CsvRows,
};
use crate::generator::{forward_batch_with, Architecture, LatentBatch};
use crate::kernel_oracle::{mmd_squared_exact_with, time_exact_vs_sketch, KernelSpec};
use crate::rff_sketch::{draw_frequencies, sketch_samples, sketch_stream, FrequencyLaw, FrequencyMatrix, LawKind};
use crate::samples::SampleSet;
use crate::trainer::{gradient_check_random, train_with, OptimizerKind, TrainConfig, TrainReport};

const DEFAULT_KERNEL_VARIANCE: f64 = 1e-3;
const DEFAULT_M: usize = 10_000;

fn open(path: &Path) -> Result<Box<dyn BufRead>> {
    if path == Path::new("-") {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(path).map_err(|e| io_context(e, path))?;
    Ok(Box::new(BufReader::new(f)))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_context(e, path))
}

fn io_context(e: io::Error, path: &Path) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_samples(path: &Path) -> Result<SampleSet> {
    read_samples_csv(open(path)?)
}

fn write_samples_to(samples: &SampleSet, path: Option<&PathBuf>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            write_samples_csv(samples, &mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            write_samples_csv(samples, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

pub fn gen(a: GenArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?.dataset;
    let name = a
        .dataset
        .or(cfg.kind)
        .ok_or_else(|| Error::invalid("missing dataset name (spiral, gmm6 or circle)"))?;
    let n = a.n.or(cfg.n).ok_or_else(|| Error::invalid("missing --n"))?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let sigma_r_flag = a.sigma_r.or(cfg.sigma_r);
    let radius_flag = a.radius.or(cfg.radius);
    let comp_flag = a.comp_sigma.or(cfg.comp_sigma);

    let spec = match DatasetSpec::default_for(&name)? {
        DatasetSpec::Spiral { sigma_r } => DatasetSpec::Spiral {
            sigma_r: sigma_r_flag.unwrap_or(sigma_r),
        },
        DatasetSpec::Gmm6 { radius, comp_sigma } => DatasetSpec::Gmm6 {
            radius: radius_flag.unwrap_or(radius),
            comp_sigma: comp_flag.unwrap_or(comp_sigma),
        },
        DatasetSpec::Circle { radius, sigma_r } => DatasetSpec::Circle {
            radius: radius_flag.unwrap_or(radius),
            sigma_r: sigma_r_flag.unwrap_or(sigma_r),
        },
    };
    let samples = spec.generate(n, seed)?;
    write_samples_to(&samples, a.output.as_ref())?;
    if a.output.is_some() {
        writeln!(out, "n {} d {}", samples.len(), samples.dim())?;
    } else {
        log::info!("n {} d {}", samples.len(), samples.dim());
    }
    Ok(())
}

fn frequency_law(a: &SketchArgs, cfg: &super::config::SketchSection, dim: usize) -> Result<FrequencyLaw> {
    let kind = a.law.map(LawKind::from).or(cfg.law).unwrap_or(LawKind::FoldedGaussian);
    if let Some(s2) = a.sigma2 {
        return FrequencyLaw::new(kind, s2, dim);
    }
    if let Some(kv) = a.kernel_var {
        return FrequencyLaw::from_kernel_variance(kind, kv, dim);
    }
    match (cfg.sigma2, cfg.kernel_var) {
        (Some(_), Some(_)) => Err(Error::Config("set either sketch.sigma2 or sketch.kernel_var, not both".into())),
        (Some(s2), None) => FrequencyLaw::new(kind, s2, dim),
        (None, kv) => FrequencyLaw::from_kernel_variance(kind, kv.unwrap_or(DEFAULT_KERNEL_VARIANCE), dim),
    }
}

pub fn sketch(a: SketchArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?.sketch;
    let m = a.m.or(cfg.m).unwrap_or(DEFAULT_M);
    let seed = a.seed.or(cfg.seed).unwrap_or(0);

    // The dimension is only known after the first data row, but the rows must
    // be consumed in one pass, so peek it off the stream first.
    let mut rows = CsvRows::new(open(&a.input)?).peekable();
    let dim = match rows.peek() {
        Some(Ok(r)) => r.len(),
        Some(Err(_)) => {
            return Err(rows.next().and_then(|r| r.err()).expect("peeked error"));
        }
        None => a.dim,
    };
    let law = frequency_law(&a, &cfg, dim)?;
    let omega = draw_frequencies(law, m, seed)?;
    let sk = sketch_stream(rows, &omega, Exec::default())?;
    if sk.count == 0 {
        log::warn!("{} contains no samples; writing an empty sketch", a.input.display());
    }

    let mut w = create(&a.output)?;
    write_sketch(&sk, &mut w)?;
    w.flush()?;
    if let Some(p) = &a.export_frequencies {
        let mut w = create(p)?;
        write_frequencies(&omega, &mut w)?;
        w.flush()?;
    }
    writeln!(out, "count {}", sk.count)?;
    writeln!(out, "m {}", sk.m())?;
    writeln!(out, "fingerprint {:016x}", sk.fingerprint())?;
    Ok(())
}

fn architecture(a: &ArchArgs, cfg: &super::config::ArchSection, out_dim: usize) -> Result<Architecture> {
    let d = Architecture::default();
    Architecture::new(
        a.latent_dim.or(cfg.latent_dim).unwrap_or(d.latent_dim),
        a.hidden.clone().or_else(|| cfg.hidden.clone()).unwrap_or(d.hidden),
        out_dim,
        a.slope.or(cfg.slope).unwrap_or(d.leaky_slope),
    )
}

fn train_config(a: &TrainArgs, cfg: &super::config::TrainSection) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        n_prime: a.n_prime.or(cfg.n_prime).unwrap_or(d.n_prime),
        batch_size: a.batch_size.or(cfg.batch_size).unwrap_or(d.batch_size),
        epochs: a.epochs.or(cfg.epochs).unwrap_or(d.epochs),
        optimizer: a.optimizer.map(OptimizerKind::from).or(cfg.optimizer).unwrap_or(d.optimizer),
        learning_rate: a.lr.or(cfg.learning_rate).unwrap_or(d.learning_rate),
        adam_beta1: cfg.adam_beta1.unwrap_or(d.adam_beta1),
        adam_beta2: cfg.adam_beta2.unwrap_or(d.adam_beta2),
        adam_eps: cfg.adam_eps.unwrap_or(d.adam_eps),
        seed: a.seed.or(cfg.seed).unwrap_or(d.seed),
        resample_latents: a.resample_latents || cfg.resample_latents.unwrap_or(d.resample_latents),
    }
}

#[derive(Serialize)]
struct EffectiveSketch {
    fingerprint: String,
    count: u64,
    law: LawKind,
    sigma2: f64,
    m: usize,
    seed: u64,
}

#[derive(Serialize)]
struct EffectiveTrain<'a> {
    sketch: EffectiveSketch,
    arch: &'a Architecture,
    train: &'a TrainConfig,
    checkpoint_every: Option<usize>,
}

fn epoch_checkpoint_path(base: &Path, epoch: usize) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(format!(".epoch{epoch}"));
    PathBuf::from(s)
}

fn write_report(report: &TrainReport, path: Option<&PathBuf>) -> Result<()> {
    if let Some(p) = path {
        let mut w = create(p)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

pub fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let target = read_sketch(open(&a.sketch)?)?;
    if target.count == 0 {
        return Err(Error::Format(format!("{} is an empty sketch", a.sketch.display())));
    }
    let omega = FrequencyMatrix::regenerate(&target.spec)?;
    let arch = architecture(&a.arch, &cfg.arch, omega.dim())?;
    let tc = train_config(&a, &cfg.train);
    tc.validate()?;
    let every = a.checkpoint_every.or(cfg.train.checkpoint_every);
    if every == Some(0) {
        return Err(Error::invalid("--checkpoint-every must be at least 1"));
    }

    let effective = EffectiveTrain {
        sketch: EffectiveSketch {
            fingerprint: format!("{:016x}", target.fingerprint()),
            count: target.count,
            law: target.spec.law.kind,
            sigma2: target.spec.law.sigma2,
            m: target.spec.m,
            seed: target.spec.seed,
        },
        arch: &arch,
        train: &tc,
        checkpoint_every: every,
    };
    let echo = toml::to_string(&effective).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(out, "# effective configuration")?;
    write!(out, "{echo}")?;
    writeln!(out, "# parameters {}", arch.param_count())?;

    let log_every = (tc.epochs / 20).max(1);
    let result = train_with(&target, &omega, &arch, &tc, Exec::default(), |ev| {
        if ev.epoch % log_every == 0 || ev.epoch + 1 == tc.epochs {
            log::info!("epoch {} cost {:.6e}", ev.epoch + 1, ev.cost);
        }
        if let Some(k) = every {
            if (ev.epoch + 1) % k == 0 {
                let mut w = create(&epoch_checkpoint_path(&a.output, ev.epoch + 1))?;
                write_checkpoint(ev.params, &mut w)?;
                w.flush()?;
            }
        }
        Ok(())
    });
    let (params, report) = match result {
        Ok(r) => r,
        Err(Error::TrainingDiverged { epoch, last_report }) => {
            write_report(&last_report, a.report.as_ref())?;
            return Err(Error::TrainingDiverged { epoch, last_report });
        }
        Err(e) => return Err(e),
    };

    let mut w = create(&a.output)?;
    write_checkpoint(&params, &mut w)?;
    w.flush()?;
    write_report(&report, a.report.as_ref())?;
    writeln!(out, "initial_cost {:.6e}", report.initial_cost)?;
    writeln!(out, "final_cost {:.6e}", report.final_cost())?;
    writeln!(out, "ratio {:.6e}", report.final_cost() / report.initial_cost)?;
    Ok(())
}

pub fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let params = read_checkpoint(open(&a.checkpoint)?)?;
    let latents = LatentBatch::sample(params.arch().latent_dim, a.n, a.seed)?;
    let samples = forward_batch_with(&params, &latents.z, Exec::default())?;
    write_samples_to(&samples, a.output.as_ref())?;
    if a.output.is_some() {
        writeln!(out, "n {} d {}", samples.len(), samples.dim())?;
    }
    Ok(())
}

fn hist_range(b: &BinningArgs) -> Result<HistRange> {
    let r = match &b.range {
        None => HistRange::default(),
        Some(v) => {
            let [x_min, x_max, y_min, y_max] = v[..] else {
                return Err(Error::invalid("--range takes xmin,xmax,ymin,ymax"));
            };
            HistRange {
                x_min,
                x_max,
                y_min,
                y_max,
            }
        }
    };
    Ok(r)
}

fn build_hist(path: &Path, b: &BinningArgs) -> Result<Histogram2D> {
    let samples = read_samples(path)?;
    if !samples.is_empty() && samples.dim() != 2 {
        return Err(Error::Format(format!(
            "{}: histograms need 2-D samples, found dimension {}",
            path.display(),
            samples.dim()
        )));
    }
    histogram2d(&samples, b.bins, b.bins, hist_range(b)?)
}

pub fn hist(a: HistArgs, out: &mut dyn Write) -> Result<()> {
    let h = build_hist(&a.input, &a.binning)?;
    if let Some(p) = &a.csv {
        let mut w = create(p)?;
        h.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = &a.pgm {
        let mut w = create(p)?;
        h.write_pgm(&mut w)?;
        w.flush()?;
    }
    writeln!(out, "total {}", h.total)?;
    writeln!(out, "in_range {}", h.in_range())?;
    writeln!(out, "overflow {}", h.overflow)?;
    Ok(())
}

pub fn hist_compare(a: HistCompareArgs, out: &mut dyn Write) -> Result<()> {
    let ha = build_hist(&a.a, &a.binning)?;
    let hb = build_hist(&a.b, &a.binning)?;
    writeln!(out, "tv {:.6}", tv_distance(&ha, &hb)?)?;
    Ok(())
}

pub fn oracle(a: OracleArgs, out: &mut dyn Write) -> Result<()> {
    let x = read_samples(&a.x)?;
    let y = read_samples(&a.y)?;
    if x.is_empty() || y.is_empty() {
        return Err(Error::Format("both sample files need at least one row".into()));
    }
    if x.dim() != y.dim() {
        return Err(Error::Format(format!("dimension mismatch: {} vs {}", x.dim(), y.dim())));
    }
    if a.seeds == 0 {
        return Err(Error::invalid("--seeds must be at least 1"));
    }
    let k = KernelSpec::gaussian(positive("--sigma2", a.sigma2)?)?;
    let law = k.dual_law(x.dim())?;
    let exec = Exec::default();
    let mmd = mmd_squared_exact_with(&x, &y, &k, exec)?;
    writeln!(out, "mmd_sq {mmd:.9e}")?;
    writeln!(out, "seed,sketch_distance_sq,relative_gap")?;
    let mut gaps = Vec::with_capacity(a.seeds as usize);
    for s in a.seed..a.seed + a.seeds {
        let omega = draw_frequencies(law, a.m, s)?;
        let d = sketch_samples(&x, &omega, exec)?.distance_sq(&sketch_samples(&y, &omega, exec)?)?;
        let rel = (d - mmd).abs() / mmd;
        gaps.push(rel);
        writeln!(out, "{s},{d:.9e},{rel:.6e}")?;
    }
    gaps.sort_by(f64::total_cmp);
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    writeln!(out, "median_relative_gap {:.6e}", gaps[gaps.len() / 2])?;
    writeln!(out, "mean_relative_gap {mean:.6e}")?;
    writeln!(out, "max_relative_gap {:.6e}", gaps[gaps.len() - 1])?;

    if !a.no_timing {
        let n = x.len().min(y.len());
        let sizes = a.timing_sizes.clone().unwrap_or_else(|| {
            let mut s: Vec<usize> = [n / 8, n / 4, n / 2, n].into_iter().filter(|&v| v > 0).collect();
            s.dedup();
            s
        });
        let omega = draw_frequencies(law, a.m, a.seed)?;
        let rows = time_exact_vs_sketch(&x, &y, &omega, &k, &sizes, a.timing_reps, exec)?;
        writeln!(out, "n,exact_ms,sketch_ms")?;
        for r in rows {
            writeln!(out, "{},{:.4},{:.4}", r.n, r.exact_ms, r.sketch_ms)?;
        }
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let arch = architecture(&a.arch, &Default::default(), 2)?;
    positive("--sigma2", a.sigma2)?;
    positive("--tol", a.tol)?;
    if a.seeds == 0 {
        return Err(Error::invalid("--seeds must be at least 1"));
    }
    writeln!(out, "parameters {}", arch.param_count())?;
    let mut worst = 0.0f64;
    for seed in a.seed..a.seed + a.seeds {
        let c = gradient_check_random(&arch, a.m, a.batch_size, a.sigma2, seed, a.step)?;
        writeln!(
            out,
            "seed {seed} max_rel_err {:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
            c.max_rel_err, c.worst_index, c.analytic[c.worst_index], c.numeric[c.worst_index]
        )?;
        worst = worst.max(c.max_rel_err);
    }
    if worst > a.tol {
        return Err(Error::GradientCheck {
            max_rel_err: worst,
            tolerance: a.tol,
        });
    }
    writeln!(out, "ok max_rel_err {worst:.3e} <= {:.1e}", a.tol)?;
    Ok(())
}
