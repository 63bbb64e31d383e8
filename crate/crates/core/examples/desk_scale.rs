//! Trains the default generator on a 10⁴-sample toy dataset sketched with 10³
//! folded-Gaussian frequencies and reports cost, ring fraction and histogram TV.
//!
//! `cargo run --release --example desk_scale -- [dataset] [frequency σ²] [epochs] [lr]`

use std::time::Instant;

use clgn::datasets::DatasetSpec;
use clgn::exec::Exec;
use clgn::generator::{forward_batch, Architecture, LatentBatch};
use clgn::rff_sketch::{draw_frequencies, sketch_samples, FrequencyLaw, LawKind};
use clgn::trainer::{train_with, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dataset = args.get(1).map(String::as_str).unwrap_or("circle");
    let sigma2: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e3);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(500);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let data = DatasetSpec::default_for(dataset).unwrap().generate(10_000, 1).unwrap();
    let law = FrequencyLaw::new(LawKind::FoldedGaussian, sigma2, 2).unwrap();
    let omega = draw_frequencies(law, 1000, 1).unwrap();
    let sketch = sketch_samples(&data, &omega, Exec::default()).unwrap();
    let cfg = TrainConfig {
        n_prime: 10_000,
        batch_size: 1000,
        epochs,
        learning_rate: lr,
        ..Default::default()
    };
    let t = Instant::now();
    let (params, report) = train_with(&sketch, &omega, &Architecture::default(), &cfg, Exec::default(), |ev| {
        if ev.epoch % 25 == 0 {
            println!("epoch {} cost {:.4e} ({:.1}s)", ev.epoch, ev.cost, t.elapsed().as_secs_f64());
        }
        Ok(())
    })
    .unwrap();
    println!("initial {:.4e} final {:.4e} ratio {:.4}", report.initial_cost, report.final_cost(), report.final_cost() / report.initial_cost);
    let z = LatentBatch::sample(10, 50_000, 12345).unwrap();
    let gen = forward_batch(&params, &z.z).unwrap();
    let ring = gen.rows().filter(|p| ((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() <= 0.15).count();
    println!("ring fraction {:.4}", ring as f64 / 50_000.0);
    let truth = DatasetSpec::default_for(dataset).unwrap().generate(50_000, 777).unwrap();
    let r = clgn::datasets::HistRange::default();
    let h1 = clgn::datasets::histogram2d(&truth, 64, 64, r).unwrap();
    let h2 = clgn::datasets::histogram2d(&gen, 64, 64, r).unwrap();
    println!("tv {:.4}", clgn::datasets::tv_distance(&h1, &h2).unwrap());
}
