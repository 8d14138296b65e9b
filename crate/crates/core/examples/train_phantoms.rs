//! Trains the full model on phantoms with balanced sampling and saves a
//! checkpoint. Defaults are small enough for a quick run.
//!
//!     cargo run --release --example train_phantoms -- [train_images] [steps] [out.ckpt]

use sparseg::model::{ModelConfig, ResidualTransformer};
use sparseg::trainer::{draw_sample_set, train, EvalSet, TrainConfig, TrainImage};
use sparseg::volume::{generate_phantom, PhantomConfig};

fn images(seeds: std::ops::Range<u64>) -> Result<Vec<TrainImage>, Box<dyn std::error::Error>> {
    seeds
        .map(|seed| {
            let (v, l) = generate_phantom(&PhantomConfig { seed, ..Default::default() })?;
            Ok(TrainImage::new(&v, l)?)
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: u64 = args.next().map_or(Ok(6), |s| s.parse())?;
    let steps: usize = args.next().map_or(Ok(200), |s| s.parse())?;
    let out = args.next().unwrap_or_else(|| "phantoms.ckpt".into());

    let train_images = images(0..n)?;
    let test_images = images(1000..1002)?;
    let cfg = TrainConfig { max_steps: steps, eval_every: (steps / 4).max(1), ..Default::default() };
    let samples = draw_sample_set(&train_images, &cfg, cfg.seed)?;
    let eval_samples = draw_sample_set(&test_images, &cfg, cfg.seed + 1)?;
    println!("{} training windows from {n} phantoms", samples.len());

    let mut model = ResidualTransformer::new(ModelConfig::default())?;
    let eval = EvalSet { images: &test_images, samples: &eval_samples };
    train(&mut model, &train_images, &samples, &cfg, Some(eval), |r| {
        println!("step {:>5}  loss {:.4}  held-out dice {:?}", r.step, r.loss, r.mean_dice);
    })?;
    model.save_file(&out)?;
    println!("saved {out}");
    Ok(())
}
