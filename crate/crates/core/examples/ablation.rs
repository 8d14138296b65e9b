//! Backbone ablation on twin-organ phantoms: every variant trained under the
//! same budget and scored on the same held-out phantoms.
//!
//!     cargo run --release --example ablation -- [train_images] [steps]

use sparseg::bench::run_ablation;
use sparseg::model::{ModelConfig, Variant};
use sparseg::trainer::{TrainConfig, TrainImage};
use sparseg::volume::{generate_phantom, PhantomConfig, TWIN_CLASSES};

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
    let n: u64 = args.next().map_or(Ok(4), |s| s.parse())?;
    let steps: usize = args.next().map_or(Ok(100), |s| s.parse())?;
    let train = images(0..n)?;
    let test = images(1000..1002)?;
    let budget = TrainConfig { max_steps: steps, ..Default::default() };
    let variants = Variant::ALL.map(|variant| ModelConfig { variant, ..Default::default() });
    let report = run_ablation(&train, &test, &variants, &budget, 1)?;
    print!("{}", report.to_table(&TWIN_CLASSES));
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
