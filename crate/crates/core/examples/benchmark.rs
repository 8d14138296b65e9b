//! Whole-volume timing on a 96³ phantom, plus the gather-phase scaling
//! when the extent doubles per axis.
//!
//!     cargo run --release --example benchmark -- [threads] [variant]

use sparseg::bench::{bench_segment, BenchOptions};
use sparseg::model::{ModelConfig, ResidualTransformer, Variant};
use sparseg::volume::{generate_phantom, PhantomConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let threads: usize = args.next().map_or(Ok(1), |s| s.parse())?;
    let variant: Variant = args.next().map_or(Ok(Variant::Full), |s| s.parse())?;
    let model = ResidualTransformer::new(ModelConfig { variant, ..Default::default() })?;
    let opts = BenchOptions { threads, ..Default::default() };

    let (small, _) = generate_phantom(&PhantomConfig { dims: [48; 3], ..Default::default() })?;
    let (large, _) = generate_phantom(&PhantomConfig::default())?;
    let a = bench_segment(&model, &small, &opts)?;
    let b = bench_segment(&model, &large, &opts)?;
    print!("{}\n{}", a.to_table(), b.to_table());
    println!(
        "doubling the extent: queries x{:.2}, gather time x{:.2}",
        b.queries as f64 / a.queries as f64,
        b.median.gather / a.median.gather
    );
    Ok(())
}
