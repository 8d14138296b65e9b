//! Samples the 6561-value descriptor at the centre of a phantom and writes
//! it as an 81×81 PGM mosaic.
//!
//!     cargo run --release --example descriptor_mosaic -- [out.pgm]

use sparseg::sampler::{build_offset_table, default_layout, descriptor_to_mosaic, sample_descriptor, GRID_COUNT};
use sparseg::volume::{generate_phantom, normalize_intensity, PhantomConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "descriptor.pgm".into());
    let (v, _) = generate_phantom(&PhantomConfig::default())?;
    let norm = normalize_intensity(&v);
    let layout = default_layout();
    let table = build_offset_table(&layout, v.dims(), v.spacing());
    let q = v.dims().map(|d| d / 2);
    let d = sample_descriptor(&norm, &table, q)?;
    for g in 0..GRID_COUNT {
        let block = d.block(g);
        let mean = block.iter().sum::<f32>() / block.len() as f32;
        println!("grid {g} ({:?}): mean intensity {mean:.3}", layout.grids()[g].kind);
    }
    std::fs::write(&out, descriptor_to_mosaic(&d).to_pgm())?;
    println!("query {q:?}: wrote {out}");
    Ok(())
}
