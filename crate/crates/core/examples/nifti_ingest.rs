//! Reads a NIfTI-1 file (or writes and re-reads a phantom when no path is
//! given) and reports geometry and intensity range.
//!
//!     cargo run --release --example nifti_ingest -- [volume.nii]

use sparseg::volume::{generate_phantom, load_nifti, write_nifti_f32, PhantomConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bytes = match std::env::args().nth(1) {
        Some(path) => std::fs::read(path)?,
        None => {
            let (v, _) = generate_phantom(&PhantomConfig { dims: [64, 64, 48], spacing: [2.0, 2.0, 3.0], ..Default::default() })?;
            write_nifti_f32(&v)
        }
    };
    let img = load_nifti(&bytes)?;
    let v = &img.volume;
    let (lo, hi) = v.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    println!("datatype {:?}", img.datatype);
    println!("dims {:?}, spacing {:?} mm, extent {:?} mm", v.dims(), v.spacing(), v.extent_mm());
    println!("intensity range [{lo}, {hi}]");
    if let Some(l) = img.as_labels(None) {
        println!("integral values: readable as a label map with {} classes", l.class_count());
    }
    Ok(())
}
