//! Generates a few phantoms, prints their label histograms and splits them
//! 9:1 into train and test ids.
//!
//!     cargo run --release --example phantom_dataset -- [count] [out_dir]

use sparseg::volume::{dataset_split, generate_phantom, save_raw_file, save_raw_labels_file, PhantomConfig};
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map_or(Ok(10), |s| s.parse())?;
    let out = args.next().map(PathBuf::from);
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir)?;
    }
    for seed in 0..count as u64 {
        let cfg = PhantomConfig { seed, ..Default::default() };
        let (v, l) = generate_phantom(&cfg)?;
        println!("phantom {seed}: dims {:?} @ {:?} mm, voxels per class {:?}", v.dims(), v.spacing(), l.histogram());
        if let Some(dir) = &out {
            save_raw_file(&dir.join(format!("case_{seed:03}_image.json")), &v)?;
            save_raw_labels_file(&dir.join(format!("case_{seed:03}_labels.json")), &l)?;
        }
    }
    let ids: Vec<u64> = (0..count as u64).collect();
    let (train, test) = dataset_split(&ids, (9, 1), 0)?;
    println!("train {train:?}\ntest  {test:?}");
    Ok(())
}
