//! Segments a phantom with a checkpoint (or an untrained model) and scores
//! it against the phantom's labels.
//!
//!     cargo run --release --example segment_volume -- [model.ckpt] [threads]

use sparseg::inference::{dice_whole_volume, resample_labels, segment_volume_timed, SegmentOptions};
use sparseg::model::{ModelConfig, ResidualTransformer};
use sparseg::volume::{generate_phantom, PhantomConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let model = match args.next() {
        Some(p) if p != "-" => ResidualTransformer::load_file(&p)?,
        _ => ResidualTransformer::new(ModelConfig::default())?,
    };
    let threads: usize = args.next().map_or(Ok(1), |s| s.parse())?;
    let (v, gt) = generate_phantom(&PhantomConfig { seed: 4242, ..Default::default() })?;
    let opts = SegmentOptions { threads, ..Default::default() };
    let (seg, times) = segment_volume_timed(&model, &v, &opts)?;
    println!(
        "{:?} -> {:?} labels; gather {:.2?} forward {:.2?} (summed over threads), stitch {:.2?}, total {:.2?}",
        v.dims(),
        seg.labels.dims(),
        times.gather,
        times.forward,
        times.stitch,
        times.total
    );
    let gt = resample_labels(&gt, seg.labels.dims(), seg.labels.spacing())?;
    let report = dice_whole_volume(&seg.labels, &gt)?;
    println!("per-class dice {:?}\nmean {:?}", report.per_class, report.mean);
    Ok(())
}
