//! Command-line front end: `phantom`, `train`, `segment`, `eval`, `bench`
//! and `inspect`. Every command prints its effective configuration to
//! standard error before running.

mod config;

pub use config::{stage_seed, DataConfig, InferenceConfig, RunConfig, Stage, VolumeFormat};

use crate::bench::{bench_segment, BenchError, BenchOptions};
use crate::inference::{resample_labels, segment_volume, InferenceError, SegmentOptions};
use crate::metrics::{dice, MeanOver};
use crate::model::{CheckpointError, ModelError, ResidualTransformer};
use crate::sampler::{build_offset_table, default_layout, descriptor_to_mosaic, sample_descriptor, SampleError};
use crate::trainer::{draw_sample_set, train, EvalSet, TrainConfig, TrainError, TrainImage};
use crate::volume::{
    dataset_split, generate_phantom, load_nifti, load_raw_file, load_raw_labels_file, normalize_intensity,
    save_raw_file, save_raw_labels_file, LabelVolume, NiftiError, Volume, VolumeError, TWIN_CLASSES,
};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn at(path: &Path, e: impl std::fmt::Display) -> String {
    format!("{}: {e}", path.display())
}

impl From<VolumeError> for CliError {
    fn from(e: VolumeError) -> Self {
        match e {
            VolumeError::BadPhantomConfig(_) | VolumeError::SplitTooSmall(_) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::BadConfig(_) => Self::Usage(e.to_string()),
            ModelError::Layout { .. } => Self::Data(e.to_string()),
            ModelError::Nn(_) => Self::Runtime(e.to_string()),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Self::Usage(e.to_string()),
            TrainError::Data(_) | TrainError::Sample(_) => Self::Data(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::NonFinite { .. } => Self::Runtime(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::ThreadPool(_) | InferenceError::PredictionSize { .. } => Self::Runtime(e.to_string()),
            InferenceError::BadOrder(_) => Self::Usage(e.to_string()),
            InferenceError::Model(m) => m.into(),
            InferenceError::Volume(v) => v.into(),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Inference(i) => i.into(),
            BenchError::Train(t) => t.into(),
            BenchError::Model(m) => m.into(),
            _ => Self::Usage(e.to_string()),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "sparseg", version, about = "Multi-organ 3-D segmentation from sparse descriptors")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed expanded into every stage seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Count writes per output voxel and fail unless each tiled voxel is
    /// written exactly once.
    #[arg(long, global = true)]
    pub debug_writes: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded phantom dataset with a 9:1 train/test manifest.
    Phantom {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train on a manifest's train split; writes a checkpoint and metrics log.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Segment a volume and write a raw label map.
    Segment {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: PathBuf,
    },
    /// Dice of a predicted label map against a reference.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Time whole-volume segmentation.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Render the descriptor at a query voxel as an 81×81 PGM.
    Inspect {
        #[arg(long)]
        volume: PathBuf,
        /// Query voxel as `x,y,z`.
        #[arg(long, value_parser = parse_query)]
        query: [usize; 3],
    },
}

fn parse_query(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {s:?}"));
    }
    let mut q = [0; 3];
    for (slot, p) in q.iter_mut().zip(parts) {
        *slot = p.parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(q)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to `err`.
pub fn run<I, T>(args: I, err: &mut (dyn std::io::Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let help = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = write!(err, "{}", e.render());
            return if help { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match execute(&cli, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Loads the config file, applies flag overrides and expands the seeds.
pub fn effective_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(at(p, e)))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(at(p, e)))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if let Some(t) = global.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        cfg.threads = Some(t);
    }
    if let Some(o) = &global.out {
        cfg.inference.output = Some(o.clone());
    }
    cfg.inference.debug_writes |= global.debug_writes;
    cfg.expand_seeds();
    Ok(cfg)
}

fn all_cores() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

pub fn execute(cli: &Cli, err: &mut (dyn std::io::Write + Send)) -> Result<()> {
    let mut cfg = effective_config(&cli.global)?;
    let default_threads = match cli.command {
        Command::Train { .. } => 1,
        _ => all_cores(),
    };
    cfg.threads = Some(cfg.threads_or(default_threads));
    match &cli.command {
        Command::Phantom { count } => {
            if let Some(n) = count {
                cfg.data.phantom_count = *n;
            }
            echo(&cfg, err);
            cmd_phantom(&cfg, &out_or(&cfg, "phantoms")).map(|_| ())
        }
        Command::Train { manifest } => {
            if let Some(m) = manifest {
                cfg.data.manifest = Some(m.clone());
            }
            echo(&cfg, err);
            cmd_train(&cfg, &out_or(&cfg, "run"), err)
        }
        Command::Segment { checkpoint, volume } => {
            echo(&cfg, err);
            cmd_segment(&cfg, checkpoint, volume, &out_or(&cfg, "segmentation.json"))
        }
        Command::Eval { pred, gt } => {
            echo(&cfg, err);
            let record = cmd_eval(&cfg, pred, gt)?;
            print!("{}", record.to_table());
            println!("{}", serde_json::to_string(&record).map_err(|e| CliError::Runtime(e.to_string()))?);
            write_json(cfg.inference.output.as_deref(), &record)
        }
        Command::Bench { checkpoint, volume, runs } => {
            if let Some(r) = runs {
                cfg.inference.bench_runs = *r;
            }
            echo(&cfg, err);
            let report = cmd_bench(&cfg, checkpoint, volume)?;
            print!("{}", report.to_table());
            write_json(cfg.inference.output.as_deref(), &report)
        }
        Command::Inspect { volume, query } => {
            echo(&cfg, err);
            cmd_inspect(&cfg, volume, *query, &out_or(&cfg, "descriptor.pgm"))
        }
    }
}

fn out_or(cfg: &RunConfig, default: &str) -> PathBuf {
    cfg.inference.output.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn echo(cfg: &RunConfig, err: &mut (dyn std::io::Write + Send)) {
    let text = serde_json::to_string_pretty(cfg).expect("config serializes");
    let _ = writeln!(err, "effective config:\n{text}");
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    if let Some(p) = path {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        fs::write(p, text + "\n").map_err(|e| CliError::Data(at(p, e)))?;
    }
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Data(at(path, e)))
}

fn is_nifti(format: VolumeFormat, path: &Path) -> bool {
    match format {
        VolumeFormat::Raw => false,
        VolumeFormat::Nifti => true,
        VolumeFormat::Auto => path.extension().is_some_and(|e| e == "nii"),
    }
}

fn nifti_err(path: &Path, e: NiftiError) -> CliError {
    CliError::Data(at(path, e))
}

/// Loads an intensity volume in HU.
pub fn load_volume(format: VolumeFormat, path: &Path) -> Result<Volume> {
    if is_nifti(format, path) {
        Ok(load_nifti(&read_bytes(path)?).map_err(|e| nifti_err(path, e))?.volume)
    } else {
        load_raw_file(path).map_err(|e| CliError::Data(at(path, e)))
    }
}

pub fn load_labels(format: VolumeFormat, path: &Path, class_count: Option<usize>) -> Result<LabelVolume> {
    if is_nifti(format, path) {
        let img = load_nifti(&read_bytes(path)?).map_err(|e| nifti_err(path, e))?;
        img.as_labels(class_count)
            .ok_or_else(|| CliError::Data(at(path, "voxel values are not labels")))
    } else {
        load_raw_labels_file(path).map_err(|e| CliError::Data(at(path, e)))
    }
}

fn load_checkpoint(path: &Path) -> Result<ResidualTransformer> {
    ResidualTransformer::load_file(path).map_err(|e: CheckpointError| CliError::Data(at(path, e)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths relative to the manifest.
    pub image: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub class_count: usize,
    pub twin_classes: Vec<usize>,
    pub phantom: crate::volume::PhantomConfig,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `phantom_count` phantoms as raw volume/label pairs and a manifest
/// with a seeded 9:1 split. Returns the manifest.
pub fn cmd_phantom(cfg: &RunConfig, out_dir: &Path) -> Result<Manifest> {
    let n = cfg.data.phantom_count;
    let ids: Vec<usize> = (0..n).collect();
    let (train_ids, test_ids) = dataset_split(&ids, (9, 1), stage_seed(cfg.seed, Stage::Split, 0))?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Data(at(out_dir, e)))?;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let mut p = cfg.data.phantom.clone();
        p.seed = stage_seed(cfg.seed, Stage::Phantom, i as u64);
        let (v, l) = generate_phantom(&p)?;
        let id = format!("case_{i:03}");
        let image = PathBuf::from(format!("{id}_image.json"));
        let labels = PathBuf::from(format!("{id}_labels.json"));
        save_raw_file(&out_dir.join(&image), &v)?;
        save_raw_labels_file(&out_dir.join(&labels), &l)?;
        entries.push(ManifestEntry { id, image, labels });
    }
    let pick = |ids: &[usize]| ids.iter().map(|&i| entries[i].clone()).collect::<Vec<_>>();
    let manifest = Manifest {
        seed: cfg.seed,
        class_count: cfg.data.phantom.class_count(),
        twin_classes: if cfg.data.phantom.twin_pair { TWIN_CLASSES.to_vec() } else { Vec::new() },
        phantom: cfg.data.phantom.clone(),
        train: pick(&train_ids),
        test: pick(&test_ids),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, text + "\n").map_err(|e| CliError::Data(at(&path, e)))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(at(path, e)))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(at(path, e)))
}

fn load_images(format: VolumeFormat, dir: &Path, entries: &[ManifestEntry], classes: usize) -> Result<Vec<TrainImage>> {
    entries
        .iter()
        .map(|e| {
            let v = load_volume(format, &dir.join(&e.image))?;
            let l = load_labels(format, &dir.join(&e.labels), Some(classes))?;
            Ok(TrainImage::new(&v, l)?)
        })
        .collect()
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Trains on the manifest's train split, scoring the test split's sample
/// windows at each record. Writes the checkpoint and a JSON-lines metrics
/// log into `out_dir`.
pub fn cmd_train(cfg: &RunConfig, out_dir: &Path, err: &mut (dyn std::io::Write + Send)) -> Result<()> {
    let manifest_path = cfg
        .data
        .manifest
        .as_deref()
        .ok_or_else(|| CliError::Usage("train needs data.manifest or --manifest".into()))?;
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    if manifest.class_count > cfg.model.class_count {
        return Err(CliError::Usage(format!(
            "manifest has {} classes, model.class_count is {}",
            manifest.class_count, cfg.model.class_count
        )));
    }
    let classes = cfg.model.class_count;
    let train_images = load_images(cfg.data.format, dir, &manifest.train, classes)?;
    let test_images = load_images(cfg.data.format, dir, &manifest.test, classes)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads_or(1))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Data(at(out_dir, e)))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| CliError::Data(at(&metrics_path, e)))?;

    let tcfg: &TrainConfig = &cfg.train;
    let mut model = ResidualTransformer::new(cfg.model)?;
    let outcome = pool.install(|| -> Result<_> {
        let samples = draw_sample_set(&train_images, tcfg, tcfg.seed)?;
        let eval_samples = draw_sample_set(&test_images, tcfg, tcfg.seed.wrapping_add(1))?;
        let eval = (!test_images.is_empty()).then_some(EvalSet { images: &test_images, samples: &eval_samples });
        let mut io_error = None;
        let res = train(&mut model, &train_images, &samples, tcfg, eval, |rec| {
            let line = serde_json::to_string(rec).expect("record serializes");
            if let Err(e) = writeln!(metrics, "{line}") {
                io_error.get_or_insert(e);
            }
            let _ = writeln!(err, "{line}");
        });
        if let Some(e) = io_error {
            return Err(CliError::Data(at(&metrics_path, e)));
        }
        Ok(res?)
    })?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    model.save_file(&ckpt).map_err(|e| CliError::Data(at(&ckpt, e)))?;
    let _ = writeln!(err, "trained {} steps; checkpoint {}", outcome.steps, ckpt.display());
    Ok(())
}

pub fn cmd_segment(cfg: &RunConfig, checkpoint: &Path, volume: &Path, out: &Path) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let v = load_volume(cfg.data.format, volume)?;
    let opts = SegmentOptions {
        threads: cfg.threads_or(all_cores()),
        batch: cfg.inference.batch,
        debug_writes: cfg.inference.debug_writes,
        order: None,
    };
    let seg = segment_volume(&model, &v, &opts)?;
    if let Some(counts) = &seg.write_counts {
        let dims = seg.labels.dims();
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let expect = u32::from(seg.in_tiled_region(x, y, z));
                    let got = counts[crate::volume::linear_index(dims, x, y, z)];
                    if got != expect {
                        return Err(CliError::Runtime(format!(
                            "voxel ({x}, {y}, {z}) written {got} times, expected {expect}"
                        )));
                    }
                }
            }
        }
    }
    save_raw_labels_file(out, &seg.labels).map_err(|e| CliError::Data(at(out, e)))
}

/// Dice record emitted by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// The reference was resampled onto the prediction grid.
    pub resampled: bool,
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

impl EvalRecord {
    pub fn to_table(&self) -> String {
        let mut s = String::from("class   dice\n");
        for (c, d) in self.per_class.iter().enumerate() {
            let d = d.map_or("-".to_string(), |d| format!("{d:.4}"));
            s += &format!("{c:<7} {d}\n");
        }
        s += &format!("mean    {}\n", self.mean.map_or("-".to_string(), |d| format!("{d:.4}")));
        s
    }
}

/// Per-class dice; the mean covers foreground classes present in either map.
pub fn cmd_eval(cfg: &RunConfig, pred: &Path, gt: &Path) -> Result<EvalRecord> {
    let p = load_labels(cfg.data.format, pred, None)?;
    let g = load_labels(cfg.data.format, gt, None)?;
    let resampled = p.dims() != g.dims() || p.spacing() != g.spacing();
    let g = if resampled { resample_labels(&g, p.dims(), p.spacing())? } else { g };
    let c = p.class_count().max(g.class_count());
    let r = dice(p.labels(), g.labels(), c, MeanOver::PresentInEither);
    Ok(EvalRecord { pred: pred.into(), gt: gt.into(), resampled, per_class: r.per_class, mean: r.mean })
}

pub fn cmd_bench(cfg: &RunConfig, checkpoint: &Path, volume: &Path) -> Result<crate::bench::BenchReport> {
    let model = load_checkpoint(checkpoint)?;
    let v = load_volume(cfg.data.format, volume)?;
    let opts = BenchOptions {
        threads: cfg.threads_or(all_cores()),
        runs: cfg.inference.bench_runs,
        batch: cfg.inference.batch,
    };
    Ok(bench_segment(&model, &v, &opts)?)
}

pub fn cmd_inspect(cfg: &RunConfig, volume: &Path, query: [usize; 3], out: &Path) -> Result<()> {
    let v = load_volume(cfg.data.format, volume)?;
    let table = build_offset_table(&default_layout(), v.dims(), v.spacing());
    let d = sample_descriptor(&normalize_intensity(&v), &table, query)?;
    fs::write(out, descriptor_to_mosaic(&d).to_pgm()).map_err(|e| CliError::Data(at(out, e)))
}
