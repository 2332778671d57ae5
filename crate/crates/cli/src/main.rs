//! `neurotopo`: batch driver for weight maps, augmentation, inflation,
//! evaluation and benchmarking over chunked datasets.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use neurotopo::eval::EmptyPolicy;
use neurotopo::inflate::Radius;
use neurotopo::pipeline::{self, JobSpec};
use neurotopo::{Shape, VoxelSize};

#[derive(Debug, Parser)]
#[command(name = "neurotopo", version, about = "Topology-aware processing of chunked neuron volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic train/val/test corpus.
    Synth,
    /// Inflate SWC traces into label datasets, certifying each one.
    Inflate,
    /// Apply sampled artifact augmentations to a raw/label dataset pair.
    Augment,
    /// Compute the non-simple-point weight map of a (thresholded) dataset.
    Weightmap,
    /// Compare predictions with labels by plain and warped Jaccard.
    Eval,
    /// Measure kernel throughput at several worker counts.
    Bench,
    /// Convert between chunk stores and .npy arrays.
    #[command(subcommand)]
    Chunk(ChunkCommand),
}

#[derive(Debug, Subcommand)]
enum ChunkCommand {
    /// Import a 3-D .npy array into a chunk store.
    Import,
    /// Export a chunk store as a .npy array.
    Export,
}

fn triple<T: FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("invalid value {p:?}"))?);
    }
    out.try_into().map_err(|_| "expected three values".to_string())
}

fn shape(s: &str) -> Result<Shape, String> {
    let t = triple::<usize>(s)?;
    if t.contains(&0) {
        return Err(format!("shape {s} has a zero extent"));
    }
    Ok(Shape(t))
}

fn voxel_size(s: &str) -> Result<VoxelSize, String> {
    triple::<f64>(s).map(VoxelSize)
}

fn counts(s: &str) -> Result<[usize; 3], String> {
    triple::<usize>(s)
}

#[derive(Debug, Args)]
struct Opts {
    /// Input dataset, SWC file/directory, or .npy file (repeatable).
    #[arg(long, short, global = true)]
    input: Vec<PathBuf>,
    /// Output directory (or .npy file for `chunk export`).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Reference label dataset or directory.
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML job configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Chunk or patch shape X,Y,Z.
    #[arg(long, global = true, value_parser = shape)]
    patch: Option<Shape>,
    /// Halo voxels read around each chunk.
    #[arg(long, global = true)]
    halo: Option<usize>,
    /// Binarization threshold for predictions.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Weight of non-simple voxels.
    #[arg(long, global = true)]
    weight: Option<f64>,
    /// Uniform inflation radius in micrometres.
    #[arg(long, global = true)]
    radius: Option<f64>,
    /// Target grid X,Y,Z for inflation.
    #[arg(long, global = true, value_parser = shape)]
    shape: Option<Shape>,
    /// Voxel spacing x,y,z in micrometres.
    #[arg(long, global = true, value_parser = voxel_size)]
    voxel_size: Option<VoxelSize>,
    /// Synthetic corpus sizes TRAIN,VAL,TEST.
    #[arg(long, global = true, value_parser = counts)]
    counts: Option<[usize; 3]>,
    /// Edge length of the benchmark load.
    #[arg(long, global = true)]
    size: Option<usize>,
    /// Worker counts to benchmark, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    bench_workers: Vec<usize>,
    /// Score two empty volumes as Jaccard 1 instead of failing.
    #[arg(long, global = true)]
    empty_as_one: bool,
    /// Log progress (repeat for more detail).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

/// A problem with how the tool was invoked, as opposed to with the data.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn job_spec(opts: &Opts) -> Result<JobSpec> {
    let mut job = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("reading config {}: {e}", path.display())))?;
            toml::from_str::<JobSpec>(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?
        }
        None => JobSpec::default(),
    };
    if !opts.input.is_empty() {
        job.inputs = opts.input.clone();
    }
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(opts.workers => job.workers);
    set!(opts.seed => job.seed);
    set!(opts.halo => job.halo);
    set!(opts.threshold => job.loss.threshold);
    set!(opts.weight => job.loss.weight);
    set!(opts.counts => job.synth.counts);
    set!(opts.size => job.bench.size);
    if !opts.bench_workers.is_empty() {
        job.bench.workers = opts.bench_workers.clone();
    }
    if opts.output.is_some() {
        job.output = opts.output.clone();
    }
    if opts.labels.is_some() {
        job.labels = opts.labels.clone();
    }
    if opts.patch.is_some() {
        job.patch = opts.patch;
    }
    if let Some(r) = opts.radius {
        job.inflate.radius = Radius::Uniform { microns: r };
    }
    if opts.shape.is_some() {
        job.inflate.shape = opts.shape;
    }
    if opts.voxel_size.is_some() {
        job.voxel_size = opts.voxel_size;
    }
    if opts.empty_as_one {
        job.empty_jaccard = EmptyPolicy::One;
    }
    job.validate().map_err(|e| usage(e.to_string()))?;
    Ok(job)
}

/// Runs the command and returns its report plus whether every item succeeded.
fn run(command: &Command, job: &JobSpec) -> Result<(String, bool)> {
    let mut out = String::new();
    let ok = match command {
        Command::Synth => {
            let m = pipeline::run_synth(job)?;
            writeln!(out, "volumes\t{}", m.volumes.len())?;
            writeln!(out, "counts\t{},{},{}", m.counts[0], m.counts[1], m.counts[2])?;
            writeln!(out, "seed\t{}", job.seed)?;
            true
        }
        Command::Inflate => {
            let r = pipeline::run_inflate(job)?;
            for e in &r.entries {
                match (&e.certificate, &e.error) {
                    (Some(c), _) => writeln!(
                        out,
                        "{}\tadded={}\tsimple={}\tcounts_preserved={}\tcomponents={}\ttrees={}",
                        e.name,
                        c.additions,
                        c.all_simple,
                        c.counts_preserved,
                        e.counts.map_or(0, |c| c.foreground),
                        e.trees
                    )?,
                    (None, err) => writeln!(out, "{}\terror={}", e.name, err.as_deref().unwrap_or("unknown"))?,
                }
            }
            writeln!(out, "passed\t{}\nfailed\t{}", r.passed, r.failed)?;
            r.failed == 0
        }
        Command::Augment => {
            let patches = pipeline::run_augment(job)?;
            let changed = patches.iter().filter(|p| !p.transform.is_identity()).count();
            writeln!(out, "patches\t{}\naugmented\t{changed}\nseed\t{}", patches.len(), job.seed)?;
            true
        }
        Command::Weightmap => {
            let m = pipeline::run_weightmap(job)?;
            let [z, y, x] = m.volume_shape;
            writeln!(out, "shape\t{x}x{y}x{z}\nchunks\t{}", m.chunks.len())?;
            true
        }
        Command::Eval => {
            let r = pipeline::run_eval(job)?;
            writeln!(out, "{r}")?;
            r.failed == 0
        }
        Command::Bench => {
            let r = pipeline::run_bench(job)?;
            write!(out, "{r}")?;
            true
        }
        Command::Chunk(ChunkCommand::Import) => {
            let m = pipeline::run_import(job)?;
            let [z, y, x] = m.volume_shape;
            writeln!(out, "shape\t{x}x{y}x{z}\ndtype\t{}\nchunks\t{}", m.dtype.name(), m.chunks.len())?;
            true
        }
        Command::Chunk(ChunkCommand::Export) => {
            let s = pipeline::run_export(job)?;
            writeln!(out, "shape\t{s}")?;
            true
        }
    };
    Ok((out, ok))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<neurotopo::Error>() {
        Some(neurotopo::Error::InvalidParameter(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.opts.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = job_spec(&cli.opts).and_then(|job| run(&cli.command, &job).context("command failed"));
    match result {
        Ok((report, ok)) => {
            print!("{report}");
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            // Library errors already print their source, so skip repeats.
            let mut msg = String::new();
            for cause in e.chain() {
                let part = cause.to_string();
                if !msg.contains(&part) {
                    msg += if msg.is_empty() { "" } else { ": " };
                    msg += &part;
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
