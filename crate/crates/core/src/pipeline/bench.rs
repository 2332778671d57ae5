use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{patch_rng, AugmentConfig};
use crate::chunk::ChunkGrid;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::pool::{JobTiming, WorkerPool};
use crate::volume::{LabelVolume, RawVolume, Shape};

use super::augment::augment_patch;
use super::weightmap::{block_weights, chunk_block};
use super::{write_json, JobSpec, Provenance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Edge length of the cubic synthetic load.
    pub size: usize,
    pub chunk: Shape,
    pub workers: Vec<usize>,
    /// Runs per configuration; the fastest is reported.
    pub repeats: usize,
    /// Foreground fraction of the random binary load.
    pub density: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            size: 256,
            chunk: Shape::cube(64),
            workers: vec![1, 2, 4],
            repeats: 1,
            density: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerLoad {
    pub worker: usize,
    pub jobs: usize,
    pub voxels: u64,
    pub busy_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub path: String,
    pub workers: usize,
    pub voxels: u64,
    pub wall_seconds: f64,
    pub voxels_per_hour: f64,
    pub per_worker: Vec<WorkerLoad>,
}

impl ThroughputReport {
    pub fn gigavoxels_per_hour(&self) -> f64 {
        self.voxels_per_hour / 1e9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub path: String,
    pub workers: usize,
    /// Wall time at the smallest worker count over wall time at `workers`.
    pub ratio: f64,
}

/// Published throughput of the original GPU pipeline, for context only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedReference {
    pub path: String,
    pub gigavoxels_per_hour: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub size: usize,
    pub chunk: Shape,
    pub runs: Vec<ThroughputReport>,
    pub speedups: Vec<Speedup>,
    pub reference: Vec<PublishedReference>,
    pub host_threads: usize,
}

impl BenchReport {
    pub fn speedup(&self, path: &str, workers: usize) -> Option<f64> {
        self.speedups
            .iter()
            .find(|s| s.path == path && s.workers == workers)
            .map(|s| s.ratio)
    }
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "load\t{}^3 voxels, chunks {}, host threads {}", self.size, self.chunk, self.host_threads)?;
        for r in &self.runs {
            let speedup = self.speedup(&r.path, r.workers).unwrap_or(1.0);
            writeln!(
                f,
                "{}\tworkers={}\twall={:.3}s\t{:.3} Gvox/h\tspeedup={:.2}x",
                r.path,
                r.workers,
                r.wall_seconds,
                r.gigavoxels_per_hour(),
                speedup
            )?;
        }
        for p in &self.reference {
            writeln!(f, "reference\t{}\t{} ± {} Gvox/h (published GPU figure, context only)", p.path, p.gigavoxels_per_hour, p.sd)?;
        }
        Ok(())
    }
}

fn published_reference() -> Vec<PublishedReference> {
    vec![
        PublishedReference {
            path: "segmentation".into(),
            gigavoxels_per_hour: 348.8,
            sd: 1.9,
        },
        PublishedReference {
            path: "augmentation".into(),
            gigavoxels_per_hour: 35.2,
            sd: 9.2,
        },
    ]
}

/// Seeded random binary load and matching raw intensities.
fn synthetic_load(size: usize, density: f64, seed: u64) -> (RawVolume, LabelVolume) {
    let shape = Shape::cube(size);
    let mut rng = patch_rng(seed, 0, 0);
    let mut raw = RawVolume::new(shape);
    let mut label = LabelVolume::new(shape);
    for (r, l) in raw.as_mut_slice().iter_mut().zip(label.as_mut_slice()) {
        *l = rng.random::<f64>() < density;
        *r = rng.random::<f32>() + if *l { 1.0 } else { 0.0 };
    }
    (raw, label)
}

fn measure(path: &str, pool: &WorkerPool, grid: ChunkGrid, job: impl Fn(usize) -> Result<()> + Sync + Send) -> Result<ThroughputReport> {
    let start = Instant::now();
    let results = pool.map_timed(grid.len(), |i| job(i));
    let wall = start.elapsed().as_secs_f64();
    let mut per_worker: BTreeMap<usize, WorkerLoad> = BTreeMap::new();
    for (i, (r, JobTiming { worker, elapsed })) in results.into_iter().enumerate() {
        r?;
        let load = per_worker.entry(worker).or_insert(WorkerLoad {
            worker,
            jobs: 0,
            voxels: 0,
            busy_seconds: 0.0,
        });
        load.jobs += 1;
        load.voxels += grid.region(grid.grid_coord(i)).shape.len() as u64;
        load.busy_seconds += elapsed.as_secs_f64();
    }
    let voxels = grid.volume.len() as u64;
    Ok(ThroughputReport {
        path: path.into(),
        workers: pool.workers(),
        voxels,
        wall_seconds: wall,
        voxels_per_hour: voxels as f64 / (wall / 3600.0),
        per_worker: per_worker.into_values().collect(),
    })
}

fn best_of(repeats: usize, mut run: impl FnMut() -> Result<ThroughputReport>) -> Result<ThroughputReport> {
    let mut best: Option<ThroughputReport> = None;
    for _ in 0..repeats.max(1) {
        let r = run()?;
        if best.as_ref().is_none_or(|b| r.wall_seconds < b.wall_seconds) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Times the weight-map and augmentation kernels on a synthetic load at each
/// configured worker count.
pub fn bench(cfg: &BenchConfig, loss: &LossConfig, augment: &AugmentConfig) -> Result<BenchReport> {
    if cfg.size == 0 || cfg.workers.is_empty() || cfg.workers.contains(&0) {
        return Err(Error::InvalidParameter("bench needs a non-empty load and worker counts >= 1".into()));
    }
    loss.validate()?;
    augment.validate()?;
    let (raw, label) = synthetic_load(cfg.size, cfg.density, augment.seed);
    let grid = ChunkGrid::new(label.shape(), cfg.chunk)?;
    let mut runs = Vec::new();
    for &workers in &cfg.workers {
        let pool = WorkerPool::new(workers)?;
        runs.push(best_of(cfg.repeats, || {
            measure("weightmap", &pool, grid, |i| {
                let region = grid.region(grid.grid_coord(i));
                let w = block_weights(&chunk_block(&label, region, 1), None, 1, region.shape, loss);
                std::hint::black_box(w);
                Ok(())
            })
        })?);
        runs.push(best_of(cfg.repeats, || {
            measure("augment", &pool, grid, |i| {
                let region = grid.region(grid.grid_coord(i));
                let origin = region.origin.map(|v| v as i64);
                let out = augment_patch(
                    raw.extract(origin, region.shape),
                    label.extract(origin, region.shape),
                    region,
                    i as u64,
                    augment,
                )?;
                std::hint::black_box(out);
                Ok(())
            })
        })?);
    }
    let base = *cfg.workers.iter().min().expect("non-empty");
    let speedups = runs
        .iter()
        .map(|r| {
            let b = runs
                .iter()
                .find(|b| b.path == r.path && b.workers == base)
                .expect("baseline run");
            Speedup {
                path: r.path.clone(),
                workers: r.workers,
                ratio: b.wall_seconds / r.wall_seconds,
            }
        })
        .collect();
    Ok(BenchReport {
        size: cfg.size,
        chunk: cfg.chunk,
        runs,
        speedups,
        reference: published_reference(),
        host_threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
    })
}

pub const BENCH_FILE: &str = "bench.json";

pub fn run_bench(job: &JobSpec) -> Result<BenchReport> {
    job.validate()?;
    let augment = AugmentConfig {
        seed: job.seed,
        ..job.augment.clone()
    };
    let mut cfg = job.bench.clone();
    if let Some(p) = job.patch {
        cfg.chunk = p;
    }
    let report = bench(&cfg, &job.loss, &augment)?;
    if let Some(out) = &job.output {
        write_json(&out.join(BENCH_FILE), &report)?;
        Provenance::new("bench", job, serde_json::json!({ "bench": cfg, "loss": job.loss, "augment": augment }))
            .write(out)?;
    }
    Ok(report)
}
