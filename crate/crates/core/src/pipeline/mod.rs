//! Chunk-parallel batch jobs over on-disk datasets.
//!
//! Every job runs on a fixed-size [`WorkerPool`] over a deterministic list of
//! chunks or patches, merges results in job order and writes a
//! `provenance.json` next to its output. Outputs never depend on the worker
//! count, which is therefore left out of the provenance record.

mod augment;
mod bench;
mod evaluate;
mod inflate;
mod npy;
mod weightmap;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use augment::{augment_volume, run_augment, AugmentedPatch};
pub use bench::{bench, run_bench, BenchConfig, BenchReport, PublishedReference, Speedup, ThroughputReport, WorkerLoad};
pub use evaluate::{discover_stores, run_eval, EvalReport, PairEntry};
pub use inflate::{discover_swc, run_inflate, InflateEntry, InflateReport};
pub use npy::{export_npy, import_npy, run_export, run_import};
pub use weightmap::{run_weightmap, weightmap_volume};

use crate::augment::AugmentConfig;
use crate::chunk::{ChunkStore, Dtype};
use crate::error::{Error, Result};
use crate::eval::EmptyPolicy;
use crate::inflate::Radius;
use crate::loss::{binarize, LossConfig};
use crate::pool::WorkerPool;
use crate::synth::{synth_corpus, CorpusManifest, SynthSpec, DEFAULT_COUNTS};
use crate::volume::{LabelVolume, Region, Shape, VoxelSize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InflateOptions {
    pub radius: Radius,
    /// Target grid; taken from a corpus manifest when absent.
    pub shape: Option<Shape>,
    pub voxel_size: Option<VoxelSize>,
}

impl Default for InflateOptions {
    fn default() -> Self {
        Self {
            radius: Radius::PerNode { scale: 1.0 },
            shape: None,
            voxel_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub spec: SynthSpec,
    /// Training, validation and test volume counts.
    pub counts: [usize; 3],
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            counts: DEFAULT_COUNTS,
        }
    }
}

/// Everything a batch job needs. This is also the schema of the TOML
/// configuration file; command-line flags override individual fields.
/// The master `seed` replaces the seeds inside `augment` and `synth.spec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobSpec {
    pub inputs: Vec<PathBuf>,
    /// Reference labels for `eval`, and for disagreement-restricted weights.
    pub labels: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub workers: usize,
    pub seed: u64,
    /// Chunk or patch shape of the output; defaults per command.
    pub patch: Option<Shape>,
    pub halo: usize,
    pub voxel_size: Option<VoxelSize>,
    pub empty_jaccard: EmptyPolicy,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub inflate: InflateOptions,
    pub synth: SynthOptions,
    pub bench: BenchConfig,
}

impl Default for JobSpec {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            labels: None,
            output: None,
            workers: 1,
            seed: 0,
            patch: None,
            halo: 1,
            voxel_size: None,
            empty_jaccard: EmptyPolicy::Error,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            inflate: InflateOptions::default(),
            synth: SynthOptions::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl JobSpec {
    pub fn pool(&self) -> Result<WorkerPool> {
        WorkerPool::new(self.workers)
    }

    pub fn input(&self, i: usize) -> Result<&Path> {
        self.inputs
            .get(i)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::InvalidParameter(format!("missing input #{}", i + 1)))
    }

    pub fn output(&self) -> Result<&Path> {
        self.output
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("an output path is required".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidParameter("worker count must be at least 1".into()));
        }
        if let Some(p) = self.patch {
            if p.0.contains(&0) {
                return Err(Error::InvalidParameter(format!("patch shape {p} has a zero extent")));
            }
        }
        self.loss.validate()?;
        self.augment.validate()
    }
}

/// How an output was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub parameters: serde_json::Value,
}

pub const PROVENANCE_FILE: &str = "provenance.json";

impl Provenance {
    pub fn new(command: &str, job: &JobSpec, parameters: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: job.seed,
            inputs: job.inputs.clone(),
            parameters,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(PROVENANCE_FILE), self)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads `region` (plus `halo`) of a binary store, thresholding `f32` data.
pub(crate) fn read_binary(store: &ChunkStore, region: Region, halo: usize, threshold: f64) -> Result<LabelVolume> {
    match store.dtype() {
        Dtype::Uint1 => store.read::<bool>(region, halo),
        Dtype::F32 => Ok(binarize(&store.read::<f32>(region, halo)?, threshold)),
    }
}

/// Writes a synthetic corpus; see [`synth_corpus`].
pub fn run_synth(job: &JobSpec) -> Result<CorpusManifest> {
    job.validate()?;
    let out = job.output()?;
    let spec = SynthSpec {
        seed: job.seed,
        ..job.synth.spec.clone()
    };
    let chunk = job.patch.unwrap_or(Shape::cube(32));
    let manifest = synth_corpus(&spec, job.synth.counts, out, chunk, &job.pool()?)?;
    log::info!("wrote {} synthetic volumes to {}", manifest.volumes.len(), out.display());
    let params = serde_json::json!({ "spec": spec, "counts": job.synth.counts, "chunk_shape": chunk });
    Provenance::new("synth", job, params).write(out)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn job_spec_from_partial_toml() {
        let job: JobSpec = toml::from_str(
            r#"
            seed = 17
            workers = 3
            patch = [32, 32, 16]
            [loss]
            weight = 8.0
            [augment.stitch]
            probability = 1.0
            [inflate.radius]
            mode = "uniform"
            microns = 1.5
            "#,
        )
        .unwrap();
        assert_eq!(job.seed, 17);
        assert_eq!(job.patch, Some(Shape::new(32, 32, 16)));
        assert_eq!(job.loss.weight, 8.0);
        assert_eq!(job.loss.threshold, 0.5);
        assert_eq!(job.augment.stitch.probability, 1.0);
        assert_eq!(job.inflate.radius, Radius::Uniform { microns: 1.5 });
        assert!(job.validate().is_ok());
        assert!(toml::from_str::<JobSpec>("sead = 1").is_err());
    }

    #[test]
    fn zero_workers_rejected() {
        let job = JobSpec {
            workers: 0,
            ..Default::default()
        };
        assert!(job.validate().is_err());
    }
}
