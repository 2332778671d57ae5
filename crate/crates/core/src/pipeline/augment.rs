use serde::{Deserialize, Serialize};

use crate::augment::{sample_augmentation, AugmentConfig, ArtifactTransform};
use crate::chunk::{ChunkGrid, ChunkStore, ChunkWriter, Dtype};
use crate::error::{Error, Result};
use crate::pool::WorkerPool;
use crate::volume::{LabelVolume, RawVolume, Region, Shape};

use super::{write_json, JobSpec, Provenance};

/// The transform applied to one patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPatch {
    pub patch_id: u64,
    pub region: Region,
    pub transform: ArtifactTransform,
}

pub(super) fn augment_patch(
    raw: RawVolume,
    label: LabelVolume,
    region: Region,
    patch_id: u64,
    cfg: &AugmentConfig,
) -> Result<(RawVolume, LabelVolume, AugmentedPatch)> {
    let transform = sample_augmentation(cfg, patch_id, region.shape)?;
    let (r, l) = transform.apply(&raw, &label)?;
    Ok((
        r,
        l,
        AugmentedPatch {
            patch_id,
            region,
            transform,
        },
    ))
}

/// Tiles a raw/label pair into patches (id = tile index, x fastest) and
/// augments each independently.
pub fn augment_volume(
    raw: &RawVolume,
    label: &LabelVolume,
    patch: Shape,
    cfg: &AugmentConfig,
    pool: &WorkerPool,
) -> Result<(RawVolume, LabelVolume, Vec<AugmentedPatch>)> {
    raw.same_shape(label)?;
    let grid = ChunkGrid::new(raw.shape(), patch)?;
    let parts = pool.try_map(grid.len(), |i| {
        let region = grid.region(grid.grid_coord(i));
        let origin = region.origin.map(|v| v as i64);
        augment_patch(
            raw.extract(origin, region.shape),
            label.extract(origin, region.shape),
            region,
            i as u64,
            cfg,
        )
    })?;
    let mut out_raw = RawVolume::new(raw.shape()).with_voxel_size(raw.voxel_size());
    let mut out_label = LabelVolume::new(raw.shape()).with_voxel_size(raw.voxel_size());
    let mut patches = Vec::with_capacity(parts.len());
    for (r, l, p) in parts {
        out_raw.insert(p.region.origin, &r);
        out_label.insert(p.region.origin, &l);
        patches.push(p);
    }
    Ok((out_raw, out_label, patches))
}

pub const TRANSFORMS_FILE: &str = "transforms.json";

/// Augments the raw (`inputs[0]`, f32) and label (`inputs[1]`, uint1)
/// datasets patch by patch into `output/raw` and `output/label`, recording
/// every sampled transform in `output/transforms.json`.
pub fn run_augment(job: &JobSpec) -> Result<Vec<AugmentedPatch>> {
    job.validate()?;
    let raw = ChunkStore::open(job.input(0)?)?;
    let label_dir = match job.inputs.get(1) {
        Some(p) => p.as_path(),
        None => job
            .labels
            .as_deref()
            .ok_or_else(|| Error::InvalidParameter("augment needs a raw and a label dataset".into()))?,
    };
    let label = ChunkStore::open(label_dir)?;
    if raw.shape() != label.shape() {
        return Err(Error::ShapeMismatch(raw.shape(), label.shape()));
    }
    for (store, want) in [(&raw, Dtype::F32), (&label, Dtype::Uint1)] {
        if store.dtype() != want {
            return Err(Error::DtypeMismatch {
                expected: want.name(),
                found: store.dtype().name().into(),
            });
        }
    }
    let cfg = AugmentConfig {
        seed: job.seed,
        ..job.augment.clone()
    };
    let out = job.output()?;
    let grid = ChunkGrid::new(raw.shape(), job.patch.unwrap_or(raw.chunk_grid().chunk))?;
    let raw_writer = ChunkWriter::create(out.join("raw"), grid, Dtype::F32, raw.voxel_size())?;
    let label_writer = ChunkWriter::create(out.join("label"), grid, Dtype::Uint1, label.voxel_size())?;
    let patches = job.pool()?.try_map(grid.len(), |i| {
        let g = grid.grid_coord(i);
        let region = grid.region(g);
        let (r, l, p) = augment_patch(raw.read(region, 0)?, label.read(region, 0)?, region, i as u64, &cfg)?;
        raw_writer.write_chunk(g, &r)?;
        label_writer.write_chunk(g, &l)?;
        Ok(p)
    })?;
    raw_writer.finish()?;
    label_writer.finish()?;
    write_json(&out.join(TRANSFORMS_FILE), &patches)?;
    let params = serde_json::json!({ "augment": cfg, "patch_shape": grid.chunk, "labels": label_dir });
    Provenance::new("augment", job, params).write(out)?;
    let changed = patches.iter().filter(|p| !p.transform.is_identity()).count();
    log::info!("augmented {changed} of {} patches into {}", patches.len(), out.display());
    Ok(patches)
}
