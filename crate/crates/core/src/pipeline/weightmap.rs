use crate::chunk::{ChunkGrid, ChunkManifest, ChunkStore, ChunkWriter, Dtype};
use crate::error::{Error, Result};
use crate::loss::{weight_map, LossConfig};
use crate::pool::WorkerPool;
use crate::volume::{LabelVolume, Region, Shape, WeightVolume};

use super::{read_binary, JobSpec, Provenance};

fn check_halo(halo: usize) -> Result<()> {
    if halo == 0 {
        return Err(Error::InvalidParameter("weight maps need a halo of at least 1".into()));
    }
    Ok(())
}

/// Weights of one chunk, from its binarized block and optional label block,
/// both grown by `halo`.
pub(super) fn block_weights(bin: &LabelVolume, label: Option<&LabelVolume>, halo: usize, shape: Shape, cfg: &LossConfig) -> WeightVolume {
    let mut w = weight_map(bin, cfg.weight);
    if let Some(label) = label {
        for ((w, &b), &y) in w.as_mut_slice().iter_mut().zip(bin.as_slice()).zip(label.as_slice()) {
            if b == y {
                *w = 1.0;
            }
        }
    }
    let h = halo as i64;
    w.extract([h, h, h], shape)
}

pub(super) fn chunk_block(vol: &LabelVolume, region: Region, halo: usize) -> LabelVolume {
    let h = halo as i64;
    let origin = region.origin.map(|v| v as i64 - h);
    vol.extract(origin, Shape(region.shape.0.map(|n| n + 2 * halo)))
}

/// Chunkwise weight map of an in-memory binary volume. Equal to
/// [`weight_map`] on the whole volume for any `halo >= 1`.
pub fn weightmap_volume(
    bin: &LabelVolume,
    label: Option<&LabelVolume>,
    chunk: Shape,
    halo: usize,
    cfg: &LossConfig,
    pool: &WorkerPool,
) -> Result<WeightVolume> {
    check_halo(halo)?;
    cfg.validate()?;
    if let Some(l) = label {
        bin.same_shape(l)?;
    }
    let grid = ChunkGrid::new(bin.shape(), chunk)?;
    let blocks = pool.map(grid.len(), |i| {
        let region = grid.region(grid.grid_coord(i));
        let b = chunk_block(bin, region, halo);
        let l = label.map(|l| chunk_block(l, region, halo));
        block_weights(&b, l.as_ref(), halo, region.shape, cfg)
    });
    let mut out = WeightVolume::new(bin.shape()).with_voxel_size(bin.voxel_size());
    for (i, block) in blocks.iter().enumerate() {
        out.insert(grid.region(grid.grid_coord(i)).origin, block);
    }
    Ok(out)
}

/// Weight map of the dataset `inputs[0]` (binary, or `f32` thresholded at
/// `loss.threshold`), written chunk by chunk to `output`.
pub fn run_weightmap(job: &JobSpec) -> Result<ChunkManifest> {
    job.validate()?;
    check_halo(job.halo)?;
    let store = ChunkStore::open(job.input(0)?)?;
    let labels = match (&job.labels, job.loss.intersect_disagreement) {
        (Some(dir), true) => {
            let l = ChunkStore::open(dir)?;
            if l.shape() != store.shape() {
                return Err(Error::ShapeMismatch(store.shape(), l.shape()));
            }
            Some(l)
        }
        (None, true) => return Err(Error::InvalidParameter("disagreement weighting needs --labels".into())),
        (_, false) => None,
    };
    let out = job.output()?;
    let grid = ChunkGrid::new(store.shape(), job.patch.unwrap_or(store.chunk_grid().chunk))?;
    let writer = ChunkWriter::create(out, grid, Dtype::F32, store.voxel_size())?;
    let cfg = &job.loss;
    job.pool()?.try_map(grid.len(), |i| {
        let g = grid.grid_coord(i);
        let region = grid.region(g);
        let bin = read_binary(&store, region, job.halo, cfg.threshold)?;
        let label = labels
            .as_ref()
            .map(|l| read_binary(l, region, job.halo, cfg.threshold))
            .transpose()?;
        writer.write_chunk(g, &block_weights(&bin, label.as_ref(), job.halo, region.shape, cfg))
    })?;
    let manifest = writer.finish()?;
    let params = serde_json::json!({
        "loss": cfg,
        "halo": job.halo,
        "chunk_shape": grid.chunk,
        "labels": job.labels,
    });
    Provenance::new("weightmap", job, params).write(out)?;
    log::info!("weight map of {} written to {}", store.shape(), out.display());
    Ok(manifest)
}
