//! Conversion between chunk stores and NumPy `.npy` arrays. Arrays are
//! C-ordered `(z, y, x)`, which is the storage order of [`Grid`].

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use npyz::{DType, NpyFile, TypeChar, WriterBuilder};

use crate::chunk::{chunk_write, ChunkManifest, ChunkStore, Dtype};
use crate::error::{Error, Result};
use crate::volume::{Grid, Shape, Voxel, VoxelSize};

use super::{JobSpec, Provenance};

fn io_err(context: String) -> impl FnOnce(std::io::Error) -> Error {
    move |e| Error::io(context, e)
}

/// Imports a 3-D `.npy` array (`bool`/`uint8` as a binary label, floats as
/// `f32` intensities) into a chunk store.
pub fn import_npy(path: &Path, dir: &Path, chunk: Shape, voxel_size: VoxelSize) -> Result<ChunkManifest> {
    let ctx = || format!("reading {}", path.display());
    let file = File::open(path).map_err(io_err(ctx()))?;
    let npy = NpyFile::new(BufReader::new(file)).map_err(io_err(ctx()))?;
    if npy.order() != npyz::Order::C {
        return Err(Error::Manifest(format!("{}: only C-ordered arrays are supported", path.display())));
    }
    let dims = npy.shape();
    if dims.len() != 3 {
        return Err(Error::Manifest(format!("{}: expected a 3-D array, found shape {dims:?}", path.display())));
    }
    let shape = Shape([dims[2] as usize, dims[1] as usize, dims[0] as usize]);
    let DType::Plain(ts) = npy.dtype() else {
        return Err(Error::Manifest(format!("{}: structured arrays are not supported", path.display())));
    };
    let volume_bad = |found: String| Error::DtypeMismatch {
        expected: "bool, uint8, float32 or float64",
        found,
    };
    match (ts.type_char(), ts.num_bytes()) {
        (TypeChar::Bool, _) => {
            let data: Vec<bool> = npy.into_vec().map_err(io_err(ctx()))?;
            chunk_write(&grid(shape, data, voxel_size)?, chunk, dir)
        }
        (TypeChar::Uint, Some(1)) => {
            let data: Vec<u8> = npy.into_vec().map_err(io_err(ctx()))?;
            if let Some(v) = data.iter().find(|&&v| v > 1) {
                return Err(Error::InvalidVoxel {
                    at: [0, 0, 0],
                    reason: format!("uint8 label value {v} is not 0 or 1"),
                });
            }
            chunk_write(&grid(shape, data.into_iter().map(|v| v == 1).collect(), voxel_size)?, chunk, dir)
        }
        (TypeChar::Float, Some(4)) => {
            let data: Vec<f32> = npy.into_vec().map_err(io_err(ctx()))?;
            chunk_write(&grid(shape, data, voxel_size)?, chunk, dir)
        }
        (TypeChar::Float, Some(8)) => {
            let data: Vec<f64> = npy.into_vec().map_err(io_err(ctx()))?;
            chunk_write(&grid(shape, data.into_iter().map(|v| v as f32).collect(), voxel_size)?, chunk, dir)
        }
        _ => Err(volume_bad(ts.to_string())),
    }
}

fn grid<T: Voxel>(shape: Shape, data: Vec<T>, voxel_size: VoxelSize) -> Result<Grid<T>> {
    Ok(Grid::from_vec(shape, data)?.with_voxel_size(voxel_size))
}

fn write_array<T: npyz::AutoSerialize + Copy>(path: &Path, shape: Shape, data: &[T]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let file = File::create(path).map_err(io_err(ctx()))?;
    let dims = [shape.nz() as u64, shape.ny() as u64, shape.nx() as u64];
    let mut w = npyz::WriteOptions::new()
        .default_dtype()
        .shape(&dims)
        .writer(BufWriter::new(file))
        .begin_nd()
        .map_err(io_err(ctx()))?;
    w.extend(data.iter().copied()).map_err(io_err(ctx()))?;
    w.finish().map_err(io_err(ctx()))
}

/// Exports a whole chunk store as a `.npy` array (`bool` or `float32`).
pub fn export_npy(dir: &Path, path: &Path) -> Result<Shape> {
    let store = ChunkStore::open(dir)?;
    let shape = store.shape();
    match store.dtype() {
        Dtype::Uint1 => write_array(path, shape, store.read_all::<bool>()?.as_slice())?,
        Dtype::F32 => write_array(path, shape, store.read_all::<f32>()?.as_slice())?,
    }
    Ok(shape)
}

/// `chunk import`: `inputs[0]` (.npy) into the store at `output`.
pub fn run_import(job: &JobSpec) -> Result<ChunkManifest> {
    job.validate()?;
    let out = job.output()?;
    let chunk = job.patch.unwrap_or(Shape::cube(64));
    let voxel_size = job.voxel_size.unwrap_or_default();
    let manifest = import_npy(job.input(0)?, out, chunk, voxel_size)?;
    Provenance::new("chunk import", job, serde_json::json!({ "chunk_shape": chunk, "voxel_size": voxel_size })).write(out)?;
    Ok(manifest)
}

/// `chunk export`: the store `inputs[0]` into the `.npy` file `output`.
pub fn run_export(job: &JobSpec) -> Result<Shape> {
    export_npy(job.input(0)?, job.output()?)
}
