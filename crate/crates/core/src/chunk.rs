//! Parcellated on-disk volumes.
//!
//! A store is a directory holding `manifest.json` plus one file per chunk,
//! named `c_<zi>_<yi>_<xi>.bin`. Chunk payloads are little-endian with `x`
//! fastest-varying. `uint1` payloads are bit-packed, least significant bit
//! first, padded to a whole byte at the end of the chunk. All shapes and
//! grid coordinates in the manifest are listed in `axis_order`, which is
//! always `["z", "y", "x"]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::volume::{Grid, Region, Shape, Voxel, VoxelSize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Uint1,
    F32,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::Uint1 => "uint1",
            Dtype::F32 => "f32",
        }
    }
}

/// Voxel types with a defined on-disk encoding.
pub trait ChunkElement: Voxel {
    const DTYPE: Dtype;

    fn encode(values: &[Self]) -> Vec<u8>;

    fn decode(bytes: &[u8], count: usize) -> Option<Vec<Self>>;
}

impl ChunkElement for bool {
    const DTYPE: Dtype = Dtype::Uint1;

    fn encode(values: &[Self]) -> Vec<u8> {
        let mut out = vec![0u8; values.len().div_ceil(8)];
        for (i, _) in values.iter().enumerate().filter(|(_, &v)| v) {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    fn decode(bytes: &[u8], count: usize) -> Option<Vec<Self>> {
        if bytes.len() != count.div_ceil(8) {
            return None;
        }
        Some((0..count).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
    }
}

impl ChunkElement for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn encode(values: &[Self]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn decode(bytes: &[u8], count: usize) -> Option<Vec<Self>> {
        if bytes.len() != count * 4 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub id: String,
    /// Chunk grid coordinate in `axis_order`.
    pub grid: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkManifest {
    /// Volume extent in `axis_order`.
    pub volume_shape: [usize; 3],
    /// Chunk extent in `axis_order`.
    pub chunk_shape: [usize; 3],
    pub dtype: Dtype,
    pub axis_order: [String; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_size: Option<[f64; 3]>,
    pub chunks: Vec<ChunkEntry>,
    /// SHA-256 of each chunk file, hex encoded, keyed by chunk id.
    pub checksums: BTreeMap<String, String>,
}

fn zyx(s: Shape) -> [usize; 3] {
    [s.0[2], s.0[1], s.0[0]]
}

fn xyz(a: [usize; 3]) -> Shape {
    Shape([a[2], a[1], a[0]])
}

pub fn chunk_id(grid_xyz: [usize; 3]) -> String {
    format!("c_{}_{}_{}", grid_xyz[2], grid_xyz[1], grid_xyz[0])
}

/// How a volume is tiled into chunks. Chunk index `i` enumerates grid cells
/// with `x` fastest, which is also the order of `manifest.chunks`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkGrid {
    pub volume: Shape,
    pub chunk: Shape,
}

impl ChunkGrid {
    pub fn new(volume: Shape, chunk: Shape) -> Result<Self> {
        if chunk.0.iter().any(|&c| c == 0) {
            return Err(Error::InvalidParameter(format!("chunk shape {chunk} has a zero extent")));
        }
        if volume.0.iter().any(|&c| c == 0) {
            return Err(Error::InvalidShape(volume));
        }
        Ok(Self { volume, chunk })
    }

    pub fn counts(&self) -> Shape {
        Shape([
            self.volume.0[0].div_ceil(self.chunk.0[0]),
            self.volume.0[1].div_ceil(self.chunk.0[1]),
            self.volume.0[2].div_ceil(self.chunk.0[2]),
        ])
    }

    pub fn len(&self) -> usize {
        self.counts().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid_coord(&self, index: usize) -> [usize; 3] {
        self.counts().coord(index)
    }

    /// The voxel region covered by chunk `grid` (clipped at the volume edge).
    pub fn region(&self, grid: [usize; 3]) -> Region {
        let origin = [
            grid[0] * self.chunk.0[0],
            grid[1] * self.chunk.0[1],
            grid[2] * self.chunk.0[2],
        ];
        let shape = Shape([
            self.chunk.0[0].min(self.volume.0[0] - origin[0]),
            self.chunk.0[1].min(self.volume.0[1] - origin[1]),
            self.chunk.0[2].min(self.volume.0[2] - origin[2]),
        ]);
        Region::new(origin, shape)
    }

    pub fn regions(&self) -> impl Iterator<Item = ([usize; 3], Region)> + '_ {
        (0..self.len()).map(|i| {
            let g = self.grid_coord(i);
            (g, self.region(g))
        })
    }
}

/// Writes chunks of a store one at a time, possibly from several threads
/// (one writer per chunk file), then seals it with a manifest.
#[derive(Debug)]
pub struct ChunkWriter {
    dir: PathBuf,
    grid: ChunkGrid,
    dtype: Dtype,
    voxel_size: VoxelSize,
    checksums: Mutex<BTreeMap<String, String>>,
}

impl ChunkWriter {
    pub fn create(dir: impl AsRef<Path>, grid: ChunkGrid, dtype: Dtype, voxel_size: VoxelSize) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let stale = dir.join(MANIFEST_FILE);
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| Error::io(format!("removing {}", stale.display()), e))?;
        }
        Ok(Self {
            dir,
            grid,
            dtype,
            voxel_size,
            checksums: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn grid(&self) -> ChunkGrid {
        self.grid
    }

    pub fn write_chunk<T: ChunkElement>(&self, grid: [usize; 3], data: &Grid<T>) -> Result<()> {
        if T::DTYPE != self.dtype {
            return Err(Error::DtypeMismatch {
                expected: T::DTYPE.name(),
                found: self.dtype.name().to_string(),
            });
        }
        let region = self.grid.region(grid);
        if data.shape() != region.shape {
            return Err(Error::ShapeMismatch(region.shape, data.shape()));
        }
        let bytes = T::encode(data.as_slice());
        let id = chunk_id(grid);
        let path = self.dir.join(format!("{id}.bin"));
        fs::write(&path, &bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        self.checksums.lock().expect("checksum table poisoned").insert(id, digest);
        Ok(())
    }

    /// Writes `manifest.json`; every chunk must have been written.
    pub fn finish(self) -> Result<ChunkManifest> {
        let checksums = self.checksums.into_inner().expect("checksum table poisoned");
        let mut chunks = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            let g = self.grid.grid_coord(i);
            let id = chunk_id(g);
            if !checksums.contains_key(&id) {
                return Err(Error::MissingChunk(self.dir.join(format!("{id}.bin"))));
            }
            chunks.push(ChunkEntry {
                id,
                grid: [g[2], g[1], g[0]],
            });
        }
        let manifest = ChunkManifest {
            volume_shape: zyx(self.grid.volume),
            chunk_shape: zyx(self.grid.chunk),
            dtype: self.dtype,
            axis_order: ["z".into(), "y".into(), "x".into()],
            voxel_size: Some(self.voxel_size.0),
            chunks,
            checksums,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(manifest)
    }
}

/// Tiles `volume` into `chunk_shape` chunks under `dir`.
pub fn chunk_write<T: ChunkElement>(volume: &Grid<T>, chunk_shape: Shape, dir: impl AsRef<Path>) -> Result<ChunkManifest> {
    let grid = ChunkGrid::new(volume.shape(), chunk_shape)?;
    let writer = ChunkWriter::create(dir, grid, T::DTYPE, volume.voxel_size())?;
    for (g, region) in grid.regions() {
        let origin = region.origin.map(|v| v as i64);
        writer.write_chunk(g, &volume.extract(origin, region.shape))?;
    }
    writer.finish()
}

/// An opened chunk store.
#[derive(Debug, Clone)]
pub struct ChunkStore {
    dir: PathBuf,
    manifest: ChunkManifest,
    grid: ChunkGrid,
}

impl ChunkStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let manifest: ChunkManifest = serde_json::from_str(&text)?;
        Self::from_manifest(dir, manifest)
    }

    pub fn from_manifest(dir: impl AsRef<Path>, manifest: ChunkManifest) -> Result<Self> {
        if manifest.axis_order != ["z", "y", "x"] {
            return Err(Error::Manifest(format!("unsupported axis order {:?}", manifest.axis_order)));
        }
        let grid = ChunkGrid::new(xyz(manifest.volume_shape), xyz(manifest.chunk_shape))
            .map_err(|e| Error::Manifest(e.to_string()))?;
        if manifest.chunks.len() != grid.len() {
            return Err(Error::Manifest(format!(
                "{} chunks listed, grid needs {}",
                manifest.chunks.len(),
                grid.len()
            )));
        }
        for (i, entry) in manifest.chunks.iter().enumerate() {
            let g = grid.grid_coord(i);
            if entry.grid != [g[2], g[1], g[0]] || entry.id != chunk_id(g) {
                return Err(Error::Manifest(format!("chunk entry {i} is `{}`, expected `{}`", entry.id, chunk_id(g))));
            }
            if !manifest.checksums.contains_key(&entry.id) {
                return Err(Error::Manifest(format!("no checksum for {}", entry.id)));
            }
        }
        Ok(Self {
            dir: dir.as_ref().to_path_buf(),
            manifest,
            grid,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &ChunkManifest {
        &self.manifest
    }

    pub fn shape(&self) -> Shape {
        self.grid.volume
    }

    pub fn dtype(&self) -> Dtype {
        self.manifest.dtype
    }

    pub fn chunk_grid(&self) -> ChunkGrid {
        self.grid
    }

    pub fn voxel_size(&self) -> VoxelSize {
        self.manifest.voxel_size.map(VoxelSize).unwrap_or_default()
    }

    /// Reads and verifies one whole chunk.
    pub fn read_chunk<T: ChunkElement>(&self, grid: [usize; 3]) -> Result<Grid<T>> {
        if T::DTYPE != self.manifest.dtype {
            return Err(Error::DtypeMismatch {
                expected: T::DTYPE.name(),
                found: self.manifest.dtype.name().to_string(),
            });
        }
        let id = chunk_id(grid);
        let path = self.dir.join(format!("{id}.bin"));
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingChunk(path)),
            Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
        };
        let expected = self
            .manifest
            .checksums
            .get(&id)
            .ok_or_else(|| Error::Manifest(format!("no checksum for {id}")))?;
        if hex::encode(Sha256::digest(&bytes)) != *expected {
            return Err(Error::ChecksumMismatch(id));
        }
        let shape = self.grid.region(grid).shape;
        let data = T::decode(&bytes, shape.len()).ok_or_else(|| Error::ChecksumMismatch(id))?;
        Ok(Grid::from_vec(shape, data)?.with_voxel_size(self.voxel_size()))
    }

    /// Reads `region` grown by `halo` voxels on every side. Halo voxels that
    /// fall outside the volume are zero.
    pub fn read<T: ChunkElement>(&self, region: Region, halo: usize) -> Result<Grid<T>> {
        if !region.fits_in(self.shape()) || region.shape.is_empty() {
            return Err(Error::RegionOutOfBounds {
                origin: region.origin,
                shape: region.shape,
                volume: self.shape(),
            });
        }
        let h = halo as i64;
        let origin = region.origin.map(|v| v as i64 - h);
        let out_shape = Shape(region.shape.0.map(|n| n + 2 * halo));
        let mut out = Grid::<T>::new(out_shape).with_voxel_size(self.voxel_size());

        // In-bounds part of the requested box, in volume coordinates.
        let lo: [usize; 3] = std::array::from_fn(|a| origin[a].max(0) as usize);
        let hi: [usize; 3] = std::array::from_fn(|a| ((origin[a] + out_shape.0[a] as i64) as usize).min(self.shape().0[a]));
        let c = self.grid.chunk.0;
        let g_lo: [usize; 3] = std::array::from_fn(|a| lo[a] / c[a]);
        let g_hi: [usize; 3] = std::array::from_fn(|a| (hi[a] - 1) / c[a]);
        for gz in g_lo[2]..=g_hi[2] {
            for gy in g_lo[1]..=g_hi[1] {
                for gx in g_lo[0]..=g_hi[0] {
                    let g = [gx, gy, gz];
                    let chunk = self.read_chunk::<T>(g)?;
                    let cr = self.grid.region(g);
                    let s: [usize; 3] = std::array::from_fn(|a| lo[a].max(cr.origin[a]));
                    let e: [usize; 3] = std::array::from_fn(|a| hi[a].min(cr.origin[a] + cr.shape.0[a]));
                    let piece = chunk.extract(
                        std::array::from_fn(|a| (s[a] - cr.origin[a]) as i64),
                        Shape(std::array::from_fn(|a| e[a] - s[a])),
                    );
                    out.insert(std::array::from_fn(|a| (s[a] as i64 - origin[a]) as usize), &piece);
                }
            }
        }
        Ok(out)
    }

    pub fn read_all<T: ChunkElement>(&self) -> Result<Grid<T>> {
        self.read(Region::whole(self.shape()), 0)
    }
}

/// Reads `region` (plus `halo`) from the store described by `manifest` in `dir`.
pub fn chunk_read<T: ChunkElement>(manifest: &ChunkManifest, dir: impl AsRef<Path>, region: Region, halo: usize) -> Result<Grid<T>> {
    ChunkStore::from_manifest(dir, manifest.clone())?.read(region, halo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: Shape) -> Grid<f32> {
        Grid::from_fn(shape, |p| (p[0] * 10_000 + p[1] * 100 + p[2]) as f32)
    }

    #[test]
    fn chunk_counts_follow_ceiling_division() {
        let count = |v: usize, c: usize| ChunkGrid::new(Shape::cube(v), Shape::cube(c)).unwrap().len();
        assert_eq!(count(64, 32), 8);
        assert_eq!(count(10, 64), 1);
        assert_eq!(count(33, 32), 8);
        let g = ChunkGrid::new(Shape::cube(33), Shape::cube(32)).unwrap();
        let partial = g.regions().filter(|(_, r)| r.shape != Shape::cube(32)).count();
        assert_eq!(partial, 7);
    }

    #[test]
    fn zero_chunk_shape_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let v = Grid::<f32>::new(Shape::cube(4));
        assert!(matches!(
            chunk_write(&v, Shape::new(0, 2, 2), dir.path()),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn manifest_names_and_orders_chunks() {
        let dir = tempfile::tempdir().unwrap();
        let v = ramp(Shape::new(5, 3, 2));
        let m = chunk_write(&v, Shape::new(2, 2, 2), dir.path()).unwrap();
        assert_eq!(m.volume_shape, [2, 3, 5]);
        assert_eq!(m.chunk_shape, [2, 2, 2]);
        assert_eq!(m.chunks.len(), 6);
        assert_eq!(m.chunks[1].id, "c_0_0_1");
        assert_eq!(m.chunks[3].id, "c_0_1_0");
        assert!(dir.path().join("c_0_1_2.bin").exists());
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        for key in ["volume_shape", "chunk_shape", "dtype", "axis_order", "chunks", "checksums"] {
            assert!(json.get(key).is_some(), "manifest lacks {key}");
        }
        assert_eq!(json["dtype"], "f32");
    }

    #[test]
    fn full_read_round_trips_both_dtypes() {
        let dir = tempfile::tempdir().unwrap();
        let v = ramp(Shape::new(7, 6, 5));
        let m = chunk_write(&v, Shape::new(3, 4, 2), dir.path().join("f")).unwrap();
        let back: Grid<f32> = chunk_read(&m, dir.path().join("f"), Region::whole(v.shape()), 0).unwrap();
        assert_eq!(back.as_slice(), v.as_slice());

        let bits = Grid::<bool>::from_fn(Shape::new(9, 3, 4), |p| (p[0] * 7 + p[1] * 3 + p[2]) % 5 == 0);
        let m = chunk_write(&bits, Shape::new(4, 2, 3), dir.path().join("b")).unwrap();
        assert_eq!(m.dtype, Dtype::Uint1);
        let back: Grid<bool> = chunk_read(&m, dir.path().join("b"), Region::whole(bits.shape()), 0).unwrap();
        assert_eq!(back.as_slice(), bits.as_slice());
    }

    #[test]
    fn corner_halo_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let v = Grid::<f32>::filled(Shape::cube(6), 3.0);
        chunk_write(&v, Shape::cube(4), dir.path()).unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        let patch: Grid<f32> = store.read(Region::new([0, 0, 0], Shape::cube(2)), 1).unwrap();
        assert_eq!(patch.shape(), Shape::cube(4));
        for p in patch.shape().coords() {
            let outside = p.iter().any(|&c| c == 0);
            assert_eq!(patch.get(p), if outside { 0.0 } else { 3.0 }, "at {p:?}");
        }
    }

    #[test]
    fn straddling_read_matches_slice() {
        let dir = tempfile::tempdir().unwrap();
        let v = ramp(Shape::new(8, 8, 3));
        chunk_write(&v, Shape::new(4, 4, 3), dir.path()).unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        let region = Region::new([2, 2, 0], Shape::new(4, 4, 3));
        let patch: Grid<f32> = store.read(region, 0).unwrap();
        assert_eq!(patch, v.extract([2, 2, 0], region.shape));
    }

    #[test]
    fn corruption_and_missing_files_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let v = ramp(Shape::cube(4));
        chunk_write(&v, Shape::cube(2), dir.path()).unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        let f = dir.path().join("c_0_0_1.bin");
        let mut bytes = fs::read(&f).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&f, bytes).unwrap();
        assert!(matches!(store.read_all::<f32>(), Err(Error::ChecksumMismatch(id)) if id == "c_0_0_1"));
        fs::remove_file(dir.path().join("c_1_1_1.bin")).unwrap();
        assert!(matches!(
            store.read::<f32>(Region::new([2, 2, 2], Shape::cube(2)), 0),
            Err(Error::MissingChunk(_))
        ));
    }

    #[test]
    fn wrong_dtype_and_out_of_bounds_region_fail() {
        let dir = tempfile::tempdir().unwrap();
        chunk_write(&Grid::<bool>::new(Shape::cube(4)), Shape::cube(2), dir.path()).unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        assert!(matches!(store.read_all::<f32>(), Err(Error::DtypeMismatch { .. })));
        assert!(matches!(
            store.read::<bool>(Region::new([3, 0, 0], Shape::cube(2)), 0),
            Err(Error::RegionOutOfBounds { .. })
        ));
    }

    #[test]
    fn unwritable_directory_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let v = Grid::<f32>::new(Shape::cube(2));
        assert!(matches!(chunk_write(&v, Shape::cube(2), blocker.join("sub")), Err(Error::Io { .. })));
    }
}
