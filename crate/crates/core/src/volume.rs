//! Dense 3D grids and the coordinate conventions shared by every module.
//!
//! Voxels are addressed as `[x, y, z]`. Storage is linear with `x`
//! fastest-varying, i.e. `index = x + nx * (y + ny * z)`, which is the same
//! as `(z, y, x)` C-order. Reads outside the grid are zero (background) by
//! convention throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical voxel spacing in micrometres along `x`, `y`, `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSize(pub [f64; 3]);

impl Default for VoxelSize {
    /// Oblique light-sheet acquisition spacing: 0.406 x 0.406 x 2.5 um.
    fn default() -> Self {
        Self([0.406, 0.406, 2.5])
    }
}

impl VoxelSize {
    pub const ISOTROPIC: Self = Self([1.0, 1.0, 1.0]);
}

/// Voxel counts along `x`, `y`, `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(pub [usize; 3]);

impl Shape {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Self([nx, ny, nz])
    }

    pub const fn cube(n: usize) -> Self {
        Self([n, n, n])
    }

    pub fn nx(&self) -> usize {
        self.0[0]
    }

    pub fn ny(&self) -> usize {
        self.0[1]
    }

    pub fn nz(&self) -> usize {
        self.0[2]
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        p[0] < self.0[0] && p[1] < self.0[1] && p[2] < self.0[2]
    }

    pub fn contains_signed(&self, p: [i64; 3]) -> bool {
        (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.0[a])
    }

    #[inline]
    pub fn index(&self, p: [usize; 3]) -> usize {
        p[0] + self.0[0] * (p[1] + self.0[1] * p[2])
    }

    #[inline]
    pub fn coord(&self, index: usize) -> [usize; 3] {
        let x = index % self.0[0];
        let rest = index / self.0[0];
        [x, rest % self.0[1], rest / self.0[1]]
    }

    /// Iterates all coordinates in storage order (x fastest).
    pub fn coords(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let s = *self;
        (0..s.len()).map(move |i| s.coord(i))
    }

    fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&n| n == 0) {
            return Err(Error::InvalidShape(*self));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.0[0], self.0[1], self.0[2])
    }
}

/// Axis-aligned box `[origin, origin + shape)` in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub origin: [usize; 3],
    pub shape: Shape,
}

impl Region {
    pub fn new(origin: [usize; 3], shape: Shape) -> Self {
        Self { origin, shape }
    }

    pub fn whole(shape: Shape) -> Self {
        Self {
            origin: [0; 3],
            shape,
        }
    }

    pub fn end(&self) -> [usize; 3] {
        [
            self.origin[0] + self.shape.0[0],
            self.origin[1] + self.shape.0[1],
            self.origin[2] + self.shape.0[2],
        ]
    }

    pub fn fits_in(&self, outer: Shape) -> bool {
        let end = self.end();
        (0..3).all(|a| end[a] <= outer.0[a])
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.origin[a] && p[a] < self.origin[a] + self.shape.0[a])
    }
}

/// Coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::InvalidParameter(format!("unknown axis `{other}`"))),
        }
    }
}

/// Element types storable in a [`Grid`].
pub trait Voxel: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {}

impl Voxel for bool {}
impl Voxel for u8 {}
impl Voxel for u32 {}
impl Voxel for f32 {}
impl Voxel for f64 {}

/// A dense 3D grid with voxel spacing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    shape: Shape,
    voxel_size: VoxelSize,
    data: Vec<T>,
}

/// Real-valued intensity image.
pub type RawVolume = Grid<f32>;
/// Binary annotation or binarized segmentation.
pub type LabelVolume = Grid<bool>;
/// Soft segmentation output with values in `[0, 1]`.
pub type PredictionVolume = Grid<f32>;
/// Per-voxel loss weights, all `>= 1`.
pub type WeightVolume = Grid<f32>;

impl<T: Voxel> Grid<T> {
    /// A grid filled with `T::default()` (zero / background).
    pub fn new(shape: Shape) -> Self {
        Self::filled(shape, T::default())
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        assert!(shape.0.iter().all(|&n| n > 0), "grid shape {shape} has a zero extent");
        Self {
            shape,
            voxel_size: VoxelSize::default(),
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::LengthMismatch {
                expected: shape.len(),
                actual: data.len(),
            });
        }
        Ok(Self {
            shape,
            voxel_size: VoxelSize::default(),
            data,
        })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 3]) -> T) -> Self {
        assert!(shape.0.iter().all(|&n| n > 0), "grid shape {shape} has a zero extent");
        let data = (0..shape.len()).map(|i| f(shape.coord(i))).collect();
        Self {
            shape,
            voxel_size: VoxelSize::default(),
            data,
        }
    }

    pub fn with_voxel_size(mut self, voxel_size: VoxelSize) -> Self {
        self.voxel_size = voxel_size;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn voxel_size(&self) -> VoxelSize {
        self.voxel_size
    }

    pub fn set_voxel_size(&mut self, voxel_size: VoxelSize) {
        self.voxel_size = voxel_size;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, p: [usize; 3]) -> T {
        self.data[self.shape.index(p)]
    }

    /// Zero outside the grid.
    #[inline]
    pub fn get_or_default(&self, p: [i64; 3]) -> T {
        if self.shape.contains_signed(p) {
            self.data[self.shape.index([p[0] as usize, p[1] as usize, p[2] as usize])]
        } else {
            T::default()
        }
    }

    #[inline]
    pub fn set(&mut self, p: [usize; 3], value: T) {
        let i = self.shape.index(p);
        self.data[i] = value;
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            shape: self.shape,
            voxel_size: self.voxel_size,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies `region` out of the grid, zero-filling any part that lies
    /// outside. `origin` may be negative so halos can extend past the edge.
    pub fn extract(&self, origin: [i64; 3], shape: Shape) -> Grid<T> {
        let mut out = Grid::new(shape).with_voxel_size(self.voxel_size);
        let [nx, ny, nz] = shape.0;
        for z in 0..nz {
            let sz = origin[2] + z as i64;
            if sz < 0 || sz >= self.shape.nz() as i64 {
                continue;
            }
            for y in 0..ny {
                let sy = origin[1] + y as i64;
                if sy < 0 || sy >= self.shape.ny() as i64 {
                    continue;
                }
                let x_lo = (-origin[0]).max(0) as usize;
                let x_hi = ((self.shape.nx() as i64 - origin[0]).min(nx as i64)).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                let src = self.shape.index([(origin[0] + x_lo as i64) as usize, sy as usize, sz as usize]);
                let dst = shape.index([x_lo, y, z]);
                out.data[dst..dst + (x_hi - x_lo)].copy_from_slice(&self.data[src..src + (x_hi - x_lo)]);
            }
        }
        out
    }

    /// Writes `patch` into the grid at `origin`; the patch must fit.
    pub fn insert(&mut self, origin: [usize; 3], patch: &Grid<T>) {
        let region = Region::new(origin, patch.shape);
        assert!(region.fits_in(self.shape), "patch {} at {origin:?} exceeds {}", patch.shape, self.shape);
        let [nx, ny, nz] = patch.shape.0;
        for z in 0..nz {
            for y in 0..ny {
                let src = patch.shape.index([0, y, z]);
                let dst = self.shape.index([origin[0], origin[1] + y, origin[2] + z]);
                self.data[dst..dst + nx].copy_from_slice(&patch.data[src..src + nx]);
            }
        }
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(self.shape, other.shape));
        }
        Ok(())
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn foreground(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| self.shape.coord(i))
    }
}

impl Grid<f32> {
    /// Checks the raw-image invariant: every intensity finite and `>= 0`.
    pub fn validate_raw(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            Some(i) => Err(Error::InvalidVoxel {
                at: self.shape.coord(i),
                reason: format!("intensity {} is not finite and non-negative", self.data[i]),
            }),
            None => Ok(()),
        }
    }

    /// Checks the prediction invariant: every value in `[0, 1]`.
    pub fn validate_prediction(&self) -> Result<()> {
        match self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            Some(i) => Err(Error::InvalidVoxel {
                at: self.shape.coord(i),
                reason: format!("prediction {} outside [0, 1]", self.data[i]),
            }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_x_fastest() {
        let s = Shape::new(4, 3, 2);
        assert_eq!(s.index([1, 0, 0]), 1);
        assert_eq!(s.index([0, 1, 0]), 4);
        assert_eq!(s.index([0, 0, 1]), 12);
        for i in 0..s.len() {
            assert_eq!(s.index(s.coord(i)), i);
        }
    }

    #[test]
    fn extract_zero_fills_outside() {
        let g = Grid::<f32>::from_fn(Shape::cube(3), |p| (p[0] + 3 * p[1] + 9 * p[2]) as f32 + 1.0);
        let e = g.extract([-1, -1, -1], Shape::cube(3));
        assert_eq!(e.get([0, 0, 0]), 0.0);
        assert_eq!(e.get([1, 1, 1]), g.get([0, 0, 0]));
        assert_eq!(e.get([2, 2, 2]), g.get([1, 1, 1]));
        let far = g.extract([10, 0, 0], Shape::cube(2));
        assert!(far.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn insert_then_extract_round_trips() {
        let mut g = Grid::<u8>::new(Shape::new(5, 4, 3));
        let patch = Grid::<u8>::filled(Shape::new(2, 2, 2), 7);
        g.insert([3, 1, 1], &patch);
        assert_eq!(g.extract([3, 1, 1], Shape::new(2, 2, 2)), patch.with_voxel_size(g.voxel_size()));
        assert_eq!(g.get([2, 1, 1]), 0);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut g = RawVolume::new(Shape::cube(2));
        assert!(g.validate_raw().is_ok());
        g.set([1, 0, 1], -1.0);
        assert!(g.validate_raw().is_err());
        let mut p = PredictionVolume::filled(Shape::cube(2), 0.5);
        assert!(p.validate_prediction().is_ok());
        p.set([0, 0, 0], 1.5);
        assert!(p.validate_prediction().is_err());
        assert!(Grid::<f32>::from_vec(Shape::new(0, 1, 1), vec![]).is_err());
    }
}
