//! The individual artifact models and rigid symmetries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Axis, Grid, LabelVolume, RawVolume, Region, Shape, Voxel, VoxelSize};

/// Branch occlusion: a Gaussian point-spread function centred on the missing
/// fluorophore is subtracted from the raw image (floored at zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionParams {
    pub center: [usize; 3],
    /// PSF standard deviation per axis, in voxels.
    pub psf_sigma: [f64; 3],
    /// Peak intensity removed at the centre.
    pub amplitude: f64,
}

/// Stage stall: inside the box `region`, every slice along `axis` is replaced
/// by slice `source`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateParams {
    pub axis: Axis,
    pub source: usize,
    pub region: Region,
}

/// Stage jump: `delta` slices after `position` are skipped along `axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropParams {
    pub axis: Axis,
    pub position: usize,
    pub delta: usize,
}

/// Stitching misalignment: everything past `position` along `split_axis` is
/// translated by `delta` voxels along `shift_axis`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchParams {
    pub split_axis: Axis,
    pub shift_axis: Axis,
    pub position: usize,
    pub delta: usize,
}

/// Light scattering: convolution with a normalized Gaussian plus a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterParams {
    /// Kernel mean offset in voxels.
    pub mean: [f64; 3],
    /// Kernel covariance in voxels squared; must be symmetric positive definite.
    pub covariance: [[f64; 3]; 3],
    /// Additive background.
    pub lambda: f64,
}

impl ScatterParams {
    pub fn diagonal(sigma: [f64; 3], lambda: f64) -> Self {
        let mut covariance = [[0.0; 3]; 3];
        for a in 0..3 {
            covariance[a][a] = sigma[a] * sigma[a];
        }
        Self {
            mean: [0.0; 3],
            covariance,
            lambda,
        }
    }

    fn is_diagonal(&self) -> bool {
        (0..3).all(|i| (0..3).all(|j| i == j || self.covariance[i][j] == 0.0))
    }

    fn support_radius(&self) -> [i64; 3] {
        std::array::from_fn(|a| (4.0 * self.covariance[a][a].sqrt() + self.mean[a].abs()).ceil().max(1.0) as i64)
    }
}

/// An axis-aligned rigid symmetry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Symmetry {
    Flip { axis: Axis },
    /// Counter-clockwise quarter turns about `axis`.
    Rotate { axis: Axis, quarter_turns: u8 },
}

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(what()))
    }
}

impl OcclusionParams {
    pub fn validate(&self, shape: Shape) -> Result<()> {
        check(shape.contains(self.center), || format!("occlusion centre {:?} outside {shape}", self.center))?;
        check(self.psf_sigma.iter().all(|&s| s > 0.0 && s.is_finite()), || {
            format!("PSF sigma {:?} must be positive", self.psf_sigma)
        })?;
        check(self.amplitude > 0.0 && self.amplitude.is_finite(), || {
            format!("occlusion amplitude {} must be positive", self.amplitude)
        })
    }
}

impl DuplicateParams {
    pub fn validate(&self, shape: Shape) -> Result<()> {
        let a = self.axis.index();
        check(self.source < shape.0[a], || format!("duplicate source slice {} outside {shape}", self.source))?;
        check(self.region.fits_in(shape) && !self.region.shape.is_empty(), || {
            format!("duplicate region {:?} outside {shape}", self.region)
        })?;
        let lo = self.region.origin[a];
        let hi = lo + self.region.shape.0[a];
        check(lo <= self.source && self.source < hi, || {
            format!("duplicate region along {:?} [{lo}, {hi}) misses source slice {}", self.axis, self.source)
        })?;
        check(self.region.shape.0[a] >= 2, || "duplicate region must span at least two slices".into())
    }
}

impl DropParams {
    pub fn validate(&self, shape: Shape) -> Result<()> {
        let n = shape.0[self.axis.index()];
        check(self.position < n, || format!("drop position {} outside {shape}", self.position))?;
        if self.delta == 0 {
            return Ok(());
        }
        check(self.position >= self.delta && self.position + 2 * self.delta < n, || {
            format!(
                "drop band [{}, {}] does not fit in {n} slices",
                self.position as i64 - self.delta as i64,
                self.position + 2 * self.delta
            )
        })
    }
}

impl StitchParams {
    fn half_band(&self) -> usize {
        self.delta.div_ceil(2)
    }

    pub fn validate(&self, shape: Shape) -> Result<()> {
        check(self.split_axis != self.shift_axis, || "stitch split and shift axes must differ".into())?;
        let n = shape.0[self.split_axis.index()];
        check(self.position < n, || format!("stitch position {} outside {shape}", self.position))?;
        if self.delta == 0 {
            return Ok(());
        }
        let h = self.half_band();
        check(self.position >= h && self.position + h + 1 < n, || {
            format!("stitch band around {} does not fit in {n} slices", self.position)
        })?;
        check(self.delta < shape.0[self.shift_axis.index()], || {
            format!("stitch shift {} exceeds the volume", self.delta)
        })
    }

    /// Shift applied to the label at split coordinate `x`: rises from 0 to
    /// `delta` in unit steps across the band `|x - position| <= delta / 2`.
    pub fn label_offset(&self, x: i64) -> usize {
        let d = self.delta as i64;
        // ceil(x - position + delta / 2)
        let twice = 2 * (x - self.position as i64) + d;
        let t = twice.div_euclid(2) + twice.rem_euclid(2);
        t.clamp(0, d) as usize
    }
}

impl ScatterParams {
    pub fn validate(&self) -> Result<()> {
        check(self.lambda >= 0.0 && self.lambda.is_finite(), || format!("lambda {} must be >= 0", self.lambda))?;
        check(self.mean.iter().all(|m| m.is_finite()), || "kernel mean must be finite".into())?;
        let c = &self.covariance;
        let symmetric = (0..3).all(|i| (0..3).all(|j| (c[i][j] - c[j][i]).abs() <= 1e-12 * (c[i][i].abs() + c[j][j].abs())));
        check(symmetric, || "kernel covariance must be symmetric".into())?;
        check(cholesky(c).is_some(), || "kernel covariance must be positive definite".into())
    }
}

fn cholesky(c: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = c[i][i] - s;
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (c[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

fn invert3(c: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = c[0][0] * (c[1][1] * c[2][2] - c[1][2] * c[2][1]) - c[0][1] * (c[1][0] * c[2][2] - c[1][2] * c[2][0])
        + c[0][2] * (c[1][0] * c[2][1] - c[1][1] * c[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (c[r0][c0] * c[r1][c1] - c[r0][c1] * c[r1][c0]) / det;
        }
    }
    inv
}

/// Subtracts a peak-normalized Gaussian PSF; voxels beyond 4 sigma
/// (Mahalanobis) are untouched.
pub fn occlude_branch(raw: &RawVolume, p: &OcclusionParams) -> Result<RawVolume> {
    p.validate(raw.shape())?;
    let mut out = raw.clone();
    let s = raw.shape();
    let r: [i64; 3] = std::array::from_fn(|a| (4.0 * p.psf_sigma[a]).ceil() as i64);
    let c = p.center.map(|v| v as i64);
    for z in (c[2] - r[2]).max(0)..=(c[2] + r[2]).min(s.nz() as i64 - 1) {
        for y in (c[1] - r[1]).max(0)..=(c[1] + r[1]).min(s.ny() as i64 - 1) {
            for x in (c[0] - r[0]).max(0)..=(c[0] + r[0]).min(s.nx() as i64 - 1) {
                let q = [x, y, z];
                let d2: f64 = (0..3).map(|a| ((q[a] - c[a]) as f64 / p.psf_sigma[a]).powi(2)).sum();
                if d2 > 16.0 {
                    continue;
                }
                let at = [x as usize, y as usize, z as usize];
                let v = f64::from(raw.get(at)) - p.amplitude * (-0.5 * d2).exp();
                out.set(at, v.max(0.0) as f32);
            }
        }
    }
    Ok(out)
}

/// Replaces every slice of the box with the source slice.
pub fn duplicate_sections(raw: &RawVolume, p: &DuplicateParams) -> Result<RawVolume> {
    p.validate(raw.shape())?;
    let a = p.axis.index();
    let mut out = raw.clone();
    let end = p.region.end();
    for z in p.region.origin[2]..end[2] {
        for y in p.region.origin[1]..end[1] {
            for x in p.region.origin[0]..end[0] {
                let mut src = [x, y, z];
                src[a] = p.source;
                out.set([x, y, z], raw.get(src));
            }
        }
    }
    Ok(out)
}

/// Moves label slices along `axis`: output slice `map(s)` receives the union
/// of every source slice `s` mapped onto it.
fn merge_slices(g: &LabelVolume, axis: Axis, map: impl Fn(usize) -> usize) -> LabelVolume {
    let a = axis.index();
    let s = g.shape();
    let mut out = LabelVolume::new(s).with_voxel_size(g.voxel_size());
    for (i, &v) in g.as_slice().iter().enumerate() {
        if v {
            let mut q = s.coord(i);
            q[a] = map(q[a]);
            out.set(q, true);
        }
    }
    out
}

/// Raw: slices past `position` are pulled from `delta` further on (zero past
/// the end). Label: the `3 delta` slices starting at `position - delta` are
/// compressed into `2 delta` slices; output slice `t` of the band is the
/// union of the source slices whose 2:3-scaled index floors to `t`, i.e. the
/// source slices nearest to `1.5 t`. Beyond the band the label shifts by
/// `delta`, staying registered with the raw image. The slice map is
/// monotone with unit steps, so 26-connected labels stay connected.
pub fn drop_sections(raw: &RawVolume, label: &LabelVolume, p: &DropParams) -> Result<(RawVolume, LabelVolume)> {
    raw.same_shape(label)?;
    Ok((drop_sections_raw(raw, p)?, drop_sections_label(label, p)?))
}

pub fn drop_sections_raw(raw: &RawVolume, p: &DropParams) -> Result<RawVolume> {
    p.validate(raw.shape())?;
    if p.delta == 0 {
        return Ok(raw.clone());
    }
    let n = raw.shape().0[p.axis.index()];
    // Inverse map: output x <- source x (x <= x0) or x + delta.
    let mut out = RawVolume::new(raw.shape()).with_voxel_size(raw.voxel_size());
    let a = p.axis.index();
    for q in raw.shape().coords() {
        let x = q[a];
        let src = if x <= p.position { x } else { x + p.delta };
        if src < n {
            let mut s = q;
            s[a] = src;
            out.set(q, raw.get(s));
        }
    }
    Ok(out)
}

pub fn drop_sections_label(label: &LabelVolume, p: &DropParams) -> Result<LabelVolume> {
    p.validate(label.shape())?;
    if p.delta == 0 {
        return Ok(label.clone());
    }
    let band_lo = p.position - p.delta;
    let band_hi = p.position + 2 * p.delta;
    let map = |s: usize| {
        if s < band_lo {
            s
        } else if s < band_hi {
            band_lo + 2 * (s - band_lo) / 3
        } else {
            s - p.delta
        }
    };
    Ok(merge_slices(label, p.axis, map))
}

/// Raw: past `position` the image is translated by `delta` along the shift
/// axis (zero-filled off the edge). Label: each slice along the split axis
/// is read at shift `label_offset(x)`, which ramps from 0 to `delta` across
/// the band; where the offset changes between neighbouring slices the slice
/// takes the union over the intermediate shifts, which keeps every
/// 26-connected branch crossing the seam connected.
pub fn misalign_stitch(raw: &RawVolume, label: &LabelVolume, p: &StitchParams) -> Result<(RawVolume, LabelVolume)> {
    raw.same_shape(label)?;
    Ok((misalign_stitch_raw(raw, p)?, misalign_stitch_label(label, p)?))
}

pub fn misalign_stitch_raw(raw: &RawVolume, p: &StitchParams) -> Result<RawVolume> {
    p.validate(raw.shape())?;
    if p.delta == 0 {
        return Ok(raw.clone());
    }
    let (a, b) = (p.split_axis.index(), p.shift_axis.index());
    let nb = raw.shape().0[b];
    Ok(RawVolume::from_fn(raw.shape(), |q| {
        if q[a] <= p.position {
            return raw.get(q);
        }
        let mut s = q;
        s[b] += p.delta;
        if s[b] < nb {
            raw.get(s)
        } else {
            0.0
        }
    })
    .with_voxel_size(raw.voxel_size()))
}

pub fn misalign_stitch_label(label: &LabelVolume, p: &StitchParams) -> Result<LabelVolume> {
    p.validate(label.shape())?;
    if p.delta == 0 {
        return Ok(label.clone());
    }
    let (a, b) = (p.split_axis.index(), p.shift_axis.index());
    let s = label.shape();
    let offsets: Vec<(usize, usize)> = (0..s.0[a] as i64)
        .map(|x| {
            let here = p.label_offset(x);
            let lo = here.min(p.label_offset(x - 1));
            let hi = here.max(p.label_offset(x + 1));
            (lo, hi)
        })
        .collect();
    Ok(LabelVolume::from_fn(s, |q| {
        let (lo, hi) = offsets[q[a]];
        (lo..=hi).any(|o| {
            let mut src = q;
            src[b] += o;
            src[b] < s.0[b] && label.get(src)
        })
    })
    .with_voxel_size(label.voxel_size()))
}

fn convolve_axis(data: &[f64], shape: Shape, axis: usize, kernel: &[f64], radius: i64) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    let n = shape.0[axis] as i64;
    let stride = match axis {
        0 => 1,
        1 => shape.nx(),
        _ => shape.nx() * shape.ny(),
    };
    for (i, o) in out.iter_mut().enumerate() {
        let x = shape.coord(i)[axis] as i64;
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let src = x - (k as i64 - radius);
            if src >= 0 && src < n {
                let j = (i as i64 + (src - x) * stride as i64) as usize;
                acc += w * data[j];
            }
        }
        *o = acc;
    }
    out
}

/// Zero-padded convolution with the sum-normalized Gaussian kernel sampled
/// on integer offsets within 4 sigma (plus the mean offset) per axis, then
/// `+ lambda`.
pub fn scatter_light(raw: &RawVolume, p: &ScatterParams) -> Result<RawVolume> {
    p.validate()?;
    let shape = raw.shape();
    let r = p.support_radius();
    let src: Vec<f64> = raw.as_slice().iter().map(|&v| f64::from(v)).collect();
    let blurred = if p.is_diagonal() {
        let mut cur = src;
        for a in 0..3 {
            let sigma = p.covariance[a][a].sqrt();
            let mut k: Vec<f64> = (-r[a]..=r[a])
                .map(|d| (-0.5 * ((d as f64 - p.mean[a]) / sigma).powi(2)).exp())
                .collect();
            let total: f64 = k.iter().sum();
            k.iter_mut().for_each(|w| *w /= total);
            cur = convolve_axis(&cur, shape, a, &k, r[a]);
        }
        cur
    } else {
        let inv = invert3(&p.covariance);
        let mut kernel = Vec::new();
        for dz in -r[2]..=r[2] {
            for dy in -r[1]..=r[1] {
                for dx in -r[0]..=r[0] {
                    let d = [dx as f64 - p.mean[0], dy as f64 - p.mean[1], dz as f64 - p.mean[2]];
                    let q: f64 = (0..3).map(|i| (0..3).map(|j| d[i] * inv[i][j] * d[j]).sum::<f64>()).sum();
                    kernel.push(([dx, dy, dz], (-0.5 * q).exp()));
                }
            }
        }
        let total: f64 = kernel.iter().map(|(_, w)| w).sum();
        let mut out = vec![0.0; src.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let c = shape.coord(i).map(|v| v as i64);
            let mut acc = 0.0;
            for (d, w) in &kernel {
                let s = [c[0] - d[0], c[1] - d[1], c[2] - d[2]];
                if shape.contains_signed(s) {
                    acc += w / total * src[shape.index(s.map(|v| v as usize))];
                }
            }
            *o = acc;
        }
        out
    };
    let data = blurred.into_iter().map(|v| (v + p.lambda).max(0.0) as f32).collect();
    Ok(RawVolume::from_vec(shape, data)?.with_voxel_size(raw.voxel_size()))
}

impl Symmetry {
    /// Shape of a volume of `shape` after the symmetry.
    pub fn output_shape(&self, shape: Shape) -> Shape {
        match *self {
            Symmetry::Flip { .. } => shape,
            Symmetry::Rotate { axis, quarter_turns } => {
                let mut s = shape;
                if quarter_turns % 2 == 1 {
                    let (u, v) = plane(axis);
                    s.0.swap(u, v);
                }
                s
            }
        }
    }

    /// Whether the symmetry leaves `shape` unchanged.
    pub fn preserves_shape(&self, shape: Shape) -> bool {
        self.output_shape(shape) == shape
    }

    pub fn apply<T: Voxel>(&self, g: &Grid<T>) -> Grid<T> {
        match *self {
            Symmetry::Flip { axis } => {
                let a = axis.index();
                let n = g.shape().0[a];
                Grid::from_fn(g.shape(), |mut p| {
                    p[a] = n - 1 - p[a];
                    g.get(p)
                })
                .with_voxel_size(g.voxel_size())
            }
            Symmetry::Rotate { axis, quarter_turns } => {
                let mut cur = g.clone();
                for _ in 0..quarter_turns % 4 {
                    cur = quarter_turn(&cur, axis);
                }
                cur
            }
        }
    }
}

fn plane(axis: Axis) -> (usize, usize) {
    let a = axis.index();
    ((a + 1) % 3, (a + 2) % 3)
}

/// One counter-clockwise quarter turn in the `(u, v)` plane perpendicular to
/// `axis`: `(u, v) -> (n_v - 1 - v, u)`.
fn quarter_turn<T: Voxel>(g: &Grid<T>, axis: Axis) -> Grid<T> {
    let (u, v) = plane(axis);
    let s = g.shape();
    let mut out_shape = s;
    out_shape.0.swap(u, v);
    let mut vs = g.voxel_size().0;
    vs.swap(u, v);
    Grid::from_fn(out_shape, |q| {
        let mut p = q;
        p[u] = q[v];
        p[v] = s.0[v] - 1 - q[u];
        g.get(p)
    })
    .with_voxel_size(VoxelSize(vs))
}

/// Applies the same symmetry to both volumes.
pub fn rotate_flip(raw: &RawVolume, label: &LabelVolume, which: Symmetry) -> Result<(RawVolume, LabelVolume)> {
    raw.same_shape(label)?;
    Ok((which.apply(raw), which.apply(label)))
}
