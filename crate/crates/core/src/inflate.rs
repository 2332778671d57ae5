//! Topology-preserving inflation of traced centerlines into volumetric labels.
//!
//! Traces are first rasterized into face-connected voxel chains, then grown
//! outwards in order of increasing physical distance. A voxel is only added
//! while it is simple, so the grown label has exactly the components, cavities
//! and tunnels of the centerline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::swc::Skeleton;
use crate::topology::{is_simple, topology_counts, TopologyCounts, OFFSETS};
use crate::volume::{Grid, LabelVolume, Shape, VoxelSize};

/// How far labels grow from the centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Radius {
    /// The same radius in micrometres everywhere.
    Uniform { microns: f64 },
    /// Each centerline voxel grows to `scale` times its traced radius.
    PerNode { scale: f64 },
}

impl Radius {
    fn validate(self) -> Result<()> {
        let v = match self {
            Radius::Uniform { microns } => microns,
            Radius::PerNode { scale } => scale,
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("inflation radius {v} must be finite and >= 0")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationSpec {
    pub radius: Radius,
    pub shape: Shape,
    pub voxel_size: VoxelSize,
}

impl InflationSpec {
    pub fn uniform(microns: f64, shape: Shape, voxel_size: VoxelSize) -> Self {
        Self {
            radius: Radius::Uniform { microns },
            shape,
            voxel_size,
        }
    }
}

/// An inflated label with the record needed to audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct Inflation {
    pub label: LabelVolume,
    /// Added voxels in the order they were added.
    pub additions: Vec<[usize; 3]>,
    pub before: TopologyCounts,
    pub after: TopologyCounts,
}

impl Inflation {
    pub fn preserves_topology(&self) -> bool {
        self.before == self.after
    }
}

/// Visits the voxels of the segment `a -> b`, stepping one axis at a time,
/// with the fraction of the way travelled. Ties between axes go to the lower
/// axis, so the chain is the same whichever end it is traced from up to ties.
fn trace_segment(a: [i64; 3], b: [i64; 3], mut visit: impl FnMut([i64; 3], f64)) {
    let n: [i64; 3] = std::array::from_fn(|i| (b[i] - a[i]).abs());
    let step: [i64; 3] = std::array::from_fn(|i| (b[i] - a[i]).signum());
    let total = n.iter().sum::<i64>();
    let mut p = a;
    let mut k = [0i64; 3];
    visit(p, 0.0);
    for i in 1..=total {
        // Next boundary crossing along axis j is at t = (2k_j + 1) / (2n_j).
        let mut best: Option<usize> = None;
        for j in 0..3 {
            if k[j] == n[j] {
                continue;
            }
            best = match best {
                Some(c) if (2 * k[c] + 1) * n[j] <= (2 * k[j] + 1) * n[c] => Some(c),
                _ => Some(j),
            };
        }
        let j = best.expect("steps remain");
        k[j] += 1;
        p[j] += step[j];
        visit(p, i as f64 / total as f64);
    }
}

fn node_voxel(s: &Skeleton, i: usize, shape: Shape, voxel_size: VoxelSize) -> Result<[i64; 3]> {
    let node = &s.nodes()[i];
    let v = node.voxel_position(voxel_size).map(f64::round);
    if (0..3).all(|a| v[a] >= 0.0 && v[a] < shape.0[a] as f64) {
        Ok(v.map(|c| c as i64))
    } else {
        Err(Error::NodeOutOfGrid {
            id: node.id,
            position: node.position,
        })
    }
}

/// Centerline voxels and the traced radius (micrometres, linearly
/// interpolated along edges, maximum where segments overlap).
pub fn rasterize_radii(s: &Skeleton, shape: Shape, voxel_size: VoxelSize) -> Result<(LabelVolume, Grid<f32>)> {
    let mut label = LabelVolume::new(shape).with_voxel_size(voxel_size);
    let mut radii = Grid::<f32>::new(shape).with_voxel_size(voxel_size);
    let voxels = (0..s.len())
        .map(|i| node_voxel(s, i, shape, voxel_size))
        .collect::<Result<Vec<_>>>()?;
    let mut mark = |p: [i64; 3], r: f64| {
        let q = p.map(|c| c as usize);
        label.set(q, true);
        radii.set(q, radii.get(q).max(r as f32));
    };
    for (i, node) in s.nodes().iter().enumerate() {
        mark(voxels[i], node.radius);
    }
    for (parent, child) in s.edges() {
        let (rp, rc) = (s.nodes()[parent].radius, s.nodes()[child].radius);
        trace_segment(voxels[parent], voxels[child], |p, t| mark(p, rp + (rc - rp) * t));
    }
    Ok((label, radii))
}

/// Renders every parent-child edge as a face-connected voxel chain.
pub fn rasterize_skeleton(s: &Skeleton, shape: Shape, voxel_size: VoxelSize) -> Result<LabelVolume> {
    rasterize_radii(s, shape, voxel_size).map(|(label, _)| label)
}

/// One line of the separable squared distance transform, with sample
/// spacing `h`. Infinite inputs mark points with no source.
fn distance_line(f: &[f64], h: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    let pos = |q: usize| q as f64 * h;
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_infinite() {
            continue;
        }
        while let Some(&p) = v.last() {
            let s = ((fq + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in squared micrometres) from every voxel
/// to the nearest foreground voxel; infinite when there is no foreground.
pub fn squared_distance(label: &LabelVolume) -> Grid<f64> {
    let s = label.shape();
    let h = label.voxel_size().0;
    let mut d: Vec<f64> = label.as_slice().iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let strides = [1, s.nx(), s.nx() * s.ny()];
    let (mut v, mut z) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let n = s.0[axis];
        let (mut line, mut out) = (vec![0.0; n], vec![0.0; n]);
        for start in 0..s.len() {
            if (start / strides[axis]) % n != 0 {
                continue;
            }
            for (q, l) in line.iter_mut().enumerate() {
                *l = d[start + q * strides[axis]];
            }
            distance_line(&line, h[axis], &mut out, &mut v, &mut z);
            for (q, &o) in out.iter().enumerate() {
                d[start + q * strides[axis]] = o;
            }
        }
    }
    Grid::from_vec(s, d).expect("shape preserved").with_voxel_size(label.voxel_size())
}

/// Grows `label` through `candidates`, which must be sorted by `(key, index)`.
/// Candidates sharing a key form one wave; each wave runs to a fixpoint, and a
/// blocked voxel is retried whenever one of its neighbours is added.
fn grow(label: &LabelVolume, candidates: &[(f64, usize)]) -> Inflation {
    const PENDING: u8 = 1;
    let shape = label.shape();
    let before = topology_counts(label);
    let mut cur = label.clone();
    let mut state = vec![0u8; shape.len()];
    let mut rank = vec![u32::MAX; shape.len()];
    for (r, &(_, i)) in candidates.iter().enumerate() {
        rank[i] = r as u32;
    }
    let mut additions = Vec::new();
    let mut start = 0;
    while start < candidates.len() {
        let key = candidates[start].0;
        let end = start + candidates[start..].iter().take_while(|c| c.0 == key).count();
        let mut work: Vec<u32> = (start as u32..end as u32).collect();
        while !work.is_empty() {
            let mut next = Vec::new();
            for &r in &work {
                let i = candidates[r as usize].1;
                if cur.as_slice()[i] {
                    continue;
                }
                let p = shape.coord(i);
                if !is_simple(&cur, p) {
                    state[i] = PENDING;
                    continue;
                }
                cur.as_mut_slice()[i] = true;
                additions.push(p);
                let q = p.map(|c| c as i64);
                for d in OFFSETS {
                    let n = [q[0] + d[0], q[1] + d[1], q[2] + d[2]];
                    if shape.contains_signed(n) {
                        let j = shape.index(n.map(|c| c as usize));
                        if state[j] == PENDING && !cur.as_slice()[j] {
                            next.push(rank[j]);
                        }
                    }
                }
            }
            next.sort_unstable();
            next.dedup();
            work = next;
        }
        start = end;
    }
    let after = topology_counts(&cur);
    Inflation {
        label: cur,
        additions,
        before,
        after,
    }
}

fn within(d2: f64, r2: f64) -> bool {
    // Admit voxels exactly on the sphere despite rounding in the transform.
    d2 <= r2 * (1.0 + 1e-12) + 1e-12
}

/// Grows `label` by up to `microns` (physical distance, using the label's
/// voxel size), adding only simple voxels.
pub fn inflate(label: &LabelVolume, microns: f64) -> Result<Inflation> {
    Radius::Uniform { microns }.validate()?;
    let r2 = microns * microns;
    let mut candidates: Vec<(f64, usize)> = if microns == 0.0 || label.count() == 0 {
        Vec::new()
    } else {
        let d2 = squared_distance(label);
        d2.as_slice()
            .iter()
            .enumerate()
            .filter(|&(i, &d)| !label.as_slice()[i] && within(d, r2))
            .map(|(i, &d)| (d, i))
            .collect()
    };
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(grow(label, &candidates))
}

/// Grows each foreground voxel of `label` to `scale` times its radius in
/// `radii` (micrometres). Voxels are reached in order of their smallest
/// radius-normalized distance to a source.
pub fn inflate_per_node(label: &LabelVolume, radii: &Grid<f32>, scale: f64) -> Result<Inflation> {
    Radius::PerNode { scale }.validate()?;
    label.same_shape(radii)?;
    let shape = label.shape();
    let h = label.voxel_size().0;
    let mut key = vec![f64::INFINITY; shape.len()];
    for p in label.foreground() {
        let r = f64::from(radii.get(p)) * scale;
        if r <= 0.0 {
            continue;
        }
        let ext: [i64; 3] = std::array::from_fn(|a| (r / h[a]).floor() as i64);
        let c = p.map(|v| v as i64);
        for dz in -ext[2]..=ext[2] {
            for dy in -ext[1]..=ext[1] {
                for dx in -ext[0]..=ext[0] {
                    let q = [c[0] + dx, c[1] + dy, c[2] + dz];
                    if !shape.contains_signed(q) {
                        continue;
                    }
                    let d2 = (dx as f64 * h[0]).powi(2) + (dy as f64 * h[1]).powi(2) + (dz as f64 * h[2]).powi(2);
                    if !within(d2, r * r) {
                        continue;
                    }
                    let i = shape.index(q.map(|v| v as usize));
                    let k = d2.sqrt() / (r / scale);
                    if k < key[i] {
                        key[i] = k;
                    }
                }
            }
        }
    }
    let mut candidates: Vec<(f64, usize)> = key
        .iter()
        .enumerate()
        .filter(|&(i, k)| k.is_finite() && !label.as_slice()[i])
        .map(|(i, &k)| (k, i))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(grow(label, &candidates))
}

/// Rasterizes and inflates a skeleton according to `spec`.
pub fn inflate_skeleton(s: &Skeleton, spec: &InflationSpec) -> Result<Inflation> {
    spec.radius.validate()?;
    let (label, radii) = rasterize_radii(s, spec.shape, spec.voxel_size)?;
    match spec.radius {
        Radius::Uniform { microns } => inflate(&label, microns),
        Radius::PerNode { scale } => inflate_per_node(&label, &radii, scale),
    }
}

/// Outcome of replaying an inflation against its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub additions: usize,
    /// Every addition was simple when it was made.
    pub all_simple: bool,
    /// The output is the input plus exactly the recorded additions.
    pub consistent: bool,
    pub counts_preserved: bool,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.all_simple && self.consistent && self.counts_preserved
    }
}

/// Independently replays `inf.additions` on `input` and checks each step.
pub fn certify(input: &LabelVolume, inf: &Inflation) -> Certificate {
    let mut cur = input.clone();
    let mut all_simple = input.same_shape(&inf.label).is_ok();
    if all_simple {
        for &p in &inf.additions {
            if cur.get(p) || !is_simple(&cur, p) {
                all_simple = false;
                break;
            }
            cur.set(p, true);
        }
    }
    Certificate {
        additions: inf.additions.len(),
        all_simple,
        consistent: all_simple && cur == inf.label,
        counts_preserved: topology_counts(input) == topology_counts(&inf.label),
    }
}
