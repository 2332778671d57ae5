//! Slow, obviously-correct reference computations.
//!
//! Nothing here shares code with the `neurotopo` crate: volumes are plain
//! `&[bool]` / `&[f64]` buffers in x-fastest order with explicit dims, and
//! every adjacency test is spelled out on coordinates.

use std::collections::VecDeque;

pub type Cube = [[[bool; 3]; 3]; 3];

fn l1(a: [i32; 3], b: [i32; 3]) -> i32 {
    (0..3).map(|i| (a[i] - b[i]).abs()).sum()
}

fn linf(a: [i32; 3], b: [i32; 3]) -> i32 {
    (0..3).map(|i| (a[i] - b[i]).abs()).max().unwrap()
}

fn cube_get(c: &Cube, p: [i32; 3]) -> bool {
    c[p[2] as usize][p[1] as usize][p[0] as usize]
}

fn cube_points() -> Vec<[i32; 3]> {
    let mut pts = Vec::new();
    for z in 0..3 {
        for y in 0..3 {
            for x in 0..3 {
                pts.push([x, y, z]);
            }
        }
    }
    pts
}

/// Components of `nodes` under `adjacent`, via explicit BFS.
fn bfs_components(nodes: &[[i32; 3]], adjacent: impl Fn([i32; 3], [i32; 3]) -> bool) -> Vec<Vec<[i32; 3]>> {
    let mut seen = vec![false; nodes.len()];
    let mut out = Vec::new();
    for s in 0..nodes.len() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![nodes[s]];
        let mut queue = VecDeque::from([s]);
        while let Some(i) = queue.pop_front() {
            for j in 0..nodes.len() {
                if !seen[j] && adjacent(nodes[i], nodes[j]) {
                    seen[j] = true;
                    comp.push(nodes[j]);
                    queue.push_back(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

const CENTER: [i32; 3] = [1, 1, 1];

/// Foreground topological number: 26-components of the foreground among the
/// 26 neighbours that are 26-adjacent to the centre.
pub fn topo_number_fg(c: &Cube) -> u32 {
    let nodes: Vec<_> = cube_points()
        .into_iter()
        .filter(|&p| p != CENTER && cube_get(c, p))
        .collect();
    bfs_components(&nodes, |a, b| linf(a, b) == 1)
        .iter()
        .filter(|comp| comp.iter().any(|&p| linf(p, CENTER) == 1))
        .count() as u32
}

/// Background topological number: 6-components of the background within the
/// 18-neighbourhood that are 6-adjacent to the centre.
pub fn topo_number_bg(c: &Cube) -> u32 {
    let nodes: Vec<_> = cube_points()
        .into_iter()
        .filter(|&p| p != CENTER && l1(p, CENTER) <= 2 && !cube_get(c, p))
        .collect();
    bfs_components(&nodes, |a, b| l1(a, b) == 1)
        .iter()
        .filter(|comp| comp.iter().any(|&p| l1(p, CENTER) == 1))
        .count() as u32
}

pub fn is_simple(c: &Cube) -> bool {
    topo_number_fg(c) == 1 && topo_number_bg(c) == 1
}

/// A dense boolean volume, x fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolVol {
    pub dims: [usize; 3],
    pub data: Vec<bool>,
}

impl BoolVol {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Self {
        assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    fn idx(&self, p: [usize; 3]) -> usize {
        p[0] + self.dims[0] * (p[1] + self.dims[1] * p[2])
    }

    pub fn get(&self, p: [i64; 3]) -> bool {
        if (0..3).any(|a| p[a] < 0 || p[a] >= self.dims[a] as i64) {
            return false;
        }
        self.data[self.idx([p[0] as usize, p[1] as usize, p[2] as usize])]
    }

    pub fn cube_at(&self, p: [usize; 3]) -> Cube {
        let mut c = [[[false; 3]; 3]; 3];
        for (z, plane) in c.iter_mut().enumerate() {
            for (y, row) in plane.iter_mut().enumerate() {
                for (x, v) in row.iter_mut().enumerate() {
                    *v = self.get([p[0] as i64 + x as i64 - 1, p[1] as i64 + y as i64 - 1, p[2] as i64 + z as i64 - 1]);
                }
            }
        }
        c
    }

    pub fn is_simple_at(&self, p: [usize; 3]) -> bool {
        is_simple(&self.cube_at(p))
    }

    fn coords(&self) -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }
}

/// Number of connected components of the voxels where `value` holds, using
/// adjacency 6, 18 or 26. With `pad`, the volume is surrounded by one layer
/// of voxels equal to `value` first.
pub fn component_count(vol: &BoolVol, value: bool, connectivity: u32, pad: bool) -> usize {
    let p = if pad { 1 } else { 0 };
    let dims = vol.dims.map(|d| d + 2 * p);
    let inside = |q: [i64; 3]| (0..3).all(|a| q[a] >= 0 && q[a] < dims[a] as i64);
    let at = |q: [i64; 3]| -> bool {
        let src = [q[0] - p as i64, q[1] - p as i64, q[2] - p as i64];
        let in_orig = (0..3).all(|a| src[a] >= 0 && src[a] < vol.dims[a] as i64);
        if in_orig {
            vol.get(src) == value
        } else {
            true
        }
    };
    let max_l1 = match connectivity {
        6 => 1,
        18 => 2,
        26 => 3,
        other => panic!("connectivity {other}"),
    };
    let n = dims.iter().product::<usize>();
    let idx = |q: [i64; 3]| q[0] as usize + dims[0] * (q[1] as usize + dims[1] * q[2] as usize);
    let mut seen = vec![false; n];
    let mut count = 0;
    for z in 0..dims[2] as i64 {
        for y in 0..dims[1] as i64 {
            for x in 0..dims[0] as i64 {
                let s = [x, y, z];
                if !at(s) || seen[idx(s)] {
                    continue;
                }
                count += 1;
                seen[idx(s)] = true;
                let mut queue = VecDeque::from([s]);
                while let Some(c) = queue.pop_front() {
                    for dz in -1..=1i64 {
                        for dy in -1..=1i64 {
                            for dx in -1..=1i64 {
                                let d = dx.abs() + dy.abs() + dz.abs();
                                if d == 0 || d > max_l1 {
                                    continue;
                                }
                                let q = [c[0] + dx, c[1] + dy, c[2] + dz];
                                if inside(q) && at(q) && !seen[idx(q)] {
                                    seen[idx(q)] = true;
                                    queue.push_back(q);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    count
}

/// (26-foreground components, 6-background components with a background
/// border) of `vol`.
pub fn topology_counts(vol: &BoolVol) -> (usize, usize) {
    (component_count(vol, true, 26, false), component_count(vol, false, 6, true))
}

/// Greedy warping by whole-volume raster scans: flip every disagreeing voxel
/// that is currently simple, in scan order, until a full scan flips nothing.
/// Returns the warped volume and the number of flips.
pub fn greedy_warp(pred: &BoolVol, label: &BoolVol) -> (BoolVol, usize) {
    assert_eq!(pred.dims, label.dims);
    let mut cur = pred.clone();
    let mut flips = 0;
    loop {
        let mut changed = false;
        for p in cur.coords() {
            let i = cur.idx(p);
            if cur.data[i] != label.data[i] && cur.is_simple_at(p) {
                cur.data[i] = !cur.data[i];
                flips += 1;
                changed = true;
            }
        }
        if !changed {
            return (cur, flips);
        }
    }
}

/// Zero-padded convolution of `data` with the sum-normalized Gaussian of
/// per-axis `sigma` and offset `mu`, sampled on integer offsets within
/// `radius` of the origin, by direct 3D summation.
pub fn gaussian_blur_direct(dims: [usize; 3], data: &[f64], sigma: [f64; 3], mu: [f64; 3], radius: [i64; 3]) -> Vec<f64> {
    let mut kernel = Vec::new();
    let mut total = 0.0;
    for dz in -radius[2]..=radius[2] {
        for dy in -radius[1]..=radius[1] {
            for dx in -radius[0]..=radius[0] {
                let d = [dx as f64, dy as f64, dz as f64];
                let q: f64 = (0..3).map(|a| ((d[a] - mu[a]) / sigma[a]).powi(2)).sum();
                let w = (-0.5 * q).exp();
                total += w;
                kernel.push(([dx, dy, dz], w));
            }
        }
    }
    let n = dims.iter().product::<usize>();
    let mut out = vec![0.0; n];
    for z in 0..dims[2] as i64 {
        for y in 0..dims[1] as i64 {
            for x in 0..dims[0] as i64 {
                let mut acc = 0.0;
                for (d, w) in &kernel {
                    let s = [x - d[0], y - d[1], z - d[2]];
                    if (0..3).all(|a| s[a] >= 0 && s[a] < dims[a] as i64) {
                        acc += w / total * data[s[0] as usize + dims[0] * (s[1] as usize + dims[1] * s[2] as usize)];
                    }
                }
                out[x as usize + dims[0] * (y as usize + dims[1] * z as usize)] = acc;
            }
        }
    }
    out
}
