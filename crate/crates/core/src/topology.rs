//! Digital topology on the (26, 6) adjacency pair.
//!
//! Foreground is 26-connected, background 6-connected. A voxel is *simple*
//! when flipping it changes neither the foreground nor the background
//! topology; locally this holds iff both topological numbers of its 3x3x3
//! neighbourhood equal 1. Both numbers are computed here by bitmask flood
//! fill over the 26 neighbour slots, which is O(1) per voxel.

use std::collections::VecDeque;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::volume::{Grid, LabelVolume, Shape};

/// Neighbour slot `k` holds offset `OFFSETS[k]`; slots enumerate
/// `dz, dy, dx in -1..=1` with `dx` fastest, skipping the centre.
pub const OFFSETS: [[i64; 3]; 26] = {
    let mut out = [[0i64; 3]; 26];
    let mut k = 0;
    let mut i = 0;
    while i < 27 {
        let d = [(i % 3) as i64 - 1, ((i / 3) % 3) as i64 - 1, (i / 9) as i64 - 1];
        if !(d[0] == 0 && d[1] == 0 && d[2] == 0) {
            out[k] = d;
            k += 1;
        }
        i += 1;
    }
    out
};

struct Tables {
    adj26: [u32; 26],
    adj6: [u32; 26],
    n6: u32,
    n18: u32,
}

static TABLES: LazyLock<Tables> = LazyLock::new(|| {
    let l1 = |d: [i64; 3]| d.iter().map(|v| v.abs()).sum::<i64>();
    let mut t = Tables {
        adj26: [0; 26],
        adj6: [0; 26],
        n6: 0,
        n18: 0,
    };
    for (k, a) in OFFSETS.iter().enumerate() {
        match l1(*a) {
            1 => {
                t.n6 |= 1 << k;
                t.n18 |= 1 << k;
            }
            2 => t.n18 |= 1 << k,
            _ => {}
        }
        for (j, b) in OFFSETS.iter().enumerate() {
            if j == k {
                continue;
            }
            let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
            if d.iter().all(|v| v.abs() <= 1) {
                t.adj26[k] |= 1 << j;
            }
            if l1(d) == 1 {
                t.adj6[k] |= 1 << j;
            }
        }
    }
    t
});

/// Occupancy of a voxel's 26 neighbours (bit `k` = slot `k` of [`OFFSETS`])
/// plus the centre itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Neighborhood26 {
    pub neighbors: u32,
    pub center: bool,
}

impl Neighborhood26 {
    pub const FULL: u32 = (1 << 26) - 1;

    pub fn new(neighbors: u32, center: bool) -> Self {
        debug_assert!(neighbors <= Self::FULL);
        Self { neighbors, center }
    }

    pub fn from_fn(center: bool, mut occupied: impl FnMut([i64; 3]) -> bool) -> Self {
        let mut neighbors = 0;
        for (k, d) in OFFSETS.iter().enumerate() {
            if occupied(*d) {
                neighbors |= 1 << k;
            }
        }
        Self { neighbors, center }
    }

    /// Slot index of offset `d`, if `d` is a neighbour offset.
    pub fn slot(d: [i64; 3]) -> Option<usize> {
        OFFSETS.iter().position(|o| *o == d)
    }

    pub fn get(&self, d: [i64; 3]) -> bool {
        Self::slot(d).is_some_and(|k| self.neighbors >> k & 1 == 1)
    }

    pub fn foreground_count(&self) -> u32 {
        self.neighbors.count_ones()
    }
}

fn count_components(mut set: u32, adjacency: &[u32; 26], touching: u32) -> u32 {
    let mut count = 0;
    while set != 0 {
        let seed = set & set.wrapping_neg();
        let mut component = seed;
        let mut frontier = seed;
        while frontier != 0 {
            let mut grow = 0;
            let mut f = frontier;
            while f != 0 {
                let b = f.trailing_zeros() as usize;
                grow |= adjacency[b];
                f &= f - 1;
            }
            frontier = grow & set & !component;
            component |= frontier;
        }
        set &= !component;
        if component & touching != 0 {
            count += 1;
        }
    }
    count
}

/// Number of 26-connected foreground components in the neighbourhood (all of
/// them are 26-adjacent to the centre).
pub fn topo_number_fg(n: Neighborhood26) -> u32 {
    count_components(n.neighbors & Neighborhood26::FULL, &TABLES.adj26, Neighborhood26::FULL)
}

/// Number of 6-connected background components within the 18-neighbourhood
/// that are 6-adjacent to the centre.
pub fn topo_number_bg(n: Neighborhood26) -> u32 {
    let t = &*TABLES;
    let bg = !n.neighbors & t.n18;
    if bg & t.n6 == 0 {
        return 0;
    }
    count_components(bg, &t.adj6, t.n6)
}

/// Simplicity of the centre of `n`, regardless of its own occupancy.
pub fn is_simple_neighborhood(n: Neighborhood26) -> bool {
    n.neighbors != 0 && topo_number_fg(n) == 1 && topo_number_bg(n) == 1
}

/// Neighbourhood of `p`; voxels outside the volume are background.
pub fn neighborhood(vol: &LabelVolume, p: [usize; 3]) -> Neighborhood26 {
    let s = vol.shape();
    let data = vol.as_slice();
    let interior = (0..3).all(|a| p[a] >= 1 && p[a] + 1 < s.0[a]);
    let center = data[s.index(p)];
    if interior {
        let base = s.index(p) as i64;
        let (sx, sy) = (1i64, s.nx() as i64);
        let sz = sy * s.ny() as i64;
        let mut neighbors = 0u32;
        for (k, d) in OFFSETS.iter().enumerate() {
            let i = base + d[0] * sx + d[1] * sy + d[2] * sz;
            neighbors |= (data[i as usize] as u32) << k;
        }
        Neighborhood26 { neighbors, center }
    } else {
        let q = p.map(|v| v as i64);
        Neighborhood26::from_fn(center, |d| vol.get_or_default([q[0] + d[0], q[1] + d[1], q[2] + d[2]]))
    }
}

/// Whether flipping `p` preserves topology. Neighbours outside the volume
/// read as background.
pub fn is_simple(vol: &LabelVolume, p: [usize; 3]) -> bool {
    is_simple_neighborhood(neighborhood(vol, p))
}

/// Marks every non-simple foreground voxel and every non-simple background
/// voxel that touches the foreground. Background with no foreground
/// neighbour is never marked.
pub fn nonsimple_mask(vol: &LabelVolume) -> LabelVolume {
    let shape = vol.shape();
    let mut mask = LabelVolume::new(shape).with_voxel_size(vol.voxel_size());
    let out = mask.as_mut_slice();
    for (i, slot) in out.iter_mut().enumerate() {
        let p = shape.coord(i);
        let n = neighborhood(vol, p);
        if !n.center && n.neighbors == 0 {
            continue;
        }
        *slot = !is_simple_neighborhood(n);
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Connectivity {
    Six,
    Eighteen,
    TwentySix,
}

impl Connectivity {
    fn admits(self, d: [i64; 3]) -> bool {
        let l1: i64 = d.iter().map(|v| v.abs()).sum();
        match self {
            Connectivity::Six => l1 == 1,
            Connectivity::Eighteen => l1 <= 2,
            Connectivity::TwentySix => true,
        }
    }

    pub fn offsets(self) -> Vec<[i64; 3]> {
        OFFSETS.iter().copied().filter(|d| self.admits(*d)).collect()
    }
}

impl TryFrom<u32> for Connectivity {
    type Error = crate::Error;

    fn try_from(n: u32) -> crate::Result<Self> {
        match n {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            _ => Err(crate::Error::InvalidParameter(format!("connectivity must be 6, 18 or 26, got {n}"))),
        }
    }
}

/// Labels foreground components under `c`. Ids are dense from 1 in scan
/// order of each component's first voxel; background is 0.
pub fn connected_components(vol: &LabelVolume, c: Connectivity) -> (Grid<u32>, usize) {
    let shape = vol.shape();
    let offsets = c.offsets();
    let mut labels = Grid::<u32>::new(shape).with_voxel_size(vol.voxel_size());
    let data = vol.as_slice();
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..shape.len() {
        if !data[start] || labels.as_slice()[start] != 0 {
            continue;
        }
        next += 1;
        labels.as_mut_slice()[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let p = shape.coord(i).map(|v| v as i64);
            for d in &offsets {
                let q = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
                if !shape.contains_signed(q) {
                    continue;
                }
                let j = shape.index(q.map(|v| v as usize));
                if data[j] && labels.as_slice()[j] == 0 {
                    labels.as_mut_slice()[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, next as usize)
}

pub fn component_count(vol: &LabelVolume, c: Connectivity) -> usize {
    connected_components(vol, c).1
}

/// Component counts of a binary volume under the (26, 6) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyCounts {
    /// 26-connected foreground components.
    pub foreground: usize,
    /// 6-connected background components, with the space around the volume
    /// counted as background.
    pub background: usize,
}

pub fn topology_counts(vol: &LabelVolume) -> TopologyCounts {
    let s = vol.shape();
    let padded_shape = Shape(s.0.map(|n| n + 2));
    let padded = LabelVolume::from_fn(padded_shape, |p| {
        let inside = (0..3).all(|a| p[a] >= 1 && p[a] <= s.0[a]);
        !(inside && vol.get([p[0] - 1, p[1] - 1, p[2] - 1]))
    });
    TopologyCounts {
        foreground: component_count(vol, Connectivity::TwentySix),
        background: component_count(&padded, Connectivity::Six),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots(ds: &[[i64; 3]]) -> u32 {
        ds.iter().map(|d| 1u32 << Neighborhood26::slot(*d).unwrap()).sum()
    }

    #[test]
    fn tables_have_expected_sizes() {
        assert_eq!(TABLES.n6.count_ones(), 6);
        assert_eq!(TABLES.n18.count_ones(), 18);
        assert_eq!(OFFSETS[0], [-1, -1, -1]);
        assert_eq!(OFFSETS[13], [1, 0, 0]);
        assert_eq!(OFFSETS[25], [1, 1, 1]);
    }

    #[test]
    fn fg_numbers() {
        assert_eq!(topo_number_fg(Neighborhood26::new(0, true)), 0);
        let xfaces = slots(&[[-1, 0, 0], [1, 0, 0]]);
        assert_eq!(topo_number_fg(Neighborhood26::new(xfaces, true)), 2);
        assert_eq!(topo_number_fg(Neighborhood26::new(Neighborhood26::FULL, true)), 1);
    }

    #[test]
    fn bg_numbers() {
        assert_eq!(topo_number_bg(Neighborhood26::new(0, false)), 1);
        assert_eq!(topo_number_bg(Neighborhood26::new(Neighborhood26::FULL, false)), 0);
        let xfaces = slots(&[[-1, 0, 0], [1, 0, 0]]);
        assert_eq!(topo_number_bg(Neighborhood26::new(Neighborhood26::FULL & !xfaces, false)), 2);
    }

    #[test]
    fn line_endpoints_and_middles() {
        let mut v = LabelVolume::new(Shape::cube(5));
        for x in 1..4 {
            v.set([x, 2, 2], true);
        }
        assert!(!is_simple(&v, [2, 2, 2]));
        assert!(is_simple(&v, [1, 2, 2]));
        assert!(is_simple(&v, [3, 2, 2]));
        let mut lone = LabelVolume::new(Shape::cube(3));
        lone.set([1, 1, 1], true);
        assert!(!is_simple(&lone, [1, 1, 1]));
    }

    #[test]
    fn simplicity_ignores_centre() {
        let mut v = LabelVolume::new(Shape::cube(5));
        for x in 0..5 {
            v.set([x, 2, 2], true);
        }
        let p = [2, 3, 2];
        let before = is_simple(&v, p);
        v.set(p, true);
        assert_eq!(is_simple(&v, p), before);
    }

    #[test]
    fn nonsimple_mask_examples() {
        assert_eq!(nonsimple_mask(&LabelVolume::new(Shape::cube(4))).count(), 0);

        let mut broken = LabelVolume::new(Shape::new(7, 3, 3));
        for x in [1, 2, 4, 5] {
            broken.set([x, 1, 1], true);
        }
        let m = nonsimple_mask(&broken);
        assert!(m.get([3, 1, 1]));
        assert!(!m.get([2, 1, 1]) && !m.get([4, 1, 1]));

        let cube = LabelVolume::from_fn(Shape::cube(7), |p| p.iter().all(|&c| (1..=5).contains(&c)));
        let m = nonsimple_mask(&cube);
        for p in cube.shape().coords() {
            let interior = p.iter().all(|&c| (2..=4).contains(&c));
            if cube.get(p) {
                assert_eq!(m.get(p), interior, "at {p:?}");
            }
        }
    }

    #[test]
    fn components_by_connectivity() {
        let mut v = LabelVolume::new(Shape::cube(3));
        v.set([0, 0, 0], true);
        v.set([1, 1, 1], true);
        assert_eq!(component_count(&v, Connectivity::TwentySix), 1);
        assert_eq!(component_count(&v, Connectivity::Six), 2);
        assert_eq!(component_count(&v, Connectivity::Eighteen), 2);

        let mut line = LabelVolume::new(Shape::new(3, 1, 1));
        line.set([0, 0, 0], true);
        line.set([2, 0, 0], true);
        let (labels, n) = connected_components(&line, Connectivity::TwentySix);
        assert_eq!(n, 2);
        assert_eq!(labels.as_slice(), &[1, 0, 2]);
    }

    #[test]
    fn counts_see_cavities() {
        let shell = LabelVolume::from_fn(Shape::cube(3), |p| p != [1, 1, 1]);
        assert_eq!(
            topology_counts(&shell),
            TopologyCounts {
                foreground: 1,
                background: 2
            }
        );
        let empty = LabelVolume::new(Shape::cube(2));
        assert_eq!(topology_counts(&empty).background, 1);
    }
}
