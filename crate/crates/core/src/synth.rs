//! Seeded synthetic neuron images.
//!
//! Trees grow as chains of straight segments with bounded turning, keeping a
//! minimum distance to everything already placed. The label is the
//! topology-preserving inflation of the traced centerline and the raw image is
//! the label seen through a Gaussian PSF, on a background, with non-negative
//! Gaussian noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::{patch_rng, scatter_light, ScatterParams};
use crate::chunk::chunk_write;
use crate::error::{Error, Result};
use crate::inflate::{inflate_per_node, rasterize_radii};
use crate::pool::WorkerPool;
use crate::swc::{Skeleton, SkeletonNode};
use crate::topology::topology_counts;
use crate::volume::{LabelVolume, RawVolume, Shape, VoxelSize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub shape: Shape,
    pub voxel_size: VoxelSize,
    pub trees: usize,
    /// Branches grown per tree, inclusive range.
    pub branches: [usize; 2],
    /// Straight segments per branch, inclusive range.
    pub segments: [usize; 2],
    /// Segment length in voxels.
    pub segment_length: [f64; 2],
    /// Tube radius in voxels along x.
    pub tube_radius: [f64; 2],
    /// Largest direction change between consecutive segments, in degrees.
    pub max_turn_degrees: f64,
    /// Minimum centerline distance in voxels between unrelated parts.
    pub min_separation: f64,
    pub psf_sigma: [f64; 3],
    pub signal: f64,
    pub background: f64,
    /// Standard deviation of the noise before truncation at zero.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            shape: Shape::new(64, 64, 32),
            voxel_size: VoxelSize::ISOTROPIC,
            trees: 1,
            branches: [3, 6],
            segments: [2, 5],
            segment_length: [4.0, 8.0],
            tube_radius: [1.0, 2.0],
            max_turn_degrees: 35.0,
            min_separation: 7.0,
            psf_sigma: [1.0, 1.0, 1.0],
            signal: 1.0,
            background: 0.1,
            noise: 0.05,
        }
    }
}

fn ordered(name: &str, r: [f64; 2], min: f64) -> Result<()> {
    if r[0] <= r[1] && r[0] >= min && r[1].is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} range {r:?} must be ordered, finite and >= {min}")))
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shape.0.iter().any(|&n| n < 3) {
            return Err(Error::InvalidShape(self.shape));
        }
        if self.trees == 0 {
            return Err(Error::InvalidParameter("tree count must be at least 1".into()));
        }
        if self.branches[0] > self.branches[1] || self.segments[0] > self.segments[1] || self.segments[0] == 0 {
            return Err(Error::InvalidParameter("branch and segment ranges must be ordered and non-empty".into()));
        }
        ordered("segment_length", self.segment_length, 1.0)?;
        ordered("tube_radius", self.tube_radius, 0.0)?;
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let ok = finite_nonneg(self.max_turn_degrees)
            && finite_nonneg(self.min_separation)
            && self.psf_sigma.iter().all(|&s| finite_nonneg(s))
            && finite_nonneg(self.signal)
            && finite_nonneg(self.background)
            && finite_nonneg(self.noise);
        if !ok {
            return Err(Error::InvalidParameter("synthesis parameters must be finite and >= 0".into()));
        }
        if self.voxel_size.0.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("voxel size must be positive".into()));
        }
        Ok(())
    }
}

type V3 = [f64; 3];

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: V3, s: f64) -> V3 {
    a.map(|v| v * s)
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dist2(a: V3, b: V3) -> f64 {
    let d = add(a, scale(b, -1.0));
    dot(d, d)
}

fn unit(a: V3) -> Option<V3> {
    let n = dot(a, a).sqrt();
    (n > 1e-9).then(|| scale(a, 1.0 / n))
}

fn random_unit(rng: &mut ChaCha8Rng) -> V3 {
    loop {
        let v: V3 = std::array::from_fn(|_| StandardNormal.sample(rng));
        if let Some(u) = unit(v) {
            return u;
        }
    }
}

/// `dir` turned by a uniformly random angle up to `max_turn` radians.
fn turn(rng: &mut ChaCha8Rng, dir: V3, max_turn: f64) -> V3 {
    loop {
        let u = random_unit(rng);
        let Some(perp) = unit(add(u, scale(dir, -dot(u, dir)))) else {
            continue;
        };
        let theta = max_turn * rng.random::<f64>();
        return unit(add(scale(dir, theta.cos()), scale(perp, theta.sin()))).unwrap_or(dir);
    }
}

struct Grower<'a> {
    spec: &'a SynthSpec,
    /// Points sampled along every accepted segment.
    occupied: Vec<V3>,
    nodes: Vec<(V3, f64, Option<usize>)>,
    /// Unit directions of the segments meeting at each node.
    incident: Vec<Vec<V3>>,
}

const SAMPLE_STEP: f64 = 0.5;

impl Grower<'_> {
    fn margin(&self) -> f64 {
        self.spec.tube_radius[1] + 1.0
    }

    fn in_bounds(&self, p: V3) -> bool {
        let m = self.margin();
        (0..3).all(|a| {
            let hi = self.spec.shape.0[a] as f64 - 1.0;
            // Thin axes cannot keep the full margin.
            let m = m.min(hi / 2.0 - 0.5).max(0.0);
            p[a] >= m && p[a] <= hi - m
        })
    }

    fn samples(a: V3, b: V3) -> Vec<V3> {
        let n = (dist2(a, b).sqrt() / SAMPLE_STEP).ceil().max(1.0) as usize;
        (0..=n).map(|i| add(a, scale(add(b, scale(a, -1.0)), i as f64 / n as f64))).collect()
    }

    /// Whether segment `a -> b` keeps clear of everything placed, ignoring
    /// what lies near its attachment point `a`.
    fn clear(&self, a: V3, b: V3) -> bool {
        let sep2 = self.spec.min_separation.powi(2);
        let pts = Self::samples(a, b);
        self.occupied
            .iter()
            .filter(|&&o| dist2(o, a) >= sep2)
            .all(|&o| pts.iter().all(|&p| dist2(p, o) >= sep2))
    }

    fn place_root(&mut self, rng: &mut ChaCha8Rng, radius: f64) -> bool {
        let sep2 = self.spec.min_separation.powi(2);
        for _ in 0..64 {
            let p: V3 = std::array::from_fn(|a| rng.random::<f64>() * (self.spec.shape.0[a] as f64 - 1.0));
            if self.in_bounds(p) && self.occupied.iter().all(|&o| dist2(o, p) >= sep2) {
                self.nodes.push((p, radius, None));
                self.incident.push(Vec::new());
                self.occupied.push(p);
                return true;
            }
        }
        false
    }

    fn grow_branch(&mut self, rng: &mut ChaCha8Rng, tree_nodes: &[usize], radius: f64) -> Vec<usize> {
        let spec = self.spec;
        let max_turn = spec.max_turn_degrees.to_radians();
        let mut cur = tree_nodes[rng.random_range(0..tree_nodes.len())];
        let segments = rng.random_range(spec.segments[0]..=spec.segments[1]);
        let mut dir: Option<V3> = None;
        let mut added = Vec::new();
        for _ in 0..segments {
            let mut placed = false;
            for _ in 0..12 {
                let d = match dir {
                    Some(d) => turn(rng, d, max_turn),
                    None => random_unit(rng),
                };
                // Junction angles of at least 60 degrees keep siblings from
                // closing a loop.
                if dir.is_none() && self.incident[cur].iter().any(|&e| dot(e, d) > 0.5) {
                    continue;
                }
                let len = spec.segment_length[0] + (spec.segment_length[1] - spec.segment_length[0]) * rng.random::<f64>();
                let a = self.nodes[cur].0;
                let b = add(a, scale(d, len));
                if !self.in_bounds(b) || !self.clear(a, b) {
                    continue;
                }
                self.occupied.extend(Self::samples(a, b).into_iter().skip(1));
                self.incident[cur].push(d);
                self.nodes.push((b, radius, Some(cur)));
                self.incident.push(vec![scale(d, -1.0)]);
                cur = self.nodes.len() - 1;
                added.push(cur);
                dir = Some(d);
                placed = true;
                break;
            }
            if !placed {
                break;
            }
        }
        added
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

fn grow_skeleton(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Option<Skeleton> {
    let mut g = Grower {
        spec,
        occupied: Vec::new(),
        nodes: Vec::new(),
        incident: Vec::new(),
    };
    for _ in 0..spec.trees {
        let root_radius = uniform(rng, spec.tube_radius);
        if !g.place_root(rng, root_radius) {
            return None;
        }
        let mut tree = vec![g.nodes.len() - 1];
        let branches = rng.random_range(spec.branches[0]..=spec.branches[1]);
        for _ in 0..branches {
            let radius = uniform(rng, spec.tube_radius);
            let added = g.grow_branch(rng, &tree, radius);
            tree.extend(added);
        }
    }
    let vs = spec.voxel_size.0;
    let nodes = g
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &(p, r, parent))| SkeletonNode {
            id: i as i64 + 1,
            kind: if parent.is_none() { 1 } else { 3 },
            position: std::array::from_fn(|a| p[a] * vs[a]),
            radius: r * vs[0],
            parent: parent.map(|q| q as i64 + 1),
        })
        .collect();
    Skeleton::new(nodes).ok()
}

/// One synthetic raw/label/skeleton triple.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthNeuron {
    pub raw: RawVolume,
    pub label: LabelVolume,
    pub skeleton: Skeleton,
}

const SKELETON_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Generates one neuron image; bit-identical for equal specs.
pub fn synth_neuron(spec: &SynthSpec) -> Result<SynthNeuron> {
    spec.validate()?;
    let mut rng = patch_rng(spec.seed, 0, SKELETON_STREAM);
    let mut found = None;
    for _ in 0..32 {
        let Some(skeleton) = grow_skeleton(spec, &mut rng) else {
            continue;
        };
        let (center, radii) = rasterize_radii(&skeleton, spec.shape, spec.voxel_size)?;
        let counts = topology_counts(&center);
        if counts.foreground == skeleton.tree_count() && counts.background == 1 {
            found = Some((skeleton, center, radii));
            break;
        }
    }
    let (skeleton, center, radii) = found.ok_or_else(|| {
        Error::InvalidParameter(format!(
            "cannot place {} separated trees in a {} volume",
            spec.trees, spec.shape
        ))
    })?;
    let label = inflate_per_node(&center, &radii, 1.0)?.label;

    let signal = label.map(|b| if b { spec.signal as f32 } else { 0.0 });
    let mut raw = if spec.psf_sigma.iter().all(|&s| s > 0.0) {
        scatter_light(&signal, &ScatterParams::diagonal(spec.psf_sigma, 0.0))?
    } else {
        signal
    };
    let mut noise_rng = patch_rng(spec.seed, 0, NOISE_STREAM);
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    for v in raw.as_mut_slice() {
        let n: f64 = if spec.noise > 0.0 { normal.sample(&mut noise_rng).max(0.0) } else { 0.0 };
        *v = (f64::from(*v) + spec.background + n) as f32;
    }
    Ok(SynthNeuron {
        raw,
        label,
        skeleton,
    })
}

/// Seed of volume `index` in a corpus grown from `seed`.
pub fn derived_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Dataset sizes: training, validation and test.
pub const DEFAULT_COUNTS: [usize; 3] = [25, 8, 21];
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub split: String,
    pub name: String,
    pub seed: u64,
    /// Paths relative to the corpus root.
    pub raw: PathBuf,
    pub label: PathBuf,
    pub swc: PathBuf,
    pub trees: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub template: SynthSpec,
    pub counts: [usize; 3],
    pub chunk_shape: Shape,
    pub volumes: Vec<CorpusEntry>,
}

pub const CORPUS_MANIFEST: &str = "corpus.json";

impl CorpusManifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let path = root.as_ref().join(CORPUS_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Specs of every volume in a corpus, in manifest order.
pub fn corpus_specs(template: &SynthSpec, counts: [usize; 3]) -> Vec<(usize, SynthSpec)> {
    let mut out = Vec::new();
    let mut k = 0u64;
    for (split, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let spec = SynthSpec {
                seed: derived_seed(template.seed, k),
                ..template.clone()
            };
            out.push((split, spec));
            k += 1;
        }
    }
    out
}

/// Writes a train/val/test corpus under `root`: per volume a raw and a label
/// chunk store plus the SWC trace, and a `corpus.json` listing everything.
pub fn synth_corpus(
    template: &SynthSpec,
    counts: [usize; 3],
    root: impl AsRef<Path>,
    chunk_shape: Shape,
    pool: &WorkerPool,
) -> Result<CorpusManifest> {
    template.validate()?;
    let root = root.as_ref();
    let specs = corpus_specs(template, counts);
    let volumes = pool.try_map(specs.len(), |i| {
        let (split, spec) = &specs[i];
        let name = format!("{:03}", i);
        let rel = PathBuf::from(SPLITS[*split]).join(&name);
        let dir = root.join(&rel);
        let n = synth_neuron(spec)?;
        chunk_write(&n.raw, chunk_shape, dir.join("raw"))?;
        chunk_write(&n.label, chunk_shape, dir.join("label"))?;
        let swc = dir.join("skeleton.swc");
        fs::write(&swc, n.skeleton.to_swc()).map_err(|e| Error::io(format!("writing {}", swc.display()), e))?;
        Ok(CorpusEntry {
            split: SPLITS[*split].into(),
            name,
            seed: spec.seed,
            raw: rel.join("raw"),
            label: rel.join("label"),
            swc: rel.join("skeleton.swc"),
            trees: n.skeleton.tree_count(),
        })
    })?;
    let manifest = CorpusManifest {
        template: template.clone(),
        counts,
        chunk_shape,
        volumes,
    };
    let path = root.join(CORPUS_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{component_count, Connectivity};

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            seed,
            shape: Shape::new(40, 40, 20),
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = synth_neuron(&small(5)).unwrap();
        let b = synth_neuron(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.label, synth_neuron(&small(6)).unwrap().label);
    }

    #[test]
    fn one_tree_one_component() {
        for seed in 0..5 {
            let n = synth_neuron(&small(seed)).unwrap();
            assert_eq!(component_count(&n.label, Connectivity::TwentySix), 1);
            assert_eq!(topology_counts(&n.label).background, 1);
            assert!(n.label.count() > 20);
        }
    }

    #[test]
    fn several_trees_stay_separate() {
        let spec = SynthSpec {
            trees: 3,
            shape: Shape::new(64, 64, 24),
            ..small(9)
        };
        let n = synth_neuron(&spec).unwrap();
        assert_eq!(n.skeleton.tree_count(), 3);
        assert_eq!(component_count(&n.label, Connectivity::TwentySix), 3);
    }

    #[test]
    fn noiseless_raw_is_blurred_label() {
        let spec = SynthSpec {
            noise: 0.0,
            background: 0.0,
            signal: 2.0,
            ..small(2)
        };
        let n = synth_neuron(&spec).unwrap();
        let expected = scatter_light(
            &n.label.map(|b| if b { 2.0f32 } else { 0.0 }),
            &ScatterParams::diagonal(spec.psf_sigma, 0.0),
        )
        .unwrap();
        assert_eq!(n.raw, expected);
    }

    #[test]
    fn signal_brighter_than_background() {
        let n = synth_neuron(&small(3)).unwrap();
        assert!(n.raw.as_slice().iter().all(|v| v.is_finite() && *v >= 0.0));
        let (mut fg, mut bg) = ((0.0, 0), (0.0, 0));
        for (&r, &l) in n.raw.as_slice().iter().zip(n.label.as_slice()) {
            let acc = if l { &mut fg } else { &mut bg };
            acc.0 += f64::from(r);
            acc.1 += 1;
        }
        assert!(fg.0 / fg.1 as f64 > bg.0 / bg.1 as f64);
    }

    #[test]
    fn corpus_seeds_are_distinct() {
        let specs = corpus_specs(&small(1), DEFAULT_COUNTS);
        assert_eq!(specs.len(), 54);
        let mut seeds: Vec<_> = specs.iter().map(|(_, s)| s.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 54);
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pool = WorkerPool::new(2).unwrap();
        let m = synth_corpus(&small(4), [1, 1, 1], dir.path(), Shape::cube(16), &pool).unwrap();
        assert_eq!(m.volumes.len(), 3);
        assert_eq!(CorpusManifest::load(dir.path()).unwrap(), m);
        let e = &m.volumes[2];
        assert_eq!(e.split, "test");
        let label: LabelVolume = crate::chunk::ChunkStore::open(dir.path().join(&e.label))
            .unwrap()
            .read_all()
            .unwrap();
        assert_eq!(label, synth_neuron(&corpus_specs(&small(4), [1, 1, 1])[2].1).unwrap().label);
        let swc = fs::read_to_string(dir.path().join(&e.swc)).unwrap();
        assert_eq!(crate::swc::parse_swc(&swc).unwrap().tree_count(), 1);
    }

    #[test]
    fn invalid_specs() {
        for bad in [
            SynthSpec { trees: 0, ..Default::default() },
            SynthSpec { noise: -1.0, ..Default::default() },
            SynthSpec { tube_radius: [2.0, 1.0], ..Default::default() },
            SynthSpec { branches: [4, 2], ..Default::default() },
        ] {
            assert!(synth_neuron(&bad).is_err());
        }
    }
}
