//! Seeded per-patch sampling of composed augmentations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Artifact, ArtifactTransform, DropParams, DuplicateParams, OcclusionParams, ScatterParams, StitchParams, Symmetry};
use crate::error::{Error, Result};
use crate::volume::{Axis, Region, Shape};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The random stream for `(seed, patch_id, stream)`. Streams never depend
/// on scheduling or on which other streams were consumed.
pub fn patch_rng(seed: u64, patch_id: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut h = splitmix64(seed);
    for (i, word) in [patch_id, stream, 0x6e74_6f70, 0x6175_676d].into_iter().enumerate() {
        h = splitmix64(h ^ word);
        key[i * 8..i * 8 + 8].copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

fn uniform_int(rng: &mut impl Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionConfig {
    pub probability: f64,
    /// Peak intensity removed.
    pub amplitude: [f64; 2],
    /// PSF sigma in voxels along x and y.
    pub sigma_xy: [f64; 2],
    /// PSF sigma in voxels along z.
    pub sigma_z: [f64; 2],
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            probability: 0.2,
            amplitude: [0.5, 1.0],
            sigma_xy: [1.0, 2.5],
            sigma_z: [0.5, 1.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuplicateConfig {
    pub probability: f64,
    pub axis: Axis,
    /// Extent of the duplicated box along `axis`, in slices (at least 2).
    pub slices: [usize; 2],
    /// Extent of the box across the other two axes, as a fraction of the patch.
    pub cross_section: [f64; 2],
}

impl Default for DuplicateConfig {
    fn default() -> Self {
        Self {
            probability: 0.1,
            axis: Axis::Z,
            slices: [2, 4],
            cross_section: [0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropConfig {
    pub probability: f64,
    pub axis: Axis,
    pub delta: [usize; 2],
}

impl Default for DropConfig {
    fn default() -> Self {
        Self {
            probability: 0.1,
            axis: Axis::Z,
            delta: [1, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StitchConfig {
    pub probability: f64,
    pub split_axis: Axis,
    pub shift_axis: Axis,
    pub delta: [usize; 2],
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            probability: 0.1,
            split_axis: Axis::X,
            shift_axis: Axis::Y,
            delta: [1, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatterConfig {
    pub probability: f64,
    pub sigma_xy: [f64; 2],
    pub sigma_z: [f64; 2],
    pub lambda: [f64; 2],
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self {
            probability: 0.2,
            sigma_xy: [0.5, 1.5],
            sigma_z: [0.3, 1.0],
            lambda: [0.0, 0.1],
        }
    }
}

/// Rigid symmetries. Rotations are about the z (optical) axis only, and only
/// by 180 degrees when the patch is not square in x/y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometricConfig {
    pub rotate: bool,
    pub flip: bool,
}

impl Default for GeometricConfig {
    fn default() -> Self {
        Self { rotate: true, flip: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub seed: u64,
    pub occlusion: OcclusionConfig,
    pub duplicate: DuplicateConfig,
    pub drop: DropConfig,
    pub stitch: StitchConfig,
    pub scatter: ScatterConfig,
    pub geometric: GeometricConfig,
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name}.probability {p} not in [0, 1]")))
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, r: &[T; 2], min: T) -> Result<()> {
    if r[0] <= r[1] && r[0] >= min {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} range {r:?} must be ordered and >= {min:?}")))
    }
}

impl AugmentConfig {
    /// No artifacts and no symmetries: every sampled transform is the identity.
    pub fn disabled(seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            ..Default::default()
        };
        cfg.occlusion.probability = 0.0;
        cfg.duplicate.probability = 0.0;
        cfg.drop.probability = 0.0;
        cfg.stitch.probability = 0.0;
        cfg.scatter.probability = 0.0;
        cfg.geometric = GeometricConfig {
            rotate: false,
            flip: false,
        };
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("occlusion", self.occlusion.probability)?;
        check_probability("duplicate", self.duplicate.probability)?;
        check_probability("drop", self.drop.probability)?;
        check_probability("stitch", self.stitch.probability)?;
        check_probability("scatter", self.scatter.probability)?;
        check_range("occlusion.amplitude", &self.occlusion.amplitude, f64::MIN_POSITIVE)?;
        check_range("occlusion.sigma_xy", &self.occlusion.sigma_xy, f64::MIN_POSITIVE)?;
        check_range("occlusion.sigma_z", &self.occlusion.sigma_z, f64::MIN_POSITIVE)?;
        check_range("duplicate.slices", &self.duplicate.slices, 2)?;
        check_range("duplicate.cross_section", &self.duplicate.cross_section, f64::MIN_POSITIVE)?;
        if self.duplicate.cross_section[1] > 1.0 {
            return Err(Error::InvalidParameter("duplicate.cross_section must be <= 1".into()));
        }
        check_range("drop.delta", &self.drop.delta, 1)?;
        check_range("stitch.delta", &self.stitch.delta, 1)?;
        if self.stitch.split_axis == self.stitch.shift_axis {
            return Err(Error::InvalidParameter("stitch split and shift axes must differ".into()));
        }
        check_range("scatter.sigma_xy", &self.scatter.sigma_xy, f64::MIN_POSITIVE)?;
        check_range("scatter.sigma_z", &self.scatter.sigma_z, f64::MIN_POSITIVE)?;
        check_range("scatter.lambda", &self.scatter.lambda, 0.0)
    }
}

// Stream ids; fixed so that toggling one artifact never perturbs another.
const OCCLUSION: u64 = 0;
const DUPLICATE: u64 = 1;
const DROP: u64 = 2;
const STITCH: u64 = 3;
const SCATTER: u64 = 4;
const GEOMETRIC: u64 = 5;

fn sigma3(rng: &mut impl Rng, xy: [f64; 2], z: [f64; 2]) -> [f64; 3] {
    let s = uniform(rng, xy);
    [s, s, uniform(rng, z)]
}

fn sample_occlusion(rng: &mut impl Rng, c: &OcclusionConfig, shape: Shape) -> Option<Artifact> {
    let center = [
        uniform_int(rng, 0, shape.nx() - 1),
        uniform_int(rng, 0, shape.ny() - 1),
        uniform_int(rng, 0, shape.nz() - 1),
    ];
    Some(Artifact::Occlusion(OcclusionParams {
        center,
        psf_sigma: sigma3(rng, c.sigma_xy, c.sigma_z),
        amplitude: uniform(rng, c.amplitude),
    }))
}

fn sample_duplicate(rng: &mut impl Rng, c: &DuplicateConfig, shape: Shape) -> Option<Artifact> {
    let a = c.axis.index();
    let n = shape.0[a];
    let hi = c.slices[1].min(n);
    if c.slices[0] > hi {
        return None;
    }
    let thickness = uniform_int(rng, c.slices[0], hi);
    let mut origin = [0; 3];
    let mut extent = shape.0;
    origin[a] = uniform_int(rng, 0, n - thickness);
    extent[a] = thickness;
    let source = origin[a] + uniform_int(rng, 0, thickness - 1);
    for b in (0..3).filter(|&b| b != a) {
        let frac = uniform(rng, c.cross_section);
        extent[b] = ((frac * shape.0[b] as f64).ceil() as usize).clamp(1, shape.0[b]);
        origin[b] = uniform_int(rng, 0, shape.0[b] - extent[b]);
    }
    Some(Artifact::Duplicate(DuplicateParams {
        axis: c.axis,
        source,
        region: Region::new(origin, Shape(extent)),
    }))
}

fn sample_drop(rng: &mut impl Rng, c: &DropConfig, shape: Shape) -> Option<Artifact> {
    let n = shape.0[c.axis.index()];
    // Band [x0 - d, x0 + 2d] must fit: needs n >= 3d + 1.
    let hi = c.delta[1].min(n.saturating_sub(1) / 3);
    if c.delta[0] > hi {
        return None;
    }
    let delta = uniform_int(rng, c.delta[0], hi);
    let position = uniform_int(rng, delta, n - 1 - 2 * delta);
    Some(Artifact::Drop(DropParams {
        axis: c.axis,
        position,
        delta,
    }))
}

fn sample_stitch(rng: &mut impl Rng, c: &StitchConfig, shape: Shape) -> Option<Artifact> {
    let n = shape.0[c.split_axis.index()];
    let m = shape.0[c.shift_axis.index()];
    let fits = |d: usize| d < m && 2 * d.div_ceil(2) + 2 <= n;
    let hi = (c.delta[0]..=c.delta[1]).rev().find(|&d| fits(d))?;
    let delta = uniform_int(rng, c.delta[0], hi);
    let h = delta.div_ceil(2);
    let position = uniform_int(rng, h, n - 2 - h);
    Some(Artifact::Stitch(StitchParams {
        split_axis: c.split_axis,
        shift_axis: c.shift_axis,
        position,
        delta,
    }))
}

fn sample_scatter(rng: &mut impl Rng, c: &ScatterConfig) -> Option<Artifact> {
    let sigma = sigma3(rng, c.sigma_xy, c.sigma_z);
    Some(Artifact::Scatter(ScatterParams::diagonal(sigma, uniform(rng, c.lambda))))
}

fn sample_geometric(rng: &mut impl Rng, c: &GeometricConfig, shape: Shape) -> Vec<Artifact> {
    let mut steps = Vec::new();
    if c.rotate {
        let turns = if shape.nx() == shape.ny() {
            uniform_int(rng, 0, 3)
        } else {
            2 * uniform_int(rng, 0, 1)
        } as u8;
        if turns > 0 {
            steps.push(Artifact::Symmetry(Symmetry::Rotate {
                axis: Axis::Z,
                quarter_turns: turns,
            }));
        }
    }
    if c.flip {
        for axis in Axis::ALL {
            if rng.random::<bool>() {
                steps.push(Artifact::Symmetry(Symmetry::Flip { axis }));
            }
        }
    }
    steps
}

/// Draws the composed transform for one patch. Deterministic in
/// `(cfg, patch_id, shape)`; every step preserves `shape`. Artifacts whose
/// configured range cannot fit in the patch are skipped.
pub fn sample_augmentation(cfg: &AugmentConfig, patch_id: u64, shape: Shape) -> Result<ArtifactTransform> {
    cfg.validate()?;
    let mut t = ArtifactTransform::identity(cfg.seed, patch_id);
    let stream = |id: u64, p: f64| {
        let mut rng = patch_rng(cfg.seed, patch_id, id);
        let present = rng.random::<f64>() < p;
        (present, rng)
    };

    let (on, mut rng) = stream(OCCLUSION, cfg.occlusion.probability);
    if on {
        t.steps.extend(sample_occlusion(&mut rng, &cfg.occlusion, shape));
    }
    let (on, mut rng) = stream(DUPLICATE, cfg.duplicate.probability);
    if on {
        t.steps.extend(sample_duplicate(&mut rng, &cfg.duplicate, shape));
    }
    let (on, mut rng) = stream(DROP, cfg.drop.probability);
    if on {
        t.steps.extend(sample_drop(&mut rng, &cfg.drop, shape));
    }
    let (on, mut rng) = stream(STITCH, cfg.stitch.probability);
    if on {
        t.steps.extend(sample_stitch(&mut rng, &cfg.stitch, shape));
    }
    let (on, mut rng) = stream(SCATTER, cfg.scatter.probability);
    if on {
        t.steps.extend(sample_scatter(&mut rng, &cfg.scatter));
    }
    let mut rng = patch_rng(cfg.seed, patch_id, GEOMETRIC);
    t.steps.extend(sample_geometric(&mut rng, &cfg.geometric, shape));
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_inputs_same_transform() {
        let cfg = AugmentConfig {
            seed: 42,
            ..Default::default()
        };
        let shape = Shape::new(32, 32, 16);
        for id in 0..50 {
            assert_eq!(
                sample_augmentation(&cfg, id, shape).unwrap(),
                sample_augmentation(&cfg, id, shape).unwrap()
            );
        }
        let differs = (0..50).any(|id| {
            sample_augmentation(&cfg, id, shape).unwrap() != sample_augmentation(&cfg, id + 1, shape).unwrap()
        });
        assert!(differs);
    }

    #[test]
    fn disabled_config_is_identity() {
        let cfg = AugmentConfig::disabled(7);
        for id in 0..20 {
            assert!(sample_augmentation(&cfg, id, Shape::cube(16)).unwrap().is_identity());
        }
    }

    #[test]
    fn certain_artifact_is_always_present_and_in_range() {
        let mut cfg = AugmentConfig::disabled(3);
        cfg.stitch.probability = 1.0;
        cfg.stitch.delta = [2, 3];
        for id in 0..100 {
            let t = sample_augmentation(&cfg, id, Shape::cube(24)).unwrap();
            assert_eq!(t.steps.len(), 1);
            match &t.steps[0] {
                Artifact::Stitch(p) => {
                    assert!((2..=3).contains(&p.delta));
                    assert!(p.validate(Shape::cube(24)).is_ok());
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = AugmentConfig::default();
        cfg.drop.probability = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.stitch.delta = [3, 1];
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.stitch.shift_axis = Axis::X;
        assert!(sample_augmentation(&cfg, 0, Shape::cube(8)).is_err());
    }

    #[test]
    fn rectangular_patches_only_get_half_turns() {
        let mut cfg = AugmentConfig::disabled(11);
        cfg.geometric.rotate = true;
        for id in 0..100 {
            let shape = Shape::new(20, 12, 8);
            let t = sample_augmentation(&cfg, id, shape).unwrap();
            for step in &t.steps {
                if let Artifact::Symmetry(s) = step {
                    assert!(s.preserves_shape(shape));
                }
            }
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = AugmentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<AugmentConfig>(&text).unwrap(), cfg);
        let partial: AugmentConfig = serde_json::from_str(r#"{"seed": 9, "drop": {"probability": 1.0}}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.drop.delta, DropConfig::default().delta);
    }
}
