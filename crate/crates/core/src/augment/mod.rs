//! Artifact-generating augmentations.
//!
//! Every transform is a pair acting on a raw image and its label together.
//! Occlusion, duplication and scattering leave the label untouched; dropped
//! sections and stitching misalignment rewrite it so that the annotation
//! stays connected across the simulated defect. Rigid symmetries act on both
//! volumes identically.

mod artifacts;
mod sample;

pub use artifacts::{
    drop_sections, drop_sections_label, drop_sections_raw, duplicate_sections, misalign_stitch, misalign_stitch_label,
    misalign_stitch_raw, occlude_branch, rotate_flip, scatter_light, DropParams, DuplicateParams, OcclusionParams,
    ScatterParams, StitchParams, Symmetry,
};
pub use sample::{
    patch_rng, sample_augmentation, AugmentConfig, DropConfig, DuplicateConfig, GeometricConfig, OcclusionConfig,
    ScatterConfig, StitchConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::{LabelVolume, RawVolume};

/// One step of a composed augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifact {
    Occlusion(OcclusionParams),
    Duplicate(DuplicateParams),
    Drop(DropParams),
    Stitch(StitchParams),
    Scatter(ScatterParams),
    Symmetry(Symmetry),
}

impl Artifact {
    pub fn name(&self) -> &'static str {
        match self {
            Artifact::Occlusion(_) => "occlusion",
            Artifact::Duplicate(_) => "duplicate",
            Artifact::Drop(_) => "drop",
            Artifact::Stitch(_) => "stitch",
            Artifact::Scatter(_) => "scatter",
            Artifact::Symmetry(_) => "symmetry",
        }
    }

    /// Whether the label half of the pair is the identity.
    pub fn label_is_identity(&self) -> bool {
        matches!(self, Artifact::Occlusion(_) | Artifact::Duplicate(_) | Artifact::Scatter(_))
    }

    pub fn apply_raw(&self, raw: &RawVolume) -> Result<RawVolume> {
        match self {
            Artifact::Occlusion(p) => occlude_branch(raw, p),
            Artifact::Duplicate(p) => duplicate_sections(raw, p),
            Artifact::Drop(p) => drop_sections_raw(raw, p),
            Artifact::Stitch(p) => misalign_stitch_raw(raw, p),
            Artifact::Scatter(p) => scatter_light(raw, p),
            Artifact::Symmetry(s) => Ok(s.apply(raw)),
        }
    }

    pub fn apply_label(&self, label: &LabelVolume) -> Result<LabelVolume> {
        match self {
            Artifact::Occlusion(p) => p.validate(label.shape()).map(|_| label.clone()),
            Artifact::Duplicate(p) => p.validate(label.shape()).map(|_| label.clone()),
            Artifact::Scatter(p) => p.validate().map(|_| label.clone()),
            Artifact::Drop(p) => drop_sections_label(label, p),
            Artifact::Stitch(p) => misalign_stitch_label(label, p),
            Artifact::Symmetry(s) => Ok(s.apply(label)),
        }
    }

    pub fn apply(&self, raw: &RawVolume, label: &LabelVolume) -> Result<(RawVolume, LabelVolume)> {
        raw.same_shape(label)?;
        Ok((self.apply_raw(raw)?, self.apply_label(label)?))
    }
}

/// A composed raw/label transform together with the record of how it was
/// sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactTransform {
    pub seed: u64,
    pub patch_id: u64,
    pub steps: Vec<Artifact>,
}

impl ArtifactTransform {
    pub fn identity(seed: u64, patch_id: u64) -> Self {
        Self {
            seed,
            patch_id,
            steps: Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn name(&self) -> String {
        if self.steps.is_empty() {
            return "identity".into();
        }
        self.steps.iter().map(Artifact::name).collect::<Vec<_>>().join("+")
    }

    pub fn apply_raw(&self, raw: &RawVolume) -> Result<RawVolume> {
        let mut cur = raw.clone();
        for step in &self.steps {
            cur = step.apply_raw(&cur)?;
        }
        Ok(cur)
    }

    pub fn apply_label(&self, label: &LabelVolume) -> Result<LabelVolume> {
        let mut cur = label.clone();
        for step in &self.steps {
            cur = step.apply_label(&cur)?;
        }
        Ok(cur)
    }

    pub fn apply(&self, raw: &RawVolume, label: &LabelVolume) -> Result<(RawVolume, LabelVolume)> {
        raw.same_shape(label)?;
        Ok((self.apply_raw(raw)?, self.apply_label(label)?))
    }
}
