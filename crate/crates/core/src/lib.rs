//! Topology-preserving tools for neuron segmentation from light microscopy.
//!
//! The crate is organised bottom-up:
//!
//! * [`volume`] and [`chunk`]: dense grids and the parcellated on-disk format.
//! * [`swc`]: neuron trace ingestion.
//! * [`topology`]: simple points, topological numbers, connected components.
//! * [`loss`]: non-simple weight maps and the weighted cross-entropy.
//! * [`augment`]: paired raw/label transforms that simulate imaging artifacts.
//! * [`inflate`]: turning traces into volumetric labels without changing topology.
//! * [`eval`]: topology-preserving warping and the warped Jaccard index.
//! * [`synth`]: seeded synthetic neuron images.
//! * [`pool`]: the ordered worker pool behind every parallel job.
//! * [`pipeline`]: chunk-parallel, worker-count-independent batch jobs.

pub mod augment;
pub mod chunk;
pub mod error;
pub mod eval;
pub mod inflate;
pub mod loss;
pub mod pipeline;
pub mod pool;
pub mod swc;
pub mod synth;
pub mod topology;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Axis, Grid, LabelVolume, PredictionVolume, RawVolume, Region, Shape, VoxelSize, WeightVolume};
