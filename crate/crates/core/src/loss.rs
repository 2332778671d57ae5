//! Topology-weighted binary cross-entropy.
//!
//! The prediction is thresholded, its non-simple voxels get weight `w > 1`,
//! everything else weight 1, and the loss is the weighted mean BCE
//!
//! ```text
//! J = -(1/N) * sum_i w_i * [ y_i ln(p_i) + (1 - y_i) ln(1 - p_i) ]
//! ```
//!
//! with predictions clamped into `[eps, 1 - eps]`. Sums run in f64 with
//! compensated summation in storage order, so results do not depend on how
//! the work was scheduled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::nonsimple_mask;
use crate::volume::{Grid, LabelVolume, PredictionVolume, Voxel, WeightVolume};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Binarization threshold; ties go to foreground.
    pub threshold: f64,
    /// Weight of non-simple voxels.
    pub weight: f64,
    /// Clamp applied to predictions before taking logs.
    pub epsilon: f64,
    /// Restrict the up-weighted set to voxels where the binarized prediction
    /// disagrees with the label.
    pub intersect_disagreement: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            weight: 5.0,
            epsilon: 1e-6,
            intersect_disagreement: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter(format!("threshold {} not in (0, 1)", self.threshold)));
        }
        if !(self.weight > 1.0 && self.weight.is_finite()) {
            return Err(Error::InvalidParameter(format!("weight {} must be a finite value > 1", self.weight)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidParameter(format!("epsilon {} not in (0, 0.5)", self.epsilon)));
        }
        Ok(())
    }
}

/// Foreground iff `pred >= threshold`.
pub fn binarize<P: Voxel + Into<f64>>(pred: &Grid<P>, threshold: f64) -> LabelVolume {
    pred.map(|v| v.into() >= threshold)
}

/// Weight `w` on the non-simple voxels of `pred_bin`, 1 elsewhere.
pub fn weight_map(pred_bin: &LabelVolume, w: f64) -> WeightVolume {
    let mask = nonsimple_mask(pred_bin);
    mask.map(|m| if m { w as f32 } else { 1.0 })
}

/// Thresholds `pred` and builds its weight map under `cfg`. `label` is only
/// consulted when `cfg.intersect_disagreement` is set.
pub fn weight_map_for(pred: &PredictionVolume, label: Option<&LabelVolume>, cfg: &LossConfig) -> Result<WeightVolume> {
    cfg.validate()?;
    let bin = binarize(pred, cfg.threshold);
    let mut weights = weight_map(&bin, cfg.weight);
    if cfg.intersect_disagreement {
        let label = label.ok_or_else(|| Error::InvalidParameter("disagreement weighting needs a label".into()))?;
        bin.same_shape(label)?;
        for ((w, &b), &y) in weights.as_mut_slice().iter_mut().zip(bin.as_slice()).zip(label.as_slice()) {
            if b == y {
                *w = 1.0;
            }
        }
    }
    Ok(weights)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

fn check_shapes<P, W>(pred: &Grid<P>, label: &LabelVolume, weights: &Grid<W>) -> Result<()>
where
    P: Voxel,
    W: Voxel,
{
    pred.same_shape(label)?;
    pred.same_shape(weights)
}

/// Weighted mean binary cross-entropy of `pred` against `label`.
pub fn weighted_bce<P, W>(pred: &Grid<P>, label: &LabelVolume, weights: &Grid<W>, epsilon: f64) -> Result<f64>
where
    P: Voxel + Into<f64>,
    W: Voxel + Into<f64>,
{
    check_shapes(pred, label, weights)?;
    let mut acc = CompensatedSum::default();
    for ((&p, &y), &w) in pred.as_slice().iter().zip(label.as_slice()).zip(weights.as_slice()) {
        let p = p.into().clamp(epsilon, 1.0 - epsilon);
        let term = if y { -p.ln() } else { -(1.0 - p).ln() };
        acc.add(w.into() * term);
    }
    Ok(acc.value() / pred.len() as f64)
}

/// Analytic derivative of [`weighted_bce`] with respect to each prediction.
/// Zero wherever the clamp is active.
pub fn weighted_bce_grad<P, W>(pred: &Grid<P>, label: &LabelVolume, weights: &Grid<W>, epsilon: f64) -> Result<Grid<f64>>
where
    P: Voxel + Into<f64>,
    W: Voxel + Into<f64>,
{
    check_shapes(pred, label, weights)?;
    let n = pred.len() as f64;
    let data = pred
        .as_slice()
        .iter()
        .zip(label.as_slice())
        .zip(weights.as_slice())
        .map(|((&p, &y), &w)| {
            let p = p.into();
            if p < epsilon || p > 1.0 - epsilon {
                return 0.0;
            }
            let w = w.into();
            if y {
                -w / (n * p)
            } else {
                w / (n * (1.0 - p))
            }
        })
        .collect();
    Ok(Grid::from_vec(pred.shape(), data)?.with_voxel_size(pred.voxel_size()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Shape;

    fn grid<T: Voxel>(values: &[T]) -> Grid<T> {
        Grid::from_vec(Shape::new(values.len(), 1, 1), values.to_vec()).unwrap()
    }

    #[test]
    fn binarize_tie_goes_to_foreground() {
        let s = Shape::cube(2);
        assert_eq!(binarize(&PredictionVolume::filled(s, 0.4), 0.5).count(), 0);
        assert_eq!(binarize(&PredictionVolume::filled(s, 0.5), 0.5).count(), 8);
        let b = binarize(&grid(&[0.2f32, 0.9]), 0.5);
        assert_eq!(b.as_slice(), &[false, true]);
    }

    #[test]
    fn weight_map_examples() {
        let w = weight_map(&LabelVolume::new(Shape::cube(4)), 5.0);
        assert!(w.as_slice().iter().all(|&v| v == 1.0));

        let mut line = LabelVolume::new(Shape::new(7, 3, 3));
        for x in [1, 2, 4, 5] {
            line.set([x, 1, 1], true);
        }
        let w = weight_map(&line, 5.0);
        assert_eq!(w.get([3, 1, 1]), 5.0);
        assert_eq!(w.get([2, 1, 1]), 1.0);
        assert_eq!(w.get([4, 1, 1]), 1.0);

        let cube = LabelVolume::from_fn(Shape::cube(7), |p| p.iter().all(|&c| (1..=5).contains(&c)));
        let w = weight_map(&cube, 5.0);
        assert_eq!(w.get([3, 3, 3]), 5.0);
        assert_eq!(w.get([2, 2, 2]), 5.0);
        assert_eq!(w.get([1, 3, 3]), 1.0);
    }

    #[test]
    fn bce_worked_examples() {
        let j = weighted_bce(&grid(&[0.5f64]), &grid(&[true]), &grid(&[1.0f64]), 1e-6).unwrap();
        assert!((j - std::f64::consts::LN_2).abs() < 1e-6);

        let j = weighted_bce(&grid(&[0.9f64, 0.1]), &grid(&[true, false]), &grid(&[5.0f64, 1.0]), 1e-6).unwrap();
        let expected = (5.0 * -(0.9f64).ln() + -(0.9f64).ln()) / 2.0;
        assert!((j - expected).abs() < 1e-12);
        assert!((j - 0.316_081_547).abs() < 1e-6);

        let eps = 1e-3;
        let j = weighted_bce(&grid(&[1.0 - eps, eps]), &grid(&[true, false]), &grid(&[1.0f64, 1.0]), eps).unwrap();
        assert!((j - -(1.0 - eps).ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_examples() {
        let g = weighted_bce_grad(&grid(&[0.5f64]), &grid(&[true]), &grid(&[1.0f64]), 1e-6).unwrap();
        assert!((g.as_slice()[0] + 2.0).abs() < 1e-12);
        let g = weighted_bce_grad(&grid(&[0.5f64]), &grid(&[false]), &grid(&[1.0f64]), 1e-6).unwrap();
        assert!((g.as_slice()[0] - 2.0).abs() < 1e-12);
        let g = weighted_bce_grad(&grid(&[0.0f64, 1.0]), &grid(&[true, false]), &grid(&[1.0f64, 1.0]), 1e-6).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let r = weighted_bce(&grid(&[0.5f64, 0.5]), &grid(&[true]), &grid(&[1.0f64]), 1e-6);
        assert!(matches!(r, Err(Error::ShapeMismatch(..))));
        assert!(weighted_bce_grad(&grid(&[0.5f64]), &grid(&[true]), &grid(&[1.0f64, 1.0]), 1e-6).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        for bad in [
            LossConfig { weight: 1.0, ..Default::default() },
            LossConfig { threshold: 1.0, ..Default::default() },
            LossConfig { epsilon: 0.5, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn disagreement_variant_only_keeps_mismatches() {
        let mut pred = PredictionVolume::new(Shape::new(7, 3, 3));
        for x in [1, 2, 4, 5] {
            pred.set([x, 1, 1], 1.0);
        }
        let mut label = binarize(&pred, 0.5);
        let cfg = LossConfig {
            intersect_disagreement: true,
            ..Default::default()
        };
        let w = weight_map_for(&pred, Some(&label), &cfg).unwrap();
        assert!(w.as_slice().iter().all(|&v| v == 1.0));
        label.set([3, 1, 1], true);
        let w = weight_map_for(&pred, Some(&label), &cfg).unwrap();
        assert_eq!(w.get([3, 1, 1]), 5.0);
        assert!(weight_map_for(&pred, None, &cfg).is_err());
    }
}
