//! Topology-aware evaluation: warping a prediction towards its label by
//! simple-point flips, the warped Jaccard index, and the topological error
//! count.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{is_simple, topology_counts, TopologyCounts, OFFSETS};
use crate::volume::LabelVolume;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub warped: LabelVolume,
    pub flips_applied: usize,
    /// Voxels where `warped` still differs from the label.
    pub residual_disagreement: usize,
}

/// Greedy warping. Disagreeing voxels are visited in storage order, flipping
/// each one that is currently simple; passes repeat until one flips nothing.
/// Every flip removes exactly one disagreement, so at most the initial
/// disagreement count of flips are made.
pub fn warp(pred_bin: &LabelVolume, label: &LabelVolume) -> Result<WarpResult> {
    pred_bin.same_shape(label)?;
    let shape = pred_bin.shape();
    let mut cur = pred_bin.clone();
    let mut todo: Vec<usize> = (0..shape.len())
        .filter(|&i| pred_bin.as_slice()[i] != label.as_slice()[i])
        .collect();
    // A voxel that failed its last check needs no recheck until a flip lands
    // in its neighbourhood. Stamps count flips; 0 means never checked.
    let mut touched = vec![0u64; shape.len()];
    let mut checked = vec![0u64; shape.len()];
    let mut flips = 0u64;
    loop {
        let flips_before = flips;
        todo.retain(|&i| {
            if checked[i] != 0 && touched[i] <= checked[i] {
                return true;
            }
            let p = shape.coord(i);
            if !is_simple(&cur, p) {
                checked[i] = flips + 1;
                return true;
            }
            cur.as_mut_slice()[i] = !cur.as_slice()[i];
            flips += 1;
            let q = p.map(|c| c as i64);
            for d in OFFSETS {
                let n = [q[0] + d[0], q[1] + d[1], q[2] + d[2]];
                if shape.contains_signed(n) {
                    touched[shape.index(n.map(|c| c as usize))] = flips + 1;
                }
            }
            false
        });
        if flips == flips_before {
            break;
        }
    }
    Ok(WarpResult {
        residual_disagreement: todo.len(),
        flips_applied: flips as usize,
        warped: cur,
    })
}

fn jaccard_counts(a: &LabelVolume, b: &LabelVolume) -> (usize, usize) {
    a.as_slice().iter().zip(b.as_slice()).fold((0, 0), |(inter, union), (&x, &y)| {
        (inter + (x && y) as usize, union + (x || y) as usize)
    })
}

/// What to report when both volumes are empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    /// Return [`Error::EmptyJaccard`].
    #[default]
    Error,
    /// Treat two empty volumes as a perfect match.
    One,
}

fn ratio(inter: usize, union: usize, empty: EmptyPolicy) -> Result<f64> {
    match (union, empty) {
        (0, EmptyPolicy::Error) => Err(Error::EmptyJaccard),
        (0, EmptyPolicy::One) => Ok(1.0),
        _ => Ok(inter as f64 / union as f64),
    }
}

/// Intersection over union without warping.
pub fn plain_jaccard(pred_bin: &LabelVolume, label: &LabelVolume, empty: EmptyPolicy) -> Result<f64> {
    pred_bin.same_shape(label)?;
    let (i, u) = jaccard_counts(pred_bin, label);
    ratio(i, u, empty)
}

/// Jaccard index of the warped prediction against the label.
pub fn warped_jaccard(pred_bin: &LabelVolume, label: &LabelVolume, empty: EmptyPolicy) -> Result<f64> {
    let w = warp(pred_bin, label)?;
    let (i, u) = jaccard_counts(&w.warped, label);
    ratio(i, u, empty)
}

/// Disagreements that survive greedy warping.
pub fn topo_error_count(pred_bin: &LabelVolume, label: &LabelVolume) -> Result<usize> {
    Ok(warp(pred_bin, label)?.residual_disagreement)
}

/// Evaluation of one prediction/label pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub plain_jaccard: f64,
    pub warped_jaccard: f64,
    pub flips: usize,
    pub topo_errors: usize,
    pub prediction: TopologyCounts,
    pub label: TopologyCounts,
    pub warped: TopologyCounts,
}

pub fn evaluate_pair(pred_bin: &LabelVolume, label: &LabelVolume, empty: EmptyPolicy) -> Result<PairReport> {
    let w = warp(pred_bin, label)?;
    let (pi, pu) = jaccard_counts(pred_bin, label);
    let (wi, wu) = jaccard_counts(&w.warped, label);
    Ok(PairReport {
        plain_jaccard: ratio(pi, pu, empty)?,
        warped_jaccard: ratio(wi, wu, empty)?,
        flips: w.flips_applied,
        topo_errors: w.residual_disagreement,
        prediction: topology_counts(pred_bin),
        label: topology_counts(label),
        warped: topology_counts(&w.warped),
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    /// `sd` uses the `n - 1` denominator and is 0 for fewer than two values.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                sd: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { n, mean, sd }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4} (n={})", self.mean, self.sd, self.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Shape;

    fn line(shape: Shape, y: usize, xs: std::ops::Range<usize>) -> LabelVolume {
        let mut v = LabelVolume::new(shape);
        for x in xs {
            v.set([x, y, 1], true);
        }
        v
    }

    #[test]
    fn identical_volumes() {
        let a = line(Shape::new(8, 4, 3), 1, 1..7);
        let w = warp(&a, &a).unwrap();
        assert_eq!((w.flips_applied, w.residual_disagreement), (0, 0));
        assert_eq!(warped_jaccard(&a, &a, EmptyPolicy::Error).unwrap(), 1.0);
        assert_eq!(topo_error_count(&a, &a).unwrap(), 0);
    }

    #[test]
    fn shifted_line_warps_onto_label() {
        let s = Shape::new(8, 4, 3);
        let label = line(s, 1, 1..7);
        let pred = line(s, 2, 1..7);
        let w = warp(&pred, &label).unwrap();
        assert_eq!(w.warped, label);
        assert_eq!(w.residual_disagreement, 0);
        assert_eq!(w.flips_applied, 12);
        assert_eq!(warped_jaccard(&pred, &label, EmptyPolicy::Error).unwrap(), 1.0);
        assert!(plain_jaccard(&pred, &label, EmptyPolicy::Error).unwrap() < 1.0);
    }

    #[test]
    fn far_apart_voxels() {
        let s = Shape::new(14, 3, 3);
        let mut pred = LabelVolume::new(s);
        let mut label = LabelVolume::new(s);
        pred.set([1, 1, 1], true);
        label.set([11, 1, 1], true);
        let w = warp(&pred, &label).unwrap();
        assert_eq!((w.flips_applied, w.residual_disagreement), (0, 2));
        assert_eq!(warped_jaccard(&pred, &label, EmptyPolicy::Error).unwrap(), 0.0);
    }

    #[test]
    fn topological_errors() {
        let s = Shape::new(9, 3, 3);
        let label = line(s, 1, 1..8);
        let mut island = LabelVolume::new(Shape::new(9, 5, 3));
        let mut island_label = island.clone();
        for x in 1..8 {
            island.set([x, 1, 1], true);
            island_label.set([x, 1, 1], true);
        }
        island.set([4, 4, 1], true);
        assert_eq!(topo_error_count(&island, &island_label).unwrap(), 1);

        let mut gap = label.clone();
        gap.set([4, 1, 1], false);
        assert_eq!(topo_error_count(&gap, &label).unwrap(), 1);
    }

    #[test]
    fn empty_policy() {
        let e = LabelVolume::new(Shape::cube(3));
        assert!(matches!(warped_jaccard(&e, &e, EmptyPolicy::Error), Err(Error::EmptyJaccard)));
        assert_eq!(warped_jaccard(&e, &e, EmptyPolicy::One).unwrap(), 1.0);
        assert!(plain_jaccard(&e, &e, EmptyPolicy::Error).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let a = LabelVolume::new(Shape::cube(3));
        let b = LabelVolume::new(Shape::cube(4));
        assert!(matches!(warp(&a, &b), Err(Error::ShapeMismatch(..))));
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.sd - 1.290_994_448_735_805_6).abs() < 1e-12);
        assert_eq!(Summary::of(&[3.0]).sd, 0.0);
    }

    #[test]
    fn pair_report_preserves_prediction_topology() {
        let s = Shape::new(8, 4, 3);
        let r = evaluate_pair(&line(s, 2, 1..7), &line(s, 1, 0..8), EmptyPolicy::Error).unwrap();
        assert_eq!(r.warped, r.prediction);
        assert!(r.warped_jaccard >= r.plain_jaccard);
    }
}
