mod common;

use common::{oracle_counts, random_label, random_shape, rng, to_oracle};
use neurotopo::eval::{evaluate_pair, plain_jaccard, topo_error_count, warp, warped_jaccard, EmptyPolicy, Summary};
use neurotopo::{LabelVolume, Shape};
use rand::Rng;

/// A label and a noisy copy of it: each voxel flipped with probability `noise`.
fn noisy_pair(r: &mut impl Rng, shape: Shape, density: f64, noise: f64) -> (LabelVolume, LabelVolume) {
    let label = random_label(r, shape, density);
    let mut pred = label.clone();
    for v in pred.as_mut_slice() {
        if r.random::<f64>() < noise {
            *v = !*v;
        }
    }
    (pred, label)
}

fn line(shape: Shape, y: usize) -> LabelVolume {
    LabelVolume::from_fn(shape, |p| p[1] == y && p[2] == 1 && (1..=6).contains(&p[0]))
}

#[test]
fn warp_matches_raster_scan_oracle() {
    let mut r = rng(41);
    for _ in 0..120 {
        let shape = random_shape(&mut r, 2, 9);
        let density = r.random_range(0.1..0.6);
        let noise = r.random_range(0.02..0.5);
        let (pred, label) = noisy_pair(&mut r, shape, density, noise);
        let w = warp(&pred, &label).unwrap();
        let (expect, flips) = neurotopo_oracle::greedy_warp(&to_oracle(&pred), &to_oracle(&label));
        assert_eq!(w.warped.as_slice(), expect.data.as_slice());
        assert_eq!(w.flips_applied, flips);
    }
}

#[test]
fn warp_properties() {
    let mut r = rng(42);
    for _ in 0..150 {
        let shape = random_shape(&mut r, 2, 10);
        let density = r.random_range(0.05..0.6);
        let noise = r.random_range(0.02..0.6);
        let (pred, label) = noisy_pair(&mut r, shape, density, noise);
        if pred.count() == 0 && label.count() == 0 {
            continue;
        }
        let initial = pred.as_slice().iter().zip(label.as_slice()).filter(|(a, b)| a != b).count();
        let w = warp(&pred, &label).unwrap();
        let residual = w.warped.as_slice().iter().zip(label.as_slice()).filter(|(a, b)| a != b).count();
        assert_eq!(w.residual_disagreement, residual);
        assert_eq!(w.flips_applied + residual, initial);
        assert_eq!(oracle_counts(&w.warped), oracle_counts(&pred));
        let (pj, wj) = (
            plain_jaccard(&pred, &label, EmptyPolicy::Error).unwrap(),
            warped_jaccard(&pred, &label, EmptyPolicy::Error).unwrap(),
        );
        assert!(wj >= pj, "{wj} < {pj}");
        assert_eq!(w, warp(&pred, &label).unwrap());
    }
}

#[test]
fn fixtures() {
    let shape = Shape::new(8, 5, 3);
    let label = line(shape, 2);
    let pred = line(shape, 3);
    let w = warp(&pred, &label).unwrap();
    assert_eq!(w.warped, label);
    assert_eq!(w.residual_disagreement, 0);
    assert_eq!(warped_jaccard(&pred, &label, EmptyPolicy::Error).unwrap(), 1.0);
    assert!(plain_jaccard(&pred, &label, EmptyPolicy::Error).unwrap() < 1.0);

    let mut a = LabelVolume::new(Shape::new(14, 3, 3));
    let mut b = a.clone();
    a.set([1, 1, 1], true);
    b.set([11, 1, 1], true);
    let w = warp(&a, &b).unwrap();
    assert_eq!((w.flips_applied, w.residual_disagreement), (0, 2));
    assert_eq!(warped_jaccard(&a, &b, EmptyPolicy::Error).unwrap(), 0.0);

    let mut spurious = label.clone();
    spurious.set([7, 0, 0], true);
    assert_eq!(topo_error_count(&spurious, &label).unwrap(), 1);
    let mut gap = label.clone();
    gap.set([3, 2, 1], false);
    assert_eq!(topo_error_count(&gap, &label).unwrap(), 1);
    assert_eq!(topo_error_count(&label, &label).unwrap(), 0);

    let empty = LabelVolume::new(shape);
    assert!(warped_jaccard(&empty, &empty, EmptyPolicy::Error).is_err());
    assert_eq!(warped_jaccard(&empty, &empty, EmptyPolicy::One).unwrap(), 1.0);
    assert!(warp(&empty, &LabelVolume::new(Shape::cube(2))).is_err());
}

#[test]
fn pair_report_and_summary() {
    let shape = Shape::new(8, 5, 3);
    let rep = evaluate_pair(&line(shape, 3), &line(shape, 2), EmptyPolicy::Error).unwrap();
    assert_eq!(rep.warped_jaccard, 1.0);
    assert_eq!(rep.topo_errors, 0);
    assert_eq!(rep.prediction, rep.warped);
    let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(s.mean, 2.5);
    assert!((s.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
}
