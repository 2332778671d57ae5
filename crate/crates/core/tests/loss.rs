mod common;

use common::{random_label, random_shape, rng, to_oracle};
use neurotopo::loss::{binarize, weight_map, weight_map_for, weighted_bce, weighted_bce_grad, LossConfig};
use neurotopo::pipeline::weightmap_volume;
use neurotopo::pool::WorkerPool;
use neurotopo::topology::nonsimple_mask;
use neurotopo::{Grid, LabelVolume, PredictionVolume, Shape};
use rand::Rng;

const EPS: f64 = 1e-6;

fn ones(shape: Shape) -> Grid<f64> {
    Grid::filled(shape, 1.0)
}

#[test]
fn worked_examples() {
    let one = Shape::new(1, 1, 1);
    let pred = Grid::<f64>::filled(one, 0.5);
    let y = LabelVolume::filled(one, true);
    assert!((weighted_bce(&pred, &y, &ones(one), EPS).unwrap() - 2f64.ln()).abs() < 1e-12);
    assert!((weighted_bce_grad(&pred, &y, &ones(one), EPS).unwrap().get([0, 0, 0]) + 2.0).abs() < 1e-12);
    let y0 = LabelVolume::new(one);
    assert!((weighted_bce_grad(&pred, &y0, &ones(one), EPS).unwrap().get([0, 0, 0]) - 2.0).abs() < 1e-12);

    let two = Shape::new(2, 1, 1);
    let pred = Grid::from_vec(two, vec![0.9, 0.1]).unwrap();
    let y = LabelVolume::from_vec(two, vec![true, false]).unwrap();
    let w = Grid::from_vec(two, vec![5.0, 1.0]).unwrap();
    let expected = (5.0 * -(0.9f64.ln()) - 0.9f64.ln()) / 2.0;
    assert!((weighted_bce(&pred, &y, &w, EPS).unwrap() - expected).abs() < 1e-6);
    assert!((expected - 0.3160815).abs() < 1e-6);

    // Perfect predictions after clamping: -ln(1 - eps) per voxel.
    let s = Shape::new(3, 2, 1);
    let y = LabelVolume::from_fn(s, |p| (p[0] + p[1]) % 2 == 0);
    let pred = Grid::from_fn(s, |p| if y.get(p) { 1.0 } else { 0.0 });
    let v = weighted_bce(&pred, &y, &ones(s), EPS).unwrap();
    assert!((v - -(1.0 - EPS).ln()).abs() < 1e-12);
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(21);
    let shape = Shape::cube(8);
    let h = 1e-4;
    for _ in 0..20 {
        let mut pred = Grid::<f64>::from_fn(shape, |_| r.random_range(0.05..0.95));
        let y = random_label(&mut r, shape, 0.5);
        let w = Grid::<f64>::from_fn(shape, |_| if r.random::<f64>() < 0.2 { 5.0 } else { 1.0 });
        let g = weighted_bce_grad(&pred, &y, &w, EPS).unwrap();
        let mut worst: f64 = 0.0;
        for p in shape.coords() {
            let v = pred.get(p);
            pred.set(p, v + h);
            let plus = weighted_bce(&pred, &y, &w, EPS).unwrap();
            pred.set(p, v - h);
            let minus = weighted_bce(&pred, &y, &w, EPS).unwrap();
            pred.set(p, v);
            let fd = (plus - minus) / (2.0 * h);
            let a = g.get(p);
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()));
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }
}

#[test]
fn loss_properties() {
    let mut r = rng(22);
    for _ in 0..50 {
        let shape = random_shape(&mut r, 1, 6);
        let pred = Grid::<f64>::from_fn(shape, |_| r.random());
        let y = random_label(&mut r, shape, 0.5);
        let plain = weighted_bce(&pred, &y, &ones(shape), EPS).unwrap();
        assert!(plain >= 0.0 && plain.is_finite());

        // Raising the weight of a wrongly predicted voxel never lowers the loss.
        let bin = binarize(&pred, 0.5);
        let mut w = ones(shape);
        let before = weighted_bce(&pred, &y, &w, EPS).unwrap();
        let wrong = shape.coords().find(|&p| bin.get(p) != y.get(p));
        if let Some(p) = wrong {
            w.set(p, 7.0);
            assert!(weighted_bce(&pred, &y, &w, EPS).unwrap() >= before);
        }
    }
    let s = Shape::new(2, 2, 2);
    let bad = Grid::<f64>::new(s);
    assert!(weighted_bce(&bad, &LabelVolume::new(Shape::new(2, 2, 1)), &ones(s), EPS).is_err());
}

#[test]
fn weight_map_flags_exactly_the_nonsimple_mask() {
    let mut r = rng(23);
    for _ in 0..30 {
        let shape = random_shape(&mut r, 2, 10);
        let bin = random_label(&mut r, shape, 0.35);
        let w = weight_map(&bin, 5.0);
        let mask = nonsimple_mask(&bin);
        let o = to_oracle(&bin);
        for p in shape.coords() {
            let v = w.get(p);
            assert!(v == 1.0 || v == 5.0);
            assert_eq!(v == 5.0, mask.get(p));
            if bin.get(p) {
                assert_eq!(mask.get(p), !o.is_simple_at(p));
            }
        }
    }
    assert!(weight_map(&LabelVolume::new(Shape::cube(5)), 5.0).as_slice().iter().all(|&v| v == 1.0));
}

#[test]
fn intersect_disagreement_restricts_the_weighted_set() {
    let mut r = rng(24);
    let shape = Shape::cube(9);
    let pred = PredictionVolume::from_fn(shape, |_| r.random());
    let label = random_label(&mut r, shape, 0.4);
    let mut cfg = LossConfig::default();
    let plain = weight_map_for(&pred, None, &cfg).unwrap();
    cfg.intersect_disagreement = true;
    let restricted = weight_map_for(&pred, Some(&label), &cfg).unwrap();
    let bin = binarize(&pred, cfg.threshold);
    for p in shape.coords() {
        let expect = plain.get(p) > 1.0 && bin.get(p) != label.get(p);
        assert_eq!(restricted.get(p) > 1.0, expect);
    }
    assert!(weight_map_for(&pred, None, &cfg).is_err());
}

#[test]
fn chunkwise_weight_map_equals_whole_volume() {
    let mut r = rng(25);
    let cfg = LossConfig::default();
    for _ in 0..12 {
        let shape = random_shape(&mut r, 5, 24);
        let bin = random_label(&mut r, shape, 0.4);
        let whole = weight_map(&bin, cfg.weight);
        let chunk = random_shape(&mut r, 1, 9);
        for workers in [1, 3] {
            let pool = WorkerPool::new(workers).unwrap();
            for halo in [1, 2] {
                let chunked = weightmap_volume(&bin, None, chunk, halo, &cfg, &pool).unwrap();
                assert_eq!(chunked.as_slice(), whole.as_slice(), "chunk {chunk} halo {halo} workers {workers}");
            }
        }
    }
    let pool = WorkerPool::new(1).unwrap();
    let bin = LabelVolume::new(Shape::cube(4));
    assert!(weightmap_volume(&bin, None, Shape::cube(2), 0, &cfg, &pool).is_err());
}
