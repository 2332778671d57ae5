mod common;

use common::{oracle_counts, rng, to_oracle};
use neurotopo::inflate::{certify, inflate, inflate_skeleton, rasterize_skeleton, InflationSpec};
use neurotopo::swc::parse_swc;
use neurotopo::synth::{synth_neuron, SynthSpec};
use neurotopo::{LabelVolume, Shape, VoxelSize};
use rand::Rng;

fn iso(shape: Shape) -> LabelVolume {
    LabelVolume::new(shape).with_voxel_size(VoxelSize::ISOTROPIC)
}

/// Minimum physical squared distance from `p` to the foreground, by brute force.
fn brute_d2(v: &LabelVolume, p: [usize; 3]) -> f64 {
    let h = v.voxel_size().0;
    v.foreground()
        .map(|q| (0..3).map(|a| ((p[a] as f64 - q[a] as f64) * h[a]).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn random_sparse(r: &mut impl Rng, shape: Shape, vs: VoxelSize) -> LabelVolume {
    let mut v = LabelVolume::new(shape).with_voxel_size(vs);
    for _ in 0..r.random_range(1..6) {
        let mut p = [0, 1, 2].map(|a| r.random_range(0..shape.0[a]));
        for _ in 0..r.random_range(1..8) {
            v.set(p, true);
            let a = r.random_range(0..3);
            if p[a] + 1 < shape.0[a] {
                p[a] += 1;
            }
        }
    }
    v
}

#[test]
fn additions_replay_as_simple_and_stay_within_radius() {
    let mut r = rng(51);
    for i in 0..40 {
        let shape = Shape::new(r.random_range(6..14), r.random_range(6..14), r.random_range(4..9));
        let vs = if i % 2 == 0 { VoxelSize::ISOTROPIC } else { VoxelSize([0.5, 0.5, 1.25]) };
        let input = random_sparse(&mut r, shape, vs);
        let radius = r.random_range(0.5..3.0);
        let inf = inflate(&input, radius).unwrap();
        let mut cur = to_oracle(&input);
        for &p in &inf.additions {
            assert!(!input.get(p));
            assert!(cur.is_simple_at(p), "addition {p:?} not simple");
            assert!(brute_d2(&input, p) <= radius * radius + 1e-9);
            let i = p[0] + shape.nx() * (p[1] + shape.ny() * p[2]);
            cur.data[i] = true;
        }
        assert_eq!(cur.data.as_slice(), inf.label.as_slice());
        assert_eq!(oracle_counts(&inf.label), oracle_counts(&input));
        assert!(certify(&input, &inf).passed());
        assert_eq!(inf, inflate(&input, radius).unwrap());
    }
}

#[test]
fn inflation_is_monotone_in_radius() {
    let mut r = rng(52);
    for _ in 0..20 {
        let shape = Shape::new(12, 12, 8);
        let input = random_sparse(&mut r, shape, VoxelSize::ISOTROPIC);
        let mut prev = input.clone();
        for radius in [0.0, 0.8, 1.0, 1.5, 2.0, 2.6, 3.5] {
            let cur = inflate(&input, radius).unwrap().label;
            assert!(prev.as_slice().iter().zip(cur.as_slice()).all(|(&a, &b)| !a || b), "radius {radius}");
            prev = cur;
        }
    }
}

#[test]
fn inflation_examples() {
    let mut single = iso(Shape::cube(5));
    single.set([2, 2, 2], true);
    assert_eq!(inflate(&single, 0.0).unwrap().label, single);
    let one = inflate(&single, 1.0).unwrap().label;
    assert_eq!(one.count(), 7);
    assert_eq!(oracle_counts(&one), (1, 1));

    let lines = LabelVolume::from_fn(Shape::new(10, 9, 5), |p| p[2] == 2 && (p[1] == 3 || p[1] == 6) && (1..9).contains(&p[0]))
        .with_voxel_size(VoxelSize::ISOTROPIC);
    let inf = inflate(&lines, 2.0).unwrap();
    assert_eq!(oracle_counts(&inf.label), (2, 1));
    assert!(inf.label.count() > lines.count());
}

#[test]
fn rasterized_skeletons_match_tree_counts() {
    let s = parse_swc("1 1 1 1 1 1 -1\n2 3 5 4 2 1 1\n3 3 2 7 3 1 2\n4 3 8 7 1 1 2\n9 3 8 1 8 1 -1\n").unwrap();
    let label = rasterize_skeleton(&s, Shape::cube(10), VoxelSize::ISOTROPIC).unwrap();
    assert_eq!(oracle_counts(&label).0, s.tree_count());
    let spec = InflationSpec::uniform(1.5, Shape::cube(10), VoxelSize::ISOTROPIC);
    let inf = inflate_skeleton(&s, &spec).unwrap();
    assert_eq!(oracle_counts(&inf.label), oracle_counts(&label));
    assert!(rasterize_skeleton(&s, Shape::cube(6), VoxelSize::ISOTROPIC).is_err());
}

#[test]
fn synthetic_neurons_inflate_cleanly() {
    for seed in 0..4 {
        let spec = SynthSpec {
            seed,
            shape: Shape::new(40, 40, 20),
            ..SynthSpec::default()
        };
        let n = synth_neuron(&spec).unwrap();
        assert_eq!(oracle_counts(&n.label), (spec.trees, 1));
        let spec2 = InflationSpec {
            radius: neurotopo::inflate::Radius::PerNode { scale: 1.0 },
            shape: spec.shape,
            voxel_size: spec.voxel_size,
        };
        let inf = inflate_skeleton(&n.skeleton, &spec2).unwrap();
        assert_eq!(inf.label, n.label);
        assert!(n.raw.as_slice().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
