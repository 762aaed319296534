mod common;

use common::{assert_close, naive_conv, plan, random_cloud};
use octsphere::layers::{ConvPlan, Matrix, Parameterized, SphericalConv};
use octsphere::network::{raw_features, BatchPlan, InputMode, Network, NetworkConfig, Task};
use octsphere::{Error, KernelGeometry, Octree, Point3, PointCloud};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_conv(rng: &mut ChaCha8Rng, bins: usize, ic: usize, oc: usize) -> SphericalConv<f64> {
    let mut conv = SphericalConv::new(bins, ic, oc, rng);
    for b in conv.bias.iter_mut() {
        *b = rng.random_range(-1.0..1.0);
    }
    conv
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn identity_conv(bins: usize, ch: usize) -> SphericalConv<f64> {
    let mut conv = SphericalConv::new(bins, ch, ch, &mut ChaCha8Rng::seed_from_u64(0));
    conv.weight.iter_mut().for_each(|w| *w = 0.0);
    for k in 0..bins {
        let w = conv.bin_weight_mut(k);
        for c in 0..ch {
            w[c * ch + c] = 1.0;
        }
    }
    conv
}

#[test]
fn identity_self_convolution() {
    let p = ConvPlan::new(1, 49, vec![0, 1], vec![0], vec![0]).unwrap();
    let conv = identity_conv(49, 3);
    let x = Matrix::from_rows(&[vec![0.5, -2.0, 7.0]]).unwrap();
    assert_eq!(conv.forward(&p, &x).unwrap().data(), x.data());
}

#[test]
fn same_bin_pair_averages() {
    let p = ConvPlan::new(2, 49, vec![0, 2], vec![0, 1], vec![5, 5]).unwrap();
    let conv = identity_conv(49, 2);
    let x = Matrix::from_rows(&[vec![1.0, 4.0], vec![3.0, -2.0]]).unwrap();
    assert_eq!(conv.forward(&p, &x).unwrap().data(), &[2.0, 1.0]);
}

#[test]
fn single_pair_gradients_are_outer_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = ConvPlan::new(1, 3, vec![0, 1], vec![0], vec![2]).unwrap();
    let mut conv = random_conv(&mut rng, 3, 2, 3);
    let a = Matrix::from_rows(&[vec![0.5, -1.5]]).unwrap();
    let g = Matrix::from_rows(&[vec![1.0, 2.0, -3.0]]).unwrap();
    let gin = conv.backward(&p, &a, &g).unwrap();
    let w = conv.bin_weight(2).to_vec();
    let sz = 6;
    for o in 0..3 {
        for c in 0..2 {
            assert_eq!(conv.grad_weight[2 * sz + o * 2 + c], g.get(0, o) * a.get(0, c));
        }
    }
    assert!(conv.grad_weight[..2 * sz].iter().all(|&v| v == 0.0));
    assert_eq!(conv.grad_bias, vec![1.0, 2.0, -3.0]);
    for c in 0..2 {
        let expect: f64 = (0..3).map(|o| w[o * 2 + c] * g.get(0, o)).sum();
        assert!((gin.get(0, c) - expect).abs() < 1e-15);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cloud = random_cloud(&mut rng, 60);
    let tree = Octree::build(&cloud, 3).unwrap();
    let geom = KernelGeometry::uniform(8, 2, 3, tree.layer_radius(2).unwrap()).unwrap();
    let p = plan(&tree, 2, &geom);
    let mut conv = random_conv(&mut rng, 49, 3, 4);
    let x = random_matrix(&mut rng, p.sources(), 3);
    let gin = conv.backward(&p, &x, &Matrix::zeros(p.targets(), 4)).unwrap();
    assert!(gin.data().iter().all(|&v| v == 0.0));
    assert!(conv.grad_weight.iter().chain(&conv.grad_bias).all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_naive_loop(seed in any::<u64>(), n in 1usize..40, depth in 1usize..=4, ic in 1usize..=4, oc in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, n);
        let tree = Octree::build(&cloud, depth).unwrap();
        for l in 1..=depth {
            let geom = KernelGeometry::uniform(8, 2, 3, tree.layer_radius(l).unwrap()).unwrap();
            let conv = random_conv(&mut rng, geom.bin_count(), ic, oc);
            let x = random_matrix(&mut rng, tree.layer(l - 1).len(), ic);
            let fast = conv.forward(&plan(&tree, l, &geom), &x).unwrap();
            let slow = naive_conv(&tree, l, &geom, &conv, &x);
            assert_close(fast.data(), slow.data(), 1e-12);
        }
    }

    #[test]
    fn conv_ignores_neighbor_order(seed in any::<u64>(), n in 2usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, n);
        let tree = Octree::build(&cloud, 2).unwrap();
        let geom = KernelGeometry::uniform(8, 2, 3, tree.layer_radius(1).unwrap()).unwrap();
        let p = plan(&tree, 1, &geom);
        let mut offsets = vec![0];
        let (mut members, mut bins) = (Vec::new(), Vec::new());
        for t in 0..p.targets() {
            let mut hood: Vec<(usize, usize)> = p.neighborhood(t).collect();
            hood.shuffle(&mut rng);
            for (j, k) in hood {
                members.push(j);
                bins.push(k);
            }
            offsets.push(members.len());
        }
        let shuffled = ConvPlan::new(p.sources(), p.bin_count(), offsets, members, bins).unwrap();
        let conv = random_conv(&mut rng, 49, 3, 5);
        let x = random_matrix(&mut rng, p.sources(), 3);
        let a = conv.forward(&p, &x).unwrap();
        let b = conv.forward(&shuffled, &x).unwrap();
        assert_close(a.data(), b.data(), 1e-12);
    }
}

fn small_config(task: Task) -> NetworkConfig {
    NetworkConfig {
        task,
        mlp_channels: 4,
        octree_channels: vec![5, 6, 7],
        head_channels: vec![8],
        classes: 3,
        ..NetworkConfig::default()
    }
}

fn net(task: Task, seed: u64) -> Network<f64> {
    Network::new(small_config(task), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn normalized_cloud(seed: u64, n: usize) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = random_cloud(&mut rng, n);
    octsphere::geometry::normalize_cloud(&c, false).unwrap().0
}

fn classify(net: &mut Network<f64>, cloud: &PointCloud) -> Vec<f64> {
    let tree = Octree::build(cloud, net.config().depth()).unwrap();
    net.forward_classify(&tree, &raw_features(cloud, InputMode::Xyz).unwrap()).unwrap()
}

fn segment(net: &mut Network<f64>, cloud: &PointCloud) -> Matrix<f64> {
    let tree = Octree::build(cloud, net.config().depth()).unwrap();
    net.forward_segment(&tree, &raw_features(cloud, InputMode::Xyz).unwrap()).unwrap()
}

#[test]
fn global_vector_widths() {
    let mut cfg = NetworkConfig {
        mlp_channels: 32,
        octree_channels: vec![64, 64, 64, 128, 128, 128],
        ..NetworkConfig::default()
    };
    assert_eq!(cfg.head_input_width(), 611);
    cfg.task = Task::Segmentation;
    cfg.octree_channels = vec![64, 128, 256];
    assert_eq!(cfg.head_input_width(), 483);

    let mut n = net(Task::Classification, 1);
    classify(&mut n, &normalized_cloud(1, 50));
    assert_eq!(n.last_forward().unwrap().head_input().cols(), 3 + 4 + 5 + 6 + 7);
}

#[test]
fn single_point_uses_only_the_self_bin() {
    let cloud = PointCloud::new(vec![Point3::new(0.2, 0.1, -0.4)]);
    let cfg = small_config(Task::Classification);
    let tree = Octree::build(&cloud, 3).unwrap();
    let bp = BatchPlan::new(&cfg, &[&tree]).unwrap();
    for l in 1..=3 {
        let usage = bp.conv(l).bin_usage();
        assert_eq!(usage[0], 1);
        assert!(usage[1..].iter().all(|&u| u == 0));
    }
    let logits = classify(&mut net(Task::Classification, 2), &cloud);
    assert_eq!(logits.len(), 3);
    assert!(logits.iter().all(|v| v.is_finite()));
}

#[test]
fn backward_needs_a_forward_pass() {
    let mut n = net(Task::Classification, 3);
    let cloud = normalized_cloud(3, 20);
    let tree = Octree::build(&cloud, 3).unwrap();
    let bp = BatchPlan::new(n.config(), &[&tree]).unwrap();
    assert!(matches!(n.backward(&bp, &Matrix::zeros(1, 3)), Err(Error::NoForwardCache)));
}

#[test]
fn zero_loss_gradient_gives_zero_parameter_gradients() {
    for task in [Task::Classification, Task::Segmentation] {
        let mut n = net(task, 4);
        let cloud = normalized_cloud(4, 40);
        let tree = Octree::build(&cloud, 3).unwrap();
        let bp = BatchPlan::new(n.config(), &[&tree]).unwrap();
        let raw = raw_features(&cloud, InputMode::Xyz).unwrap();
        let out = n.forward(&bp, &raw, true).unwrap();
        n.zero_grad();
        n.backward(&bp, &Matrix::zeros(out.rows(), out.cols())).unwrap();
        n.visit_params(&mut |name, _, g| assert!(g.iter().all(|&v| v == 0.0), "{name}"));
    }
}

/// Builds each point's per-point vector by searching the neighborhoods for its
/// parent at every layer.
#[test]
fn segmentation_features_follow_ancestor_paths() {
    let mut n = net(Task::Segmentation, 5);
    let cloud = normalized_cloud(5, 90);
    segment(&mut n, &cloud);
    let tree = Octree::build(&cloud, 3).unwrap();
    let view = n.last_forward().unwrap();
    let raw = raw_features::<f64>(&cloud, InputMode::Xyz).unwrap();
    for i in 0..cloud.len() {
        let mut expect: Vec<f64> = raw.row(i).to_vec();
        expect.extend_from_slice(view.layer_features(0).row(i));
        let mut below = i;
        for l in 1..=3 {
            let hoods = tree.neighborhoods(l).unwrap();
            let parent = hoods
                .iter()
                .find(|h| h.members.iter().any(|&(j, _)| j == below))
                .unwrap()
                .target;
            expect.extend_from_slice(view.layer_features(l).row(parent));
            below = parent;
        }
        assert_eq!(view.head_input().row(i), &expect[..], "point {i}");
    }
}

#[test]
fn points_sharing_a_leaf_share_ancestor_features() {
    let mut n = net(Task::Segmentation, 6);
    let mut pts: Vec<Point3> = normalized_cloud(6, 40).points;
    pts.push(pts[0] + Point3::new(1e-7, 0.0, 0.0));
    let cloud = PointCloud::new(pts);
    segment(&mut n, &cloud);
    let h = n.last_forward().unwrap().head_input();
    let (a, b) = (h.row(0), h.row(cloud.len() - 1));
    assert_eq!(a[3 + 4..], b[3 + 4..]);
    assert_ne!(a[..3], b[..3]);
}

#[test]
fn classification_ignores_order_and_duplication() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..5 {
        let cloud = normalized_cloud(100 + trial, 300);
        let mut n = net(Task::Classification, trial);
        let base = classify(&mut n, &cloud);
        let mut perm: Vec<usize> = (0..cloud.len()).collect();
        perm.shuffle(&mut rng);
        assert_eq!(classify(&mut n, &cloud.select(&perm)), base);
        let mut doubled = cloud.points.clone();
        doubled.extend_from_slice(&cloud.points);
        assert_close(&classify(&mut n, &PointCloud::new(doubled)), &base, 1e-12);
    }
}

#[test]
fn segmentation_permutes_with_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cloud = normalized_cloud(8, 250);
    let mut n = net(Task::Segmentation, 8);
    let base = segment(&mut n, &cloud);
    let mut perm: Vec<usize> = (0..cloud.len()).collect();
    perm.shuffle(&mut rng);
    let shuffled = segment(&mut n, &cloud.select(&perm));
    for (r, &i) in perm.iter().enumerate() {
        assert_eq!(shuffled.row(r), base.row(i));
    }
}

#[test]
fn translation_leaves_bins_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = small_config(Task::Classification);
    for _ in 0..10 {
        // Dyadic coordinates make every shifted difference exact.
        let grid = |rng: &mut ChaCha8Rng| rng.random_range(-256i32..256) as f64 / 256.0;
        let pts: Vec<Point3> = (0..200).map(|_| Point3::new(grid(&mut rng), grid(&mut rng), grid(&mut rng))).collect();
        let shift = Point3::new(grid(&mut rng) * 4.0, grid(&mut rng) * 4.0, grid(&mut rng) * 4.0);
        let a = PointCloud::new(pts.clone());
        let b = PointCloud::new(pts.iter().map(|&p| p + shift).collect());
        let ta = Octree::build(&a, 3).unwrap();
        let tb = Octree::build(&b, 3).unwrap();
        let pa = BatchPlan::new(&cfg, &[&ta]).unwrap();
        let pb = BatchPlan::new(&cfg, &[&tb]).unwrap();
        for l in 1..=3 {
            assert_eq!(pa.conv(l), pb.conv(l));
        }
    }
}

#[test]
fn translation_before_normalization_is_invisible() {
    let cloud = normalized_cloud(10, 200);
    let moved = cloud.map_points(|p| p + Point3::new(12.5, -3.25, 7.0));
    let back = octsphere::geometry::normalize_cloud(&moved, false).unwrap().0;
    let mut n = net(Task::Classification, 10);
    assert_close(&classify(&mut n, &back), &classify(&mut n, &cloud), 1e-9);
}
