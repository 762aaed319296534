mod common;

use common::{check_coarsening, check_octree, oracle_layer_sets, random_cloud, sorted_locations, tree_layer_sets};
use octsphere::{Error, Octree, Point3, PointCloud};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn octant_cloud() -> PointCloud {
    let mut pts = Vec::new();
    for &x in &[-0.5, 0.5] {
        for &y in &[-0.5, 0.5] {
            for &z in &[-0.5, 0.5] {
                pts.push(Point3::new(x, y, z));
            }
        }
    }
    PointCloud::new(pts)
}

#[test]
fn eight_octants_depth_one() {
    let tree = Octree::build(&octant_cloud(), 1).unwrap();
    assert_eq!(tree.layer_sizes(), vec![8, 8]);
    assert_eq!(tree.root().children.len(), 8);
    for &c in &tree.root().children {
        assert_eq!(tree.node(c).point_indices.len(), 1);
    }
}

#[test]
fn single_point_is_a_replicated_chain() {
    let cloud = PointCloud::new(vec![Point3::new(0.3, -0.2, 0.9)]);
    let tree = Octree::build(&cloud, 3).unwrap();
    assert_eq!(tree.layer_sizes(), vec![1, 1, 1, 1]);
    for l in 1..=3 {
        let hoods = tree.neighborhoods(l).unwrap();
        assert_eq!(hoods.len(), 1);
        assert_eq!(hoods[0].members.len(), 1);
        assert_eq!(hoods[0].members[0].1 - hoods[0].location, Point3::ZERO);
    }
}

#[test]
fn uniform_points_match_octant_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts = (0..100)
        .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let cloud = PointCloud::new(pts);
    let tree = Octree::build(&cloud, 3).unwrap();
    check_octree(&cloud, &tree).unwrap();
    // Every point sits in exactly one depth-3 leaf.
    let mut owners = vec![0; 100];
    for n in tree.nodes() {
        for &i in &n.point_indices {
            owners[i] += 1;
        }
    }
    assert!(owners.iter().all(|&o| o == 1));
}

#[test]
fn leaf_neighborhood_holds_its_points() {
    let cloud = PointCloud::new(vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(0.01, 0.0, 0.0),
        Point3::new(0.0, 0.01, 0.0),
        Point3::new(1.0, 1.0, 1.0),
    ]);
    let tree = Octree::build(&cloud, 2).unwrap();
    let mut sizes: Vec<usize> = tree.neighborhoods(1).unwrap().iter().map(|h| h.members.len()).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![1, 3]);
}

#[test]
fn radius_examples() {
    let tree = Octree::build(&octant_cloud(), 3).unwrap();
    let (lo, hi) = tree.bounds();
    assert_eq!((lo, hi), (Point3::new(-0.5, -0.5, -0.5), Point3::new(0.5, 0.5, 0.5)));
    let tree = Octree::build_in_cube(&octant_cloud(), 3, Point3::ZERO, 1.0).unwrap();
    let s3 = 3f64.sqrt();
    assert!((tree.layer_radius(3).unwrap() - s3).abs() < 1e-12);
    assert!((tree.layer_radius(1).unwrap() - s3 / 4.0).abs() < 1e-12);
    assert_eq!(tree.layer_radius(3).unwrap() / tree.layer_radius(2).unwrap(), 2.0);
    assert!(matches!(tree.layer_radius(0), Err(Error::LayerOutOfRange { .. })));
    assert!(matches!(tree.layer_radius(4), Err(Error::LayerOutOfRange { .. })));
    assert!(matches!(tree.neighborhoods(4), Err(Error::LayerOutOfRange { .. })));
}

#[test]
fn bad_inputs() {
    assert!(matches!(Octree::build(&PointCloud::default(), 3), Err(Error::EmptyInput)));
    assert!(matches!(Octree::build(&octant_cloud(), 0), Err(Error::InvalidDepth(0))));
    let nan = PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 0.0), Point3::ZERO]);
    assert!(Octree::build(&nan, 2).is_err());
}

#[test]
fn ancestors_follow_neighborhoods() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cloud = random_cloud(&mut rng, 700);
    let tree = Octree::build(&cloud, 4).unwrap();
    let table = tree.ancestor_table();
    for l in 1..=4 {
        for (i, &a) in table[l].iter().enumerate() {
            assert!(tree.layer(l).children_of(a).contains(&table[l - 1][i]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn structure_matches_oracle(seed in any::<u64>(), n in 1usize..600, depth in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, n);
        let tree = Octree::build(&cloud, depth).unwrap();
        prop_assert_eq!(check_octree(&cloud, &tree), Ok(()));
    }

    #[test]
    fn permutation_invariant(seed in any::<u64>(), n in 1usize..600, depth in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let shuffled = cloud.select(&perm);
        let a = Octree::build(&cloud, depth).unwrap();
        let b = Octree::build(&shuffled, depth).unwrap();
        prop_assert_eq!(sorted_locations(&a), sorted_locations(&b));
        let relabel = |sets: Vec<Vec<Vec<usize>>>| -> Vec<Vec<Vec<usize>>> {
            sets.into_iter()
                .map(|layer| {
                    let mut v: Vec<Vec<usize>> = layer
                        .into_iter()
                        .map(|s| {
                            let mut t: Vec<usize> = s.into_iter().map(|i| perm[i]).collect();
                            t.sort_unstable();
                            t
                        })
                        .collect();
                    v.sort();
                    v
                })
                .collect()
        };
        prop_assert_eq!(relabel(tree_layer_sets(&b)), tree_layer_sets(&a));
    }

    #[test]
    fn duplicating_points_keeps_locations(seed in any::<u64>(), n in 1usize..300, depth in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, n);
        let mut doubled = cloud.points.clone();
        doubled.extend_from_slice(&cloud.points);
        let a = Octree::build(&cloud, depth).unwrap();
        let b = Octree::build(&PointCloud::new(doubled), depth).unwrap();
        prop_assert_eq!(a.layer_sizes()[1..].to_vec(), b.layer_sizes()[1..].to_vec());
        for l in 1..=depth {
            for (p, q) in a.layer(l).locations.iter().zip(&b.layer(l).locations) {
                prop_assert!((*p - *q).norm() <= 1e-12 * (1.0 + p.norm()));
            }
        }
    }

    #[test]
    fn coarsens(seed in any::<u64>(), n in 1usize..2000, depth in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = random_cloud(&mut rng, n);
        let tree = Octree::build(&cloud, depth).unwrap();
        prop_assert_eq!(check_coarsening(&tree), Ok(()));
        prop_assert_eq!(tree.layer(depth).len(), tree.root().children.len());
        prop_assert_eq!(oracle_layer_sets(&cloud, depth)[depth].len(), tree.layer(depth).len());
    }
}
