//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use octsphere::layers::{ConvPlan, Matrix, SphericalConv};
use octsphere::{KernelGeometry, Octree, Point3, PointCloud};
use rand::Rng;
use rand_distr::{Distribution, Normal, UnitSphere};

pub fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> Point3 {
    let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
    Point3::new(x, y, z)
}

/// Nonzero offsets at radii spread over `[0, 1.3 rho]`, including a few far
/// outside the sphere.
pub fn random_offset<R: Rng + ?Sized>(rng: &mut R, rho: f64) -> Point3 {
    let r = match rng.random_range(0..10) {
        0 => rng.random_range(2.0..10.0) * rho,
        1 => rng.random_range(1e-6..1e-3) * rho,
        _ => rng.random_range(1e-3..1.3) * rho,
    };
    random_direction(rng) * r
}

/// Random edges over `[lo, hi]` with `0` always an edge and at least one
/// extra edge on each side when `min_side > 0`.
fn edges_through_zero<R: Rng + ?Sized>(rng: &mut R, half: f64, min_side: usize, max_side: usize) -> Vec<f64> {
    let mut side = |sign: f64| {
        let k = rng.random_range(min_side..=max_side);
        let mut v: Vec<f64> = (0..k).map(|_| sign * rng.random_range(0.05..0.95) * half).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let neg = side(-1.0);
    let pos = side(1.0);
    let mut e = vec![-half];
    e.extend(neg);
    e.push(0.0);
    e.extend(pos);
    e.push(half);
    e.sort_by(f64::total_cmp);
    e
}

/// A random geometry satisfying the asymmetry conditions: zero is an edge of
/// both angular partitions and there are more than two azimuth bins.
pub fn random_legal_geometry<R: Rng + ?Sized>(rng: &mut R) -> KernelGeometry {
    let theta = edges_through_zero(rng, PI, 1, 5);
    let phi = edges_through_zero(rng, FRAC_PI_2, 0, 3);
    let rho = rng.random_range(0.1..3.0);
    let q = rng.random_range(1..=4);
    let mut r: Vec<f64> = (0..q - 1).map(|_| rng.random_range(0.05..0.95) * rho).collect();
    r.push(1e-9 * rho);
    r.push(rho);
    r.sort_by(f64::total_cmp);
    r.dedup();
    let g = KernelGeometry::from_edges(theta, phi, r).expect("structurally valid");
    assert!(g.validate_asymmetry().is_ok(), "{}", g.validate_asymmetry());
    g
}

/// Bin of `delta` found by testing it against every bin's intervals.
/// Angular intervals are `[lo, hi)` with the last closed; radial shells are
/// `(lo, hi]` with the first closed at the self threshold and overflow going to
/// the outermost shell. Panics unless exactly one bin claims the offset.
pub fn bin_oracle(g: &KernelGeometry, d: Point3) -> usize {
    let r = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
    let eps = g.r_edges()[0];
    if r < eps {
        return 0;
    }
    let theta = d.y.atan2(d.x);
    let phi = d.z.atan2(d.x.hypot(d.y));
    let (te, pe, re) = (g.theta_edges(), g.phi_edges(), g.r_edges());
    let (n, p, q) = (g.n(), g.p(), g.q());
    let angular = |edges: &[f64], k: usize, count: usize, v: f64| {
        let (lo, hi) = (edges[k - 1], edges[k]);
        (lo <= v && v < hi) || (k == count && v == hi)
    };
    let radial = |k: usize| {
        let (lo, hi) = (re[k - 1], re[k]);
        (lo < r && r <= hi) || (k == 1 && r == lo) || (k == q && r > hi)
    };
    let mut hits = Vec::new();
    for kr in 1..=q {
        for kp in 1..=p {
            for kt in 1..=n {
                if angular(te, kt, n, theta) && angular(pe, kp, p, phi) && radial(kr) {
                    hits.push(kt + (kp - 1) * n + (kr - 1) * n * p);
                }
            }
        }
    }
    assert_eq!(hits.len(), 1, "offset {d:?} claimed by bins {hits:?}");
    hits[0]
}

/// Clouds of assorted shapes: uniform boxes, tight clusters, planes, lines and
/// clouds with many duplicate points.
pub fn random_cloud<R: Rng + ?Sized>(rng: &mut R, n: usize) -> PointCloud {
    let kind = rng.random_range(0..5);
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    let shift = Point3::new(
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
    );
    let normal = Normal::new(0.0, 1.0).unwrap();
    let pts: Vec<Point3> = match kind {
        0 => (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect(),
        1 => {
            let centers: Vec<Point3> = (0..rng.random_range(1..6))
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            (0..n)
                .map(|_| {
                    let c = centers[rng.random_range(0..centers.len())];
                    c + Point3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)) * 0.02
                })
                .collect()
        }
        2 => (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), 0.25))
            .collect(),
        3 => (0..n)
            .map(|_| {
                let t: f64 = rng.random();
                Point3::new(t, 2.0 * t, -t)
            })
            .collect(),
        _ => {
            let base: Vec<Point3> = (0..n.div_ceil(4).max(1))
                .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            (0..n).map(|_| base[rng.random_range(0..base.len())]).collect()
        }
    };
    PointCloud::new(pts.into_iter().map(|p| p * scale + shift).collect())
}

/// The same root cube `Octree::build` uses.
pub fn root_cube(cloud: &PointCloud) -> (Point3, f64) {
    let (lo, hi) = cloud.bounds().unwrap();
    let e = hi - lo;
    let half = 0.5 * e.x.max(e.y).max(e.z);
    ((lo + hi) * 0.5, if half > 0.0 { half } else { 1.0 })
}

/// Octant path of a point from the root down to depth `depth`.
pub fn octant_path(p: Point3, center: Point3, half: f64, depth: usize) -> Vec<u8> {
    let mut c = center;
    let mut h = half;
    let mut path = Vec::with_capacity(depth);
    for _ in 0..depth {
        let hx = p.x >= c.x;
        let hy = p.y >= c.y;
        let hz = p.z >= c.z;
        path.push(hx as u8 | (hy as u8) << 1 | (hz as u8) << 2);
        h *= 0.5;
        c = Point3::new(
            c.x + if hx { h } else { -h },
            c.y + if hy { h } else { -h },
            c.z + if hz { h } else { -h },
        );
    }
    path
}

/// Sorted point sets per layer computed from octant paths alone: points share a
/// layer-`l` neuron iff their paths agree down to depth `L - l + 1`.
pub fn oracle_layer_sets(cloud: &PointCloud, depth: usize) -> Vec<Vec<Vec<usize>>> {
    let (c, h) = root_cube(cloud);
    let paths: Vec<Vec<u8>> = cloud.points.iter().map(|&p| octant_path(p, c, h, depth)).collect();
    let mut out = vec![Vec::new()];
    for l in 1..=depth {
        let d = depth - l + 1;
        let mut groups: BTreeMap<&[u8], Vec<usize>> = BTreeMap::new();
        for (i, path) in paths.iter().enumerate() {
            groups.entry(&path[..d]).or_default().push(i);
        }
        let mut sets: Vec<Vec<usize>> = groups.into_values().collect();
        sets.sort();
        out.push(sets);
    }
    out
}

/// Raw points under each neuron of each layer, read off the tree's neighborhoods.
pub fn tree_layer_sets(tree: &Octree) -> Vec<Vec<Vec<usize>>> {
    let mut below: Vec<Vec<usize>> = (0..tree.layer(0).len()).map(|i| vec![i]).collect();
    let mut out = vec![Vec::new()];
    for l in 1..=tree.depth() {
        let layer = tree.layer(l);
        let sets: Vec<Vec<usize>> = (0..layer.len())
            .map(|i| {
                let mut s: Vec<usize> = layer.children_of(i).iter().flat_map(|&c| below[c].clone()).collect();
                s.sort_unstable();
                s
            })
            .collect();
        let mut sorted = sets.clone();
        sorted.sort();
        out.push(sorted);
        below = sets;
    }
    out
}

/// Checks conservation, the partition of every layer, octant-path agreement,
/// the mean-location invariant and coarsening. Returns the first failure.
pub fn check_octree(cloud: &PointCloud, tree: &Octree) -> Result<(), String> {
    let m = cloud.len();
    let depth = tree.depth();
    let leaf_points: usize = tree.nodes().iter().map(|n| n.point_indices.len()).sum();
    if leaf_points != m {
        return Err(format!("conservation: {leaf_points} leaf points, {m} raw"));
    }
    for l in 1..=depth {
        let hoods = tree.neighborhoods(l).map_err(|e| e.to_string())?;
        let mut seen = vec![0u32; tree.layer(l - 1).len()];
        for h in &hoods {
            for &(j, _) in &h.members {
                seen[j] += 1;
            }
            let mut mean = Point3::ZERO;
            for &(_, x) in &h.members {
                mean += x;
            }
            let mean = mean / h.members.len() as f64;
            let tol = 1e-9 * (1.0 + h.location.norm());
            if (mean - h.location).norm() > tol {
                return Err(format!("layer {l} neuron {}: location off the child mean", h.target));
            }
        }
        if seen.iter().any(|&s| s != 1) {
            return Err(format!("layer {l} neighborhoods do not partition layer {}", l - 1));
        }
    }
    if oracle_layer_sets(cloud, depth) != tree_layer_sets(tree) {
        return Err("layer point sets disagree with the octant-path oracle".into());
    }
    check_coarsening(tree)
}

pub fn check_coarsening(tree: &Octree) -> Result<(), String> {
    for l in 1..=tree.depth() {
        let (below, here) = (tree.layer(l - 1).len(), tree.layer(l).len());
        let multi = (0..here).any(|i| tree.layer(l).children_of(i).len() > 1);
        if below < here || (multi && below == here) {
            return Err(format!("layer {l}: |Q^{}| = {below}, |Q^{l}| = {here}", l - 1));
        }
    }
    Ok(())
}

/// Locations of each layer sorted by coordinates, for multiset comparison.
pub fn sorted_locations(tree: &Octree) -> Vec<Vec<[u64; 3]>> {
    (0..=tree.depth())
        .map(|l| {
            let mut v: Vec<[u64; 3]> = tree
                .layer(l)
                .locations
                .iter()
                .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
                .collect();
            v.sort_unstable();
            v
        })
        .collect()
}

/// Direct evaluation of `z_i = (1/|N(i)|) sum_j W[kappa(x_j - x_i)] a_j + b`
/// over the tree's neighborhoods, with bins from the interval oracle.
pub fn naive_conv(
    tree: &Octree,
    l: usize,
    geom: &KernelGeometry,
    conv: &SphericalConv<f64>,
    input: &Matrix<f64>,
) -> Matrix<f64> {
    let (ic, oc) = (conv.in_channels(), conv.out_channels());
    let hoods = tree.neighborhoods(l).unwrap();
    let mut out = Matrix::zeros(hoods.len(), oc);
    for h in &hoods {
        for o in 0..oc {
            let mut s = 0.0;
            for &(j, x) in &h.members {
                let kappa = bin_oracle(geom, x - h.location);
                let w = conv.bin_weight(kappa);
                for c in 0..ic {
                    s += w[o * ic + c] * input.get(j, c);
                }
            }
            out.set(h.target, o, s / h.members.len() as f64 + conv.bias[o]);
        }
    }
    out
}

pub fn plan(tree: &Octree, l: usize, geom: &KernelGeometry) -> ConvPlan {
    ConvPlan::from_tree(tree, l, geom).unwrap()
}

pub fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "index {i}: {x} vs {y}");
    }
}
