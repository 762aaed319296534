//! Neighborhood construction strategies and their scaling benchmark.
//!
//! Each strategy implements [`NeighborhoodMethod`] and is registered by name in
//! a [`Registry`]. Octree neighborhoods are the children of each layer-1 node;
//! the brute-force baselines query every input point against every other one,
//! by radius (the layer-1 kernel radius) or by `K` nearest neighbors.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::octree::Octree;

/// Compressed neighbor lists: `members[offsets[i]..offsets[i + 1]]` are the
/// point indices gathered for query `i`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NeighborhoodSet {
    pub offsets: Vec<usize>,
    pub members: Vec<usize>,
}

impl NeighborhoodSet {
    fn from_lists(lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut members = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        for l in lists {
            members.extend(l);
            offsets.push(members.len());
        }
        NeighborhoodSet { offsets, members }
    }

    pub fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.members[self.offsets[i]..self.offsets[i + 1]]
    }
}

pub trait NeighborhoodMethod: Send + Sync {
    fn name(&self) -> &str;
    fn build(&self, cloud: &PointCloud, depth: usize) -> Result<NeighborhoodSet>;
}

/// Octree construction plus the layer-1 child lists.
#[derive(Debug, Clone, Copy, Default)]
pub struct OctreeNeighbors;

impl NeighborhoodMethod for OctreeNeighbors {
    fn name(&self) -> &str {
        "octree"
    }

    fn build(&self, cloud: &PointCloud, depth: usize) -> Result<NeighborhoodSet> {
        let tree = Octree::build(cloud, depth)?;
        let hoods = tree.neighborhoods(1)?;
        Ok(NeighborhoodSet::from_lists(
            hoods
                .into_iter()
                .map(|h| h.members.into_iter().map(|(i, _)| i).collect())
                .collect(),
        ))
    }
}

/// `2^-L` times the bounding-box diagonal: the layer-1 kernel radius.
pub fn layer1_radius(cloud: &PointCloud, depth: usize) -> Result<f64> {
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyInput)?;
    Ok((hi - lo).norm() * 0.5f64.powi(depth as i32))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BruteForceRange;

impl NeighborhoodMethod for BruteForceRange {
    fn name(&self) -> &str {
        "brute-force-range"
    }

    fn build(&self, cloud: &PointCloud, depth: usize) -> Result<NeighborhoodSet> {
        cloud.validate()?;
        let r2 = layer1_radius(cloud, depth)?.powi(2);
        let pts = &cloud.points;
        let lists = pts
            .par_iter()
            .map(|&q| {
                pts.iter()
                    .enumerate()
                    .filter(|(_, &p)| (p - q).norm_squared() <= r2)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        Ok(NeighborhoodSet::from_lists(lists))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BruteForceKnn {
    pub k: usize,
}

impl Default for BruteForceKnn {
    fn default() -> Self {
        BruteForceKnn { k: 32 }
    }
}

impl NeighborhoodMethod for BruteForceKnn {
    fn name(&self) -> &str {
        "brute-force-knn"
    }

    fn build(&self, cloud: &PointCloud, _depth: usize) -> Result<NeighborhoodSet> {
        cloud.validate()?;
        let pts = &cloud.points;
        let k = self.k.min(pts.len());
        let lists = pts
            .par_iter()
            .map_init(Vec::new, |buf: &mut Vec<(f64, usize)>, &q| {
                buf.clear();
                buf.extend(pts.iter().enumerate().map(|(i, &p)| ((p - q).norm_squared(), i)));
                let key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if k < buf.len() {
                    buf.select_nth_unstable_by(k, key);
                }
                let nearest = &mut buf[..k];
                nearest.sort_unstable_by(key);
                nearest.iter().map(|&(_, i)| i).collect()
            })
            .collect();
        Ok(NeighborhoodSet::from_lists(lists))
    }
}

/// Named strategies, selected at runtime.
pub struct Registry {
    methods: Vec<Box<dyn NeighborhoodMethod>>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Registry::empty();
        r.register(Box::new(OctreeNeighbors));
        r.register(Box::new(BruteForceRange));
        r.register(Box::new(BruteForceKnn::default()));
        r
    }
}

impl Registry {
    pub fn empty() -> Self {
        Registry { methods: Vec::new() }
    }

    /// Adds `method`, replacing any method with the same name.
    pub fn register(&mut self, method: Box<dyn NeighborhoodMethod>) {
        self.methods.retain(|m| m.name() != method.name());
        self.methods.push(method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn NeighborhoodMethod> {
        self.methods
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown neighborhood method '{name}' (known: {})",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&str> {
        self.methods.iter().map(|m| m.name()).collect()
    }
}

/// Uniform random points in the unit cube.
pub fn random_cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new(
        (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub n_points: usize,
    /// Best wall time over the repeats, in milliseconds.
    pub ms: f64,
    pub neighborhoods: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub methods: Vec<String>,
    pub depth: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![1_000, 10_000, 100_000],
            methods: vec!["octree".into(), "brute-force-range".into(), "brute-force-knn".into()],
            depth: 6,
            repeats: 1,
            seed: 0,
        }
    }
}

pub fn run_benchmark(registry: &Registry, config: &BenchConfig) -> Result<Vec<BenchRow>> {
    let methods = config
        .methods
        .iter()
        .map(|m| registry.get(m))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &n in &config.sizes {
        let cloud = random_cloud(n, config.seed ^ n as u64);
        for m in &methods {
            let mut best = f64::INFINITY;
            let mut count = 0;
            for _ in 0..config.repeats.max(1) {
                let start = Instant::now();
                let set = m.build(&cloud, config.depth)?;
                best = best.min(start.elapsed().as_secs_f64() * 1e3);
                count = set.len();
            }
            rows.push(BenchRow {
                method: m.name().to_string(),
                n_points: n,
                ms: best,
                neighborhoods: count,
            });
        }
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("method,n_points,ms\n");
    for r in rows {
        writeln!(s, "{},{},{:.4}", r.method, r.n_points, r.ms).unwrap();
    }
    s
}

/// Parses a `method,n_points,ms` CSV.
pub fn parse_bench_csv(text: &str) -> Result<Vec<BenchRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("method,n_points,ms") {
        return Err(Error::Config("benchmark CSV header must be method,n_points,ms".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Config(format!("bad benchmark row '{l}'"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(BenchRow {
                method: f[0].to_string(),
                n_points: f[1].parse().map_err(|_| bad())?,
                ms: f[2].parse().map_err(|_| bad())?,
                neighborhoods: 0,
            })
        })
        .collect()
}

/// Least-squares slope of `ln ms` against `ln n_points` for one method.
pub fn loglog_slope(rows: &[BenchRow], method: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.method == method && r.ms > 0.0)
        .map(|r| ((r.n_points as f64).ln(), r.ms.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
