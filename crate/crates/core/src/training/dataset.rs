use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{normalize_cloud, Point3, PointCloud};
use crate::network::Task;
use crate::training::io::{self, LabelRef, ManifestEntry, Split};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    /// Per-point part labels live in `cloud.labels` for segmentation.
    pub cloud: PointCloud,
    /// Shape class for classification.
    pub class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Loads the manifest entries belonging to `split`.
    pub fn load(entries: &[ManifestEntry], task: Task, split: Split) -> Result<Dataset> {
        let samples = entries
            .par_iter()
            .filter(|e| e.split == split)
            .map(|e| load_entry(e, task))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { task, samples })
    }

    /// Reads a manifest and returns its (train, test) datasets.
    pub fn from_manifest(path: &Path, task: Task) -> Result<(Dataset, Dataset)> {
        let entries = io::read_manifest(path)?;
        Ok((
            Dataset::load(&entries, task, Split::Train)?,
            Dataset::load(&entries, task, Split::Test)?,
        ))
    }

    /// Every cloud mapped into [-1, 1]^3.
    pub fn normalized(&self, preserve_z_mean: bool) -> Result<Dataset> {
        let samples = self
            .samples
            .par_iter()
            .map(|s| {
                let (cloud, _) = normalize_cloud(&s.cloud, preserve_z_mean)?;
                Ok(Sample {
                    cloud,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            task: self.task,
            samples,
        })
    }

    /// Largest label + 1.
    pub fn label_count(&self) -> usize {
        self.samples
            .iter()
            .map(|s| match self.task {
                Task::Classification => s.class.map_or(0, |c| c + 1),
                Task::Segmentation => s
                    .cloud
                    .labels
                    .as_ref()
                    .and_then(|l| l.iter().max())
                    .map_or(0, |m| m + 1),
            })
            .max()
            .unwrap_or(0)
    }

    /// Checks that every label is below `classes`.
    pub fn check_labels(&self, classes: usize) -> Result<()> {
        let found = self.label_count();
        if found > classes {
            return Err(Error::Config(format!(
                "dataset uses label {} but the network has {classes} classes",
                found - 1
            )));
        }
        Ok(())
    }
}

fn load_entry(e: &ManifestEntry, task: Task) -> Result<Sample> {
    let mut cloud = io::read_point_cloud(&e.cloud)?;
    let name = e.cloud.display().to_string();
    let class = match (task, &e.label) {
        (Task::Classification, LabelRef::Class(c)) => Some(*c),
        (Task::Classification, _) => {
            return Err(Error::Config(format!("{name}: classification needs an integer label")))
        }
        (Task::Segmentation, LabelRef::File(p)) => {
            let labels = io::read_labels(p)?;
            if labels.len() != cloud.len() {
                return Err(Error::shape("label file length", cloud.len(), labels.len()));
            }
            cloud.labels = Some(labels);
            None
        }
        (Task::Segmentation, LabelRef::Inline) => {
            if cloud.labels.is_none() {
                return Err(Error::Config(format!("{name}: no per-point labels in the cloud file")));
            }
            None
        }
        (Task::Segmentation, LabelRef::Class(_)) => {
            return Err(Error::Config(format!("{name}: segmentation needs a label file")))
        }
    };
    cloud.validate()?;
    Ok(Sample { name, cloud, class })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Sphere,
    Cube,
    Torus,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Sphere, Shape::Cube, Shape::Torus];

    /// Uniform sample on the surface.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> Point3 {
        match self {
            Shape::Sphere => unit_vector(rng),
            Shape::Cube => {
                let face = rng.random_range(0..6);
                let (u, v) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => Point3::new(s, u, v),
                    1 => Point3::new(u, s, v),
                    _ => Point3::new(u, v, s),
                }
            }
            Shape::Torus => {
                let (big, small) = (1.0, 0.4);
                // Rejection on the tube angle makes the sample area-uniform.
                loop {
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let b: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let w = (big + small * b.cos()) / (big + small);
                    if rng.random::<f64>() <= w {
                        let ring = big + small * b.cos();
                        return Point3::new(ring * a.cos(), ring * a.sin(), small * b.sin());
                    }
                }
            }
        }
    }
}

impl FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Shape::Sphere),
            "cube" => Ok(Shape::Cube),
            "torus" => Ok(Shape::Torus),
            _ => Err(Error::Config(format!("unknown shape '{s}'"))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Torus => "torus",
        })
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Point3 {
    loop {
        let v = Point3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniform random rotation as a row-major 3x3 matrix (from a random unit quaternion).
fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> [[f64; 3]; 3] {
    let mut q: [f64; 4];
    loop {
        q = [0.0; 4].map(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn apply(m: &[[f64; 3]; 3], p: Point3) -> Point3 {
    Point3::new(
        m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
        m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
        m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub shapes: Vec<Shape>,
    /// Total clouds; cloud `i` has shape `shapes[i % shapes.len()]`.
    pub count: usize,
    pub points_per_cloud: usize,
    pub jitter: f64,
    pub seed: u64,
    pub task: Task,
}

impl SyntheticSpec {
    pub fn per_class(shapes: Vec<Shape>, n_per_class: usize, points_per_cloud: usize, seed: u64) -> Self {
        SyntheticSpec {
            count: n_per_class * shapes.len(),
            shapes,
            points_per_cloud,
            jitter: 0.01,
            seed,
            task: Task::Classification,
        }
    }
}

/// Noisy shape surfaces under random rotations, deterministic in `spec.seed`.
///
/// Classification clouds carry the shape index as class. Segmentation clouds
/// are rotated about z only and label each point by the sign of its height in
/// the shape frame (part 0 below, part 1 above).
pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.shapes.is_empty() || spec.count == 0 || spec.points_per_cloud == 0 {
        return Err(Error::EmptyInput);
    }
    let noise = Normal::new(0.0, spec.jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let samples = (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let shape = spec.shapes[i % spec.shapes.len()];
            let rot = match spec.task {
                Task::Classification => random_rotation(&mut rng),
                Task::Segmentation => {
                    let (s, c) = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI).sin_cos();
                    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
                }
            };
            let mut points = Vec::with_capacity(spec.points_per_cloud);
            let mut labels = Vec::with_capacity(spec.points_per_cloud);
            for _ in 0..spec.points_per_cloud {
                let p = shape.sample(&mut rng);
                labels.push(usize::from(p.z >= 0.0));
                let jit = Point3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                points.push(apply(&rot, p) + jit);
            }
            let mut cloud = PointCloud::new(points);
            let class = match spec.task {
                Task::Classification => Some(i % spec.shapes.len()),
                Task::Segmentation => {
                    cloud.labels = Some(labels);
                    None
                }
            };
            Sample {
                name: format!("{shape}_{i:05}"),
                cloud,
                class,
            }
        })
        .collect();
    Ok(Dataset {
        task: spec.task,
        samples,
    })
}

/// Writes clouds under `dir` plus a `manifest.tsv` listing both splits.
/// Segmentation labels go into `.labels` files next to each cloud.
pub fn write_dataset(dir: &Path, train: &Dataset, test: &Dataset) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (data, split) in [(train, Split::Train), (test, Split::Test)] {
        let written = data
            .samples
            .par_iter()
            .map(|s| {
                let stem = format!("{}_{}", split.as_str(), s.name);
                let path = dir.join(format!("{stem}.txt"));
                let label = match data.task {
                    Task::Classification => {
                        io::write_point_cloud(&path, &s.cloud)?;
                        LabelRef::Class(s.class.ok_or(Error::Config("sample without class".into()))?)
                    }
                    Task::Segmentation => {
                        let lp = dir.join(format!("{stem}.labels"));
                        let labels = s.cloud.labels.as_deref().ok_or(Error::Config("sample without labels".into()))?;
                        io::write_labels(&lp, labels)?;
                        io::write_point_cloud(
                            &path,
                            &PointCloud {
                                labels: None,
                                ..s.cloud.clone()
                            },
                        )?;
                        LabelRef::File(lp)
                    }
                };
                Ok(ManifestEntry {
                    cloud: path,
                    label,
                    split,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        entries.extend(written);
    }
    let manifest = dir.join("manifest.tsv");
    io::write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Classifies by the nearest class mean of the flattened raw coordinate
/// vectors. Needs equal-length clouds; returns test accuracy in percent.
pub fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset) -> Result<f64> {
    let width = train.samples.first().ok_or(Error::EmptyInput)?.cloud.len() * 3;
    let flat = |s: &Sample| -> Result<Vec<f64>> {
        if s.cloud.len() * 3 != width {
            return Err(Error::shape("baseline cloud size", width / 3, s.cloud.len()));
        }
        Ok(s.cloud.points.iter().flat_map(|p| p.to_array()).collect())
    };
    let classes = train.label_count();
    let mut sums = vec![vec![0.0; width]; classes];
    let mut counts = vec![0usize; classes];
    for s in &train.samples {
        let c = s.class.ok_or(Error::Config("baseline needs class labels".into()))?;
        for (a, v) in sums[c].iter_mut().zip(flat(s)?) {
            *a += v;
        }
        counts[c] += 1;
    }
    for (sum, &n) in sums.iter_mut().zip(&counts) {
        sum.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let mut correct = 0;
    for s in &test.samples {
        let x = flat(s)?;
        let best = (0..classes)
            .filter(|&c| counts[c] > 0)
            .min_by(|&a, &b| {
                let d = |c: usize| sums[c].iter().zip(&x).map(|(m, v)| (m - v) * (m - v)).sum::<f64>();
                d(a).total_cmp(&d(b))
            })
            .ok_or(Error::EmptyInput)?;
        correct += usize::from(Some(best) == s.class);
    }
    Ok(100.0 * correct as f64 / test.len().max(1) as f64)
}
