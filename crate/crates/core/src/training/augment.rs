use std::f64::consts::FRAC_PI_6;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{Point3, PointCloud};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub subsample: bool,
    pub keep_ratio: f64,
    pub rotate: bool,
    /// Azimuth rotation is drawn uniformly from `[-max_rotation, max_rotation]`.
    pub max_rotation: f64,
    pub translate: bool,
    pub translate_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            subsample: true,
            keep_ratio: 0.9,
            rotate: true,
            max_rotation: FRAC_PI_6,
            translate: true,
            translate_std: 0.02,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            subsample: false,
            rotate: false,
            translate: false,
            ..Default::default()
        }
    }

    pub fn any(&self) -> bool {
        self.subsample || self.rotate || self.translate
    }
}

/// Rotation about the z (gravity) axis.
pub fn rotate_z(cloud: &PointCloud, angle: f64) -> PointCloud {
    let (s, c) = angle.sin_cos();
    cloud.map_points(|p| Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z))
}

/// Sub-sampling, azimuth rotation and per-cloud translation, in that order.
/// Sub-sampling keeps the surviving points in their original order.
pub fn augment<R: Rng + ?Sized>(cloud: &PointCloud, config: &AugmentConfig, rng: &mut R) -> PointCloud {
    let mut out = cloud.clone();
    if config.subsample && !cloud.is_empty() {
        let m = cloud.len();
        let keep = ((m as f64 * config.keep_ratio).round() as usize).clamp(1, m);
        if keep < m {
            let mut idx = index::sample(rng, m, keep).into_vec();
            idx.sort_unstable();
            out = out.select(&idx);
        }
    }
    if config.rotate {
        let angle = rng.random_range(-config.max_rotation..=config.max_rotation);
        out = rotate_z(&out, angle);
    }
    if config.translate && config.translate_std > 0.0 {
        let normal = Normal::new(0.0, config.translate_std).expect("finite std");
        let t = Point3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        out = out.map_points(|p| p + t);
    }
    out
}
