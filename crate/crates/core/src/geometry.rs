//! Coordinate types and the Cartesian/spherical transform.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn component_min(self, o: Point3) -> Point3 {
        Point3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn component_max(self, o: Point3) -> Point3 {
        Point3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Lexicographic total order on (x, y, z).
    pub fn total_cmp(&self, o: &Point3) -> std::cmp::Ordering {
        self.x
            .total_cmp(&o.x)
            .then(self.y.total_cmp(&o.y))
            .then(self.z.total_cmp(&o.z))
    }
}

impl Add for Point3 {
    type Output = Point3;
    #[inline]
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    #[inline]
    fn add_assign(&mut self, o: Point3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    #[inline]
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    #[inline]
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn div(self, s: f64) -> Point3 {
        Point3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Azimuth `theta` in [-pi, pi], elevation `phi` in [-pi/2, pi/2], radius `r >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SphericalCoord {
    pub theta: f64,
    pub phi: f64,
    pub r: f64,
}

/// Cartesian offset to spherical coordinates. The zero vector maps to (0, 0, 0).
pub fn to_spherical(delta: Point3) -> SphericalCoord {
    let r = delta.norm();
    if r == 0.0 {
        return SphericalCoord::default();
    }
    // atan2 keeps offsets on an elevation edge (e.g. 45 degrees) exactly on it.
    SphericalCoord {
        theta: delta.y.atan2(delta.x),
        phi: delta.z.atan2(delta.x.hypot(delta.y)),
        r,
    }
}

pub fn to_cartesian(s: SphericalCoord) -> Point3 {
    let (sin_phi, cos_phi) = s.phi.sin_cos();
    let (sin_theta, cos_theta) = s.theta.sin_cos();
    Point3::new(
        s.r * cos_phi * cos_theta,
        s.r * cos_phi * sin_theta,
        s.r * sin_phi,
    )
}

/// Ordered points with optional per-point colors and integer labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub colors: Option<Vec<[f64; 3]>>,
    pub labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        PointCloud {
            points,
            colors: None,
            labels: None,
        }
    }

    pub fn with_colors(mut self, colors: Vec<[f64; 3]>) -> Self {
        self.colors = Some(colors);
        self
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Self {
        self.labels = Some(labels);
        self
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks the structural invariants: nonempty, finite, matching channel lengths.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry(format!("point {i} is not finite")));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.points.len() {
                return Err(Error::shape("point colors", self.points.len(), c.len()));
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.points.len() {
                return Err(Error::shape("point labels", self.points.len(), l.len()));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box `(min, max)`, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), &p| {
            (lo.component_min(p), hi.component_max(p))
        }))
    }

    pub fn centroid(&self) -> Point3 {
        let mut sum = Point3::ZERO;
        for &p in &self.points {
            sum += p;
        }
        sum / self.points.len().max(1) as f64
    }

    /// Keeps the points at `indices` (and their colors/labels) in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn map_points(&self, mut f: impl FnMut(Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
            colors: self.colors.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Shift-then-scale applied by [`normalize_cloud`]: `p' = (p - shift) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeTransform {
    pub shift: Point3,
    pub scale: f64,
}

impl NormalizeTransform {
    pub const IDENTITY: NormalizeTransform = NormalizeTransform {
        shift: Point3::ZERO,
        scale: 1.0,
    };

    #[inline]
    pub fn apply(&self, p: Point3) -> Point3 {
        (p - self.shift) * self.scale
    }

    #[inline]
    pub fn invert(&self, p: Point3) -> Point3 {
        p / self.scale + self.shift
    }
}

/// Centers the cloud at its centroid and scales it isotropically into [-1, 1]^3.
///
/// With `preserve_z_mean` only x and y are centered; z keeps its offset so height
/// information survives. A degenerate cloud (all points identical) collapses to
/// the origin with unit scale.
pub fn normalize_cloud(
    cloud: &PointCloud,
    preserve_z_mean: bool,
) -> Result<(PointCloud, NormalizeTransform)> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut shift = cloud.centroid();
    if preserve_z_mean {
        shift.z = 0.0;
    }
    let extent = cloud
        .points
        .iter()
        .map(|&p| {
            let d = p - shift;
            d.x.abs().max(d.y.abs()).max(d.z.abs())
        })
        .fold(0.0f64, f64::max);
    let (lo, hi) = cloud.bounds().expect("nonempty");
    let degenerate = lo == hi;
    let transform = if degenerate {
        // Every point sits at `shift` (z included), so shifting lands them at the origin.
        NormalizeTransform {
            shift: lo,
            scale: 1.0,
        }
    } else {
        NormalizeTransform {
            shift,
            scale: 1.0 / extent,
        }
    };
    let out = cloud.map_points(|p| {
        let q = transform.apply(p);
        // Rounding can land a hair outside the cube.
        Point3::new(
            q.x.clamp(-1.0, 1.0),
            q.y.clamp(-1.0, 1.0),
            q.z.clamp(-1.0, 1.0),
        )
    });
    Ok((out, transform))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn spherical_fixed_points() {
        assert_eq!(to_spherical(Point3::ZERO), SphericalCoord::default());
        let s = to_spherical(Point3::new(1.0, 0.0, 0.0));
        assert_eq!((s.theta, s.phi, s.r), (0.0, 0.0, 1.0));
        let s = to_spherical(Point3::new(0.0, 0.0, -2.0));
        assert_eq!(s.theta, 0.0);
        assert!((s.phi + PI / 2.0).abs() < 1e-15);
        assert_eq!(s.r, 2.0);
    }

    #[test]
    fn normalize_symmetric_cube() {
        let mut pts = Vec::new();
        for &x in &[-2.0, 2.0] {
            for &y in &[-2.0, 2.0] {
                for &z in &[-2.0, 2.0] {
                    pts.push(Point3::new(x, y, z));
                }
            }
        }
        let (out, t) = normalize_cloud(&PointCloud::new(pts.clone()), false).unwrap();
        assert_eq!(t.scale, 0.5);
        for (a, b) in out.points.iter().zip(&pts) {
            assert_eq!(*a, *b * 0.5);
        }
    }

    #[test]
    fn normalize_one_dimensional_extent() {
        let cloud = PointCloud::new(vec![Point3::ZERO, Point3::new(4.0, 0.0, 0.0)]);
        let (out, _) = normalize_cloud(&cloud, false).unwrap();
        assert_eq!(
            out.points,
            vec![Point3::new(-1.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)]
        );
    }

    #[test]
    fn normalize_degenerate_cloud() {
        let cloud = PointCloud::new(vec![Point3::new(3.0, -1.0, 7.0); 4]);
        let (out, t) = normalize_cloud(&cloud, false).unwrap();
        assert!(out.points.iter().all(|&p| p == Point3::ZERO));
        assert_eq!(t.scale, 1.0);
        let (out, _) = normalize_cloud(&cloud, true).unwrap();
        assert!(out.points.iter().all(|&p| p == Point3::ZERO));
    }

    #[test]
    fn normalize_preserves_z_offset() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 2.0),
            Point3::new(2.0, 2.0, 4.0),
        ]);
        let (out, t) = normalize_cloud(&cloud, true).unwrap();
        assert_eq!(t.shift.z, 0.0);
        assert!(out.points.iter().all(|p| p.z > 0.0));
        let mean_xy = out.centroid();
        assert!(mean_xy.x.abs() < 1e-12 && mean_xy.y.abs() < 1e-12);
    }

    #[test]
    fn normalize_empty_is_error() {
        assert!(matches!(
            normalize_cloud(&PointCloud::default(), false),
            Err(Error::EmptyInput)
        ));
    }

    fn finite_point() -> impl Strategy<Value = Point3> {
        (-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn spherical_round_trip(d in finite_point()) {
            prop_assume!(d.norm() > 1e-9);
            let s = to_spherical(d);
            prop_assert!(s.theta.abs() <= PI && s.phi.abs() <= PI / 2.0 && s.r >= 0.0);
            let back = to_cartesian(s);
            prop_assert!((back - d).norm() <= 1e-12 * d.norm());
        }

        #[test]
        fn antipodal_offsets(d in finite_point()) {
            prop_assume!(d.norm() > 1e-9);
            let a = to_spherical(d);
            let b = to_spherical(-d);
            let dtheta = (a.theta - b.theta).abs();
            let wrapped = dtheta.min(2.0 * PI - dtheta);
            // On the z axis theta is undefined (atan2 of signed zeros); elevation carries the flip.
            if d.x != 0.0 || d.y != 0.0 {
                prop_assert!((wrapped - PI).abs() < 1e-12, "dtheta = {}", dtheta);
            }
            prop_assert!((a.phi + b.phi).abs() < 1e-12);
        }

        #[test]
        fn normalize_fits_cube(pts in prop::collection::vec(finite_point(), 2..50), pz in any::<bool>()) {
            let cloud = PointCloud::new(pts);
            let (out, t) = normalize_cloud(&cloud, pz).unwrap();
            let (lo, hi) = out.bounds().unwrap();
            prop_assert!(lo.x >= -1.0 && lo.y >= -1.0 && lo.z >= -1.0);
            prop_assert!(hi.x <= 1.0 && hi.y <= 1.0 && hi.z <= 1.0);
            let (ilo, ihi) = cloud.bounds().unwrap();
            if ilo != ihi {
                let m = [lo.x, lo.y, lo.z, hi.x, hi.y, hi.z]
                    .iter()
                    .fold(0.0f64, |a, v| a.max(v.abs()));
                prop_assert!((m - 1.0).abs() < 1e-12);
                let c = out.centroid();
                prop_assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9);
                if !pz {
                    prop_assert!(c.z.abs() < 1e-9);
                }
                for (o, i) in out.points.iter().zip(&cloud.points) {
                    prop_assert!((t.invert(*o) - *i).norm() <= 1e-9 * (1.0 + i.norm()));
                }
            }
        }
    }
}
