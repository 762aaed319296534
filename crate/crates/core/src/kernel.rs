//! Spherical convolution kernel geometry.
//!
//! The ball of radius `rho` around a target point is divided into `n` azimuth
//! × `p` elevation × `q` radial bins, plus bin 0 for self-convolution. A
//! neighbor offset maps to the linear index
//! `k_theta + (k_phi - 1) * n + (k_r - 1) * n * p` with 1-based bin coordinates.
//!
//! Azimuth and elevation bins are half-open `[edge_k, edge_{k+1})` with the last
//! bin closed. Radial shells are closed on the outside, `(R_k, R_{k+1}]`, so a
//! shell owns its outer sphere (offsets of length 1, sqrt 2 and sqrt 3 land in
//! shells 1, 2 and 3 of the `[eps, 1, sqrt 2, sqrt 3]` division). Offsets
//! beyond `rho` are clamped into the outermost shell.
//!
//! A geometry applies its weights asymmetrically (never the same bin to an
//! offset and its negation) when no azimuth or elevation bin straddles zero and
//! there are more than two azimuth bins. [`KernelGeometry::validate_asymmetry`]
//! checks those conditions.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{to_spherical, Point3};

/// Self-convolution threshold relative to the sphere radius.
pub const SELF_BIN_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum RadialMode {
    /// `R_k = eps + (k - 1) * (rho - eps) / q` with `eps = 1e-9 * rho`.
    Uniform,
    /// All `q + 1` edges. The first edge is the self-convolution threshold and
    /// the last must equal `rho`.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelGeometry {
    n: usize,
    p: usize,
    q: usize,
    theta_edges: Vec<f64>,
    phi_edges: Vec<f64>,
    r_edges: Vec<f64>,
}

/// One failed asymmetry condition.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Azimuth edges `k`, `k + 1` (1-based) have a negative product.
    Azimuth { k: usize, lo: f64, hi: f64 },
    /// Elevation edges `k`, `k + 1` (1-based) have a negative product.
    Elevation { k: usize, lo: f64, hi: f64 },
    /// At most two azimuth bins.
    TooFewAzimuthBins { n: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Azimuth { k, lo, hi } => write!(
                f,
                "azimuth edges {k},{} = ({lo:.6}, {hi:.6}) straddle zero (theta_k * theta_k+1 < 0)",
                k + 1
            ),
            Violation::Elevation { k, lo, hi } => write!(
                f,
                "elevation edges {k},{} = ({lo:.6}, {hi:.6}) straddle zero (phi_k * phi_k+1 < 0)",
                k + 1
            ),
            Violation::TooFewAzimuthBins { n } => {
                write!(f, "azimuth bin count n = {n} must be greater than 2")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AsymmetryReport {
    pub violations: Vec<Violation>,
}

impl AsymmetryReport {
    #[inline]
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::IllegalKernel(self.to_string()))
        }
    }
}

impl fmt::Display for AsymmetryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// `count + 1` edges spread uniformly over `[-half, half]`, with exact
/// endpoints and an exact zero when `count` is even.
fn symmetric_edges(count: usize, half: f64) -> Vec<f64> {
    (0..=count)
        .map(|k| half * (2 * k as i64 - count as i64) as f64 / count as f64)
        .collect()
}

fn check_ascending(name: &str, edges: &[f64]) -> Result<()> {
    if edges.len() < 2 {
        return Err(Error::InvalidGeometry(format!("{name} needs at least two edges")));
    }
    if edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidGeometry(format!("{name} edges must be finite")));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidGeometry(format!(
            "{name} edges must be strictly ascending: {edges:?}"
        )));
    }
    Ok(())
}

/// 1-based bin of `v` among `edges`: half-open, last bin closed, out-of-range
/// values clamped to the first or last bin.
#[inline]
fn locate(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    edges.partition_point(|&e| e <= v).clamp(1, bins)
}

/// 1-based radial shell of `r`: closed on the outside, clamped to `[1, q]`.
#[inline]
fn locate_shell(edges: &[f64], r: f64) -> usize {
    let shells = edges.len() - 1;
    edges.partition_point(|&e| e < r).clamp(1, shells)
}

impl KernelGeometry {
    /// Builds a geometry with uniform azimuth/elevation partitions and rejects
    /// any that would apply weights symmetrically.
    pub fn new(n: usize, p: usize, q: usize, rho: f64, radial: RadialMode) -> Result<Self> {
        if n < 1 || p < 1 || q < 1 {
            return Err(Error::InvalidGeometry(format!(
                "bin counts must be positive, got {n}x{p}x{q}"
            )));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidGeometry(format!("radius {rho} must be positive")));
        }
        let r_edges = match radial {
            RadialMode::Uniform => {
                let eps = SELF_BIN_EPSILON * rho;
                let mut edges: Vec<f64> = (0..=q)
                    .map(|k| eps + k as f64 * (rho - eps) / q as f64)
                    .collect();
                edges[q] = rho;
                edges
            }
            RadialMode::Explicit(edges) => {
                if edges.len() != q + 1 {
                    return Err(Error::InvalidGeometry(format!(
                        "expected {} radial edges, got {}",
                        q + 1,
                        edges.len()
                    )));
                }
                let last = *edges.last().unwrap();
                if (last - rho).abs() > 1e-12 * rho {
                    return Err(Error::InvalidGeometry(format!(
                        "last radial edge {last} must equal rho {rho}"
                    )));
                }
                edges
            }
        };
        let geom = Self::from_edges(symmetric_edges(n, PI), symmetric_edges(p, FRAC_PI_2), r_edges)?;
        geom.validate_asymmetry().into_result()?;
        Ok(geom)
    }

    /// Uniform radial shells.
    pub fn uniform(n: usize, p: usize, q: usize, rho: f64) -> Result<Self> {
        Self::new(n, p, q, rho, RadialMode::Uniform)
    }

    /// Geometry from raw edge vectors. Only structural checks are applied
    /// (ascending, covering the full azimuth/elevation ranges, positive radii);
    /// asymmetry is not enforced so illegal geometries can be studied.
    pub fn from_edges(theta_edges: Vec<f64>, phi_edges: Vec<f64>, r_edges: Vec<f64>) -> Result<Self> {
        check_ascending("azimuth", &theta_edges)?;
        check_ascending("elevation", &phi_edges)?;
        check_ascending("radial", &r_edges)?;
        let tol = 1e-12;
        if (theta_edges[0] + PI).abs() > tol || (theta_edges[theta_edges.len() - 1] - PI).abs() > tol {
            return Err(Error::InvalidGeometry("azimuth edges must span [-pi, pi]".into()));
        }
        if (phi_edges[0] + FRAC_PI_2).abs() > tol
            || (phi_edges[phi_edges.len() - 1] - FRAC_PI_2).abs() > tol
        {
            return Err(Error::InvalidGeometry("elevation edges must span [-pi/2, pi/2]".into()));
        }
        if r_edges[0] <= 0.0 {
            return Err(Error::InvalidGeometry("radial edges must be positive".into()));
        }
        Ok(KernelGeometry {
            n: theta_edges.len() - 1,
            p: phi_edges.len() - 1,
            q: r_edges.len() - 1,
            theta_edges,
            phi_edges,
            r_edges,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn rho(&self) -> f64 {
        self.r_edges[self.q]
    }

    /// Offsets shorter than this use the self-convolution bin.
    #[inline]
    pub fn epsilon(&self) -> f64 {
        self.r_edges[0]
    }

    #[inline]
    pub fn theta_edges(&self) -> &[f64] {
        &self.theta_edges
    }

    #[inline]
    pub fn phi_edges(&self) -> &[f64] {
        &self.phi_edges
    }

    #[inline]
    pub fn r_edges(&self) -> &[f64] {
        &self.r_edges
    }

    /// Number of weight matrices, `n * p * q + 1`.
    #[inline]
    pub fn bin_count(&self) -> usize {
        self.n * self.p * self.q + 1
    }

    /// Same angular partition with every radial edge scaled to the new radius.
    pub fn with_radius(&self, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidGeometry(format!("radius {rho} must be positive")));
        }
        let s = rho / self.rho();
        let mut r_edges: Vec<f64> = self.r_edges.iter().map(|e| e * s).collect();
        r_edges[self.q] = rho;
        Ok(KernelGeometry {
            r_edges,
            ..self.clone()
        })
    }

    pub fn validate_asymmetry(&self) -> AsymmetryReport {
        let mut violations = Vec::new();
        for (k, w) in self.theta_edges.windows(2).enumerate() {
            if w[0] * w[1] < 0.0 {
                violations.push(Violation::Azimuth { k: k + 1, lo: w[0], hi: w[1] });
            }
        }
        for (k, w) in self.phi_edges.windows(2).enumerate() {
            if w[0] * w[1] < 0.0 {
                violations.push(Violation::Elevation { k: k + 1, lo: w[0], hi: w[1] });
            }
        }
        if self.n <= 2 {
            violations.push(Violation::TooFewAzimuthBins { n: self.n });
        }
        AsymmetryReport { violations }
    }

    /// Linear index of 1-based bin coordinates.
    #[inline]
    pub fn linear_index(&self, k_theta: usize, k_phi: usize, k_r: usize) -> usize {
        k_theta + (k_phi - 1) * self.n + (k_r - 1) * self.n * self.p
    }

    /// Inverse of [`linear_index`](Self::linear_index) for `kappa >= 1`.
    pub fn bin_coords(&self, kappa: usize) -> (usize, usize, usize) {
        debug_assert!(kappa >= 1 && kappa < self.bin_count());
        let z = kappa - 1;
        let k_theta = z % self.n + 1;
        let k_phi = (z / self.n) % self.p + 1;
        let k_r = z / (self.n * self.p) + 1;
        (k_theta, k_phi, k_r)
    }

    /// Bin index of the offset `delta = x_j - x_i` of neighbor `j` from target `i`.
    pub fn bin_index(&self, delta: Point3) -> usize {
        let s = to_spherical(delta);
        if s.r < self.epsilon() {
            return 0;
        }
        let k_theta = locate(&self.theta_edges, s.theta);
        let k_phi = locate(&self.phi_edges, s.phi);
        let k_r = locate_shell(&self.r_edges, s.r);
        self.linear_index(k_theta, k_phi, k_r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sqrt3() -> f64 {
        3f64.sqrt()
    }

    fn eq3_geometry() -> KernelGeometry {
        let rho = sqrt3();
        KernelGeometry::new(
            4,
            4,
            3,
            rho,
            RadialMode::Explicit(vec![SELF_BIN_EPSILON * rho, 1.0, 2f64.sqrt(), rho]),
        )
        .unwrap()
    }

    #[test]
    fn default_and_cnn_analog_have_49_slots() {
        assert_eq!(KernelGeometry::uniform(8, 2, 3, sqrt3()).unwrap().bin_count(), 49);
        let g = eq3_geometry();
        assert_eq!(g.bin_count(), 49);
        assert_eq!(g.theta_edges(), &[-PI, -PI / 2.0, 0.0, PI / 2.0, PI]);
        assert_eq!(g.phi_edges(), &[-PI / 2.0, -PI / 4.0, 0.0, PI / 4.0, PI / 2.0]);
    }

    #[test]
    fn uniform_radial_edges() {
        let g = KernelGeometry::uniform(8, 2, 3, 3.0).unwrap();
        let eps = SELF_BIN_EPSILON * 3.0;
        let r = g.r_edges();
        assert_eq!(r[0], eps);
        assert!((r[1] - (eps + (3.0 - eps) / 3.0)).abs() < 1e-15);
        assert_eq!(r[3], 3.0);
    }

    #[test]
    fn rejects_two_azimuth_bins() {
        let err = KernelGeometry::uniform(2, 2, 1, 1.0).unwrap_err();
        assert!(err.to_string().contains("greater than 2"), "{err}");
    }

    #[test]
    fn rejects_odd_counts_straddling_zero() {
        let err = KernelGeometry::uniform(8, 1, 3, 1.0).unwrap_err();
        assert!(err.to_string().contains("elevation"), "{err}");
        let err = KernelGeometry::uniform(3, 2, 3, 1.0).unwrap_err();
        assert!(err.to_string().contains("azimuth"), "{err}");
    }

    #[test]
    fn report_lists_failing_pairs() {
        let g = KernelGeometry::from_edges(
            vec![-PI, 0.0, PI / 2.0, PI],
            vec![-PI / 2.0, PI / 2.0],
            vec![1e-9, 1.0],
        )
        .unwrap();
        let report = g.validate_asymmetry();
        assert_eq!(
            report.violations,
            vec![Violation::Elevation { k: 1, lo: -PI / 2.0, hi: PI / 2.0 }]
        );

        let g = KernelGeometry::from_edges(
            vec![-PI, -PI / 3.0, PI / 3.0, PI],
            vec![-PI / 2.0, 0.0, PI / 2.0],
            vec![1e-9, 1.0],
        )
        .unwrap();
        let report = g.validate_asymmetry();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(report.violations[0], Violation::Azimuth { k: 2, .. }));
        assert!(!report.to_string().is_empty());
    }

    #[test]
    fn structural_checks() {
        assert!(KernelGeometry::from_edges(vec![-PI, 1.0, 0.5, PI], vec![-PI / 2.0, PI / 2.0], vec![1e-9, 1.0]).is_err());
        assert!(KernelGeometry::from_edges(vec![-3.0, PI], vec![-PI / 2.0, PI / 2.0], vec![1e-9, 1.0]).is_err());
        assert!(KernelGeometry::from_edges(vec![-PI, PI], vec![-PI / 2.0, PI / 2.0], vec![0.0, 1.0]).is_err());
        assert!(KernelGeometry::new(8, 2, 3, 1.0, RadialMode::Explicit(vec![1e-9, 0.5, 1.0])).is_err());
        assert!(KernelGeometry::new(8, 2, 2, 1.0, RadialMode::Explicit(vec![1e-9, 0.5, 2.0])).is_err());
        assert!(KernelGeometry::uniform(8, 2, 3, 0.0).is_err());
    }

    #[test]
    fn self_bin_and_axis_examples() {
        let g = eq3_geometry();
        assert_eq!(g.bin_index(Point3::ZERO), 0);
        assert_eq!(g.bin_index(Point3::new(1.0, 0.0, 0.0)), 11);
        assert_eq!(g.bin_coords(11), (3, 3, 1));
        assert_eq!(g.bin_coords(g.bin_index(Point3::new(0.0, 1.0, 1.0))).2, 2);
        assert_eq!(g.bin_coords(g.bin_index(Point3::new(1.0, 1.0, 1.0))).2, 3);
        // Overflow clamps to the outer shell.
        let far = g.bin_index(Point3::new(10.0, 0.0, 0.0));
        assert_eq!(g.bin_coords(far), (3, 3, 3));
    }

    #[test]
    fn azimuth_seam() {
        let g = KernelGeometry::uniform(8, 2, 3, 1.0).unwrap();
        // theta = +pi lands in the closed last bin, -pi in the first.
        let a = g.bin_index(Point3::new(-0.5, 0.0, 0.0));
        let b = g.bin_index(Point3::new(-0.5, -0.0, 0.0));
        assert_eq!(g.bin_coords(a).0, 8);
        assert_eq!(g.bin_coords(b).0, 1);
        assert_ne!(a, g.bin_index(Point3::new(0.5, 0.0, 0.0)));
        assert_ne!(b, g.bin_index(Point3::new(0.5, 0.0, -0.0)));
    }

    #[test]
    fn index_bijection() {
        let g = KernelGeometry::uniform(8, 2, 3, 1.0).unwrap();
        let mut seen = vec![false; g.bin_count()];
        for kr in 1..=3 {
            for kp in 1..=2 {
                for kt in 1..=8 {
                    let k = g.linear_index(kt, kp, kr);
                    assert!(!seen[k]);
                    seen[k] = true;
                    assert_eq!(g.bin_coords(k), (kt, kp, kr));
                }
            }
        }
        assert!(!seen[0] && seen[1..].iter().all(|&s| s));
    }

    #[test]
    fn rescale_keeps_structure() {
        let g = eq3_geometry();
        let h = g.with_radius(2.0 * sqrt3()).unwrap();
        assert_eq!(h.rho(), 2.0 * sqrt3());
        assert!((h.r_edges()[1] - 2.0).abs() < 1e-12);
        assert_eq!(h.theta_edges(), g.theta_edges());
    }

    fn offset() -> impl Strategy<Value = Point3> {
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn asymmetric_for_legal_geometry(d in offset(), n in 2usize..6, p in 1usize..3, q in 1usize..4) {
            let g = KernelGeometry::uniform(2 * n, 2 * p, q, 1.7).unwrap();
            prop_assume!(d.norm() >= g.epsilon());
            prop_assert_ne!(g.bin_index(d), g.bin_index(-d));
        }

        #[test]
        fn translation_invariant(
            a in prop::array::uniform3(-128i32..128),
            b in prop::array::uniform3(-128i32..128),
            t in prop::array::uniform3(-4096i32..4096),
        ) {
            // Dyadic coordinates keep every sum exact, so the shift cancels bitwise.
            let pt = |v: [i32; 3]| Point3::new(v[0] as f64, v[1] as f64, v[2] as f64) / 64.0;
            let (a, b, t) = (pt(a), pt(b), pt(t));
            let g = KernelGeometry::uniform(8, 2, 3, 1.7).unwrap();
            prop_assert_eq!(g.bin_index((b + t) - (a + t)), g.bin_index(b - a));
        }

        #[test]
        fn scaling_changes_only_radius(d in offset(), c in 0.01f64..50.0) {
            let g = KernelGeometry::uniform(8, 2, 3, 1.7).unwrap();
            let scaled = d * c;
            prop_assume!(d.norm() >= g.epsilon() && scaled.norm() >= g.epsilon());
            let (t0, p0, _) = g.bin_coords(g.bin_index(d));
            let (t1, p1, _) = g.bin_coords(g.bin_index(scaled));
            prop_assert_eq!((t0, p0), (t1, p1));
        }
    }
}
