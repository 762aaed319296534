use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{normalize_cloud, NormalizeTransform, Point3, PointCloud};

/// Axis that points up in the input data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpAxis {
    X,
    Y,
    #[default]
    Z,
}

impl FromStr for UpAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(UpAxis::X),
            "y" => Ok(UpAxis::Y),
            "z" => Ok(UpAxis::Z),
            _ => Err(Error::Config(format!("unknown axis '{s}'"))),
        }
    }
}

/// Cyclic permutation taking `up` to z; right-handedness is kept.
pub fn make_upright(cloud: &PointCloud, up: UpAxis) -> PointCloud {
    match up {
        UpAxis::Z => cloud.clone(),
        UpAxis::Y => cloud.map_points(|p| Point3::new(p.z, p.x, p.y)),
        UpAxis::X => cloud.map_points(|p| Point3::new(p.y, p.z, p.x)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Integer cell of the block in units of the block size.
    pub cell: [i64; 3],
    /// Indices into the input cloud, ascending.
    pub indices: Vec<usize>,
    pub cloud: PointCloud,
    pub transform: NormalizeTransform,
}

/// Splits a scene into axis-aligned cubes of side `size` anchored at the
/// scene minimum, normalizing each block with its z mean preserved. Blocks
/// with fewer than `min_points` points are dropped. Blocks come back sorted by
/// cell.
pub fn split_blocks(cloud: &PointCloud, size: f64, min_points: usize) -> Result<Vec<Block>> {
    cloud.validate()?;
    if !(size > 0.0 && size.is_finite()) {
        return Err(Error::Config(format!("block size {size} must be positive")));
    }
    let (lo, _) = cloud.bounds().ok_or(Error::EmptyInput)?;
    let mut cells: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let d = *p - lo;
        let cell = [d.x, d.y, d.z].map(|v| (v / size).floor() as i64);
        cells.entry(cell).or_default().push(i);
    }
    cells
        .into_iter()
        .filter(|(_, idx)| idx.len() >= min_points.max(1))
        .map(|(cell, indices)| {
            let (normalized, transform) = normalize_cloud(&cloud.select(&indices), true)?;
            Ok(Block {
                cell,
                indices,
                cloud: normalized,
                transform,
            })
        })
        .collect()
}
