//! Octree partitioning of a point cloud into network layers.
//!
//! A node at depth `d < L` holding more than one point splits into its nonempty
//! octants; a node holding a single point stops splitting and is replicated down
//! to depth `L`. Depth-`L` nodes keep every point that reaches them. Network
//! layer `l` (1-based) corresponds to tree depth `L - l + 1`: layer 1 holds the
//! finest cells, layer `L` the depth-1 children of the root, and layer 0 is the
//! raw cloud.
//!
//! Replication is virtual. A physical node carries a `span`: the number of
//! consecutive depths it occupies. Layer views materialize one neuron per depth.

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

/// A physical tree node. It stands for `span` neurons, one per depth in
/// `depth..depth + span`.
#[derive(Debug, Clone, PartialEq)]
pub struct OctreeNode {
    pub depth: usize,
    pub span: usize,
    pub cube_center: Point3,
    pub cube_half_side: f64,
    pub location: Point3,
    /// Arena ids of the children, which start at depth `depth + span`.
    /// Stored in Morton octant order.
    pub children: Vec<usize>,
    /// Raw point indices; nonempty only when the node reaches the maximum depth.
    /// Sorted by coordinates (ties by index) so reductions are order independent.
    pub point_indices: Vec<usize>,
}

impl OctreeNode {
    /// Deepest depth this node occupies.
    #[inline]
    pub fn last_depth(&self) -> usize {
        self.depth + self.span - 1
    }

    #[inline]
    pub fn spans(&self, depth: usize) -> bool {
        depth >= self.depth && depth <= self.last_depth()
    }
}

/// One network layer `Q^l` of the tree.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TreeLayer {
    pub locations: Vec<Point3>,
    /// Arena node behind each neuron. Empty for layer 0.
    pub nodes: Vec<usize>,
    /// CSR offsets into `children`; `children` indexes layer `l - 1`.
    pub child_offsets: Vec<usize>,
    pub children: Vec<usize>,
    /// Parent neuron in layer `l + 1`. Empty for the top layer.
    pub parents: Vec<usize>,
}

impl TreeLayer {
    #[inline]
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    #[inline]
    pub fn children_of(&self, i: usize) -> &[usize] {
        &self.children[self.child_offsets[i]..self.child_offsets[i + 1]]
    }
}

/// Neighborhood of one layer-`l` neuron: its children in layer `l - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub target: usize,
    pub location: Point3,
    /// `(index in layer l - 1, location)` per member.
    pub members: Vec<(usize, Point3)>,
}

#[derive(Debug, Clone)]
pub struct Octree {
    depth: usize,
    nodes: Vec<OctreeNode>,
    layers: Vec<TreeLayer>,
    bounds: (Point3, Point3),
}

const ROOT: usize = 0;

impl Octree {
    /// Builds over the tight cube around the cloud's bounding box.
    pub fn build(cloud: &PointCloud, depth: usize) -> Result<Octree> {
        let (lo, hi) = cloud.bounds().ok_or(Error::EmptyInput)?;
        let center = (lo + hi) * 0.5;
        let extent = hi - lo;
        let mut half = 0.5 * extent.x.max(extent.y).max(extent.z);
        if half <= 0.0 {
            // Degenerate cloud; any positive cube keeps the radii well defined.
            half = 1.0;
        }
        Self::build_in_cube(cloud, depth, center, half)
    }

    /// Builds over the cube `center ± half_side`. Points outside the cube are
    /// still allocated to the nearest octant at each level.
    pub fn build_in_cube(
        cloud: &PointCloud,
        depth: usize,
        center: Point3,
        half_side: f64,
    ) -> Result<Octree> {
        if cloud.is_empty() {
            return Err(Error::EmptyInput);
        }
        if depth < 1 {
            return Err(Error::InvalidDepth(depth));
        }
        if !(half_side > 0.0 && half_side.is_finite()) || !center.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "root cube half side {half_side} must be positive and finite"
            )));
        }
        if let Some(i) = cloud.points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry(format!("point {i} is not finite")));
        }
        let points = &cloud.points;
        let mut nodes = vec![OctreeNode {
            depth: 0,
            span: 1,
            cube_center: center,
            cube_half_side: half_side,
            location: Point3::ZERO,
            children: Vec::new(),
            point_indices: Vec::new(),
        }];
        let mut indices: Vec<usize> = (0..points.len()).collect();
        split(points, depth, &mut nodes, ROOT, &mut indices);
        compute_locations(points, &mut nodes, ROOT);

        let half = Point3::new(half_side, half_side, half_side);
        let mut tree = Octree {
            depth,
            nodes,
            layers: Vec::new(),
            bounds: (center - half, center + half),
        };
        tree.layers = tree.build_layers(points);
        Ok(tree)
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.depth
    }

    #[inline]
    pub fn root(&self) -> &OctreeNode {
        &self.nodes[ROOT]
    }

    #[inline]
    pub fn nodes(&self) -> &[OctreeNode] {
        &self.nodes
    }

    #[inline]
    pub fn node(&self, id: usize) -> &OctreeNode {
        &self.nodes[id]
    }

    /// Root cube corners `(x_min, x_max)`.
    #[inline]
    pub fn bounds(&self) -> (Point3, Point3) {
        self.bounds
    }

    /// Layer `l` in `0..=L`; layer 0 is the raw cloud.
    #[inline]
    pub fn layer(&self, l: usize) -> &TreeLayer {
        &self.layers[l]
    }

    #[inline]
    pub fn layers(&self) -> &[TreeLayer] {
        &self.layers
    }

    /// `|Q^l|` for `l = 0..=L`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(TreeLayer::len).collect()
    }

    /// Sphere radius of the kernels at layer `l`: `2^(l-L-1) * |x_max - x_min|`.
    pub fn layer_radius(&self, l: usize) -> Result<f64> {
        self.check_layer(l)?;
        let diag = (self.bounds.1 - self.bounds.0).norm();
        Ok(diag * 2f64.powi(l as i32 - self.depth as i32 - 1))
    }

    /// Every layer-`l` neuron with its children in layer `l - 1`.
    pub fn neighborhoods(&self, l: usize) -> Result<Vec<Neighborhood>> {
        self.check_layer(l)?;
        let layer = &self.layers[l];
        let below = &self.layers[l - 1];
        Ok((0..layer.len())
            .map(|i| Neighborhood {
                target: i,
                location: layer.locations[i],
                members: layer
                    .children_of(i)
                    .iter()
                    .map(|&j| (j, below.locations[j]))
                    .collect(),
            })
            .collect())
    }

    /// Neuron index of every raw point's ancestor at each layer `1..=L`:
    /// `result[l][point]`. Entry 0 is the identity.
    pub fn ancestor_table(&self) -> Vec<Vec<usize>> {
        let m = self.layers[0].len();
        let mut table = Vec::with_capacity(self.depth + 1);
        table.push((0..m).collect::<Vec<_>>());
        for l in 1..=self.depth {
            let prev: &Vec<usize> = &table[l - 1];
            let parents = &self.layers[l - 1].parents;
            let next = prev.iter().map(|&i| parents[i]).collect();
            table.push(next);
        }
        table
    }

    fn check_layer(&self, l: usize) -> Result<()> {
        if l < 1 || l > self.depth {
            return Err(Error::LayerOutOfRange {
                layer: l,
                depth: self.depth,
            });
        }
        Ok(())
    }

    fn build_layers(&self, points: &[Point3]) -> Vec<TreeLayer> {
        let depth = self.depth;
        // order[d] lists the nodes spanning tree depth d in depth-first Morton order.
        let mut order: Vec<Vec<usize>> = vec![Vec::new(); depth + 1];
        let mut stack = vec![ROOT];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if id != ROOT {
                for d in node.depth..=node.last_depth() {
                    order[d].push(id);
                }
            }
            stack.extend(node.children.iter().rev());
        }

        let mut layers = vec![TreeLayer::default(); depth + 1];
        layers[0].locations = points.to_vec();
        layers[0].child_offsets = vec![0; points.len() + 1];
        // slot[id] = neuron index of node id in the layer below the one being built.
        let mut slot = vec![usize::MAX; self.nodes.len()];
        for l in 1..=depth {
            let d = depth - l + 1;
            let ids = &order[d];
            let mut layer = TreeLayer {
                locations: Vec::with_capacity(ids.len()),
                nodes: ids.clone(),
                child_offsets: Vec::with_capacity(ids.len() + 1),
                children: Vec::new(),
                parents: Vec::new(),
            };
            layer.child_offsets.push(0);
            for &id in ids {
                let node = &self.nodes[id];
                layer.locations.push(node.location);
                if l == 1 {
                    layer.children.extend_from_slice(&node.point_indices);
                } else if node.last_depth() > d {
                    layer.children.push(slot[id]);
                } else {
                    layer.children.extend(node.children.iter().map(|&c| slot[c]));
                }
                layer.child_offsets.push(layer.children.len());
            }
            let below = &mut layers[l - 1];
            below.parents = vec![usize::MAX; below.len()];
            for i in 0..layer.len() {
                for &c in layer.children_of(i) {
                    below.parents[c] = i;
                }
            }
            for (i, &id) in ids.iter().enumerate() {
                slot[id] = i;
            }
            layers[l] = layer;
        }
        layers
    }
}

#[inline]
fn octant(p: Point3, center: Point3) -> usize {
    (p.x >= center.x) as usize | ((p.y >= center.y) as usize) << 1 | ((p.z >= center.z) as usize) << 2
}

#[inline]
fn octant_center(center: Point3, half: f64, oct: usize) -> Point3 {
    let q = 0.5 * half;
    let sign = |bit: usize| if oct & bit != 0 { q } else { -q };
    Point3::new(center.x + sign(1), center.y + sign(2), center.z + sign(4))
}

/// Splits `parent` (which holds `indices`) into its nonempty octants.
fn split(
    points: &[Point3],
    max_depth: usize,
    nodes: &mut Vec<OctreeNode>,
    parent: usize,
    indices: &mut [usize],
) {
    let center = nodes[parent].cube_center;
    let half = nodes[parent].cube_half_side;
    let child_depth = nodes[parent].last_depth() + 1;
    indices.sort_unstable_by_key(|&i| octant(points[i], center));

    let mut start = 0;
    while start < indices.len() {
        let oct = octant(points[indices[start]], center);
        let mut end = start + 1;
        while end < indices.len() && octant(points[indices[end]], center) == oct {
            end += 1;
        }
        let members = &mut indices[start..end];
        let id = nodes.len();
        let is_leaf = child_depth == max_depth || members.len() == 1;
        nodes.push(OctreeNode {
            depth: child_depth,
            span: if is_leaf { max_depth - child_depth + 1 } else { 1 },
            cube_center: octant_center(center, half, oct),
            cube_half_side: 0.5 * half,
            location: Point3::ZERO,
            children: Vec::new(),
            point_indices: Vec::new(),
        });
        nodes[parent].children.push(id);
        if is_leaf {
            let mut leaf_points = members.to_vec();
            leaf_points.sort_unstable_by(|&a, &b| points[a].total_cmp(&points[b]).then(a.cmp(&b)));
            nodes[id].point_indices = leaf_points;
        } else {
            split(points, max_depth, nodes, id, members);
        }
        start = end;
    }
}

/// Leaf location = mean of its points; internal location = mean of its children.
fn compute_locations(points: &[Point3], nodes: &mut [OctreeNode], id: usize) -> Point3 {
    let location = if nodes[id].children.is_empty() {
        let idx = &nodes[id].point_indices;
        let mut sum = Point3::ZERO;
        for &i in idx {
            sum += points[i];
        }
        sum / idx.len() as f64
    } else {
        let children = nodes[id].children.clone();
        let mut sum = Point3::ZERO;
        for &c in &children {
            sum += compute_locations(points, nodes, c);
        }
        sum / children.len() as f64
    };
    nodes[id].location = location;
    location
}
