//! Classification and segmentation networks driven by per-cloud octrees.
//!
//! Both variants share the same trunk: a point-wise MLP stage (linear, batch
//! norm, ReLU) over the raw points followed by one spherical convolution per
//! octree layer. Every convolution except the last is followed by batch norm
//! and ReLU.
//!
//! * Classification pools every layer per cloud and concatenates
//!   `[root layer, layer L-1, ..., layer 1, MLP, raw]` into a global vector.
//! * Segmentation gives each raw point `[raw, MLP, leaf, ..., top ancestor]`.
//!
//! A shared fully-connected head (hidden layers with batch norm and ReLU, then
//! a linear layer to `C` logits) finishes both.
//!
//! Clouds in a batch are stacked row-wise; a [`BatchPlan`] carries the row
//! offsets, convolution neighborhoods and ancestor tables.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::kernel::{KernelGeometry, RadialMode};
use crate::layers::{
    maxpool_backward, maxpool_segments, relu_backward, relu_forward, BatchNorm, BatchNormCache, ConvPlan,
    Linear, Matrix, Parameterized, SphericalConv,
};
use crate::octree::Octree;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classification,
    Segmentation,
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "classify" | "cls" => Ok(Task::Classification),
            "segmentation" | "segment" | "seg" => Ok(Task::Segmentation),
            _ => Err(Error::Config(format!("unknown task '{s}'"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::Segmentation => "segmentation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    Xyz,
    XyzRgb,
}

impl InputMode {
    #[inline]
    pub fn width(self) -> usize {
        match self {
            InputMode::Xyz => 3,
            InputMode::XyzRgb => 6,
        }
    }
}

impl FromStr for InputMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" => Ok(InputMode::Xyz),
            "xyz-rgb" | "xyzrgb" => Ok(InputMode::XyzRgb),
            _ => Err(Error::Config(format!("unknown input mode '{s}'"))),
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputMode::Xyz => "xyz",
            InputMode::XyzRgb => "xyz-rgb",
        })
    }
}

/// Kernel bin counts plus radial edges expressed as fractions of the layer radius.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    /// `None` for uniform shells; otherwise `q + 1` ascending fractions ending at 1.
    pub radial_fractions: Option<Vec<f64>>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            n: 8,
            p: 2,
            q: 3,
            radial_fractions: None,
        }
    }
}

impl KernelSpec {
    pub fn geometry(&self, rho: f64) -> Result<KernelGeometry> {
        let radial = match &self.radial_fractions {
            None => RadialMode::Uniform,
            Some(f) => RadialMode::Explicit(f.iter().map(|v| v * rho).collect()),
        };
        KernelGeometry::new(self.n, self.p, self.q, rho, radial)
    }

    #[inline]
    pub fn bin_count(&self) -> usize {
        self.n * self.p * self.q + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub task: Task,
    pub mlp_channels: usize,
    /// One width per octree layer; its length is the octree depth.
    pub octree_channels: Vec<usize>,
    /// Hidden widths of the fully-connected head before the `classes` output.
    pub head_channels: Vec<usize>,
    pub classes: usize,
    pub kernel: KernelSpec,
    pub input: InputMode,
    /// Include max-pooled raw features in the classification global vector.
    pub pool_raw_features: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            task: Task::Classification,
            mlp_channels: 32,
            octree_channels: vec![64, 64, 64, 128, 128, 128],
            head_channels: vec![512, 256],
            classes: 40,
            kernel: KernelSpec::default(),
            input: InputMode::Xyz,
            pool_raw_features: true,
        }
    }
}

impl NetworkConfig {
    #[inline]
    pub fn depth(&self) -> usize {
        self.octree_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.octree_channels.is_empty() {
            return Err(Error::Config("octree_channels must list at least one layer".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("class count {} must be at least 2", self.classes)));
        }
        if self.mlp_channels == 0
            || self.octree_channels.contains(&0)
            || self.head_channels.contains(&0)
        {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if let Some(f) = &self.kernel.radial_fractions {
            if f.last().map_or(true, |&v| (v - 1.0).abs() > 1e-12) {
                return Err(Error::Config("radial fractions must end at 1".into()));
            }
        }
        self.kernel.geometry(1.0)?;
        Ok(())
    }

    /// Width of the vector entering the head.
    pub fn head_input_width(&self) -> usize {
        let layers: usize = self.octree_channels.iter().sum();
        let raw = self.input.width();
        match self.task {
            Task::Classification => {
                layers + self.mlp_channels + if self.pool_raw_features { raw } else { 0 }
            }
            Task::Segmentation => layers + self.mlp_channels + raw,
        }
    }

    /// Kernel geometry of layer `l` for clouds normalized into [-1, 1]^3.
    pub fn reference_geometry(&self, l: usize) -> Result<KernelGeometry> {
        let depth = self.depth();
        if l < 1 || l > depth {
            return Err(Error::LayerOutOfRange { layer: l, depth });
        }
        let diag = 2.0 * 3f64.sqrt();
        self.kernel.geometry(diag * 2f64.powi(l as i32 - depth as i32 - 1))
    }

    /// Kernel geometry of layer `l` sized to `tree`'s root cube.
    pub fn geometry_for(&self, tree: &Octree, l: usize) -> Result<KernelGeometry> {
        self.kernel.geometry(tree.layer_radius(l)?)
    }
}

/// Row layout and neighborhoods for a batch of clouds.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    depth: usize,
    /// `layer_offsets[l]` has one entry per cloud plus a final total.
    layer_offsets: Vec<Vec<usize>>,
    convs: Vec<ConvPlan>,
    /// `ancestors[l][raw row]` = stacked row of that point's layer-`l` ancestor.
    ancestors: Vec<Vec<usize>>,
}

impl BatchPlan {
    pub fn new(config: &NetworkConfig, trees: &[&Octree]) -> Result<Self> {
        let depth = config.depth();
        if trees.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(t) = trees.iter().find(|t| t.depth() != depth) {
            return Err(Error::Config(format!(
                "octree depth {} does not match the {} configured layers",
                t.depth(),
                depth
            )));
        }
        let per_tree: Vec<Vec<ConvPlan>> = trees
            .par_iter()
            .map(|tree| {
                (1..=depth)
                    .map(|l| ConvPlan::from_tree(tree, l, &config.geometry_for(tree, l)?))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        let mut layer_offsets = vec![vec![0usize]; depth + 1];
        for tree in trees {
            for (l, offs) in layer_offsets.iter_mut().enumerate() {
                let last = *offs.last().unwrap();
                offs.push(last + tree.layer(l).len());
            }
        }
        let convs = (0..depth)
            .map(|k| {
                let plans: Vec<ConvPlan> = per_tree.iter().map(|p| p[k].clone()).collect();
                ConvPlan::stack(&plans)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut ancestors = vec![Vec::new(); depth + 1];
        for (b, tree) in trees.iter().enumerate() {
            let table = tree.ancestor_table();
            for (l, col) in table.into_iter().enumerate() {
                let base = layer_offsets[l][b];
                ancestors[l].extend(col.into_iter().map(|i| base + i));
            }
        }
        Ok(BatchPlan {
            depth,
            layer_offsets,
            convs,
            ancestors,
        })
    }

    #[inline]
    pub fn clouds(&self) -> usize {
        self.layer_offsets[0].len() - 1
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Stacked row offsets of layer `l` (0 = raw points).
    #[inline]
    pub fn offsets(&self, l: usize) -> &[usize] {
        &self.layer_offsets[l]
    }

    #[inline]
    pub fn rows(&self, l: usize) -> usize {
        *self.layer_offsets[l].last().unwrap()
    }

    /// Convolution plan producing layer `l` (1-based).
    #[inline]
    pub fn conv(&self, l: usize) -> &ConvPlan {
        &self.convs[l - 1]
    }

    #[inline]
    pub fn ancestors(&self, l: usize) -> &[usize] {
        &self.ancestors[l]
    }
}

/// Raw per-point input features: coordinates, then colors for `XyzRgb`.
pub fn raw_features<T: Real>(cloud: &PointCloud, mode: InputMode) -> Result<Matrix<T>> {
    let w = mode.width();
    let mut data = Vec::with_capacity(cloud.len() * w);
    let colors = match mode {
        InputMode::Xyz => None,
        InputMode::XyzRgb => Some(
            cloud
                .colors
                .as_ref()
                .ok_or_else(|| Error::Config("xyz-rgb input requires point colors".into()))?,
        ),
    };
    for (i, p) in cloud.points.iter().enumerate() {
        data.extend([T::of(p.x), T::of(p.y), T::of(p.z)]);
        if let Some(c) = colors {
            data.extend(c[i].iter().map(|&v| T::of(v)));
        }
    }
    Matrix::from_vec(cloud.len(), w, data)
}

#[derive(Debug, Clone)]
struct NormAct<T> {
    bn: BatchNormCache<T>,
    /// Batch-norm output, i.e. the ReLU input.
    pre_relu: Matrix<T>,
}

#[derive(Debug, Clone)]
struct ForwardCache<T> {
    task: Task,
    raw: Matrix<T>,
    mlp_act: NormAct<T>,
    /// Post-activation features, index 0 = MLP stage, `l` = octree layer `l`.
    feats: Vec<Matrix<T>>,
    conv_act: Vec<NormAct<T>>,
    head_inputs: Vec<Matrix<T>>,
    head_act: Vec<NormAct<T>>,
    /// Argmax rows of each pooled block in global-vector order (classification).
    pool_argmax: Vec<Vec<usize>>,
}

/// Intermediate activations from the most recent forward pass.
pub struct ForwardView<'a, T> {
    cache: &'a ForwardCache<T>,
}

impl<'a, T: Real> ForwardView<'a, T> {
    /// Features of octree layer `l` (0 = MLP stage over raw points).
    pub fn layer_features(&self, l: usize) -> &'a Matrix<T> {
        &self.cache.feats[l]
    }

    /// The concatenated vector fed to the head.
    pub fn head_input(&self) -> &'a Matrix<T> {
        &self.cache.head_inputs[0]
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetworkConfig,
    mlp: Linear<T>,
    mlp_bn: BatchNorm<T>,
    convs: Vec<SphericalConv<T>>,
    conv_bns: Vec<BatchNorm<T>>,
    head: Vec<Linear<T>>,
    head_bns: Vec<BatchNorm<T>>,
    cache: Option<ForwardCache<T>>,
}

impl<T: Real> Network<T> {
    pub fn new<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let raw = config.input.width();
        let mlp = Linear::new(raw, config.mlp_channels, rng);
        let mlp_bn = BatchNorm::new(config.mlp_channels);
        let bins = config.kernel.bin_count();
        let mut convs = Vec::with_capacity(config.depth());
        let mut in_ch = config.mlp_channels;
        for &out in &config.octree_channels {
            convs.push(SphericalConv::new(bins, in_ch, out, rng));
            in_ch = out;
        }
        let conv_bns = config.octree_channels[..config.depth() - 1]
            .iter()
            .map(|&c| BatchNorm::new(c))
            .collect();
        let mut head = Vec::new();
        let mut head_bns = Vec::new();
        let mut width = config.head_input_width();
        for &h in &config.head_channels {
            head.push(Linear::new(width, h, rng));
            head_bns.push(BatchNorm::new(h));
            width = h;
        }
        head.push(Linear::new(width, config.classes, rng));
        Ok(Network {
            config,
            mlp,
            mlp_bn,
            convs,
            conv_bns,
            head,
            head_bns,
            cache: None,
        })
    }

    #[inline]
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn convs(&self) -> &[SphericalConv<T>] {
        &self.convs
    }

    pub fn convs_mut(&mut self) -> &mut [SphericalConv<T>] {
        &mut self.convs
    }

    /// Activations of the last forward pass, if any.
    pub fn last_forward(&self) -> Option<ForwardView<'_, T>> {
        self.cache.as_ref().map(|cache| ForwardView { cache })
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Hash of every ReLU mask and pooling winner in the last forward pass.
    /// Two inputs with equal signatures lie on the same smooth piece.
    pub fn activation_signature(&self) -> Option<u64> {
        use std::hash::{Hash, Hasher};
        let cache = self.cache.as_ref()?;
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let acts = std::iter::once(&cache.mlp_act)
            .chain(&cache.conv_act)
            .chain(&cache.head_act);
        for act in acts {
            for v in act.pre_relu.data() {
                (*v > T::zero()).hash(&mut h);
            }
        }
        cache.pool_argmax.hash(&mut h);
        Some(h.finish())
    }

    /// Runs the batch and returns logits: one row per cloud for
    /// classification, one row per raw point for segmentation.
    pub fn forward(&mut self, plan: &BatchPlan, raw: &Matrix<T>, train: bool) -> Result<Matrix<T>> {
        let depth = self.config.depth();
        if plan.depth() != depth {
            return Err(Error::Config(format!(
                "batch plan depth {} does not match network depth {depth}",
                plan.depth()
            )));
        }
        if raw.cols() != self.config.input.width() {
            return Err(Error::shape("raw feature width", self.config.input.width(), raw.cols()));
        }
        if raw.rows() != plan.rows(0) {
            return Err(Error::shape("raw feature rows", plan.rows(0), raw.rows()));
        }

        let h = self.mlp.forward(raw)?;
        let (pre_relu, bn) = self.mlp_bn.forward(&h, train)?;
        let mut feats = vec![relu_forward(&pre_relu)];
        let mlp_act = NormAct { bn, pre_relu };

        let mut conv_act = Vec::with_capacity(depth.saturating_sub(1));
        for l in 1..=depth {
            let z = self.convs[l - 1].forward(plan.conv(l), &feats[l - 1])?;
            if l < depth {
                let (pre_relu, bn) = self.conv_bns[l - 1].forward(&z, train)?;
                feats.push(relu_forward(&pre_relu));
                conv_act.push(NormAct { bn, pre_relu });
            } else {
                feats.push(z);
            }
        }

        let mut pool_argmax = Vec::new();
        let global = match self.config.task {
            Task::Classification => {
                let mut parts = Vec::with_capacity(depth + 2);
                for l in (0..=depth).rev() {
                    let (pooled, arg) = maxpool_segments(&feats[l], plan.offsets(l))?;
                    parts.push(pooled);
                    pool_argmax.push(arg);
                }
                if self.config.pool_raw_features {
                    let (pooled, arg) = maxpool_segments(raw, plan.offsets(0))?;
                    parts.push(pooled);
                    pool_argmax.push(arg);
                }
                Matrix::hconcat(&parts.iter().collect::<Vec<_>>())?
            }
            Task::Segmentation => {
                let mut parts = vec![raw.clone(), feats[0].clone()];
                for (l, f) in feats.iter().enumerate().skip(1) {
                    parts.push(f.gather_rows(plan.ancestors(l)));
                }
                Matrix::hconcat(&parts.iter().collect::<Vec<_>>())?
            }
        };

        let mut head_inputs = Vec::with_capacity(self.head.len());
        let mut head_act = Vec::with_capacity(self.head_bns.len());
        let mut y = global;
        for k in 0..self.head.len() {
            let z = self.head[k].forward(&y)?;
            head_inputs.push(y);
            y = if k < self.head_bns.len() {
                let (pre_relu, bn) = self.head_bns[k].forward(&z, train)?;
                let out = relu_forward(&pre_relu);
                head_act.push(NormAct { bn, pre_relu });
                out
            } else {
                z
            };
        }

        self.cache = Some(ForwardCache {
            task: self.config.task,
            raw: raw.clone(),
            mlp_act,
            feats,
            conv_act,
            head_inputs,
            head_act,
            pool_argmax,
        });
        Ok(y)
    }

    /// Backpropagates `grad_logits` through the last forward pass, accumulating
    /// into every parameter's gradient buffer.
    pub fn backward(&mut self, plan: &BatchPlan, grad_logits: &Matrix<T>) -> Result<()> {
        let cache = self.cache.as_ref().ok_or(Error::NoForwardCache)?;
        let depth = self.config.depth();
        let expected_rows = match cache.task {
            Task::Classification => plan.clouds(),
            Task::Segmentation => plan.rows(0),
        };
        if grad_logits.rows() != expected_rows || grad_logits.cols() != self.config.classes {
            return Err(Error::shape(
                "logit gradient",
                format!("{}x{}", expected_rows, self.config.classes),
                format!("{}x{}", grad_logits.rows(), grad_logits.cols()),
            ));
        }
        if cache.feats[0].rows() != plan.rows(0) {
            return Err(Error::Config("batch plan differs from the forward pass".into()));
        }

        let mut g = grad_logits.clone();
        for k in (0..self.head.len()).rev() {
            if k < self.head_bns.len() {
                let act = &cache.head_act[k];
                g = relu_backward(&act.pre_relu, &g)?;
                g = self.head_bns[k].backward(&act.bn, &g)?;
            }
            g = self.head[k].backward(&cache.head_inputs[k], &g)?;
        }

        // Gradient w.r.t. each layer's post-activation features.
        let mut grads: Vec<Matrix<T>> = cache
            .feats
            .iter()
            .map(|f| Matrix::zeros(f.rows(), f.cols()))
            .collect();
        let raw_w = self.config.input.width();
        match cache.task {
            Task::Classification => {
                let mut widths: Vec<usize> = (0..=depth).rev().map(|l| cache.feats[l].cols()).collect();
                if self.config.pool_raw_features {
                    widths.push(raw_w);
                }
                let parts = g.hsplit(&widths)?;
                for (pos, l) in (0..=depth).rev().enumerate() {
                    let back = maxpool_backward(&parts[pos], &cache.pool_argmax[pos], cache.feats[l].rows())?;
                    grads[l].add_assign(&back)?;
                }
            }
            Task::Segmentation => {
                let mut widths = vec![raw_w];
                widths.extend(cache.feats.iter().map(Matrix::cols));
                let parts = g.hsplit(&widths)?;
                grads[0].add_assign(&parts[1])?;
                for l in 1..=depth {
                    let back = parts[l + 1].scatter_add_rows(plan.ancestors(l), cache.feats[l].rows());
                    grads[l].add_assign(&back)?;
                }
            }
        }

        for l in (1..=depth).rev() {
            let mut gl = std::mem::take(&mut grads[l]);
            if l < depth {
                let act = &cache.conv_act[l - 1];
                gl = relu_backward(&act.pre_relu, &gl)?;
                gl = self.conv_bns[l - 1].backward(&act.bn, &gl)?;
            }
            let gin = self.convs[l - 1].backward(plan.conv(l), &cache.feats[l - 1], &gl)?;
            grads[l - 1].add_assign(&gin)?;
        }

        let g0 = relu_backward(&cache.mlp_act.pre_relu, &grads[0])?;
        let g0 = self.mlp_bn.backward(&cache.mlp_act.bn, &g0)?;
        self.mlp.backward(&cache.raw, &g0)?;
        Ok(())
    }

    /// Class logits of a single cloud in evaluation mode.
    pub fn forward_classify(&mut self, tree: &Octree, raw: &Matrix<T>) -> Result<Vec<T>> {
        if self.config.task != Task::Classification {
            return Err(Error::Config("network is configured for segmentation".into()));
        }
        let plan = BatchPlan::new(&self.config, &[tree])?;
        Ok(self.forward(&plan, raw, false)?.into_vec())
    }

    /// Per-point logits of a single cloud in evaluation mode.
    pub fn forward_segment(&mut self, tree: &Octree, raw: &Matrix<T>) -> Result<Matrix<T>> {
        if self.config.task != Task::Segmentation {
            return Err(Error::Config("network is configured for classification".into()));
        }
        let plan = BatchPlan::new(&self.config, &[tree])?;
        self.forward(&plan, raw, false)
    }

    /// Copies every parameter and buffer into a network of another precision.
    pub fn cast<U: Real>(&mut self) -> Network<U> {
        let mut values: Vec<Vec<f64>> = Vec::new();
        self.visit_params(&mut |_, v, _| values.push(v.iter().map(|x| x.f64()).collect()));
        self.visit_buffers(&mut |_, v| values.push(v.iter().map(|x| x.f64()).collect()));
        let mut out = Network::<U>::new(self.config.clone(), &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0)).expect("validated config");
        let mut it = values.into_iter();
        out.visit_params(&mut |_, v, _| {
            for (d, s) in v.iter_mut().zip(it.next().unwrap()) {
                *d = U::of(s);
            }
        });
        out.visit_buffers(&mut |_, v| {
            for (d, s) in v.iter_mut().zip(it.next().unwrap()) {
                *d = U::of(s);
            }
        });
        out
    }
}

fn prefixed<'a, T>(
    prefix: String,
    f: &'a mut dyn FnMut(&str, &mut [T], &mut [T]),
) -> impl FnMut(&str, &mut [T], &mut [T]) + 'a {
    move |name, v, g| f(&format!("{prefix}.{name}"), v, g)
}

fn prefixed_buf<'a, T>(
    prefix: String,
    f: &'a mut dyn FnMut(&str, &mut [T]),
) -> impl FnMut(&str, &mut [T]) + 'a {
    move |name, v| f(&format!("{prefix}.{name}"), v)
}

impl<T: Real> Parameterized<T> for Network<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        self.mlp.visit_params(&mut prefixed("mlp".into(), f));
        self.mlp_bn.visit_params(&mut prefixed("mlp_bn".into(), f));
        for (l, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&mut prefixed(format!("conv{}", l + 1), f));
        }
        for (l, bn) in self.conv_bns.iter_mut().enumerate() {
            bn.visit_params(&mut prefixed(format!("conv{}_bn", l + 1), f));
        }
        for (k, fc) in self.head.iter_mut().enumerate() {
            fc.visit_params(&mut prefixed(format!("fc{}", k + 1), f));
        }
        for (k, bn) in self.head_bns.iter_mut().enumerate() {
            bn.visit_params(&mut prefixed(format!("fc{}_bn", k + 1), f));
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut [T])) {
        self.mlp_bn.visit_buffers(&mut prefixed_buf("mlp_bn".into(), f));
        for (l, bn) in self.conv_bns.iter_mut().enumerate() {
            bn.visit_buffers(&mut prefixed_buf(format!("conv{}_bn", l + 1), f));
        }
        for (k, bn) in self.head_bns.iter_mut().enumerate() {
            bn.visit_buffers(&mut prefixed_buf(format!("fc{}_bn", k + 1), f));
        }
    }
}

/// Radial fractions reproducing the 3D-CNN-like `[eps, 1, sqrt 2, sqrt 3]` shells.
pub fn cnn_analog_fractions() -> Vec<f64> {
    let rho = 3f64.sqrt();
    vec![crate::kernel::SELF_BIN_EPSILON, 1.0 / rho, SQRT_2 / rho, 1.0]
}
