//! Spherical convolution between consecutive octree layers.
//!
//! For target neuron `i` with neighborhood `N(i)` in the layer below,
//! `z_i = (1 / |N(i)|) * sum_j W[kappa(i, j)] a_j + b`, where `kappa` is the
//! kernel bin of the offset `x_j - x_i`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::KernelGeometry;
use crate::layers::{he_normal, Matrix, Parameterized};
use crate::octree::Octree;
use crate::real::Real;

/// Precomputed neighborhoods and bin assignments for one convolution.
///
/// Rows may come from several clouds stacked together; the plan only sees row
/// indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvPlan {
    sources: usize,
    bin_count: usize,
    offsets: Vec<usize>,
    members: Vec<usize>,
    bins: Vec<usize>,
    // Member positions grouped by bin, and by source row (for backward).
    bin_offsets: Vec<usize>,
    bin_pairs: Vec<(usize, usize)>,
    source_offsets: Vec<usize>,
    source_pairs: Vec<(usize, usize)>,
}

impl ConvPlan {
    /// `offsets` is a CSR over targets into `members` (source rows) and `bins`.
    pub fn new(
        sources: usize,
        bin_count: usize,
        offsets: Vec<usize>,
        members: Vec<usize>,
        bins: Vec<usize>,
    ) -> Result<Self> {
        if offsets.first() != Some(&0) || offsets.last() != Some(&members.len()) {
            return Err(Error::shape("conv plan offsets", members.len(), offsets.last().copied().unwrap_or(0)));
        }
        if members.len() != bins.len() {
            return Err(Error::shape("conv plan bins", members.len(), bins.len()));
        }
        if offsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("every convolution target needs a nonempty neighborhood".into()));
        }
        if let Some(&m) = members.iter().find(|&&m| m >= sources) {
            return Err(Error::shape("conv plan source row", format!("< {sources}"), m));
        }
        if let Some(&k) = bins.iter().find(|&&k| k >= bin_count) {
            return Err(Error::shape("conv plan bin", format!("< {bin_count}"), k));
        }
        let targets = offsets.len() - 1;
        let mut target_of = vec![0; members.len()];
        for t in 0..targets {
            target_of[offsets[t]..offsets[t + 1]].fill(t);
        }
        let (bin_offsets, bin_pairs) = group(bin_count, &bins, &target_of);
        let (source_offsets, source_pairs) = group(sources, &members, &target_of);
        Ok(ConvPlan {
            sources,
            bin_count,
            offsets,
            members,
            bins,
            bin_offsets,
            bin_pairs,
            source_offsets,
            source_pairs,
        })
    }

    /// Plan for layer `l` of `tree`, with bins assigned by `geom`.
    pub fn from_tree(tree: &Octree, l: usize, geom: &KernelGeometry) -> Result<Self> {
        let hoods = tree.neighborhoods(l)?;
        let mut offsets = Vec::with_capacity(hoods.len() + 1);
        offsets.push(0);
        let mut members = Vec::new();
        let mut bins = Vec::new();
        for h in &hoods {
            for &(j, x) in &h.members {
                members.push(j);
                bins.push(geom.bin_index(x - h.location));
            }
            offsets.push(members.len());
        }
        Self::new(tree.layer(l - 1).len(), geom.bin_count(), offsets, members, bins)
    }

    /// Block-diagonal union of plans whose rows are stacked in order.
    pub fn stack(plans: &[ConvPlan]) -> Result<Self> {
        let bin_count = plans.first().map_or(1, |p| p.bin_count);
        let mut offsets = vec![0];
        let mut members = Vec::new();
        let mut bins = Vec::new();
        let mut src_base = 0;
        for p in plans {
            if p.bin_count != bin_count {
                return Err(Error::shape("stacked plan bins", bin_count, p.bin_count));
            }
            for t in 0..p.targets() {
                for pos in p.offsets[t]..p.offsets[t + 1] {
                    members.push(src_base + p.members[pos]);
                    bins.push(p.bins[pos]);
                }
                offsets.push(members.len());
            }
            src_base += p.sources;
        }
        Self::new(src_base, bin_count, offsets, members, bins)
    }

    #[inline]
    pub fn targets(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn sources(&self) -> usize {
        self.sources
    }

    #[inline]
    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    /// `(source row, bin)` pairs of target `t`.
    pub fn neighborhood(&self, t: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let r = self.offsets[t]..self.offsets[t + 1];
        self.members[r.clone()].iter().copied().zip(self.bins[r].iter().copied())
    }

    /// How many (target, member) pairs fall in each bin.
    pub fn bin_usage(&self) -> Vec<usize> {
        self.bin_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    #[inline]
    fn degree(&self, t: usize) -> f64 {
        (self.offsets[t + 1] - self.offsets[t]) as f64
    }
}

/// Groups member positions by `key`, returning CSR offsets and `(target, position)` pairs.
fn group(keys: usize, key: &[usize], target_of: &[usize]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut counts = vec![0usize; keys + 1];
    for &k in key {
        counts[k + 1] += 1;
    }
    for k in 0..keys {
        counts[k + 1] += counts[k];
    }
    let mut cursor = counts.clone();
    let mut pairs = vec![(0, 0); key.len()];
    for (pos, &k) in key.iter().enumerate() {
        pairs[cursor[k]] = (target_of[pos], pos);
        cursor[k] += 1;
    }
    (counts, pairs)
}

/// One spherical convolution kernel: a weight matrix per bin (bin 0 is the
/// self-convolution) and a shared bias.
#[derive(Debug, Clone)]
pub struct SphericalConv<T> {
    in_ch: usize,
    out_ch: usize,
    bins: usize,
    /// `bins x out_ch x in_ch`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
}

impl<T: Real> SphericalConv<T> {
    pub fn new<R: Rng + ?Sized>(bins: usize, in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let n = bins * in_ch * out_ch;
        SphericalConv {
            in_ch,
            out_ch,
            bins,
            weight: he_normal(n, in_ch, rng),
            bias: vec![T::zero(); out_ch],
            grad_weight: vec![T::zero(); n],
            grad_bias: vec![T::zero(); out_ch],
        }
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    #[inline]
    pub fn bin_count(&self) -> usize {
        self.bins
    }

    /// `W_kappa` as an `out_ch x in_ch` slice.
    #[inline]
    pub fn bin_weight(&self, kappa: usize) -> &[T] {
        let sz = self.in_ch * self.out_ch;
        &self.weight[kappa * sz..(kappa + 1) * sz]
    }

    #[inline]
    pub fn bin_weight_mut(&mut self, kappa: usize) -> &mut [T] {
        let sz = self.in_ch * self.out_ch;
        &mut self.weight[kappa * sz..(kappa + 1) * sz]
    }

    fn check(&self, plan: &ConvPlan, input: &Matrix<T>) -> Result<()> {
        if input.cols() != self.in_ch {
            return Err(Error::shape("conv input channels", self.in_ch, input.cols()));
        }
        if input.rows() != plan.sources() {
            return Err(Error::shape("conv input rows", plan.sources(), input.rows()));
        }
        if plan.bin_count() != self.bins {
            return Err(Error::shape("conv bins", self.bins, plan.bin_count()));
        }
        Ok(())
    }

    pub fn forward(&self, plan: &ConvPlan, input: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(plan, input)?;
        let (ic, oc) = (self.in_ch, self.out_ch);
        let mut out = Matrix::zeros(plan.targets(), oc);
        out.data_mut()
            .par_chunks_mut(oc.max(1))
            .enumerate()
            .for_each(|(t, z)| {
                let mut acc = vec![0.0f64; oc];
                for (j, kappa) in plan.neighborhood(t) {
                    let a = input.row(j);
                    let w = self.bin_weight(kappa);
                    for (o, acc_o) in acc.iter_mut().enumerate() {
                        let wr = &w[o * ic..(o + 1) * ic];
                        let mut s = 0.0;
                        for (&wv, &av) in wr.iter().zip(a) {
                            s += wv.f64() * av.f64();
                        }
                        *acc_o += s;
                    }
                }
                let inv = 1.0 / plan.degree(t);
                for (o, zo) in z.iter_mut().enumerate() {
                    *zo = T::of(acc[o] * inv + self.bias[o].f64());
                }
            });
        Ok(out)
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&mut self, plan: &ConvPlan, input: &Matrix<T>, grad_out: &Matrix<T>) -> Result<Matrix<T>> {
        self.check(plan, input)?;
        if grad_out.rows() != plan.targets() || grad_out.cols() != self.out_ch {
            return Err(Error::shape(
                "conv upstream gradient",
                format!("{}x{}", plan.targets(), self.out_ch),
                format!("{}x{}", grad_out.rows(), grad_out.cols()),
            ));
        }
        let (ic, oc) = (self.in_ch, self.out_ch);

        for o in 0..oc {
            let mut s = 0.0f64;
            for t in 0..plan.targets() {
                s += grad_out.get(t, o).f64();
            }
            self.grad_bias[o] += T::of(s);
        }

        // Bins own disjoint weight blocks: one worker per bin, fixed pair order.
        let sz = ic * oc;
        self.grad_weight
            .par_chunks_mut(sz.max(1))
            .enumerate()
            .for_each(|(kappa, gw)| {
                let pairs = &plan.bin_pairs[plan.bin_offsets[kappa]..plan.bin_offsets[kappa + 1]];
                if pairs.is_empty() {
                    return;
                }
                let mut acc = vec![0.0f64; sz];
                for &(t, pos) in pairs {
                    let inv = 1.0 / plan.degree(t);
                    let a = input.row(plan.members[pos]);
                    let g = grad_out.row(t);
                    for o in 0..oc {
                        let go = g[o].f64() * inv;
                        if go == 0.0 {
                            continue;
                        }
                        for (accv, &av) in acc[o * ic..(o + 1) * ic].iter_mut().zip(a) {
                            *accv += go * av.f64();
                        }
                    }
                }
                for (w, a) in gw.iter_mut().zip(acc) {
                    *w += T::of(a);
                }
            });

        let mut grad_in = Matrix::zeros(plan.sources(), ic);
        grad_in
            .data_mut()
            .par_chunks_mut(ic.max(1))
            .enumerate()
            .for_each(|(j, gi)| {
                let pairs = &plan.source_pairs[plan.source_offsets[j]..plan.source_offsets[j + 1]];
                if pairs.is_empty() {
                    return;
                }
                let mut acc = vec![0.0f64; ic];
                for &(t, pos) in pairs {
                    let inv = 1.0 / plan.degree(t);
                    let w = self.bin_weight(plan.bins[pos]);
                    for (o, &g) in grad_out.row(t).iter().enumerate() {
                        let go = g.f64() * inv;
                        if go == 0.0 {
                            continue;
                        }
                        for (accv, &wv) in acc.iter_mut().zip(&w[o * ic..(o + 1) * ic]) {
                            *accv += go * wv.f64();
                        }
                    }
                }
                for (d, a) in gi.iter_mut().zip(acc) {
                    *d = T::of(a);
                }
            });
        Ok(grad_in)
    }
}

impl<T: Real> Parameterized<T> for SphericalConv<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [T], &mut [T])) {
        f("weight", &mut self.weight, &mut self.grad_weight);
        f("bias", &mut self.bias, &mut self.grad_bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_conv(ch: usize, bins: usize) -> SphericalConv<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = SphericalConv::<f64>::new(bins, ch, ch, &mut rng);
        conv.weight.fill(0.0);
        for k in 0..bins {
            let w = conv.bin_weight_mut(k);
            for c in 0..ch {
                w[c * ch + c] = 1.0;
            }
        }
        conv
    }

    #[test]
    fn identity_self_convolution() {
        let conv = identity_conv(3, 5);
        let plan = ConvPlan::new(1, 5, vec![0, 1], vec![0], vec![0]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        assert_eq!(conv.forward(&plan, &x).unwrap(), x);
    }

    #[test]
    fn same_bin_neighbors_average() {
        let conv = identity_conv(2, 5);
        let plan = ConvPlan::new(2, 5, vec![0, 2], vec![0, 1], vec![3, 3]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 4.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(conv.forward(&plan, &x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn single_term_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = SphericalConv::<f64>::new(2, 2, 1, &mut rng);
        conv.weight = vec![0.0, 0.0, 3.0, -1.0];
        let plan = ConvPlan::new(1, 2, vec![0, 1], vec![0], vec![1]).unwrap();
        let x = Matrix::from_rows(&[vec![2.0, 5.0]]).unwrap();
        let g = Matrix::from_rows(&[vec![4.0]]).unwrap();
        let gi = conv.backward(&plan, &x, &g).unwrap();
        assert_eq!(conv.grad_weight, vec![0.0, 0.0, 8.0, 20.0]);
        assert_eq!(conv.grad_bias, vec![4.0]);
        assert_eq!(gi.data(), &[12.0, -4.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = SphericalConv::<f64>::new(4, 3, 2, &mut rng);
        let plan = ConvPlan::new(3, 4, vec![0, 2, 3], vec![0, 1, 2], vec![1, 0, 3]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0], vec![0.5, 0.5, 0.5]]).unwrap();
        let gi = conv.backward(&plan, &x, &Matrix::zeros(2, 2)).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(conv.grad_weight.iter().all(|&v| v == 0.0));
        assert!(conv.grad_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn plan_validation() {
        assert!(ConvPlan::new(2, 3, vec![0, 0, 1], vec![0], vec![0]).is_err());
        assert!(ConvPlan::new(1, 3, vec![0, 1], vec![1], vec![0]).is_err());
        assert!(ConvPlan::new(1, 3, vec![0, 1], vec![0], vec![3]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = SphericalConv::<f64>::new(3, 2, 2, &mut rng);
        let plan = ConvPlan::new(1, 3, vec![0, 1], vec![0], vec![0]).unwrap();
        assert!(conv.forward(&plan, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn stacking_offsets_rows() {
        let a = ConvPlan::new(2, 3, vec![0, 2], vec![0, 1], vec![1, 2]).unwrap();
        let b = ConvPlan::new(1, 3, vec![0, 1], vec![0], vec![0]).unwrap();
        let s = ConvPlan::stack(&[a, b]).unwrap();
        assert_eq!(s.sources(), 3);
        assert_eq!(s.neighborhood(1).collect::<Vec<_>>(), vec![(2, 0)]);
        assert_eq!(s.bin_usage(), vec![1, 1, 1]);
    }
}
