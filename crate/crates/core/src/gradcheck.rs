//! Central finite-difference checks of every differentiable operation, in f64.
//!
//! Each check contracts the operation's output with a fixed random tensor `R`
//! so the scalar loss is `sum(y * R)` and the upstream gradient is `R`. A probe
//! whose `+h` and `-h` evaluations land on different ReLU masks or pooling
//! winners straddles a kink; it is reported as skipped instead of compared.

use std::fmt;
use std::hash::{Hash, Hasher};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::layers::{
    maxpool_backward, maxpool_segments, relu_backward, relu_forward, softmax_cross_entropy, BatchNorm, ConvPlan,
    Linear, Matrix, Parameterized, SphericalConv,
};
use crate::network::{raw_features, BatchPlan, InputMode, Network, NetworkConfig, Task};
use crate::octree::Octree;

pub const STEP: f64 = 1e-4;
pub const OP_TOLERANCE: f64 = 1e-5;
pub const END_TO_END_TOLERANCE: f64 = 1e-4;
pub const PROBES: usize = 100;
/// Denominator floor: gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub probes: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.probes > self.skipped && self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} max rel err {:.3e} (tol {:.0e}, {} probes, {} skipped)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_error,
            self.tolerance,
            self.probes,
            self.skipped
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

type Eval<'a> = dyn FnMut(usize, f64) -> Result<(f64, u64)> + 'a;

/// Compares `analytic[i]` with `(f(i, +h) - f(i, -h)) / 2h` on up to `probes`
/// coordinates. `f(i, d)` evaluates the loss with coordinate `i` shifted by
/// `d` and returns it with an activation signature.
pub fn check_coordinates<R: Rng + ?Sized>(
    name: &str,
    analytic: &[f64],
    probes: usize,
    tolerance: f64,
    rng: &mut R,
    f: &mut Eval<'_>,
) -> Result<CheckResult> {
    let picks: Vec<usize> = if analytic.len() <= probes {
        (0..analytic.len()).collect()
    } else {
        let mut v = index::sample(rng, analytic.len(), probes).into_vec();
        v.sort_unstable();
        v
    };
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for &i in &picks {
        let (plus, sig_p) = f(i, STEP)?;
        let (minus, sig_m) = f(i, -STEP)?;
        if sig_p != sig_m {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(CheckResult {
        name: name.to_string(),
        probes: picks.len(),
        skipped,
        max_rel_error: worst,
        tolerance,
    })
}

fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix<f64> {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn contract(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn signature<H: Hash>(v: &H) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    v.hash(&mut h);
    h.finish()
}

fn relu_mask(x: &Matrix<f64>) -> u64 {
    signature(&x.data().iter().map(|&v| v > 0.0).collect::<Vec<_>>())
}

/// Sets parameter `i` of tensor `t` (visit order) and returns the old value.
fn set_param<M: Parameterized<f64> + ?Sized>(m: &mut M, t: usize, i: usize, value: f64) -> f64 {
    let mut k = 0;
    let mut old = 0.0;
    m.visit_params(&mut |_, v, _| {
        if k == t {
            old = v[i];
            v[i] = value;
        }
        k += 1;
    });
    old
}

fn grads_of<M: Parameterized<f64> + ?Sized>(m: &mut M) -> Vec<(String, Vec<f64>)> {
    let mut out = Vec::new();
    m.visit_params(&mut |name, _, g| out.push((name.to_string(), g.to_vec())));
    out
}

/// One check per parameter tensor of `module`, whose gradient buffers must
/// already hold the analytic gradient of `loss`.
fn check_params<M, R>(
    prefix: &str,
    module: &mut M,
    tolerance: f64,
    rng: &mut R,
    loss: &mut dyn FnMut(&mut M) -> Result<(f64, u64)>,
) -> Result<Vec<CheckResult>>
where
    M: Parameterized<f64>,
    R: Rng + ?Sized,
{
    let grads = grads_of(module);
    let mut out = Vec::new();
    for (t, (name, g)) in grads.iter().enumerate() {
        let mut eval = |i: usize, d: f64| {
            let orig = set_param(module, t, i, 0.0);
            set_param(module, t, i, orig + d);
            let r = loss(module);
            set_param(module, t, i, orig);
            r
        };
        out.push(check_coordinates(
            &format!("{prefix}.{name}"),
            g,
            PROBES,
            tolerance,
            rng,
            &mut eval,
        )?);
    }
    Ok(out)
}

fn check_input<R: Rng + ?Sized>(
    name: &str,
    x: &Matrix<f64>,
    analytic: &Matrix<f64>,
    rng: &mut R,
    loss: &mut dyn FnMut(&Matrix<f64>) -> Result<(f64, u64)>,
) -> Result<CheckResult> {
    let mut eval = |i: usize, d: f64| {
        let mut x2 = x.clone();
        x2.data_mut()[i] += d;
        loss(&x2)
    };
    check_coordinates(name, analytic.data(), PROBES, OP_TOLERANCE, rng, &mut eval)
}

pub fn check_linear<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<CheckResult>> {
    let x = random_matrix(20, 8, rng);
    let mut lin = Linear::<f64>::new(8, 6, rng);
    lin.bias.iter_mut().for_each(|b| *b = rng.sample(StandardNormal));
    let r = random_matrix(20, 6, rng);
    let gin = lin.backward(&x, &r)?;
    let probe = lin.clone();
    let mut out = vec![check_input("linear.input", &x, &gin, rng, &mut |x| {
        Ok((contract(&probe.forward(x)?, &r), 0))
    })?];
    out.extend(check_params("linear", &mut lin, OP_TOLERANCE, rng, &mut |m| {
        Ok((contract(&m.forward(&x)?, &r), 0))
    })?);
    Ok(out)
}

pub fn check_batchnorm<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<CheckResult>> {
    let x = random_matrix(40, 4, rng).map(|v| 2.0 * v + 0.5);
    let mut bn = BatchNorm::<f64>::new(4);
    for (g, b) in bn.gamma.iter_mut().zip(bn.beta.iter_mut()) {
        *g = 1.0 + 0.5 * rng.sample::<f64, _>(StandardNormal);
        *b = rng.sample(StandardNormal);
    }
    let r = random_matrix(40, 4, rng);
    let (_, cache) = bn.forward(&x, true)?;
    let gin = bn.backward(&cache, &r)?;
    let mut probe = bn.clone();
    let mut out = vec![check_input("batchnorm.input", &x, &gin, rng, &mut |x| {
        Ok((contract(&probe.forward(x, true)?.0, &r), 0))
    })?];
    out.extend(check_params("batchnorm", &mut bn, OP_TOLERANCE, rng, &mut |m| {
        Ok((contract(&m.forward(&x, true)?.0, &r), 0))
    })?);
    Ok(out)
}

pub fn check_relu<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<CheckResult>> {
    // Magnitudes in [0.1, 1] keep every probe away from the kink.
    let x = random_matrix(20, 6, rng).map(|v| v.signum() * (0.1 + 0.9 * v.abs().fract()));
    let r = random_matrix(20, 6, rng);
    let gin = relu_backward(&x, &r)?;
    Ok(vec![check_input("relu.input", &x, &gin, rng, &mut |x| {
        Ok((contract(&relu_forward(x), &r), relu_mask(x)))
    })?])
}

pub fn check_maxpool<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<CheckResult>> {
    let offsets = [0, 7, 15, 30];
    let x = random_matrix(30, 5, rng);
    let r = random_matrix(3, 5, rng);
    let (_, arg) = maxpool_segments(&x, &offsets)?;
    let gin = maxpool_backward(&r, &arg, x.rows())?;
    Ok(vec![check_input("maxpool.input", &x, &gin, rng, &mut |x| {
        let (y, arg) = maxpool_segments(x, &offsets)?;
        Ok((contract(&y, &r), signature(&arg)))
    })?])
}

pub fn check_softmax_cross_entropy<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<CheckResult>> {
    let logits = random_matrix(30, 5, rng).map(|v| 2.0 * v);
    let targets: Vec<usize> = (0..30).map(|_| rng.random_range(0..5)).collect();
    let (_, grad) = softmax_cross_entropy(&logits, &targets)?;
    Ok(vec![check_input("cross_entropy.logits", &logits, &grad, rng, &mut |z| {
        Ok((softmax_cross_entropy(z, &targets)?.0, 0))
    })?])
}

fn random_points<R: Rng + ?Sized>(n: usize, rng: &mut R) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect(),
    )
}

pub fn check_spherical_conv<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<CheckResult>> {
    let config = NetworkConfig {
        octree_channels: vec![4, 4],
        ..Default::default()
    };
    let trees = [
        Octree::build(&random_points(40, rng), 2)?,
        Octree::build(&random_points(25, rng), 2)?,
    ];
    let mut out = Vec::new();
    for l in 1..=2 {
        let plans = trees
            .iter()
            .map(|t| ConvPlan::from_tree(t, l, &config.geometry_for(t, l)?))
            .collect::<Result<Vec<_>>>()?;
        let plan = ConvPlan::stack(&plans)?;
        let x = random_matrix(plan.sources(), 3, rng);
        let mut conv = SphericalConv::<f64>::new(plan.bin_count(), 3, 4, rng);
        conv.bias.iter_mut().for_each(|b| *b = rng.sample(StandardNormal));
        let r = random_matrix(plan.targets(), 4, rng);
        let gin = conv.backward(&plan, &x, &r)?;
        let probe = conv.clone();
        let name = format!("conv.layer{l}");
        out.push(check_input(&format!("{name}.input"), &x, &gin, rng, &mut |x| {
            Ok((contract(&probe.forward(&plan, x)?, &r), 0))
        })?);
        // Restrict weight probes to bins this plan actually uses.
        let used: Vec<usize> = plan
            .bin_usage()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(b, _)| b)
            .collect();
        let per_bin = 3 * 4;
        let coords: Vec<usize> = used.iter().flat_map(|&b| b * per_bin..(b + 1) * per_bin).collect();
        let analytic: Vec<f64> = coords.iter().map(|&c| conv.grad_weight[c]).collect();
        let mut eval = |i: usize, d: f64| {
            let mut m = conv.clone();
            m.weight[coords[i]] += d;
            Ok((contract(&m.forward(&plan, &x)?, &r), 0))
        };
        out.push(check_coordinates(
            &format!("{name}.weight"),
            &analytic,
            PROBES,
            OP_TOLERANCE,
            rng,
            &mut eval,
        )?);
        let mut eval = |i: usize, d: f64| {
            let mut m = conv.clone();
            m.bias[i] += d;
            Ok((contract(&m.forward(&plan, &x)?, &r), 0))
        };
        let gb = conv.grad_bias.clone();
        out.push(check_coordinates(&format!("{name}.bias"), &gb, PROBES, OP_TOLERANCE, rng, &mut eval)?);
    }
    Ok(out)
}

/// A small network of each task checked on every parameter.
pub fn check_end_to_end<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for task in [Task::Classification, Task::Segmentation] {
        let config = NetworkConfig {
            task,
            mlp_channels: 4,
            octree_channels: vec![4, 5],
            head_channels: vec![6],
            classes: 3,
            input: InputMode::Xyz,
            ..Default::default()
        };
        let clouds: Vec<PointCloud> = [24, 18, 30].iter().map(|&n| random_points(n, rng)).collect();
        let trees = clouds
            .iter()
            .map(|c| Octree::build(c, 2))
            .collect::<Result<Vec<_>>>()?;
        let plan = BatchPlan::new(&config, &trees.iter().collect::<Vec<_>>())?;
        let raws = clouds
            .iter()
            .map(|c| raw_features::<f64>(c, config.input))
            .collect::<Result<Vec<_>>>()?;
        let raw = Matrix::vstack(&raws)?;
        let rows = match task {
            Task::Classification => clouds.len(),
            Task::Segmentation => raw.rows(),
        };
        let targets: Vec<usize> = (0..rows).map(|_| rng.random_range(0..config.classes)).collect();
        let mut net = Network::<f64>::new(config, rng)?;

        let logits = net.forward(&plan, &raw, true)?;
        let (_, grad) = softmax_cross_entropy(&logits, &targets)?;
        net.backward(&plan, &grad)?;

        let grads = grads_of(&mut net);
        let flat: Vec<f64> = grads.iter().flat_map(|(_, g)| g.iter().copied()).collect();
        let mut locate = Vec::with_capacity(flat.len());
        for (t, (_, g)) in grads.iter().enumerate() {
            locate.extend((0..g.len()).map(|i| (t, i)));
        }
        let mut eval = |k: usize, d: f64| {
            let (t, i) = locate[k];
            let orig = set_param(&mut net, t, i, 0.0);
            set_param(&mut net, t, i, orig + d);
            let logits = net.forward(&plan, &raw, true);
            let sig = net.activation_signature().unwrap_or(0);
            set_param(&mut net, t, i, orig);
            let (loss, _) = softmax_cross_entropy(&logits?, &targets)?;
            Ok((loss, sig))
        };
        out.push(check_coordinates(
            &format!("network.{task}"),
            &flat,
            flat.len(),
            END_TO_END_TOLERANCE,
            rng,
            &mut eval,
        )?);
    }
    Ok(out)
}

/// The full suite under `seed`.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.extend(check_linear(&mut rng)?);
    out.extend(check_batchnorm(&mut rng)?);
    out.extend(check_relu(&mut rng)?);
    out.extend(check_maxpool(&mut rng)?);
    out.extend(check_softmax_cross_entropy(&mut rng)?);
    out.extend(check_spherical_conv(&mut rng)?);
    out.extend(check_end_to_end(&mut rng)?);
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}
