//! `key = value` run configuration. Blank lines and `#` comments are ignored;
//! unknown keys are errors. [`RunConfig::to_text`] prints every key.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::{NetworkConfig, Task};
use crate::training::augment::AugmentConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub lr_decay_every: usize,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Keep the vertical mean when normalizing (upright scene data).
    pub preserve_z_mean: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.1,
            lr_decay: 0.5,
            lr_decay_every: 20,
            momentum: 0.9,
            batch_size: 16,
            seed: 1,
            augment: AugmentConfig::default(),
            preserve_z_mean: false,
        }
    }
}

impl TrainConfig {
    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = if self.lr_decay_every == 0 { 0 } else { epoch / self.lr_decay_every };
        self.lr * self.lr_decay.powi(steps as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        let a = &self.augment;
        if !(a.keep_ratio > 0.0 && a.keep_ratio <= 1.0) {
            return Err(Error::Config(format!("keep_ratio {} outside (0, 1]", a.keep_ratio)));
        }
        if a.translate_std < 0.0 || a.max_rotation < 0.0 {
            return Err(Error::Config("augmentation magnitudes must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let n = &mut self.network;
        let t = &mut self.train;
        match key {
            "task" => n.task = v.parse()?,
            "mlp_channels" => n.mlp_channels = parse(key, v)?,
            "octree_channels" => n.octree_channels = parse_list(key, v)?,
            "head_channels" => n.head_channels = parse_list(key, v)?,
            "classes" => n.classes = parse(key, v)?,
            "kernel" => {
                let dims: Vec<usize> = v
                    .split('x')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?;
                let [kn, kp, kq] = dims[..] else {
                    return Err(Error::Config(format!("kernel '{v}' is not NxPxQ")));
                };
                n.kernel.n = kn;
                n.kernel.p = kp;
                n.kernel.q = kq;
            }
            "radial_fractions" => {
                n.kernel.radial_fractions = match v {
                    "uniform" => None,
                    _ => Some(parse_list(key, v)?),
                }
            }
            "input" => n.input = v.parse()?,
            "pool_raw_features" => n.pool_raw_features = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "lr_decay" => t.lr_decay = parse(key, v)?,
            "lr_decay_every" => t.lr_decay_every = parse(key, v)?,
            "momentum" => t.momentum = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "preserve_z_mean" => t.preserve_z_mean = parse(key, v)?,
            "augment_subsample" => t.augment.subsample = parse(key, v)?,
            "keep_ratio" => t.augment.keep_ratio = parse(key, v)?,
            "augment_rotate" => t.augment.rotate = parse(key, v)?,
            "max_rotation" => t.augment.max_rotation = parse(key, v)?,
            "augment_translate" => t.augment.translate = parse(key, v)?,
            "translate_std" => t.augment.translate_std = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        RunConfig::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let n = &self.network;
        let t = &self.train;
        let a = &t.augment;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("task", n.task.to_string());
        kv("mlp_channels", n.mlp_channels.to_string());
        kv("octree_channels", list(&n.octree_channels));
        kv("head_channels", list(&n.head_channels));
        kv("classes", n.classes.to_string());
        kv("kernel", format!("{}x{}x{}", n.kernel.n, n.kernel.p, n.kernel.q));
        kv(
            "radial_fractions",
            match &n.kernel.radial_fractions {
                None => "uniform".into(),
                Some(f) => f.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            },
        );
        kv("input", n.input.to_string());
        kv("pool_raw_features", n.pool_raw_features.to_string());
        kv("epochs", t.epochs.to_string());
        kv("lr", t.lr.to_string());
        kv("lr_decay", t.lr_decay.to_string());
        kv("lr_decay_every", t.lr_decay_every.to_string());
        kv("momentum", t.momentum.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("seed", t.seed.to_string());
        kv("preserve_z_mean", t.preserve_z_mean.to_string());
        kv("augment_subsample", a.subsample.to_string());
        kv("keep_ratio", a.keep_ratio.to_string());
        kv("augment_rotate", a.rotate.to_string());
        kv("max_rotation", a.max_rotation.to_string());
        kv("augment_translate", a.translate.to_string());
        kv("translate_std", a.translate_std.to_string());
        s
    }

    /// Defaults for a task: segmentation swaps in the three-layer trunk.
    pub fn for_task(task: Task) -> RunConfig {
        let mut c = RunConfig::default();
        c.network.task = task;
        if task == Task::Segmentation {
            c.network.octree_channels = vec![64, 128, 256];
            c.network.classes = 2;
        }
        c
    }
}
