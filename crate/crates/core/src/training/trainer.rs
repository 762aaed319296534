use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::layers::{softmax_cross_entropy, Matrix, Parameterized};
use crate::network::{raw_features, BatchPlan, Network, Task};
use crate::octree::Octree;
use crate::training::augment::augment;
use crate::training::checkpoint::Checkpoint;
use crate::training::config::RunConfig;
use crate::training::dataset::Dataset;
use crate::training::metrics::{mean_iou, ConfusionMatrix};
use crate::training::sgd::Sgd;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Classification only.
    pub class_accuracy: f64,
    pub instance_accuracy: f64,
    /// Segmentation only.
    pub miou: f64,
}

impl Evaluation {
    /// The headline metric for a task: instance accuracy or mIoU.
    pub fn metric(&self, task: Task) -> f64 {
        match task {
            Task::Classification => self.instance_accuracy,
            Task::Segmentation => self.miou,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_loss: f64,
    pub train_metric: f64,
    pub test: Option<Evaluation>,
}

/// Per-cloud predictions: one class, or one label per point.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class(usize),
    Parts(Vec<usize>),
}

struct Batch {
    plan: BatchPlan,
    raw: Matrix<f32>,
    targets: Vec<usize>,
    /// Raw-row offsets per cloud.
    offsets: Vec<usize>,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub struct Trainer {
    pub config: RunConfig,
    pub net: Network<f32>,
    pub opt: Sgd<f32>,
    pub rng: ChaCha8Rng,
    /// Epochs completed.
    pub epoch: u64,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let net = Network::new(config.network.clone(), &mut rng)?;
        Ok(Trainer {
            opt: Sgd::new(config.train.momentum),
            config,
            net,
            rng,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (net, opt, rng) = ck.restore()?;
        Ok(Trainer {
            config: ck.config.clone(),
            net,
            opt,
            rng,
            epoch: ck.epoch,
        })
    }

    pub fn checkpoint(&mut self) -> Result<Checkpoint> {
        Checkpoint::capture(&self.config, &mut self.net, &self.opt, &self.rng, self.epoch)
    }

    fn task(&self) -> Task {
        self.config.network.task
    }

    fn batch(&self, clouds: Vec<PointCloud>, classes: &[Option<usize>]) -> Result<Batch> {
        let net_cfg = &self.config.network;
        let depth = net_cfg.depth();
        let trees = clouds
            .par_iter()
            .map(|c| Octree::build(c, depth))
            .collect::<Result<Vec<_>>>()?;
        let plan = BatchPlan::new(net_cfg, &trees.iter().collect::<Vec<_>>())?;
        let raws = clouds
            .iter()
            .map(|c| raw_features::<f32>(c, net_cfg.input))
            .collect::<Result<Vec<_>>>()?;
        let raw = Matrix::vstack(&raws)?;
        let targets = match self.task() {
            Task::Classification => classes
                .iter()
                .map(|c| c.ok_or_else(|| Error::Config("sample without a class label".into())))
                .collect::<Result<_>>()?,
            Task::Segmentation => {
                let mut t = Vec::with_capacity(raw.rows());
                for c in &clouds {
                    t.extend_from_slice(
                        c.labels
                            .as_deref()
                            .ok_or_else(|| Error::Config("sample without point labels".into()))?,
                    );
                }
                t
            }
        };
        let offsets = plan.offsets(0).to_vec();
        Ok(Batch {
            plan,
            raw,
            targets,
            offsets,
        })
    }

    /// Batches of indices; a trailing single-cloud batch is dropped when training
    /// classification, since batch statistics over one row are degenerate.
    fn chunks(&self, order: &[usize], training: bool) -> Vec<Vec<usize>> {
        let bs = self.config.train.batch_size;
        let mut out: Vec<Vec<usize>> = order.chunks(bs).map(<[usize]>::to_vec).collect();
        if training
            && self.task() == Task::Classification
            && out.len() > 1
            && out.last().is_some_and(|c| c.len() == 1)
        {
            out.pop();
        }
        out
    }

    /// One pass over `data` (already normalized). Returns mean loss and the
    /// task metric over the training batches.
    pub fn train_epoch_normalized(&mut self, data: &Dataset) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        let lr = self.config.train.lr_at(self.epoch as usize);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let classes = self.config.network.classes;
        let mut confusion = ConfusionMatrix::new(classes);
        let mut seg_scores = Vec::new();
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in self.chunks(&order, true) {
            let aug = &self.config.train.augment;
            let clouds: Vec<PointCloud> = chunk
                .iter()
                .map(|&i| {
                    let c = &data.samples[i].cloud;
                    if aug.any() {
                        augment(c, aug, &mut self.rng)
                    } else {
                        c.clone()
                    }
                })
                .collect();
            let labels: Vec<Option<usize>> = chunk.iter().map(|&i| data.samples[i].class).collect();
            let batch = self.batch(clouds, &labels)?;
            self.net.zero_grad();
            let logits = self.net.forward(&batch.plan, &batch.raw, true)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &batch.targets)?;
            self.net.backward(&batch.plan, &grad)?;
            self.opt.step(&mut self.net, lr)?;
            self.score(&logits, &batch, &mut confusion, &mut seg_scores)?;
            loss_sum += loss;
            batches += 1;
        }
        self.net.clear_cache();
        self.epoch += 1;
        let metric = match self.task() {
            Task::Classification => confusion.instance_accuracy(),
            Task::Segmentation => seg_mean(&seg_scores),
        };
        Ok((loss_sum / batches.max(1) as f64, metric))
    }

    fn score(
        &self,
        logits: &Matrix<f32>,
        batch: &Batch,
        confusion: &mut ConfusionMatrix,
        seg: &mut Vec<f64>,
    ) -> Result<()> {
        match self.task() {
            Task::Classification => {
                for (r, &t) in batch.targets.iter().enumerate() {
                    confusion.add(t, argmax(logits.row(r)))?;
                }
            }
            Task::Segmentation => {
                let parts: Vec<usize> = (0..self.config.network.classes).collect();
                for w in batch.offsets.windows(2) {
                    let pred: Vec<usize> = (w[0]..w[1]).map(|r| argmax(logits.row(r))).collect();
                    let truth = &batch.targets[w[0]..w[1]];
                    seg.push(mean_iou([(truth, &pred[..], &parts[..])])?);
                }
            }
        }
        Ok(())
    }

    fn run_eval(&mut self, data: &Dataset) -> Result<(Evaluation, Vec<Prediction>)> {
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        let classes = self.config.network.classes;
        let mut confusion = ConfusionMatrix::new(classes);
        let mut seg_scores = Vec::new();
        let mut preds = Vec::with_capacity(data.len());
        let (mut loss_sum, mut rows) = (0.0, 0usize);
        let order: Vec<usize> = (0..data.len()).collect();
        for chunk in self.chunks(&order, false) {
            let clouds = chunk.iter().map(|&i| data.samples[i].cloud.clone()).collect();
            let labels: Vec<Option<usize>> = chunk.iter().map(|&i| data.samples[i].class).collect();
            let batch = self.batch(clouds, &labels)?;
            let logits = self.net.forward(&batch.plan, &batch.raw, false)?;
            let (loss, _) = softmax_cross_entropy(&logits, &batch.targets)?;
            loss_sum += loss * logits.rows() as f64;
            rows += logits.rows();
            self.score(&logits, &batch, &mut confusion, &mut seg_scores)?;
            match self.task() {
                Task::Classification => {
                    preds.extend((0..logits.rows()).map(|r| Prediction::Class(argmax(logits.row(r)))))
                }
                Task::Segmentation => preds.extend(
                    batch
                        .offsets
                        .windows(2)
                        .map(|w| Prediction::Parts((w[0]..w[1]).map(|r| argmax(logits.row(r))).collect())),
                ),
            }
        }
        self.net.clear_cache();
        let eval = Evaluation {
            loss: loss_sum / rows.max(1) as f64,
            class_accuracy: confusion.class_accuracy(),
            instance_accuracy: confusion.instance_accuracy(),
            miou: seg_mean(&seg_scores),
        };
        Ok((eval, preds))
    }

    fn normalize(&self, data: &Dataset) -> Result<Dataset> {
        if data.task != self.task() {
            return Err(Error::Config(format!(
                "dataset is for {} but the network does {}",
                data.task,
                self.task()
            )));
        }
        data.check_labels(self.config.network.classes)?;
        data.normalized(self.config.train.preserve_z_mean)
    }

    pub fn train_epoch(&mut self, data: &Dataset) -> Result<(f64, f64)> {
        let data = self.normalize(data)?;
        self.train_epoch_normalized(&data)
    }

    /// Metrics on `data` in evaluation mode.
    pub fn evaluate(&mut self, data: &Dataset) -> Result<Evaluation> {
        let data = self.normalize(data)?;
        Ok(self.run_eval(&data)?.0)
    }

    /// Per-cloud predictions in evaluation mode. Segmentation samples need no labels.
    pub fn predict(&mut self, data: &Dataset) -> Result<Vec<Prediction>> {
        let mut data = data.clone();
        for s in &mut data.samples {
            match self.task() {
                Task::Classification => {
                    s.class.get_or_insert(0);
                }
                Task::Segmentation => {
                    if s.cloud.labels.is_none() {
                        s.cloud.labels = Some(vec![0; s.cloud.len()]);
                    }
                }
            }
        }
        let data = data.normalized(self.config.train.preserve_z_mean)?;
        Ok(self.run_eval(&data)?.1)
    }

    /// Trains until `config.train.epochs` epochs are complete, evaluating on
    /// `test` after each. `on_epoch` sees every record as it is produced.
    pub fn fit(
        &mut self,
        train: &Dataset,
        test: Option<&Dataset>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        let train = self.normalize(train)?;
        let test = test.map(|t| self.normalize(t)).transpose()?;
        let mut records = Vec::new();
        while (self.epoch as usize) < self.config.train.epochs {
            let (train_loss, train_metric) = self.train_epoch_normalized(&train)?;
            let test_eval = match &test {
                Some(t) if !t.is_empty() => Some(self.run_eval(t)?.0),
                _ => None,
            };
            let rec = EpochRecord {
                epoch: self.epoch,
                train_loss,
                train_metric,
                test: test_eval,
            };
            on_epoch(&rec);
            records.push(rec);
        }
        Ok(records)
    }
}

fn seg_mean(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Metrics CSV `epoch,split,loss,metric`.
pub fn metrics_csv(records: &[EpochRecord], task: Task) -> String {
    let mut s = String::from("epoch,split,loss,metric\n");
    for r in records {
        writeln!(s, "{},train,{},{}", r.epoch, r.train_loss, r.train_metric).unwrap();
        if let Some(t) = &r.test {
            writeln!(s, "{},test,{},{}", r.epoch, t.loss, t.metric(task)).unwrap();
        }
    }
    s
}

pub fn write_metrics_csv(path: &Path, records: &[EpochRecord], task: Task) -> Result<()> {
    std::fs::write(path, metrics_csv(records, task))?;
    Ok(())
}
