use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use octsphere::error::{Error, Result};
use octsphere::geometry::normalize_cloud;
use octsphere::gradcheck;
use octsphere::neighbors::{bench_csv, loglog_slope, run_benchmark, BenchConfig, Registry};
use octsphere::network::{raw_features, BatchPlan, Task};
use octsphere::octree::Octree;
use octsphere::training::blocks::{make_upright, split_blocks, UpAxis};
use octsphere::training::dataset::write_dataset;
use octsphere::training::io::{self, LabelRef, ManifestEntry, Split};
use octsphere::training::{
    make_synthetic_dataset, write_metrics_csv, Checkpoint, Dataset, Prediction, RunConfig, Sample, Shape,
    SyntheticSpec, Trainer,
};

#[derive(Parser)]
#[command(name = "octsphere", version, about = "Octree-guided spherical convolution networks for point clouds")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print the default run configuration and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Build an octree and print per-layer node counts and timing.
    BuildOctree(BuildOctreeArgs),
    /// Train a network from a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Write per-point part labels predicted by a segmentation checkpoint.
    Segment(SegmentArgs),
    /// Time neighborhood construction methods on random clouds.
    BenchNeighbors(BenchArgs),
    /// Write the synthetic sphere/cube/torus dataset.
    MakeSynthetic(SyntheticArgs),
    /// Split a scene into 1 m blocks normalized with their height kept.
    PreprocessBlocks(BlocksArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct BuildOctreeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    depth: usize,
    /// Also print neighborhood sizes and kernel radii per layer.
    #[arg(long)]
    stats: bool,
    /// Time one forward pass of this checkpoint on the cloud.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    task: Option<Task>,
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Manifest with train (and optionally test) entries.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics CSV (default: the checkpoint path with `.metrics.csv`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Continue from this checkpoint instead of initializing.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// A single cloud file (written to `--out` as a label file) ...
    #[arg(long, conflicts_with = "data")]
    input: Option<PathBuf>,
    /// ... or a manifest, with one label file per cloud written into `--out`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000")]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "octree,brute-force-range,brute-force-knn")]
    methods: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Neighbor count of the brute-force K-NN baseline.
    #[arg(long, default_value_t = 32)]
    knn_k: usize,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "classification")]
    task: Task,
    #[arg(long, value_delimiter = ',', default_value = "sphere,cube,torus")]
    shapes: Vec<Shape>,
    #[arg(long, default_value_t = 500)]
    train: usize,
    #[arg(long, default_value_t = 100)]
    test: usize,
    #[arg(long, default_value_t = 512)]
    points: usize,
    #[arg(long, default_value_t = 0.01)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BlocksArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    block_size: f64,
    /// Axis pointing up in the input.
    #[arg(long, default_value = "z")]
    up: UpAxis,
    #[arg(long, default_value_t = 1)]
    min_points: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingFile(_) => 3,
        Error::Parse { .. } => 4,
        Error::Config(_)
        | Error::InvalidDepth(_)
        | Error::LayerOutOfRange { .. }
        | Error::IllegalKernel(_)
        | Error::InvalidGeometry(_)
        | Error::EmptyInput => 5,
        Error::Checkpoint(_) => 6,
        Error::CheckpointMismatch(_) => 7,
        Error::Io(_) => 8,
        Error::ShapeMismatch { .. } | Error::NoForwardCache => 9,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    if cli.print_config {
        print!("{}", RunConfig::default().to_text());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given (see --help)");
        return ExitCode::from(2);
    };
    let result = match command {
        Command::BuildOctree(a) => build_octree(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Segment(a) => segment(a),
        Command::BenchNeighbors(a) => bench(a),
        Command::MakeSynthetic(a) => synthetic(a),
        Command::PreprocessBlocks(a) => blocks(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn build_octree(a: BuildOctreeArgs) -> Result<ExitCode> {
    let cloud = io::read_point_cloud(&a.input)?;
    let start = Instant::now();
    let tree = Octree::build(&cloud, a.depth)?;
    let build_ms = ms(start);
    for (l, n) in tree.layer_sizes().iter().enumerate() {
        println!("|Q^{l}| = {n}");
    }
    println!("root count = 1");
    if a.stats {
        for l in 1..=tree.depth() {
            let layer = tree.layer(l);
            let sizes: Vec<usize> = (0..layer.len()).map(|i| layer.children_of(i).len()).collect();
            let mean = sizes.iter().sum::<usize>() as f64 / sizes.len().max(1) as f64;
            println!(
                "layer {l}: radius {:.6}, neighborhood size min {} mean {:.2} max {}",
                tree.layer_radius(l)?,
                sizes.iter().min().unwrap_or(&0),
                mean,
                sizes.iter().max().unwrap_or(&0)
            );
        }
    }
    println!("octree construction: {build_ms:.3} ms");
    if let Some(path) = a.checkpoint {
        let ck = Checkpoint::load(&path)?;
        let (mut net, _, _) = ck.restore()?;
        if net.config().depth() != a.depth {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint has {} layers but --depth is {}",
                net.config().depth(),
                a.depth
            )));
        }
        let start = Instant::now();
        let (normalized, _) = normalize_cloud(&cloud, ck.config.train.preserve_z_mean)?;
        let tree = Octree::build(&normalized, a.depth)?;
        let raw = raw_features::<f32>(&normalized, net.config().input)?;
        let plan = BatchPlan::new(net.config(), &[&tree])?;
        let prep_ms = ms(start);
        let start = Instant::now();
        net.forward(&plan, &raw, false)?;
        let fwd_ms = ms(start);
        println!("forward pass: {fwd_ms:.3} ms");
        println!("total: {:.3} ms", prep_ms + fwd_ms);
    }
    Ok(ExitCode::SUCCESS)
}

fn resolve_config(a: &TrainArgs) -> Result<(RunConfig, bool)> {
    let text = match &a.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(p.clone()),
            _ => Error::Io(e),
        })?),
        None => None,
    };
    let mut task = a.task;
    if task.is_none() {
        if let Some(t) = &text {
            task = Some(RunConfig::parse(t)?.network.task);
        }
    }
    let mut config = RunConfig::for_task(task.unwrap_or(Task::Classification));
    let mut classes_given = false;
    if let Some(t) = &text {
        config.apply_text(t)?;
        classes_given = t
            .lines()
            .any(|l| l.split('#').next().unwrap_or("").split('=').next().map(str::trim) == Some("classes"));
    }
    if let Some(t) = a.task {
        config.network.task = t;
    }
    Ok((config, classes_given))
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    v.as_ref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let (mut config, classes_given) = resolve_config(&a)?;
    if a.print_config {
        print!("{}", config.to_text());
        return Ok(ExitCode::SUCCESS);
    }
    let data = required(&a.data, "data")?;
    let out = required(&a.out, "out")?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if a.config.is_some() && ck.config.network != config.network {
                return Err(Error::CheckpointMismatch(
                    "resumed checkpoint has a different network configuration".into(),
                ));
            }
            let mut t = Trainer::from_checkpoint(&ck)?;
            if a.config.is_some() {
                t.config.train = config.train.clone();
            }
            t
        }
        None => {
            let (probe_train, _) = Dataset::from_manifest(data, config.network.task)?;
            if !classes_given {
                config.network.classes = probe_train.label_count().max(2);
            }
            Trainer::new(config)?
        }
    };
    let task = trainer.config.network.task;
    let (train_set, test_set) = Dataset::from_manifest(data, task)?;
    if train_set.is_empty() {
        return Err(Error::Config(format!("{} has no train entries", data.display())));
    }
    let test = (!test_set.is_empty()).then_some(&test_set);
    let start = Instant::now();
    let records = trainer.fit(&train_set, test, |r| {
        let test_part = r
            .test
            .as_ref()
            .map(|e| format!(", test loss {:.4} metric {:.2}", e.loss, e.metric(task)))
            .unwrap_or_default();
        eprintln!(
            "epoch {}: train loss {:.4} metric {:.2}{} ({:.1} s)",
            r.epoch,
            r.train_loss,
            r.train_metric,
            test_part,
            start.elapsed().as_secs_f64()
        );
    })?;
    trainer.checkpoint()?.save(out)?;
    let metrics = a.metrics.clone().unwrap_or_else(|| sibling(out, "metrics.csv"));
    write_metrics_csv(&metrics, &records, task)?;
    println!("checkpoint: {}", out.display());
    println!("metrics: {}", metrics.display());
    Ok(ExitCode::SUCCESS)
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut trainer = Trainer::from_checkpoint(&ck)?;
    let task = trainer.config.network.task;
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        s => return Err(Error::Config(format!("unknown split '{s}'"))),
    };
    let entries = io::read_manifest(&a.data)?;
    let data = Dataset::load(&entries, task, split)?;
    if data.is_empty() {
        return Err(Error::Config(format!("no {} entries in {}", a.split, a.data.display())));
    }
    let e = trainer.evaluate(&data)?;
    println!("clouds: {}", data.len());
    println!("loss: {:.6}", e.loss);
    match task {
        Task::Classification => {
            println!("instance accuracy: {:.2}", e.instance_accuracy);
            println!("class accuracy: {:.2}", e.class_accuracy);
        }
        Task::Segmentation => println!("mIoU: {:.2}", e.miou),
    }
    Ok(ExitCode::SUCCESS)
}

fn segment(a: SegmentArgs) -> Result<ExitCode> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut trainer = Trainer::from_checkpoint(&ck)?;
    if trainer.config.network.task != Task::Segmentation {
        return Err(Error::CheckpointMismatch("checkpoint is not a segmentation network".into()));
    }
    let sample = |path: &Path| -> Result<Sample> {
        let mut cloud = io::read_point_cloud(path)?;
        cloud.labels = None;
        Ok(Sample {
            name: path.display().to_string(),
            cloud,
            class: None,
        })
    };
    let (paths, samples): (Vec<PathBuf>, Vec<Sample>) = match (&a.input, &a.data) {
        (Some(p), None) => (vec![a.out.clone()], vec![sample(p)?]),
        (None, Some(m)) => {
            std::fs::create_dir_all(&a.out)?;
            let entries = io::read_manifest(m)?;
            let mut paths = Vec::new();
            let mut samples = Vec::new();
            for e in &entries {
                let stem = e.cloud.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                paths.push(a.out.join(format!("{stem}.labels")));
                samples.push(sample(&e.cloud)?);
            }
            (paths, samples)
        }
        _ => return Err(Error::Config("give exactly one of --input or --data".into())),
    };
    let data = Dataset {
        task: Task::Segmentation,
        samples,
    };
    let preds = trainer.predict(&data)?;
    for (path, p) in paths.iter().zip(preds) {
        if let Prediction::Parts(labels) = p {
            io::write_labels(path, &labels)?;
        }
    }
    println!("wrote {} label file(s)", paths.len());
    Ok(ExitCode::SUCCESS)
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let mut registry = Registry::default();
    registry.register(Box::new(octsphere::neighbors::BruteForceKnn { k: a.knn_k }));
    let config = BenchConfig {
        sizes: a.sizes,
        methods: a.methods,
        depth: a.depth,
        repeats: a.repeats,
        seed: a.seed,
    };
    let rows = run_benchmark(&registry, &config)?;
    std::fs::write(&a.out, bench_csv(&rows))?;
    for r in &rows {
        println!("{:<20} n={:<8} {:>12.3} ms", r.method, r.n_points, r.ms);
    }
    for m in &config.methods {
        if let Some(s) = loglog_slope(&rows, m) {
            println!("log-log slope {m}: {s:.3}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn synthetic(a: SyntheticArgs) -> Result<ExitCode> {
    let base = SyntheticSpec {
        shapes: a.shapes,
        count: a.train,
        points_per_cloud: a.points,
        jitter: a.jitter,
        seed: a.seed,
        task: a.task,
    };
    let train = make_synthetic_dataset(&base)?;
    let test = make_synthetic_dataset(&SyntheticSpec {
        count: a.test,
        seed: a.seed ^ 0x7e57_7e57_7e57_7e57,
        ..base
    })?;
    let manifest = write_dataset(&a.out, &train, &test)?;
    println!("manifest: {}", manifest.display());
    Ok(ExitCode::SUCCESS)
}

fn blocks(a: BlocksArgs) -> Result<ExitCode> {
    let cloud = make_upright(&io::read_point_cloud(&a.input)?, a.up);
    let blocks = split_blocks(&cloud, a.block_size, a.min_points)?;
    std::fs::create_dir_all(&a.out)?;
    let labeled = cloud.labels.is_some();
    let mut entries = Vec::new();
    for b in &blocks {
        let [x, y, z] = b.cell;
        let path = a.out.join(format!("block_{x}_{y}_{z}.txt"));
        io::write_point_cloud(&path, &b.cloud)?;
        entries.push(ManifestEntry {
            cloud: path,
            label: LabelRef::Inline,
            split: Split::Train,
        });
    }
    if labeled {
        io::write_manifest(&a.out.join("manifest.tsv"), &entries)?;
    }
    println!("wrote {} block(s)", blocks.len());
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let seed = a.seed.unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0)
    });
    println!("seed {seed}");
    let results = gradcheck::run_all(seed)?;
    let mut ok = true;
    for r in &results {
        println!("{r}");
        ok &= r.passed();
    }
    if ok {
        println!("all {} checks passed", results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradient check FAILED");
        Ok(ExitCode::from(1))
    }
}
