use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use rdense::analyzer;
use rdense::arch::{preset_help, ArchSpec};
use rdense::checkpoint;
use rdense::data::{DataPair, Dataset, DatasetKind, Split};
use rdense::train::{self, evaluate, EpochRow, Precision, RunMetrics, RunSummary, TrainConfig, Trainer, METRICS_HEADER};
use rdense::{Error, Real};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "rdense", version, about = "Residual dense CNNs: cost analysis, training and ablation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print parameter and FLOP counts for an architecture.
    Analyze(AnalyzeArgs),
    /// Train a network and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test split.
    Eval(EvalArgs),
    /// Train residual and plane variants from identical initial weights.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Human,
    Json,
}

#[derive(Args, Clone)]
struct ArchArgs {
    /// Preset name, e.g. rdense-12-100 or pdense-16-196.
    #[arg(long, conflicts_with_all = ["k", "m", "plane"])]
    arch: Option<String>,
    /// Growth rate.
    #[arg(long)]
    k: Option<usize>,
    /// Layers per dense block.
    #[arg(long, requires = "k")]
    m: Option<usize>,
    /// Number of dense blocks (with --k/--m).
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    /// Drop the residual skip (with --k/--m).
    #[arg(long)]
    plane: bool,
    /// Input geometry as CxHxW; defaults to the dataset's, then the preset's.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    stem_stride: Option<usize>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// mnist, fmnist, cifar10 or cifar100.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, env = "RDENSE_DATA_ROOT", default_value = "data")]
    data_root: PathBuf,
    /// Use only the first N training images.
    #[arg(long)]
    train_subset: Option<usize>,
    /// Use only the first N test images.
    #[arg(long)]
    test_subset: Option<usize>,
}

#[derive(Args, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Epochs per learning-rate step; defaults to ceil(epochs/3) below 90 epochs, else 30.
    #[arg(long)]
    lr_step: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "f64")]
    precision: String,
    /// 300 epochs, step every 30 (overrides --epochs and --lr-step).
    #[arg(long)]
    paper_schedule: bool,
    /// Disable training-time augmentation.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Take default geometry from this dataset name.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Human)]
    format: Format,
    /// One row per layer instead of per stage.
    #[arg(long)]
    detailed: bool,
    /// Also write the JSON report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    opts: TrainOpts,
    /// Run directory; must not exist unless --resume is given.
    #[arg(long)]
    out: PathBuf,
    /// Continue the run in --out from its checkpoint.
    #[arg(long)]
    resume: bool,
    #[arg(long, value_enum, default_value_t = Format::Human)]
    format: Format,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Expected architecture; a mismatch with the checkpoint is an error.
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = Format::Human)]
    format: Format,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    opts: TrainOpts,
    /// Comma-separated seeds; each gives one residual/plane pair.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Human)]
    format: Format,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::MissingFiles { .. } | Error::Format { .. } | Error::Io { .. } => EXIT_DATA,
            Error::NonFinite { .. } => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        let mut message = e.to_string();
        if let Error::MissingFiles { expected } = &e {
            message = String::from("missing dataset file(s); expected:");
            for p in expected {
                message.push_str(&format!("\n  {}", p.display()));
            }
        }
        Failure { code, message }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn parse_geometry(s: &str) -> CliResult<(usize, usize, usize)> {
    let dims: Vec<usize> = s
        .split(['x', 'X', '×'])
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--input must look like 3x32x32, got '{s}'")))?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok((c, h, w)),
        _ => Err(usage(format!("--input must look like 3x32x32, got '{s}'"))),
    }
}

fn parse_dataset(name: Option<&str>) -> CliResult<Option<DatasetKind>> {
    name.map(|n| n.parse::<DatasetKind>().map_err(Failure::from)).transpose()
}

/// Resolve the spec: explicit flags beat dataset defaults, which beat preset defaults.
fn resolve_spec(a: &ArchArgs, dataset: Option<DatasetKind>) -> CliResult<ArchSpec> {
    let mut spec = match (&a.arch, a.k, a.m) {
        (Some(name), _, _) => ArchSpec::preset(name)?,
        (None, Some(k), Some(m)) => {
            let s = ArchSpec::custom(k, m, a.blocks);
            if a.plane {
                s.plane()
            } else {
                s
            }
        }
        (None, Some(_), None) => return Err(usage("--k needs --m")),
        (None, None, _) => {
            return Err(usage(format!(
                "select an architecture with --arch or --k/--m\n{}",
                preset_help()
            )))
        }
    };
    if let Some(ds) = dataset {
        let (c, h, w, classes) = ds.geometry();
        spec = spec.with_input(c, h, w).with_classes(classes);
    }
    if let Some(g) = &a.input {
        let (c, h, w) = parse_geometry(g)?;
        spec = spec.with_input(c, h, w);
    }
    if let Some(n) = a.classes {
        spec = spec.with_classes(n);
    }
    if let Some(s) = a.stem_stride {
        spec = spec.with_stem_stride(s);
    }
    spec.validate()?;
    Ok(spec)
}

fn has_arch(a: &ArchArgs) -> bool {
    a.arch.is_some() || a.k.is_some()
}

fn cmd_analyze(a: AnalyzeArgs) -> CliResult<()> {
    let ds = parse_dataset(a.dataset.as_deref())?;
    let spec = resolve_spec(&a.arch, ds)?;
    let report = analyzer::report(&spec)?;
    match a.format {
        Format::Human => print!("{}", report.render_human(a.detailed)),
        Format::Json => println!("{}", report.to_json()),
    }
    if let Some(path) = a.out {
        write_file(&path, report.to_json().as_bytes())?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_json(path: &Path, v: &serde_json::Value) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn create_run_dir(path: &Path) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::create_dir(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AlreadyExists {
            usage(format!(
                "run directory {} already exists; choose a new --out",
                path.display()
            ))
        } else {
            Failure::from(Error::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
    })
}

struct LoadedData {
    kind: DatasetKind,
    root: PathBuf,
    pair: DataPair,
    checksums: Vec<(String, String)>,
}

fn load_data(d: &DataArgs) -> CliResult<LoadedData> {
    let kind = parse_dataset(d.dataset.as_deref())?
        .ok_or_else(|| usage("--dataset is required (mnist, fmnist, cifar10, cifar100)"))?;
    let (train, test) = match (kind.load(&d.data_root, Split::Train), kind.load(&d.data_root, Split::Test)) {
        (Ok(a), Ok(b)) => (a, b),
        // report every absent file at once, not just the first split's
        (Err(Error::MissingFiles { expected: mut a }), Err(Error::MissingFiles { expected: b })) => {
            a.extend(b);
            return Err(Error::MissingFiles { expected: a }.into());
        }
        (Err(e), _) | (_, Err(e)) => return Err(e.into()),
    };
    let train = match d.train_subset {
        Some(n) => train.take(n),
        None => train,
    };
    let test = match d.test_subset {
        Some(n) => test.take(n),
        None => test,
    };
    let checksums = kind.checksums(&d.data_root)?;
    let pair = DataPair::centered(train, test)?;
    Ok(LoadedData {
        kind,
        root: d.data_root.clone(),
        pair,
        checksums,
    })
}

fn build_config(o: &TrainOpts, kind: DatasetKind) -> CliResult<TrainConfig> {
    let mut cfg = if o.paper_schedule {
        TrainConfig::full_schedule()
    } else {
        TrainConfig::desk(o.epochs)
    };
    if let Some(s) = o.lr_step {
        cfg.lr_step = s;
    }
    cfg.base_lr = o.lr;
    cfg.weight_decay = o.weight_decay;
    cfg.momentum = o.momentum;
    cfg.batch_size = o.batch_size;
    cfg.seed = o.seed;
    cfg.precision = o.precision.parse()?;
    cfg.augment = if o.no_augment {
        rdense::data::Augment::None
    } else {
        kind.default_augment()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn config_echo(
    command: &str,
    spec: &ArchSpec,
    cfg: &TrainConfig,
    data: &LoadedData,
    d: &DataArgs,
) -> serde_json::Value {
    json!({
        "command": command,
        "argv": std::env::args().collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
        "spec": spec,
        "config": cfg,
        "dataset": {
            "name": data.kind.name(),
            "root": data.root,
            "train_subset": d.train_subset,
            "test_subset": d.test_subset,
            "train_size": data.pair.train.len(),
            "test_size": data.pair.test.len(),
            "preprocess": "per_pixel_mean",
            "sha256": data.checksums.iter().cloned().collect::<std::collections::BTreeMap<_, _>>(),
        },
    })
}

fn check_geometry(spec: &ArchSpec, ds: &Dataset) -> CliResult<()> {
    let want = [spec.input_channels, spec.input_height, spec.input_width];
    if ds.image_shape() != want {
        return Err(usage(format!(
            "dataset images are {:?} but the architecture expects {:?}",
            ds.image_shape(),
            want
        )));
    }
    if ds.num_classes() > spec.num_classes {
        return Err(usage(format!(
            "dataset has {} classes but the architecture head has {}",
            ds.num_classes(),
            spec.num_classes
        )));
    }
    Ok(())
}

struct MetricsFile {
    file: File,
    path: PathBuf,
}

impl MetricsFile {
    fn create(path: PathBuf) -> CliResult<Self> {
        let mut file = File::create(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(Self { file, path })
    }

    fn append(path: PathBuf) -> CliResult<Self> {
        let file = OpenOptions::new().append(true).open(&path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(Self { file, path })
    }

    fn push(&mut self, row: &EpochRow) -> rdense::Result<()> {
        writeln!(self.file, "{}", row.csv())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::Io {
                path: self.path.clone(),
                source: e,
            })
    }
}

fn print_row(prefix: &str, row: &EpochRow, format: Format) {
    match format {
        Format::Human => println!(
            "{prefix}epoch {:>3}  lr {:<8}  train_loss {:.4}  train_acc {:.4}  test_acc {:.4}  {:.1}s",
            row.epoch, row.lr, row.train_loss, row.train_acc, row.test_acc, row.seconds
        ),
        Format::Json => println!("{}", serde_json::to_string(row).expect("json")),
    }
}

/// Train to completion inside `dir`, writing metrics, checkpoint and summary.
fn run_in_dir<T: Real>(
    mut trainer: Trainer<T>,
    data: &DataPair,
    dir: &Path,
    mut metrics: MetricsFile,
    prefix: &str,
    format: Format,
) -> CliResult<Trainer<T>> {
    let ckpt = dir.join("checkpoint.bin");
    trainer.run(&data.train, &data.test, |t, row| {
        metrics.push(row)?;
        checkpoint::save(t.network(), Some(t.config()), t.next_epoch(), &ckpt)?;
        print_row(prefix, row, format);
        Ok(())
    })?;
    let csv = fs::read_to_string(&metrics.path).map_err(|e| Error::Io {
        path: metrics.path.clone(),
        source: e,
    })?;
    let all = RunMetrics::from_csv(&csv)?;
    let net = trainer.network();
    let summary = RunSummary::new(net.spec(), trainer.config(), net.num_params(), &all);
    write_json(&dir.join("summary.json"), &serde_json::to_value(&summary).expect("json"))?;
    Ok(trainer)
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    if a.resume {
        return resume_train(a);
    }
    let kind = parse_dataset(a.data.dataset.as_deref())?
        .ok_or_else(|| usage("--dataset is required (mnist, fmnist, cifar10, cifar100)"))?;
    let spec = resolve_spec(&a.arch, Some(kind))?;
    let cfg = build_config(&a.opts, kind)?;
    let data = load_data(&a.data)?;
    check_geometry(&spec, &data.pair.train)?;
    create_run_dir(&a.out)?;
    write_json(&a.out.join("config.json"), &config_echo("train", &spec, &cfg, &data, &a.data))?;
    let metrics = MetricsFile::create(a.out.join("metrics.csv"))?;
    match cfg.precision {
        Precision::F64 => {
            run_in_dir(Trainer::<f64>::new(&spec, cfg)?, &data.pair, &a.out, metrics, "", a.format)?;
        }
        Precision::F32 => {
            run_in_dir(Trainer::<f32>::new(&spec, cfg)?, &data.pair, &a.out, metrics, "", a.format)?;
        }
    }
    Ok(())
}

fn resume_train(a: TrainArgs) -> CliResult<()> {
    let ckpt = a.out.join("checkpoint.bin");
    let header = checkpoint::load_header(&ckpt)?;
    let cfg = header
        .config
        .clone()
        .ok_or_else(|| usage(format!("{} carries no training state", ckpt.display())))?;
    let expected = if has_arch(&a.arch) {
        let kind = parse_dataset(a.data.dataset.as_deref())?;
        Some(resolve_spec(&a.arch, kind)?)
    } else {
        None
    };
    let data = load_data(&a.data)?;
    check_geometry(&header.spec, &data.pair.train)?;
    let metrics = MetricsFile::append(a.out.join("metrics.csv"))?;
    match cfg.precision {
        Precision::F64 => {
            let c = checkpoint::load::<f64>(&ckpt, expected.as_ref())?;
            let t = Trainer::resume(c.network, cfg, c.next_epoch);
            run_in_dir(t, &data.pair, &a.out, metrics, "", a.format)?;
        }
        Precision::F32 => {
            let c = checkpoint::load::<f32>(&ckpt, expected.as_ref())?;
            let t = Trainer::resume(c.network, cfg, c.next_epoch);
            run_in_dir(t, &data.pair, &a.out, metrics, "", a.format)?;
        }
    }
    Ok(())
}

/// Fill data flags left unset from the config echo next to the checkpoint.
fn data_args_for_eval(d: &DataArgs, ckpt: &Path) -> DataArgs {
    let mut d = d.clone();
    let echo = ckpt
        .parent()
        .map(|p| p.join("config.json"))
        .and_then(|p| fs::read_to_string(p).ok())
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok());
    if let Some(echo) = echo {
        let ds = &echo["dataset"];
        if d.dataset.is_none() {
            d.dataset = ds["name"].as_str().map(String::from);
        }
        if d.train_subset.is_none() {
            d.train_subset = ds["train_subset"].as_u64().map(|v| v as usize);
        }
        if d.test_subset.is_none() {
            d.test_subset = ds["test_subset"].as_u64().map(|v| v as usize);
        }
    }
    d
}

fn eval_with<T: Real>(
    ckpt: &Path,
    expected: Option<&ArchSpec>,
    data: &LoadedData,
    format: Format,
) -> CliResult<()> {
    let net = checkpoint::load::<T>(ckpt, expected)?.network;
    check_geometry(net.spec(), &data.pair.test)?;
    let (loss, acc) = evaluate(&net, &data.pair.test)?;
    match format {
        Format::Human => {
            println!("dataset   {} (test, {} images)", data.kind.name(), data.pair.test.len());
            println!("loss      {loss}");
            println!("accuracy  {acc}");
        }
        Format::Json => println!(
            "{}",
            json!({"dataset": data.kind.name(), "images": data.pair.test.len(), "loss": loss, "accuracy": acc})
        ),
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let header = checkpoint::load_header(&a.checkpoint)?;
    let d = data_args_for_eval(&a.data, &a.checkpoint);
    let kind = parse_dataset(d.dataset.as_deref())?;
    let expected = if has_arch(&a.arch) {
        Some(resolve_spec(&a.arch, kind)?)
    } else {
        None
    };
    let data = load_data(&d)?;
    match header.precision.as_str() {
        "f64" => eval_with::<f64>(&a.checkpoint, expected.as_ref(), &data, a.format),
        "f32" => eval_with::<f32>(&a.checkpoint, expected.as_ref(), &data, a.format),
        other => Err(usage(format!("checkpoint has unknown precision '{other}'"))),
    }
}

fn ablate_with<T: Real>(
    spec: &ArchSpec,
    cfg: &TrainConfig,
    a: &AblateArgs,
    data: &LoadedData,
) -> CliResult<serde_json::Value> {
    let mut rows = Vec::new();
    let mut counts = (0, 0);
    let mut res_final = Vec::new();
    let mut plane_final = Vec::new();
    for &seed in &a.seeds {
        let cfg = TrainConfig { seed, ..cfg.clone() };
        let (r, p) = train::ablation_pair::<T>(spec, &cfg)?;
        counts = (r.network().num_params(), p.network().num_params());
        let dirs: Vec<PathBuf> = ["residual", "plane"]
            .iter()
            .map(|v| a.out.join(v).join(format!("seed-{seed}")))
            .collect();
        for d in &dirs {
            fs::create_dir_all(d).map_err(|e| Error::Io {
                path: d.clone(),
                source: e,
            })?;
            write_json(&d.join("config.json"), &config_echo("ablate", spec, &cfg, data, &a.data))?;
        }
        let mr = MetricsFile::create(dirs[0].join("metrics.csv"))?;
        let mp = MetricsFile::create(dirs[1].join("metrics.csv"))?;
        let pr = format!("[residual seed {seed}] ");
        let pp = format!("[plane seed {seed}] ");
        let (rr, rp) = rayon::join(
            || run_in_dir(r, &data.pair, &dirs[0], mr, &pr, a.format),
            || run_in_dir(p, &data.pair, &dirs[1], mp, &pp, a.format),
        );
        let (rr, rp) = (rr?, rp?);
        for (variant, t, finals) in [("residual", &rr, &mut res_final), ("plane", &rp, &mut plane_final)] {
            let last = t.metrics().last().expect("at least one epoch");
            finals.push(last.test_acc);
            rows.push(json!({
                "seed": seed,
                "variant": variant,
                "params": t.network().num_params(),
                "final_test_acc": last.test_acc,
                "final_train_loss": last.train_loss,
            }));
        }
    }
    let (rm, pm) = (train::median(&res_final), train::median(&plane_final));
    Ok(json!({
        "spec": spec.clone().residual(),
        "residual_params": counts.0,
        "plane_params": counts.1,
        "params_equal": counts.0 == counts.1,
        "runs": rows,
        "residual_median_test_acc": rm,
        "plane_median_test_acc": pm,
        "residual_not_worse": rm >= pm,
    }))
}

fn cmd_ablate(a: AblateArgs) -> CliResult<()> {
    if a.seeds.is_empty() {
        return Err(usage("--seeds needs at least one seed"));
    }
    let kind = parse_dataset(a.data.dataset.as_deref())?
        .ok_or_else(|| usage("--dataset is required (mnist, fmnist, cifar10, cifar100)"))?;
    let spec = resolve_spec(&a.arch, Some(kind))?;
    let cfg = build_config(&a.opts, kind)?;
    let data = load_data(&a.data)?;
    check_geometry(&spec, &data.pair.train)?;
    create_run_dir(&a.out)?;
    let summary = match cfg.precision {
        Precision::F64 => ablate_with::<f64>(&spec, &cfg, &a, &data)?,
        Precision::F32 => ablate_with::<f32>(&spec, &cfg, &a, &data)?,
    };
    write_json(&a.out.join("summary.json"), &summary)?;
    match a.format {
        Format::Human => {
            println!();
            println!(
                "parameters: residual {} / plane {}",
                summary["residual_params"], summary["plane_params"]
            );
            for r in summary["runs"].as_array().into_iter().flatten() {
                println!(
                    "seed {:<6} {:<9} final test_acc {}",
                    r["seed"],
                    r["variant"].as_str().unwrap_or(""),
                    r["final_test_acc"]
                );
            }
            println!(
                "median final test_acc: residual {} / plane {} -> residual >= plane: {}",
                summary["residual_median_test_acc"],
                summary["plane_median_test_acc"],
                summary["residual_not_worse"]
            );
        }
        Format::Json => println!("{}", serde_json::to_string_pretty(&summary).expect("json")),
    }
    Ok(())
}
