//! `mfa`: train, sample and evaluate mixtures of factor analyzers, and run
//! the NDB and sharpness measures on sample sets.
//!
//! Exit codes: 0 success, 1 usage, 2 data/IO, 3 numerical failure.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use ndarray::{Array2, Axis};

use mfa::infer::{inpaint, inpaint_sample, rank_outliers, ObservationMask};
use mfa::io::{self, DataFormat, Dataset, ModelMeta};
use mfa::ndb::{self, BinOptions};
use mfa::sharpness::{set_sharpness, SharpnessConfig};
use mfa::train::{self, HierarchicalConfig, InitMethod, TrainConfig, TrainLog};
use mfa::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "mfa", version, about = "Mixtures of factor analyzers and NDB evaluation")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads [default: number of cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Append log messages to this file instead of stderr.
    #[arg(long, global = true)]
    log_file: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an MFA model to a data set.
    Train(TrainArgs),
    /// Draw samples from a model.
    Sample(SampleArgs),
    /// Log-likelihood of a data set under a model.
    Loglik(LoglikArgs),
    /// Fill in hidden coordinates of every row.
    Inpaint(InpaintArgs),
    /// List the least likely rows.
    Outliers(OutliersArgs),
    /// Number of statistically different bins.
    #[command(subcommand)]
    Ndb(NdbCommand),
    /// Mean image sharpness of a set.
    Sharpness(SharpnessArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Data file (or PNG directory for imgdir).
    #[arg(long)]
    data: PathBuf,
    /// idx, csv, raw or imgdir.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Row width for raw files [default: the model dimension].
    #[arg(long)]
    dim: Option<usize>,
    /// Use only the first N rows.
    #[arg(long)]
    max_rows: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of mixture components.
    #[arg(long)]
    k: usize,
    /// Latent dimension of every component.
    #[arg(long)]
    latent: usize,
    /// kmeans, random or ksub.
    #[arg(long, default_value = "kmeans")]
    init: String,
    /// Train a root mixture of --k-root components, then split it to --k.
    #[arg(long)]
    hierarchical: bool,
    /// Root components for --hierarchical.
    #[arg(long)]
    k_root: Option<usize>,
    /// Minimum samples per sub-component for --hierarchical.
    #[arg(long, default_value_t = 100)]
    min_samples: usize,
    /// SGD steps.
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    /// Lower bound on initial noise variances.
    #[arg(long, default_value_t = 1e-6)]
    noise_floor: f64,
    /// Steps between log records.
    #[arg(long, default_value_t = 1000)]
    eval_interval: usize,
    /// Held-out data in the same format, scored in the training log.
    #[arg(long)]
    heldout: Option<PathBuf>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Training log [default: <out>.log].
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of samples.
    #[arg(long)]
    n: usize,
    /// Output file of little-endian f32 rows.
    #[arg(long)]
    out: PathBuf,
    /// Also write the samples as a PNG grid.
    #[arg(long)]
    png_grid: Option<PathBuf>,
    /// Image shape h,w,c for --png-grid [default: square grayscale].
    #[arg(long)]
    shape: Option<String>,
}

#[derive(Args)]
struct LoglikArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Write one log-likelihood per line here.
    #[arg(long)]
    per_sample: Option<PathBuf>,
}

#[derive(Args)]
struct InpaintArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Hidden region: rect:x,y,w,h or file:<path> (one byte per coordinate, 0 = hidden).
    #[arg(long)]
    mask: String,
    /// Image shape h,w,c for rect masks [default: square grayscale].
    #[arg(long)]
    shape: Option<String>,
    /// Draw the latent from its posterior instead of using the posterior mean.
    #[arg(long)]
    sample: bool,
    /// Output file of little-endian f32 rows.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OutliersArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// How many of the least likely rows to print.
    #[arg(long, default_value_t = 100)]
    bottom: usize,
}

#[derive(Subcommand)]
enum NdbCommand {
    /// Fit Voronoi bins to a reference set.
    Fit(NdbFitArgs),
    /// Compare a sample set with fitted bins.
    Eval(NdbEvalArgs),
}

#[derive(Args)]
struct NdbFitArgs {
    /// Reference data.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// idx, csv, raw or imgdir.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Row width for raw files.
    #[arg(long)]
    dim: Option<usize>,
    /// Number of bins.
    #[arg(long, default_value_t = 100)]
    bins: usize,
    /// Divide every dimension by its reference standard deviation.
    #[arg(long)]
    whiten: bool,
    /// Cluster a random subset of this many rows.
    #[arg(long)]
    cluster_subset: Option<usize>,
    /// Cluster on a random subset of this many dimensions.
    #[arg(long)]
    dim_subset: Option<usize>,
    /// Significance level of the per-bin test.
    #[arg(long, default_value_t = ndb::DEFAULT_SIGNIFICANCE)]
    alpha: f64,
    /// K-means restarts.
    #[arg(long, default_value_t = 10)]
    n_init: usize,
    /// Output bins file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NdbEvalArgs {
    /// Bins file from `ndb fit`.
    #[arg(long)]
    bins: PathBuf,
    /// Samples to evaluate.
    #[arg(long)]
    test: PathBuf,
    /// idx, csv, raw or imgdir.
    #[arg(long, default_value = "raw")]
    format: String,
    /// Row width for raw files [default: the bins dimension].
    #[arg(long)]
    dim: Option<usize>,
    /// Write the per-bin report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write per-bin reference/test proportions as TSV here.
    #[arg(long)]
    hist: Option<PathBuf>,
}

#[derive(Args)]
struct SharpnessArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Image shape h,w,c [default: taken from the data when known].
    #[arg(long)]
    shape: Option<String>,
    /// Standard deviation of the Gaussian low-pass kernel.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Score only the first N images.
    #[arg(long, default_value_t = 2000)]
    count: usize,
}

type Result<T> = std::result::Result<T, Error>;

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn load_data(args: &DataArgs, default_dim: Option<usize>) -> Result<Dataset> {
    let format = DataFormat::parse(&args.format, args.dim.or(default_dim))?;
    let mut ds = io::load(&args.data, format)?;
    if let Some(n) = args.max_rows {
        ds.truncate(n);
    }
    Ok(ds)
}

fn parse_shape(text: &str) -> Result<(usize, usize, usize)> {
    let dims: Vec<usize> = text
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("bad shape {text:?}, expected h,w,c")))?;
    match dims[..] {
        [h, w, c] if h > 0 && w > 0 && c > 0 => Ok((h, w, c)),
        _ => Err(usage(format!("bad shape {text:?}, expected h,w,c"))),
    }
}

/// Explicit shape, else the data's own, else a square grayscale image.
fn image_shape(flag: Option<&str>, hint: Option<(usize, usize, usize)>, d: usize) -> Result<(usize, usize, usize)> {
    let shape = match (flag, hint) {
        (Some(text), _) => parse_shape(text)?,
        (None, Some(h)) => h,
        (None, None) => {
            let side = (d as f64).sqrt().round() as usize;
            if side * side != d {
                return Err(usage(format!("dimension {d} is not a square image; pass --shape")));
            }
            (side, side, 1)
        }
    };
    if shape.0 * shape.1 * shape.2 != d {
        return Err(usage(format!("shape {shape:?} does not match data dimension {d}")));
    }
    Ok(shape)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_train(args: &TrainArgs, seed: u64) -> Result<()> {
    let init: InitMethod = args.init.parse()?;
    if args.hierarchical {
        let k_root = args.k_root.ok_or_else(|| usage("--hierarchical needs --k-root"))?;
        if k_root == 0 || k_root > args.k {
            return Err(usage(format!("--k-root must satisfy 1 <= k_root <= k (k_root = {k_root}, k = {})", args.k)));
        }
    } else if args.k_root.is_some() {
        return Err(usage("--k-root only applies with --hierarchical"));
    }
    let ds = load_data(&args.data, None)?;
    let cfg = TrainConfig {
        k_components: args.k,
        latent_dim: args.latent,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        max_steps: args.steps,
        init_method: init,
        noise_floor: args.noise_floor,
        rng_seed: seed,
        eval_interval: args.eval_interval,
    };
    cfg.validate(ds.n_samples(), ds.dim())?;
    let heldout = match &args.heldout {
        Some(p) => {
            let h = load_data(
                &DataArgs {
                    data: p.clone(),
                    format: args.data.format.clone(),
                    dim: args.data.dim,
                    max_rows: None,
                },
                None,
            )?;
            Some(h.data)
        }
        None => None,
    };
    info!("training on {} rows of dimension {}", ds.n_samples(), ds.dim());

    let (model, logs) = if args.hierarchical {
        let hcfg = HierarchicalConfig {
            k_root: args.k_root.expect("checked"),
            total_components: args.k,
            min_samples_per_component: args.min_samples,
        };
        let result = train::hierarchical_train(ds.data.view(), &cfg, &hcfg)?;
        let mut logs = result.root_logs;
        let n = ds.n_samples() as f64;
        let last = logs.last().map_or(0.0, |l| l.wallclock_s);
        logs.push(TrainLog {
            step: args.steps,
            train_nll: -result.model.log_likelihood(ds.data.view())?.0 / n,
            heldout_nll: match &heldout {
                Some(h) => Some(-result.model.log_likelihood(h.view())?.0 / h.nrows() as f64),
                None => None,
            },
            wallclock_s: last,
        });
        (result.model, logs)
    } else {
        let start = train::initialize(ds.data.view(), &cfg)?;
        train::sgd_train(ds.data.view(), heldout.as_ref().map(|h| h.view()), &start, &cfg)?
    };

    let meta = ModelMeta {
        scaling: ds.source.scaling().to_string(),
        ..ModelMeta::default()
    };
    io::save_model_with_meta(&model, &args.out, &meta)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut text = String::from("step\ttrain_nll\theldout_nll\twallclock_s\n");
    for l in &logs {
        text.push_str(&l.to_tsv());
        text.push('\n');
    }
    write_file(&log_path, &text)?;
    if let Some(last) = logs.last() {
        println!("final train NLL per sample: {:.6}", last.train_nll);
        if let Some(h) = last.heldout_nll {
            println!("final held-out NLL per sample: {h:.6}");
        }
    }
    Ok(())
}

fn cmd_sample(args: &SampleArgs, seed: u64) -> Result<()> {
    if args.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let model = io::load_model(&args.model)?;
    let shape = match &args.png_grid {
        Some(_) => Some(image_shape(args.shape.as_deref(), None, model.dim())?),
        None => None,
    };
    let samples = model.sample(args.n, seed)?;
    io::write_raw_f32(samples.view(), &args.out)?;
    if let (Some(path), Some(shape)) = (&args.png_grid, shape) {
        io::write_png_grid(samples.view(), shape, path)?;
    }
    Ok(())
}

fn cmd_loglik(args: &LoglikArgs) -> Result<()> {
    let model = io::load_model(&args.model)?;
    let ds = load_data(&args.data, Some(model.dim()))?;
    let (total, per_sample) = model.log_likelihood(ds.data.view())?;
    println!("total\t{total:.10e}");
    println!("mean\t{:.10e}", total / ds.n_samples() as f64);
    if let Some(path) = &args.per_sample {
        let text: String = per_sample.iter().map(|v| format!("{v:.10e}\n")).collect();
        write_file(path, &text)?;
    }
    Ok(())
}

fn parse_mask(spec: &str, shape: Option<&str>, hint: Option<(usize, usize, usize)>, d: usize) -> Result<ObservationMask> {
    if let Some(rect) = spec.strip_prefix("rect:") {
        let v: Vec<usize> = rect
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| usage(format!("bad rectangle {rect:?}, expected x,y,w,h")))?;
        let [x, y, w, h] = v[..] else {
            return Err(usage(format!("bad rectangle {rect:?}, expected x,y,w,h")));
        };
        let shape = image_shape(shape, hint, d)?;
        Ok(ObservationMask::hide_rect(shape, x, y, w, h))
    } else if let Some(path) = spec.strip_prefix("file:") {
        let bytes = fs::read(path).map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
        if bytes.len() != d {
            return Err(Error::DimensionMismatch {
                what: "mask file bytes",
                expected: d,
                actual: bytes.len(),
            });
        }
        Ok(ObservationMask::from_bytes(&bytes))
    } else {
        Err(usage(format!("bad mask {spec:?}, expected rect:x,y,w,h or file:<path>")))
    }
}

fn cmd_inpaint(args: &InpaintArgs, seed: u64) -> Result<()> {
    let model = io::load_model(&args.model)?;
    let ds = load_data(&args.data, Some(model.dim()))?;
    mfa::error::ensure_dim("data columns", model.dim(), ds.dim())?;
    let mask = parse_mask(&args.mask, args.shape.as_deref(), ds.shape_hint, model.dim())?;
    if mask.n_hidden() == 0 {
        warn!("mask hides nothing; output equals input");
    }
    let mut out = Array2::zeros(ds.data.raw_dim());
    for (i, row) in ds.data.axis_iter(Axis(0)).enumerate() {
        let observed = mask.gather(row);
        let r = if args.sample {
            inpaint_sample(observed.view(), &mask, &model, seed.wrapping_add(i as u64))?
        } else {
            inpaint(observed.view(), &mask, &model)?
        };
        out.row_mut(i).assign(&r.x_full);
    }
    io::write_raw_f32(out.view(), &args.out)
}

fn cmd_outliers(args: &OutliersArgs) -> Result<()> {
    let model = io::load_model(&args.model)?;
    let ds = load_data(&args.data, Some(model.dim()))?;
    let ranked = rank_outliers(ds.data.view(), &model, args.bottom.min(ds.n_samples()))?;
    println!("rank\tindex\tloglik");
    for (rank, (index, ll)) in ranked.iter().enumerate() {
        println!("{}\t{index}\t{ll:.10e}", rank + 1);
    }
    Ok(())
}

fn cmd_ndb(cmd: &NdbCommand, seed: u64) -> Result<()> {
    match cmd {
        NdbCommand::Fit(args) => {
            let format = DataFormat::parse(&args.format, args.dim)?;
            let ds = io::load(&args.reference, format)?;
            let opts = BinOptions {
                whiten: args.whiten,
                cluster_subset: args.cluster_subset,
                dim_subset: args.dim_subset,
                seed,
                n_init: args.n_init,
                significance: args.alpha,
                ..BinOptions::default()
            };
            let bins = ndb::fit_bins(ds.data.view(), args.bins, &opts)?;
            io::save_bins(&bins, &args.out)
        }
        NdbCommand::Eval(args) => {
            let bins = io::load_bins(&args.bins)?;
            let format = DataFormat::parse(&args.format, args.dim.or(Some(bins.dim())))?;
            let ds = io::load(&args.test, format)?;
            let report = ndb::evaluate(ds.data.view(), &bins)?;
            println!("{}", report.summary_line());
            if let Some(path) = &args.report {
                write_file(path, &report.to_text())?;
            }
            if let Some(path) = &args.hist {
                write_file(path, &report.histogram_tsv())?;
            }
            Ok(())
        }
    }
}

fn cmd_sharpness(args: &SharpnessArgs) -> Result<()> {
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if !(args.sigma > 0.0 && args.sigma.is_finite()) {
        return Err(usage("--sigma must be positive"));
    }
    let ds = load_data(&args.data, None)?;
    let shape = match (&args.shape, ds.shape_hint) {
        (None, Some(h)) => h,
        (Some(text), _) => parse_shape(text)?,
        (None, None) => return Err(usage("--shape is required for data without an image shape")),
    };
    if shape.0 * shape.1 * shape.2 != ds.dim() {
        return Err(usage(format!("shape {shape:?} does not match data dimension {}", ds.dim())));
    }
    let cfg = SharpnessConfig {
        kernel_sigma: args.sigma,
        sample_count: args.count,
        ..SharpnessConfig::new(shape)
    };
    println!("{:.6}", set_sharpness(ds.data.view(), &cfg)?);
    Ok(())
}

fn init_logging(path: Option<&Path>) -> std::result::Result<(), String> {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if let Some(path) = path {
        let file = File::options()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        builder.target(env_logger::Target::Pipe(Box::new(file)));
    }
    builder.try_init().map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Sample(a) => cmd_sample(a, cli.seed),
        Command::Loglik(a) => cmd_loglik(a),
        Command::Inpaint(a) => cmd_inpaint(a, cli.seed),
        Command::Outliers(a) => cmd_outliers(a),
        Command::Ndb(c) => cmd_ndb(c, cli.seed),
        Command::Sharpness(a) => cmd_sharpness(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(msg) = init_logging(cli.log_file.as_deref()) {
        eprintln!("error: cannot open log file {msg}");
        return ExitCode::from(2);
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
