//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 when a
//! file cannot be read or written.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Axis;

use super::config::{parse_fusion, RunConfig};
use super::idx::{load_idx, IdxData};
use super::svg::render_scatter_svg;
use super::text::{load_csv_matrix, load_edge_list, load_embedding, load_labels, save_embedding, write_text};
use crate::embed::{run_dr_task, run_ge_task, run_kd_task, Task, TaskOutput};
use crate::error::{Error, Result};
use crate::eval::{
    continuity, knn_accuracy, linear_probe, mean_knn_jaccard, metrics_csv, split_indices, subsample_indices,
    trustworthiness, LabeledEmbedding, MetricValue, ProbeConfig,
};
use crate::losses::LossKind;
use crate::structure::{AlphaSchedule, DataMatrix};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "simfuse",
    version,
    about = "Similarity-preserving embeddings of fused neighbourhood graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dimension reduction of feature vectors.
    Dr(TrainArgs),
    /// Node embedding of an attributed graph.
    Ge(TrainArgs),
    /// Student embedding distilled from teacher representations.
    Kd(TrainArgs),
    /// Metrics of a saved embedding.
    Eval(EvalArgs),
    /// SVG scatter plot of a saved 2-D embedding.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_parser = ["mse", "kl", "bce", "gkl"])]
    loss: Option<String>,
    #[arg(long)]
    nu_z: Option<f64>,
    #[arg(long)]
    sigma_x: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long, value_parser = ["static", "dynamic"])]
    fusion: Option<String>,
    #[arg(long)]
    mask_fraction: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run on one thread with index-ordered reductions.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Embedding CSV written by a training command.
    #[arg(long)]
    embedding: PathBuf,
    /// Inputs the embedding came from (IDX or CSV), for trustworthiness and continuity.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Labels (IDX or `node_id label`); defaults to the embedding's label column.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    knn_k: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 5000)]
    max_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics CSV path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Runs the command line and returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`cli_main`] with explicit output streams.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    let result = match cli.command {
        Command::Dr(a) => train(Task::Dr, &a, out),
        Command::Ge(a) => train(Task::Ge, &a, out),
        Command::Kd(a) => train(Task::Kd, &a, out),
        Command::Eval(a) => evaluate(&a, out),
        Command::Plot(a) => plot(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 2,
        _ => 1,
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

fn apply_overrides(cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    let s = &mut cfg.spec;
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.epochs {
        s.epochs = v;
    }
    if let Some(v) = a.batch_size {
        s.adam.batch_size = v;
    }
    if let Some(v) = &a.loss {
        let new: LossKind = v.parse()?;
        if !matches!((new, s.loss), (LossKind::Gkl { .. }, LossKind::Gkl { .. })) {
            s.loss = new;
        }
    }
    if let Some(v) = a.nu_z {
        s.nu_z = v;
    }
    if let Some(v) = a.sigma_x {
        s.sigma_x = Some(v);
    }
    if let Some(v) = a.alpha2 {
        s.alpha2 = AlphaSchedule::constant(v);
    }
    if let Some(v) = &a.fusion {
        s.fusion = parse_fusion(v)?;
    }
    if let Some(v) = a.mask_fraction {
        s.pair_mask_fraction = v;
    }
    if a.deterministic {
        s.deterministic = true;
    }
    if let Some(v) = &a.out {
        cfg.paths.out = absolute(v)?;
    }
    cfg.validate()
}

fn is_idx(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut head = [0u8; 4];
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let got = f.read(&mut head).map_err(|e| Error::io(path, e))?;
    Ok(got >= 3 && (head[..2] == [0x1f, 0x8b] || head[..3] == [0, 0, 8]))
}

/// IDX images or a CSV matrix, chosen by the file's first bytes.
pub fn load_matrix(path: &Path) -> Result<DataMatrix> {
    if is_idx(path)? {
        match load_idx(path)? {
            IdxData::Images(m) => Ok(m),
            IdxData::Labels(_) => Err(Error::format(
                path.display().to_string(),
                "byte 0",
                "expected a data file, found labels",
            )),
        }
    } else {
        load_csv_matrix(path, ',')
    }
}

/// IDX labels or a `node_id label` file.
pub fn load_any_labels(path: &Path, n: usize) -> Result<Vec<usize>> {
    if is_idx(path)? {
        match load_idx(path)? {
            IdxData::Labels(l) if l.len() >= n => Ok(l[..n].iter().map(|&v| usize::from(v)).collect()),
            IdxData::Labels(l) => Err(Error::invalid(format!(
                "{}: {} labels for {n} samples",
                path.display(),
                l.len()
            ))),
            IdxData::Images(_) => Err(Error::format(
                path.display().to_string(),
                "byte 0",
                "expected labels, found images",
            )),
        }
    } else {
        load_labels(path, n)
    }
}

fn truncate(x: DataMatrix, max: Option<usize>) -> Result<DataMatrix> {
    match max {
        Some(m) if m < x.n_rows() => x.select_rows(&(0..m).collect::<Vec<_>>()),
        _ => Ok(x),
    }
}

/// Lines written above the training log and echoed to stdout.
pub fn run_header(cfg: &RunConfig) -> String {
    let s = &cfg.spec;
    let mut h = format!(
        "# simfuse {VERSION} task={} config_sha256={} seed={} deterministic={}\n",
        s.task.name(),
        cfg.hash(),
        s.seed,
        s.deterministic
    );
    h.push_str(&format!(
        "# loss={} nu_x={} nu_z={} sigma_x={} epochs={} batch_size={} mask_fraction={}",
        s.loss.name(),
        s.nu_x,
        s.nu_z,
        s.sigma_x.map_or_else(|| "auto".into(), |v| v.to_string()),
        s.epochs,
        s.adam.batch_size,
        s.pair_mask_fraction
    ));
    if s.task == Task::Ge {
        h.push_str(&format!(" alpha2={}", s.alpha2.initial));
    }
    h.push('\n');
    h
}

struct Loaded {
    x: DataMatrix,
    labels: Option<Vec<usize>>,
    teacher: Option<DataMatrix>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Loaded> {
    let p = &cfg.paths;
    let primary = match cfg.spec.task {
        Task::Ge => p.features.as_deref(),
        _ => p.data.as_deref(),
    }
    .ok_or_else(|| Error::invalid("no input data configured"))?;
    let x = truncate(load_matrix(primary)?, cfg.max_samples)?;
    let labels = p
        .labels
        .as_deref()
        .map(|l| load_any_labels(l, x.n_rows()))
        .transpose()?;
    let teacher = match &p.teacher {
        Some(t) => Some(truncate(load_matrix(t)?, cfg.max_samples)?),
        None => None,
    };
    Ok(Loaded { x, labels, teacher })
}

fn train_metrics(cfg: &RunConfig, data: &Loaded, z: &ndarray::Array2<f64>) -> Result<Vec<MetricValue>> {
    let mut rows = Vec::new();
    let ev = &cfg.eval;
    let n = z.nrows();
    let sample = subsample_indices(n, ev.max_points, cfg.spec.seed);
    let zs = z.select(Axis(0), &sample);
    let reference = match cfg.spec.task {
        Task::Kd => data.teacher.as_ref().expect("validated"),
        _ => &data.x,
    };
    let xs = reference.values().select(Axis(0), &sample);
    if 2 * ev.trust_k < sample.len() {
        rows.push(MetricValue {
            metric: "trustworthiness".into(),
            k: Some(ev.trust_k),
            value: trustworthiness(xs.view(), zs.view(), ev.trust_k)?,
        });
        rows.push(MetricValue {
            metric: "continuity".into(),
            k: Some(ev.trust_k),
            value: continuity(xs.view(), zs.view(), ev.trust_k)?,
        });
    }
    if cfg.spec.task == Task::Kd && ev.trust_k < sample.len() {
        rows.push(MetricValue {
            metric: "knn_jaccard".into(),
            k: Some(ev.trust_k),
            value: mean_knn_jaccard(xs.view(), zs.view(), ev.trust_k)?,
        });
    }
    if let Some(labels) = &data.labels {
        let all = LabeledEmbedding::new(z.clone(), labels.clone())?;
        let (train, test) = split_indices(n, ev.test_fraction, cfg.spec.seed)?;
        let (train, test) = (all.select(&train)?, all.select(&test)?);
        if ev.knn_k <= train.n() {
            rows.push(MetricValue {
                metric: "knn_accuracy".into(),
                k: Some(ev.knn_k),
                value: knn_accuracy(&train, &test, ev.knn_k)?,
            });
        }
        if cfg.spec.task == Task::Ge {
            rows.push(MetricValue {
                metric: "linear_probe".into(),
                k: None,
                value: linear_probe(&train, &test, &ProbeConfig::default())?,
            });
        }
    }
    Ok(rows)
}

fn fit_task(cfg: &RunConfig, data: &Loaded) -> Result<TaskOutput> {
    let spec = &cfg.spec;
    match spec.task {
        Task::Dr => run_dr_task(&data.x, spec.knn_k, spec),
        Task::Ge => {
            let edges = match &cfg.paths.edges {
                Some(p) => Some(load_edge_list(p, data.x.n_rows())?),
                None => None,
            };
            run_ge_task(&data.x, edges.as_deref(), spec)
        }
        Task::Kd => run_kd_task(&data.x, data.teacher.as_ref().expect("validated"), spec),
    }
}

fn train(task: Task, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config_path = absolute(&a.config)?;
    let mut cfg = RunConfig::load(&config_path, task)?;
    apply_overrides(&mut cfg, a)?;
    let header = run_header(&cfg);
    let _ = write!(out, "{header}");

    let data = load_inputs(&cfg)?;
    let dir = &cfg.paths.out;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let result = if cfg.spec.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| fit_task(&cfg, &data))?
    } else {
        fit_task(&cfg, &data)?
    };

    save_embedding(
        result.embedding.view(),
        data.labels.as_deref(),
        &dir.join("embedding.csv"),
    )?;
    write_text(
        &dir.join("training_log.csv"),
        &format!("{header}{}", result.log.to_csv()),
    )?;
    write_text(&dir.join("run.cfg"), &cfg.to_text())?;
    let metrics = metrics_csv(&train_metrics(&cfg, &data, &result.embedding)?);
    write_text(&dir.join("metrics.csv"), &metrics)?;
    let _ = write!(out, "{metrics}");
    Ok(())
}

fn evaluate(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (z, file_labels) = load_embedding(&a.embedding)?;
    let n = z.nrows();
    let labels = match &a.labels {
        Some(p) => Some(load_any_labels(p, n)?),
        None => file_labels,
    };
    let mut rows = Vec::new();
    if let Some(d) = &a.data {
        let x = load_matrix(d)?;
        if x.n_rows() < n {
            return Err(Error::invalid(format!(
                "{} data rows for {n} embedding rows",
                x.n_rows()
            )));
        }
        let sample = subsample_indices(n, a.max_points, a.seed);
        let xs = x.values().select(Axis(0), &sample);
        let zs = z.select(Axis(0), &sample);
        rows.push(MetricValue {
            metric: "trustworthiness".into(),
            k: Some(a.k),
            value: trustworthiness(xs.view(), zs.view(), a.k)?,
        });
        rows.push(MetricValue {
            metric: "continuity".into(),
            k: Some(a.k),
            value: continuity(xs.view(), zs.view(), a.k)?,
        });
    }
    if let Some(labels) = labels {
        let all = LabeledEmbedding::new(z, labels)?;
        let (train, test) = split_indices(n, a.test_fraction, a.seed)?;
        let (train, test) = (all.select(&train)?, all.select(&test)?);
        rows.push(MetricValue {
            metric: "knn_accuracy".into(),
            k: Some(a.knn_k),
            value: knn_accuracy(&train, &test, a.knn_k)?,
        });
        rows.push(MetricValue {
            metric: "linear_probe".into(),
            k: None,
            value: linear_probe(&train, &test, &ProbeConfig::default())?,
        });
    }
    if rows.is_empty() {
        return Err(Error::invalid("nothing to evaluate: pass --data or labels"));
    }
    let text = metrics_csv(&rows);
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => {
            let _ = write!(out, "{text}");
        }
    }
    Ok(())
}

fn plot(a: &PlotArgs) -> Result<()> {
    let (z, file_labels) = load_embedding(&a.embedding)?;
    let labels = match &a.labels {
        Some(p) => Some(load_any_labels(p, z.nrows())?),
        None => file_labels,
    };
    render_scatter_svg(z.view(), labels.as_deref(), &a.out)
}
