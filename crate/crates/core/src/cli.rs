//! The `amx` command line: train, explain, circuit, compare.
//!
//! Every command validates its inputs before doing any work, writes an echo of
//! its resolved configuration next to its outputs, and maps failures to exit
//! codes: 2 usage, 3 data or I/O, 4 numerical.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::circuit::{build_circuit, emit_graph, CircuitError, GraphFormat, DEFAULT_K};
use crate::compare::{compare_images, CompareError};
use crate::data::{normalize, sample_indices, DataError, Dataset, MnistDir};
use crate::explain::{optimize_explanation, ExplainConfig, ExplainError};
use crate::gradcam::GradCamError;
use crate::io::{load_gray_png, save_gray_png, write_atomic};
use crate::nn::{train_classifier, ModelBundle, ModelError, TrainConfig};
use crate::tensor::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Data(_) => EXIT_DATA,
            Self::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Training(msg) => Self::Usage(msg),
            ModelError::Tensor(t) => Self::Numerical(t.to_string()),
            other => Self::Data(other.to_string()),
        }
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Config(_) | ExplainError::InvalidArgument(_) => Self::Usage(e.to_string()),
            ExplainError::Model(m) => m.into(),
            ExplainError::Data(d) => d.into(),
            ExplainError::NonFinite { .. } | ExplainError::Tensor(_) => Self::Numerical(e.to_string()),
        }
    }
}

impl From<GradCamError> for CliError {
    fn from(e: GradCamError) -> Self {
        match e {
            GradCamError::Model(m) => m.into(),
            GradCamError::Tensor(t) => Self::Numerical(t.to_string()),
            other => Self::Usage(other.to_string()),
        }
    }
}

impl From<CircuitError> for CliError {
    fn from(e: CircuitError) -> Self {
        match e {
            CircuitError::InvalidK | CircuitError::UnknownFormat(_) | CircuitError::Rank(_) => Self::Usage(e.to_string()),
            CircuitError::Model(m) => m.into(),
            CircuitError::Tensor(t) => Self::Numerical(t.to_string()),
            CircuitError::Json(j) => Self::Data(j.to_string()),
        }
    }
}

impl From<CompareError> for CliError {
    fn from(e: CompareError) -> Self {
        match e {
            CompareError::Empty => Self::Usage(e.to_string()),
            CompareError::Explain(x) => x.into(),
            CompareError::GradCam(g) => g.into(),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "amx", about = "Minimal binary-mask explanations and circuit readouts for an MNIST CNN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the classifier and write an AMXW weight file.
    Train(TrainArgs),
    /// Optimize a binary mask for one image.
    Explain(ExplainArgs),
    /// Extract the channel circuit of an image or explanation.
    Circuit(CircuitArgs),
    /// Compare optimized masks with Grad-CAM over a set of test digits.
    Compare(CompareArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory holding the four MNIST IDX files.
    #[arg(long, default_value = "data/mnist")]
    pub data: PathBuf,
    /// Output weight file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on the first N images only.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Test-set index of the image.
    #[arg(long, conflicts_with = "image", required_unless_present = "image")]
    pub index: Option<usize>,
    /// Grayscale PNG to explain.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Loss-weight JSON; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "data/mnist")]
    pub data: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CircuitArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Original image PNG.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Explanation PNG as written by `explain`.
    #[arg(long)]
    pub explanation: Option<PathBuf>,
    /// Test-set index, used when no PNG is given.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// json, dot, or both.
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Emit graphs for both the image and the explanation.
    #[arg(long)]
    pub compare: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "data/mnist")]
    pub data: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Number of test digits, drawn with `--seed`.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for digit selection and the base of per-image explanation seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value = "data/mnist")]
    pub data: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; messages go to stderr.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Circuit(a) => cmd_circuit(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// `<path>.<suffix>`, keeping the original extension.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn load_model(path: &Path) -> Result<ModelBundle<f32>> {
    ModelBundle::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = load_gray_png(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if img.shape() != [1, 1, 28, 28] {
        return Err(CliError::Usage(format!("{}: expected a 28x28 image, got {:?}", path.display(), &img.shape()[2..])));
    }
    Ok(img)
}

fn test_image(data: &Path, index: usize) -> Result<(Dataset, Tensor<f32>)> {
    let test = MnistDir(data.to_path_buf()).test()?;
    if index >= test.len() {
        return Err(CliError::Usage(format!("index {index} out of range for {} test images", test.len())));
    }
    let img = test.image(index);
    Ok((test, img))
}

fn resolve_explain_config(file: Option<&Path>, steps: Option<usize>, seed: Option<u64>) -> Result<ExplainConfig> {
    let mut cfg = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            ExplainConfig::from_json(&text)?
        }
        None => ExplainConfig::default(),
    };
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct TrainMetrics {
    test_accuracy: f64,
    epochs: usize,
    seed: u64,
    train_samples: usize,
    epoch_losses: Vec<f64>,
    test_predictions: Vec<usize>,
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.epochs == 0 {
        return Err(CliError::Usage("--epochs must be >= 1".into()));
    }
    if !(a.lr > 0.0) {
        return Err(CliError::Usage("--lr must be > 0".into()));
    }
    if a.limit == Some(0) {
        return Err(CliError::Usage("--limit must be >= 1".into()));
    }
    let mnist = MnistDir(a.data.clone());
    let (mut train, test) = (mnist.train()?, mnist.test()?);
    if let Some(n) = a.limit {
        train = train.take(n);
    }
    let cfg = TrainConfig { epochs: a.epochs, lr: a.lr, seed: a.seed, ..TrainConfig::default() };
    let (bundle, report) = train_classifier(&train, &test, &cfg)?;
    bundle.save(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    let metrics = TrainMetrics {
        test_accuracy: report.test_accuracy,
        epochs: report.epochs,
        seed: report.seed,
        train_samples: report.train_samples,
        epoch_losses: report.epoch_losses,
        test_predictions: report.test_predictions,
    };
    write(&sidecar(&a.out, "metrics.json"), &json(&metrics))?;
    write(&sidecar(&a.out, "config.json"), &json(&serde_json::json!({ "train": a, "batch_size": cfg.batch_size })))?;
    println!("test_accuracy {:.4} -> {}", metrics.test_accuracy, a.out.display());
    Ok(())
}

pub fn cmd_explain(a: &ExplainArgs) -> Result<()> {
    let cfg = resolve_explain_config(a.config.as_deref(), a.steps, a.seed)?;
    let bundle = load_model(&a.model)?;
    cfg.weights(bundle.taps().len())?;
    let raw = match (&a.image, a.index) {
        (Some(path), _) => load_png(path)?,
        (None, Some(i)) => test_image(&a.data, i)?.1,
        (None, None) => return Err(CliError::Usage("one of --index or --image is required".into())),
    };
    ensure_dir(&a.out_dir)?;
    let result = optimize_explanation(&bundle, &normalize(&raw), &cfg)?;
    save_gray_png(&a.out_dir.join("mask.png"), &result.mask)?;
    save_gray_png(&a.out_dir.join("explanation.png"), &result.explanation_raw())?;
    write(&a.out_dir.join("result.json"), &json(&result.summary))?;
    write(&a.out_dir.join("config.json"), &json(&serde_json::json!({ "explain": cfg, "args": a })))?;
    let s = &result.summary;
    println!(
        "label {} conf {:.4} -> {:.4}, active {:.2}%, preserved {}, robustness {:.2}",
        s.label,
        s.original_confidence,
        s.explanation_confidence,
        100.0 * s.active_fraction,
        s.label_preserved,
        s.robustness_success_rate
    );
    Ok(())
}

pub fn cmd_circuit(a: &CircuitArgs) -> Result<()> {
    if a.k < 1 {
        return Err(CliError::Usage("--k must be >= 1".into()));
    }
    let formats: Vec<(GraphFormat, &str)> = match a.format.as_str() {
        "both" => vec![(GraphFormat::Json, "json"), (GraphFormat::Dot, "dot")],
        f => vec![(f.parse::<GraphFormat>()?, f)],
    };
    let bundle = load_model(&a.model)?;
    let mut inputs: Vec<(&str, String, Tensor<f32>)> = Vec::new();
    let original = match (&a.image, a.index) {
        (Some(p), _) => Some((p.display().to_string(), load_png(p)?)),
        (None, Some(i)) => Some((format!("test:{i}"), test_image(&a.data, i)?.1)),
        (None, None) => None,
    };
    let explanation = match &a.explanation {
        Some(p) => Some((p.display().to_string(), load_png(p)?)),
        None => None,
    };
    match (a.compare, original, explanation) {
        (true, Some(x), Some(e)) => {
            inputs.push(("circuit_x", x.0, x.1));
            inputs.push(("circuit_e", e.0, e.1));
        }
        (true, _, _) => return Err(CliError::Usage("--compare needs --explanation and one of --image or --index".into())),
        (false, _, Some(e)) => inputs.push(("circuit", e.0, e.1)),
        (false, Some(x), None) => inputs.push(("circuit", x.0, x.1)),
        (false, None, None) => return Err(CliError::Usage("one of --image, --explanation, or --index is required".into())),
    }
    ensure_dir(&a.out)?;
    for (stem, id, raw) in &inputs {
        let graph = build_circuit(&bundle, &normalize(raw), a.k, id)?;
        for (format, ext) in &formats {
            write(&a.out.join(format!("{stem}.{ext}")), &emit_graph(&graph, *format)?)?;
        }
        println!(
            "{stem}: class {} conf {:.4}, {} nodes, {} edges",
            graph.meta.class,
            graph.meta.confidence,
            graph.nodes.len(),
            graph.edges.len()
        );
    }
    write(&a.out.join("config.json"), &json(&serde_json::json!({ "circuit": a })))?;
    Ok(())
}

pub fn cmd_compare(a: &CompareArgs) -> Result<()> {
    if a.count == 0 {
        return Err(CliError::Usage("--count must be >= 1".into()));
    }
    let cfg = resolve_explain_config(a.config.as_deref(), a.steps, a.seed)?;
    let bundle = load_model(&a.model)?;
    cfg.weights(bundle.taps().len())?;
    let test = MnistDir(a.data.clone()).test()?;
    let images: Vec<(String, Tensor<f32>)> =
        sample_indices(test.len(), a.count, cfg.seed).into_iter().map(|i| (format!("test:{i}"), test.image(i))).collect();
    let report = compare_images(&bundle, &images, &cfg)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write(&a.out, &json(&report))?;
    write(&sidecar(&a.out, "config.json"), &json(&serde_json::json!({ "explain": cfg, "args": a })))?;
    let m = &report.medians;
    println!(
        "{} images: median active {:.4} (Grad-CAM {:.4}), preserved {:.2}",
        report.rows.len(),
        m.ours_active_fraction,
        m.gradcam_fraction_at_fidelity,
        m.label_preserved_rate
    );
    Ok(())
}
