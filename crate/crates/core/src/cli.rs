//! The `comprf` command line.
//!
//! Exit codes: 0 success, 1 validation or domain failure, 2 IO or parse failure.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{run_approx_experiment, ApproxResults};
use crate::data::{read_csv, synthesize, write_csv, Dataset, SynthKind};
use crate::embedding::{write_embeddings_csv, Embedder, InputRecord, Mode};
use crate::error::{Error, Result};
use crate::features::{build_registry, cooccurrence_matrix, sparsity_stats, FeatureRegistry};
use crate::kernel_oracle::{kernel_matrix, write_matrix_csv};
use crate::learner::{
    encode_classes, evaluate, train, write_predictions_csv, Labels, Lambda, LossKind, SavedModel, Teacher, TrainConfig,
};
use crate::par::Execution;
use crate::skeleton::{complexity, complexity_trace, validate, Node, Skeleton, SkeletonConfig};

#[derive(Debug, Parser)]
#[command(name = "comprf", version, about = "Random features for compositional kernels")]
pub struct Cli {
    /// Maximum number of worker threads (output does not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a skeleton config and list every violation.
    Validate(ConfigArg),
    /// Print the skeleton complexity and its per-node recurrence.
    Complexity(ConfigArg),
    /// Sample a feature registry and write it to a file.
    Features(FeaturesArgs),
    /// Write the input co-occurrence correlation matrix of a sampled registry.
    Cooccur(FeaturesArgs),
    /// Compare empirical and exact kernels across feature budgets.
    Bench(BenchArgs),
    /// Write the embeddings of a dataset under a registry.
    Embed(EmbedArgs),
    /// Write the exact kernel matrix of a dataset.
    Kernel(KernelArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Fit a linear model on real-mode embeddings.
    Train(TrainArgs),
    /// Apply a trained model to a dataset.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub q: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Either a data file or `--synth KIND N [LOCALITY]`.
#[derive(Debug, Args)]
pub struct DataSource {
    /// CSV dataset whose columns follow the skeleton's inputs.
    #[arg(long, conflicts_with = "synth")]
    pub data: Option<PathBuf>,
    /// Synthetic data: KIND (iid or local), row count, optional locality in [0, 1].
    #[arg(long, num_args = 2..=3, value_names = ["KIND", "N", "LOCALITY"])]
    pub synth: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub source: DataSource,
    /// Comma-separated feature budgets.
    #[arg(long, value_delimiter = ',', required = true)]
    pub budgets: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV report; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModeArgs {
    /// Real features (the default).
    #[arg(long, conflicts_with = "complex")]
    pub real: bool,
    /// Complex features.
    #[arg(long)]
    pub complex: bool,
    /// Seed for the real-mode phase shifts.
    #[arg(long, default_value_t = 0)]
    pub real_seed: u64,
}

impl ModeArgs {
    fn mode(&self) -> Mode {
        if self.complex {
            Mode::Complex
        } else {
            Mode::Real { seed: self.real_seed }
        }
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    #[command(flatten)]
    pub source: DataSource,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub mode: ModeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub source: DataSource,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, num_args = 2..=3, value_names = ["KIND", "N", "LOCALITY"], required = true)]
    pub synth: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add a `label` column from a random combination of this many kernel sections.
    #[arg(long)]
    pub teacher: Option<usize>,
    /// Seed for the teacher, kept apart from `--seed` so train and test files share one target.
    #[arg(long, default_value_t = 0)]
    pub teacher_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LossArg {
    Squared,
    Logistic,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    /// CSV dataset with a `label` column.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, conflicts_with = "auto_lambda")]
    pub lambda: Option<f64>,
    /// Set lambda = sqrt(2) rho C / (sqrt(m) B) from the skeleton's feature bound C.
    #[arg(long, num_args = 2, value_names = ["B", "RHO"])]
    pub auto_lambda: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = LossArg::Squared)]
    pub loss: LossArg,
    /// Treat labels as classes (one-hot targets for squared loss).
    #[arg(long)]
    pub classify: bool,
    #[arg(long, default_value_t = 0)]
    pub real_seed: u64,
    /// Where to write the model.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Predictions CSV.
    #[arg(long)]
    pub out: PathBuf,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::Parse(_) => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.threads {
        Some(0) => Err(Error::Parameter("--threads must be at least 1".into())),
        #[cfg(feature = "parallel")]
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Parameter(format!("cannot start thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command))
        }
        _ => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<i32> {
    let mut out = io::stdout().lock();
    match command {
        Command::Validate(a) => cmd_validate(&a.config, &mut out),
        Command::Complexity(a) => cmd_complexity(&a.config, &mut out),
        Command::Features(a) => cmd_features(&a, &mut out),
        Command::Cooccur(a) => cmd_cooccur(&a, &mut out),
        Command::Bench(a) => cmd_bench(&a, &mut out),
        Command::Embed(a) => cmd_embed(&a),
        Command::Kernel(a) => cmd_kernel(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a, &mut out),
        Command::Predict(a) => cmd_predict(&a, &mut out),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create_file(path: &Path) -> Result<io::BufWriter<fs::File>> {
    let f =
        fs::File::create(path).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(io::BufWriter::new(f))
}

fn load_config(path: &Path) -> Result<SkeletonConfig> {
    SkeletonConfig::from_json(&read_text(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn load_skeleton(path: &Path) -> Result<Skeleton> {
    Skeleton::from_config(load_config(path)?)
}

fn load_registry(path: &Path, skeleton: &Skeleton) -> Result<FeatureRegistry> {
    FeatureRegistry::from_json(&read_text(path)?, skeleton)
}

fn parse_synth(spec: &[String]) -> Result<(SynthKind, usize, f64)> {
    let kind: SynthKind = spec[0].parse()?;
    let n = spec[1]
        .parse::<usize>()
        .map_err(|_| Error::Parameter(format!("synthetic row count {:?} is not a count", spec[1])))?;
    let locality = match spec.get(2) {
        Some(s) => s
            .parse::<f64>()
            .map_err(|_| Error::Parameter(format!("locality {s:?} is not a number")))?,
        None if kind == SynthKind::Local => 0.5,
        None => 0.0,
    };
    Ok((kind, n, locality))
}

fn load_source(source: &DataSource, skeleton: &Skeleton, seed: u64) -> Result<Dataset> {
    match (&source.data, &source.synth) {
        (Some(path), _) => load_dataset(path, skeleton),
        (None, Some(spec)) => {
            let (kind, n, locality) = parse_synth(spec)?;
            Ok(Dataset {
                records: synthesize(skeleton, n, kind, locality, seed)?,
                labels: None,
                warnings: Vec::new(),
            })
        }
        (None, None) => Err(Error::Usage("pass --data PATH or --synth KIND N [LOCALITY]".into())),
    }
}

fn load_dataset(path: &Path, skeleton: &Skeleton) -> Result<Dataset> {
    let f =
        fs::File::open(path).map_err(|e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let ds = read_csv(io::BufReader::new(f), skeleton)?;
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    Ok(ds)
}

pub fn cmd_validate(path: &Path, out: &mut impl Write) -> Result<i32> {
    let cfg = load_config(path)?;
    let violations = validate(&cfg);
    if violations.is_empty() {
        writeln!(
            out,
            "valid: {} inputs, {} internal nodes, output {}",
            cfg.inputs.len(),
            cfg.internal.len(),
            cfg.output
        )?;
        Ok(0)
    } else {
        writeln!(out, "invalid: {} violation(s)", violations.len())?;
        for v in violations {
            writeln!(out, "  {v}")?;
        }
        Ok(1)
    }
}

pub fn cmd_complexity(path: &Path, out: &mut impl Write) -> Result<i32> {
    let skel = load_skeleton(path)?;
    writeln!(out, "C(S) = {:.6}", complexity(&skel).0)?;
    for (id, c) in complexity_trace(&skel) {
        let what = match skel.node(id)? {
            Node::Input(_) => "input".to_string(),
            Node::Internal(n) => format!(
                "sigma'(1) = {:.6}, in = {:?}",
                n.activation.sigma_prime_at_one(),
                n.inputs.iter().map(|u| u.0).collect::<Vec<_>>()
            ),
        };
        writeln!(out, "  node {id}: C = {c:.6} ({what})")?;
    }
    Ok(0)
}

pub fn cmd_features(a: &FeaturesArgs, out: &mut impl Write) -> Result<i32> {
    let skel = load_skeleton(&a.config)?;
    let registry = build_registry(&skel, a.q, a.seed, Execution::default())?;
    write_file(&a.out, registry.to_json().as_bytes())?;
    let s = sparsity_stats(&registry);
    writeln!(out, "draws {}", registry.draws())?;
    writeln!(out, "distinct {}", s.distinct_count)?;
    writeln!(out, "dedup_ratio {:.6}", s.dedup_ratio)?;
    writeln!(out, "mean_atoms {:.6}", s.mean_atoms)?;
    writeln!(out, "max_atoms {}", s.max_atoms)?;
    Ok(0)
}

pub fn cmd_cooccur(a: &FeaturesArgs, out: &mut impl Write) -> Result<i32> {
    let skel = load_skeleton(&a.config)?;
    let registry = build_registry(&skel, a.q, a.seed, Execution::default())?;
    let co = cooccurrence_matrix(&registry, skel.n_inputs())?;
    let mut w = csv::Writer::from_writer(create_file(&a.out)?);
    w.write_record((1..=co.n).map(|i| i.to_string()))?;
    for i in 0..co.n {
        w.write_record((0..co.n).map(|j| co.get(i, j).to_string()))?;
    }
    w.flush()?;
    let flat: Vec<usize> = (0..co.n).filter(|&i| co.degenerate[i]).map(|i| i + 1).collect();
    if !flat.is_empty() {
        writeln!(out, "zero-variance inputs (rows set to 0): {flat:?}")?;
    }
    writeln!(out, "wrote {}x{} correlation matrix", co.n, co.n)?;
    Ok(0)
}

pub fn cmd_bench(a: &BenchArgs, out: &mut impl Write) -> Result<i32> {
    let skel = load_skeleton(&a.config)?;
    let data = load_source(&a.source, &skel, a.seed)?;
    let res: ApproxResults =
        run_approx_experiment(&skel, &data.records, &a.budgets, a.trials, a.seed, Execution::default())?;
    match &a.out {
        Some(path) => {
            res.write_csv(create_file(path)?)?;
            write!(out, "{}", res.summary_table())?;
        }
        None => res.write_csv(&mut *out)?,
    }
    Ok(0)
}

pub fn cmd_embed(a: &EmbedArgs) -> Result<i32> {
    let skel = load_skeleton(&a.config)?;
    let registry = load_registry(&a.registry, &skel)?;
    let data = load_source(&a.source, &skel, a.seed)?;
    let emb = Embedder::new(&skel, &registry, a.mode.mode())?;
    let rows = emb.embed_batch(&data.records, Execution::default())?;
    write_embeddings_csv(create_file(&a.out)?, &rows)?;
    Ok(0)
}

pub fn cmd_kernel(a: &KernelArgs) -> Result<i32> {
    let skel = load_skeleton(&a.config)?;
    let data = load_source(&a.source, &skel, a.seed)?;
    let n = data.records.len();
    let k = kernel_matrix(&skel, &data.records, Execution::default())?;
    write_matrix_csv(create_file(&a.out)?, n, &k)?;
    Ok(0)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let skel = load_skeleton(&a.config)?;
    let (kind, n, locality) = parse_synth(&a.synth)?;
    let records = synthesize(&skel, n, kind, locality, a.seed)?;
    let labels = match a.teacher {
        Some(0) => return Err(Error::Parameter("--teacher needs at least one center".into())),
        Some(j) => {
            let t = Teacher::random(&skel, j, a.teacher_seed)?;
            Some(records.iter().map(|x| t.eval(&skel, x)).collect::<Result<Vec<f64>>>()?)
        }
        None => None,
    };
    write_csv(create_file(&a.out)?, &skel, &records, labels.as_deref())?;
    Ok(0)
}

fn embed_real(
    skel: &Skeleton,
    registry: &FeatureRegistry,
    records: &[InputRecord],
    seed: u64,
) -> Result<nalgebra::DMatrix<f64>> {
    Embedder::new(skel, registry, Mode::Real { seed })?.real_matrix(records, Execution::default())
}

pub fn cmd_train(a: &TrainArgs, out: &mut impl Write) -> Result<i32> {
    let skel = load_skeleton(&a.config)?;
    let registry = load_registry(&a.registry, &skel)?;
    let data = load_dataset(&a.data, &skel)?;
    let values = data
        .labels
        .ok_or_else(|| Error::Usage("training data needs a label column".into()))?;
    let loss = match a.loss {
        LossArg::Squared => LossKind::Squared,
        LossArg::Logistic => LossKind::Logistic,
    };
    let (labels, classes) = if a.classify || loss == LossKind::Logistic {
        let (y, classes) = encode_classes(&values)?;
        (
            Labels::Classes {
                y,
                n_classes: classes.len(),
            },
            Some(classes),
        )
    } else {
        (Labels::scalar(&values), None)
    };
    let lambda = match (&a.lambda, &a.auto_lambda) {
        (Some(l), _) => Lambda::Fixed(*l),
        (None, Some(br)) => Lambda::Auto {
            b: br[0],
            rho: br[1],
            c: skel.feature_bound(),
        },
        (None, None) => TrainConfig::default().lambda,
    };
    let cfg = TrainConfig {
        lambda,
        loss,
        ..TrainConfig::default()
    };
    let x = embed_real(&skel, &registry, &data.records, a.real_seed)?;
    let model = train(&x, &labels, &cfg)?;
    let metrics = evaluate(&model, &x, &labels)?;
    let saved = SavedModel {
        model,
        registry_hash: registry.fingerprint(),
        real_seed: a.real_seed,
        classes,
    };
    write_file(&a.out, saved.to_json().as_bytes())?;
    writeln!(out, "lambda {:e}", saved.model.lambda)?;
    writeln!(out, "objective {:.6e}", saved.model.objective(&x, &labels)?)?;
    print_metrics(out, "train", &metrics)?;
    Ok(0)
}

fn print_metrics(out: &mut impl Write, what: &str, m: &crate::learner::Metrics) -> Result<()> {
    writeln!(out, "{what}_loss {:.6e}", m.loss)?;
    if let Some(mse) = m.mse {
        writeln!(out, "{what}_mse {mse:.6e}")?;
    }
    if let Some(acc) = m.accuracy {
        writeln!(out, "{what}_accuracy {acc:.6}")?;
    }
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs, out: &mut impl Write) -> Result<i32> {
    let skel = load_skeleton(&a.config)?;
    let registry = load_registry(&a.registry, &skel)?;
    let saved = SavedModel::from_json(&read_text(&a.model)?)?;
    if saved.registry_hash != registry.fingerprint() {
        return Err(Error::Usage("model was trained on a different registry".into()));
    }
    let data = load_dataset(&a.data, &skel)?;
    let x = embed_real(&skel, &registry, &data.records, saved.real_seed)?;
    let scores = saved.model.predict(&x)?;
    write_predictions_csv(create_file(&a.out)?, &scores, saved.classes.as_deref())?;
    if let Some(values) = &data.labels {
        let labels = match &saved.classes {
            Some(classes) => {
                let y = values
                    .iter()
                    .map(|v| {
                        classes
                            .iter()
                            .position(|c| c == v)
                            .ok_or_else(|| Error::Domain(format!("label {v} is not a known class")))
                    })
                    .collect::<Result<Vec<usize>>>()?;
                Labels::Classes {
                    y,
                    n_classes: classes.len(),
                }
            }
            None => Labels::scalar(values),
        };
        print_metrics(out, "test", &evaluate(&saved.model, &x, &labels)?)?;
    }
    writeln!(out, "wrote {} predictions", scores.nrows())?;
    Ok(0)
}
