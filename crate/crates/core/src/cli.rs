//! Command-line front end.
//!
//! Exit codes: `0` success, `1` invalid input or usage, `2` I/O failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::atta::{self, Variant, DEFAULT_OMEGA_EPS};
use crate::augment::{self, AugPolicy};
use crate::baselines;
use crate::error::{Error, Result};
use crate::io::{self as files, MethodParams, ParamsFile, Predictions, ReportFile, TrainingTrace};
use crate::metrics::{self, DEFAULT_BINS};
use crate::optim::{self, FitConfig};
use crate::simplex::{Dataset, LogitVector, ProbVector};
use crate::synth::{self, SynthSpec};

/// Floor applied to probabilities before taking logs for temperature scaling.
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Matta,
    Vatta,
    Temperature,
    Isotonic,
    Histogram,
    Vanilla,
}

impl Method {
    fn tag(self) -> &'static str {
        match self {
            Method::Matta => "matta",
            Method::Vatta => "vatta",
            Method::Temperature => "temperature",
            Method::Isotonic => "isotonic",
            Method::Histogram => "histogram",
            Method::Vanilla => "vanilla",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ttacal", version, about = "Calibrate classifier outputs with adaptive test-time augmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic miscalibrated dataset
    Synth(SynthArgs),
    /// Fit a calibrator on a dataset
    Fit(FitArgs),
    /// Write calibrated predictions for a dataset
    Apply(ApplyArgs),
    /// Compute calibration metrics of predictions
    Eval(EvalArgs),
    /// Augment every image in a directory with a policy
    Augment(AugmentArgs),
    /// Print a report or params file as text
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Distortion temperature of the original head
    #[arg(long, default_value_t = 0.5)]
    pub temperature: f64,
    /// Quality of each augmentation type in [0, 1]
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.0])]
    pub quality: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub noise_scale: f64,
    #[arg(long, default_value_t = 3.0)]
    pub logit_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Bin count for histogram binning
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 500)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Params file written by `fit`; not needed for `--method vanilla`
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Expected method; defaults to the one recorded in the params file
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, default_value_t = DEFAULT_OMEGA_EPS)]
    pub omega_eps: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions or dataset files; several are concatenated
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Directory of `.pgm`, `.ppm`, `.pnm` or `.tns` images
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Policy number, 1 to 8
    #[arg(long, default_value_t = 8)]
    pub policy: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 2,
        Error::InvalidInput(_) | Error::Parse { .. } => 1,
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Apply(a) => cmd_apply(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        classes: a.classes,
        samples: a.samples,
        temperature: a.temperature,
        qualities: a.quality.clone(),
        noise_scale: a.noise_scale,
        logit_scale: a.logit_scale,
        seed: a.seed,
    };
    let data = synth::generate(&spec)?;
    files::save_dataset(&data.dataset, &a.output)?;
    println!("wrote {} records to {}", data.dataset.len(), a.output.display());
    Ok(())
}

/// Logits whose softmax is `p`, for calibrators that need logits.
pub fn log_probs(p: &ProbVector) -> LogitVector {
    LogitVector::new(p.values().iter().map(|v| v.max(LOG_FLOOR).ln()).collect())
        .expect("floored logs are finite")
}

fn top_label_data(dataset: &Dataset) -> (Vec<f64>, Vec<bool>) {
    dataset
        .samples()
        .iter()
        .map(|s| (s.p0().confidence(), s.p0().top_class() == s.label()))
        .unzip()
}

/// Fits `method` on `dataset`; `None` for the vanilla method, which has
/// nothing to fit.
pub fn fit_method(dataset: &Dataset, method: Method, bins: usize, config: &FitConfig) -> Result<Option<ParamsFile>> {
    let mut training = None;
    let params = match method {
        Method::Vanilla => return Ok(None),
        Method::Matta | Method::Vatta => {
            let variant = if method == Method::Matta { Variant::Matrix } else { Variant::Vector };
            let result = optim::fit(dataset, variant, config)?;
            training = Some(TrainingTrace {
                loss_history: result.loss_history,
                best_epoch: result.best_epoch,
            });
            MethodParams::Atta(result.params)
        }
        Method::Temperature => {
            let logits: Vec<LogitVector> = dataset.samples().iter().map(|s| log_probs(s.p0())).collect();
            MethodParams::Temperature(baselines::fit_temperature(&logits, &dataset.labels())?)
        }
        Method::Histogram => {
            let (conf, correct) = top_label_data(dataset);
            MethodParams::Binning(baselines::fit_histogram_binning(&conf, &correct, bins)?)
        }
        Method::Isotonic => {
            let (conf, correct) = top_label_data(dataset);
            MethodParams::Binning(baselines::fit_isotonic(&conf, &correct)?)
        }
    };
    Ok(Some(ParamsFile {
        k: dataset.classes(),
        m: dataset.types(),
        params,
        training,
    }))
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    if a.method == Method::Vanilla {
        return Err(Error::invalid("the vanilla method has nothing to fit"));
    }
    let dataset = files::load_dataset(&a.input)?;
    let config = FitConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        ..FitConfig::default()
    };
    let file = fit_method(&dataset, a.method, a.bins, &config)?.expect("vanilla handled above");
    files::write_params(&file, files::create(&a.output)?)?;
    println!(
        "fitted {} ({} values) on {} records",
        file.params.tag(),
        file.params.value_count(),
        dataset.len()
    );
    Ok(())
}

/// Calibrated predictions of `dataset` under `params` (vanilla when `None`).
pub fn apply_method(dataset: &Dataset, params: Option<&ParamsFile>, omega_eps: f64) -> Result<Vec<ProbVector>> {
    let Some(file) = params else {
        return Ok(dataset.vanilla());
    };
    if file.k != dataset.classes() {
        return Err(Error::invalid(format!(
            "params fitted for k = {}, dataset has k = {}",
            file.k,
            dataset.classes()
        )));
    }
    Ok(match &file.params {
        MethodParams::Atta(p) => atta::predict(dataset, p, omega_eps)?,
        MethodParams::Temperature(p) => {
            let logits: Vec<LogitVector> = dataset.samples().iter().map(|s| log_probs(s.p0())).collect();
            baselines::apply_temperature(&logits, p)
        }
        MethodParams::Binning(p) => baselines::apply_binning(&dataset.vanilla(), p),
    })
}

fn cmd_apply(a: &ApplyArgs) -> Result<()> {
    let params = match (&a.params, a.method) {
        (_, Some(Method::Vanilla)) => None,
        (Some(path), expected) => {
            let file = files::read_params(files::open(path)?)?;
            if let Some(m) = expected {
                if m.tag() != file.params.tag() {
                    return Err(Error::invalid(format!(
                        "params file holds {}, not {}",
                        file.params.tag(),
                        m.tag()
                    )));
                }
            }
            Some(file)
        }
        (None, _) => return Err(Error::invalid("--params is required unless --method vanilla")),
    };
    let dataset = files::load_dataset(&a.input)?;
    let probs = apply_method(&dataset, params.as_ref(), a.omega_eps)?;
    let method = params.as_ref().map_or("vanilla", |p| p.params.tag());
    let preds = Predictions {
        method: method.into(),
        k: dataset.classes(),
        probs,
        labels: Some(dataset.labels()),
    };
    files::write_predictions(&preds, files::create(&a.output)?)?;
    println!("wrote {} {} predictions to {}", preds.probs.len(), method, a.output.display());
    Ok(())
}

/// Predictions from a predictions file, or the vanilla ones of a dataset file.
fn load_predictions(path: &Path) -> Result<Predictions> {
    match files::detect_format(files::open(path)?)?.as_str() {
        files::DATASET_FORMAT => {
            let ds = files::load_dataset(path)?;
            Ok(Predictions {
                method: "vanilla".into(),
                k: ds.classes(),
                probs: ds.vanilla(),
                labels: Some(ds.labels()),
            })
        }
        _ => files::read_predictions(files::open(path)?),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    let mut method: Option<String> = None;
    let mut k = None;
    for path in &a.input {
        let preds = load_predictions(path)?;
        if *k.get_or_insert(preds.k) != preds.k {
            return Err(Error::invalid("input files differ in class count"));
        }
        let Some(l) = preds.labels else {
            return Err(Error::invalid(format!("{} has no labels", path.display())));
        };
        match &method {
            Some(m) if *m != preds.method => method = Some("mixed".into()),
            Some(_) => {}
            None => method = Some(preds.method.clone()),
        }
        probs.extend(preds.probs);
        labels.extend(l);
    }
    let report = metrics::evaluate(&probs, &labels, a.bins)?;
    let file = ReportFile {
        method: method.unwrap_or_default(),
        samples: probs.len(),
        report,
    };
    if let Some(out) = &a.output {
        files::write_report(&file, files::create(out)?)?;
    }
    print!("{}", render_report(&file));
    Ok(())
}

fn cmd_augment(a: &AugmentArgs) -> Result<()> {
    let policy = AugPolicy::table(a.policy, a.seed)?;
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(&a.input)?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    inputs.retain(|p| p.is_file() && augment::is_image_path(p));
    inputs.sort();
    std::fs::create_dir_all(&a.output)?;
    let mut written = 0;
    for (index, path) in inputs.iter().enumerate() {
        let img = augment::load_image(path)?;
        let per_image = policy.with_seed(a.seed.wrapping_add(index as u64));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("tns");
        for out in augment::apply_policy(&img, &per_image)? {
            let name = format!("{stem}_a{}_r{}.{ext}", out.aug_type, out.replicate);
            augment::save_image(&out.image, &a.output.join(name))?;
            written += 1;
        }
    }
    println!(
        "policy {} ({policy}): wrote {written} images for {} inputs",
        a.policy,
        inputs.len()
    );
    Ok(())
}

/// Plain-text rendering of a report.
pub fn render_report(file: &ReportFile) -> String {
    let r = &file.report;
    let mut s = String::new();
    let _ = writeln!(s, "method     {}", file.method);
    let _ = writeln!(s, "samples    {}", file.samples);
    let _ = writeln!(s, "accuracy   {:.6}", r.accuracy);
    let _ = writeln!(s, "brier      {:.6}", r.brier);
    let _ = writeln!(s, "mc_brier   {:.6}", r.mc_brier);
    let _ = writeln!(s, "ece        {:.6}", r.ece);
    let _ = writeln!(s, "nll        {:.6}", r.nll);
    let _ = writeln!(s, "bin  range            count  confidence  accuracy");
    for (i, b) in r.reliability.bins.iter().enumerate() {
        let _ = writeln!(
            s,
            "{i:>3}  ({:.3}, {:.3}]  {:>6}  {:>10.4}  {:>8.4}",
            b.lower, b.upper, b.count, b.confidence, b.accuracy
        );
    }
    s
}

fn render_params(file: &ParamsFile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method     {}", file.params.tag());
    let _ = writeln!(s, "shape      k = {}, m = {}", file.k, file.m);
    match &file.params {
        MethodParams::Atta(p) => {
            let _ = writeln!(s, "omega*     {:.6}", p.omega_star());
        }
        MethodParams::Temperature(p) => {
            let _ = writeln!(s, "T          {:.6}", p.temperature());
        }
        MethodParams::Binning(p) => {
            let _ = writeln!(s, "bins       {}", p.bin_count());
        }
    }
    if let Some(t) = &file.training {
        let _ = writeln!(s, "epochs     {}", t.loss_history.len());
        let _ = writeln!(s, "best epoch {}", t.best_epoch);
        for (e, loss) in t.loss_history.iter().enumerate() {
            let _ = writeln!(s, "{e:>5}  {loss:.6}");
        }
    }
    s
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let text = match files::detect_format(files::open(&a.input)?)?.as_str() {
        files::REPORT_FORMAT => render_report(&files::read_report(files::open(&a.input)?)?),
        files::PARAMS_FORMAT => render_params(&files::read_params(files::open(&a.input)?)?),
        other => return Err(Error::invalid(format!("cannot render a {other} file"))),
    };
    match &a.output {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}
