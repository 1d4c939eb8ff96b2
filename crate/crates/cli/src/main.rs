use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fourier_sr::gradcheck::{run_all, GradcheckOptions};
use fourier_sr::losses::{feature_loss, fourier_loss_terms, l1_loss, ConvFeatureExtractor};
use fourier_sr::metrics::MetricReport;
use fourier_sr::nets::Checkpoint;
use fourier_sr::spectral::{log_amplitude_image, windowed_spectrum};
use fourier_sr::tensor::{downscale, load_ppm, save_ppm, upscale};
use fourier_sr::trainer::{generator_from_checkpoint, train, Dataset, TrainConfig};
use fourier_sr::{Error, Image, ScaleFactor};

/// Fourier-space losses and adversarial training for super-resolution.
#[derive(Parser, Debug)]
#[command(name = "fsr", version)]
struct Cli {
    /// Worker threads for the parallel paths; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bicubic-downsample an image by an integer factor.
    Degrade(DegradeArgs),
    /// Report every loss term for a prediction/target pair.
    Loss(LossArgs),
    /// Save the log-scaled amplitude spectrum as an image.
    Spectrum(SpectrumArgs),
    /// Train a generator on a directory of images.
    Train(TrainArgs),
    /// PSNR and SSIM of predictions against references.
    Eval(EvalArgs),
    /// Compare every analytic gradient with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Super-resolve an image with a trained checkpoint.
    Upscale(UpscaleArgs),
}

#[derive(Args, Debug)]
struct DegradeArgs {
    /// Input PPM.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output PPM.
    #[arg(long)]
    out: PathBuf,
    /// Downscaling factor.
    #[arg(long, default_value_t = 4)]
    scale: usize,
}

#[derive(Args, Debug)]
struct LossArgs {
    /// Predicted image (PPM).
    #[arg(long)]
    pred: PathBuf,
    /// Target image (PPM).
    #[arg(long)]
    target: PathBuf,
    /// Seed of the feature extractor.
    #[arg(long, default_value_t = 0)]
    feature_seed: u64,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    /// Input PPM.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output PPM of the kept half spectrum.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// key=value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of HR training images (*.ppm).
    #[arg(long)]
    data_dir: PathBuf,
    /// Output directory for checkpoint.fsrc, train.tsv and config.txt.
    #[arg(long)]
    out: PathBuf,
    /// Loss preset 1-8.
    #[arg(long)]
    preset: Option<usize>,
    /// Training log path [default: <out>/train.tsv].
    #[arg(long)]
    log: Option<PathBuf>,
    /// Iterations after pretraining.
    #[arg(long)]
    iters: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Extra key=value override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of predicted images.
    #[arg(long)]
    pred_dir: PathBuf,
    /// Directory of reference images with the same file names.
    #[arg(long)]
    ref_dir: PathBuf,
    /// Also score a baseline computed from the references.
    #[arg(long, value_parser = ["bicubic"])]
    baseline: Option<String>,
    /// Scale factor used by the baseline.
    #[arg(long, default_value_t = 4)]
    scale: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side of the square test images; even, at least 8.
    #[arg(long, default_value_t = 8)]
    size: usize,
    /// Perturb the analytic gradients of matching components.
    #[arg(long, hide = true)]
    corrupt: Option<String>,
}

#[derive(Args, Debug)]
struct UpscaleArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// LR input PPM.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output PPM.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Data(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn context(what: impl std::fmt::Display) -> impl FnOnce(Error) -> Failure {
    move |e| match Failure::from(e) {
        Failure::Data(m) => Failure::Data(format!("{what}: {m}")),
        Failure::Numeric(m) => Failure::Numeric(format!("{what}: {m}")),
    }
}

fn load(path: &Path) -> Result<Image, Failure> {
    load_ppm(path).map_err(context(path.display()))
}

fn save(img: &Image, path: &Path) -> CmdResult {
    save_ppm(img, path).map_err(context(path.display()))
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn scale_factor(r: usize) -> Result<ScaleFactor, Failure> {
    ScaleFactor::new(r).map_err(context("--scale"))
}

/// Sorted `*.ppm` file names in a directory.
fn ppm_names(dir: &Path) -> Result<Vec<String>, Failure> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_failure(dir, e))? {
        let path = entry.map_err(|e| io_failure(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "ppm") {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn degrade(a: DegradeArgs) -> CmdResult {
    let img = load(&a.input)?;
    let lr = downscale(&img, scale_factor(a.scale)?).map_err(context(a.input.display()))?;
    save(&lr, &a.out)
}

fn loss(a: LossArgs) -> CmdResult {
    let pred = load(&a.pred)?;
    let target = load(&a.target)?;
    let pair = format!("{} vs {}", a.pred.display(), a.target.display());
    let l1 = l1_loss(&pred, &target).map_err(context(&pair))?;
    let f = fourier_loss_terms(&pred, &target).map_err(context(&pair))?;
    let mut extractor = ConvFeatureExtractor::new(pred.channels(), a.feature_seed);
    let feat = feature_loss(&pred, &target, &mut extractor).map_err(context(&pair))?;
    let rows = [
        ("l1", l1.value),
        ("fourier_amp", f.amplitude.value),
        ("fourier_phase", f.phase.value),
        ("fourier", f.combined.value),
        ("feature", feat.value),
    ];
    for (name, v) in rows {
        println!("{name}={v:.16e}");
    }
    if let Some(path) = a.json {
        let map: serde_json::Map<String, serde_json::Value> =
            rows.iter().map(|(k, v)| (k.to_string(), serde_json::json!(v))).collect();
        let text = serde_json::to_string_pretty(&map).expect("finite map serializes");
        fs::write(&path, text + "\n").map_err(|e| io_failure(&path, e))?;
    }
    Ok(())
}

fn spectrum(a: SpectrumArgs) -> CmdResult {
    let img = load(&a.input)?;
    let spec = windowed_spectrum(&img).map_err(context(a.input.display()))?;
    save(&log_amplitude_image(&spec), &a.out)
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::load(path).map_err(context(path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(n) = a.preset {
        cfg.apply_preset(n).map_err(context("--preset"))?;
    }
    if let Some(v) = a.iters {
        cfg.iters = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Data(format!("--set {kv}: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim()).map_err(context(format!("--set {kv}")))?;
    }
    cfg.validate().map_err(context("configuration"))?;
    print!("{}", cfg.echo());

    let names = ppm_names(&a.data_dir)?;
    if names.is_empty() {
        return Err(Failure::Data(format!("{}: no .ppm files", a.data_dir.display())));
    }
    let images = names
        .iter()
        .map(|n| load(&a.data_dir.join(n)))
        .collect::<Result<Vec<_>, _>>()?;
    let data = Dataset::new(images, cfg.scale).map_err(context(a.data_dir.display()))?;

    fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    let config_path = a.out.join("config.txt");
    fs::write(&config_path, cfg.echo()).map_err(|e| io_failure(&config_path, e))?;
    let log_path = a.log.unwrap_or_else(|| a.out.join("train.tsv"));
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_failure(&log_path, e))?);
    let outcome = train(&cfg, &data, Some(&mut log)).map_err(context("training"))?;
    log.flush().map_err(|e| io_failure(&log_path, e))?;
    let ck_path = a.out.join("checkpoint.fsrc");
    outcome.checkpoint.save(&ck_path).map_err(context(ck_path.display()))?;
    if let Some(last) = outcome.rows.last() {
        eprintln!("iteration {}: generator total {:.6e}", last.iteration, last.generator_total);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let names = ppm_names(&a.ref_dir)?;
    if names.is_empty() {
        return Err(Failure::Data(format!("{}: no .ppm files", a.ref_dir.display())));
    }
    let r = scale_factor(a.scale)?;
    let mut report = MetricReport::default();
    let mut baseline = MetricReport::default();
    for name in &names {
        let reference = load(&a.ref_dir.join(name))?;
        let pred = load(&a.pred_dir.join(name))?;
        report.push(name.as_str(), &pred, &reference).map_err(context(name))?;
        if a.baseline.is_some() {
            let bicubic = downscale(&reference, r)
                .and_then(|lr| upscale(&lr, r))
                .map_err(context(name))?;
            baseline.push(name.as_str(), &bicubic.clamped(), &reference).map_err(context(name))?;
        }
    }
    let fmt = |v: f64| if v.is_infinite() { "inf".to_string() } else { format!("{v:.6}") };
    let with_baseline = a.baseline.is_some();
    if with_baseline {
        println!("image\tpsnr\tssim\tbicubic_psnr\tbicubic_ssim");
    } else {
        println!("image\tpsnr\tssim");
    }
    let mut rows: Vec<(String, f64, f64, Option<(f64, f64)>)> = report
        .images
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let b = baseline.images.get(i).map(|b| (b.psnr_db, b.ssim));
            (m.name.clone(), m.psnr_db, m.ssim, b)
        })
        .collect();
    rows.push((
        "mean".into(),
        report.mean_psnr(),
        report.mean_ssim(),
        with_baseline.then(|| (baseline.mean_psnr(), baseline.mean_ssim())),
    ));
    for (name, p, s, b) in rows {
        match b {
            Some((bp, bs)) => println!("{name}\t{}\t{}\t{}\t{}", fmt(p), fmt(s), fmt(bp), fmt(bs)),
            None => println!("{name}\t{}\t{}", fmt(p), fmt(s)),
        }
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let opts = GradcheckOptions {
        seed: a.seed,
        size: a.size,
        corrupt: a.corrupt,
        ..GradcheckOptions::default()
    };
    let report = run_all(&opts).map_err(context("gradcheck"))?;
    print!("{}", report.to_table());
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<_> =
            report.components.iter().filter(|c| !c.ok).map(|c| c.name.as_str()).collect();
        Err(Failure::Numeric(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn upscale_cmd(a: UpscaleArgs) -> CmdResult {
    let ck = Checkpoint::load(&a.checkpoint).map_err(context(a.checkpoint.display()))?;
    let mut generator = generator_from_checkpoint(&ck).map_err(context(a.checkpoint.display()))?;
    let lr = load(&a.input)?;
    let sr = generator.upscale(&lr).map_err(context(a.input.display()))?;
    save(&sr, &a.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Degrade(a) => degrade(a),
        Command::Loss(a) => loss(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Upscale(a) => upscale_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
