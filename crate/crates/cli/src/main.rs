//! `boxprop` command-line pipeline:
//! synth → decode → match → calibrate → evaluate → correlate, plus bench.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use boxprop::anchor::DecodeVariant;
use boxprop::bench::{self, Batch};
use boxprop::calibrate::{
    apply, apply_to_pairs, fit_factor_with, fit_isotonic_with, ClassSource, FactorLoss, FactorOptions,
    IsotonicOptions, Mode, Scheme, SizeBasis,
};
use boxprop::datio::{self, Profile};
use boxprop::matching::match_by_mse;
use boxprop::metrics::{correlate, evaluate, md_cd_csv, md_cd_uncertainty, Conditioning, EceOptions, EcePooling};
use boxprop::synth::{self, SynthConfig, SynthSpace};
use boxprop::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "boxprop", version, about = "Box-uncertainty decoding, calibration and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Directory for output artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with known noise.
    Synth(SynthArgs),
    /// Decode anchor-space detections to image space.
    Decode(DecodeArgs),
    /// Match detections to ground truth by nearest box mean.
    Match(MatchArgs),
    /// Fit a calibration model and apply it.
    Calibrate(CalibrateArgs),
    /// Compute the metric report for matched pairs.
    Evaluate(EvaluateArgs),
    /// Bin uncertainty against an object property.
    Correlate(CorrelateArgs),
    /// Time decode variants.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    objects: Option<usize>,
    /// Miscalibration factor: reported σ = σ_true / k.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long, value_parser = ["image", "anchor"])]
    space: Option<String>,
    /// Anchor layout for anchor space.
    #[arg(long)]
    anchor_config: Option<PathBuf>,
    #[arg(long, default_value = "kitti")]
    profile: String,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct DecodeArgs {
    /// Anchor-space detections file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    anchor_config: PathBuf,
    /// baseline, lnorm, chain, samp:K or falsedec.
    #[arg(long)]
    variant: String,
    #[arg(long)]
    train_correction: bool,
    /// Seed for samp:K.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct MatchArgs {
    /// Label directory or indexed label file.
    #[arg(long)]
    gt: PathBuf,
    /// Image-space detections file.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value = "kitti")]
    profile: String,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Matched pairs to fit on.
    #[arg(long)]
    pairs: PathBuf,
    /// Pairs to calibrate with the fitted model; defaults to the fit pairs.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Image-space detections to calibrate using their predicted classes.
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long, value_parser = ["ir", "ir-pco", "ir-cl", "ir-pco-cl", "fs"])]
    scheme: String,
    #[arg(long, value_parser = ["abs", "rel"], default_value = "abs")]
    mode: String,
    /// Loss for the fs scheme.
    #[arg(long, value_parser = ["nll", "rmsue", "maue"], default_value = "rmsue")]
    loss: String,
    /// Size used by relative mode.
    #[arg(long, value_parser = ["predicted", "gt"], default_value = "predicted")]
    basis: String,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// Unmatched detections file written by `match`, counted in the report.
    #[arg(long)]
    unmatched_detections: Option<PathBuf>,
    /// Unmatched ground-truth file written by `match`, counted in the report.
    #[arg(long)]
    unmatched_gt: Option<PathBuf>,
    /// Profile the unmatched ground-truth file was written with.
    #[arg(long, default_value = "kitti")]
    profile: String,
    #[arg(long, default_value_t = 10)]
    levels: usize,
    #[arg(long, value_parser = ["pooled", "per-coordinate"], default_value = "pooled")]
    pooling: String,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct CorrelateArgs {
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, value_parser = ["area", "occlusion", "quality", "iou", "rmse"])]
    by: String,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    /// Comma-separated IoU thresholds for the MD/CD table.
    #[arg(long, value_delimiter = ',')]
    md_cd_thresholds: Vec<f64>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated decode variants.
    #[arg(long, value_delimiter = ',', default_value = "lnorm,samp:1000")]
    variants: Vec<String>,
    #[arg(long, default_value_t = 100_000)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    train_correction: bool,
    #[command(flatten)]
    out: OutDir,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::from_json(&read(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.images {
        cfg.n_images = v;
    }
    if let Some(v) = a.objects {
        cfg.objects_per_image = v;
    }
    if let Some(v) = a.k {
        cfg.miscalibration.k = v;
    }
    if let Some(s) = a.space.as_deref() {
        cfg.space = if s == "anchor" { SynthSpace::Anchor } else { SynthSpace::Image };
    }
    if let Some(p) = &a.anchor_config {
        cfg.anchors = datio::read_anchor_config(p)?;
    }
    let profile = Profile::by_name(&a.profile)?;
    let out = synth::generate(&cfg)?;
    synth::write_output(&a.out.out, &cfg, &out, &profile)?;
    write(&a.out.out.join("synth_config.json"), &(cfg.to_json() + "\n"))?;
    println!(
        "{} objects, {} detections ({} space) -> {}",
        out.ground_truth.len(),
        out.detections.len(),
        synth::output_space(&cfg),
        a.out.out.display()
    );
    Ok(())
}

fn decode_cmd(a: DecodeArgs) -> Result<()> {
    let variant: DecodeVariant = a.variant.parse()?;
    let variant = variant.with_seed(a.seed);
    let cfg = datio::read_anchor_config(&a.anchor_config)?;
    let records = datio::read_anchor_detections(&a.input)?;
    let dets = datio::decode_anchor_detections(&records, &cfg, variant, a.train_correction)?;
    let path = a.out.out.join("detections.txt");
    datio::write_detections(&path, &dets)?;
    println!("decoded {} detections with {variant} -> {}", dets.len(), path.display());
    Ok(())
}

fn match_cmd(a: MatchArgs) -> Result<()> {
    let profile = Profile::by_name(&a.profile)?;
    let gt = datio::read_ground_truth(&a.gt, &profile)?;
    for w in &gt.warnings {
        eprintln!("warning: {w}");
    }
    let dets = datio::read_image_detections(&a.detections)?;
    let m = match_by_mse(&dets, &gt.records);
    let dir = &a.out.out;
    datio::write_pairs(&dir.join("pairs.txt"), &m.pairs)?;
    datio::write_detections(&dir.join("unmatched_detections.txt"), &m.unmatched_detections)?;
    datio::write_ground_truth(&dir.join("unmatched_gt.txt"), &m.unmatched_ground_truth, &profile)?;
    println!(
        "{} pairs, {} unmatched detections, {} unmatched ground truths -> {}",
        m.pairs.len(),
        m.unmatched_detections.len(),
        m.unmatched_ground_truth.len(),
        dir.display()
    );
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let scheme: Scheme = a.scheme.parse()?;
    let mode: Mode = a.mode.parse()?;
    let basis: SizeBasis = a.basis.parse()?;
    let fit = datio::read_pairs(&a.pairs)?;
    let model = if scheme == Scheme::Fs {
        let loss: FactorLoss = a.loss.parse()?;
        let opts = FactorOptions {
            mode,
            basis,
            epochs: a.epochs,
            lr: a.lr,
        };
        fit_factor_with(&fit, loss, &opts)?
    } else {
        let opts = IsotonicOptions {
            mode,
            basis,
            ..IsotonicOptions::default()
        };
        fit_isotonic_with(&fit, scheme, &opts)?
    };
    let dir = &a.out.out;
    datio::write_model(&dir.join("model.txt"), &model)?;

    let target = match &a.target {
        Some(p) => datio::read_pairs(p)?,
        None => fit,
    };
    let cal = apply_to_pairs(&model, &target)?;
    datio::write_pairs(&dir.join("calibrated_pairs.txt"), &cal.items)?;
    if !cal.fallbacks.is_empty() {
        eprintln!("warning: {} pairs used the global fallback map", cal.fallbacks.len());
    }
    if let Some(p) = &a.detections {
        let dets = datio::read_image_detections(p)?;
        let out = apply(&model, &dets, ClassSource::Predicted)?;
        datio::write_detections(&dir.join("calibrated_detections.txt"), &out.items)?;
        if !out.fallbacks.is_empty() {
            eprintln!("warning: {} detections used the global fallback map", out.fallbacks.len());
        }
    }
    println!("fitted {scheme} ({mode}) on {} pairs -> {}", target.len(), dir.display());
    Ok(())
}

fn count_records(path: &Option<PathBuf>, profile: &Profile, gt: bool) -> Result<usize> {
    match path {
        None => Ok(0),
        Some(p) if gt => Ok(datio::read_ground_truth(p, profile)?.records.len()),
        Some(p) => Ok(datio::read_image_detections(p)?.len()),
    }
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let pairs = datio::read_pairs(&a.pairs)?;
    let opts = EceOptions {
        levels: a.levels,
        pooling: a.pooling.parse::<EcePooling>()?,
    };
    let profile = Profile::by_name(&a.profile)?;
    let ud = count_records(&a.unmatched_detections, &profile, false)?;
    let ug = count_records(&a.unmatched_gt, &profile, true)?;
    let report = evaluate(&pairs, ud, ug, &opts)?;
    let dir = &a.out.out;
    write(&dir.join("report.json"), &(report.to_json() + "\n"))?;
    write(&dir.join("report.txt"), &report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

fn correlate_cmd(a: CorrelateArgs) -> Result<()> {
    let pairs = datio::read_pairs(&a.pairs)?;
    let by: Conditioning = a.by.parse()?;
    let c = correlate(&pairs, by, a.bins)?;
    let dir = &a.out.out;
    write(&dir.join(format!("correlation_{by}.csv")), &c.to_csv())?;
    write(&dir.join(format!("correlation_{by}.json")), &(c.to_json() + "\n"))?;
    print!("{}", c.to_csv());
    if !a.md_cd_thresholds.is_empty() {
        let rows = md_cd_uncertainty(&pairs, &a.md_cd_thresholds)?;
        let csv = md_cd_csv(&rows);
        write(&dir.join("md_cd.csv"), &csv)?;
        print!("{csv}");
    }
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let variants: Vec<DecodeVariant> = a
        .variants
        .iter()
        .map(|v| v.parse::<DecodeVariant>().map(|v| v.with_seed(a.seed)))
        .collect::<Result<_>>()?;
    let batch = Batch::random(a.batch, a.seed)?;
    let results = bench::run(&variants, &batch, a.repeat, a.train_correction)?;
    let dir = &a.out.out;
    write(&dir.join("bench.csv"), &bench::to_csv(&results))?;
    write(&dir.join("bench.json"), &(bench::to_json(&results) + "\n"))?;
    for r in &results {
        println!("{:<12} {:>12.3} ms per 1e5 decodes (median of {})", r.variant, r.ms_per_100k, r.repeats);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Match(a) => match_cmd(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Correlate(a) => correlate_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
