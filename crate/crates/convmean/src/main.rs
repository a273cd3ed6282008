//! Command-line surface: train, evaluate, predict, benchmark, generate
//! synthetic data, export feature maps, write thumbnails.
//!
//! Machine-readable output is CSV on stdout; logs go to stderr.
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! failure.

use std::collections::BTreeMap;
use std::fs;
use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use convmean::baselines::{self, BaselineConfig, EdgeOrder};
use convmean::data::{self, Dataset, LabeledImage, MondrianSpec};
use convmean::error::{Error, Result};
use convmean::metrics::{self, ErrorStats};
use convmean::model::{self, CmParams, Variant};
use convmean::ppm::{self, PpmImage};
use convmean::tensor::Tensor3;
use convmean::train::{self, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "convmean", version, about = "Illuminant estimation on 48x32 thumbnails")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; k-fold cross-validation when --folds > 1
    Train(TrainArgs),
    /// Evaluate a model or a baseline over a dataset
    Eval(EvalArgs),
    /// Estimate the illuminant of a single image
    Predict(PredictArgs),
    /// Measure single-image inference latency
    Bench(BenchArgs),
    /// Generate a synthetic dataset of Mondrian scenes
    Synth(SynthArgs),
    /// Export feature and focus maps for one image
    Features(FeaturesArgs),
    /// Write 48x32 thumbnails of a dataset
    Thumbs(ThumbsArgs),
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::from_str(s).map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory (*.ppm + ground_truth.csv)
    #[arg(long)]
    data: PathBuf,
    /// 1 trains on the full set; >= 2 runs cross-validation
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    #[arg(long, default_value = "cm", value_parser = parse_variant)]
    variant: Variant,
    /// Keep the final epoch instead of the best test-error epoch
    #[arg(long)]
    no_test_select: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model path; fold models get a .foldN infix
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch CSV (epoch,train_loss,test_mean_deg)
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// CMW1 model to evaluate
    #[arg(long)]
    model: Option<PathBuf>,
    /// Baseline name: grayworld|whitepatch|sog|ge1|ge2|cm
    #[arg(long)]
    algo: Option<String>,
    /// Write the stats row to this CSV file as well as stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Aggregate per-camera statistics with a geometric mean
    #[arg(long)]
    per_camera_geomean: bool,
    /// Worker threads for per-image evaluation
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Minkowski norm override for sog/ge1/ge2
    #[arg(long)]
    p: Option<f64>,
    /// Include masked (all-zero) pixels in the baseline statistics
    #[arg(long)]
    include_masked: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 384)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ThumbsArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Features(args) => cmd_features(args),
        Command::Thumbs(args) => cmd_thumbs(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn fold_path(out: &Path, fold: usize) -> PathBuf {
    match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => out.with_extension(format!("fold{fold}.{ext}")),
        None => out.with_extension(format!("fold{fold}")),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    eprintln!("config: {args:?}");
    if args.folds == 0 {
        return Err(Error::Data("--folds must be at least 1".into()));
    }
    let dataset = data::load_dataset(&args.data)?;
    let cfg = TrainConfig {
        lr: args.lr,
        batch: args.batch,
        epochs: args.epochs,
        seed: args.seed,
        variant: args.variant,
        select_on_test: !args.no_test_select,
        ..TrainConfig::default()
    };
    if args.folds == 1 {
        // the paper's tactic: train on cropped patches, select on the
        // uncropped thumbnails of the same frames
        let thumbs = Dataset {
            images: dataset
                .images
                .iter()
                .map(data::make_thumbnail)
                .collect::<Result<_>>()?,
        };
        let report = train::train_fold(&dataset, &thumbs, &cfg)?;
        report.params.save(&args.out)?;
        if let Some(path) = &args.report {
            let mut file = fs::File::create(path)?;
            report.write_csv(&mut file)?;
        }
        eprintln!(
            "selected epoch {} of {} (test mean {:.4} deg); model written to {}",
            report.selected_epoch + 1,
            cfg.epochs,
            report.selected_test_mean(),
            args.out.display()
        );
        println!("selected_epoch,test_mean_deg");
        println!("{},{:.6}", report.selected_epoch + 1, report.selected_test_mean());
    } else {
        let cv = train::cross_validate(&dataset, args.folds, &cfg)?;
        for (i, fold) in cv.folds.iter().enumerate() {
            let path = fold_path(&args.out, i);
            fold.params.save(&path)?;
            eprintln!(
                "fold {i}: selected epoch {} (test mean {:.4} deg) -> {}",
                fold.selected_epoch + 1,
                fold.selected_test_mean(),
                path.display()
            );
            if let Some(report) = &args.report {
                let mut file = fs::File::create(fold_path(report, i))?;
                fold.write_csv(&mut file)?;
            }
        }
        println!("{}", ErrorStats::CSV_HEADER);
        println!("{}", cv.stats.csv_row(args.variant.cli_name()));
    }
    Ok(())
}

enum Estimator {
    Model(Box<CmParams>),
    Baseline { name: String, cfg: BaselineConfig },
}

impl Estimator {
    fn label(&self) -> String {
        match self {
            Estimator::Model(params) => params.variant().cli_name().to_string(),
            Estimator::Baseline { name, .. } => name.clone(),
        }
    }

    fn error_for(&self, img: &LabeledImage) -> Result<f64> {
        let thumb = data::make_thumbnail(img)?;
        let est = match self {
            Estimator::Model(params) => {
                let (e, _) = model::estimate_image(params, &thumb)?;
                e.map(f64::from)
            }
            Estimator::Baseline { name, cfg } => baselines::estimate_by_name(name, &thumb, cfg)?.0,
        };
        metrics::angular_error(est, img.gt.map(f64::from))
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    eprintln!("config: {args:?}");
    let estimator = match (&args.model, args.algo.as_deref()) {
        (Some(path), None) | (Some(path), Some("cm")) => {
            Estimator::Model(Box::new(CmParams::load(path)?))
        }
        (None, Some("cm")) => {
            return Err(Error::Data("--algo cm needs --model pointing at a CMW1 file".into()))
        }
        (None, Some(name)) => Estimator::Baseline {
            name: name.to_string(),
            cfg: BaselineConfig {
                minkowski_p: args.p.unwrap_or_else(|| baselines::default_p(name)),
                edge_order: if name == "ge2" { EdgeOrder::Second } else { EdgeOrder::First },
                exclude_masked: !args.include_masked,
            },
        },
        (Some(_), Some(other)) => {
            return Err(Error::Data(format!("--model conflicts with --algo {other}")))
        }
        (None, None) => return Err(Error::Data("eval needs --model or --algo".into())),
    };

    let dataset = data::load_dataset(&args.data)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| Error::Data(format!("cannot build thread pool: {e}")))?;
    // ids are sorted in the dataset, so collected order is by id
    let errors: Vec<f64> = pool.install(|| {
        dataset
            .images
            .par_iter()
            .map(|img| estimator.error_for(img))
            .collect::<Result<Vec<f64>>>()
    })?;

    let stats = if args.per_camera_geomean {
        let mut by_camera: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (img, &err) in dataset.images.iter().zip(&errors) {
            let camera = img.camera.as_deref().ok_or_else(|| {
                Error::Data(format!("image '{}' has no camera tag; cannot aggregate", img.id))
            })?;
            by_camera.entry(camera).or_default().push(err);
        }
        let per_camera: Vec<ErrorStats> = by_camera
            .values()
            .map(|errs| metrics::error_stats(errs))
            .collect::<Result<_>>()?;
        metrics::aggregate_cameras(&per_camera)?
    } else {
        metrics::error_stats(&errors)?
    };

    let row = format!("{}\n{}\n", ErrorStats::CSV_HEADER, stats.csv_row(&estimator.label()));
    print!("{row}");
    if let Some(path) = &args.out {
        fs::write(path, row)?;
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    eprintln!("config: {args:?}");
    let params = CmParams::load(&args.model)?;
    let img = ppm::read_file(&args.image)?;
    let id = args
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    let gt = data::ground_truth_for(&args.image)?;
    let labeled = LabeledImage {
        id: id.clone(),
        camera: None,
        width: img.width,
        height: img.height,
        pixels: img.pixels,
        gt: gt.unwrap_or([0.0, 1.0, 0.0]),
    };
    let thumb = data::make_thumbnail(&labeled)?;
    let (est, degenerate) = model::estimate_image(&params, &thumb)?;

    let mut line = format!("{id},{:.6},{:.6},{:.6}", est[0], est[1], est[2]);
    if let Some(gt) = gt {
        let err = metrics::angular_error_f32(est, gt)?;
        line.push_str(&format!(",{err:.6}"));
    }
    if degenerate {
        line.push_str(",degenerate");
    }
    println!("{line}");
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    eprintln!("config: {args:?}");
    if args.iters < 100 {
        return Err(Error::Data("--iters must be at least 100".into()));
    }
    let load_start = Instant::now();
    let bytes = fs::read(&args.model)?;
    let params = CmParams::from_bytes(&bytes)?;
    let load_ms = load_start.elapsed().as_secs_f64() * 1e3;

    // deterministic resident input; I/O and preprocessing stay outside the loop
    let input = bench_input(params.variant());

    for _ in 0..10 {
        black_box(model::forward(&params, black_box(&input))?);
    }
    let mut samples_ms = Vec::with_capacity(args.iters);
    for _ in 0..args.iters {
        let t0 = Instant::now();
        black_box(model::forward(&params, black_box(&input))?);
        samples_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    samples_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = samples_ms.iter().sum::<f64>() / samples_ms.len() as f64;
    let median = samples_ms[samples_ms.len() / 2];
    let p99 = samples_ms[(samples_ms.len() * 99) / 100 - 1];

    println!("iters,load_ms,mean_ms,median_ms,p99_ms");
    println!("{},{load_ms:.6},{mean:.6},{median:.6},{p99:.6}", args.iters);
    Ok(())
}

fn bench_input(variant: Variant) -> Tensor3 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let data: Vec<f32> = (0..data::THUMB_HEIGHT * data::THUMB_WIDTH * 3)
        .map(|_| rng.random_range(0.0f32..=1.0))
        .collect();
    let t = Tensor3::from_vec(data::THUMB_HEIGHT, data::THUMB_WIDTH, 3, data).expect("shape");
    let t = data::max_normalize(&t).expect("nonzero");
    model::prepare_input(variant, t)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    eprintln!("config: {args:?}");
    let spec = MondrianSpec { width: args.width, height: args.height, ..Default::default() };
    let dataset = data::synth_generate(args.seed, args.n, &spec)?;
    data::write_dataset(&args.out, &dataset)?;
    eprintln!("wrote {} images to {}", dataset.len(), args.out.display());
    Ok(())
}

/// Min-max normalize one channel of a map into 8-bit gray.
fn channel_to_bytes(t: &Tensor3, channel: usize) -> Vec<u8> {
    let values: Vec<f32> = (0..t.height() * t.width())
        .map(|i| t.data()[i * t.channels() + channel])
        .collect();
    let min = values.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = values.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let span = if max > min { max - min } else { 1.0 };
    values.iter().map(|&v| ((v - min) / span * 255.0).round() as u8).collect()
}

fn gray_ppm(t: &Tensor3, channel: usize) -> Result<PpmImage> {
    let gray = channel_to_bytes(t, channel);
    let mut pixels = Vec::with_capacity(gray.len() * 3);
    for g in gray {
        pixels.extend_from_slice(&[g, g, g]);
    }
    PpmImage::new(t.width(), t.height(), pixels)
}

fn cmd_features(args: FeaturesArgs) -> Result<()> {
    eprintln!("config: {args:?}");
    let params = CmParams::load(&args.model)?;
    let img = ppm::read_file(&args.image)?;
    let labeled = LabeledImage {
        id: "input".into(),
        camera: None,
        width: img.width,
        height: img.height,
        pixels: img.pixels,
        gt: [0.0, 1.0, 0.0],
    };
    let thumb = data::make_thumbnail(&labeled)?;
    let input = model::prepare_input(params.variant(), data::normalize_input(&thumb)?);
    let maps = model::feature_maps(&params, &input)?;

    fs::create_dir_all(&args.out)?;
    for ch in 0..maps.features.channels() {
        ppm::write_file(
            &args.out.join(format!("feature_{ch:02}.ppm")),
            &gray_ppm(&maps.features, ch)?,
        )?;
    }
    // response: min-max over the whole 3-channel map, preserving channel balance
    let r = &maps.response;
    let min = r.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let max = r.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let span = if max > min { max - min } else { 1.0 };
    let pixels: Vec<u8> =
        r.data().iter().map(|&v| ((v - min) / span * 255.0).round() as u8).collect();
    ppm::write_file(&args.out.join("response.ppm"), &PpmImage::new(r.width(), r.height(), pixels)?)?;
    ppm::write_file(&args.out.join("focus.ppm"), &gray_ppm(&maps.focus, 0)?)?;
    eprintln!(
        "wrote {} feature maps, response.ppm and focus.ppm to {}",
        maps.features.channels(),
        args.out.display()
    );
    Ok(())
}

fn cmd_thumbs(args: ThumbsArgs) -> Result<()> {
    eprintln!("config: {args:?}");
    let dataset = data::load_dataset(&args.input)?;
    let thumbs = Dataset {
        images: dataset.images.iter().map(data::make_thumbnail).collect::<Result<_>>()?,
    };
    data::write_dataset(&args.out, &thumbs)?;
    eprintln!("wrote {} thumbnails to {}", thumbs.len(), args.out.display());
    Ok(())
}
