//! Command-line surface for the statistics-matching library. Every
//! subcommand echoes its fully resolved configuration (including defaulted
//! bandwidth, epsilon, and seeds) as `key=value` pairs on standard error, so
//! any run can be reproduced from its log.
//!
//! Exit codes: 0 success, 1 failed verification, 2 file/format errors,
//! 3 shape or dimension errors, 4 unsupported configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use cxlab::affinity::{affinities, best_matches, nearest_matches, normalize_distances};
use cxlab::error::Error;
use cxlab::gradcheck::{gradcheck, GradCheckInstance, LossId};
use cxlab::io::{self, LoadedInput};
use cxlab::optimize::{
    optimize_image, optimize_points, trace_correlations, Algorithm, ObjectiveConfig,
    OptimizerConfig, PointLoss, Trace,
};
use cxlab::{
    chamfer_distance, contextual_loss, delta_limit_coverage, distance_matrix, divergence_report,
    equalize, extract_patches, DistanceKind, DivergenceReport, FeatureSet64, PatchSpec,
};

#[derive(Parser)]
#[command(
    name = "cxlab",
    about = "Statistical losses, divergence estimators, and direct optimization for point/patch distributions",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Contextual loss between two inputs (point sets or images).
    Cx(PairwiseArgs),
    /// Asymmetric Chamfer distance between two inputs.
    Chamfer(PairwiseArgs),
    /// Bandwidth->0 limit of the contextual loss (target coverage).
    Delta(PairwiseArgs),
    /// Seven-measure dissimilarity report between two images.
    Divergence(DivergenceArgs),
    /// Clustered-vs-spread matching demo comparing affinity and
    /// nearest-neighbour match diversity.
    MatchDemo(MatchDemoArgs),
    /// First-order optimization of a point set toward a target set.
    OptimizePoints(OptimizePointsArgs),
    /// First-order optimization of an image toward a target image.
    OptimizeImage(OptimizeImageArgs),
    /// Finite-difference verification of an analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Pearson correlation of every trace measure against the cx column.
    TraceCorr(TraceCorrArgs),
}

#[derive(Args)]
struct PairwiseArgs {
    /// Generated-side input (FTS1, fts-csv, PGM, or PPM).
    x: PathBuf,
    /// Target-side input.
    y: PathBuf,
    /// cosine, l2, or squared_l2. Defaults to l2 for point sets and cosine
    /// when either input is an image.
    #[arg(long)]
    distance: Option<String>,
    /// Affinity bandwidth.
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    /// Distance-normalization epsilon.
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Subtract the target mean from both sides before cosine distances.
    #[arg(long)]
    center: bool,
    /// Patch size for image inputs.
    #[arg(long)]
    patch: Option<usize>,
    /// Patch stride for image inputs.
    #[arg(long)]
    stride: Option<usize>,
    /// Seed for the equalizing subsample when set sizes differ.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Force the input format instead of sniffing magic bytes.
    #[arg(long, default_value = "auto")]
    format: String,
}

#[derive(Args)]
struct DivergenceArgs {
    x: PathBuf,
    y: PathBuf,
    #[arg(long, default_value_t = 5)]
    patch: usize,
    #[arg(long, default_value_t = 2)]
    stride: usize,
    /// Number of random 2D projections for the KDE divergences.
    #[arg(long, default_value_t = 100)]
    projections: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the CSV report (header plus one line) to this path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "auto")]
    format: String,
}

#[derive(Args)]
struct MatchDemoArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Points per set.
    #[arg(long, default_value_t = 32)]
    n: usize,
    /// Output prefix for the point and match files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
}

#[derive(Args)]
struct OptimizePointsArgs {
    x0: PathBuf,
    y: PathBuf,
    #[arg(long, default_value = "cx")]
    loss: String,
    #[arg(long, default_value = "l2")]
    distance: String,
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value = "adam")]
    algorithm: String,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 10)]
    trace_every: usize,
    /// Projections used for the traced KDE divergences when dim > 2.
    #[arg(long, default_value_t = 20)]
    trace_projections: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes <prefix>_final.fts and <prefix>_trace.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, default_value = "auto")]
    format: String,
}

#[derive(Args)]
struct OptimizeImageArgs {
    x0: PathBuf,
    y: PathBuf,
    /// Weight preset: "sr" (λ_cx=0.1, λ_l2=10) or "normals"
    /// (λ_cx=1, λ_l2=0.1, λ_l1=1). Explicit lambda flags override.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    lambda_cx: Option<f64>,
    #[arg(long)]
    lambda_l2: Option<f64>,
    #[arg(long)]
    lambda_l1: Option<f64>,
    #[arg(long)]
    lambda_gan: Option<f64>,
    #[arg(long, default_value = "cosine")]
    distance: String,
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 21)]
    blur_size: usize,
    #[arg(long, default_value_t = 3.0)]
    blur_sigma: f64,
    #[arg(long, default_value_t = 5)]
    patch: usize,
    #[arg(long, default_value_t = 2)]
    stride: usize,
    #[arg(long, default_value = "adam")]
    algorithm: String,
    #[arg(long, default_value_t = 0.02)]
    step: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 100)]
    trace_every: usize,
    #[arg(long, default_value_t = 20)]
    trace_projections: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes <prefix>_final.(pgm|ppm) and <prefix>_trace.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "auto")]
    format: String,
}

#[derive(Args)]
struct GradcheckArgs {
    /// cx, cx-image, chamfer, lowfreq-l2, or l1.
    #[arg(long)]
    loss: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct TraceCorrArgs {
    trace: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Format { .. } | Error::Io(_) => 2,
        Error::InvalidParameter(_) | Error::AdversarialUnsupported => 4,
        _ => 3,
    }
}

use cxlab::scalar::sig9;

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Cx(args) => pairwise(args, "cx"),
        Command::Chamfer(args) => pairwise(args, "chamfer"),
        Command::Delta(args) => pairwise(args, "delta"),
        Command::Divergence(args) => divergence(args),
        Command::MatchDemo(args) => match_demo(args),
        Command::OptimizePoints(args) => optimize_points_cmd(args),
        Command::OptimizeImage(args) => optimize_image_cmd(args),
        Command::Gradcheck(args) => gradcheck_cmd(args),
        Command::TraceCorr(args) => trace_corr(args),
    }
}

/// Loads one input, forcing a format when requested.
fn load(path: &Path, format: &str) -> Result<LoadedInput<f64>, Error> {
    let bytes = std::fs::read(path)?;
    match format {
        "auto" => io::sniff_input(&bytes),
        "fts1" => Ok(LoadedInput::Points(io::feature_set_from_fts1(&bytes)?)),
        "fts-csv" => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|e| Error::Format {
                    offset: e.valid_up_to(),
                    message: "invalid UTF-8".into(),
                })?;
            Ok(LoadedInput::Points(io::feature_set_from_csv(text)?))
        }
        "ppm" | "pgm" => Ok(LoadedInput::Image(io::image_from_pnm(&bytes)?)),
        other => Err(Error::InvalidParameter(format!(
            "unknown format {other:?} (expected auto, fts1, fts-csv, ppm, pgm)"
        ))),
    }
}

/// Turns a loaded input into a feature set, extracting patches from images.
fn to_points(
    input: LoadedInput<f64>,
    patch: Option<usize>,
    stride: Option<usize>,
) -> Result<(FeatureSet64, bool), Error> {
    match input {
        LoadedInput::Points(set) => Ok((set, false)),
        LoadedInput::Image(img) => {
            let (Some(k), Some(s)) = (patch, stride) else {
                return Err(Error::InvalidParameter(
                    "image inputs need --patch and --stride".into(),
                ));
            };
            let spec = PatchSpec::new(k, s)?;
            Ok((extract_patches(&img, &spec)?, true))
        }
    }
}

fn pairwise(args: PairwiseArgs, op: &'static str) -> Result<ExitCode, Error> {
    let (x, x_is_image) = to_points(load(&args.x, &args.format)?, args.patch, args.stride)?;
    let (y, y_is_image) = to_points(load(&args.y, &args.format)?, args.patch, args.stride)?;
    let distance = match &args.distance {
        Some(name) => DistanceKind::from_str(name)?,
        None if x_is_image || y_is_image => DistanceKind::Cosine,
        None => DistanceKind::L2,
    };
    let mut echo = format!(
        "config: {op} x={} y={} distance={} h={} epsilon={} center={} seed={} format={}",
        args.x.display(),
        args.y.display(),
        distance.name(),
        args.h,
        args.epsilon,
        args.center,
        args.seed,
        args.format,
    );
    if let (Some(k), Some(s)) = (args.patch, args.stride) {
        echo.push_str(&format!(" patch={k} stride={s}"));
    }
    eprintln!("{echo}");

    let value = match op {
        "chamfer" => chamfer_distance(&x, &y, distance, args.center)?,
        _ => {
            let (xe, ye) = equalize(&x, &y, args.seed)?;
            match op {
                "cx" => contextual_loss(&xe, &ye, distance, args.h, args.epsilon, args.center)?,
                "delta" => delta_limit_coverage(&xe, &ye, distance, args.center)?,
                _ => unreachable!(),
            }
        }
    };
    println!("{}", sig9(value));
    Ok(ExitCode::SUCCESS)
}

fn divergence(args: DivergenceArgs) -> Result<ExitCode, Error> {
    let (x, y) = match (load(&args.x, &args.format)?, load(&args.y, &args.format)?) {
        (LoadedInput::Image(a), LoadedInput::Image(b)) => (a, b),
        _ => {
            return Err(Error::InvalidParameter(
                "divergence requires two image inputs".into(),
            ))
        }
    };
    eprintln!(
        "config: divergence x={} y={} patch={} stride={} projections={} seed={} format={}",
        args.x.display(),
        args.y.display(),
        args.patch,
        args.stride,
        args.projections,
        args.seed,
        args.format,
    );
    let spec = PatchSpec::new(args.patch, args.stride)?;
    let report = divergence_report(&x, &y, &spec, args.projections, args.seed)?;
    let text = format!("{}\n{}\n", DivergenceReport::<f64>::CSV_HEADER, report.csv_line());
    if let Some(out) = &args.out {
        std::fs::write(out, &text)?;
    }
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

/// Clustered source points (Gaussian, sigma 0.5) against targets spread
/// uniformly over [-1,1]^2.
fn clustered_vs_spread(n: usize, seed: u64) -> (FeatureSet64, FeatureSet64) {
    use rand::Rng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 0.5).unwrap();
    let x_rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let y_rows: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![2.0 * rng.gen::<f64>() - 1.0, 2.0 * rng.gen::<f64>() - 1.0])
        .collect();
    (
        FeatureSet64::from_rows(&x_rows).unwrap(),
        FeatureSet64::from_rows(&y_rows).unwrap(),
    )
}

fn write_matches(path: &Path, matches: &[usize]) -> Result<(), Error> {
    let mut text = String::from("j,i\n");
    for (j, i) in matches.iter().enumerate() {
        text.push_str(&format!("{j},{i}\n"));
    }
    Ok(std::fs::write(path, text)?)
}

fn match_demo(args: MatchDemoArgs) -> Result<ExitCode, Error> {
    if args.n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    eprintln!(
        "config: match-demo seed={} n={} h={} epsilon={} out={}",
        args.seed,
        args.n,
        args.h,
        args.epsilon,
        args.out.display(),
    );
    let (x, y) = clustered_vs_spread(args.n, args.seed);
    let dist = distance_matrix(&x, &y, DistanceKind::L2, false)?;
    let aff = affinities(&normalize_distances(&dist, args.epsilon), args.h)?;
    let cx_report = best_matches(&aff);
    let nn_report = nearest_matches(&dist);

    let prefix = args.out.display();
    io::save_feature_set_csv(&x, format!("{prefix}_x.csv"))?;
    io::save_feature_set_csv(&y, format!("{prefix}_y.csv"))?;
    write_matches(
        Path::new(&format!("{prefix}_matches_cx.csv")),
        &cx_report.source_of_target,
    )?;
    write_matches(
        Path::new(&format!("{prefix}_matches_cd.csv")),
        &nn_report.source_of_target,
    )?;
    println!(
        "distinct_cx={} distinct_cd={}",
        cx_report.distinct_sources, nn_report.distinct_sources
    );
    Ok(ExitCode::SUCCESS)
}

fn optimize_points_cmd(args: OptimizePointsArgs) -> Result<ExitCode, Error> {
    let (x0, _) = to_points(load(&args.x0, &args.format)?, args.patch, args.stride)?;
    let (y, _) = to_points(load(&args.y, &args.format)?, args.patch, args.stride)?;
    let loss = PointLoss::from_str(&args.loss)?;
    let distance = DistanceKind::from_str(&args.distance)?;
    let algorithm = Algorithm::from_str(&args.algorithm)?;
    eprintln!(
        "config: optimize-points x0={} y={} loss={} distance={} h={} epsilon={} algorithm={} \
         step={} iters={} trace-every={} trace-projections={} seed={} out={}",
        args.x0.display(),
        args.y.display(),
        args.loss,
        distance.name(),
        args.h,
        args.epsilon,
        args.algorithm,
        args.step,
        args.iters,
        args.trace_every,
        args.trace_projections,
        args.seed,
        args.out.display(),
    );
    let (x0, y) = equalize(&x0, &y, args.seed)?;
    let opt = OptimizerConfig::new(algorithm, args.step, args.iters)?
        .with_trace_every(args.trace_every);
    let (final_set, trace) = optimize_points(
        &x0,
        &y,
        loss,
        distance,
        args.h,
        args.epsilon,
        &opt,
        args.trace_projections,
        args.seed,
    )?;
    let prefix = args.out.display();
    io::save_feature_set(&final_set, format!("{prefix}_final.fts"))?;
    std::fs::write(format!("{prefix}_trace.csv"), trace.to_csv())?;
    println!("{}", sig9(trace.rows.last().map(|r| r.objective.into()).unwrap_or(f64::NAN)));
    Ok(ExitCode::SUCCESS)
}

fn optimize_image_cmd(args: OptimizeImageArgs) -> Result<ExitCode, Error> {
    let (x0, y) = match (load(&args.x0, &args.format)?, load(&args.y, &args.format)?) {
        (LoadedInput::Image(a), LoadedInput::Image(b)) => (a, b),
        _ => {
            return Err(Error::InvalidParameter(
                "optimize-image requires two image inputs".into(),
            ))
        }
    };
    let mut cfg: ObjectiveConfig<f64> = match args.preset.as_deref() {
        None | Some("sr") => ObjectiveConfig::sr(),
        Some("normals") => ObjectiveConfig::normals(),
        Some(other) => {
            return Err(Error::InvalidParameter(format!(
                "unknown preset {other:?} (expected sr or normals)"
            )))
        }
    };
    if let Some(v) = args.lambda_cx {
        cfg.lambda_cx = v;
    }
    if let Some(v) = args.lambda_l2 {
        cfg.lambda_l2_lf = v;
    }
    if let Some(v) = args.lambda_l1 {
        cfg.lambda_l1 = v;
    }
    if let Some(v) = args.lambda_gan {
        cfg.lambda_gan = v;
    }
    cfg.distance = DistanceKind::from_str(&args.distance)?;
    cfg.h = args.h;
    cfg.epsilon = args.epsilon;
    cfg.blur_size = args.blur_size;
    cfg.blur_sigma = args.blur_sigma;
    cfg.patch = PatchSpec::new(args.patch, args.stride)?;
    cfg.validate()?;
    let algorithm = Algorithm::from_str(&args.algorithm)?;
    eprintln!(
        "config: optimize-image x0={} y={} lambda-cx={} lambda-l2={} lambda-l1={} lambda-gan={} \
         distance={} h={} epsilon={} blur-size={} blur-sigma={} patch={} stride={} algorithm={} \
         step={} iters={} trace-every={} trace-projections={} seed={} out={}",
        args.x0.display(),
        args.y.display(),
        cfg.lambda_cx,
        cfg.lambda_l2_lf,
        cfg.lambda_l1,
        cfg.lambda_gan,
        cfg.distance.name(),
        cfg.h,
        cfg.epsilon,
        cfg.blur_size,
        cfg.blur_sigma,
        cfg.patch.patch_size,
        cfg.patch.stride,
        args.algorithm,
        args.step,
        args.iters,
        args.trace_every,
        args.trace_projections,
        args.seed,
        args.out.display(),
    );
    let opt = OptimizerConfig::new(algorithm, args.step, args.iters)?
        .with_trace_every(args.trace_every);
    let (final_img, trace) = optimize_image(&x0, &y, &cfg, &opt, args.trace_projections, args.seed)?;
    let prefix = args.out.display();
    let ext = if final_img.channels() == 1 { "pgm" } else { "ppm" };
    io::save_image(&final_img, format!("{prefix}_final.{ext}"))?;
    std::fs::write(format!("{prefix}_trace.csv"), trace.to_csv())?;
    println!("{}", sig9(trace.rows.last().map(|r| r.objective).unwrap_or(f64::NAN)));
    Ok(ExitCode::SUCCESS)
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<ExitCode, Error> {
    let loss = LossId::from_str(&args.loss)?;
    eprintln!(
        "config: gradcheck loss={} seed={} step={} tolerance={}",
        args.loss, args.seed, args.step, args.tolerance
    );
    let instance = GradCheckInstance::<f64>::random(loss, args.seed);
    let report = gradcheck(&instance, args.step, args.tolerance);
    print!("{}", report.to_text());
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn trace_corr(args: TraceCorrArgs) -> Result<ExitCode, Error> {
    eprintln!("config: trace-corr trace={}", args.trace.display());
    let text = std::fs::read_to_string(&args.trace)?;
    let trace = Trace::<f64>::from_csv(&text)?;
    for (name, corr) in trace_correlations(&trace)? {
        match corr {
            Some(v) => println!("{name}={}", sig9(v)),
            None => println!("{name}=undefined"),
        }
    }
    Ok(ExitCode::SUCCESS)
}
