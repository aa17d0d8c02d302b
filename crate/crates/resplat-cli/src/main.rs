//! `resplat` — move voxel data between differently oriented grids.
//!
//! Subcommands:
//! - `mean-space`: barycentric common grid from a set of volume headers.
//! - `push`: splat a volume onto a grid given by a space descriptor,
//!   writing the splatted image and its count image.
//! - `pull`: resample a volume onto the grid of another volume.
//! - `adjoint-test`: randomized self-test of the pull/push adjoint
//!   identity.
//! - `dice`: per-class Dice overlap between two label volumes.
//! - `info`: header summary of a volume file.
//!
//! Exit codes: 0 success, 1 failed self-test, 2 user or geometry error,
//! 3 numerical non-convergence, 4 I/O or file-format error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resplat::geometry::mean_space;
use resplat::gridops::{pull_with, push_with, Exec};
use resplat::io::{probe, read_volume, write_volume, Datatype};
use resplat::pipeline::dice;
use resplat::{AffineMap, Error, GridSpec, SpaceDescriptor, Volume};

#[derive(Parser)]
#[command(
    name = "resplat",
    version,
    about = "Grid resampling and splatting on affine-oriented voxel grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (0 = all available).
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    threads: usize,

    /// Bitwise-reproducible parallel splatting at any thread count; turn
    /// off to allow faster atomic accumulation in unspecified order.
    #[arg(long, global = true, default_value_t = true, action = ArgAction::Set, value_name = "BOOL")]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a common grid from the headers of a set of volumes.
    MeanSpace(MeanSpaceArgs),
    /// Splat a volume onto a space, writing the image and its count.
    Push(PushArgs),
    /// Resample a volume onto the grid of another volume.
    Pull(PullArgs),
    /// Randomized check that push is the adjoint of pull.
    AdjointTest(AdjointTestArgs),
    /// Per-class Dice overlap between two label volumes.
    Dice(DiceArgs),
    /// Print a volume header summary.
    Info(InfoArgs),
}

#[derive(Args)]
struct MeanSpaceArgs {
    /// Volumes whose headers define the cohort.
    #[arg(required = true, value_name = "VOLUME")]
    inputs: Vec<PathBuf>,

    /// Voxel size of the constructed grid: one value per axis, or a
    /// single value for all axes (default 1).
    #[arg(long, value_delimiter = ',', value_name = "SIZE")]
    voxel_size: Option<Vec<f64>>,

    /// Where to write the space descriptor (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct PushArgs {
    /// Volume to splat.
    #[arg(short, long, value_name = "FILE")]
    input: PathBuf,

    /// Space descriptor of the destination grid (JSON).
    #[arg(long, value_name = "FILE")]
    space: PathBuf,

    /// Where to write the splatted volume.
    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,

    /// Where to write the count image (splat of all-ones).
    #[arg(long, value_name = "FILE")]
    count: PathBuf,
}

#[derive(Args)]
struct PullArgs {
    /// Volume to resample.
    #[arg(short, long, value_name = "FILE")]
    input: PathBuf,

    /// Volume whose grid the output should live on.
    #[arg(long, value_name = "FILE")]
    like: PathBuf,

    /// Where to write the resampled volume.
    #[arg(short, long, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args)]
struct AdjointTestArgs {
    /// Source grid dimensions, comma-separated (1 to 3 axes, each <= 32).
    #[arg(long, value_delimiter = ',', required = true, value_name = "DIMS")]
    dims_src: Vec<usize>,

    /// Destination grid dimensions, same number of axes as the source.
    #[arg(long, value_delimiter = ',', required = true, value_name = "DIMS")]
    dims_dst: Vec<usize>,

    /// Seed for the randomized trials.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Number of random grid pairs to test.
    #[arg(long, default_value_t = 100, value_name = "N")]
    trials: usize,

    /// Negative control: evaluate pull through a deliberately mismatched
    /// affine so the identity must fail.
    #[arg(long)]
    corrupt: bool,
}

#[derive(Args)]
struct DiceArgs {
    /// First label volume.
    #[arg(value_name = "A")]
    a: PathBuf,

    /// Second label volume.
    #[arg(value_name = "B")]
    b: PathBuf,

    /// Number of classes including background (default: largest label
    /// present plus one).
    #[arg(long, value_name = "K")]
    classes: Option<usize>,
}

#[derive(Args)]
struct InfoArgs {
    /// Volume file to inspect.
    #[arg(value_name = "FILE")]
    input: PathBuf,
}

/// Rust ignores SIGPIPE by default, turning a closed downstream pipe
/// (`resplat info … | head`) into a write panic; restore the Unix default
/// so the process exits quietly instead.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    let exec = Exec {
        threads: cli.threads,
        deterministic: cli.deterministic,
    };
    let outcome = match cli.command {
        Command::MeanSpace(args) => cmd_mean_space(args),
        Command::Push(args) => cmd_push(args, &exec),
        Command::Pull(args) => cmd_pull(args, &exec),
        Command::AdjointTest(args) => cmd_adjoint_test(args, &exec),
        Command::Dice(args) => cmd_dice(args),
        Command::Info(args) => cmd_info(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for user and geometry errors, 3 for non-convergence, 4 for anything
/// involving files. Argument errors exit with 2 via clap's default.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format(_) => 4,
        Error::NonConvergence { .. } => 3,
        _ => 2,
    }
}

fn grid_of(path: &PathBuf) -> Result<GridSpec, Error> {
    let file = probe(path)?;
    GridSpec::new(file.dims.clone(), file.affine.clone())
}

fn fmt_row(row: &[f64]) -> String {
    row.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_mean_space(args: MeanSpaceArgs) -> Result<ExitCode, Error> {
    let grids = args
        .inputs
        .iter()
        .map(grid_of)
        .collect::<Result<Vec<_>, _>>()?;
    let d = grids[0].dim();
    let voxel_size = match args.voxel_size {
        Some(v) if v.len() == 1 => Some(vec![v[0]; d]),
        Some(v) if v.len() == d => Some(v),
        Some(v) => {
            return Err(Error::DimensionMismatch(format!(
                "--voxel-size has {} entries for {d}-dimensional grids",
                v.len()
            )))
        }
        None => None,
    };
    let result = mean_space(&grids, voxel_size.as_deref())?;

    let descriptor = SpaceDescriptor::from_grid(&result.space);
    fs::write(&args.out, descriptor.to_json())?;

    println!("dims: {}", fmt_dims(result.space.dims()));
    println!("voxel size: {}", fmt_row(&result.space.voxel_size()));
    println!("karcher iterations: {}", result.iterations);
    Ok(ExitCode::SUCCESS)
}

fn fmt_dims(dims: &[usize]) -> String {
    dims.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_push(args: PushArgs, exec: &Exec) -> Result<ExitCode, Error> {
    let input = read_volume(&args.input)?;
    let text = fs::read_to_string(&args.space)?;
    let space = SpaceDescriptor::from_json(&text)?.to_grid()?;

    let result = push_with(&input, &space, exec)?;
    write_volume(&result.pushed, &args.output, Datatype::Float64)?;
    write_volume(&result.count, &args.count, Datatype::Float64)?;

    println!(
        "pushed {} -> {} ({} channel{})",
        fmt_dims(input.grid().dims()),
        fmt_dims(space.dims()),
        input.channels(),
        if input.channels() == 1 { "" } else { "s" }
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_pull(args: PullArgs, exec: &Exec) -> Result<ExitCode, Error> {
    let input = read_volume(&args.input)?;
    let target = grid_of(&args.like)?;

    let pulled = pull_with(&input, &target, exec)?;
    write_volume(&pulled, &args.output, Datatype::Float64)?;

    println!(
        "pulled {} -> {} ({} channel{})",
        fmt_dims(input.grid().dims()),
        fmt_dims(target.dims()),
        input.channels(),
        if input.channels() == 1 { "" } else { "s" }
    );
    Ok(ExitCode::SUCCESS)
}

const ADJOINT_TOLERANCE: f64 = 1e-10;
const MAX_TEST_DIM: usize = 32;

fn cmd_adjoint_test(args: AdjointTestArgs, exec: &Exec) -> Result<ExitCode, Error> {
    for dims in [&args.dims_src, &args.dims_dst] {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::InvalidGrid(format!(
                "expected 1 to 3 axes, got {:?}",
                dims
            )));
        }
        if dims.iter().any(|&n| n == 0 || n > MAX_TEST_DIM) {
            return Err(Error::InvalidGrid(format!(
                "dimensions must be in 1..={MAX_TEST_DIM}, got {:?}",
                dims
            )));
        }
    }
    if args.dims_src.len() != args.dims_dst.len() {
        return Err(Error::DimensionMismatch(format!(
            "source has {} axes, destination {}",
            args.dims_src.len(),
            args.dims_dst.len()
        )));
    }

    // Identity smoke case: both grids identical, the scatter and gather
    // walk the same products in the same order, so the error is exactly 0.
    let identity = GridSpec::isotropic(args.dims_src.clone())?;
    let smoke = adjoint_error(
        &identity,
        &identity,
        &mut ChaCha8Rng::seed_from_u64(args.seed),
        false,
        exec,
    )?;
    println!("identity-grid error: {:e}", smoke);

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let mut max_error = smoke;
    for _ in 0..args.trials {
        let src = random_grid(&args.dims_src, &mut rng)?;
        let dst = random_grid(&args.dims_dst, &mut rng)?;
        let err = adjoint_error(&src, &dst, &mut rng, args.corrupt, exec)?;
        max_error = max_error.max(err);
    }

    println!("trials: {}", args.trials);
    println!("max relative error: {:e}", max_error);
    if max_error <= ADJOINT_TOLERANCE {
        println!("adjoint identity holds (tolerance {ADJOINT_TOLERANCE:e})");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("adjoint identity FAILED (tolerance {ADJOINT_TOLERANCE:e})");
        Ok(ExitCode::FAILURE)
    }
}

/// Well-conditioned random grid: diagonally dominant linear part, modest
/// translation.
fn random_grid(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<GridSpec, Error> {
    let d = dims.len();
    loop {
        let mut m = nalgebra_identity(d + 1);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = if i == j {
                    rng.gen_range(0.5..2.0)
                } else {
                    rng.gen_range(-0.25..0.25)
                };
            }
            m[(i, d)] = rng.gen_range(-3.0..3.0);
        }
        if let Ok(affine) = AffineMap::new(m) {
            return GridSpec::new(dims.to_vec(), affine);
        }
    }
}

fn nalgebra_identity(n: usize) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::identity(n, n)
}

/// One inner-product identity trial: |<push(f), g> - <f, pull(g)>|
/// relative to ||f|| ||g||. With `corrupt`, the pull is evaluated through
/// a shifted source grid, so the two sides no longer describe adjoint
/// operators.
fn adjoint_error(
    src: &GridSpec,
    dst: &GridSpec,
    rng: &mut ChaCha8Rng,
    corrupt: bool,
    exec: &Exec,
) -> Result<f64, Error> {
    let f = random_volume(src, rng)?;
    let g = random_volume(dst, rng)?;

    let pushed = push_with(&f, dst, exec)?.pushed;
    let pull_target = if corrupt { shifted(src)? } else { src.clone() };
    let pulled = pull_with(&g, &pull_target, exec)?;

    let lhs = dot(pushed.data(), g.data());
    let rhs = dot(f.data(), pulled.data());
    let scale = norm(f.data()) * norm(g.data());
    Ok((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE))
}

fn random_volume(grid: &GridSpec, rng: &mut ChaCha8Rng) -> Result<Volume, Error> {
    let data = (0..grid.numel())
        .map(|_| rng.gen_range(-10.0..10.0))
        .collect();
    Volume::new(grid.clone(), 1, data, resplat::VolumeKind::Continuous)
}

fn shifted(grid: &GridSpec) -> Result<GridSpec, Error> {
    let mut m = grid.affine().matrix().clone();
    let d = grid.dim();
    for i in 0..d {
        m[(i, d)] += 0.37;
    }
    GridSpec::new(grid.dims().to_vec(), AffineMap::new(m)?)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cmd_dice(args: DiceArgs) -> Result<ExitCode, Error> {
    let a = read_labels(&args.a)?;
    let b = read_labels(&args.b)?;

    let classes = match args.classes {
        Some(k) => k,
        None => {
            let max = a
                .data()
                .iter()
                .chain(b.data())
                .fold(0.0f64, |m, &x| m.max(x));
            (max as usize + 1).max(2)
        }
    };

    let scores = dice(&a, &b, classes)?;
    for (i, score) in scores.iter().enumerate() {
        println!("class {}: {:.3}", i + 1, score);
    }
    println!("median: {:.3}", median(&scores));
    Ok(ExitCode::SUCCESS)
}

fn read_labels(path: &PathBuf) -> Result<Volume, Error> {
    let v = read_volume(path)?;
    if v.channels() != 1 {
        return Err(Error::InvalidVolume(format!(
            "label volume {} has {} channels",
            path.display(),
            v.channels()
        )));
    }
    let grid = v.grid().clone();
    Volume::labels(grid, v.into_data())
}

fn median(scores: &[f64]) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn cmd_info(args: InfoArgs) -> Result<ExitCode, Error> {
    let file = probe(&args.input)?;
    println!("dims: {}", fmt_dims(&file.dims));
    println!("channels: {}", file.channels);
    println!("datatype: {}", file.datatype);
    println!("pixdim: {}", fmt_row(&file.pixdim));
    println!("affine:");
    let m = file.affine.matrix();
    let d = file.dims.len();
    for i in 0..d {
        let row: Vec<f64> = (0..=d).map(|j| m[(i, j)]).collect();
        println!("  {}", fmt_row(&row));
    }
    let grid = GridSpec::new(file.dims.clone(), file.affine.clone())?;
    println!("fov corners (world):");
    for corner in grid.corner_points_world() {
        println!("  {}", fmt_row(&corner));
    }
    Ok(ExitCode::SUCCESS)
}
