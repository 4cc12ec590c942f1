//! Command-line driver: phantom generation, rendering, reconstruction,
//! emissive-field conversion, and re-rendering of recovered volumes.
//!
//! Every failure exits nonzero with a single `error: ...` line on stderr.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
mod scene;

#[derive(Parser)]
#[command(
    name = "vito",
    version,
    about = "Volumetric medium reconstruction from posed brightfield captures"
)]
struct Cli {
    /// Worker threads (defaults to all cores; the VITO_THREADS environment
    /// variable is used when the flag is absent).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic test volume.
    PhantomGen(PhantomGenArgs),
    /// Render ring views of a volume to an output directory.
    Render(RenderArgs),
    /// Recover medium parameters (and optionally the light) from references.
    Reconstruct(ReconstructArgs),
    /// Convert an emissive-field volume into a medium initialization.
    InitFromEmissive(InitArgs),
    /// Re-render a volume under a new lighting scenario.
    Relight(RelightArgs),
    /// Render a volume clipped by a plane.
    Slice(SliceArgs),
    /// Render a volume immersed in a water type from the table.
    Immerse(ImmerseArgs),
    /// Compare rendered images against references; CSV on stdout.
    Metrics(MetricsArgs),
}

/// Synthetic capture ring shared by the rendering commands. Defaults match
/// the reconstruction config file so `render` and `reconstruct` agree
/// without flags.
#[derive(Args)]
struct RingArgs {
    /// Cameras on the capture ring.
    #[arg(long, default_value_t = 16)]
    views: u32,
    /// Ring radius in world units.
    #[arg(long, default_value_t = 260.0)]
    radius: f64,
    /// Ring elevation angle in radians.
    #[arg(long, default_value_t = 0.25)]
    elevation: f64,
    /// Rendered image width in pixels.
    #[arg(long, default_value_t = 64)]
    width: u32,
    /// Rendered image height in pixels.
    #[arg(long, default_value_t = 64)]
    height: u32,
    /// Focal length in pixels.
    #[arg(long, default_value_t = 80.0)]
    focal: f64,
}

/// Backlight panel shared by the rendering commands.
#[derive(Args)]
struct LightArgs {
    /// Backlight radiance as R,G,B (a single value means gray).
    #[arg(long, value_parser = parse_rgb3, default_value = "1,1,1")]
    light: [f64; 3],
    /// Backlight distance from the specimen center.
    #[arg(long, default_value_t = 240.0)]
    light_distance: f64,
    /// Backlight half size.
    #[arg(long, default_value_t = 150.0)]
    light_half_size: f64,
    /// Keep the light where it is placed instead of orbiting it opposite
    /// each camera.
    #[arg(long)]
    fixed_light: bool,
}

#[derive(Args)]
struct SceneArgs {
    /// Sample stream seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene boundary padding as a fraction of the volume extent.
    #[arg(long, default_value_t = 0.08)]
    padding: f64,
}

#[derive(Args)]
struct PhantomGenArgs {
    /// Phantom kind: nested-spheres, checker-slab, or point-absorber.
    #[arg(long)]
    kind: String,
    /// Voxels per axis: one value or X,Y,Z.
    #[arg(long, value_parser = parse_dims, default_value = "32")]
    dims: std::vec::Vec<usize>,
    /// World size of the volume box: one value or X,Y,Z.
    #[arg(long, value_parser = parse_triple, default_value = "100")]
    extent: std::vec::Vec<f64>,
    /// Output volume path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    /// Input volume (medium kind unless --emissive).
    #[arg(long)]
    volume: PathBuf,
    /// Treat the volume as an emissive field and composite it directly.
    #[arg(long)]
    emissive: bool,
    /// Compositing steps along each ray for --emissive.
    #[arg(long, default_value_t = 512)]
    steps: u32,
    /// Output directory; views are written as view_###.pfm.
    #[arg(long)]
    out: PathBuf,
    /// Also write 8-bit PNG previews next to the PFMs.
    #[arg(long)]
    png: bool,
    /// Render only this view index instead of the whole ring.
    #[arg(long)]
    view: Option<u32>,
    /// Use the deterministic absorption-only estimator.
    #[arg(long)]
    absorption_only: bool,
    /// Path samples per pixel.
    #[arg(long, default_value_t = 64)]
    spp: u32,
    #[command(flatten)]
    ring: RingArgs,
    #[command(flatten)]
    light: LightArgs,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Run configuration (strict TOML); standard defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of reference views (view_###.pfm/.png, or the image names
    /// from the COLMAP listing when the config points at one).
    #[arg(long)]
    refs: PathBuf,
    /// Output volume path.
    #[arg(long)]
    out: PathBuf,
    /// Write the per-iteration loss log here as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write the evolving volume after every iteration into this directory.
    #[arg(long)]
    dump_iters: Option<PathBuf>,
    /// Override the config condition: MO, MO+LO, or MO+LO+INIT.
    #[arg(long)]
    condition: Option<String>,
    /// Emissive volume to initialize from (required for MO+LO+INIT).
    #[arg(long)]
    emissive: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InitArgs {
    /// Emissive-field volume to convert.
    #[arg(long)]
    emissive: PathBuf,
    /// Reference images for the light bootstrap.
    #[arg(long)]
    refs: Option<PathBuf>,
    /// Light radiance override as R,G,B (skips the bootstrap).
    #[arg(long, value_parser = parse_rgb3)]
    light: Option<[f64; 3]>,
    /// Density threshold for the specimen boundary report.
    #[arg(long, default_value_t = 0.05)]
    threshold: f64,
    /// Output volume path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RelightArgs {
    /// Input medium volume.
    #[arg(long)]
    volume: PathBuf,
    /// Scenario: brightfield, darkfield, or inverse-darkfield.
    #[arg(long)]
    mode: String,
    /// View index on the ring.
    #[arg(long, default_value_t = 0)]
    view: u32,
    /// Output image (.pfm or .png).
    #[arg(long)]
    out: PathBuf,
    /// Path samples per pixel.
    #[arg(long, default_value_t = vito::rerender::HIGH_QUALITY_SPP)]
    spp: u32,
    #[command(flatten)]
    ring: RingArgs,
    #[command(flatten)]
    light: LightArgs,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Args)]
struct SliceArgs {
    /// Input medium volume.
    #[arg(long)]
    volume: PathBuf,
    /// Clip plane as NX,NY,NZ,OFFSET; the half-space the normal points into
    /// is removed. The normal is normalized here.
    #[arg(long, value_parser = parse_plane)]
    plane: [f64; 4],
    /// View index on the ring.
    #[arg(long, default_value_t = 0)]
    view: u32,
    /// Output image (.pfm or .png).
    #[arg(long)]
    out: PathBuf,
    /// Path samples per pixel.
    #[arg(long, default_value_t = vito::rerender::HIGH_QUALITY_SPP)]
    spp: u32,
    #[command(flatten)]
    ring: RingArgs,
    #[command(flatten)]
    light: LightArgs,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Args)]
struct ImmerseArgs {
    /// Input medium volume.
    #[arg(long)]
    volume: PathBuf,
    /// Water type name from the table.
    #[arg(long)]
    water: String,
    /// Water table path.
    #[arg(long, default_value = "data/water_types.txt")]
    water_table: PathBuf,
    /// View index on the ring.
    #[arg(long, default_value_t = 0)]
    view: u32,
    /// Output image (.pfm or .png).
    #[arg(long)]
    out: PathBuf,
    /// Path samples per pixel.
    #[arg(long, default_value_t = vito::rerender::HIGH_QUALITY_SPP)]
    spp: u32,
    #[command(flatten)]
    ring: RingArgs,
    #[command(flatten)]
    light: LightArgs,
    #[command(flatten)]
    scene: SceneArgs,
}

#[derive(Args)]
struct MetricsArgs {
    /// Rendered image or directory of images.
    #[arg(long)]
    rendered: PathBuf,
    /// Reference image or directory; directories are paired by file stem.
    #[arg(long)]
    reference: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_rgb3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let vals: Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|_| format!("'{s}' is not a comma-separated color"))?;
    let rgb = match vals.as_slice() {
        [v] => [*v, *v, *v],
        [r, g, b] => [*r, *g, *b],
        _ => return Err(format!("'{s}' must have 1 or 3 components")),
    };
    if rgb.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(format!("'{s}' must be finite and non-negative"));
    }
    Ok(rgb)
}

fn parse_dims(s: &str) -> Result<Vec<usize>, String> {
    let vals: Result<Vec<usize>, _> = s.split(',').map(|p| p.trim().parse()).collect();
    let vals = vals.map_err(|_| format!("'{s}' is not a comma-separated size"))?;
    match vals.len() {
        1 => Ok(vec![vals[0], vals[0], vals[0]]),
        3 => Ok(vals),
        _ => Err(format!("'{s}' must have 1 or 3 components")),
    }
}

fn parse_triple(s: &str) -> Result<Vec<f64>, String> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|_| format!("'{s}' is not a comma-separated triple"))?;
    let out = match vals.as_slice() {
        [v] => vec![*v, *v, *v],
        [x, y, z] => vec![*x, *y, *z],
        _ => return Err(format!("'{s}' must have 1 or 3 components")),
    };
    if out.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(format!("'{s}' must be finite and positive"));
    }
    Ok(out)
}

fn parse_plane(s: &str) -> Result<[f64; 4], String> {
    let vals: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|_| format!("'{s}' is not a comma-separated plane"))?;
    let [nx, ny, nz, off] = vals.as_slice() else {
        return Err(format!("'{s}' must be NX,NY,NZ,OFFSET"));
    };
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(format!("'{s}' must be finite"));
    }
    if nx * nx + ny * ny + nz * nz == 0.0 {
        return Err("plane normal must be nonzero".to_string());
    }
    Ok([*nx, *ny, *nz, *off])
}

fn init_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let n = flag.or_else(|| {
        std::env::var("VITO_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::PhantomGen(a) => commands::phantom_gen(a),
        Command::Render(a) => commands::render(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::InitFromEmissive(a) => commands::init_from_emissive(a),
        Command::Relight(a) => commands::relight(a),
        Command::Slice(a) => commands::slice(a),
        Command::Immerse(a) => commands::immerse(a),
        Command::Metrics(a) => commands::metrics(a),
    }
}

fn main() {
    let cli = Cli::try_parse().unwrap_or_else(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp
            | ErrorKind::DisplayVersion
            | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                let _ = e.print();
                std::process::exit(0);
            }
            _ => {
                let msg = e.to_string();
                let line = msg
                    .lines()
                    .find(|l| !l.trim().is_empty())
                    .unwrap_or("invalid arguments")
                    .trim_start_matches("error: ")
                    .to_string();
                eprintln!("error: {line}");
                std::process::exit(2);
            }
        }
    });
    if let Err(e) = run(cli) {
        // `{:#}` flattens the anyhow context chain onto one line.
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
