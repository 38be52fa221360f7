//! `aerialign`: stages of the aerial-to-base-map alignment pipeline.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use aerialign_core::dataset::{generate_aligned_crops, verify_crop_set, MANIFEST_NAME};
use aerialign_core::evaluation::{
    comparison_report, end_to_end_eval, format_rate, generate_synthetic_scene, load_scene, read_report_rows,
    save_scene, success_rate, AldeReport, SyntheticConfig, DEFAULT_EVAL_FRAMES,
};
use aerialign_core::jsonl::write_jsonl;
use aerialign_core::offsetgrid::{accumulate, export_quiver, interpolate, OffsetGrid};
use aerialign_core::raster::{load_manifest, load_raster_auto, Point};
use aerialign_core::registration::{
    batch_align_to_file, failures_path_for, join_positions, read_estimates, sample_frames, EstimateStatus,
};
use aerialign_review::{effective_labels, export_validated, read_labels, start_review, ReviewInputs, ReviewSession};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{ExtentPolicy, PipelineConfig};

#[derive(Parser, Debug)]
#[command(name = "aerialign", version, about = "Align aerial imagery to a SLAM base map and build corrected crops")]
struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true, env = "AID_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for align and crops (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Spatially stratified frame sampling.
    Sample(SampleArgs),
    /// Estimate a shift for every frame of a manifest.
    Align(AlignArgs),
    /// Serve the manual review UI, or export the accepted estimates.
    Review(ReviewArgs),
    /// Accumulate validated estimates into a dense offset grid.
    Grid(GridArgs),
    /// Cut offset-corrected crops for every frame.
    Crops(CropsArgs),
    /// ALDE metrics, success rates, comparison tables and synthetic runs.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Render a synthetic scene with a known distortion field.
    Synth(SynthArgs),
    /// Export an offset grid as quiver CSV.
    Quiver(QuiverArgs),
}

#[derive(Args, Debug)]
struct LayerArgs {
    /// Base-map PNG (sidecar `<name>.meta.json` beside it).
    #[arg(long)]
    basemap: Option<PathBuf>,
    /// Aerial PNG (sidecar `<name>.meta.json` beside it).
    #[arg(long)]
    aerial: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Frame manifest (JSON-Lines).
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Number of frames to keep.
    #[arg(long)]
    n: usize,
    /// Bucket size in meters (defaults to the grid cell size).
    #[arg(long)]
    cell_m: Option<f64>,
    /// Sampler seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[command(flatten)]
    layers: LayerArgs,
    /// Frame manifest (JSON-Lines).
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Estimates output; failures go to `<out>.failures.jsonl`.
    #[arg(long)]
    out: PathBuf,
    /// Use the exhaustive search instead of coarse-to-fine.
    #[arg(long)]
    exhaustive: bool,
}

#[derive(Args, Debug)]
struct ReviewArgs {
    #[command(flatten)]
    layers: LayerArgs,
    /// Estimates to review.
    #[arg(long)]
    estimates: Option<PathBuf>,
    /// Frame manifest with the estimate positions.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Append-only label log.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Listen address, e.g. 127.0.0.1:8765.
    #[arg(long)]
    bind: Option<String>,
    /// Serve static UI files from this directory instead of the built-in page.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    /// Write the accepted estimates to this file and exit without serving.
    #[arg(long)]
    export_validated: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Validated (accepted) estimates.
    #[arg(long)]
    estimates: Option<PathBuf>,
    /// Frame manifest with the estimate positions.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Base map defining the grid extent.
    #[arg(long)]
    basemap: Option<PathBuf>,
    /// Grid extent policy.
    #[arg(long, value_enum)]
    extent: Option<ExtentPolicy>,
    /// Cell size in meters.
    #[arg(long)]
    cell_m: Option<f64>,
    /// Dense grid output (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also write the sparse grid before interpolation.
    #[arg(long)]
    sparse_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CropsArgs {
    /// Frame manifest (JSON-Lines).
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Aerial PNG (sidecar beside it).
    #[arg(long)]
    aerial: Option<PathBuf>,
    /// Dense offset grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Crop width and height in meters.
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    size_m: Option<Vec<f64>>,
    /// Keep crops aligned with the map axes instead of the ego heading.
    #[arg(long)]
    axis_aligned: bool,
    /// Output resolution in meters per pixel.
    #[arg(long)]
    resolution: Option<f64>,
    /// Only verify an existing crop manifest.
    #[arg(long, conflicts_with_all = ["frames", "aerial", "grid", "out_dir"])]
    verify: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Full sample, align, grid and lookup chain on a saved synthetic scene.
    Scene {
        /// Directory written by `synth`.
        #[arg(long)]
        scene: PathBuf,
        /// Frames to sample from the scene.
        #[arg(long, default_value_t = DEFAULT_EVAL_FRAMES)]
        n: usize,
        /// Sampler seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write report.txt and report.csv here.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// ALDE of the offsets in an estimates file.
    Offsets {
        /// Estimates file.
        #[arg(long)]
        estimates: PathBuf,
        /// Dataset name for the report row.
        #[arg(long, default_value = "estimates")]
        name: String,
        /// Ground sampling distance listed in the report row.
        #[arg(long, default_value_t = aerialign_core::raster::DEFAULT_RESOLUTION)]
        resolution: f64,
        /// Write report.txt and report.csv here.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Share of accepted frames in a label log.
    Success {
        /// Label log (JSON-Lines).
        #[arg(long)]
        labels: PathBuf,
    },
    /// Comparison table from JSON-Lines report rows.
    Table {
        /// Report rows (JSON-Lines).
        #[arg(long)]
        rows: PathBuf,
        /// Directory for report.txt and report.csv.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Scene width and height in meters.
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    extent_m: Option<Vec<f64>>,
    /// Largest offset norm of the distortion field.
    #[arg(long)]
    magnitude_m: Option<f64>,
    /// Dominant wavelength of the distortion field.
    #[arg(long)]
    wavelength_m: Option<f64>,
    /// Meters per pixel of both layers.
    #[arg(long)]
    resolution: Option<f64>,
}

#[derive(Args, Debug)]
struct QuiverArgs {
    /// Offset grid (JSON).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// CSV output.
    #[arg(long)]
    out: PathBuf,
}

struct Ctx {
    cfg: PipelineConfig,
    workers: usize,
    force: bool,
}

impl Ctx {
    /// Flag value, else the config value (rooted), else an error naming both.
    fn path(&self, flag: Option<PathBuf>, from_cfg: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
        flag.or_else(|| from_cfg.map(|p| self.cfg.rooted(p)))
            .with_context(|| format!("no {what} given: pass --{what} or set [paths].{what}"))
    }

    fn output(&self, p: &Path) -> Result<()> {
        if p.exists() && !self.force {
            bail!("refusing to overwrite {} (pass --force)", p.display());
        }
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(())
    }
}

fn load_layer(p: &Path) -> Result<aerialign_core::raster::RasterLayer> {
    load_raster_auto(p).with_context(|| format!("loading raster {}", p.display()))
}

fn load_frames(p: &Path) -> Result<Vec<aerialign_core::raster::FrameRecord>> {
    load_manifest(p).with_context(|| format!("loading frame manifest {}", p.display()))
}

fn cmd_sample(ctx: &Ctx, a: SampleArgs) -> Result<()> {
    let frames_path = ctx.path(a.frames, ctx.cfg.paths.frames.as_ref(), "frames")?;
    let frames = load_frames(&frames_path)?;
    let cell = a.cell_m.unwrap_or(ctx.cfg.grid.cell_m);
    let picked = sample_frames(&frames, a.n, cell, a.seed)?;
    ctx.output(&a.out)?;
    write_jsonl(&a.out, &picked)?;
    println!("sampled {} of {} frames -> {}", picked.len(), frames.len(), a.out.display());
    Ok(())
}

fn cmd_align(ctx: &Ctx, a: AlignArgs) -> Result<()> {
    let basemap = load_layer(&ctx.path(a.layers.basemap, ctx.cfg.paths.basemap.as_ref(), "basemap")?)?;
    let aerial = load_layer(&ctx.path(a.layers.aerial, ctx.cfg.paths.aerial.as_ref(), "aerial")?)?;
    let frames = load_frames(&ctx.path(a.frames, ctx.cfg.paths.frames.as_ref(), "frames")?)?;
    let mut rcfg = ctx.cfg.registration.clone();
    if a.exhaustive {
        rcfg.coarse_to_fine = false;
    }
    ctx.output(&a.out)?;
    ctx.output(&failures_path_for(&a.out))?;
    let t = Instant::now();
    let out = batch_align_to_file(&frames, &basemap, &aerial, &ctx.cfg.preprocess, &rcfg, ctx.workers, &a.out)?;
    for f in &out.failures {
        eprintln!("frame {} failed: {}", f.frame_id, f.error);
    }
    println!(
        "aligned {} frames ({} failed) in {:.1} s -> {}",
        out.estimates.len(),
        out.failures.len(),
        t.elapsed().as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

fn cmd_review(ctx: &Ctx, a: ReviewArgs) -> Result<()> {
    let estimates_path = ctx.path(a.estimates, ctx.cfg.paths.estimates.as_ref(), "estimates")?;
    let labels_path = a.labels.unwrap_or_else(|| ctx.cfg.rooted(&ctx.cfg.review.labels));
    if let Some(out) = a.export_validated {
        ctx.output(&out)?;
        let n = export_validated(&labels_path, &estimates_path, &out)?;
        let labels = read_labels(&labels_path)?;
        let statuses: Vec<EstimateStatus> = effective_labels(&labels).values().map(|v| v.status()).collect();
        let rate = success_rate(&statuses).map(format_rate).unwrap_or_else(|_| "n/a".into());
        println!("exported {n} accepted estimates ({rate} of labeled frames) -> {}", out.display());
        return Ok(());
    }
    let inputs = ReviewInputs {
        estimates: read_estimates(&estimates_path).with_context(|| format!("reading {}", estimates_path.display()))?,
        frames: load_frames(&ctx.path(a.frames, ctx.cfg.paths.frames.as_ref(), "frames")?)?,
        basemap: load_layer(&ctx.path(a.layers.basemap, ctx.cfg.paths.basemap.as_ref(), "basemap")?)?,
        aerial: load_layer(&ctx.path(a.layers.aerial, ctx.cfg.paths.aerial.as_ref(), "aerial")?)?,
        crop_size_m: ctx.cfg.registration.crop_size_m,
    };
    let session = Arc::new(ReviewSession::open(inputs, &labels_path)?);
    let bind = a.bind.unwrap_or_else(|| ctx.cfg.review.bind.clone());
    let ui_dir = a.ui_dir.or_else(|| ctx.cfg.review.ui_dir.clone());
    let rt = tokio::runtime::Runtime::new().context("starting async runtime")?;
    rt.block_on(async move {
        let handle = start_review(session, &bind, ui_dir).await?;
        println!("listening on http://{}", handle.addr);
        std::io::stdout().flush().ok();
        tokio::signal::ctrl_c().await.context("waiting for ctrl-c")?;
        handle.stop().await.context("shutting down")?;
        Ok(())
    })
}

fn cmd_grid(ctx: &Ctx, a: GridArgs) -> Result<()> {
    let est_path = ctx.path(a.estimates, ctx.cfg.paths.estimates.as_ref(), "estimates")?;
    let estimates = read_estimates(&est_path).with_context(|| format!("reading {}", est_path.display()))?;
    let frames = load_frames(&ctx.path(a.frames, ctx.cfg.paths.frames.as_ref(), "frames")?)?;
    let cell = a.cell_m.unwrap_or(ctx.cfg.grid.cell_m);
    let template = match a.extent.unwrap_or(ctx.cfg.grid.extent) {
        ExtentPolicy::Basemap => {
            let basemap = load_layer(&ctx.path(a.basemap, ctx.cfg.paths.basemap.as_ref(), "basemap")?)?;
            OffsetGrid::for_layer(&basemap, cell)?
        }
        ExtentPolicy::Frames => {
            if frames.is_empty() {
                bail!("empty frame manifest");
            }
            let fold = |f: fn(f64, f64) -> f64, init: f64, g: fn(&aerialign_core::raster::FrameRecord) -> f64| {
                frames.iter().map(g).fold(init, f)
            };
            let x0 = (fold(f64::min, f64::INFINITY, |f| f.x_m) / cell).floor() * cell;
            let y0 = (fold(f64::min, f64::INFINITY, |f| f.y_m) / cell).floor() * cell;
            let x1 = fold(f64::max, f64::NEG_INFINITY, |f| f.x_m);
            let y1 = fold(f64::max, f64::NEG_INFINITY, |f| f.y_m);
            let cols = ((x1 - x0) / cell).floor() as usize + 1;
            let rows = ((y1 - y0) / cell).floor() as usize + 1;
            OffsetGrid::new(Point::new(x0, y0), cell, cols, rows)?
        }
    };
    let joined = join_positions(&estimates, &frames)?;
    let sparse = accumulate(&joined, &template)?;
    let dense = interpolate(&sparse)?;
    ctx.output(&a.out)?;
    if let Some(p) = &a.sparse_out {
        ctx.output(p)?;
        sparse.save(p)?;
    }
    dense.save(&a.out)?;
    println!(
        "grid {}x{} cells of {} m, {} observed, max offset {:.3} m -> {}",
        dense.cols,
        dense.rows,
        cell,
        sparse.valid_count(),
        dense.max_norm(),
        a.out.display()
    );
    Ok(())
}

fn cmd_crops(ctx: &Ctx, a: CropsArgs) -> Result<()> {
    if let Some(manifest) = a.verify {
        return report_verification(&manifest);
    }
    let mut cfg = ctx.cfg.crops.clone();
    if let Some(d) = a.out_dir {
        cfg.output_dir = d;
    } else {
        cfg.output_dir = ctx.cfg.rooted(&cfg.output_dir);
    }
    if let Some(s) = a.size_m {
        cfg.crop_size_m = (s[0], s[1]);
    }
    if a.axis_aligned {
        cfg.rotate_to_ego = false;
    }
    if let Some(r) = a.resolution {
        cfg.resolution_m_per_px = r;
    }
    let frames = load_frames(&ctx.path(a.frames, ctx.cfg.paths.frames.as_ref(), "frames")?)?;
    let aerial = load_layer(&ctx.path(a.aerial, ctx.cfg.paths.aerial.as_ref(), "aerial")?)?;
    let grid_path = ctx.path(a.grid, ctx.cfg.paths.grid.as_ref(), "grid")?;
    let grid = OffsetGrid::load(&grid_path).with_context(|| format!("loading grid {}", grid_path.display()))?;
    let manifest = cfg.output_dir.join(MANIFEST_NAME);
    ctx.output(&manifest)?;
    let out = generate_aligned_crops(&frames, &aerial, &grid, &cfg, ctx.workers)?;
    for f in &out.failures {
        eprintln!("frame {} failed: {}", f.frame_id, f.error);
    }
    println!(
        "wrote {} crops ({} failed) -> {}",
        out.entries.len(),
        out.failures.len(),
        manifest.display()
    );
    report_verification(&manifest)
}

fn report_verification(manifest: &Path) -> Result<()> {
    let report = verify_crop_set(manifest).with_context(|| format!("verifying {}", manifest.display()))?;
    for v in &report.violations {
        eprintln!("{}: {:?}: {}", v.frame_id, v.kind, v.detail);
    }
    if !report.is_clean() {
        bail!("{} violations in {} crops", report.violations.len(), report.checked);
    }
    println!("verified {} crops, no violations", report.checked);
    Ok(())
}

fn print_alde(r: &AldeReport) {
    println!(
        "{}: ALDE mean {:.3} m, max {:.3} m over {} frames",
        r.dataset_name, r.alde_mean_m, r.alde_max_m, r.n_frames
    );
}

fn write_report(ctx: &Ctx, rows: &[AldeReport], dir: &Path) -> Result<()> {
    ctx.output(&dir.join("report.txt"))?;
    ctx.output(&dir.join("report.csv"))?;
    print!("{}", comparison_report(rows, dir)?);
    Ok(())
}

fn cmd_eval(ctx: &Ctx, cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Scene { scene, n, seed, report_dir } => {
            let s = load_scene(&scene).with_context(|| format!("loading scene {}", scene.display()))?;
            let t = Instant::now();
            let r = end_to_end_eval(&s, &ctx.cfg.preprocess, &ctx.cfg.registration, n, seed, ctx.workers)?;
            print_alde(&r.before);
            print_alde(&r.after);
            println!("after-ALDE mean {:.3} m ({:.1} s)", r.after.alde_mean_m, t.elapsed().as_secs_f64());
            if let Some(dir) = report_dir {
                write_report(ctx, &[r.before, r.after], &dir)?;
            }
        }
        EvalCommand::Offsets {
            estimates,
            name,
            resolution,
            report_dir,
        } => {
            let est = read_estimates(&estimates).with_context(|| format!("reading {}", estimates.display()))?;
            let offsets: Vec<(f64, f64)> = est.iter().map(|e| (e.dx_m, e.dy_m)).collect();
            let row = AldeReport::from_offsets(name, &offsets, resolution, "")?;
            print_alde(&row);
            if let Some(dir) = report_dir {
                write_report(ctx, &[row], &dir)?;
            }
        }
        EvalCommand::Success { labels } => {
            let labels = read_labels(&labels)?;
            let effective = effective_labels(&labels);
            let statuses: Vec<EstimateStatus> = effective.values().map(|v| v.status()).collect();
            let rate = success_rate(&statuses)?;
            let accepted = statuses.iter().filter(|s| **s == EstimateStatus::Accepted).count();
            println!("{} of {} labeled frames accepted: {}", accepted, statuses.len(), format_rate(rate));
        }
        EvalCommand::Table { rows, out_dir } => {
            let rows = read_report_rows(&rows).with_context(|| format!("reading {}", rows.display()))?;
            write_report(ctx, &rows, &out_dir)?;
        }
    }
    Ok(())
}

fn cmd_synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let mut cfg = SyntheticConfig {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(e) = a.extent_m {
        cfg.extent_m = (e[0], e[1]);
    }
    if let Some(m) = a.magnitude_m {
        cfg.distortion_magnitude_m = m;
    }
    if let Some(w) = a.wavelength_m {
        cfg.distortion_wavelength_m = w;
    }
    if let Some(r) = a.resolution {
        cfg.resolution_m_per_px = r;
    }
    cfg.cell_m = ctx.cfg.grid.cell_m;
    ctx.output(&a.out.join("scene.json"))?;
    let scene = generate_synthetic_scene(&cfg)?;
    save_scene(&scene, &a.out)?;
    println!(
        "scene {}x{} px, {} frames, max distortion {:.3} m -> {}",
        scene.aerial.width_px(),
        scene.aerial.height_px(),
        scene.frames.len(),
        scene.truth_field.max_norm(),
        a.out.display()
    );
    Ok(())
}

fn cmd_quiver(ctx: &Ctx, a: QuiverArgs) -> Result<()> {
    let grid_path = ctx.path(a.grid, ctx.cfg.paths.grid.as_ref(), "grid")?;
    let grid = OffsetGrid::load(&grid_path).with_context(|| format!("loading grid {}", grid_path.display()))?;
    ctx.output(&a.out)?;
    let n = export_quiver(&grid, &a.out)?;
    println!("wrote {n} arrows -> {}", a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::resolve(cli.config.as_deref())?;
    let ctx = Ctx {
        cfg,
        workers: cli.workers,
        force: cli.force,
    };
    match cli.command {
        Command::Sample(a) => cmd_sample(&ctx, a),
        Command::Align(a) => cmd_align(&ctx, a),
        Command::Review(a) => cmd_review(&ctx, a),
        Command::Grid(a) => cmd_grid(&ctx, a),
        Command::Crops(a) => cmd_crops(&ctx, a),
        Command::Eval(c) => cmd_eval(&ctx, c),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Quiver(a) => cmd_quiver(&ctx, a),
    }
}

/// Error chain on one line, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
