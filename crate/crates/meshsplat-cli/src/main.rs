//! Command-line interface: train | render | animate | export | gradcheck |
//! synth. Exit codes: 0 success, 2 bad arguments, 3 data error,
//! 4 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use meshsplat::deformation::build_field;
use meshsplat::error::Error;
use meshsplat::gaussians::CameraRecord;
use meshsplat::geometry::load_obj;
use meshsplat::img::{save_raw, write_png, Image};
use meshsplat::io::synthetic::{generate_synthetic, MeshKind, SyntheticSpec};
use meshsplat::io::{export_model, import_model, load_dataset, load_mesh_sequence};
use meshsplat::model::render_model;
use meshsplat::trainer::{metrics_to_csv, train, TrainConfig, WalkMode};

#[derive(Parser)]
#[command(name = "meshsplat", version, about = "Gaussian splatting on deformable triangle meshes")]
struct Cli {
    /// Cap rasterizer parallelism (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a dataset described by a manifest.
    Train(TrainArgs),
    /// Render a model to a PNG from a camera description.
    Render(RenderArgs),
    /// Render a PNG sequence driven by a directory of posed meshes.
    Animate(AnimateArgs),
    /// Re-export a model directory, optionally baking a posed mesh.
    Export(ExportArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic scene on disk.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest JSON.
    #[arg(long)]
    manifest: PathBuf,
    /// TOML config; omitted fields use defaults, flags below override.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (model/, metrics.csv, config_used.toml).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    total_iters: Option<usize>,
    #[arg(long)]
    init_count: Option<usize>,
    #[arg(long)]
    walk_mode: Option<WalkModeArg>,
    #[arg(long)]
    use_ssim: Option<bool>,
    #[arg(long)]
    val_every: Option<usize>,
    #[arg(long)]
    val_interval: Option<usize>,
    #[arg(long)]
    densify_start: Option<usize>,
    #[arg(long)]
    densify_interval: Option<usize>,
    #[arg(long)]
    densify_stop: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WalkModeArg {
    Interval,
    PerStep,
    Clipped,
}

impl From<WalkModeArg> for WalkMode {
    fn from(w: WalkModeArg) -> Self {
        match w {
            WalkModeArg::Interval => WalkMode::Interval,
            WalkModeArg::PerStep => WalkMode::PerStep,
            WalkModeArg::Clipped => WalkMode::Clipped,
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    /// Model directory (gaussians.ply, embeddings.json, canonical.obj).
    #[arg(long)]
    model: PathBuf,
    /// Camera JSON (world_to_camera row-major, fx, fy, cx, cy, ...).
    #[arg(long)]
    camera: PathBuf,
    /// Optional posed mesh; defaults to the canonical pose.
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also dump the raw float image here.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Background color as r,g,b in [0,1].
    #[arg(long, default_value = "0,0,0")]
    background: String,
}

#[derive(Args)]
struct AnimateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of posed OBJ frames with sequence.json.
    #[arg(long)]
    meshes: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "0,0,0")]
    background: String,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Bake this posed mesh: the exported PLY carries posed positions,
    /// rotations, and scales.
    #[arg(long)]
    mesh: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 10)]
    gaussians: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = MeshKindArg::Icosphere)]
    mesh: MeshKindArg,
    #[arg(long, default_value_t = 2)]
    detail: u32,
    #[arg(long, default_value_t = 500)]
    gaussians: usize,
    #[arg(long, default_value_t = 25)]
    frames: usize,
    #[arg(long, default_value_t = 25)]
    cameras: usize,
    #[arg(long, default_value_t = 128)]
    resolution: usize,
    #[arg(long, default_value_t = 0.5)]
    deform: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeshKindArg {
    Icosphere,
    Plane,
    Cylinder,
}

impl From<MeshKindArg> for MeshKind {
    fn from(m: MeshKindArg) -> Self {
        match m {
            MeshKindArg::Icosphere => MeshKind::Icosphere,
            MeshKindArg::Plane => MeshKind::Plane,
            MeshKindArg::Cylinder => MeshKind::Cylinder,
        }
    }
}

fn parse_background(text: &str) -> Result<Vector3<f64>, Error> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Error::BadConfig(format!("bad background '{text}'")))?;
    if parts.len() != 3 {
        return Err(Error::BadConfig(format!(
            "background needs 3 components, got {}",
            parts.len()
        )));
    }
    Ok(Vector3::new(parts[0], parts[1], parts[2]))
}

fn load_camera(path: &PathBuf) -> Result<meshsplat::gaussians::Camera<f64>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::MissingFile(path.display().to_string()))?;
    let record: CameraRecord = serde_json::from_str(&text)?;
    record.to_camera()
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::load_toml(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.total_iters {
        config.total_iters = v;
    }
    if let Some(v) = args.init_count {
        config.init_count = v;
    }
    if let Some(v) = args.walk_mode {
        config.walk_mode = v.into();
    }
    if let Some(v) = args.use_ssim {
        config.use_ssim = v;
    }
    if let Some(v) = args.val_every {
        config.val_every = v;
    }
    if let Some(v) = args.val_interval {
        config.val_interval = v;
    }
    if let Some(v) = args.densify_start {
        config.densify_start = v;
    }
    if let Some(v) = args.densify_interval {
        config.densify_interval = v;
    }
    if let Some(v) = args.densify_stop {
        config.densify_stop = v;
    }
    config.validate()?;

    let dataset = load_dataset::<f64>(&args.manifest)?;
    log::info!(
        "training on {} frames ({} gaussians initial, {} iters)",
        dataset.frames.len(),
        config.init_count,
        config.total_iters
    );
    let result = train(&dataset, &config)?;

    std::fs::create_dir_all(&args.out)?;
    export_model(&result.model, &dataset.canonical, args.out.join("model"))?;
    std::fs::write(
        args.out.join("metrics.csv"),
        metrics_to_csv(&result.metrics, config.lambda_l, config.use_ssim),
    )?;
    let toml_text = toml::to_string_pretty(&config)
        .map_err(|e| Error::BadConfig(e.to_string()))?;
    std::fs::write(args.out.join("config_used.toml"), toml_text)?;
    if let Some(psnr) = result.final_psnr {
        println!("final validation PSNR: {psnr:.3} dB");
    }
    println!("model written to {}", args.out.join("model").display());
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<(), Error> {
    let (model, canonical) = import_model::<f64>(&args.model)?;
    let camera = load_camera(&args.camera)?;
    let background = parse_background(&args.background)?;
    let posed_mesh = match &args.mesh {
        Some(path) => load_obj::<f64>(path)?,
        None => canonical.clone(),
    };
    let field = build_field(&canonical, &posed_mesh, 0, None)?;
    let out = render_model(&model, &posed_mesh, &field, &camera, background)?;
    let img = Image::from_rgb(out.width, out.height, &out.image);
    write_png(&img, &args.out)?;
    if let Some(raw) = &args.raw {
        save_raw(&img, raw)?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_animate(args: AnimateArgs) -> Result<(), Error> {
    let (model, canonical) = import_model::<f64>(&args.model)?;
    let camera = load_camera(&args.camera)?;
    let background = parse_background(&args.background)?;
    let meshes = load_mesh_sequence(&args.meshes, &canonical)?;
    std::fs::create_dir_all(&args.out)?;
    let mut prev = None;
    for (i, mesh) in meshes.iter().enumerate() {
        let field = build_field(&canonical, mesh, i, prev.as_ref())?;
        let out = render_model(&model, mesh, &field, &camera, background)?;
        let img = Image::from_rgb(out.width, out.height, &out.image);
        write_png(&img, args.out.join(format!("frame_{i:04}.png")))?;
        prev = Some(field);
    }
    println!("wrote {} frames to {}", meshes.len(), args.out.display());
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<(), Error> {
    let (model, canonical) = import_model::<f64>(&args.model)?;
    match &args.mesh {
        None => export_model(&model, &canonical, &args.out)?,
        Some(path) => {
            let posed_mesh = load_obj::<f64>(path)?;
            let field = build_field(&canonical, &posed_mesh, 0, None)?;
            let posed = model.pose_all(&posed_mesh, &field)?;
            std::fs::create_dir_all(&args.out)?;
            let baked: Vec<meshsplat::gaussians::Gaussian<f64>> = posed
                .iter()
                .map(|p| meshsplat::gaussians::Gaussian {
                    rotation: p.rotation,
                    log_scale: p.scale.map(|s| s.max(1e-30).ln()),
                    opacity: p.opacity,
                    color: p.color,
                })
                .collect();
            let positions: Vec<_> = posed.iter().map(|p| p.position).collect();
            let path = args.out.join("gaussians_posed.ply");
            let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
            meshsplat::gaussians::write_splat_ply(&mut out, &baked, &positions)?;
        }
    }
    println!("exported to {}", args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), Error> {
    let start = std::time::Instant::now();
    let report = meshsplat::gradcheck::run_gradcheck(
        args.seed,
        args.scenes,
        args.gaussians,
        args.resolution,
    );
    print!("{}", report.table());
    println!(
        "scenes: {}   coordinates: {}   failures: {}   elapsed: {:.1?}",
        report.scenes,
        report.total_checked(),
        report.total_failed(),
        start.elapsed()
    );
    if report.passed() {
        println!("gradcheck PASS");
        Ok(())
    } else {
        Err(Error::NonFiniteGradient(usize::MAX))
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), Error> {
    let spec = SyntheticSpec {
        mesh: args.mesh.into(),
        detail: args.detail,
        n_gaussians: args.gaussians,
        n_frames: args.frames,
        n_cameras: args.cameras,
        resolution: args.resolution,
        deform_amplitude: args.deform,
    };
    generate_synthetic::<f64>(args.seed, &spec, &args.out)?;
    println!(
        "wrote {} frames to {}",
        spec.n_frames,
        args.out.display()
    );
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::BadConfig(_) => 2,
        Error::NonFiniteGradient(_)
        | Error::NonFiniteParam(_)
        | Error::NonFiniteDelta
        | Error::BehindCamera(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Render(args) => cmd_render(args),
        Command::Animate(args) => cmd_animate(args),
        Command::Export(args) => cmd_export(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
