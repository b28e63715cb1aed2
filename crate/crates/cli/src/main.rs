use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use gsedit_core::camera::PoseRecord;
use gsedit_core::fixtures::{fixture, FixtureName};
use gsedit_core::guidance::{spawn_server, GuidanceProvider};
use gsedit_core::pipeline::{run, EditConfig, PipelineError};
use gsedit_core::render::render;
use gsedit_core::scene::{load_ply, save_ply, select_in_box};
use gsedit_core::{CameraPose, RenderSettings, RgbImage};

mod config;
mod provider;

use provider::ProviderSpec;

/// Environment variable naming a remote guidance service; it takes
/// precedence over `--provider`.
const PROVIDER_URL_ENV: &str = "GSEDIT_PROVIDER_URL";

#[derive(Debug, Parser)]
#[command(name = "gsedit", version, about = "Local editing of 3D Gaussian splatting scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the coarse and refinement stages on a scene.
    Edit(EditArgs),
    /// Render a scene at the refinement grid or at poses from a file.
    Render(RenderArgs),
    /// Write a built-in fixture scene, its target and a matching config.
    Fixture(FixtureArgs),
    /// Write the refinement grid poses as JSON.
    ExportPoses(ExportArgs),
    /// Serve a fixture's mock provider over the guidance protocol.
    ServeMock(ServeArgs),
}

#[derive(Debug, clap::Args)]
struct EditArgs {
    /// TOML or JSON edit config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `mock:<fixture>` or `remote:<url>`.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Per-request timeout of a remote provider.
    #[arg(long, default_value_t = 120.0)]
    timeout_secs: f64,
    /// Skip the turntable images.
    #[arg(long)]
    no_turntable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Subset {
    All,
    Editable,
    Fixed,
}

#[derive(Debug, clap::Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Directory for the PNG files.
    #[arg(long)]
    out: PathBuf,
    /// Supplies intrinsics, background, edit box and grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON list of poses as written by `export-poses`.
    #[arg(long)]
    poses: Option<PathBuf>,
    /// Editable means inside the config's edit box.
    #[arg(long, value_enum, default_value_t = Subset::All)]
    subset: Subset,
}

#[derive(Debug, clap::Args)]
struct FixtureArgs {
    /// `blob-10` or `box-scene-100`.
    name: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, clap::Args)]
struct ExportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    #[arg(long, default_value = "blob-10")]
    fixture: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "127.0.0.1:8765")]
    addr: std::net::SocketAddr,
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 3,
        error: error.into(),
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Config(_) => usage(e),
        _ => runtime(e),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Edit(a) => cmd_edit(a),
        Command::Render(a) => cmd_render(a),
        Command::Fixture(a) => cmd_fixture(a),
        Command::ExportPoses(a) => cmd_export_poses(a),
        Command::ServeMock(a) => cmd_serve_mock(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<EditConfig, Failure> {
    match path {
        Some(p) => config::load(p).map_err(usage),
        None => Ok(EditConfig::default()),
    }
}

fn write_png(img: &RgbImage, path: &Path) -> anyhow::Result<()> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.to_rgb8())
        .ok_or_else(|| anyhow!("image buffer has the wrong size"))?;
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Renders `poses` into `dir/view_NN.png`.
fn write_views(
    scene: &gsedit_core::GaussianScene,
    subset: Option<&[usize]>,
    poses: &[CameraPose],
    cfg: &EditConfig,
    dir: &Path,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let k = cfg.intrinsics()?;
    for (i, pose) in poses.iter().enumerate() {
        let out = render(scene, subset, pose, &k, cfg.background, &RenderSettings::default())?;
        write_png(&out.rgb, &dir.join(format!("view_{i:02}.png")))?;
    }
    Ok(())
}

fn cmd_edit(args: EditArgs) -> CmdResult {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(gamma) = args.gamma {
        cfg.gamma = gamma;
    }
    if let Some(every) = args.checkpoint_every {
        cfg.checkpoint_every = Some(every);
    }
    cfg.validate().map_err(usage)?;
    if !args.scene.is_file() {
        return Err(usage(anyhow!("scene not found: {}", args.scene.display())));
    }
    if !(args.timeout_secs > 0.0 && args.timeout_secs.is_finite()) {
        return Err(usage(anyhow!("timeout must be positive")));
    }

    let env_url = std::env::var(PROVIDER_URL_ENV).ok().filter(|u| !u.is_empty());
    let spec = match (env_url, args.provider.as_deref()) {
        (Some(url), _) => ProviderSpec::Remote(url),
        (None, Some(s)) => s.parse().map_err(usage)?,
        (None, None) => {
            return Err(usage(anyhow!(
                "no provider: pass --provider mock:<fixture>|remote:<url> or set {PROVIDER_URL_ENV}"
            )))
        }
    };
    let provider: Box<dyn GuidanceProvider> = spec
        .build(cfg.seed, Duration::from_secs_f64(args.timeout_secs))
        .map_err(usage)?;
    log::info!("provider {spec}");

    let (report, outputs) = run(&cfg, &args.scene, &args.out, provider.as_ref()).map_err(pipeline_failure)?;
    if !args.no_turntable {
        let edited = load_ply(&outputs.scene).map_err(runtime)?;
        let poses = cfg.refinement_grid().map_err(runtime)?;
        write_views(&edited, None, &poses, &cfg, &args.out.join("turntable")).map_err(runtime)?;
    }
    println!(
        "wrote {} ({} Gaussians) and {}; refinement mse {:.3e} -> {:.3e}",
        outputs.scene.display(),
        report.output_gaussians,
        outputs.report.display(),
        report.refine_initial_mse,
        report.refine_final_mse
    );
    Ok(())
}

fn read_poses(path: &Path) -> anyhow::Result<Vec<CameraPose>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let records: Vec<PoseRecord> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    records.iter().map(|r| r.pose().map_err(Into::into)).collect()
}

fn cmd_render(args: RenderArgs) -> CmdResult {
    let cfg = load_config(args.config.as_deref())?;
    cfg.intrinsics().map_err(usage)?;
    if !args.scene.is_file() {
        return Err(usage(anyhow!("scene not found: {}", args.scene.display())));
    }
    let poses = match &args.poses {
        Some(p) => read_poses(p).map_err(usage)?,
        None => cfg.refinement_grid().map_err(usage)?,
    };
    let scene = load_ply(&args.scene).map_err(runtime)?;
    let editable = select_in_box(&scene, &cfg.edit_box);
    let subset: Option<Vec<usize>> = match args.subset {
        Subset::All => None,
        Subset::Editable => Some(editable),
        Subset::Fixed => Some((0..scene.len()).filter(|i| editable.binary_search(i).is_err()).collect()),
    };
    write_views(&scene, subset.as_deref(), &poses, &cfg, &args.out).map_err(runtime)?;
    println!("wrote {} views to {}", poses.len(), args.out.display());
    Ok(())
}

fn cmd_fixture(args: FixtureArgs) -> CmdResult {
    let name: FixtureName = args.name.parse().map_err(|e: String| usage(anyhow!(e)))?;
    let f = fixture(name, args.seed);
    let cfg = f.edit_config(args.seed);
    let dir = &args.out;
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime)?;
    save_ply(&f.scene, dir.join(format!("{name}.ply"))).map_err(runtime)?;
    save_ply(&f.target, dir.join(format!("{name}.target.ply"))).map_err(runtime)?;
    let text = toml::to_string_pretty(&cfg).map_err(runtime)?;
    std::fs::write(dir.join(format!("{name}.toml")), text).map_err(runtime)?;
    let poses = cfg.refinement_grid().map_err(runtime)?;
    write_views(&f.target, None, &poses, &cfg, &dir.join("targets")).map_err(runtime)?;
    println!("wrote {name} ({} Gaussians) to {}", f.scene.len(), dir.display());
    Ok(())
}

fn cmd_export_poses(args: ExportArgs) -> CmdResult {
    let cfg = load_config(args.config.as_deref())?;
    let k = cfg.intrinsics().map_err(usage)?;
    let poses = cfg.refinement_grid().map_err(usage)?;
    let records: Vec<PoseRecord> = poses.iter().map(|p| p.to_record(k)).collect();
    let json = serde_json::to_string_pretty(&records).map_err(runtime)?;
    match &args.out {
        Some(path) => std::fs::write(path, json + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .map_err(runtime)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_serve_mock(args: ServeArgs) -> CmdResult {
    let name: FixtureName = args.fixture.parse().map_err(|e: String| usage(anyhow!(e)))?;
    let provider = fixture(name, args.seed).mock_provider(args.seed);
    let handle = spawn_server(Arc::new(provider), args.addr)
        .with_context(|| format!("binding {}", args.addr))
        .map_err(runtime)?;
    println!("serving {name} mock on {}", handle.url());
    handle.wait().map_err(runtime)
}
