//! Command-line front end. Exit codes: 0 success, 1 usage or configuration
//! error, 2 runtime error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use crate::error::{Error, TrainError};
use crate::guidance::{resolve_endpoint, BridgeClient, Decoder};
use crate::trainer::export::{export_mesh, render_turntable, Turntable};
use crate::trainer::train::{load_checkpoint, sibling_config, train, METRICS_FILE};
use crate::trainer::{DenoiserKind, Mode, TrainConfig, Trainable, DEFAULT_ISO};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "latentnerf",
    version,
    about = "Text- and shape-guided latent radiance fields and latent textures",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a latent radiance field from a prompt
    Generate(TrainArgs),
    /// Train a latent radiance field guided by a coarse shape
    Sketch(TrainArgs),
    /// Optimize a latent texture on a fixed mesh
    Paint(TrainArgs),
    /// Convert a latent field to RGB and keep training it
    Refine(TrainArgs),
    /// Render turntable images from a field checkpoint
    ExportViews(ExportViewsArgs),
    /// Extract an isosurface mesh from a field checkpoint
    ExportMesh(ExportMeshArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserArg {
    Dirac,
    External,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML config file; flags override its values
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Text prompt passed to the denoiser
    #[arg(long)]
    pub prompt: Option<String>,
    /// Guiding shape (sketch) or mesh to texture (paint), OBJ
    #[arg(long, value_name = "PATH")]
    pub mesh: Option<PathBuf>,
    /// Number of optimization iterations
    #[arg(long, value_name = "N")]
    pub iters: Option<u64>,
    /// Random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Leniency of the sketch constraint
    #[arg(long, value_name = "SIGMA")]
    pub sigma_s: Option<f64>,
    /// Weight of the background-mask entropy term
    #[arg(long, value_name = "LAMBDA")]
    pub lambda_sparse: Option<f64>,
    /// Weight of the sketch occupancy term
    #[arg(long, value_name = "LAMBDA")]
    pub lambda_sketch: Option<f64>,
    /// Source of the score gradient
    #[arg(long, value_enum)]
    pub denoiser: Option<DenoiserArg>,
    /// Target file for the dirac denoiser
    #[arg(long, value_name = "PATH")]
    pub target: Option<PathBuf>,
    /// host:port of the external denoiser (default: $LNRF_BRIDGE, else 127.0.0.1:7357)
    #[arg(long, value_name = "HOST:PORT")]
    pub endpoint: Option<String>,
    /// Output directory; without it the metrics log goes to stdout and files to the current directory
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Checkpoint to resume from (refine: the latent field to convert)
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Also write a checkpoint every N iterations
    #[arg(long, value_name = "N")]
    pub checkpoint_every: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExportViewsArgs {
    /// Field checkpoint
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Config the checkpoint was trained with (default: config.toml next to it)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Number of views
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    /// Camera elevation in degrees
    #[arg(long, default_value_t = 15.0)]
    pub elevation: f64,
    /// Image side in pixels
    #[arg(long, default_value_t = crate::latent::LATENT_SIZE)]
    pub resolution: usize,
    /// Decode latent views through the external server when reachable
    #[arg(long, value_name = "HOST:PORT")]
    pub endpoint: Option<String>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportMeshArgs {
    /// Field checkpoint
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Config the checkpoint was trained with (default: config.toml next to it)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Grid samples per axis
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    /// Occupancy level of the surface
    #[arg(long, default_value_t = DEFAULT_ISO)]
    pub iso: f64,
    /// Output directory; the mesh is written as mesh.obj
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let mut shown = e.to_string();
            eprintln!("error: {shown}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let msg = s.to_string();
                if !shown.contains(&msg) {
                    eprintln!("  caused by: {msg}");
                    shown.push_str(&msg);
                }
                src = s.source();
            }
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(a) => run_train(Mode::LatentNerf, a),
        Command::Sketch(a) => run_train(Mode::Sketch, a),
        Command::Paint(a) => run_train(Mode::Paint, a),
        Command::Refine(a) => run_train(Mode::Refine, a),
        Command::ExportViews(a) => export_views(a),
        Command::ExportMesh(a) => export_mesh_cmd(a),
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    TrainError::Config(msg.into()).into()
}

/// Builds the effective config: defaults for the mode, then the config
/// file, then flags. Returns it with a flag telling whether the metrics log
/// should go to stdout.
pub fn build_config(mode: Mode, a: &TrainArgs) -> Result<(TrainConfig, bool), Error> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config_error(format!("cannot read {}: {e}", p.display())))?;
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            let mut c = TrainConfig::from_toml(&text)
                .map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            if !table.contains_key("iterations") {
                c.iterations = mode.default_iterations();
            }
            c
        }
        None => TrainConfig::for_mode(mode),
    };
    cfg.mode = mode;
    if let Some(v) = &a.prompt {
        cfg.prompt = v.clone();
    }
    if let Some(m) = &a.mesh {
        match mode {
            Mode::Sketch => cfg.sketch_mesh = Some(m.clone()),
            Mode::Paint => cfg.paint_mesh = Some(m.clone()),
            _ => {
                return Err(config_error(
                    "--mesh is only used by the sketch and paint commands",
                ))
            }
        }
    }
    if let Some(v) = a.iters {
        cfg.iterations = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.sigma_s {
        cfg.loss.sigma_s = v;
    }
    if let Some(v) = a.lambda_sparse {
        cfg.loss.lambda_sparse = v;
    }
    if let Some(v) = a.lambda_sketch {
        cfg.loss.lambda_sketch = v;
    }
    if let Some(d) = a.denoiser {
        cfg.denoiser = match d {
            DenoiserArg::Dirac => DenoiserKind::Dirac,
            DenoiserArg::External => DenoiserKind::External,
        };
    }
    if let Some(v) = &a.target {
        cfg.target = Some(v.clone());
    }
    if let Some(v) = &a.endpoint {
        cfg.endpoint = Some(v.clone());
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = Some(v.clone());
    }
    if let Some(v) = &a.checkpoint {
        cfg.init_checkpoint = Some(v.clone());
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    let to_stdout = cfg.out_dir.is_none();
    if to_stdout {
        cfg.out_dir = Some(PathBuf::from("."));
    }
    cfg.validate()?;
    Ok((cfg, to_stdout))
}

fn run_train(mode: Mode, a: TrainArgs) -> Result<(), Error> {
    let (cfg, to_stdout) = build_config(mode, &a)?;
    if to_stdout {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        train(&cfg, &mut lock)?;
    } else {
        let dir = cfg.out_dir.clone().expect("set by build_config");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(METRICS_FILE);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        train(&cfg, &mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn export_config(checkpoint: &Path, config: Option<&PathBuf>) -> Result<TrainConfig, Error> {
    match config.cloned().or_else(|| sibling_config(checkpoint)) {
        Some(p) => Ok(TrainConfig::load(&p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn export_views(a: ExportViewsArgs) -> Result<(), Error> {
    if a.views == 0 || a.resolution == 0 {
        return Err(config_error("--views and --resolution must be positive"));
    }
    let cfg = export_config(&a.checkpoint, a.config.as_ref())?;
    let ck = load_checkpoint(&a.checkpoint, &cfg)?;
    let Trainable::Field(params) = &ck.state else {
        return Err(config_error(
            "export-views needs a field checkpoint, not a texture",
        ));
    };
    // The preview is always available; a server only improves latent views.
    let mut client = if params.is_rgb() {
        None
    } else {
        resolve_endpoint(a.endpoint.as_deref()).and_then(|ep| {
            match BridgeClient::connect(&ep, Duration::from_secs(10)) {
                Ok(c) => Some(c),
                Err(e) => {
                    warn!("decoder at {ep} unavailable ({e}); using the linear preview");
                    None
                }
            }
        })
    };
    let t = Turntable {
        elevation: a.elevation.to_radians(),
        resolution: a.resolution,
        ..Turntable::default()
    };
    let dec = client.as_mut().map(|c| c as &mut dyn Decoder);
    let paths = render_turntable(params, a.views, &a.out_dir, dec, &t)?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn export_mesh_cmd(a: ExportMeshArgs) -> Result<(), Error> {
    if a.res < crate::trainer::mcubes::MIN_RESOLUTION {
        return Err(config_error(format!(
            "--res must be at least {}",
            crate::trainer::mcubes::MIN_RESOLUTION
        )));
    }
    let cfg = export_config(&a.checkpoint, a.config.as_ref())?;
    let ck = load_checkpoint(&a.checkpoint, &cfg)?;
    let Trainable::Field(params) = &ck.state else {
        return Err(config_error(
            "export-mesh needs a field checkpoint, not a texture",
        ));
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let path = a.out_dir.join("mesh.obj");
    let n = export_mesh(params, a.res, a.iso, &path)?;
    println!("{} ({n} triangles)", path.display());
    Ok(())
}
