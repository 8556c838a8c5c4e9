use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, TrainError};
use crate::field::{
    occupancy_from_sigma, render_backward, render_traced, sample_camera, Camera, FieldParams,
    RenderGrads, RenderOptions,
};
use crate::geometry::{
    load_obj, surface_queries, Bvh, Mesh, SurfaceQuery, DEFAULT_BETA, DEFAULT_LEAF_SIZE,
};
use crate::guidance::{
    dirac_denoiser, resolve_endpoint, sds_gradient, BridgeClient, Decoder, Denoiser,
    DiffusionSchedule, DiracDenoiser,
};
use crate::objectives::{sketch_loss, sparsity_loss, total_loss, LossParts};
use crate::paint::{
    export_texture, paint_step_gbuffer, prepare_mesh, rasterize, write_textured_mesh, GBuffer,
    LatentTexture, PaintState,
};
use crate::refine::convert_to_rgb;
use crate::trainer::adam::AdamState;
use crate::trainer::checkpoint::{Checkpoint, TargetSet, TensorFile, Trainable};
use crate::trainer::config::{DenoiserKind, Mode, TrainConfig};
use crate::trainer::prompt::direction_prompt;

/// Used when neither the config nor `LNRF_BRIDGE` names an endpoint.
pub const DEFAULT_ENDPOINT: &str = "127.0.0.1:7357";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Where the score gradient comes from.
pub enum Critic {
    /// One Dirac target per fixed camera; each iteration picks a camera.
    Fixed {
        cameras: Vec<Camera>,
        denoisers: Vec<DiracDenoiser>,
    },
    /// Random cameras against any denoiser.
    Random(Box<dyn Denoiser>),
    /// Random cameras against the external server, which also decodes.
    Bridge(BridgeClient),
}

impl Critic {
    pub fn from_targets(set: TargetSet, sched: &DiffusionSchedule) -> Self {
        if set.cameras.is_empty() {
            let t = set
                .targets
                .into_iter()
                .next()
                .expect("target set is never empty");
            Critic::Random(Box::new(dirac_denoiser(t, sched)))
        } else {
            Critic::Fixed {
                cameras: set.cameras,
                denoisers: set
                    .targets
                    .into_iter()
                    .map(|t| dirac_denoiser(t, sched))
                    .collect(),
            }
        }
    }

    pub fn decoder(&mut self) -> Option<&mut dyn Decoder> {
        match self {
            Critic::Bridge(b) => Some(b),
            _ => None,
        }
    }

    /// Picks the view for this iteration. Returns the fixed-camera index
    /// if there is one.
    fn view<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        random: impl FnOnce(&mut R) -> Camera,
    ) -> (Option<usize>, Camera, &mut dyn Denoiser) {
        match self {
            Critic::Fixed { cameras, denoisers } => {
                let k = rng.random_range(0..cameras.len());
                (Some(k), cameras[k], &mut denoisers[k])
            }
            Critic::Random(d) => (None, random(rng), d.as_mut()),
            Critic::Bridge(b) => (None, random(rng), b),
        }
    }
}

/// Builds the critic named by the config.
pub fn build_critic(cfg: &TrainConfig, sched: &DiffusionSchedule) -> Result<Critic, Error> {
    match cfg.denoiser {
        DenoiserKind::Dirac => {
            let path = cfg
                .target
                .as_ref()
                .ok_or_else(|| TrainError::Config("the dirac denoiser requires --target".into()))?;
            Ok(Critic::from_targets(TargetSet::read(path)?, sched))
        }
        DenoiserKind::External => {
            let ep = resolve_endpoint(cfg.endpoint.as_deref())
                .unwrap_or_else(|| DEFAULT_ENDPOINT.to_string());
            let client =
                BridgeClient::connect(&ep, Duration::from_secs_f64(cfg.endpoint_timeout_s))?;
            info!(
                "connected to denoiser at {ep}, latent shape {:?}",
                client.latent_shape()
            );
            Ok(Critic::Bridge(client))
        }
    }
}

/// Random stream for one iteration. Depends only on the seed and the
/// iteration index, so resumed runs replay the same draws.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration + 1);
    rng
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub t: usize,
    pub camera: Option<usize>,
    pub sds_proxy: f64,
    pub sparse: Option<f64>,
    pub sketch: Option<f64>,
    /// Largest `|sum w + T_end - 1|` over the rendered pixels.
    pub transmittance_err: Option<f64>,
    pub covered_pixels: Option<usize>,
    pub elapsed_s: f64,
}

/// Initial state: fresh parameters, or the configured starting checkpoint.
pub fn initial_checkpoint(cfg: &TrainConfig) -> Result<Checkpoint, Error> {
    let hash = cfg.trajectory_hash();
    let Some(path) = &cfg.init_checkpoint else {
        let state = match cfg.mode {
            Mode::Paint => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let n = cfg.paint.texture_size;
                Trainable::Texture(LatentTexture::random(&mut rng, n, n))
            }
            Mode::Refine => {
                return Err(
                    TrainError::Config("refine mode requires a starting checkpoint".into()).into(),
                )
            }
            _ => Trainable::Field(FieldParams::new(cfg.field.clone(), cfg.seed)?),
        };
        return Ok(Checkpoint {
            state,
            adam: AdamState::new(),
            iteration: 0,
            seed: cfg.seed,
            config_hash: hash,
        });
    };
    let file = TensorFile::read(path)?;
    let mut ck = match cfg.mode {
        Mode::Paint => Checkpoint::texture_from_file(&file)?,
        _ => Checkpoint::field_from_file(&file, &cfg.field)?,
    };
    if let (Mode::Refine, Trainable::Field(p)) = (cfg.mode, &mut ck.state) {
        if !p.is_rgb() {
            // A latent field starts a fresh refinement run.
            convert_to_rgb(p, cfg.adapter_learnable)?;
            ck.adam = AdamState::new();
            ck.iteration = 0;
            ck.seed = cfg.seed;
            ck.config_hash = hash;
        }
    }
    if ck.config_hash != hash {
        return Err(TrainError::Config(format!(
            "{} was written by a different configuration (hash {:016x}, expected {hash:016x})",
            path.display(),
            ck.config_hash
        ))
        .into());
    }
    if ck.iteration > cfg.iterations {
        return Err(TrainError::Config(format!(
            "{} is at iteration {}, beyond the requested {}",
            path.display(),
            ck.iteration,
            cfg.iterations
        ))
        .into());
    }
    Ok(ck)
}

/// Runs the configured mode with the critic from the config.
pub fn train(cfg: &TrainConfig, metrics: &mut dyn Write) -> Result<Checkpoint, Error> {
    cfg.validate()?;
    let sched = cfg.schedule.build()?;
    let critic = build_critic(cfg, &sched)?;
    train_with(cfg, critic, metrics)
}

/// Mode-specific data prepared once per run.
enum Scene {
    Field { sketch: Option<Bvh> },
    Paint { mesh: Mesh },
}

/// Per-camera caches, valid only for fixed cameras.
#[derive(Default)]
struct Caches {
    queries: HashMap<usize, Vec<SurfaceQuery>>,
    gbuffers: HashMap<usize, GBuffer>,
}

/// Runs the training loop with an explicit critic, writing one JSON line
/// per iteration to `metrics`. Checkpoints and the config go to
/// `cfg.out_dir` when set.
pub fn train_with(
    cfg: &TrainConfig,
    critic: Critic,
    metrics: &mut dyn Write,
) -> Result<Checkpoint, Error> {
    cfg.validate()?;
    let ck = initial_checkpoint(cfg)?;
    train_from(cfg, ck, critic, metrics)
}

/// Continues training from `ck` until `cfg.iterations`.
pub fn train_from(
    cfg: &TrainConfig,
    mut ck: Checkpoint,
    mut critic: Critic,
    metrics: &mut dyn Write,
) -> Result<Checkpoint, Error> {
    let sched = cfg.schedule.build()?;
    match (&ck.state, cfg.mode) {
        (Trainable::Texture(_), Mode::Paint)
        | (Trainable::Field(_), Mode::LatentNerf | Mode::Sketch | Mode::Refine) => {}
        _ => {
            return Err(TrainError::Config(format!(
                "checkpoint does not hold state for {:?} mode",
                cfg.mode
            ))
            .into())
        }
    }
    let scene = match cfg.mode {
        Mode::Paint => {
            let path = cfg.paint_mesh.as_ref().ok_or_else(|| {
                TrainError::Config("paint mode requires --mesh (paint_mesh)".into())
            })?;
            Scene::Paint {
                mesh: prepare_mesh(&load_obj(path)?, &cfg.paint)?,
            }
        }
        Mode::Sketch => {
            let path = cfg.sketch_mesh.as_ref().ok_or_else(|| {
                TrainError::Config("sketch mode requires --mesh (sketch_mesh)".into())
            })?;
            let mesh = load_obj(path)?;
            Scene::Field {
                sketch: Some(Bvh::build(&mesh, DEFAULT_LEAF_SIZE)),
            }
        }
        _ => Scene::Field { sketch: None },
    };
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join(CONFIG_FILE);
        std::fs::write(&p, cfg.to_toml()).map_err(|e| Error::io(&p, e))?;
    }
    let start = Instant::now();
    let mut caches = Caches::default();
    let io = |e| Error::io("metrics log", e);

    while ck.iteration < cfg.iterations {
        let it = ck.iteration;
        let mut rng = iteration_rng(cfg.seed, it);
        let mut rec = match (&mut ck.state, &scene) {
            (Trainable::Field(p), Scene::Field { sketch }) => field_iteration(
                cfg,
                p,
                &mut ck.adam,
                &mut critic,
                &sched,
                sketch.as_ref(),
                &mut caches,
                &mut rng,
            ),
            (Trainable::Texture(t), Scene::Paint { mesh }) => paint_iteration(
                cfg,
                t,
                &mut ck.adam,
                &mut critic,
                &sched,
                mesh,
                &mut caches,
                &mut rng,
            ),
            _ => unreachable!("state matches mode"),
        }
        .map_err(|e| TrainError::Iteration {
            iteration: it,
            source: Box::new(e),
        })?;
        ck.iteration += 1;
        rec.iteration = it;
        rec.elapsed_s = start.elapsed().as_secs_f64();
        serde_json::to_writer(&mut *metrics, &rec).map_err(|e| io(e.into()))?;
        metrics.write_all(b"\n").map_err(io)?;
        if let (Some(dir), true) = (
            &cfg.out_dir,
            cfg.checkpoint_every > 0 && ck.iteration % cfg.checkpoint_every == 0,
        ) {
            ck.to_file()
                .write(&dir.join(format!("ckpt_{:06}.bin", ck.iteration)))?;
        }
    }
    metrics.flush().map_err(io)?;

    if let Some(dir) = &cfg.out_dir {
        ck.to_file().write(&dir.join(CHECKPOINT_FILE))?;
        if let (Trainable::Texture(t), Scene::Paint { mesh }) = (&ck.state, &scene) {
            let fallback = cfg.paint.preview_fallback
                || matches!(critic, Critic::Fixed { .. } | Critic::Random(_));
            let rgb = export_texture(t, critic.decoder(), fallback)?;
            let obj = write_textured_mesh(dir, "textured", mesh, &rgb)?;
            info!("wrote {}", obj.display());
        }
    }
    Ok(ck)
}

#[allow(clippy::too_many_arguments)]
fn field_iteration(
    cfg: &TrainConfig,
    params: &mut FieldParams,
    adam: &mut AdamState,
    critic: &mut Critic,
    sched: &DiffusionSchedule,
    sketch: Option<&Bvh>,
    caches: &mut Caches,
    rng: &mut ChaCha8Rng,
) -> Result<MetricsRecord, Error> {
    let (cam_idx, cam, den) = critic.view(rng, |r| sample_camera(r, &cfg.camera));
    let opts = RenderOptions {
        steps: None,
        jitter_seed: cfg.jitter.then(|| rng.random()),
        background: cfg.random_background.then(|| {
            (0..params.channels())
                .map(|_| rng.sample(StandardNormal))
                .collect()
        }),
    };
    let (out, trace) = render_traced(params, &cam, &opts);
    let prompt = if cfg.direction_prompt {
        direction_prompt(&cfg.prompt, &cam)
    } else {
        cfg.prompt.clone()
    };
    let s = sds_gradient(den, &out.latent, &prompt, sched, rng)?;
    let (sparse, sparse_grad) = sparsity_loss(&out.w_blend);

    let dref = params.delta_ref();
    let mut sketch_value = None;
    let mut sketch_grad = None;
    if let Some(bvh) = sketch {
        let fresh = || {
            let pts: Vec<_> = trace.samples.iter().map(|s| s.position).collect();
            surface_queries(bvh, &pts, DEFAULT_BETA)
        };
        // Sample positions repeat exactly for a fixed camera without jitter.
        let cached;
        let queries: &[SurfaceQuery] = match (cam_idx, cfg.jitter) {
            (Some(k), false) => caches.queries.entry(k).or_insert_with(fresh),
            _ => {
                cached = fresh();
                &cached
            }
        };
        let alphas: Vec<f64> = trace
            .samples
            .iter()
            .map(|s| occupancy_from_sigma(s.sigma, dref))
            .collect();
        let (v, g) = sketch_loss(&alphas, queries, cfg.loss.sigma_s)?;
        sketch_value = Some(v);
        sketch_grad = Some(g);
    }

    let combined = total_loss(
        LossParts {
            sds: Some(s.grad.clone()),
            sparse: Some(sparse_grad),
            sketch: sketch_grad,
        },
        &cfg.loss,
    );
    // d alpha / d sigma = delta_ref * exp(-delta_ref * sigma).
    let dsigma: Option<Vec<f64>> = combined.alpha.as_ref().map(|ga| {
        trace
            .samples
            .iter()
            .zip(ga)
            .map(|(s, g)| g * dref * (-dref * s.sigma).exp())
            .collect()
    });
    let mut grads = params.zeros_like();
    render_backward(
        params,
        &trace,
        RenderGrads {
            pixels: combined.pixels.as_ref(),
            w_blend: combined.w_blend.as_deref(),
            sigma: dsigma.as_deref(),
        },
        &mut grads,
    );
    adam.step_field(params, &grads, &cfg.adam)?;
    params.check_finite()?;

    let t_err = out
        .w_blend
        .iter()
        .zip(&out.t_end)
        .map(|(w, t)| (w + t - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(MetricsRecord {
        iteration: 0,
        t: s.t,
        camera: cam_idx,
        sds_proxy: s.grad.dot(&out.latent),
        sparse: Some(sparse),
        sketch: sketch_value,
        transmittance_err: Some(t_err),
        covered_pixels: None,
        elapsed_s: 0.0,
    })
}

#[allow(clippy::too_many_arguments)]
fn paint_iteration(
    cfg: &TrainConfig,
    texture: &mut LatentTexture,
    adam: &mut AdamState,
    critic: &mut Critic,
    sched: &DiffusionSchedule,
    mesh: &Mesh,
    caches: &mut Caches,
    rng: &mut ChaCha8Rng,
) -> Result<MetricsRecord, Error> {
    let mut cam_cfg = cfg.camera;
    cam_cfg.resolution = cfg.paint.render_size;
    let (cam_idx, cam, den) = critic.view(rng, |r| sample_camera(r, &cam_cfg));
    let cached;
    let g: &GBuffer = match cam_idx {
        Some(k) => match caches.gbuffers.entry(k) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(rasterize(mesh, &cam, cam.resolution)?)
            }
        },
        None => {
            cached = rasterize(mesh, &cam, cam.resolution)?;
            &cached
        }
    };
    let prompt = if cfg.direction_prompt {
        direction_prompt(&cfg.prompt, &cam)
    } else {
        cfg.prompt.clone()
    };
    let mut state = PaintState { texture, adam };
    let stats = paint_step_gbuffer(&mut state, g, den, sched, &prompt, rng, &cfg.paint)?;
    Ok(MetricsRecord {
        iteration: 0,
        t: stats.t,
        camera: cam_idx,
        sds_proxy: stats.sds_proxy,
        sparse: None,
        sketch: None,
        transmittance_err: None,
        covered_pixels: Some(stats.covered_pixels),
        elapsed_s: 0.0,
    })
}

/// Reads the checkpoint at `path` for the given config.
pub fn load_checkpoint(path: &Path, cfg: &TrainConfig) -> Result<Checkpoint, Error> {
    let f = TensorFile::read(path)?;
    Ok(
        if f.tensors
            .contains_key(crate::trainer::checkpoint::TEXTURE_TENSOR)
        {
            Checkpoint::texture_from_file(&f)?
        } else {
            Checkpoint::field_from_file(&f, &cfg.field)?
        },
    )
}

/// Config saved next to a checkpoint, if any.
pub fn sibling_config(checkpoint: &Path) -> Option<PathBuf> {
    let p = checkpoint
        .parent()
        .unwrap_or(Path::new("."))
        .join(CONFIG_FILE);
    if p.exists() {
        Some(p)
    } else {
        warn!("no {CONFIG_FILE} next to {}", checkpoint.display());
        None
    }
}
