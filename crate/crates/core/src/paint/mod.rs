//! Texture optimization on a fixed mesh: rasterize, sample the latent
//! texture, score-distil, and push pixel gradients back to texels.

pub mod atlas;
pub mod raster;
pub mod texture;

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, PaintError};
use crate::field::Camera;
use crate::geometry::{write_obj, Mesh};
use crate::guidance::{sds_gradient, Decoder, Denoiser, DiffusionSchedule};
use crate::latent::{LatentImage, LATENT_CHANNELS, LATENT_SIZE};
use crate::refine::{display_map, init_rgb_adapter, rgb_preview};
use crate::trainer::adam::{AdamConfig, AdamState};

pub use atlas::naive_atlas;
pub use raster::{rasterize, GBuffer, NO_FACE};
pub use texture::{
    render_texture, sample_texture, texture_backward, Footprint, LatentTexture, TEXTURE_SIZE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PaintBackground {
    #[default]
    Zero,
    /// Fresh standard normal 4-vector every step.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TextureOptimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaintConfig {
    pub texture_size: usize,
    pub render_size: usize,
    pub lr: f64,
    pub optimizer: TextureOptimizer,
    /// Only update texels touched by the current render.
    pub masked: bool,
    pub background: PaintBackground,
    /// Generate a per-triangle atlas for meshes without UVs.
    pub atlas: bool,
    /// Fall back to the linear preview when no decoder is reachable.
    pub preview_fallback: bool,
}

impl Default for PaintConfig {
    fn default() -> Self {
        Self {
            texture_size: TEXTURE_SIZE,
            render_size: LATENT_SIZE,
            lr: 1e-2,
            optimizer: TextureOptimizer::Adam,
            masked: true,
            background: PaintBackground::Zero,
            atlas: true,
            preview_fallback: false,
        }
    }
}

/// Texture plus optimizer state.
#[derive(Debug)]
pub struct PaintState<'a> {
    pub texture: &'a mut LatentTexture,
    pub adam: &'a mut AdamState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaintStats {
    pub t: usize,
    pub covered_pixels: usize,
    pub sds_proxy: f64,
}

/// Ensures the mesh has UVs, generating the atlas when allowed.
pub fn prepare_mesh(mesh: &Mesh, cfg: &PaintConfig) -> Result<Mesh, PaintError> {
    if mesh.has_uvs() {
        Ok(mesh.clone())
    } else if cfg.atlas {
        Ok(naive_atlas(mesh, cfg.texture_size))
    } else {
        Err(PaintError::MissingUvs)
    }
}

fn background<R: Rng + ?Sized>(cfg: &PaintConfig, rng: &mut R) -> [f64; LATENT_CHANNELS] {
    match cfg.background {
        PaintBackground::Zero => [0.0; LATENT_CHANNELS],
        PaintBackground::Random => std::array::from_fn(|_| rng.sample(StandardNormal)),
    }
}

/// One optimization step from camera `cam`.
#[allow(clippy::too_many_arguments)]
pub fn paint_step<R: Rng + ?Sized>(
    state: &mut PaintState<'_>,
    mesh: &Mesh,
    cam: &Camera,
    den: &mut dyn Denoiser,
    sched: &DiffusionSchedule,
    prompt: &str,
    rng: &mut R,
    cfg: &PaintConfig,
) -> Result<PaintStats, Error> {
    let g = rasterize(mesh, cam, cfg.render_size)?;
    paint_step_gbuffer(state, &g, den, sched, prompt, rng, cfg)
}

/// [`paint_step`] with a precomputed rasterization.
pub fn paint_step_gbuffer<R: Rng + ?Sized>(
    state: &mut PaintState<'_>,
    g: &GBuffer,
    den: &mut dyn Denoiser,
    sched: &DiffusionSchedule,
    prompt: &str,
    rng: &mut R,
    cfg: &PaintConfig,
) -> Result<PaintStats, Error> {
    let bg = background(cfg, rng);
    let x = render_texture(state.texture, g, &bg);
    let s = sds_gradient(den, &x, prompt, sched, rng)?;
    let (grad, touched) = texture_backward(state.texture, g, &s.grad);
    let plane = state.texture.image.plane();
    let mask: Vec<bool> = (0..LATENT_CHANNELS)
        .flat_map(|_| touched.iter().copied())
        .collect();
    let mask = cfg.masked.then_some(mask.as_slice());
    match cfg.optimizer {
        TextureOptimizer::Adam => {
            let adam = AdamConfig::default();
            state.adam.step_tensor(
                "texture",
                state.texture.image.data_mut(),
                grad.data(),
                cfg.lr,
                &adam,
                mask,
            )?;
        }
        TextureOptimizer::Sgd => {
            state.adam.step += 1;
            for (i, (p, gv)) in state
                .texture
                .image
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .enumerate()
            {
                if mask.is_some_and(|m| !m[i]) {
                    continue;
                }
                *p = crate::math::to_f32_grid(*p - cfg.lr * gv);
            }
        }
    }
    debug_assert_eq!(
        mask.map_or(plane * LATENT_CHANNELS, <[bool]>::len),
        plane * LATENT_CHANNELS
    );
    Ok(PaintStats {
        t: s.t,
        covered_pixels: g.coverage(),
        sds_proxy: s.grad.dot(&x),
    })
}

/// Decodes the texture to RGB in [0, 1]. With a decoder, the texture is cut
/// into `LATENT_SIZE` tiles that are decoded separately and reassembled;
/// otherwise the linear preview is used when `fallback` allows it.
pub fn export_texture(
    tex: &LatentTexture,
    decoder: Option<&mut dyn Decoder>,
    fallback: bool,
) -> Result<LatentImage, Error> {
    match decoder {
        Some(d) => decode_tiled(tex, d),
        None if fallback => Ok(rgb_preview(&tex.image, &init_rgb_adapter()).map(display_map)),
        None => Err(PaintError::NoDecoder.into()),
    }
}

fn decode_tiled(tex: &LatentTexture, d: &mut dyn Decoder) -> Result<LatentImage, Error> {
    let (h, w) = (tex.height(), tex.width());
    let n = LATENT_SIZE;
    if h % n != 0 || w % n != 0 {
        return Err(PaintError::DecoderShape(h, w, n, n).into());
    }
    let mut out: Option<LatentImage> = None;
    for ty in 0..h / n {
        for tx in 0..w / n {
            let tile = LatentImage::from_fn(LATENT_CHANNELS, n, n, |c, y, x| {
                tex.image.get(c, ty * n + y, tx * n + x)
            });
            let rgb = d.decode(&tile)?;
            let (oh, ow) = (rgb.height(), rgb.width());
            let o = out.get_or_insert_with(|| LatentImage::zeros(3, oh * (h / n), ow * (w / n)));
            for c in 0..3 {
                for y in 0..oh {
                    for x in 0..ow {
                        o.set(c, ty * oh + y, tx * ow + x, rgb.get(c, y, x));
                    }
                }
            }
        }
    }
    Ok(out.expect("at least one tile"))
}

/// Writes `<stem>.obj`, `<stem>.mtl` and `<stem>.png` into `dir`. Returns the
/// OBJ path.
pub fn write_textured_mesh(
    dir: &Path,
    stem: &str,
    mesh: &Mesh,
    rgb: &LatentImage,
) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let png = format!("{stem}.png");
    let mtl = format!("{stem}.mtl");
    crate::image_io::write_png(&dir.join(&png), rgb, true)?;
    let mtl_text = format!("newmtl {stem}\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {png}\n");
    std::fs::write(dir.join(&mtl), mtl_text).map_err(|e| Error::io(dir.join(&mtl), e))?;
    let obj = dir.join(format!("{stem}.obj"));
    write_obj(mesh, &obj, Some((&mtl, stem)))?;
    Ok(obj)
}
