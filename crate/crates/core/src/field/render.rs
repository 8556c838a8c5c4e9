//! Emission-absorption volume rendering with a hand-written backward pass.
//!
//! Rays are clipped to the ball of radius `bound` and sampled with `steps`
//! equal strata. With `w_i = T_i (1 - exp(-sigma_i delta))` and
//! `T_i = exp(-sum_{j<i} sigma_j delta)` a pixel is
//! `sum_i w_i c_i + (1 - sum_i w_i) bg`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::field::camera::Camera;
use crate::field::params::{FieldParams, HEAD_WIDTH};
use crate::latent::{LatentImage, LATENT_CHANNELS};
use crate::math::Vec3;

/// Fixed number of gradient partitions. Each partition accumulates into its
/// own buffer and the buffers are summed in order, so results do not depend
/// on the thread count.
const GRAD_CHUNKS: usize = 4;

/// Anything that can be volume rendered: density plus `channels` colours.
/// Point evaluator: writes the colour at `p` into the slice and returns the density.
pub type Evaluator<'a> = Box<dyn FnMut(Vec3, &mut [f64]) -> f64 + 'a>;

pub trait RadianceField: Sync {
    fn channels(&self) -> usize;
    fn background(&self) -> Vec<f64>;
    /// Half-extent of the scene; rays are clipped to the ball of this radius.
    fn bound(&self) -> f64;
    /// Returns a closure writing the colour at `p` into its slice argument
    /// and returning the density. One closure is created per work chunk.
    fn evaluator(&self) -> Evaluator<'_>;
}

impl RadianceField for FieldParams {
    fn channels(&self) -> usize {
        FieldParams::channels(self)
    }

    fn background(&self) -> Vec<f64> {
        FieldParams::background(self)
    }

    fn bound(&self) -> f64 {
        self.config().bound
    }

    fn evaluator(&self) -> Box<dyn FnMut(Vec3, &mut [f64]) -> f64 + '_> {
        let mut s = self.scratch();
        Box::new(move |p, out| {
            let h = self.head(p, &mut s);
            write_color(self, &h, out);
            self.sigma_from_raw(h[0])
        })
    }
}

#[inline]
fn write_color(params: &FieldParams, head: &[f64; HEAD_WIDTH], out: &mut [f64]) {
    match &params.rgb_adapter {
        Some(a) => out.copy_from_slice(&a.apply(&head[1..])),
        None => out.copy_from_slice(&head[1..]),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderOptions {
    /// Overrides the field's sample count.
    pub steps: Option<usize>,
    /// Stratified jitter seed; `None` samples stratum midpoints.
    pub jitter_seed: Option<u64>,
    /// Background in rendered channel space, replacing the field's own.
    pub background: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub latent: LatentImage,
    /// Per-pixel foreground opacity `sum_i w_i`, row-major.
    pub w_blend: Vec<f64>,
    /// Opacity-normalised expected depth along the ray (0 for empty rays).
    pub depth: Vec<f64>,
    /// Residual transmittance after the last sample.
    pub t_end: Vec<f64>,
}

/// One ray sample as seen by the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub pixel: u32,
    pub position: Vec3,
    pub sigma: f64,
    pub delta: f64,
    pub weight: f64,
    /// Transmittance just after this sample.
    pub t_after: f64,
}

/// Forward-pass record needed for [`render_backward`].
#[derive(Debug, Clone)]
pub struct RenderTrace {
    pub samples: Vec<RaySample>,
    /// Raw head output per sample (same order as `samples`).
    heads: Vec<[f64; HEAD_WIDTH]>,
    /// `[start, end)` into `samples` for each pixel.
    ranges: Vec<(u32, u32)>,
    w_blend: Vec<f64>,
    background: Vec<f64>,
    bg_overridden: bool,
    channels: usize,
    height: usize,
    width: usize,
}

impl RenderTrace {
    pub fn pixel_samples(&self, pixel: usize) -> &[RaySample] {
        let (a, b) = self.ranges[pixel];
        &self.samples[a as usize..b as usize]
    }
}

/// Entry and exit distances of a ray against the ball of radius `r`,
/// clipped to start at 0.
pub fn ray_ball(origin: Vec3, dir: Vec3, r: f64) -> Option<(f64, f64)> {
    let b = origin.dot(dir);
    let c = origin.norm_squared() - r * r;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let far = -b + s;
    if far <= 0.0 {
        return None;
    }
    Some(((-b - s).max(0.0), far))
}

struct RayResult {
    w_blend: f64,
    depth: f64,
    t_end: f64,
}

/// Marches one ray, writing the composited pixel into `pixel`.
#[allow(clippy::too_many_arguments)]
fn march<F: FnMut(Vec3, &mut [f64]) -> f64>(
    origin: Vec3,
    dir: Vec3,
    bound: f64,
    steps: usize,
    mut jitter: Option<&mut ChaCha8Rng>,
    bg: &[f64],
    eval: &mut F,
    color: &mut [f64],
    pixel: &mut [f64],
    mut record: impl FnMut(Vec3, f64, f64, f64, f64),
) -> RayResult {
    pixel.iter_mut().for_each(|v| *v = 0.0);
    let Some((near, far)) = ray_ball(origin, dir, bound) else {
        pixel.copy_from_slice(bg);
        return RayResult {
            w_blend: 0.0,
            depth: 0.0,
            t_end: 1.0,
        };
    };
    let delta = (far - near) / steps as f64;
    let mut trans = 1.0;
    let mut w_sum = 0.0;
    let mut depth = 0.0;
    for k in 0..steps {
        let u = match jitter.as_deref_mut() {
            Some(r) => r.random::<f64>(),
            None => 0.5,
        };
        let t = near + (k as f64 + u) * delta;
        let p = origin + dir * t;
        let sigma = eval(p, color);
        let keep = (-sigma * delta).exp();
        let t_after = trans * keep;
        let w = trans - t_after;
        for (px, c) in pixel.iter_mut().zip(color.iter()) {
            *px += w * c;
        }
        w_sum += w;
        depth += w * t;
        record(p, sigma, delta, w, t_after);
        trans = t_after;
    }
    for (px, b) in pixel.iter_mut().zip(bg) {
        *px += (1.0 - w_sum) * b;
    }
    RayResult {
        w_blend: w_sum,
        depth: if w_sum > 1e-12 { depth / w_sum } else { 0.0 },
        t_end: trans,
    }
}

fn ray_rng(seed: u64, ray: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(ray as u64 + 1);
    r
}

struct RowOut {
    pixels: Vec<f64>,
    w: Vec<f64>,
    depth: Vec<f64>,
    t_end: Vec<f64>,
}

fn assemble(rows: Vec<RowOut>, channels: usize, res: usize) -> RenderOutput {
    let mut latent = LatentImage::zeros(channels, res, res);
    let mut w_blend = Vec::with_capacity(res * res);
    let mut depth = Vec::with_capacity(res * res);
    let mut t_end = Vec::with_capacity(res * res);
    for (y, row) in rows.into_iter().enumerate() {
        for x in 0..res {
            for c in 0..channels {
                latent.set(c, y, x, row.pixels[x * channels + c]);
            }
        }
        w_blend.extend(row.w);
        depth.extend(row.depth);
        t_end.extend(row.t_end);
    }
    RenderOutput {
        latent,
        w_blend,
        depth,
        t_end,
    }
}

/// Renders any [`RadianceField`] (forward only).
pub fn render_field(
    field: &dyn RadianceField,
    cam: &Camera,
    steps: usize,
    opts: &RenderOptions,
) -> RenderOutput {
    let res = cam.resolution;
    let ch = field.channels();
    let bg = opts
        .background
        .clone()
        .unwrap_or_else(|| field.background());
    let basis = cam.basis();
    let bound = field.bound();
    let rows: Vec<RowOut> = (0..res)
        .into_par_iter()
        .map(|y| {
            let mut eval = field.evaluator();
            let mut color = vec![0.0; ch];
            let mut row = RowOut {
                pixels: vec![0.0; res * ch],
                w: Vec::with_capacity(res),
                depth: Vec::with_capacity(res),
                t_end: Vec::with_capacity(res),
            };
            for x in 0..res {
                let dir =
                    cam.ray_direction_in(y as f64 + 0.5, x as f64 + 0.5, basis.0, basis.1, basis.2);
                let mut rng = opts.jitter_seed.map(|s| ray_rng(s, y * res + x));
                let r = march(
                    cam.position,
                    dir,
                    bound,
                    steps,
                    rng.as_mut(),
                    &bg,
                    &mut eval,
                    &mut color,
                    &mut row.pixels[x * ch..(x + 1) * ch],
                    |_, _, _, _, _| {},
                );
                row.w.push(r.w_blend);
                row.depth.push(r.depth);
                row.t_end.push(r.t_end);
            }
            row
        })
        .collect();
    assemble(rows, ch, res)
}

/// Renders the learned field with midpoint sampling and `steps` samples per
/// ray.
pub fn render_view(params: &FieldParams, cam: &Camera, steps: usize) -> RenderOutput {
    render_field(params, cam, steps, &RenderOptions::default())
}

/// Forward pass that also records what the backward pass needs.
pub fn render_traced(
    params: &FieldParams,
    cam: &Camera,
    opts: &RenderOptions,
) -> (RenderOutput, RenderTrace) {
    let res = cam.resolution;
    let ch = params.channels();
    let steps = opts.steps.unwrap_or(params.config().steps);
    let bg_overridden = opts.background.is_some();
    let bg = opts
        .background
        .clone()
        .unwrap_or_else(|| params.background());
    let basis = cam.basis();
    let bound = params.config().bound;

    type RowTrace = (RowOut, Vec<RaySample>, Vec<[f64; HEAD_WIDTH]>, Vec<u32>);
    let rows: Vec<RowTrace> = (0..res)
        .into_par_iter()
        .map(|y| {
            let mut s = params.scratch();
            let mut heads: Vec<[f64; HEAD_WIDTH]> = Vec::with_capacity(res * steps);
            let mut samples = Vec::with_capacity(res * steps);
            let mut counts = Vec::with_capacity(res);
            let mut color = vec![0.0; ch];
            let mut row = RowOut {
                pixels: vec![0.0; res * ch],
                w: Vec::with_capacity(res),
                depth: Vec::with_capacity(res),
                t_end: Vec::with_capacity(res),
            };
            for x in 0..res {
                let pixel = (y * res + x) as u32;
                let dir =
                    cam.ray_direction_in(y as f64 + 0.5, x as f64 + 0.5, basis.0, basis.1, basis.2);
                let mut rng = opts.jitter_seed.map(|sd| ray_rng(sd, pixel as usize));
                let before = samples.len();
                let mut eval = |p: Vec3, out: &mut [f64]| {
                    let h = params.head(p, &mut s);
                    write_color(params, &h, out);
                    heads.push(h);
                    params.sigma_from_raw(h[0])
                };
                let r = march(
                    cam.position,
                    dir,
                    bound,
                    steps,
                    rng.as_mut(),
                    &bg,
                    &mut eval,
                    &mut color,
                    &mut row.pixels[x * ch..(x + 1) * ch],
                    |position, sigma, delta, weight, t_after| {
                        samples.push(RaySample {
                            pixel,
                            position,
                            sigma,
                            delta,
                            weight,
                            t_after,
                        })
                    },
                );
                counts.push((samples.len() - before) as u32);
                row.w.push(r.w_blend);
                row.depth.push(r.depth);
                row.t_end.push(r.t_end);
            }
            (row, samples, heads, counts)
        })
        .collect();

    let mut samples = Vec::new();
    let mut heads = Vec::new();
    let mut ranges = Vec::with_capacity(res * res);
    let mut out_rows = Vec::with_capacity(res);
    for (row, s, h, counts) in rows {
        let mut start = samples.len() as u32;
        for c in counts {
            ranges.push((start, start + c));
            start += c;
        }
        samples.extend(s);
        heads.extend(h);
        out_rows.push(row);
    }
    let out = assemble(out_rows, ch, res);
    let trace = RenderTrace {
        samples,
        heads,
        ranges,
        w_blend: out.w_blend.clone(),
        background: bg,
        bg_overridden,
        channels: ch,
        height: res,
        width: res,
    };
    (out, trace)
}

/// Upstream gradients for [`render_backward`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RenderGrads<'a> {
    /// dL/d(pixel), shaped like the rendered image.
    pub pixels: Option<&'a LatentImage>,
    /// dL/d(w_blend) per pixel.
    pub w_blend: Option<&'a [f64]>,
    /// Extra dL/d(sigma) per recorded sample (e.g. from an occupancy loss).
    pub sigma: Option<&'a [f64]>,
}

/// Accumulates parameter gradients of a scalar loss into `grads` (same
/// layout as `params`).
pub fn render_backward(
    params: &FieldParams,
    trace: &RenderTrace,
    up: RenderGrads<'_>,
    grads: &mut FieldParams,
) {
    let n_pix = trace.height * trace.width;
    if let Some(p) = up.pixels {
        assert_eq!(p.shape(), (trace.channels, trace.height, trace.width));
    }
    if let Some(s) = up.sigma {
        assert_eq!(s.len(), trace.samples.len());
    }
    let per = n_pix.div_ceil(GRAD_CHUNKS).max(1);
    let parts: Vec<(FieldParams, Vec<f64>)> = (0..GRAD_CHUNKS)
        .into_par_iter()
        .map(|chunk| {
            let mut g = grads.zeros_like();
            // Background gradient in rendered channel space.
            let mut d_bg = vec![0.0; trace.channels];
            let lo = (chunk * per).min(n_pix);
            let hi = ((chunk + 1) * per).min(n_pix);
            let mut s = params.scratch();
            let mut d_enc = vec![0.0; params.config().grid().output_dim()];
            for pix in lo..hi {
                backward_pixel(
                    params, trace, &up, pix, &mut g, &mut d_bg, &mut s, &mut d_enc,
                );
            }
            (g, d_bg)
        })
        .collect();
    let mut d_bg = vec![0.0; trace.channels];
    for (g, b) in &parts {
        grads.accumulate(g);
        for (a, v) in d_bg.iter_mut().zip(b) {
            *a += v;
        }
    }
    if !trace.bg_overridden {
        match (&params.rgb_adapter, &mut grads.rgb_adapter) {
            (Some(a), Some(ga)) => {
                let d_lat = a.apply_transpose(&d_bg);
                for (gb, d) in grads.bg_latent.iter_mut().zip(d_lat) {
                    *gb += d;
                }
                for r in 0..3 {
                    ga.bias[r] += d_bg[r];
                    for c in 0..LATENT_CHANNELS {
                        ga.matrix[r * LATENT_CHANNELS + c] += d_bg[r] * params.bg_latent[c];
                    }
                }
            }
            _ => {
                for (gb, d) in grads.bg_latent.iter_mut().zip(&d_bg) {
                    *gb += d;
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backward_pixel(
    params: &FieldParams,
    trace: &RenderTrace,
    up: &RenderGrads<'_>,
    pix: usize,
    g: &mut FieldParams,
    d_bg: &mut [f64],
    s: &mut crate::field::params::EvalScratch,
    d_enc: &mut [f64],
) {
    let ch = trace.channels;
    let (y, x) = (pix / trace.width, pix % trace.width);
    let mut gp = [0.0; LATENT_CHANNELS];
    if let Some(img) = up.pixels {
        for (c, v) in gp.iter_mut().enumerate().take(ch) {
            *v = img.get(c, y, x);
        }
    }
    let gw = up.w_blend.map_or(0.0, |w| w[pix]);
    let w_sum = trace.w_blend[pix];
    let bg_dot: f64 = trace.background.iter().zip(&gp).map(|(b, v)| b * v).sum();
    for (d, v) in d_bg.iter_mut().zip(&gp) {
        *d += (1.0 - w_sum) * v;
    }
    let (start, end) = trace.ranges[pix];
    let (start, end) = (start as usize, end as usize);
    if start == end {
        return;
    }
    let t_end = trace.samples[end - 1].t_after;
    let mut color = [0.0; LATENT_CHANNELS];
    // Running sum over later samples of w_i (c_i . g).
    let mut suffix = 0.0;
    for k in (start..end).rev() {
        let smp = &trace.samples[k];
        let head = &trace.heads[k];
        write_color(params, head, &mut color[..ch]);
        let cg: f64 = color[..ch].iter().zip(&gp).map(|(c, v)| c * v).sum();
        let mut d_sigma =
            smp.delta * (smp.t_after * cg - suffix - t_end * bg_dot) + gw * smp.delta * t_end;
        if let Some(extra) = up.sigma {
            d_sigma += extra[k];
        }
        suffix += smp.weight * cg;

        let mut d_head = [0.0; HEAD_WIDTH];
        d_head[0] = d_sigma * params.dsigma_draw(head[0]);
        let wg: [f64; LATENT_CHANNELS] =
            std::array::from_fn(|c| if c < ch { smp.weight * gp[c] } else { 0.0 });
        match (&params.rgb_adapter, &mut g.rgb_adapter) {
            (Some(a), Some(ga)) => {
                let d_lat = a.apply_transpose(&wg[..3]);
                d_head[1..].copy_from_slice(&d_lat);
                for r in 0..3 {
                    ga.bias[r] += wg[r];
                    for c in 0..LATENT_CHANNELS {
                        ga.matrix[r * LATENT_CHANNELS + c] += wg[r] * head[1 + c];
                    }
                }
            }
            _ => d_head[1..].copy_from_slice(&wg),
        }
        if d_head.iter().all(|v| *v == 0.0) {
            continue;
        }
        // Recompute activations at this sample, then backpropagate.
        let h = params.head(smp.position, s);
        debug_assert_eq!(h, *head);
        params
            .mlp
            .backward(&mut s.mlp, &d_head, &mut g.mlp.layers, d_enc);
        let b = params.config().bound;
        params
            .grid()
            .backward(smp.position.clamp(-b, b), b, d_enc, &mut g.tables);
    }
}
