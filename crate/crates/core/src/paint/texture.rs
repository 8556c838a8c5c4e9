use rand::Rng;

use crate::guidance::sample_noise;
use crate::latent::{LatentImage, LATENT_CHANNELS};
use crate::math::quantize_slice;
use crate::paint::raster::GBuffer;

/// Default latent texture side.
pub const TEXTURE_SIZE: usize = 128;

/// Learned 4-channel texture. Row `r` holds texels centered at
/// `v = (r + 0.5) / H`, so `v` grows with the row index.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTexture {
    pub image: LatentImage,
}

/// Texels and weights touched by one bilinear lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    /// Texel offsets `y * W + x` within a channel plane.
    pub texels: [usize; 4],
    pub weights: [f64; 4],
}

impl LatentTexture {
    /// Standard normal texels, rounded to single precision.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> Self {
        let mut image = sample_noise(rng, (LATENT_CHANNELS, height, width));
        quantize_slice(image.data_mut());
        Self { image }
    }

    pub fn from_image(image: LatentImage) -> Self {
        Self { image }
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    /// Bilinear footprint of `uv` with half-texel centers and clamp-to-edge
    /// addressing.
    pub fn footprint(&self, uv: [f64; 2]) -> Footprint {
        let (h, w) = (self.height(), self.width());
        let axis = |t: f64, n: usize| -> (usize, usize, f64) {
            let x = (t * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            if n == 1 {
                return (0, 0, 0.0);
            }
            let i = (x.floor() as usize).min(n - 2);
            (i, i + 1, x - i as f64)
        };
        let (x0, x1, fx) = axis(uv[0], w);
        let (y0, y1, fy) = axis(uv[1], h);
        Footprint {
            texels: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
            weights: [
                (1.0 - fx) * (1.0 - fy),
                fx * (1.0 - fy),
                (1.0 - fx) * fy,
                fx * fy,
            ],
        }
    }

    pub fn sample(&self, uv: [f64; 2]) -> [f64; LATENT_CHANNELS] {
        let fp = self.footprint(uv);
        let plane = self.image.plane();
        let d = self.image.data();
        std::array::from_fn(|c| {
            (0..4)
                .map(|k| fp.weights[k] * d[c * plane + fp.texels[k]])
                .sum()
        })
    }
}

/// Sample value at `uv` and its footprint (the gradient of the value w.r.t.
/// each touched texel is its weight).
pub fn sample_texture(tex: &LatentTexture, uv: [f64; 2]) -> ([f64; LATENT_CHANNELS], Footprint) {
    (tex.sample(uv), tex.footprint(uv))
}

/// Feature map of the rasterized texture; uncovered pixels take `background`.
pub fn render_texture(
    tex: &LatentTexture,
    g: &GBuffer,
    background: &[f64; LATENT_CHANNELS],
) -> LatentImage {
    let res = g.resolution;
    let mut out = LatentImage::zeros(LATENT_CHANNELS, res, res);
    for pix in 0..res * res {
        let (y, x) = (pix / res, pix % res);
        let v = if g.covered(pix) {
            tex.sample(g.uv[pix])
        } else {
            *background
        };
        for (c, val) in v.iter().enumerate() {
            out.set(c, y, x, *val);
        }
    }
    out
}

/// Scatters per-pixel gradients into texel gradients, visiting pixels in
/// row-major order. Returns the gradient image and the mask of texels with
/// a nonzero footprint weight.
pub fn texture_backward(
    tex: &LatentTexture,
    g: &GBuffer,
    upstream: &LatentImage,
) -> (LatentImage, Vec<bool>) {
    let res = g.resolution;
    let plane = tex.image.plane();
    let mut grad = LatentImage::zeros(LATENT_CHANNELS, tex.height(), tex.width());
    let mut touched = vec![false; plane];
    let gd = grad.data_mut();
    for pix in 0..res * res {
        if !g.covered(pix) {
            continue;
        }
        let (y, x) = (pix / res, pix % res);
        let fp = tex.footprint(g.uv[pix]);
        for k in 0..4 {
            let w = fp.weights[k];
            if w == 0.0 {
                continue;
            }
            touched[fp.texels[k]] = true;
            for c in 0..LATENT_CHANNELS {
                gd[c * plane + fp.texels[k]] += w * upstream.get(c, y, x);
            }
        }
    }
    (grad, touched)
}
