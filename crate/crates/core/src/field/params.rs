use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::FieldError;
use crate::field::encoding::{HashGrid, HashGridConfig};
use crate::field::mlp::{Linear, Mlp, MlpScratch};
use crate::latent::LATENT_CHANNELS;
use crate::math::{quantize_slice, sigmoid, softplus, Vec3};
use crate::refine::RgbAdapter;

/// Width of the network head: one density logit and the latent channels.
pub const HEAD_WIDTH: usize = 1 + LATENT_CHANNELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub per_level_scale: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Added to the density logit before the softplus.
    pub density_bias: f64,
    /// Half-extent of the scene cube; rays are clipped to the ball of this
    /// radius.
    pub bound: f64,
    /// Samples per ray.
    pub steps: usize,
    /// Reference step for point occupancy. `None` means `2 * bound / steps`.
    pub delta_ref: Option<f64>,
    /// Half-width of the uniform table initialisation.
    pub table_init: f64,
    /// Scale of the output layer initialisation, relative to the hidden ones.
    pub output_init_scale: f64,
    pub zero_output_layer: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        let g = HashGridConfig::default();
        Self {
            levels: g.levels,
            features_per_level: g.features_per_level,
            log2_table_size: g.log2_table_size,
            base_resolution: g.base_resolution,
            per_level_scale: g.per_level_scale,
            hidden_width: 64,
            hidden_layers: 2,
            density_bias: -1.0,
            bound: 1.0,
            steps: 64,
            delta_ref: None,
            table_init: 1e-4,
            output_init_scale: 0.1,
            zero_output_layer: false,
        }
    }
}

impl FieldConfig {
    pub fn grid(&self) -> HashGridConfig {
        HashGridConfig {
            levels: self.levels,
            features_per_level: self.features_per_level,
            log2_table_size: self.log2_table_size,
            base_resolution: self.base_resolution,
            per_level_scale: self.per_level_scale,
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let g = &self.grid();
        if g.levels == 0 || g.features_per_level == 0 || g.base_resolution < 1 {
            return Err(FieldError::Config(
                "hash grid needs at least one level, feature and cell".into(),
            ));
        }
        if !(1..=24).contains(&g.log2_table_size) {
            return Err(FieldError::Config(
                "log2_table_size must lie in 1..=24".into(),
            ));
        }
        if !(g.per_level_scale >= 1.0 && g.per_level_scale.is_finite()) {
            return Err(FieldError::Config("per_level_scale must be >= 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(FieldError::Config("hidden_width must be positive".into()));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(FieldError::Config("bound must be positive".into()));
        }
        if self.steps < 2 {
            return Err(FieldError::Config("steps must be at least 2".into()));
        }
        if let Some(d) = self.delta_ref {
            if !(d > 0.0 && d.is_finite()) {
                return Err(FieldError::Config("delta_ref must be positive".into()));
            }
        }
        if !self.density_bias.is_finite() || !self.table_init.is_finite() {
            return Err(FieldError::Config(
                "non-finite initialisation constant".into(),
            ));
        }
        Ok(())
    }

    pub fn delta_ref(&self) -> f64 {
        self.delta_ref
            .unwrap_or(2.0 * self.bound / self.steps as f64)
    }
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Mutable view of one named parameter tensor.
#[derive(Debug)]
pub struct TensorViewMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

/// Scratch space for evaluating the field at one point.
#[derive(Debug, Clone)]
pub struct EvalScratch {
    pub(crate) enc: Vec<f64>,
    pub(crate) mlp: MlpScratch,
}

/// Learned state of the radiance field: hash tables, MLP, background, and
/// the RGB adapter once converted.
#[derive(Debug, Clone)]
pub struct FieldParams {
    config: FieldConfig,
    grid: HashGrid,
    /// `[level][row][feature]`.
    pub tables: Vec<f64>,
    pub mlp: Mlp,
    pub bg_latent: [f64; LATENT_CHANNELS],
    pub rgb_adapter: Option<RgbAdapter>,
}

impl FieldParams {
    /// Fresh parameters. Tables are uniform in `±table_init`, hidden layers
    /// use a uniform fan-in init; everything is rounded to single precision.
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self, FieldError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = HashGrid::new(config.grid());
        let tables = (0..config.grid().param_count())
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * config.table_init)
            .collect();
        let mut layers = Vec::with_capacity(config.hidden_layers + 1);
        let mut width = config.grid().output_dim();
        for _ in 0..config.hidden_layers {
            layers.push(Linear::random(width, config.hidden_width, 1.0, &mut rng));
            width = config.hidden_width;
        }
        layers.push(if config.zero_output_layer {
            Linear::zeros(width, HEAD_WIDTH)
        } else {
            Linear::random(width, HEAD_WIDTH, config.output_init_scale, &mut rng)
        });
        let mut params = Self {
            config,
            grid,
            tables,
            mlp: Mlp::new(layers),
            bg_latent: [0.0; LATENT_CHANNELS],
            rgb_adapter: None,
        };
        params.quantize();
        Ok(params)
    }

    /// Same layout, all values zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn grid(&self) -> &HashGrid {
        &self.grid
    }

    pub fn is_rgb(&self) -> bool {
        self.rgb_adapter.is_some()
    }

    /// Rendered channel count: 4 in latent mode, 3 after conversion.
    pub fn channels(&self) -> usize {
        if self.is_rgb() {
            3
        } else {
            LATENT_CHANNELS
        }
    }

    pub fn scratch(&self) -> EvalScratch {
        EvalScratch {
            enc: vec![0.0; self.config.grid().output_dim()],
            mlp: self.mlp.scratch(),
        }
    }

    pub fn hash_encode(&self, p: Vec3, out: &mut [f64]) {
        let b = self.config.bound;
        self.grid.encode(&self.tables, p.clamp(-b, b), b, out);
    }

    /// Raw head output `(density logit, c1..c4)` at `p`. Leaves the
    /// activations needed by the backward pass in `s`.
    pub fn head(&self, p: Vec3, s: &mut EvalScratch) -> [f64; HEAD_WIDTH] {
        self.hash_encode(p, &mut s.enc);
        let y = self.mlp.forward(&s.enc, &mut s.mlp);
        let mut out = [0.0; HEAD_WIDTH];
        out.copy_from_slice(&y[..HEAD_WIDTH]);
        out
    }

    #[inline]
    pub fn sigma_from_raw(&self, raw: f64) -> f64 {
        softplus(raw + self.config.density_bias)
    }

    #[inline]
    pub fn dsigma_draw(&self, raw: f64) -> f64 {
        sigmoid(raw + self.config.density_bias)
    }

    /// Density and latent channels at `p`.
    pub fn field_eval(&self, p: Vec3, s: &mut EvalScratch) -> (f64, [f64; LATENT_CHANNELS]) {
        let h = self.head(p, s);
        let mut c = [0.0; LATENT_CHANNELS];
        c.copy_from_slice(&h[1..]);
        (self.sigma_from_raw(h[0]), c)
    }

    pub fn density(&self, p: Vec3) -> f64 {
        let mut s = self.scratch();
        self.field_eval(p, &mut s).0
    }

    pub fn delta_ref(&self) -> f64 {
        self.config.delta_ref()
    }

    /// `1 - exp(-delta_ref * sigma(p))`.
    pub fn point_occupancy(&self, p: Vec3) -> f64 {
        occupancy_from_sigma(self.density(p), self.delta_ref())
    }

    /// Background in the rendered channel space.
    pub fn background(&self) -> Vec<f64> {
        match &self.rgb_adapter {
            Some(a) => a.apply(&self.bg_latent).to_vec(),
            None => self.bg_latent.to_vec(),
        }
    }

    /// All tensors in a fixed order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let g = self.config.grid();
        let mut out = vec![TensorView {
            name: "hash.tables".into(),
            shape: vec![g.levels, g.table_size(), g.features_per_level],
            data: &self.tables,
        }];
        for (i, l) in self.mlp.layers.iter().enumerate() {
            out.push(TensorView {
                name: format!("mlp.{i}.weight"),
                shape: vec![l.outputs, l.inputs],
                data: &l.weight,
            });
            out.push(TensorView {
                name: format!("mlp.{i}.bias"),
                shape: vec![l.outputs],
                data: &l.bias,
            });
        }
        out.push(TensorView {
            name: "bg_latent".into(),
            shape: vec![LATENT_CHANNELS],
            data: &self.bg_latent,
        });
        if let Some(a) = &self.rgb_adapter {
            out.push(TensorView {
                name: "rgb.matrix".into(),
                shape: vec![3, LATENT_CHANNELS],
                data: &a.matrix,
            });
            out.push(TensorView {
                name: "rgb.bias".into(),
                shape: vec![3],
                data: &a.bias,
            });
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorViewMut<'_>> {
        let g = self.config.grid();
        let mut out = vec![TensorViewMut {
            name: "hash.tables".into(),
            shape: vec![g.levels, g.table_size(), g.features_per_level],
            data: &mut self.tables,
        }];
        for (i, l) in self.mlp.layers.iter_mut().enumerate() {
            let (inputs, outputs) = (l.inputs, l.outputs);
            out.push(TensorViewMut {
                name: format!("mlp.{i}.weight"),
                shape: vec![outputs, inputs],
                data: &mut l.weight,
            });
            out.push(TensorViewMut {
                name: format!("mlp.{i}.bias"),
                shape: vec![outputs],
                data: &mut l.bias,
            });
        }
        out.push(TensorViewMut {
            name: "bg_latent".into(),
            shape: vec![LATENT_CHANNELS],
            data: &mut self.bg_latent,
        });
        if let Some(a) = &mut self.rgb_adapter {
            out.push(TensorViewMut {
                name: "rgb.matrix".into(),
                shape: vec![3, LATENT_CHANNELS],
                data: &mut a.matrix,
            });
            out.push(TensorViewMut {
                name: "rgb.bias".into(),
                shape: vec![3],
                data: &mut a.bias,
            });
        }
        out
    }

    /// False for the adapter tensors when the adapter is frozen.
    pub fn is_trainable(&self, name: &str) -> bool {
        match &self.rgb_adapter {
            Some(a) if name.starts_with("rgb.") => a.learnable,
            _ => true,
        }
    }

    /// Rounds every tensor to single precision.
    pub fn quantize(&mut self) {
        for t in self.tensors_mut() {
            quantize_slice(t.data);
        }
    }

    pub fn check_finite(&self) -> Result<(), FieldError> {
        for t in self.tensors() {
            if !t.data.iter().all(|v| v.is_finite()) {
                return Err(FieldError::NonFinite(t.name));
            }
        }
        Ok(())
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &FieldParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    /// Multiplies every tensor by `k`.
    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= k);
        }
    }
}

#[inline]
pub fn occupancy_from_sigma(sigma: f64, delta_ref: f64) -> f64 {
    -(-delta_ref * sigma).exp_m1()
}
