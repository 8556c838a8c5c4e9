//! Multiresolution hash-grid encoding.
//!
//! Each level is a grid of `N_l + 1` vertices per axis over the unit cube
//! `[-bound, bound]^3`. Coarse levels that fit in the table are indexed
//! densely; finer levels use a spatial XOR hash. Collisions are left
//! unresolved.

use serde::{Deserialize, Serialize};

use crate::math::Vec3;

const PRIME_Y: u32 = 2_654_435_761;
const PRIME_Z: u32 = 805_459_861;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub per_level_scale: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            features_per_level: 2,
            log2_table_size: 14,
            base_resolution: 16,
            per_level_scale: 1.5,
        }
    }
}

impl HashGridConfig {
    pub fn table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    /// Total number of learned table scalars.
    pub fn param_count(&self) -> usize {
        self.levels * self.table_size() * self.features_per_level
    }

    pub fn resolution(&self, level: usize) -> usize {
        (self.base_resolution as f64 * self.per_level_scale.powi(level as i32)).floor() as usize
    }
}

/// Corner rows and trilinear weights touched by one point at one level.
#[derive(Debug, Clone, Copy, Default)]
pub struct LevelFootprint {
    /// Table row within the level.
    pub rows: [u32; 8],
    pub weights: [f64; 8],
}

/// Precomputed per-level layout.
#[derive(Debug, Clone)]
pub struct HashGrid {
    config: HashGridConfig,
    resolutions: Vec<usize>,
    dense: Vec<bool>,
}

impl HashGrid {
    pub fn new(config: HashGridConfig) -> Self {
        let t = config.table_size();
        let resolutions: Vec<usize> = (0..config.levels).map(|l| config.resolution(l)).collect();
        let dense = resolutions
            .iter()
            .map(|&n| (n + 1).checked_pow(3).is_some_and(|v| v <= t))
            .collect();
        Self {
            config,
            resolutions,
            dense,
        }
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.resolutions
    }

    pub fn is_dense(&self, level: usize) -> bool {
        self.dense[level]
    }

    /// Table row for integer grid vertex `(i, j, k)` at `level`.
    #[inline]
    pub fn row(&self, level: usize, i: u32, j: u32, k: u32) -> u32 {
        let t = self.config.table_size() as u32;
        if self.dense[level] {
            let n = self.resolutions[level] as u32 + 1;
            i + n * (j + n * k)
        } else {
            (i ^ j.wrapping_mul(PRIME_Y) ^ k.wrapping_mul(PRIME_Z)) & (t - 1)
        }
    }

    /// Corner rows and weights at `level` for `p` in `[-bound, bound]^3`
    /// (clamped).
    #[inline]
    pub fn footprint(&self, level: usize, p: Vec3, bound: f64) -> LevelFootprint {
        let n = self.resolutions[level];
        let nf = n as f64;
        let mut base = [0u32; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let u = ((p[a] / bound + 1.0) * 0.5).clamp(0.0, 1.0) * nf;
            let i = (u.floor() as usize).min(n - 1);
            base[a] = i as u32;
            frac[a] = u - i as f64;
        }
        let mut fp = LevelFootprint::default();
        for c in 0..8u32 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dz == 1 { frac[2] } else { 1.0 - frac[2] };
            fp.rows[c as usize] = self.row(level, base[0] + dx, base[1] + dy, base[2] + dz);
            fp.weights[c as usize] = wx * wy * wz;
        }
        fp
    }

    /// Interpolated features for all levels, level-major, written to `out`
    /// (length `levels * features_per_level`). `tables` is laid out
    /// `[level][row][feature]`.
    pub fn encode(&self, tables: &[f64], p: Vec3, bound: f64, out: &mut [f64]) {
        let f = self.config.features_per_level;
        let t = self.config.table_size();
        for level in 0..self.config.levels {
            let fp = self.footprint(level, p, bound);
            let dst = &mut out[level * f..(level + 1) * f];
            dst.iter_mut().for_each(|v| *v = 0.0);
            let table = &tables[level * t * f..(level + 1) * t * f];
            for c in 0..8 {
                let w = fp.weights[c];
                let row = &table[fp.rows[c] as usize * f..(fp.rows[c] as usize + 1) * f];
                for (d, r) in dst.iter_mut().zip(row) {
                    *d += w * r;
                }
            }
        }
    }

    /// Scatters `d_out` (gradient w.r.t. the encoding of `p`) into
    /// `d_tables`.
    pub fn backward(&self, p: Vec3, bound: f64, d_out: &[f64], d_tables: &mut [f64]) {
        let f = self.config.features_per_level;
        let t = self.config.table_size();
        for level in 0..self.config.levels {
            let g = &d_out[level * f..(level + 1) * f];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let fp = self.footprint(level, p, bound);
            let table = &mut d_tables[level * t * f..(level + 1) * t * f];
            for c in 0..8 {
                let w = fp.weights[c];
                let row = &mut table[fp.rows[c] as usize * f..(fp.rows[c] as usize + 1) * f];
                for (r, gv) in row.iter_mut().zip(g) {
                    *r += w * gv;
                }
            }
        }
    }
}
