//! Little-endian tensor container shared by checkpoints and Dirac target
//! files.
//!
//! Layout: `"LNRF-CKPT"`, `u16` version, `u32` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rank, `u64` dims, `f32` data. A
//! metadata table follows: `u32` count, then `u32` key length, key, `u64`
//! value.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::CheckpointError;
use crate::field::{Camera, FieldConfig, FieldParams};
use crate::latent::LatentImage;
use crate::math::Vec3;
use crate::paint::LatentTexture;
use crate::refine::RgbAdapter;
use crate::trainer::adam::AdamState;

pub const CONTAINER_MAGIC: &[u8; 9] = b"LNRF-CKPT";
pub const CONTAINER_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape and data disagree"
        );
        Self { shape, data }
    }
}

/// Named tensors plus integer metadata, kept in insertion-independent
/// (sorted) order so identical contents serialize to identical bytes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: BTreeMap<String, u64>,
}

impl TensorFile {
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.insert(name.into(), Tensor::new(shape, data));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    /// Tensor `name`, checked against `shape`.
    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&Tensor, CheckpointError> {
        let t = self.get(name)?;
        if t.shape != shape {
            return Err(CheckpointError::TensorShape {
                name: name.to_string(),
                expected: shape.to_vec(),
                got: t.shape.clone(),
            });
        }
        Ok(t)
    }

    pub fn meta(&self, key: &str) -> Result<u64, CheckpointError> {
        self.meta
            .get(key)
            .copied()
            .ok_or_else(|| CheckpointError::MissingMeta(key.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(CONTAINER_MAGIC.len())? != CONTAINER_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != CONTAINER_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let mut file = TensorFile::default();
        let count = r.u32()?;
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(CheckpointError::Malformed(format!(
                    "tensor `{name}` has rank {rank}"
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(
                    usize::try_from(r.u64()?)
                        .map_err(|_| CheckpointError::Malformed("dimension overflow".into()))?,
                );
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= (bytes.len() - r.pos) / 4)
                .ok_or_else(|| {
                    CheckpointError::Malformed(format!("tensor `{name}` runs past end of file"))
                })?;
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            if file
                .tensors
                .insert(name.clone(), Tensor { shape, data })
                .is_some()
            {
                return Err(CheckpointError::Malformed(format!(
                    "duplicate tensor `{name}`"
                )));
            }
        }
        let count = r.u32()?;
        for _ in 0..count {
            let k = r.string()?;
            let v = r.u64()?;
            file.meta.insert(k, v);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(file)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |e| CheckpointError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = Path::new(&tmp);
        {
            let mut f = fs::File::create(tmp).map_err(io)?;
            f.write_all(&self.to_bytes()).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        fs::rename(tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                CheckpointError::Malformed(format!("unexpected end of file at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("name is not UTF-8".into()))
    }
}

/// What a checkpoint holds besides the optimizer.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Trainable {
    Field(FieldParams),
    Texture(LatentTexture),
}

/// Full training state. The per-iteration random streams are derived from
/// `(seed, iteration)`, so no generator state needs saving.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub state: Trainable,
    pub adam: AdamState,
    pub iteration: u64,
    pub seed: u64,
    pub config_hash: u64,
}

pub const TEXTURE_TENSOR: &str = "texture";

impl Checkpoint {
    pub fn to_file(&self) -> TensorFile {
        let mut f = TensorFile::default();
        match &self.state {
            Trainable::Field(p) => {
                for t in p.tensors() {
                    f.insert(t.name, t.shape, t.data.to_vec());
                }
                if let Some(a) = &p.rgb_adapter {
                    f.meta
                        .insert("rgb_learnable".into(), u64::from(a.learnable));
                }
            }
            Trainable::Texture(t) => {
                let (c, h, w) = t.image.shape();
                f.insert(TEXTURE_TENSOR, vec![c, h, w], t.image.data().to_vec());
            }
        }
        for (name, (m, v)) in &self.adam.moments {
            let shape = f
                .tensors
                .get(name)
                .map(|t| t.shape.clone())
                .unwrap_or_else(|| vec![m.len()]);
            f.insert(format!("adam.m.{name}"), shape.clone(), m.clone());
            f.insert(format!("adam.v.{name}"), shape, v.clone());
        }
        f.meta.insert("iteration".into(), self.iteration);
        f.meta.insert("seed".into(), self.seed);
        f.meta.insert("config_hash".into(), self.config_hash);
        f.meta.insert("adam_step".into(), self.adam.step);
        f
    }

    /// Rebuilds a field checkpoint. `config` supplies the architecture;
    /// every tensor must be present with the matching shape.
    pub fn field_from_file(f: &TensorFile, config: &FieldConfig) -> Result<Self, CheckpointError> {
        let mut params = FieldParams::new(config.clone(), 0)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if f.tensors.contains_key("rgb.matrix") {
            params.rgb_adapter = Some(RgbAdapter {
                matrix: [0.0; 12],
                bias: [0.0; 3],
                learnable: f.meta("rgb_learnable")? != 0,
            });
        }
        for t in params.tensors_mut() {
            let src = f.get_shaped(&t.name, &t.shape)?;
            t.data.copy_from_slice(&src.data);
        }
        let adam = load_adam(f, params.tensors().iter().map(|t| t.name.clone()))?;
        Self::finish(f, Trainable::Field(params), adam)
    }

    pub fn texture_from_file(f: &TensorFile) -> Result<Self, CheckpointError> {
        let t = f.get(TEXTURE_TENSOR)?;
        if t.shape.len() != 3 {
            return Err(CheckpointError::TensorShape {
                name: TEXTURE_TENSOR.into(),
                expected: vec![4, 0, 0],
                got: t.shape.clone(),
            });
        }
        let img = LatentImage::from_vec(t.shape[0], t.shape[1], t.shape[2], t.data.clone());
        let adam = load_adam(f, [TEXTURE_TENSOR.to_string()])?;
        Self::finish(f, Trainable::Texture(LatentTexture::from_image(img)), adam)
    }

    fn finish(
        f: &TensorFile,
        state: Trainable,
        mut adam: AdamState,
    ) -> Result<Self, CheckpointError> {
        adam.step = f.meta("adam_step")?;
        Ok(Self {
            state,
            adam,
            iteration: f.meta("iteration")?,
            seed: f.meta("seed")?,
            config_hash: f.meta("config_hash")?,
        })
    }

    pub fn field(&self) -> Option<&FieldParams> {
        match &self.state {
            Trainable::Field(p) => Some(p),
            Trainable::Texture(_) => None,
        }
    }

    pub fn texture(&self) -> Option<&LatentTexture> {
        match &self.state {
            Trainable::Texture(t) => Some(t),
            Trainable::Field(_) => None,
        }
    }
}

fn load_adam(
    f: &TensorFile,
    names: impl IntoIterator<Item = String>,
) -> Result<AdamState, CheckpointError> {
    let mut adam = AdamState::new();
    for name in names {
        let (mk, vk) = (format!("adam.m.{name}"), format!("adam.v.{name}"));
        match (f.tensors.get(&mk), f.tensors.get(&vk)) {
            (Some(m), Some(v)) => {
                adam.moments.insert(name, (m.data.clone(), v.data.clone()));
            }
            (None, None) => {}
            _ => {
                return Err(CheckpointError::Malformed(format!(
                    "incomplete optimizer moments for `{name}`"
                )))
            }
        }
    }
    Ok(adam)
}

/// Fixed views with their target images, for the Dirac critic.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub targets: Vec<LatentImage>,
    /// Empty means "one target, random cameras".
    pub cameras: Vec<Camera>,
}

pub const CAMERA_FIELDS: usize = 13;

fn camera_row(c: &Camera) -> [f64; CAMERA_FIELDS] {
    let mut r = [0.0; CAMERA_FIELDS];
    r[0..3].copy_from_slice(&c.position.to_array());
    r[3..6].copy_from_slice(&c.look_at.to_array());
    r[6..9].copy_from_slice(&c.up.to_array());
    r[9] = c.fov_y;
    r[10] = c.resolution as f64;
    r[11] = c.azimuth;
    r[12] = c.elevation;
    r
}

fn camera_from_row(r: &[f64]) -> Camera {
    Camera {
        position: Vec3::new(r[0], r[1], r[2]),
        look_at: Vec3::new(r[3], r[4], r[5]),
        up: Vec3::new(r[6], r[7], r[8]),
        fov_y: r[9],
        resolution: r[10] as usize,
        azimuth: r[11],
        elevation: r[12],
    }
}

/// Rounds every camera field to single precision, so a camera survives a
/// round trip through a target file unchanged.
pub fn quantize_camera(c: &Camera) -> Camera {
    let mut r = camera_row(c);
    crate::math::quantize_slice(&mut r);
    camera_from_row(&r)
}

impl TargetSet {
    pub fn to_file(&self) -> TensorFile {
        let mut f = TensorFile::default();
        let (c, h, w) = self.targets.first().map(|t| t.shape()).unwrap_or((0, 0, 0));
        let data = self
            .targets
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect();
        f.insert("targets", vec![self.targets.len(), c, h, w], data);
        if !self.cameras.is_empty() {
            let data = self.cameras.iter().flat_map(camera_row).collect();
            f.insert("cameras", vec![self.cameras.len(), CAMERA_FIELDS], data);
        }
        f
    }

    pub fn from_file(f: &TensorFile) -> Result<Self, CheckpointError> {
        let t = f.get("targets")?;
        if t.shape.len() != 4 || t.shape[0] == 0 {
            return Err(CheckpointError::TensorShape {
                name: "targets".into(),
                expected: vec![1, 4, 64, 64],
                got: t.shape.clone(),
            });
        }
        let (n, c, h, w) = (t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
        let targets = t
            .data
            .chunks_exact(c * h * w)
            .map(|d| LatentImage::from_vec(c, h, w, d.to_vec()))
            .collect();
        let cameras = match f.tensors.get("cameras") {
            Some(_) => f
                .get_shaped("cameras", &[n, CAMERA_FIELDS])?
                .data
                .chunks_exact(CAMERA_FIELDS)
                .map(camera_from_row)
                .collect(),
            None if n == 1 => Vec::new(),
            None => return Err(CheckpointError::MissingTensor("cameras".into())),
        };
        Ok(Self { targets, cameras })
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_file(&TensorFile::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        self.to_file().write(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let mut f = TensorFile::default();
        f.insert(
            "b",
            vec![2, 3],
            vec![0.5, -1.0, 3.25, 0.0, 1e-3f32 as f64, 7.0],
        );
        f.insert("a", vec![], vec![4.0]);
        f.meta.insert("iteration".into(), 17);
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..9], b"LNRF-CKPT");
        assert_eq!(TensorFile::from_bytes(&bytes).unwrap(), f);
    }

    #[test]
    fn rejects_damage() {
        let mut f = TensorFile::default();
        f.insert("x", vec![4], vec![1.0; 4]);
        let bytes = f.to_bytes();
        assert!(matches!(
            TensorFile::from_bytes(b"nope"),
            Err(CheckpointError::Malformed(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            TensorFile::from_bytes(&bad),
            Err(CheckpointError::BadMagic)
        ));
        let mut bad = bytes.clone();
        bad[9] = 9;
        assert!(matches!(
            TensorFile::from_bytes(&bad),
            Err(CheckpointError::Version(9))
        ));
        for cut in [10, 20, bytes.len() - 1] {
            assert!(TensorFile::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn field_checkpoint_round_trip() {
        let cfg = FieldConfig {
            log2_table_size: 8,
            levels: 2,
            hidden_width: 8,
            ..FieldConfig::default()
        };
        let mut p = FieldParams::new(cfg.clone(), 3).unwrap();
        crate::refine::convert_to_rgb(&mut p, false).unwrap();
        let ck = Checkpoint {
            state: Trainable::Field(p.clone()),
            adam: AdamState::new(),
            iteration: 5,
            seed: 3,
            config_hash: 99,
        };
        let back = Checkpoint::field_from_file(
            &TensorFile::from_bytes(&ck.to_file().to_bytes()).unwrap(),
            &cfg,
        )
        .unwrap();
        let q = back.field().unwrap();
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.data, b.data);
        }
        assert_eq!(q.rgb_adapter, p.rgb_adapter);
        assert_eq!(back.iteration, 5);
    }

    #[test]
    fn targets_round_trip() {
        let cam = quantize_camera(&Camera::orbit(0.3, 0.2, 1.3, 0.8, 4));
        let set = TargetSet {
            targets: vec![
                LatentImage::filled(4, 4, 4, 0.25),
                LatentImage::filled(4, 4, 4, -0.5),
            ],
            cameras: vec![cam, cam],
        };
        assert_eq!(TargetSet::from_file(&set.to_file()).unwrap(), set);
    }
}
