use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the mesh loader and geometry routines.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: line {line}: {kind} index {index} out of range (have {count})")]
    IndexOutOfRange {
        path: PathBuf,
        line: usize,
        kind: &'static str,
        index: i64,
        count: usize,
    },
    #[error("triangle {triangle} references vertex {index}, mesh has {count} vertices")]
    BadTriangle {
        triangle: usize,
        index: u32,
        count: usize,
    },
    #[error("expected {expected} per-corner uvs, got {got}")]
    UvCount { expected: usize, got: usize },
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("non-finite value in parameter tensor `{0}`")]
    NonFinite(String),
    #[error("field is already in RGB mode")]
    AlreadyRgb,
    #[error("field is in latent mode; operation requires RGB mode")]
    NotRgb,
    #[error("invalid field configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("timestep {t} out of range for schedule of length {len}")]
    TimestepOutOfRange { t: usize, len: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("Dirac denoiser undefined at t={t}: 1 - alpha_bar = {one_minus:e}")]
    SingularTimestep { t: usize, one_minus: f64 },
    #[error("denoiser request {request_id} failed: {message}")]
    Remote { request_id: u32, message: String },
    #[error("bridge protocol error: {0}")]
    Protocol(String),
    #[error("bridge i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("denoiser output is not finite")]
    NonFiniteOutput,
}

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("sigma_s must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("length mismatch: {0} alphas vs {1} queries")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Error)]
pub enum PaintError {
    #[error("mesh has no uvs and the built-in atlas is disabled")]
    MissingUvs,
    #[error("no decoder available and the linear preview fallback is disabled")]
    NoDecoder,
    #[error("texture is {0}x{1}, decoder expects multiples of {2}x{3}")]
    DecoderShape(usize, usize, usize, usize),
}

/// Errors from the tensor container used for checkpoints and target files.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic; not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("truncated or malformed checkpoint: {0}")]
    Malformed(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("missing metadata key `{0}`")]
    MissingMeta(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),
    #[error("optimizer state does not match parameters ({0})")]
    StateMismatch(String),
}

/// Crate-wide error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Paint(#[from] PaintError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("image output failed for {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user-supplied configuration rather than the
    /// run itself. The CLI maps these to exit code 1.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Train(TrainError::Config(_)))
    }
}
