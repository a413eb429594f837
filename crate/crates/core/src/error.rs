use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the avatar pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("degenerate triangle {index}: shortest edge {edge:.3e}")]
    DegenerateTriangle { index: usize, edge: f64 },
    #[error("degenerate uv chart for triangle {0}")]
    DegenerateChart(usize),
    #[error("overlapping uv charts at texel ({x}, {y}): triangles {first} and {second}")]
    OverlappingCharts {
        x: usize,
        y: usize,
        first: usize,
        second: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate rotation for gaussian {index}: |r + dr| = {norm:.3e}")]
    DegenerateRotation { index: usize, norm: f64 },
    #[error("resolution mismatch: expected {expected_w}x{expected_h}x{expected_c}, got {w}x{h}x{c}")]
    Resolution {
        expected_w: usize,
        expected_h: usize,
        expected_c: usize,
        w: usize,
        h: usize,
        c: usize,
    },
    #[error("backward called before any forward pass")]
    NoForwardRecord,
    #[error("non-invertible 2d covariance for splat {0}")]
    SingularCovariance(usize),
    #[error("NaN or infinite gradient in parameter group `{0}`")]
    NanGradient(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown preset `{0}` (expected static, linear or nonlinear)")]
    UnknownPreset(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image encoding failed: {0}")]
    Image(String),
    #[error("training diverged in stage {stage} at iteration {iteration}: loss {loss}")]
    Diverged { stage: u8, iteration: u64, loss: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
