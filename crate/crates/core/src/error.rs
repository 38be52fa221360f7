use std::path::PathBuf;

/// Errors produced by the alignment pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("failed to encode image: {0}")]
    Encode(String),

    #[error("invalid sidecar {path}: {reason}")]
    Sidecar { path: PathBuf, reason: String },

    #[error("non-positive resolution {0}")]
    NonPositiveResolution(f64),

    #[error("malformed record at {path}:{line}: {reason}")]
    Record {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("no jointly valid pixels")]
    EmptyMask,

    #[error("frame {frame_id} at ({x_m}, {y_m}) lies outside the base map")]
    FrameOutOfBounds { frame_id: String, x_m: f64, y_m: f64 },

    #[error("shift ({dx}, {dy}) px outside the window of +/-{s_max} px")]
    ShiftOutOfWindow { dx: i32, dy: i32, s_max: i32 },

    #[error("crop for frame {frame_id} is entirely invalid in the {layer} layer")]
    CropInvalid { frame_id: String, layer: String },

    #[error("layer resolutions differ: {0} vs {1} m/px")]
    ResolutionMismatch(f64, f64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("every item failed ({0} failures)")]
    AllFailed(usize),

    #[error("estimate for frame {0} is not accepted")]
    NotAccepted(String),

    #[error("point ({x_m}, {y_m}) lies outside the grid extent")]
    OutsideGrid { x_m: f64, y_m: f64 },

    #[error("grid is not dense")]
    NotDense,

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
