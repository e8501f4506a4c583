use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("zero energy")]
    ZeroEnergy,
    #[error("insufficient decay: energy decay curve only reaches {reached_db:.1} dB, need {needed_db:.1} dB")]
    InsufficientDecay { reached_db: f64, needed_db: f64 },
    #[error("over-absorptive: mean absorption {0:.4} >= 0.999")]
    OverAbsorptive(f64),
    #[error("invalid room: {0}")]
    InvalidRoom(String),
    #[error("unknown material {0:?}")]
    UnknownMaterial(String),
    #[error("cannot place source and microphone: {0}")]
    Placement(String),
    #[error("sample rate mismatch: {left} Hz vs {right} Hz")]
    SampleRateMismatch { left: u32, right: u32 },
    #[error("degenerate feature: zero variance")]
    DegenerateFeature,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("zero-vector normalization")]
    ZeroNorm,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("backward called before forward in {0}")]
    BackwardBeforeForward(&'static str),
    #[error("positive set empty for class {0}")]
    EmptyPositiveSet(i64),
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("insufficient corpus: {0}")]
    InsufficientCorpus(String),
    #[error("room sets overlap: {0} room id(s) shared, e.g. {1:?}")]
    RoomOverlap(usize, String),
    #[error("batch sampling: {0}")]
    Sampling(String),
    #[error("task/label mismatch: {0}")]
    TaskMismatch(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("WAV error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
