use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("enumeration needs {required} items but the cap is {cap}")]
    CapExceeded { required: u128, cap: u128 },
    #[error("sequence has {len} tokens, more than l_max = {l_max}")]
    TooLong { len: usize, l_max: usize },
    #[error("token id {token} is outside the vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("prompt id {prompt} is out of range ({num_prompts} prompts)")]
    PromptOutOfRange { prompt: usize, num_prompts: usize },
    #[error("invalid candidate group: {0}")]
    InvalidGroup(String),
    #[error("empty candidate list")]
    EmptyCandidates,
    #[error("advantages were computed for {computed} but the estimator was asked for {requested}")]
    VariantMismatch {
        computed: &'static str,
        requested: &'static str,
    },
    #[error("training horizon exhausted at step {step}")]
    HorizonExhausted { step: usize },
    #[error("non-finite parameter detected after step {step}")]
    NumericalAbort { step: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("policies are incompatible: {0}")]
    Incompatible(String),
    #[error("trace has {len} checkpoints, at least {min} are required")]
    TraceTooShort { len: usize, min: usize },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("missing file {0}")]
    Missing(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
