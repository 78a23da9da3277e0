use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hyperfine scheme: {0}")]
    InvalidScheme(String),

    #[error("invalid spectral grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probe range [{lo}, {hi}] MHz lies outside the simulated window [{window_lo}, {window_hi}] MHz")]
    OutsideWindow {
        lo: f64,
        hi: f64,
        window_lo: f64,
        window_hi: f64,
    },

    #[error("frequency grid is not uniform near sample {index}")]
    NonUniformGrid { index: usize },

    #[error("sequence parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("comb does not fit inside the pit: {0}")]
    CombOutsidePit(String),

    #[error(
        "time window of {window_us} µs aliases the response ({leak:.2e} of the energy wraps); \
         use a window of at least {required_us} µs"
    )]
    Aliasing {
        window_us: f64,
        required_us: f64,
        leak: f64,
    },

    #[error("invalid measurement windows: {0}")]
    Windows(String),

    #[error("no peaks found above the detection threshold")]
    NoPeaks,

    #[error("found {0} peak(s), need at least 2 to characterise a comb")]
    TooFewPeaks(usize),

    #[error("Gaussian fit of the peak near {center} MHz did not converge")]
    FitDidNotConverge { center: f64 },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(#[from] toml::de::Error),
}
