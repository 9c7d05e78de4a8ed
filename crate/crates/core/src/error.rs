use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid alpha descriptor: {0}")]
    InvalidAlpha(String),
    #[error("no rational q <= {qmax} with |alpha q + p| <= {bound:e}")]
    NoApproximant { qmax: i64, bound: f64 },
    #[error("generators {0} and {1} are colinear with an irrational ratio")]
    ColinearityViolation(String, String),
    #[error("generator {0} has triple norm {1} > Q = {2}")]
    NormViolation(String, i64, i64),
    #[error("index {0} is not in S_Q")]
    NotInSQ(String),
    #[error("index {0} is not a generating direction")]
    NotGenerator(String),
    #[error("duplicate index {0}")]
    DuplicateIndex(String),
    #[error("matrix dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("phi0 = {0} lies in the first resonant set")]
    ResonantBase(f64),
    #[error("blocks overlap at {0}")]
    OverlapDetected(String),
    #[error("eigenvalue at distance {dist:e} from the contour")]
    ContourHit { dist: f64 },
    #[error("series not converging (ratio {ratio:.3} at order {order})")]
    NonConvergent { order: usize, ratio: f64 },
    #[error("{count} oracle eigenvalues inside the contour, expected 1")]
    NotUnique { count: usize },
    #[error("no root in bracket [{0}, {1}]")]
    NoRoot(f64, f64),
    #[error("io: {0}")]
    Io(String),
    #[error("config: {0}")]
    Config(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
