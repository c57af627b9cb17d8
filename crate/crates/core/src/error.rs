use alloc::string::String;
use core::fmt;

/// Error type shared by all numeric modules.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input cloud is empty or otherwise unusable.
    EmptyCloud,
    /// All points coincide; the cloud cannot be normalized.
    DegenerateCloud,
    /// Requested more samples than there are points.
    SampleCountExceedsPoints { requested: usize, available: usize },
    /// Mesh has no face with positive area.
    ZeroSurfaceArea,
    /// Face references a vertex index outside the vertex list.
    FaceIndexOutOfRange { face: usize, index: usize, vertex_count: usize },
    /// kNN graph needs k < n.
    KnnTooLarge { k: usize, n: usize },
    /// Fixed kernel width must be positive.
    NonPositiveSigma,
    /// Vertex with zero degree; D^{-1/2} is undefined.
    IsolatedVertex(usize),
    /// Laplacian rescaling needs lambda_max > 0.
    NonPositiveLambdaMax,
    /// Matrix/operand dimensions do not line up.
    ShapeMismatch { context: &'static str, expected: usize, actual: usize },
    /// Operation needs a symmetric matrix.
    NotSymmetric,
    /// Dropout keep probability must lie in (0, 1].
    InvalidKeepProb(f32),
    /// Pooling variance needs at least two rows.
    TooFewRows { needed: usize, actual: usize },
    /// Class label outside [0, class_count).
    LabelOutOfRange { label: usize, class_count: usize },
    /// A class has zero training instances; inverse-frequency weights are undefined.
    EmptyClass(usize),
    /// Configuration rejected before any computation ran.
    InvalidConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyCloud => write!(f, "point cloud is empty"),
            Error::DegenerateCloud => {
                write!(f, "all points coincide; cannot normalize to the unit sphere")
            }
            Error::SampleCountExceedsPoints { requested, available } => write!(
                f,
                "requested {requested} samples but only {available} points are available"
            ),
            Error::ZeroSurfaceArea => write!(f, "mesh has zero total surface area"),
            Error::FaceIndexOutOfRange { face, index, vertex_count } => write!(
                f,
                "face {face} references vertex {index} but the mesh has {vertex_count} vertices"
            ),
            Error::KnnTooLarge { k, n } => {
                write!(f, "kNN graph needs k < n, got k = {k} with n = {n}")
            }
            Error::NonPositiveSigma => write!(f, "fixed kernel width must be positive"),
            Error::IsolatedVertex(v) => write!(f, "vertex {v} has zero degree"),
            Error::NonPositiveLambdaMax => write!(f, "lambda_max must be positive"),
            Error::ShapeMismatch { context, expected, actual } => {
                write!(f, "{context}: expected dimension {expected}, got {actual}")
            }
            Error::NotSymmetric => write!(f, "matrix is not symmetric"),
            Error::InvalidKeepProb(p) => {
                write!(f, "keep probability must lie in (0, 1], got {p}")
            }
            Error::TooFewRows { needed, actual } => {
                write!(f, "operation needs at least {needed} rows, got {actual}")
            }
            Error::LabelOutOfRange { label, class_count } => {
                write!(f, "label {label} outside [0, {class_count})")
            }
            Error::EmptyClass(c) => write!(f, "class {c} has no training instances"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
