use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh:\n{}", .0.join("\n"))]
    InvalidMesh(Vec<String>),
    #[error("tet graph is disconnected: {} components, sizes {sizes:?}, first tets {firsts:?}", .sizes.len())]
    Disconnected { sizes: Vec<usize>, firsts: Vec<usize> },
    #[error("point {0:?} could not be located on the mesh")]
    Unlocatable([f64; 3]),
    #[error("simulation diverged at vertex {vertex}")]
    Diverged { vertex: usize },
    #[error("empty observation")]
    EmptyObservation,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mesh too small to furnish negatives at d_thres = {d_thres} (geodesic diameter {diameter}); use a smaller threshold")]
    NoNegatives { d_thres: f64, diameter: f64 },
    #[error("training diverged at step {step} (loss is not finite)")]
    TrainingDiverged { step: usize },
    #[error("all {0} roll-outs are invalid")]
    AllRolloutsInvalid(usize),
    #[error("kendall tau undefined: every pair is tied")]
    AllTied,
    #[error("schema violation at {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Validation errors map to exit code 2, everything else to 3.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidMesh(_)
                | Error::Disconnected { .. }
                | Error::Schema { .. }
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
