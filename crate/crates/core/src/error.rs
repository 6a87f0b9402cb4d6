use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid decomposition: {0}")]
    Decomposition(String),

    #[error("plane region {lo}..{hi} reads outside a field of {planes} planes (radius {radius})")]
    RegionOutOfBounds {
        lo: usize,
        hi: usize,
        planes: usize,
        radius: usize,
    },

    #[error("data-quality error: {0}")]
    DataQuality(String),

    #[error("framing error: {0}")]
    Framing(String),

    #[error(
        "out of device memory: `{name}` requests {requested} bytes with {live} of {capacity} bytes live"
    )]
    OutOfDeviceMemory {
        name: String,
        requested: u64,
        live: u64,
        capacity: u64,
    },

    #[error("device fault: {0}")]
    DeviceFault(String),

    #[error("dependency cycle detected through nodes {0:?}")]
    CycleDetected(Vec<usize>),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
