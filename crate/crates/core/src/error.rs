use thiserror::Error;

/// Errors surfaced by construction and solver kernels.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("scale overflow: lambda_{q} exceeds the exact-integer range of f64 (2^53)")]
    ScaleOverflow { q: u32 },

    #[error("resolution error: {what} needs at least {needed} grid points, grid has {have}")]
    Resolution {
        what: String,
        needed: usize,
        have: usize,
    },

    #[error("grid size {0} is not a power of two >= 8")]
    BadGrid(usize),

    #[error("cutoff sample count {m} cannot resolve mollification width {eps0} (need >= 8 samples across it)")]
    CutoffResolution { m: usize, eps0: f64 },

    #[error("characteristic step underflow (dt < 1e-12) integrating flow at q={q}, iota={iota}, t={t}")]
    Stiffness { q: u32, iota: i64, t: f64 },

    #[error("missing local flow for active window iota={iota} at t={t}")]
    MissingLocalFlow { iota: i64, t: f64 },

    #[error("time-derivative step {ht} outside [1e-10, {max}]")]
    StepSize { ht: f64, max: f64 },

    #[error("solution blew up (NaN/Inf) at t={t}, step {step}")]
    BlowUp { t: f64, step: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
