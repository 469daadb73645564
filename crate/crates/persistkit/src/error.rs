//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors reported by the region, the recoverable structures, and the
/// benchmark/crash drivers.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying file I/O failed (file-backed regions only).
    #[error("region I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// A region image failed validation on open or recovery: bad magic,
    /// truncated file, or an inconsistent arena table.
    #[error("invalid region image: {0}")]
    BadImage(String),

    /// Requested capacity/layout cannot be represented (too small, not a
    /// multiple of the device granularity, arenas exceed capacity, ...).
    #[error("invalid region geometry: {0}")]
    BadGeometry(String),

    /// An offset or range fell outside the region or its arenas.
    #[error("out-of-bounds access: {0}")]
    OutOfBounds(String),

    /// An arena ran out of space.
    #[error("arena `{arena}` exhausted: {detail}")]
    ArenaExhausted { arena: &'static str, detail: String },

    /// A structure was asked to initialize over an arena already marked
    /// initialized, or to reconstruct from one that was never initialized.
    #[error("initialization state error: {0}")]
    InitState(String),

    /// Recovery found a persistent image that violates a structural
    /// invariant (cycle in a chain, unsorted leaf chain, more live entries
    /// than the persisted size, ...).
    #[error("corrupt persistent state: {0}")]
    Corruption(String),

    /// A key-level precondition failed: duplicate insert, missing key, or a
    /// reserved key value.
    #[error("key error: {0}")]
    Key(String),

    /// A handle passed to an operation does not refer to a live element.
    #[error("stale or unknown handle: {0}")]
    BadHandle(String),

    /// The requested operation is not supported in the current mode (for
    /// example, volatile bug injection outside checkpoint mode).
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Bad benchmark/CLI configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A benchmark's post-run verification against the reference model
    /// failed; carries a human-readable divergence report.
    #[error("verification failed: {0}")]
    VerificationFailed(String),
}
