//! Partly-persistent data structures over a cache-line-modeled persistent region.
//!
//! Persistent memory is cheap to read but expensive to make durable: every
//! durable write costs a cache-line flush plus an ordering fence. The
//! structures in this crate split their state into an *essential* persistent
//! part (enough to rebuild everything after a crash) and a *redundant*
//! volatile part (navigation links, caches, indexes) that is reconstructed on
//! recovery instead of being flushed on every update.
//!
//! The crate has three layers:
//!
//! - [`region`]: a persistent region abstraction that models durability at
//!   cache-line (64 B) granularity. Writes land in a volatile buffer; only
//!   explicit [`Region::flush`] + [`Region::fence`] make lines durable. The
//!   [`SimulatedCrash`](region::BackendKind::SimulatedCrash) backend keeps a
//!   shadow "durable image" and can materialize crash states; the
//!   [`FileBacked`](region::BackendKind::FileBacked) backend maps flushes to
//!   file writes and fences to file syncs.
//! - [`list`], [`bptree`], [`hashmap`]: recoverable structures in three
//!   durability modes ([`Mode::Fully`], [`Mode::PartlyDirect`],
//!   [`Mode::PartlyCheckpoint`]) with per-operation flush accounting and
//!   crash-recovery reconstruction.
//! - [`workload`], [`harness`], [`bench`]: deterministic trace generation,
//!   crash-injection verification against in-memory reference models, and
//!   benchmark drivers that report flush counts, fence counts and timings.
//!
//! Offsets handed out by the region are plain `u64` byte offsets from the
//! start of the region, so every persistent link is position independent;
//! offset `0` (the region header) doubles as the nil sentinel.

pub mod bench;
pub mod bptree;
pub mod error;
pub mod harness;
pub mod hashmap;
pub mod list;
pub mod region;
pub mod stats;
pub mod workload;

pub use error::{Error, Result};
pub use region::{CrashPolicy, Region, RegionLayout};
pub use stats::RunStats;

/// Durability mode of a recoverable structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Baseline: every field, including redundant navigation state, lives in
    /// the persistent region and is flushed when it changes.
    Fully,
    /// Only essential fields are flushed; redundant fields live in the same
    /// persistent slots but are written without flushing and rebuilt on
    /// recovery.
    PartlyDirect,
    /// Like `PartlyDirect`, but all writes go to a volatile mirror of the
    /// region and `flush` copies the affected lines into the persistent
    /// buffer. Stray volatile writes can never leak into the durable image.
    PartlyCheckpoint,
}

impl Mode {
    /// True for the two partly-persistent variants.
    pub fn is_partly(self) -> bool {
        !matches!(self, Mode::Fully)
    }

    /// Stable label used in CSV output and CLI arguments.
    pub fn label(self) -> &'static str {
        match self {
            Mode::Fully => "full",
            Mode::PartlyDirect => "partly",
            Mode::PartlyCheckpoint => "partly-ckpt",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "fully" => Ok(Mode::Fully),
            "partly" | "partly-direct" => Ok(Mode::PartlyDirect),
            "partly-ckpt" | "partly-checkpoint" => Ok(Mode::PartlyCheckpoint),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode `{other}` (expected full, partly, or partly-ckpt)"
            ))),
        }
    }
}

/// When a structure issues its ordering fence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FencePolicy {
    /// One fence at the end of every mutating operation (the default; this is
    /// what the crash harness assumes when mapping crash points to operation
    /// boundaries).
    #[default]
    PerOp,
    /// One fence after every K mutating operations; `finish` fences the
    /// remainder.
    Batch(u32),
}

impl std::str::FromStr for FencePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "per-op" {
            return Ok(FencePolicy::PerOp);
        }
        if let Some(k) = s.strip_prefix("batch=") {
            let k: u32 = k
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad fence batch size `{k}`")))?;
            if k == 0 {
                return Err(Error::InvalidConfig("fence batch size must be >= 1".into()));
            }
            return Ok(FencePolicy::Batch(k));
        }
        Err(Error::InvalidConfig(format!(
            "unknown fence policy `{s}` (expected per-op or batch=K)"
        )))
    }
}
