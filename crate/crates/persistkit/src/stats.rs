//! Run statistics: flush/fence counters and timings.

use std::time::Duration;

/// Counters accumulated by a [`Region`](crate::Region) while operations run.
///
/// `line_flushes` counts one unit per cache line covered by each `flush`
/// call; flushing the same line twice counts twice, which is exactly the cost
/// model of a hardware line flush. `distinct_lines_flushed` counts each line
/// at most once over the whole run.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    /// Completed operations (filled in by the driver, not the region).
    pub ops: u64,
    /// Cache-line flush units issued.
    pub line_flushes: u64,
    /// Number of `flush` calls (each may cover several lines).
    pub flush_calls: u64,
    /// Distinct cache lines flushed at least once.
    pub distinct_lines_flushed: u64,
    /// Ordering fences issued.
    pub fences: u64,
    /// Wall-clock time of the measured phase (filled in by the driver).
    pub wall: Duration,
    /// Time spent inside `flush` and `fence` calls.
    pub flush_time: Duration,
}

impl RunStats {
    /// Wall-clock seconds.
    pub fn wall_s(&self) -> f64 {
        self.wall.as_secs_f64()
    }

    /// Seconds spent flushing/fencing.
    pub fn flush_s(&self) -> f64 {
        self.flush_time.as_secs_f64()
    }

    /// Fraction of wall time spent flushing/fencing; 0 when wall time is 0.
    pub fn flush_fraction(&self) -> f64 {
        let wall = self.wall_s();
        if wall <= 0.0 {
            0.0
        } else {
            (self.flush_s() / wall).min(1.0)
        }
    }

    /// Average line flushes per operation; 0 when no operations ran.
    pub fn flushes_per_op(&self) -> f64 {
        if self.ops == 0 {
            0.0
        } else {
            self.line_flushes as f64 / self.ops as f64
        }
    }
}
