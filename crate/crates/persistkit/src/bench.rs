//! Benchmark drivers: workload timing with flush-time attribution,
//! flush-count scaling, flush-granularity penalty, and reconstruction
//! timing. All results go into CSV rows with fixed column orders.
//!
//! Counting columns (`line_flushes`, `fences`, `ops`) are pure functions of
//! the configuration — identical across repeats and across backends — while
//! the timing columns measure whatever machine the benchmark runs on.
//! Timing claims in tests are therefore trend-only (monotonicity/ordering),
//! never absolute.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::harness::{plan_layout, Driver, RefModel, Tuning, WorkloadSpec};
use crate::region::{
    ArenaId, CrashPolicy, Region, RegionLayout, DEVICE_BLOCK, HEADER_SIZE, LINE_SIZE,
};
use crate::workload::{Op, Structure};
use crate::FencePolicy;

/// Which medium a benchmark region lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// In-memory region with crash-simulation support.
    Sim,
    /// Memory-backed file region: flushes write, fences sync.
    File,
}

impl Backend {
    /// Stable label used in CLI arguments.
    pub fn label(self) -> &'static str {
        match self {
            Backend::Sim => "sim",
            Backend::File => "file",
        }
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(Backend::Sim),
            "file" => Ok(Backend::File),
            other => Err(Error::InvalidConfig(format!(
                "unknown backend `{other}` (expected sim or file)"
            ))),
        }
    }
}

/// Full description of one `bench workload` invocation.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub workload: WorkloadSpec,
    pub backend: Backend,
    pub fence_policy: FencePolicy,
    pub tuning: Tuning,
    /// Optional CSV output path; rows are also returned.
    pub output: Option<PathBuf>,
    /// Timed repetitions; a median row is appended after the per-repeat rows.
    pub repeats: u32,
}

/// One CSV row of a workload run.
#[derive(Debug, Clone)]
pub struct WorkloadRow {
    pub structure: Structure,
    pub mode: crate::Mode,
    pub workload: String,
    pub ops: u64,
    pub line_flushes: u64,
    pub fences: u64,
    pub wall_s: f64,
    pub flush_s: f64,
    pub flush_fraction: f64,
    /// `"1"`, `"2"`, ... or `"median"`.
    pub repeat: String,
}

impl WorkloadRow {
    /// Fixed column order of the workload CSV.
    pub const HEADER: &'static str =
        "structure,mode,workload,ops,line_flushes,fences,wall_s,flush_s,flush_fraction,repeat";

    /// Renders the row in [`WorkloadRow::HEADER`] order.
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.4},{}",
            self.structure.label(),
            self.mode.label(),
            self.workload,
            self.ops,
            self.line_flushes,
            self.fences,
            self.wall_s,
            self.flush_s,
            self.flush_fraction,
            self.repeat
        )
    }
}

/// Directory for file-backed benchmark regions: `PERSISTKIT_REGION_DIR`, or
/// the system temp directory when unset.
pub fn region_dir() -> PathBuf {
    match std::env::var_os("PERSISTKIT_REGION_DIR") {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => std::env::temp_dir(),
    }
}

/// A region plus the file path to clean up afterwards (file backend only).
struct BenchRegion {
    region: Region,
    path: Option<PathBuf>,
}

impl BenchRegion {
    fn create(backend: Backend, capacity: u64, layout: &RegionLayout, tag: &str) -> Result<Self> {
        match backend {
            Backend::Sim => Ok(BenchRegion {
                region: Region::create_sim(capacity, layout)?,
                path: None,
            }),
            Backend::File => {
                let dir = region_dir();
                fs::create_dir_all(&dir)?;
                let path = dir.join(format!(
                    "persistkit-{tag}-{}-{}.region",
                    std::process::id(),
                    std::time::SystemTime::now()
                        .duration_since(std::time::UNIX_EPOCH)
                        .map(|d| d.as_nanos())
                        .unwrap_or(0)
                ));
                let region = Region::create_file(&path, capacity, layout)?;
                Ok(BenchRegion {
                    region,
                    path: Some(path),
                })
            }
        }
    }
}

impl Drop for BenchRegion {
    fn drop(&mut self) {
        if let Some(path) = &self.path {
            let _ = fs::remove_file(path);
        }
    }
}

/// Reads every page of the region once, so first-touch page faults (and, on
/// the file backend, cold cache misses) land before the timed phase.
fn pre_touch(region: &Region) -> Result<u64> {
    const PAGE: u64 = 4096;
    let mut checksum = 0u64;
    let mut off = 0;
    while off < region.capacity() {
        checksum = checksum.wrapping_add(region.read(off, 1)?[0] as u64);
        off += PAGE;
    }
    Ok(checksum)
}

/// Runs the configured workload `repeats` times and appends a median row
/// (by wall time; the counting columns are identical across repeats).
///
/// Region arenas are sized from the trace's peak live count before anything
/// is timed, so a workload that cannot fit fails here, not mid-measurement;
/// delete-heavy workloads without enough initial entries are rejected while
/// generating the trace.
pub fn run_workload(config: &BenchConfig) -> Result<Vec<WorkloadRow>> {
    if config.repeats < 1 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    let spec = &config.workload;
    let trace = spec.trace()?;
    let (layout, capacity) =
        plan_layout(spec.structure, trace.peak_live, config.tuning.load_factor);
    let mut rows: Vec<WorkloadRow> = Vec::with_capacity(config.repeats as usize + 1);
    for repeat in 1..=config.repeats {
        let mut br =
            BenchRegion::create(config.backend, capacity, &layout, spec.structure.label())?;
        let region = &mut br.region;
        let mut driver = Driver::init(region, spec.structure, spec.mode, config.tuning)?;
        driver.set_fence_policy(config.fence_policy);
        for &(key, word) in &trace.init {
            driver.apply(region, &Op::Insert { key, word })?;
        }
        pre_touch(region)?;
        region.reset_stats();
        let started = Instant::now();
        for op in &trace.ops {
            driver.apply(region, op)?;
        }
        driver.finish(region);
        let wall = started.elapsed();
        let mut stats = region.stats();
        stats.ops = spec.op_count;
        stats.wall = wall;
        rows.push(WorkloadRow {
            structure: spec.structure,
            mode: spec.mode,
            workload: spec.op_mix.label(),
            ops: stats.ops,
            line_flushes: stats.line_flushes,
            fences: stats.fences,
            wall_s: stats.wall_s(),
            flush_s: stats.flush_s(),
            flush_fraction: stats.flush_fraction(),
            repeat: repeat.to_string(),
        });
    }
    let mut by_wall: Vec<usize> = (0..rows.len()).collect();
    by_wall.sort_by(|&a, &b| rows[a].wall_s.total_cmp(&rows[b].wall_s));
    let mut median = rows[by_wall[by_wall.len() / 2]].clone();
    median.repeat = "median".into();
    rows.push(median);
    if let Some(path) = &config.output {
        write_csv(path, WorkloadRow::HEADER, rows.iter().map(|r| r.csv()))?;
    }
    Ok(rows)
}

/// One CSV row of the flush-scaling microbenchmark.
#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub fraction: f64,
    pub ops: u64,
    pub line_flushes: u64,
    pub fences: u64,
    pub wall_s: f64,
    pub flush_s: f64,
}

impl ScalingRow {
    /// Fixed column order of the flush-scaling CSV.
    pub const HEADER: &'static str = "fraction,ops,line_flushes,fences,wall_s,flush_s";

    /// Renders the row in [`ScalingRow::HEADER`] order.
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6}",
            self.fraction, self.ops, self.line_flushes, self.fences, self.wall_s, self.flush_s
        )
    }
}

/// Cost-of-persistence microbenchmark: appends `base_ops` nodes to a simple
/// singly linked chain in raw region space, flushing (and fencing) only the
/// chosen fraction of them, spread evenly over the run. Flush counts scale
/// exactly with the fraction — `{1/8, 1/4, 1/2, 1}` gives `1:2:4:8` — while
/// the append work stays constant, isolating the cost of the flushes.
pub fn run_flush_scaling(
    base_ops: u64,
    flush_fractions: &[f64],
    backend: Backend,
) -> Result<Vec<ScalingRow>> {
    if base_ops == 0 {
        return Err(Error::InvalidConfig(
            "flush scaling needs at least one op".into(),
        ));
    }
    for &f in flush_fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "flush fraction {f} outside (0, 1]"
            )));
        }
    }
    let node_bytes = (base_ops * LINE_SIZE).next_multiple_of(DEVICE_BLOCK);
    let layout = RegionLayout::new().with(ArenaId::Scratch, node_bytes);
    let capacity = HEADER_SIZE + node_bytes;
    let mut rows = Vec::with_capacity(flush_fractions.len());
    for &fraction in flush_fractions {
        let flush_target = (fraction * base_ops as f64).round() as u64;
        let mut br = BenchRegion::create(backend, capacity, &layout, "scaling")?;
        let region = &mut br.region;
        let base = region.arena(ArenaId::Scratch).unwrap().base;
        pre_touch(region)?;
        region.reset_stats();
        let started = Instant::now();
        let mut flushed = 0u64;
        for i in 0..base_ops {
            let node = base + i * LINE_SIZE;
            region.write_u64(node, i)?;
            let next = if i + 1 < base_ops {
                node + LINE_SIZE
            } else {
                0
            };
            region.write_u64(node + 8, next)?;
            // Evenly spaced flush selection: node i flushes when the running
            // quota `(i+1)*target/ops` crosses an integer.
            let due = (i + 1) * flush_target / base_ops;
            if due > flushed {
                region.flush(node, LINE_SIZE)?;
                region.fence();
                flushed = due;
            }
        }
        let wall = started.elapsed();
        let stats = region.stats();
        debug_assert_eq!(stats.line_flushes, flush_target);
        rows.push(ScalingRow {
            fraction,
            ops: base_ops,
            line_flushes: stats.line_flushes,
            fences: stats.fences,
            wall_s: wall.as_secs_f64(),
            flush_s: stats.flush_s(),
        });
    }
    Ok(rows)
}

/// One CSV row of the flush-granularity microbenchmark.
#[derive(Debug, Clone)]
pub struct GranularityRow {
    pub flush_size: u64,
    pub ops: u64,
    pub line_flushes: u64,
    pub fences: u64,
    pub wall_s: f64,
    pub flush_s: f64,
}

impl GranularityRow {
    /// Fixed column order of the granularity CSV.
    pub const HEADER: &'static str = "flush_size,ops,line_flushes,fences,wall_s,flush_s";

    /// Renders the row in [`GranularityRow::HEADER`] order.
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6}",
            self.flush_size, self.ops, self.line_flushes, self.fences, self.wall_s, self.flush_s
        )
    }
}

/// Sub-line flush penalty: writes `op_count` 64 B payloads, flushing each in
/// `flush_size`-byte chunks (one fence per chunk). Every chunk of the same
/// payload lands on the same cache line, so an 8 B granularity re-flushes
/// the line 8 times where the aligned 64 B version flushes it once.
pub fn run_granularity_bench(
    flush_sizes: &[u64],
    op_count: u64,
    backend: Backend,
) -> Result<Vec<GranularityRow>> {
    if op_count == 0 {
        return Err(Error::InvalidConfig(
            "granularity bench needs at least one op".into(),
        ));
    }
    for &s in flush_sizes {
        if !matches!(s, 8 | 16 | 32 | 64) {
            return Err(Error::InvalidConfig(format!(
                "flush size {s} not in {{8, 16, 32, 64}}"
            )));
        }
    }
    let body = (op_count * LINE_SIZE).next_multiple_of(DEVICE_BLOCK);
    let layout = RegionLayout::new().with(ArenaId::Scratch, body);
    let capacity = HEADER_SIZE + body;
    let mut rows = Vec::with_capacity(flush_sizes.len());
    for &size in flush_sizes {
        let mut br = BenchRegion::create(backend, capacity, &layout, "granularity")?;
        let region = &mut br.region;
        let base = region.arena(ArenaId::Scratch).unwrap().base;
        pre_touch(region)?;
        region.reset_stats();
        let payload = [0x5au8; LINE_SIZE as usize];
        let started = Instant::now();
        for i in 0..op_count {
            let off = base + i * LINE_SIZE;
            region.write(off, &payload)?;
            let mut chunk = 0;
            while chunk < LINE_SIZE {
                region.flush(off + chunk, size)?;
                region.fence();
                chunk += size;
            }
        }
        let wall = started.elapsed();
        let stats = region.stats();
        rows.push(GranularityRow {
            flush_size: size,
            ops: op_count,
            line_flushes: stats.line_flushes,
            fences: stats.fences,
            wall_s: wall.as_secs_f64(),
            flush_s: stats.flush_s(),
        });
    }
    Ok(rows)
}

/// One CSV row of the reconstruction benchmark.
#[derive(Debug, Clone)]
pub struct ReconstructRow {
    pub structure: Structure,
    /// Bytes of persistent arena space actually in use at the crash.
    pub persisted_bytes: u64,
    pub entries: u64,
    pub reconstruct_s: f64,
    pub verified: bool,
}

impl ReconstructRow {
    /// Fixed column order of the reconstruction CSV.
    pub const HEADER: &'static str = "structure,persisted_bytes,entries,reconstruct_s,verified";

    /// Renders the row in [`ReconstructRow::HEADER`] order.
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{}",
            self.structure.label(),
            self.persisted_bytes,
            self.entries,
            self.reconstruct_s,
            self.verified
        )
    }
}

/// Entries needed for roughly `size_bytes` of persistent footprint.
pub fn entries_for_bytes(structure: Structure, size_bytes: u64) -> u64 {
    let per_entry = match structure {
        // One 128 B node slot per element.
        Structure::List => 128,
        // One 64 B record plus a share of a 256 B leaf (~9.5 keys each).
        Structure::BPlusTree => 91,
        // One 128 B entry slot per element.
        Structure::Hashmap => 128,
    };
    size_bytes / per_entry
}

/// Populates a structure to about `size_bytes` of persistent state, crashes
/// it, times the reconstruction, and verifies the recovered content against
/// the reference model before reporting. A verification mismatch aborts the
/// benchmark with a divergence report instead of producing a row.
pub fn run_reconstruction_bench(
    structure: Structure,
    size_bytes: u64,
    seed: u64,
    tuning: Tuning,
) -> Result<ReconstructRow> {
    let entries = entries_for_bytes(structure, size_bytes);
    let spec = WorkloadSpec {
        structure,
        mode: crate::Mode::PartlyDirect,
        op_mix: crate::workload::OpMix::InsertOnly,
        op_count: 0,
        init_count: entries,
        seed,
    };
    let trace = spec.trace()?;
    let (layout, capacity) = plan_layout(structure, trace.peak_live, tuning.load_factor);
    let mut region = Region::create_sim(capacity, &layout)?;
    let mut driver = Driver::init(&mut region, structure, spec.mode, tuning)?;
    let mut reference = RefModel::new(structure);
    for &(key, word) in &trace.init {
        let op = Op::Insert { key, word };
        driver.apply(&mut region, &op)?;
        reference.apply(&op);
    }
    let persisted_bytes = used_arena_bytes(&region, structure);
    let mut crashed = region.simulate_crash(CrashPolicy::DropAllPending)?;
    let started = Instant::now();
    let recovered = Driver::recover(&mut crashed, structure, spec.mode, tuning)?;
    let reconstruct_s = started.elapsed().as_secs_f64();
    let got = recovered.content(&crashed)?;
    let want = reference.content();
    if got != want {
        return Err(Error::VerificationFailed(format!(
            "{} reconstruction diverged: {}",
            structure.label(),
            got.first_divergence(&want)
        )));
    }
    Ok(ReconstructRow {
        structure,
        persisted_bytes,
        entries,
        reconstruct_s,
        verified: true,
    })
}

fn used_arena_bytes(region: &Region, structure: Structure) -> u64 {
    let ids: &[ArenaId] = match structure {
        Structure::List => &[ArenaId::ListHeader, ArenaId::ListNodes],
        Structure::BPlusTree => &[
            ArenaId::TreeHeader,
            ArenaId::TreeNodes,
            ArenaId::TreeRecords,
        ],
        Structure::Hashmap => &[ArenaId::MapHeader, ArenaId::MapEntries, ArenaId::MapBuckets],
    };
    ids.iter()
        .filter_map(|&id| region.arena(id))
        .map(|a| a.high_water)
        .sum()
}

/// Writes `rows` under `header` to `path`, creating parent directories.
pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = String::with_capacity(256);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::OpMix;
    use crate::Mode;

    fn config(structure: Structure, mode: Mode, mix: OpMix, ops: u64, init: u64) -> BenchConfig {
        BenchConfig {
            workload: WorkloadSpec {
                structure,
                mode,
                op_mix: mix,
                op_count: ops,
                init_count: init,
                seed: 7,
            },
            backend: Backend::Sim,
            fence_policy: FencePolicy::PerOp,
            tuning: Tuning::default(),
            output: None,
            repeats: 2,
        }
    }

    #[test]
    fn workload_counts_are_identical_across_repeats() {
        let rows = run_workload(&config(
            Structure::BPlusTree,
            Mode::PartlyDirect,
            OpMix::Mixed {
                inserts: 2,
                deletes: 1,
            },
            300,
            60,
        ))
        .unwrap();
        assert_eq!(rows.len(), 3); // two repeats + median
        assert_eq!(rows[0].line_flushes, rows[1].line_flushes);
        assert_eq!(rows[0].fences, rows[1].fences);
        assert_eq!(rows[2].repeat, "median");
        assert_eq!(rows[2].line_flushes, rows[0].line_flushes);
        assert!(rows[0].ops == 300 && rows[0].workload == "2:1");
    }

    #[test]
    fn partly_flushes_less_than_fully() {
        for structure in Structure::ALL {
            let count = |mode| {
                let mut c = config(structure, mode, OpMix::InsertOnly, 200, 0);
                c.repeats = 1;
                run_workload(&c).unwrap()[0].line_flushes
            };
            let partly = count(Mode::PartlyDirect);
            let fully = count(Mode::Fully);
            assert!(
                partly < fully,
                "{structure:?}: partly {partly} vs fully {fully}"
            );
        }
    }

    #[test]
    fn counting_columns_are_backend_independent() {
        let mut c = config(
            Structure::Hashmap,
            Mode::PartlyDirect,
            OpMix::Mixed {
                inserts: 1,
                deletes: 1,
            },
            200,
            50,
        );
        c.repeats = 1;
        let sim = run_workload(&c).unwrap();
        c.backend = Backend::File;
        let file = run_workload(&c).unwrap();
        assert_eq!(sim[0].line_flushes, file[0].line_flushes);
        assert_eq!(sim[0].fences, file[0].fences);
    }

    #[test]
    fn delete_only_without_init_is_a_config_error() {
        let c = config(
            Structure::List,
            Mode::PartlyDirect,
            OpMix::DeleteOnly,
            10,
            0,
        );
        assert!(matches!(run_workload(&c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn zero_repeats_rejected() {
        let mut c = config(Structure::List, Mode::PartlyDirect, OpMix::InsertOnly, 5, 0);
        c.repeats = 0;
        assert!(matches!(run_workload(&c), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn workload_csv_written_with_stable_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let mut c = config(
            Structure::List,
            Mode::PartlyDirect,
            OpMix::InsertOnly,
            20,
            0,
        );
        c.repeats = 1;
        c.output = Some(path.clone());
        run_workload(&c).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), WorkloadRow::HEADER);
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn flush_scaling_ratios_are_exact() {
        let rows = run_flush_scaling(4000, &[0.125, 0.25, 0.5, 1.0], Backend::Sim).unwrap();
        let flushes: Vec<u64> = rows.iter().map(|r| r.line_flushes).collect();
        assert_eq!(flushes, vec![500, 1000, 2000, 4000]);
        let fences: Vec<u64> = rows.iter().map(|r| r.fences).collect();
        assert_eq!(fences, flushes);
    }

    #[test]
    fn flush_scaling_rejects_bad_fractions() {
        assert!(run_flush_scaling(100, &[0.0], Backend::Sim).is_err());
        assert!(run_flush_scaling(100, &[1.5], Backend::Sim).is_err());
        assert!(run_flush_scaling(0, &[0.5], Backend::Sim).is_err());
    }

    #[test]
    fn granularity_counts_are_exact() {
        let rows = run_granularity_bench(&[8, 16, 32, 64], 500, Backend::Sim).unwrap();
        let flushes: Vec<u64> = rows.iter().map(|r| r.line_flushes).collect();
        assert_eq!(flushes, vec![4000, 2000, 1000, 500]);
        assert_eq!(rows[3].line_flushes, 500); // 64 B: one flush per payload
    }

    #[test]
    fn granularity_rejects_other_sizes() {
        assert!(run_granularity_bench(&[24], 10, Backend::Sim).is_err());
        assert!(run_granularity_bench(&[0], 10, Backend::Sim).is_err());
        assert!(run_granularity_bench(&[128], 10, Backend::Sim).is_err());
    }

    #[test]
    fn reconstruction_bench_verifies_content() {
        for structure in Structure::ALL {
            let row =
                run_reconstruction_bench(structure, 256 * 1024, 3, Tuning::default()).unwrap();
            assert!(row.verified);
            assert!(row.entries >= 1);
            assert!(row.persisted_bytes > 0);
            assert!(row.reconstruct_s < 60.0);
        }
    }

    #[test]
    fn empty_reconstruction_is_fast_and_verified() {
        let row = run_reconstruction_bench(Structure::List, 0, 1, Tuning::default()).unwrap();
        assert!(row.verified);
        assert_eq!(row.entries, 0);
        assert!(row.reconstruct_s < 0.5);
    }
}
