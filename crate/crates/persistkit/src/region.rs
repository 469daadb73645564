//! Persistent region modeled at cache-line granularity.
//!
//! A region is a fixed-size, byte-addressable range carved into a 256 B
//! header plus up to ten arenas. Ordinary writes land in a volatile buffer;
//! data becomes durable only through an explicit [`Region::flush`] of the
//! covering cache lines followed by a [`Region::fence`]. Two backends share
//! this interface:
//!
//! - **SimulatedCrash** keeps a shadow *durable image*. `flush` snapshots the
//!   covered lines into a pending set and `fence` applies the pending set to
//!   the durable image, so the durable image always equals what real hardware
//!   would guarantee after the most recent fence. [`Region::simulate_crash`]
//!   materializes a fresh region from the durable image plus a caller-chosen
//!   subset of pending (flushed-but-not-fenced) lines.
//! - **FileBacked** maps `flush` to positional file writes and `fence` to a
//!   file data sync, giving realistic flush/fence cost on a real storage
//!   stack.
//!
//! All multi-byte fields are little-endian, and links between persistent
//! records are region-relative byte offsets, so an image is position
//! independent. Offset 0 (the header magic) is never a valid record address
//! and doubles as the nil sentinel.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::stats::RunStats;

/// Cache-line size: the granularity of flush accounting.
pub const LINE_SIZE: u64 = 64;
/// Internal write granularity of the modeled device (four cache lines).
pub const DEVICE_BLOCK: u64 = 256;
/// Size of the region header (one device block).
pub const HEADER_SIZE: u64 = 256;
/// Magic bytes identifying a region image.
pub const MAGIC: [u8; 8] = *b"PRSTKIT1";
/// Nil sentinel for persistent links (offset 0 is the header magic).
pub const NIL: u64 = 0;
/// Maximum number of arenas a region can hold.
pub const MAX_ARENAS: usize = 10;
/// Smallest representable region: header plus one device block.
pub const MIN_CAPACITY: u64 = HEADER_SIZE + DEVICE_BLOCK;

/// Identifies an arena within a region. The discriminant is stored in the
/// on-media arena table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum ArenaId {
    /// Header block of the recoverable list (init flag line + head/tail).
    ListHeader = 1,
    /// 128 B slots for list nodes.
    ListNodes = 2,
    /// Header block of the recoverable B+tree.
    TreeHeader = 3,
    /// 256 B slots for B+tree nodes.
    TreeNodes = 4,
    /// 64 B slots for B+tree record payloads.
    TreeRecords = 5,
    /// Header block of the recoverable hashmap.
    MapHeader = 6,
    /// 128 B slots for hashmap entries.
    MapEntries = 7,
    /// Bucket-head array for the fully-persistent hashmap.
    MapBuckets = 8,
    /// Raw space for microbenchmarks.
    Scratch = 9,
}

impl ArenaId {
    /// Stable human-readable name (used in error messages).
    pub fn name(self) -> &'static str {
        match self {
            ArenaId::ListHeader => "list-header",
            ArenaId::ListNodes => "list-nodes",
            ArenaId::TreeHeader => "tree-header",
            ArenaId::TreeNodes => "tree-nodes",
            ArenaId::TreeRecords => "tree-records",
            ArenaId::MapHeader => "map-header",
            ArenaId::MapEntries => "map-entries",
            ArenaId::MapBuckets => "map-buckets",
            ArenaId::Scratch => "scratch",
        }
    }

    fn from_u32(raw: u32) -> Option<ArenaId> {
        Some(match raw {
            1 => ArenaId::ListHeader,
            2 => ArenaId::ListNodes,
            3 => ArenaId::TreeHeader,
            4 => ArenaId::TreeNodes,
            5 => ArenaId::TreeRecords,
            6 => ArenaId::MapHeader,
            7 => ArenaId::MapEntries,
            8 => ArenaId::MapBuckets,
            9 => ArenaId::Scratch,
            _ => return None,
        })
    }
}

/// Which backend a region runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    /// In-memory durable-image model with crash materialization.
    SimulatedCrash,
    /// Flushes are positional file writes, fences are file data syncs.
    FileBacked,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" | "simulated" => Ok(BackendKind::SimulatedCrash),
            "file" | "file-backed" => Ok(BackendKind::FileBacked),
            other => Err(Error::InvalidConfig(format!(
                "unknown backend `{other}` (expected sim or file)"
            ))),
        }
    }
}

/// What happens to flushed-but-not-fenced lines when a crash is simulated.
///
/// Real hardware may or may not have drained such lines; the three policies
/// bracket that nondeterminism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPolicy {
    /// Every pending line reached the device before the crash.
    KeepAllPending,
    /// No pending line reached the device.
    DropAllPending,
    /// Each pending line independently survives with probability 1/2, drawn
    /// from a deterministic stream seeded by the given value.
    RandomSubset(u64),
}

/// Condition under which an armed crash snapshot is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashTrigger {
    /// Snapshot immediately after the k-th `flush` call (1-based).
    AfterFlushCall(u64),
    /// Snapshot immediately after the k-th `fence` (1-based).
    AfterFenceIndex(u64),
}

/// Declarative description of the arenas a region should contain.
#[derive(Debug, Clone, Default)]
pub struct RegionLayout {
    entries: Vec<(ArenaId, u64)>,
}

impl RegionLayout {
    /// Empty layout; add arenas with [`RegionLayout::with`].
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an arena of `len` bytes (must be a positive multiple of 256).
    pub fn with(mut self, id: ArenaId, len: u64) -> Self {
        self.entries.push((id, len));
        self
    }

    /// A general-purpose layout containing every arena, with the body split
    /// proportionally between the three structures.
    pub fn standard(capacity: u64) -> Result<Self> {
        const HEADERS: u64 = HEADER_SIZE + 3 * DEVICE_BLOCK;
        if capacity < HEADERS + 6 * DEVICE_BLOCK {
            return Err(Error::BadGeometry(format!(
                "capacity {capacity} too small for the standard layout"
            )));
        }
        let body = capacity - HEADERS;
        let part = |permille: u64| (body * permille / 1000) / DEVICE_BLOCK * DEVICE_BLOCK;
        let list_nodes = part(220).max(DEVICE_BLOCK);
        let tree_nodes = part(90).max(DEVICE_BLOCK);
        let tree_records = part(220).max(DEVICE_BLOCK);
        let map_entries = part(300).max(DEVICE_BLOCK);
        let map_buckets = part(80).max(DEVICE_BLOCK);
        let used = list_nodes + tree_nodes + tree_records + map_entries + map_buckets;
        let scratch = (body - used).max(DEVICE_BLOCK);
        Ok(RegionLayout::new()
            .with(ArenaId::ListHeader, DEVICE_BLOCK)
            .with(ArenaId::ListNodes, list_nodes)
            .with(ArenaId::TreeHeader, DEVICE_BLOCK)
            .with(ArenaId::TreeNodes, tree_nodes)
            .with(ArenaId::TreeRecords, tree_records)
            .with(ArenaId::MapHeader, DEVICE_BLOCK)
            .with(ArenaId::MapEntries, map_entries)
            .with(ArenaId::MapBuckets, map_buckets)
            .with(ArenaId::Scratch, scratch))
    }

    /// Validates the layout against `capacity` and assigns base offsets.
    fn place(&self, capacity: u64) -> Result<Vec<Arena>> {
        if capacity < MIN_CAPACITY {
            return Err(Error::BadGeometry(format!(
                "capacity {capacity} below minimum {MIN_CAPACITY}"
            )));
        }
        if !capacity.is_multiple_of(DEVICE_BLOCK) {
            return Err(Error::BadGeometry(format!(
                "capacity {capacity} is not a multiple of the {DEVICE_BLOCK} B device block"
            )));
        }
        if self.entries.is_empty() || self.entries.len() > MAX_ARENAS {
            return Err(Error::BadGeometry(format!(
                "layout must contain between 1 and {MAX_ARENAS} arenas, got {}",
                self.entries.len()
            )));
        }
        let mut seen = Vec::new();
        let mut base = HEADER_SIZE;
        let mut arenas = Vec::new();
        for &(id, len) in &self.entries {
            if seen.contains(&id) {
                return Err(Error::BadGeometry(format!(
                    "duplicate arena `{}`",
                    id.name()
                )));
            }
            seen.push(id);
            if len == 0 || len % DEVICE_BLOCK != 0 {
                return Err(Error::BadGeometry(format!(
                    "arena `{}` length {len} must be a positive multiple of {DEVICE_BLOCK}",
                    id.name()
                )));
            }
            if base + len > capacity {
                return Err(Error::BadGeometry(format!(
                    "arena `{}` does not fit: needs {} bytes at offset {base} in a {capacity}-byte region",
                    id.name(),
                    len
                )));
            }
            arenas.push(Arena::new(id, base, len));
            base += len;
        }
        Ok(arenas)
    }
}

/// Read-only description of an arena's placement and state.
#[derive(Debug, Clone, Copy)]
pub struct ArenaInfo {
    pub id: ArenaId,
    pub base: u64,
    pub len: u64,
    pub init: bool,
    /// Bump-allocation high-water mark, relative to `base`.
    pub high_water: u64,
    /// Slots currently parked on the volatile free list.
    pub free_slots: u64,
}

#[derive(Debug)]
struct Arena {
    id: ArenaId,
    base: u64,
    len: u64,
    init: bool,
    /// Bump cursor relative to `base`. Set to `len` when an image is opened
    /// with the init flag set: allocation is refused until reconstruction
    /// rebuilds the real high-water mark and free list.
    cursor: u64,
    free: Vec<u64>,
    slot_size: Option<u64>,
}

impl Arena {
    fn new(id: ArenaId, base: u64, len: u64) -> Self {
        Arena {
            id,
            base,
            len,
            init: false,
            cursor: 0,
            free: Vec::new(),
            slot_size: None,
        }
    }

    fn contains(&self, off: u64, len: u64) -> bool {
        off >= self.base && off + len <= self.base + self.len
    }
}

#[derive(Debug, Default)]
struct Counters {
    line_flushes: u64,
    flush_calls: u64,
    fences: u64,
    distinct: u64,
    distinct_bits: Vec<u64>,
    flush_time: Duration,
}

impl Counters {
    fn mark_distinct(&mut self, line: u64) {
        let (word, bit) = ((line / 64) as usize, line % 64);
        if self.distinct_bits[word] & (1 << bit) == 0 {
            self.distinct_bits[word] |= 1 << bit;
            self.distinct += 1;
        }
    }
}

enum Backend {
    Sim {
        durable: Vec<u8>,
        pending: HashMap<u64, [u8; LINE_SIZE as usize]>,
        dirty: std::collections::HashSet<u64>,
    },
    File {
        file: std::fs::File,
    },
}

struct ArmedCrash {
    trigger: CrashTrigger,
    policy: CrashPolicy,
    image: Option<Vec<u8>>,
}

/// A persistent region: volatile buffer plus a durability backend.
pub struct Region {
    capacity: u64,
    buf: Vec<u8>,
    /// Checkpoint mirror: when present, reads and writes target this copy
    /// and `flush` copies lines from it into `buf` (the modeled device).
    stage: Option<Vec<u8>>,
    arenas: Vec<Arena>,
    backend: Backend,
    counters: Counters,
    armed: Option<ArmedCrash>,
}

impl std::fmt::Debug for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Region")
            .field("capacity", &self.capacity)
            .field("backend", &self.backend_kind())
            .field("staged", &self.stage.is_some())
            .field("arenas", &self.arenas.len())
            .finish()
    }
}

impl Region {
    // ------------------------------------------------------------------
    // Construction
    // ------------------------------------------------------------------

    /// Creates a simulated-crash region of `capacity` bytes.
    pub fn create_sim(capacity: u64, layout: &RegionLayout) -> Result<Region> {
        let arenas = layout.place(capacity)?;
        let buf = vec![0u8; capacity as usize];
        let backend = Backend::Sim {
            durable: vec![0u8; capacity as usize],
            pending: HashMap::new(),
            dirty: std::collections::HashSet::new(),
        };
        let mut region = Region::assemble(capacity, buf, arenas, backend);
        region.write_header();
        region.flush(0, HEADER_SIZE)?;
        region.fence();
        region.reset_stats();
        Ok(region)
    }

    /// Creates (or truncates) a file-backed region at `path`.
    pub fn create_file(path: &Path, capacity: u64, layout: &RegionLayout) -> Result<Region> {
        let arenas = layout.place(capacity)?;
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        file.set_len(capacity)?;
        let buf = vec![0u8; capacity as usize];
        let mut region = Region::assemble(capacity, buf, arenas, Backend::File { file });
        region.write_header();
        region.flush(0, HEADER_SIZE)?;
        region.fence();
        region.reset_stats();
        Ok(region)
    }

    /// Opens an existing file-backed region, validating the header.
    pub fn open_file(path: &Path) -> Result<Region> {
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        let len = file.metadata()?.len();
        let mut buf = vec![0u8; len as usize];
        file.read_exact_at(&mut buf, 0)?;
        let (capacity, arenas) = Region::parse_header(&buf)?;
        Ok(Region::assemble(
            capacity,
            buf,
            arenas,
            Backend::File { file },
        ))
    }

    /// Builds a simulated-crash region from a raw image (used to materialize
    /// crash states; the image becomes both the buffer and the durable copy).
    pub fn from_image(image: Vec<u8>) -> Result<Region> {
        let (capacity, arenas) = Region::parse_header(&image)?;
        let backend = Backend::Sim {
            durable: image.clone(),
            pending: HashMap::new(),
            dirty: std::collections::HashSet::new(),
        };
        Ok(Region::assemble(capacity, image, arenas, backend))
    }

    fn assemble(capacity: u64, buf: Vec<u8>, arenas: Vec<Arena>, backend: Backend) -> Region {
        let lines = capacity / LINE_SIZE;
        let words = lines.div_ceil(64) as usize;
        Region {
            capacity,
            buf,
            stage: None,
            arenas,
            backend,
            counters: Counters {
                distinct_bits: vec![0; words],
                ..Counters::default()
            },
            armed: None,
        }
    }

    fn write_header(&mut self) {
        self.buf[0..8].copy_from_slice(&MAGIC);
        self.buf[8..16].copy_from_slice(&self.capacity.to_le_bytes());
        for (i, arena) in self.arenas.iter().enumerate() {
            let at = 16 + 24 * i;
            self.buf[at..at + 4].copy_from_slice(&(arena.id as u32).to_le_bytes());
            self.buf[at + 8..at + 16].copy_from_slice(&arena.base.to_le_bytes());
            self.buf[at + 16..at + 24].copy_from_slice(&arena.len.to_le_bytes());
            // Flags word (offset +4) stays zero: arena not yet initialized.
        }
    }

    fn parse_header(buf: &[u8]) -> Result<(u64, Vec<Arena>)> {
        if buf.len() < HEADER_SIZE as usize {
            return Err(Error::BadImage(format!(
                "image is {} bytes, smaller than the {HEADER_SIZE}-byte header",
                buf.len()
            )));
        }
        if buf[0..8] != MAGIC {
            return Err(Error::BadImage("bad magic".into()));
        }
        let capacity = u64::from_le_bytes(buf[8..16].try_into().unwrap());
        if capacity as usize != buf.len() {
            return Err(Error::BadImage(format!(
                "header declares {capacity} bytes but the image holds {}",
                buf.len()
            )));
        }
        if capacity % DEVICE_BLOCK != 0 || capacity < MIN_CAPACITY {
            return Err(Error::BadImage(format!("implausible capacity {capacity}")));
        }
        let mut arenas: Vec<Arena> = Vec::new();
        let mut expected_base = HEADER_SIZE;
        for i in 0..MAX_ARENAS {
            let at = 16 + 24 * i;
            let raw_id = u32::from_le_bytes(buf[at..at + 4].try_into().unwrap());
            if raw_id == 0 {
                continue;
            }
            let id = ArenaId::from_u32(raw_id)
                .ok_or_else(|| Error::BadImage(format!("unknown arena id {raw_id}")))?;
            let flags = u32::from_le_bytes(buf[at + 4..at + 8].try_into().unwrap());
            let base = u64::from_le_bytes(buf[at + 8..at + 16].try_into().unwrap());
            let len = u64::from_le_bytes(buf[at + 16..at + 24].try_into().unwrap());
            if base != expected_base || len == 0 || len % DEVICE_BLOCK != 0 || base + len > capacity
            {
                return Err(Error::BadImage(format!(
                    "arena `{}` has inconsistent geometry (base {base}, len {len})",
                    id.name()
                )));
            }
            if arenas.iter().any(|a| a.id == id) {
                return Err(Error::BadImage(format!("duplicate arena `{}`", id.name())));
            }
            expected_base = base + len;
            let mut arena = Arena::new(id, base, len);
            arena.init = flags & 1 != 0;
            // Refuse allocation in initialized arenas until reconstruction
            // rebuilds the cursor and free list.
            arena.cursor = if arena.init { len } else { 0 };
            arenas.push(arena);
        }
        if arenas.is_empty() {
            return Err(Error::BadImage("arena table is empty".into()));
        }
        Ok((capacity, arenas))
    }

    // ------------------------------------------------------------------
    // Geometry and introspection
    // ------------------------------------------------------------------

    /// Total region size in bytes.
    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Number of cache lines in the region.
    pub fn line_count(&self) -> u64 {
        self.capacity / LINE_SIZE
    }

    /// Which backend this region runs on.
    pub fn backend_kind(&self) -> BackendKind {
        match self.backend {
            Backend::Sim { .. } => BackendKind::SimulatedCrash,
            Backend::File { .. } => BackendKind::FileBacked,
        }
    }

    /// Placement and state of an arena, if present.
    pub fn arena(&self, id: ArenaId) -> Option<ArenaInfo> {
        self.arenas.iter().find(|a| a.id == id).map(|a| ArenaInfo {
            id: a.id,
            base: a.base,
            len: a.len,
            init: a.init,
            high_water: a.cursor,
            free_slots: a.free.len() as u64,
        })
    }

    fn arena_mut(&mut self, id: ArenaId) -> Result<&mut Arena> {
        self.arenas
            .iter_mut()
            .find(|a| a.id == id)
            .ok_or_else(|| Error::OutOfBounds(format!("region has no `{}` arena", id.name())))
    }

    fn arena_ref(&self, id: ArenaId) -> Result<&Arena> {
        self.arenas
            .iter()
            .find(|a| a.id == id)
            .ok_or_else(|| Error::OutOfBounds(format!("region has no `{}` arena", id.name())))
    }

    /// True once [`Region::set_init_flag`] has run for this arena.
    pub fn init_flag(&self, id: ArenaId) -> Result<bool> {
        Ok(self.arena_ref(id)?.init)
    }

    /// Marks an arena initialized in the header. The caller must flush the
    /// returned `(offset, len)` span and fence to make the flag durable.
    pub fn set_init_flag(&mut self, id: ArenaId) -> Result<(u64, u64)> {
        let idx =
            self.arenas.iter().position(|a| a.id == id).ok_or_else(|| {
                Error::OutOfBounds(format!("region has no `{}` arena", id.name()))
            })?;
        self.arenas[idx].init = true;
        let at = 16 + 24 * idx as u64 + 4;
        self.raw_write(at, &1u32.to_le_bytes());
        Ok((at, 4))
    }

    // ------------------------------------------------------------------
    // Checkpoint staging
    // ------------------------------------------------------------------

    /// Switches the region into checkpoint mode: subsequent reads and writes
    /// target a volatile mirror, and `flush` copies the affected lines from
    /// the mirror into the modeled device buffer.
    pub fn enable_staging(&mut self) {
        if self.stage.is_none() {
            self.stage = Some(self.buf.clone());
        }
    }

    /// True when a checkpoint mirror is active.
    pub fn staging_enabled(&self) -> bool {
        self.stage.is_some()
    }

    // ------------------------------------------------------------------
    // Reads and writes
    // ------------------------------------------------------------------

    fn check_range(&self, off: u64, len: u64) -> Result<()> {
        if off.checked_add(len).is_none_or(|end| end > self.capacity) {
            return Err(Error::OutOfBounds(format!(
                "range [{off}, {off}+{len}) exceeds capacity {}",
                self.capacity
            )));
        }
        Ok(())
    }

    fn check_arena_range(&self, off: u64, len: u64) -> Result<()> {
        if self.arenas.iter().any(|a| a.contains(off, len)) {
            Ok(())
        } else {
            Err(Error::OutOfBounds(format!(
                "range [{off}, {off}+{len}) does not lie within a single arena"
            )))
        }
    }

    fn raw_write(&mut self, off: u64, bytes: &[u8]) {
        let (start, end) = (off as usize, off as usize + bytes.len());
        match &mut self.stage {
            Some(stage) => stage[start..end].copy_from_slice(bytes),
            None => {
                self.buf[start..end].copy_from_slice(bytes);
                if let Backend::Sim { dirty, .. } = &mut self.backend {
                    for line in line_span(off, bytes.len() as u64) {
                        dirty.insert(line);
                    }
                }
            }
        }
    }

    /// Writes `bytes` at `off`. The range must lie within one arena. The
    /// write is volatile until the covering lines are flushed and fenced.
    pub fn write(&mut self, off: u64, bytes: &[u8]) -> Result<()> {
        self.check_arena_range(off, bytes.len() as u64)?;
        self.raw_write(off, bytes);
        Ok(())
    }

    /// Reads `len` bytes at `off` from the current (volatile) view.
    pub fn read(&self, off: u64, len: u64) -> Result<&[u8]> {
        self.check_range(off, len)?;
        let view = self.stage.as_deref().unwrap_or(&self.buf);
        Ok(&view[off as usize..(off + len) as usize])
    }

    /// Little-endian u64 at `off`.
    pub fn read_u64(&self, off: u64) -> Result<u64> {
        Ok(u64::from_le_bytes(self.read(off, 8)?.try_into().unwrap()))
    }

    /// Little-endian u32 at `off`.
    pub fn read_u32(&self, off: u64) -> Result<u32> {
        Ok(u32::from_le_bytes(self.read(off, 4)?.try_into().unwrap()))
    }

    /// Little-endian i64 at `off`.
    pub fn read_i64(&self, off: u64) -> Result<i64> {
        Ok(i64::from_le_bytes(self.read(off, 8)?.try_into().unwrap()))
    }

    /// Writes a little-endian u64.
    pub fn write_u64(&mut self, off: u64, value: u64) -> Result<()> {
        self.write(off, &value.to_le_bytes())
    }

    /// Writes a little-endian u32.
    pub fn write_u32(&mut self, off: u64, value: u32) -> Result<()> {
        self.write(off, &value.to_le_bytes())
    }

    /// Writes a little-endian i64.
    pub fn write_i64(&mut self, off: u64, value: i64) -> Result<()> {
        self.write(off, &value.to_le_bytes())
    }

    // ------------------------------------------------------------------
    // Durability
    // ------------------------------------------------------------------

    /// Flushes every cache line covering `[off, off+len)`.
    ///
    /// Accounting charges one line flush per covered line, even when the same
    /// line is flushed repeatedly. On the simulated backend the line contents
    /// enter the pending set; on the file backend they are written to the
    /// file (durable only after the next [`Region::fence`]).
    pub fn flush(&mut self, off: u64, len: u64) -> Result<()> {
        if len == 0 {
            return Err(Error::OutOfBounds("cannot flush an empty range".into()));
        }
        self.check_range(off, len)?;
        let started = Instant::now();
        let first = off / LINE_SIZE;
        let last = (off + len - 1) / LINE_SIZE;
        if let Some(stage) = &self.stage {
            let (s, e) = (
                (first * LINE_SIZE) as usize,
                ((last + 1) * LINE_SIZE) as usize,
            );
            self.buf[s..e].copy_from_slice(&stage[s..e]);
        }
        for line in first..=last {
            self.counters.line_flushes += 1;
            self.counters.mark_distinct(line);
        }
        match &mut self.backend {
            Backend::Sim { pending, dirty, .. } => {
                for line in first..=last {
                    let s = (line * LINE_SIZE) as usize;
                    let mut snap = [0u8; LINE_SIZE as usize];
                    snap.copy_from_slice(&self.buf[s..s + LINE_SIZE as usize]);
                    pending.insert(line, snap);
                    dirty.remove(&line);
                }
            }
            Backend::File { file } => {
                let (s, e) = (
                    (first * LINE_SIZE) as usize,
                    ((last + 1) * LINE_SIZE) as usize,
                );
                file.write_all_at(&self.buf[s..e], first * LINE_SIZE)?;
            }
        }
        self.counters.flush_calls += 1;
        self.counters.flush_time += started.elapsed();
        self.maybe_take_snapshot(
            |t, c| matches!(t, CrashTrigger::AfterFlushCall(k) if *k == c.flush_calls),
        );
        Ok(())
    }

    /// Ordering fence: everything flushed so far becomes durable.
    pub fn fence(&mut self) {
        let started = Instant::now();
        match &mut self.backend {
            Backend::Sim {
                durable, pending, ..
            } => {
                for (line, snap) in pending.drain() {
                    let s = (line * LINE_SIZE) as usize;
                    durable[s..s + LINE_SIZE as usize].copy_from_slice(&snap);
                }
            }
            Backend::File { file } => {
                // A failed sync would mean durability is unknown; surfacing it
                // as a panic is better than silently continuing the model.
                file.sync_data().expect("file sync failed");
            }
        }
        self.counters.fences += 1;
        self.counters.flush_time += started.elapsed();
        self.maybe_take_snapshot(
            |t, c| matches!(t, CrashTrigger::AfterFenceIndex(k) if *k == c.fences),
        );
    }

    fn maybe_take_snapshot(&mut self, hit: impl Fn(&CrashTrigger, &Counters) -> bool) {
        let fire = match &self.armed {
            Some(armed) if armed.image.is_none() => hit(&armed.trigger, &self.counters),
            _ => false,
        };
        if fire {
            let policy = self.armed.as_ref().unwrap().policy;
            let image = self
                .compose_crash_image(policy)
                .expect("crash snapshot requires the simulated backend");
            self.armed.as_mut().unwrap().image = Some(image);
        }
    }

    fn compose_crash_image(&self, policy: CrashPolicy) -> Result<Vec<u8>> {
        let Backend::Sim {
            durable, pending, ..
        } = &self.backend
        else {
            return Err(Error::Unsupported(
                "crash simulation requires the simulated backend".into(),
            ));
        };
        let mut image = durable.clone();
        let mut apply = |line: u64, snap: &[u8; LINE_SIZE as usize]| {
            let s = (line * LINE_SIZE) as usize;
            image[s..s + LINE_SIZE as usize].copy_from_slice(snap);
        };
        match policy {
            CrashPolicy::KeepAllPending => {
                for (line, snap) in pending {
                    apply(*line, snap);
                }
            }
            CrashPolicy::DropAllPending => {}
            CrashPolicy::RandomSubset(seed) => {
                let mut lines: Vec<u64> = pending.keys().copied().collect();
                lines.sort_unstable();
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                for line in lines {
                    if rng.gen_bool(0.5) {
                        apply(line, &pending[&line]);
                    }
                }
            }
        }
        Ok(image)
    }

    /// Materializes the region a crash at this instant could leave behind:
    /// the durable image plus pending lines selected by `policy`. The source
    /// region is not modified. Simulated backend only.
    pub fn simulate_crash(&self, policy: CrashPolicy) -> Result<Region> {
        Region::from_image(self.compose_crash_image(policy)?)
    }

    /// Arms a crash snapshot to be captured when `trigger` is hit. Simulated
    /// backend only; retrieve the result with [`Region::take_armed_crash`].
    pub fn arm_crash(&mut self, trigger: CrashTrigger, policy: CrashPolicy) -> Result<()> {
        if self.backend_kind() != BackendKind::SimulatedCrash {
            return Err(Error::Unsupported(
                "crash simulation requires the simulated backend".into(),
            ));
        }
        self.armed = Some(ArmedCrash {
            trigger,
            policy,
            image: None,
        });
        Ok(())
    }

    /// True once an armed trigger has fired.
    pub fn armed_crash_fired(&self) -> bool {
        matches!(&self.armed, Some(a) if a.image.is_some())
    }

    /// Takes the captured crash region, if the trigger has fired.
    pub fn take_armed_crash(&mut self) -> Result<Option<Region>> {
        match self.armed.as_mut().and_then(|a| a.image.take()) {
            Some(image) => {
                self.armed = None;
                Ok(Some(Region::from_image(image)?))
            }
            None => Ok(None),
        }
    }

    /// Removes any armed crash trigger.
    pub fn disarm_crash(&mut self) {
        self.armed = None;
    }

    // ------------------------------------------------------------------
    // Allocation
    // ------------------------------------------------------------------

    /// Allocates `size` bytes aligned to `align` from an arena, preferring
    /// the volatile free list when slot sizes match, else bumping the cursor.
    /// Returns the absolute region offset.
    pub fn alloc(&mut self, id: ArenaId, size: u64, align: u64) -> Result<u64> {
        if size == 0 || align == 0 || !align.is_power_of_two() || align > DEVICE_BLOCK {
            return Err(Error::BadGeometry(format!(
                "bad allocation request: size {size}, align {align}"
            )));
        }
        let arena = self.arena_mut(id)?;
        if arena.slot_size == Some(size) {
            if let Some(off) = arena.free.pop() {
                return Ok(off);
            }
        }
        if arena.slot_size.is_none() {
            arena.slot_size = Some(size);
        }
        let abs = arena.base + arena.cursor;
        let aligned = abs.div_ceil(align) * align;
        let new_cursor = aligned - arena.base + size;
        if new_cursor > arena.len {
            return Err(Error::ArenaExhausted {
                arena: id.name(),
                detail: format!(
                    "need {size} bytes but only {} of {} remain",
                    arena.len - arena.cursor.min(arena.len),
                    arena.len
                ),
            });
        }
        arena.cursor = new_cursor;
        Ok(aligned)
    }

    /// Returns a slot to the arena's volatile free list.
    pub fn free(&mut self, id: ArenaId, off: u64) -> Result<()> {
        let arena = self.arena_mut(id)?;
        if off < arena.base || off >= arena.base + arena.len {
            return Err(Error::OutOfBounds(format!(
                "offset {off} is not inside arena `{}`",
                id.name()
            )));
        }
        arena.free.push(off);
        Ok(())
    }

    /// Replaces an arena's volatile allocation state. Reconstruction uses
    /// this to install the recovered high-water mark and free list.
    pub fn reset_arena_runtime(
        &mut self,
        id: ArenaId,
        cursor: u64,
        free: Vec<u64>,
        slot_size: Option<u64>,
    ) -> Result<()> {
        let arena = self.arena_mut(id)?;
        if cursor > arena.len {
            return Err(Error::OutOfBounds(format!(
                "cursor {cursor} exceeds arena `{}` length {}",
                id.name(),
                arena.len
            )));
        }
        arena.cursor = cursor;
        arena.free = free;
        arena.slot_size = slot_size;
        Ok(())
    }

    // ------------------------------------------------------------------
    // Statistics and test inspection
    // ------------------------------------------------------------------

    /// Snapshot of the flush/fence counters. `ops` and `wall` are zero; the
    /// benchmark driver fills them in.
    pub fn stats(&self) -> RunStats {
        RunStats {
            ops: 0,
            line_flushes: self.counters.line_flushes,
            flush_calls: self.counters.flush_calls,
            distinct_lines_flushed: self.counters.distinct,
            fences: self.counters.fences,
            wall: Duration::ZERO,
            flush_time: self.counters.flush_time,
        }
    }

    /// Zeroes all counters.
    pub fn reset_stats(&mut self) {
        self.counters.line_flushes = 0;
        self.counters.flush_calls = 0;
        self.counters.fences = 0;
        self.counters.distinct = 0;
        self.counters.distinct_bits.iter_mut().for_each(|w| *w = 0);
        self.counters.flush_time = Duration::ZERO;
    }

    /// Lines written to the device buffer but not yet flushed (simulated
    /// backend, direct mode only). Sorted.
    pub fn dirty_lines(&self) -> Result<Vec<u64>> {
        match &self.backend {
            Backend::Sim { dirty, .. } => {
                let mut v: Vec<u64> = dirty.iter().copied().collect();
                v.sort_unstable();
                Ok(v)
            }
            Backend::File { .. } => Err(Error::Unsupported(
                "dirty-line tracking requires the simulated backend".into(),
            )),
        }
    }

    /// Lines flushed but not yet fenced (simulated backend only). Sorted.
    pub fn pending_lines(&self) -> Result<Vec<u64>> {
        match &self.backend {
            Backend::Sim { pending, .. } => {
                let mut v: Vec<u64> = pending.keys().copied().collect();
                v.sort_unstable();
                Ok(v)
            }
            Backend::File { .. } => Err(Error::Unsupported(
                "pending-line tracking requires the simulated backend".into(),
            )),
        }
    }

    /// Reads from the durable image (simulated backend only).
    pub fn durable(&self, off: u64, len: u64) -> Result<&[u8]> {
        self.check_range(off, len)?;
        match &self.backend {
            Backend::Sim { durable, .. } => Ok(&durable[off as usize..(off + len) as usize]),
            Backend::File { .. } => Err(Error::Unsupported(
                "durable-image inspection requires the simulated backend".into(),
            )),
        }
    }
}

fn line_span(off: u64, len: u64) -> std::ops::RangeInclusive<u64> {
    debug_assert!(len > 0);
    off / LINE_SIZE..=(off + len - 1) / LINE_SIZE
}

/// Operation-local set of dirty cache lines.
///
/// The recoverable structures note every persistent write here and flush the
/// noted lines once at the end of the operation, in first-touch order, one
/// `flush` call per line. Within one operation a line is flushed at most
/// once, no matter how many fields on it changed; across operations the same
/// line is charged again, matching the hardware cost model.
#[derive(Debug, Default)]
pub struct TouchSet {
    seen: std::collections::HashSet<u64>,
    order: Vec<u64>,
}

impl TouchSet {
    /// Creates an empty set.
    pub fn new() -> Self {
        Self::default()
    }

    /// Notes that `[off, off+len)` changed and must be flushed.
    pub fn note(&mut self, off: u64, len: u64) {
        for line in line_span(off, len) {
            if self.seen.insert(line) {
                self.order.push(line);
            }
        }
    }

    /// Number of distinct lines noted so far in this operation.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    /// True when no line has been noted.
    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Flushes every noted line in first-touch order and clears the set.
    pub fn flush_into(&mut self, region: &mut Region) -> Result<()> {
        for &line in &self.order {
            region.flush(line * LINE_SIZE, LINE_SIZE)?;
        }
        self.order.clear();
        self.seen.clear();
        Ok(())
    }

    /// Drops all noted lines without flushing (used on operation failure).
    pub fn clear(&mut self) {
        self.order.clear();
        self.seen.clear();
    }
}
