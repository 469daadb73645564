//! Crash-injection harness.
//!
//! Replays a deterministic workload against a recoverable structure on the
//! simulated backend, crashes it at a chosen flush/fence index (or at every
//! operation boundary), reconstructs from the crash image, and compares the
//! recovered content against an independent in-memory reference replayed to
//! the last completed operation.
//!
//! Crash points are indexed by fence/flush-call count — never wall time — so
//! identical `(spec, plan)` pairs always produce identical verdicts. Counts
//! start at the beginning of the measured phase (after setup and initial
//! population), and a fence lands exactly at an operation boundary under the
//! default per-op fence policy, so `AfterFenceIndex(k)` is a *boundary*
//! crash: recovery must match the reference exactly, and a corruption error
//! is a failure. `AfterFlushIndex(k)` lands in the middle of an operation,
//! where the structure is allowed to recover to either side of the torn
//! operation or to refuse loudly; only *silent divergence* — recovering to
//! a state that matches neither — fails a mid-operation crash.
//!
//! The reference models are plain standard-library containers sharing no
//! code with the recoverable structures beyond key/value types.

use std::collections::{BTreeMap, HashMap};

use crate::bptree::{self, BPlusTree};
use crate::error::{Error, Result};
use crate::hashmap::{self, recovered_bucket_count, Hashmap};
use crate::list::{self, List};
use crate::region::{
    ArenaId, CrashPolicy, CrashTrigger, Region, RegionLayout, DEVICE_BLOCK, HEADER_SIZE,
};
use crate::workload::{generate, Op, OpMix, Structure, Trace};
use crate::{FencePolicy, Mode};

/// Sweeps refuse to enumerate more boundaries than this.
pub const MAX_SWEEP_BOUNDARIES: u64 = 100_000;

/// A complete, reproducible workload description.
#[derive(Debug, Clone, Copy)]
pub struct WorkloadSpec {
    pub structure: Structure,
    pub mode: Mode,
    pub op_mix: OpMix,
    pub op_count: u64,
    pub init_count: u64,
    pub seed: u64,
}

impl WorkloadSpec {
    /// Generates this spec's operation trace (deterministic in the seed).
    pub fn trace(&self) -> Result<Trace> {
        generate(self.op_mix, self.op_count, self.init_count, self.seed)
    }
}

/// Structure-specific knobs that are not part of the workload identity.
#[derive(Debug, Clone, Copy)]
pub struct Tuning {
    /// Hashmap load factor.
    pub load_factor: f64,
    /// B+tree reconstruction fanout.
    pub bucket_size: usize,
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning {
            load_factor: 0.75,
            bucket_size: bptree::DEFAULT_BUCKET_SIZE,
        }
    }
}

/// Sizes a region for one structure holding up to `peak_entries` live
/// entries at once; returns the layout and the total capacity to request.
pub fn plan_layout(
    structure: Structure,
    peak_entries: u64,
    load_factor: f64,
) -> (RegionLayout, u64) {
    let block = |bytes: u64| bytes.max(1).div_ceil(DEVICE_BLOCK) * DEVICE_BLOCK;
    let arenas: Vec<(ArenaId, u64)> = match structure {
        Structure::List => vec![
            (ArenaId::ListHeader, DEVICE_BLOCK),
            (
                ArenaId::ListNodes,
                block((peak_entries + 8) * list::SLOT_SIZE),
            ),
        ],
        Structure::BPlusTree => {
            // Leaves hold at least 9 keys outside the root, and the internal
            // levels of the fully persistent baseline add at most 1/8 again;
            // the flat slack absorbs tiny trees and in-flight splits.
            let node_slots = peak_entries / 8 + 48;
            vec![
                (ArenaId::TreeHeader, DEVICE_BLOCK),
                (ArenaId::TreeNodes, block(node_slots * bptree::NODE_SIZE)),
                (
                    ArenaId::TreeRecords,
                    block((peak_entries + 8) * bptree::RECORD_SIZE),
                ),
            ]
        }
        Structure::Hashmap => {
            let buckets = recovered_bucket_count(peak_entries, load_factor).max(16);
            vec![
                (ArenaId::MapHeader, DEVICE_BLOCK),
                (
                    ArenaId::MapEntries,
                    block((peak_entries + 8) * hashmap::SLOT_SIZE),
                ),
                (ArenaId::MapBuckets, block(buckets * 8)),
            ]
        }
    };
    let capacity = HEADER_SIZE + arenas.iter().map(|&(_, len)| len).sum::<u64>();
    let mut layout = RegionLayout::new();
    for (id, len) in arenas {
        layout = layout.with(id, len);
    }
    (layout, capacity)
}

/// Recovered or reference content of a structure, in comparable form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Content {
    /// List payload words in list order.
    Words(Vec<u64>),
    /// Tree/map `(key, word)` pairs in ascending key order.
    Pairs(Vec<(u64, u64)>),
}

impl Content {
    /// Number of live entries.
    pub fn len(&self) -> usize {
        match self {
            Content::Words(w) => w.len(),
            Content::Pairs(p) => p.len(),
        }
    }

    /// True when no entries are live.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Locates the first difference against `want`, for divergence reports.
    pub(crate) fn first_divergence(&self, want: &Content) -> String {
        match (self, want) {
            (Content::Words(got), Content::Words(want)) => {
                for (i, (g, w)) in got.iter().zip(want).enumerate() {
                    if g != w {
                        return format!("position {i}: recovered word {g}, expected {w}");
                    }
                }
                format!("recovered {} entries, expected {}", got.len(), want.len())
            }
            (Content::Pairs(got), Content::Pairs(want)) => {
                for (i, (g, w)) in got.iter().zip(want).enumerate() {
                    if g != w {
                        return format!(
                            "entry {i}: recovered {}={}, expected {}={}",
                            g.0, g.1, w.0, w.1
                        );
                    }
                }
                format!("recovered {} entries, expected {}", got.len(), want.len())
            }
            _ => "content kinds differ".into(),
        }
    }
}

/// Independent reference model: plain standard-library containers.
#[derive(Debug, Clone)]
pub enum RefModel {
    List(Vec<(u64, u64)>),
    Tree(BTreeMap<u64, u64>),
    Map(HashMap<u64, u64>),
}

impl RefModel {
    /// An empty model for the given structure kind.
    pub fn new(structure: Structure) -> RefModel {
        match structure {
            Structure::List => RefModel::List(Vec::new()),
            Structure::BPlusTree => RefModel::Tree(BTreeMap::new()),
            Structure::Hashmap => RefModel::Map(HashMap::new()),
        }
    }

    /// Applies one trace operation. Traces only delete live keys and only
    /// insert fresh ones, so this cannot fail on a well-formed trace.
    pub fn apply(&mut self, op: &Op) {
        match (self, *op) {
            (RefModel::List(seq), Op::Insert { key, word }) => seq.push((key, word)),
            (RefModel::List(seq), Op::Delete { key }) => {
                let i = seq
                    .iter()
                    .position(|&(k, _)| k == key)
                    .expect("delete of a dead key");
                seq.remove(i);
            }
            (RefModel::Tree(map), Op::Insert { key, word }) => {
                map.insert(key, word);
            }
            (RefModel::Tree(map), Op::Delete { key }) => {
                map.remove(&key);
            }
            (RefModel::Map(map), Op::Insert { key, word }) => {
                map.insert(key, word);
            }
            (RefModel::Map(map), Op::Delete { key }) => {
                map.remove(&key);
            }
        }
    }

    /// Current content in comparable form.
    pub fn content(&self) -> Content {
        match self {
            RefModel::List(seq) => Content::Words(seq.iter().map(|&(_, w)| w).collect()),
            RefModel::Tree(map) => Content::Pairs(map.iter().map(|(&k, &w)| (k, w)).collect()),
            RefModel::Map(map) => {
                let mut pairs: Vec<(u64, u64)> = map.iter().map(|(&k, &w)| (k, w)).collect();
                pairs.sort_unstable();
                Content::Pairs(pairs)
            }
        }
    }
}

/// A recoverable structure plus the driver-side bookkeeping needed to apply
/// abstract trace operations to it.
#[derive(Debug)]
pub enum Driver {
    /// The list identifies elements by node offset, so the driver keeps a
    /// volatile key → node map. It is *not* rebuilt by [`Driver::recover`]:
    /// a recovered list driver serves content extraction, not keyed deletes.
    List {
        list: List,
        nodes: HashMap<u64, u64>,
    },
    Tree(BPlusTree),
    Map(Hashmap),
}

impl Driver {
    /// Initializes a fresh structure in `region`.
    pub fn init(
        region: &mut Region,
        structure: Structure,
        mode: Mode,
        tuning: Tuning,
    ) -> Result<Driver> {
        Ok(match structure {
            Structure::List => Driver::List {
                list: List::init(region, mode)?,
                nodes: HashMap::new(),
            },
            Structure::BPlusTree => Driver::Tree(BPlusTree::init(region, mode)?),
            Structure::Hashmap => Driver::Map(Hashmap::init(region, mode, 0, tuning.load_factor)?),
        })
    }

    /// Reconstructs the structure from a (crashed or reopened) region.
    pub fn recover(
        region: &mut Region,
        structure: Structure,
        mode: Mode,
        tuning: Tuning,
    ) -> Result<Driver> {
        Ok(match structure {
            Structure::List => Driver::List {
                list: List::reconstruct(region, mode)?,
                nodes: HashMap::new(),
            },
            Structure::BPlusTree => {
                Driver::Tree(BPlusTree::reconstruct(region, mode, tuning.bucket_size)?)
            }
            Structure::Hashmap => {
                Driver::Map(Hashmap::reconstruct(region, mode, tuning.load_factor)?)
            }
        })
    }

    /// Applies one trace operation.
    pub fn apply(&mut self, region: &mut Region, op: &Op) -> Result<()> {
        match (self, *op) {
            (Driver::List { list, nodes }, Op::Insert { key, word }) => {
                let node = list.append_word(region, word)?;
                nodes.insert(key, node);
                Ok(())
            }
            (Driver::List { list, nodes }, Op::Delete { key }) => {
                let node = nodes
                    .remove(&key)
                    .ok_or_else(|| Error::Key(format!("list key {key} has no node")))?;
                list.delete(region, node)
            }
            (Driver::Tree(tree), Op::Insert { key, word }) => {
                tree.insert_word(region, key as i64, word)
            }
            (Driver::Tree(tree), Op::Delete { key }) => tree.delete(region, key as i64),
            (Driver::Map(map), Op::Insert { key, word }) => {
                map.put_word(region, key, word).map(|_| ())
            }
            (Driver::Map(map), Op::Delete { key }) => map.remove(region, key),
        }
    }

    /// Current content in comparable form.
    pub fn content(&self, region: &Region) -> Result<Content> {
        Ok(match self {
            Driver::List { list, .. } => Content::Words(list.words(region)?),
            Driver::Tree(tree) => Content::Pairs(
                tree.key_words(region)?
                    .into_iter()
                    .map(|(k, w)| (k as u64, w))
                    .collect(),
            ),
            Driver::Map(map) => {
                let mut pairs = map.word_pairs(region)?;
                pairs.sort_unstable();
                Content::Pairs(pairs)
            }
        })
    }

    /// Replaces the fence policy on the underlying structure.
    pub fn set_fence_policy(&mut self, fence: FencePolicy) {
        match self {
            Driver::List { list, .. } => list.set_fence_policy(fence),
            Driver::Tree(tree) => tree.set_fence_policy(fence),
            Driver::Map(map) => map.set_fence_policy(fence),
        }
    }

    /// Issues the trailing fence for a batched fence policy.
    pub fn finish(&mut self, region: &mut Region) {
        match self {
            Driver::List { list, .. } => list.finish(region),
            Driver::Tree(tree) => tree.finish(region),
            Driver::Map(map) => map.finish(region),
        }
    }

    /// Injects a bug into volatile/staged state — never flushed, so a crash
    /// must erase it entirely. Checkpoint mode only: in the direct modes a
    /// stray write lands in the persistent buffer itself, where the next
    /// unrelated flush of that line could carry it to the device.
    pub fn inject_volatile_bug(
        &mut self,
        region: &mut Region,
        bug: VolatileBug,
        position_seed: u64,
    ) -> Result<()> {
        use rand::{Rng, SeedableRng};
        let mode = match self {
            Driver::List { list, .. } => list.mode(),
            Driver::Tree(_) => {
                // The tree handle does not expose its mode; staging tells us.
                if region.staging_enabled() {
                    Mode::PartlyCheckpoint
                } else {
                    Mode::PartlyDirect
                }
            }
            Driver::Map(map) => map.mode(),
        };
        if mode != Mode::PartlyCheckpoint {
            return Err(Error::Unsupported(
                "volatile bug injection needs checkpoint mode; direct modes write through".into(),
            ));
        }
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(position_seed);
        let pick = |rng: &mut rand_chacha::ChaCha12Rng, items: &[u64]| -> Result<u64> {
            if items.is_empty() {
                return Err(Error::InvalidConfig(
                    "structure is empty; nothing to corrupt".into(),
                ));
            }
            Ok(items[rng.gen_range(0..items.len())])
        };
        match (self, bug) {
            (Driver::List { nodes, .. }, VolatileBug::SelfLoopNext) => {
                let mut all: Vec<u64> = nodes.values().copied().collect();
                all.sort_unstable();
                let node = pick(&mut rng, &all)?;
                region.write_u64(list::node_next_offset(node), node)
            }
            (Driver::List { nodes, .. }, VolatileBug::ScrambledPrev) => {
                let mut all: Vec<u64> = nodes.values().copied().collect();
                all.sort_unstable();
                let node = pick(&mut rng, &all)?;
                region.write_u64(list::node_prev_offset(node), rng.gen())
            }
            (Driver::List { list, .. }, VolatileBug::DanglingTail) => {
                list.corrupt_tail_handle(rng.gen());
                Ok(())
            }
            (Driver::Tree(tree), VolatileBug::SelfLoopNext) => {
                let slot = pick(&mut rng, &tree.leaf_slots())?;
                region.write_u32(
                    bptree::leaf_next_offset(slot),
                    (slot / crate::region::LINE_SIZE) as u32,
                )
            }
            (Driver::Tree(tree), VolatileBug::ScrambledPrev) => {
                tree.scramble_mirror_parents();
                Ok(())
            }
            (Driver::Tree(tree), VolatileBug::DanglingTail) => {
                tree.corrupt_mirror_root();
                Ok(())
            }
            (Driver::Map(map), VolatileBug::SelfLoopNext) => {
                let entry = pick(&mut rng, &map.entries_in_chain_order(region)?)?;
                region.write_u64(hashmap::entry_next_offset(entry), entry)
            }
            (Driver::Map(map), VolatileBug::WrongHashCache) => {
                let entry = pick(&mut rng, &map.entries_in_chain_order(region)?)?;
                region.write_u32(hashmap::entry_hash_offset(entry), rng.gen())
            }
            (Driver::Map(map), VolatileBug::DanglingTail) => {
                let bucket = rng.gen_range(0..map.bucket_count()) as usize;
                map.corrupt_bucket_head(bucket, rng.gen());
                Ok(())
            }
            (me @ Driver::List { .. }, VolatileBug::WrongHashCache)
            | (me @ Driver::Tree(_), VolatileBug::WrongHashCache)
            | (me @ Driver::Map(_), VolatileBug::ScrambledPrev) => {
                Err(Error::Unsupported(format!(
                    "{} has no {} to corrupt",
                    bug_structure_name(me),
                    bug.label()
                )))
            }
        }
    }
}

fn bug_structure_name(driver: &Driver) -> &'static str {
    match driver {
        Driver::List { .. } => "list",
        Driver::Tree(_) => "tree",
        Driver::Map(_) => "hashmap",
    }
}

/// A bug planted in volatile or staged state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolatileBug {
    /// A persistent-slot `next` link pointing at its own node (staged).
    SelfLoopNext,
    /// A reconstructed-on-recovery back link scribbled with garbage.
    ScrambledPrev,
    /// A cached hash value overwritten with a wrong one (staged).
    WrongHashCache,
    /// A volatile handle (tail pointer, bucket head, root) left dangling.
    DanglingTail,
}

impl VolatileBug {
    /// Stable label for reports.
    pub fn label(self) -> &'static str {
        match self {
            VolatileBug::SelfLoopNext => "self-loop-next",
            VolatileBug::ScrambledPrev => "scrambled-prev",
            VolatileBug::WrongHashCache => "wrong-hash-cache",
            VolatileBug::DanglingTail => "dangling-tail",
        }
    }
}

/// The bug kinds that apply to a given structure.
pub fn supported_bugs(structure: Structure) -> &'static [VolatileBug] {
    match structure {
        Structure::List => &[
            VolatileBug::SelfLoopNext,
            VolatileBug::ScrambledPrev,
            VolatileBug::DanglingTail,
        ],
        Structure::BPlusTree => &[
            VolatileBug::SelfLoopNext,
            VolatileBug::ScrambledPrev,
            VolatileBug::DanglingTail,
        ],
        Structure::Hashmap => &[
            VolatileBug::SelfLoopNext,
            VolatileBug::WrongHashCache,
            VolatileBug::DanglingTail,
        ],
    }
}

/// Where to crash during a replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    /// After the k-th fence of the measured phase (k = 0: before any).
    /// Fences land at operation boundaries, so this is a boundary crash.
    AfterFenceIndex(u64),
    /// After the k-th flush call of the measured phase (k = 0: before any).
    /// Flush calls happen mid-operation, before the closing fence.
    AfterFlushIndex(u64),
    /// Sweep: crash at every operation boundary and aggregate.
    EveryOpBoundary,
}

/// A crash point plus the pending-line policy applied at that instant.
#[derive(Debug, Clone, Copy)]
pub struct CrashPlan {
    pub crash_point: CrashPoint,
    pub policy: CrashPolicy,
}

/// Outcome of recovering one crash image.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// Recovered content equals the reference at `matched_ops` operations.
    Pass { matched_ops: u64 },
    /// Reconstruction refused the image with a loud error.
    DetectedCorruption { detail: String },
    /// Recovery produced content matching no acceptable reference state.
    SilentDivergence { detail: String },
}

impl Verdict {
    /// Stable label for reports.
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Pass { .. } => "pass",
            Verdict::DetectedCorruption { .. } => "detected-corruption",
            Verdict::SilentDivergence { .. } => "silent-divergence",
        }
    }
}

/// Result of one replay-and-crash run.
#[derive(Debug, Clone)]
pub struct CrashReport {
    pub structure: Structure,
    /// The fence/flush index that triggered the crash.
    pub crash_index: u64,
    /// True when the crash fell inside an operation.
    pub mid_operation: bool,
    /// Operations fully completed before the crash point.
    pub ops_before_crash: u64,
    pub verdict: Verdict,
}

impl CrashReport {
    /// Overall pass/fail: a boundary crash must recover exactly; a
    /// mid-operation crash may also refuse loudly.
    pub fn pass(&self) -> bool {
        match &self.verdict {
            Verdict::Pass { .. } => true,
            Verdict::DetectedCorruption { .. } => self.mid_operation,
            Verdict::SilentDivergence { .. } => false,
        }
    }
}

fn recover_and_judge(
    crashed: &mut Region,
    structure: Structure,
    mode: Mode,
    tuning: Tuning,
    acceptable: &[(u64, Content)],
) -> Verdict {
    let content =
        match Driver::recover(crashed, structure, mode, tuning).and_then(|d| d.content(crashed)) {
            Ok(content) => content,
            // Any loud recovery refusal counts as detected corruption; whether
            // that passes depends on the crash point, not on the error text.
            Err(e) => {
                return Verdict::DetectedCorruption {
                    detail: e.to_string(),
                }
            }
        };
    for (ops, want) in acceptable {
        if content == *want {
            return Verdict::Pass { matched_ops: *ops };
        }
    }
    let (_, closest) = &acceptable[acceptable.len() - 1];
    Verdict::SilentDivergence {
        detail: content.first_divergence(closest),
    }
}

/// Replays `spec` on a fresh simulated region, crashes per `plan`, recovers,
/// and verdicts the recovery. `EveryOpBoundary` delegates to
/// [`sweep_crash_points_with`] and summarizes (first failure wins).
pub fn replay_and_crash(spec: &WorkloadSpec, plan: &CrashPlan) -> Result<CrashReport> {
    let tuning = Tuning::default();
    if let CrashPoint::EveryOpBoundary = plan.crash_point {
        let sweep = sweep_crash_points_with(spec, plan.policy)?;
        let failed = sweep
            .rows
            .iter()
            .find(|r| !matches!(r.verdict, Verdict::Pass { .. }));
        return Ok(match failed {
            Some(row) => CrashReport {
                structure: spec.structure,
                crash_index: row.crash_index,
                mid_operation: false,
                ops_before_crash: row.crash_index,
                verdict: row.verdict.clone(),
            },
            None => CrashReport {
                structure: spec.structure,
                crash_index: sweep.boundaries,
                mid_operation: false,
                ops_before_crash: spec.op_count,
                verdict: Verdict::Pass {
                    matched_ops: spec.op_count,
                },
            },
        });
    }
    let trace = spec.trace()?;
    let (layout, capacity) = plan_layout(spec.structure, trace.peak_live, tuning.load_factor);
    let mut region = Region::create_sim(capacity, &layout)?;
    let mut driver = Driver::init(&mut region, spec.structure, spec.mode, tuning)?;
    let mut reference = RefModel::new(spec.structure);
    for &(key, word) in &trace.init {
        let op = Op::Insert { key, word };
        driver.apply(&mut region, &op)?;
        reference.apply(&op);
    }
    region.reset_stats();
    let (index, trigger, mid) = match plan.crash_point {
        CrashPoint::AfterFenceIndex(k) => (k, CrashTrigger::AfterFenceIndex(k), false),
        CrashPoint::AfterFlushIndex(k) => (k, CrashTrigger::AfterFlushCall(k), true),
        CrashPoint::EveryOpBoundary => unreachable!(),
    };
    if index == 0 {
        // Nothing from the measured phase can be durable yet.
        let mut crashed = region.simulate_crash(plan.policy)?;
        let verdict = recover_and_judge(
            &mut crashed,
            spec.structure,
            spec.mode,
            tuning,
            &[(0, reference.content())],
        );
        return Ok(CrashReport {
            structure: spec.structure,
            crash_index: 0,
            mid_operation: false,
            ops_before_crash: 0,
            verdict,
        });
    }
    region.arm_crash(trigger, plan.policy)?;
    let mut completed = 0u64;
    let mut crashed: Option<Region> = None;
    let mut acceptable: Vec<(u64, Content)> = Vec::new();
    for op in &trace.ops {
        driver.apply(&mut region, op)?;
        if region.armed_crash_fired() {
            crashed = Some(region.take_armed_crash()?.unwrap());
            if mid {
                // The interrupted operation may be wholly absent, wholly
                // present, or loudly refused.
                acceptable.push((completed, reference.content()));
                reference.apply(op);
                acceptable.push((completed + 1, reference.content()));
            } else {
                reference.apply(op);
                acceptable.push((completed + 1, reference.content()));
            }
            completed += 1;
            break;
        }
        reference.apply(op);
        completed += 1;
    }
    if crashed.is_none() {
        // A batched fence policy can hold the last fence until `finish`.
        driver.finish(&mut region);
        if region.armed_crash_fired() {
            crashed = Some(region.take_armed_crash()?.unwrap());
            acceptable.push((completed, reference.content()));
        }
    }
    let Some(mut crashed) = crashed else {
        let stats = region.stats();
        return Err(Error::InvalidConfig(format!(
            "crash index {index} lies beyond the trace ({} fences, {} flush calls)",
            stats.fences, stats.flush_calls
        )));
    };
    let verdict = recover_and_judge(&mut crashed, spec.structure, spec.mode, tuning, &acceptable);
    Ok(CrashReport {
        structure: spec.structure,
        crash_index: index,
        mid_operation: mid,
        ops_before_crash: acceptable[0].0,
        verdict,
    })
}

/// One probed boundary of a sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    /// Boundary index = fences since the measured phase began = operations
    /// completed (per-op fence policy).
    pub crash_index: u64,
    pub verdict: Verdict,
}

/// Aggregated result of a boundary sweep.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub structure: Structure,
    pub mode: Mode,
    /// Boundaries probed (one per operation).
    pub boundaries: u64,
    pub passes: u64,
    pub detected_corruptions: u64,
    pub silent_divergences: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// True when every boundary recovered to exactly the reference state.
    pub fn all_passed(&self) -> bool {
        self.passes == self.boundaries
    }

    /// Machine-readable form: `crash_index,structure,verdict,divergence_key`.
    pub fn csv(&self) -> String {
        let mut out = String::from("crash_index,structure,verdict,divergence_key\n");
        for row in &self.rows {
            let detail = match &row.verdict {
                Verdict::Pass { .. } => String::new(),
                Verdict::DetectedCorruption { detail } | Verdict::SilentDivergence { detail } => {
                    detail.replace(',', ";")
                }
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.crash_index,
                self.structure.label(),
                row.verdict.label(),
                detail
            ));
        }
        out
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        format!(
            "{} {}: {}/{} boundaries recovered exactly ({} detected corruptions, {} silent divergences)",
            self.structure.label(),
            self.mode.label(),
            self.passes,
            self.boundaries,
            self.detected_corruptions,
            self.silent_divergences
        )
    }
}

/// Sweeps every operation boundary with dropped pending lines — the
/// canonical "crash after every fence" check.
pub fn sweep_crash_points(spec: &WorkloadSpec) -> Result<SweepReport> {
    sweep_crash_points_with(spec, CrashPolicy::DropAllPending)
}

/// Boundary sweep under an explicit pending-line policy. Runs the trace
/// once; each boundary is probed with a non-mutating crash snapshot, so the
/// cost is one replay plus one recovery per operation.
pub fn sweep_crash_points_with(spec: &WorkloadSpec, policy: CrashPolicy) -> Result<SweepReport> {
    if spec.op_count > MAX_SWEEP_BOUNDARIES {
        return Err(Error::InvalidConfig(format!(
            "sweep of {} boundaries exceeds the {MAX_SWEEP_BOUNDARIES} limit",
            spec.op_count
        )));
    }
    let tuning = Tuning::default();
    let trace = spec.trace()?;
    let (layout, capacity) = plan_layout(spec.structure, trace.peak_live, tuning.load_factor);
    let mut region = Region::create_sim(capacity, &layout)?;
    let mut driver = Driver::init(&mut region, spec.structure, spec.mode, tuning)?;
    let mut reference = RefModel::new(spec.structure);
    for &(key, word) in &trace.init {
        let op = Op::Insert { key, word };
        driver.apply(&mut region, &op)?;
        reference.apply(&op);
    }
    region.reset_stats();
    let mut rows = Vec::with_capacity(trace.ops.len());
    for (i, op) in trace.ops.iter().enumerate() {
        driver.apply(&mut region, op)?;
        reference.apply(op);
        let mut crashed = region.simulate_crash(policy)?;
        let verdict = recover_and_judge(
            &mut crashed,
            spec.structure,
            spec.mode,
            tuning,
            &[(i as u64 + 1, reference.content())],
        );
        rows.push(SweepRow {
            crash_index: i as u64 + 1,
            verdict,
        });
    }
    let mut report = SweepReport {
        structure: spec.structure,
        mode: spec.mode,
        boundaries: rows.len() as u64,
        passes: 0,
        detected_corruptions: 0,
        silent_divergences: 0,
        rows,
    };
    for row in &report.rows {
        match row.verdict {
            Verdict::Pass { .. } => report.passes += 1,
            Verdict::DetectedCorruption { .. } => report.detected_corruptions += 1,
            Verdict::SilentDivergence { .. } => report.silent_divergences += 1,
        }
    }
    Ok(report)
}

/// Builds the workload's structure in checkpoint mode, plants `bug`,
/// crashes, and checks that recovery reproduces the exact pre-bug content.
pub fn bug_isolation_trial(
    spec: &WorkloadSpec,
    bug: VolatileBug,
    position_seed: u64,
) -> Result<CrashReport> {
    if spec.mode != Mode::PartlyCheckpoint {
        return Err(Error::Unsupported(
            "bug isolation trials require checkpoint mode".into(),
        ));
    }
    let tuning = Tuning::default();
    let trace = spec.trace()?;
    let (layout, capacity) = plan_layout(spec.structure, trace.peak_live, tuning.load_factor);
    let mut region = Region::create_sim(capacity, &layout)?;
    let mut driver = Driver::init(&mut region, spec.structure, spec.mode, tuning)?;
    let mut reference = RefModel::new(spec.structure);
    for &(key, word) in &trace.init {
        let op = Op::Insert { key, word };
        driver.apply(&mut region, &op)?;
        reference.apply(&op);
    }
    for op in &trace.ops {
        driver.apply(&mut region, op)?;
        reference.apply(op);
    }
    let pre_bug = reference.content();
    driver.inject_volatile_bug(&mut region, bug, position_seed)?;
    let mut crashed = region.simulate_crash(CrashPolicy::DropAllPending)?;
    let verdict = recover_and_judge(
        &mut crashed,
        spec.structure,
        spec.mode,
        tuning,
        &[(spec.op_count, pre_bug)],
    );
    Ok(CrashReport {
        structure: spec.structure,
        crash_index: spec.op_count,
        mid_operation: false,
        ops_before_crash: spec.op_count,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(structure: Structure, mode: Mode, mix: OpMix, ops: u64, init: u64) -> WorkloadSpec {
        WorkloadSpec {
            structure,
            mode,
            op_mix: mix,
            op_count: ops,
            init_count: init,
            seed: 42,
        }
    }

    #[test]
    fn boundary_crash_recovers_exactly() {
        for structure in Structure::ALL {
            for mode in [Mode::Fully, Mode::PartlyDirect, Mode::PartlyCheckpoint] {
                let s = spec(
                    structure,
                    mode,
                    OpMix::Mixed {
                        inserts: 2,
                        deletes: 1,
                    },
                    90,
                    30,
                );
                let plan = CrashPlan {
                    crash_point: CrashPoint::AfterFenceIndex(47),
                    policy: CrashPolicy::DropAllPending,
                };
                let report = replay_and_crash(&s, &plan).unwrap();
                assert!(
                    report.pass(),
                    "{structure:?} {mode:?}: {:?}",
                    report.verdict
                );
                assert_eq!(report.verdict, Verdict::Pass { matched_ops: 47 });
                assert!(!report.mid_operation);
            }
        }
    }

    #[test]
    fn crash_before_first_fence_recovers_setup_state() {
        let s = spec(
            Structure::BPlusTree,
            Mode::PartlyDirect,
            OpMix::InsertOnly,
            50,
            0,
        );
        let plan = CrashPlan {
            crash_point: CrashPoint::AfterFenceIndex(0),
            policy: CrashPolicy::DropAllPending,
        };
        let report = replay_and_crash(&s, &plan).unwrap();
        assert_eq!(report.verdict, Verdict::Pass { matched_ops: 0 });
    }

    #[test]
    fn mid_operation_crash_lands_on_either_side() {
        // Dropping pending lines always recovers the last boundary. Keeping
        // them relies on intra-op flush ordering, which the list (new node
        // before predecessor link) and hashmap (invalidation before size)
        // guarantee; the tree's multi-line leaf rewrites do not, so it is
        // probed under the drop policy only.
        for structure in Structure::ALL {
            let s = spec(structure, Mode::PartlyDirect, OpMix::InsertOnly, 40, 10);
            let plan = CrashPlan {
                crash_point: CrashPoint::AfterFlushIndex(13),
                policy: CrashPolicy::DropAllPending,
            };
            let report = replay_and_crash(&s, &plan).unwrap();
            assert!(report.pass(), "{structure:?}: {:?}", report.verdict);
            assert!(report.mid_operation);
        }
        for structure in [Structure::List, Structure::Hashmap] {
            let s = spec(structure, Mode::PartlyDirect, OpMix::InsertOnly, 40, 10);
            let plan = CrashPlan {
                crash_point: CrashPoint::AfterFlushIndex(13),
                policy: CrashPolicy::KeepAllPending,
            };
            let report = replay_and_crash(&s, &plan).unwrap();
            assert!(report.pass(), "{structure:?}: {:?}", report.verdict);
        }
    }

    #[test]
    fn torn_tree_shift_is_reported_not_masked() {
        // Keeping a partial leaf shift can read back as a well-formed tree
        // with the wrong content; the harness must surface that as silent
        // divergence, never as a pass. (The index is chosen to land inside
        // a leaf shift; the trace and flush order are deterministic.)
        let s = spec(
            Structure::BPlusTree,
            Mode::PartlyDirect,
            OpMix::InsertOnly,
            40,
            10,
        );
        let plan = CrashPlan {
            crash_point: CrashPoint::AfterFlushIndex(13),
            policy: CrashPolicy::KeepAllPending,
        };
        let report = replay_and_crash(&s, &plan).unwrap();
        assert!(
            matches!(report.verdict, Verdict::SilentDivergence { .. }),
            "{:?}",
            report.verdict
        );
        assert!(!report.pass());
    }

    #[test]
    fn mid_remove_keep_pending_is_detected_loudly() {
        // A remove invalidates the entry, then updates the size; crashing
        // between the two flushes with the invalidation durable leaves the
        // persisted size over-counting, which recovery must refuse.
        let s = spec(
            Structure::Hashmap,
            Mode::PartlyDirect,
            OpMix::DeleteOnly,
            5,
            5,
        );
        let plan = CrashPlan {
            crash_point: CrashPoint::AfterFlushIndex(1),
            policy: CrashPolicy::KeepAllPending,
        };
        let report = replay_and_crash(&s, &plan).unwrap();
        assert!(
            matches!(report.verdict, Verdict::DetectedCorruption { .. }),
            "{:?}",
            report.verdict
        );
        assert!(
            report.pass(),
            "mid-operation corruption detection is a pass"
        );
    }

    #[test]
    fn crash_index_beyond_trace_errs() {
        let s = spec(
            Structure::List,
            Mode::PartlyDirect,
            OpMix::InsertOnly,
            10,
            0,
        );
        let plan = CrashPlan {
            crash_point: CrashPoint::AfterFenceIndex(11),
            policy: CrashPolicy::DropAllPending,
        };
        assert!(matches!(
            replay_and_crash(&s, &plan),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn sweep_passes_every_boundary() {
        for structure in Structure::ALL {
            let s = spec(
                structure,
                Mode::PartlyDirect,
                OpMix::Mixed {
                    inserts: 1,
                    deletes: 1,
                },
                60,
                20,
            );
            let report = sweep_crash_points(&s).unwrap();
            assert_eq!(report.boundaries, 60);
            assert!(report.all_passed(), "{}", report.summary());
            assert_eq!(report.silent_divergences, 0);
        }
    }

    #[test]
    fn sweep_csv_shape() {
        let s = spec(Structure::List, Mode::PartlyDirect, OpMix::InsertOnly, 5, 0);
        let report = sweep_crash_points(&s).unwrap();
        let csv = report.csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "crash_index,structure,verdict,divergence_key");
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1], "1,list,pass,");
    }

    #[test]
    fn empty_sweep_is_a_vacuous_pass() {
        let s = spec(Structure::Hashmap, Mode::Fully, OpMix::InsertOnly, 0, 0);
        let report = sweep_crash_points(&s).unwrap();
        assert_eq!(report.boundaries, 0);
        assert!(report.all_passed());
    }

    #[test]
    fn oversized_sweep_is_rejected() {
        let s = spec(
            Structure::List,
            Mode::PartlyDirect,
            OpMix::InsertOnly,
            200_000,
            0,
        );
        assert!(matches!(
            sweep_crash_points(&s),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn every_op_boundary_plan_summarizes() {
        let s = spec(
            Structure::BPlusTree,
            Mode::PartlyCheckpoint,
            OpMix::Mixed {
                inserts: 4,
                deletes: 1,
            },
            50,
            10,
        );
        let plan = CrashPlan {
            crash_point: CrashPoint::EveryOpBoundary,
            policy: CrashPolicy::DropAllPending,
        };
        let report = replay_and_crash(&s, &plan).unwrap();
        assert!(report.pass());
        assert_eq!(report.verdict, Verdict::Pass { matched_ops: 50 });
    }

    #[test]
    fn injected_bugs_never_survive_checkpoint_crash() {
        for structure in Structure::ALL {
            let s = spec(
                structure,
                Mode::PartlyCheckpoint,
                OpMix::Mixed {
                    inserts: 2,
                    deletes: 1,
                },
                60,
                20,
            );
            for &bug in supported_bugs(structure) {
                for seed in 0..5 {
                    let report = bug_isolation_trial(&s, bug, seed).unwrap();
                    assert_eq!(
                        report.verdict,
                        Verdict::Pass { matched_ops: 60 },
                        "{structure:?} {bug:?} seed {seed}"
                    );
                }
            }
        }
    }

    #[test]
    fn bug_injection_needs_checkpoint_mode() {
        let s = spec(
            Structure::List,
            Mode::PartlyDirect,
            OpMix::InsertOnly,
            10,
            0,
        );
        assert!(matches!(
            bug_isolation_trial(&s, VolatileBug::SelfLoopNext, 1),
            Err(Error::Unsupported(_))
        ));
        let tuning = Tuning::default();
        let (layout, capacity) = plan_layout(Structure::List, 16, tuning.load_factor);
        let mut region = Region::create_sim(capacity, &layout).unwrap();
        let mut driver =
            Driver::init(&mut region, Structure::List, Mode::PartlyDirect, tuning).unwrap();
        driver
            .apply(&mut region, &Op::Insert { key: 1, word: 1 })
            .unwrap();
        assert!(matches!(
            driver.inject_volatile_bug(&mut region, VolatileBug::SelfLoopNext, 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn inapplicable_bugs_are_rejected() {
        let tuning = Tuning::default();
        let (layout, capacity) = plan_layout(Structure::List, 16, tuning.load_factor);
        let mut region = Region::create_sim(capacity, &layout).unwrap();
        let mut driver =
            Driver::init(&mut region, Structure::List, Mode::PartlyCheckpoint, tuning).unwrap();
        driver
            .apply(&mut region, &Op::Insert { key: 1, word: 1 })
            .unwrap();
        assert!(matches!(
            driver.inject_volatile_bug(&mut region, VolatileBug::WrongHashCache, 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn determinism_of_reports() {
        let s = spec(
            Structure::Hashmap,
            Mode::PartlyDirect,
            OpMix::Mixed {
                inserts: 1,
                deletes: 1,
            },
            40,
            10,
        );
        let plan = CrashPlan {
            crash_point: CrashPoint::AfterFlushIndex(29),
            policy: CrashPolicy::RandomSubset(7),
        };
        let a = replay_and_crash(&s, &plan).unwrap();
        let b = replay_and_crash(&s, &plan).unwrap();
        assert_eq!(a.verdict, b.verdict);
        assert_eq!(a.ops_before_crash, b.ops_before_crash);
    }
}
