//! Recoverable B+ tree of order 19.
//!
//! Every node occupies a 256 B slot (four cache lines, one device block) in
//! the [`TreeNodes`](ArenaId::TreeNodes) arena:
//!
//! ```text
//! bytes [0, 144):    keys, 18 × i64
//! bytes [144, 220):  links, 19 × u32 cache-line indices (offset / 64);
//!                    leaf: record lines, links[18] = next leaf;
//!                    internal: child node lines
//! bytes [220, 224):  num_keys
//! bytes [224, 228):  is_leaf
//! bytes [228, 232):  parent line (fully persistent baseline only)
//! ```
//!
//! Only leaves and their value records are essential: internal nodes live in
//! a volatile mirror and are rebuilt after a crash by walking the persistent
//! leaf chain and rebatching it into buckets of `bucket_size` children per
//! level. The partly persistent modes therefore never allocate region space
//! for internal nodes at all; the fully persistent baseline materializes and
//! flushes them as well (plus parent links and a redundant root pointer),
//! which recovery deliberately never reads.
//!
//! Flush accounting is write-intent at line granularity: an operation dirties
//! the lines it stores to, whether or not the byte values change, mirroring
//! the store patterns of the classic textbook implementation (shift loops
//! rewrite the whole moved prefix, splits rewrite both halves, tidy loops
//! clear trailing link slots).

use crate::error::{Error, Result};
use crate::region::{ArenaId, Region, TouchSet, LINE_SIZE, NIL};
use crate::{FencePolicy, Mode};

/// Maximum children per internal node.
pub const ORDER: usize = 19;
/// Maximum keys per node.
pub const LEAF_CAPACITY: usize = ORDER - 1;
/// Node footprint: four cache lines, one device block.
pub const NODE_SIZE: u64 = 256;
/// Value record footprint: exactly one cache line.
pub const RECORD_SIZE: u64 = 64;
/// Default reconstruction fanout: pack internal nodes completely.
pub const DEFAULT_BUCKET_SIZE: usize = ORDER;
/// Smallest permissible reconstruction fanout (minimum occupancy).
pub const MIN_BUCKET_SIZE: usize = ORDER / 2 + 1;

const KEYS_OFF: u64 = 0;
const LINKS_OFF: u64 = 144;
const NEXT_IDX: usize = ORDER - 1;
const NUM_OFF: u64 = 220;
const IS_LEAF_OFF: u64 = 224;
const PARENT_OFF: u64 = 228;
const HDR_LEFTMOST: u64 = 0;
const HDR_ROOT: u64 = 8;

/// Split point: first half size when dividing `length` entries.
fn cut(length: usize) -> usize {
    length.div_ceil(2)
}

/// Offset of a leaf's persistent next-leaf link (fault injection).
pub fn leaf_next_offset(slot: u64) -> u64 {
    slot + LINKS_OFF + 4 * NEXT_IDX as u64
}

/// Offset of a leaf's persistent key count (fault injection).
pub fn leaf_num_offset(slot: u64) -> u64 {
    slot + NUM_OFF
}

/// Builds a 64 B record payload from a word (first 8 bytes, little endian).
pub fn record_value(word: u64) -> [u8; RECORD_SIZE as usize] {
    let mut value = [0u8; RECORD_SIZE as usize];
    value[..8].copy_from_slice(&word.to_le_bytes());
    for (i, byte) in value[8..].iter_mut().enumerate() {
        *byte = (word.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> ((i % 8) * 8)) as u8;
    }
    value
}

/// Shape summary of a tree, as reported by [`BPlusTree::stats`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeStats {
    pub keys: u64,
    pub leaves: u64,
    pub internal_nodes: u64,
    /// Node levels, leaves included; 0 for an empty tree.
    pub height: u32,
    /// Mean children per internal node (`t`); 0 when there are none.
    pub avg_internal_occupancy: f64,
    /// (leaves + internals) / leaves: how many nodes a fully persistent tree
    /// stores per node the partly persistent tree stores.
    pub measured_node_ratio: f64,
    /// (1 - 1/n) * t / (t - 1) with n = leaf count — the modeled ratio.
    pub modeled_node_ratio: f64,
}

/// One node of the volatile mirror. Leaves carry `records` (region offsets,
/// parallel to `keys`) and `next`; internal nodes carry `children`.
#[derive(Debug, Clone, Default)]
struct MirrorNode {
    live: bool,
    is_leaf: bool,
    keys: Vec<i64>,
    children: Vec<usize>,
    records: Vec<u64>,
    next: Option<usize>,
    parent: Option<usize>,
    /// Arena offset of the durable image; `NIL` for a partly persistent
    /// internal node, which has no region presence.
    slot: u64,
}

impl MirrorNode {
    fn fresh(is_leaf: bool, slot: u64) -> MirrorNode {
        MirrorNode {
            live: true,
            is_leaf,
            slot,
            ..MirrorNode::default()
        }
    }
}

/// Pointer being removed alongside a key, mirroring the classic
/// `delete_entry(node, key, pointer)` signature.
enum Ptr {
    Record(u64),
    Child(usize),
}

/// Recoverable B+ tree over a [`Region`].
#[derive(Debug)]
pub struct BPlusTree {
    mode: Mode,
    fence: FencePolicy,
    ops_since_fence: u32,
    hdr: u64,
    nodes: Vec<MirrorNode>,
    dead: Vec<usize>,
    root: Option<usize>,
    leftmost: Option<usize>,
    size: u64,
    splits: u64,
    merges: u64,
    touched: TouchSet,
}

impl BPlusTree {
    /// True once [`BPlusTree::init`] has run on this region.
    pub fn is_initialized(region: &Region) -> Result<bool> {
        region.init_flag(ArenaId::TreeHeader)
    }

    /// Initializes an empty tree. The header is made durable first and the
    /// init flag is set only afterwards: two flushes, two fences.
    pub fn init(region: &mut Region, mode: Mode) -> Result<BPlusTree> {
        if region.init_flag(ArenaId::TreeHeader)? {
            return Err(Error::InitState(
                "tree is already initialized in this region".into(),
            ));
        }
        for id in [ArenaId::TreeNodes, ArenaId::TreeRecords] {
            region.arena(id).ok_or_else(|| {
                Error::OutOfBounds(format!("region lacks a `{}` arena", id.name()))
            })?;
        }
        if mode == Mode::PartlyCheckpoint {
            region.enable_staging();
        }
        let hdr = region.arena(ArenaId::TreeHeader).unwrap().base;
        region.write_u64(hdr + HDR_LEFTMOST, NIL)?;
        if mode == Mode::Fully {
            region.write_u64(hdr + HDR_ROOT, NIL)?;
        }
        region.flush(hdr + HDR_LEFTMOST, 8)?;
        region.fence();
        let (flag_off, flag_len) = region.set_init_flag(ArenaId::TreeHeader)?;
        region.flush(flag_off, flag_len)?;
        region.fence();
        Ok(BPlusTree::attach(region, mode))
    }

    /// Rebuilds the tree from the persistent leaf chain after a crash or
    /// reopen: walks `next` links from the header's leftmost leaf, validates
    /// the chain, then packs the leaves into internal levels bottom-up with
    /// `bucket_size` children per node. Allocator free lists are rebuilt
    /// over the full arena extents. Never flushes.
    pub fn reconstruct(region: &mut Region, mode: Mode, bucket_size: usize) -> Result<BPlusTree> {
        if !(MIN_BUCKET_SIZE..=ORDER).contains(&bucket_size) {
            return Err(Error::InvalidConfig(format!(
                "bucket size must lie in [{MIN_BUCKET_SIZE}, {ORDER}], got {bucket_size}"
            )));
        }
        if !region.init_flag(ArenaId::TreeHeader)? {
            return Err(Error::InitState(
                "tree was never initialized in this region".into(),
            ));
        }
        if mode == Mode::PartlyCheckpoint {
            region.enable_staging();
        }
        let mut tree = BPlusTree::attach(region, mode);
        let nodes_arena = region
            .arena(ArenaId::TreeNodes)
            .ok_or_else(|| Error::OutOfBounds("region lacks a `tree-nodes` arena".into()))?;
        let recs_arena = region
            .arena(ArenaId::TreeRecords)
            .ok_or_else(|| Error::OutOfBounds("region lacks a `tree-records` arena".into()))?;
        let node_slots = (nodes_arena.len / NODE_SIZE) as usize;
        let rec_slots = (recs_arena.len / RECORD_SIZE) as usize;
        let mut node_seen = vec![false; node_slots];
        let mut rec_seen = vec![false; rec_slots];
        let mut leaf_ids: Vec<usize> = Vec::new();
        let mut last_key: Option<i64> = None;
        let mut cur = region.read_u64(tree.hdr + HDR_LEFTMOST)?;
        while cur != NIL {
            let rel = cur.wrapping_sub(nodes_arena.base);
            if cur < nodes_arena.base || rel + NODE_SIZE > nodes_arena.len || rel % NODE_SIZE != 0 {
                return Err(Error::Corruption(format!(
                    "leaf chain link {cur:#x} falls outside the node arena"
                )));
            }
            let slot_idx = (rel / NODE_SIZE) as usize;
            if node_seen[slot_idx] {
                return Err(Error::Corruption(format!(
                    "cycle in the leaf chain at {cur:#x}"
                )));
            }
            node_seen[slot_idx] = true;
            if region.read_u32(cur + IS_LEAF_OFF)? != 1 {
                return Err(Error::Corruption(format!(
                    "chained node {cur:#x} is not a leaf"
                )));
            }
            let num = region.read_u32(cur + NUM_OFF)? as usize;
            if num > LEAF_CAPACITY {
                return Err(Error::Corruption(format!(
                    "leaf {cur:#x} claims {num} keys, capacity is {LEAF_CAPACITY}"
                )));
            }
            if num == 0 {
                if leaf_ids.is_empty() {
                    // A flagged header pointing at a keyless leaf is a torn
                    // first insert: the tree is empty, the slot is garbage.
                    node_seen[slot_idx] = false;
                    break;
                }
                return Err(Error::Corruption(format!("empty leaf {cur:#x} mid-chain")));
            }
            let mut keys = Vec::with_capacity(num);
            let mut records = Vec::with_capacity(num);
            for i in 0..num {
                let k = region.read_i64(cur + KEYS_OFF + 8 * i as u64)?;
                let floor = if i == 0 {
                    last_key
                } else {
                    keys.last().copied()
                };
                if floor.is_some_and(|f| k <= f) {
                    return Err(Error::Corruption(format!(
                        "leaf chain keys not strictly ascending at key {k} in {cur:#x}"
                    )));
                }
                keys.push(k);
                let r = region.read_u32(cur + LINKS_OFF + 4 * i as u64)? as u64 * LINE_SIZE;
                let rrel = r.wrapping_sub(recs_arena.base);
                if r < recs_arena.base || rrel + RECORD_SIZE > recs_arena.len {
                    return Err(Error::Corruption(format!(
                        "record link {r:#x} falls outside the record arena"
                    )));
                }
                let ri = (rrel / RECORD_SIZE) as usize;
                if rec_seen[ri] {
                    return Err(Error::Corruption(format!("record {r:#x} referenced twice")));
                }
                rec_seen[ri] = true;
                records.push(r);
            }
            last_key = keys.last().copied();
            let id = tree.nodes.len();
            tree.nodes.push(MirrorNode {
                live: true,
                is_leaf: true,
                keys,
                children: Vec::new(),
                records,
                next: None,
                parent: None,
                slot: cur,
            });
            if let Some(&prev) = leaf_ids.last() {
                tree.nodes[prev].next = Some(id);
            }
            leaf_ids.push(id);
            cur = region.read_u32(leaf_next_offset(cur))? as u64 * LINE_SIZE;
        }
        // Every slot not on the chain joins the free list, so the whole
        // extent is accounted for; lowest slots are handed out first.
        let mut node_free: Vec<u64> = (0..node_slots)
            .filter(|&i| !node_seen[i])
            .map(|i| nodes_arena.base + i as u64 * NODE_SIZE)
            .collect();
        node_free.reverse();
        region.reset_arena_runtime(
            ArenaId::TreeNodes,
            nodes_arena.len,
            node_free,
            Some(NODE_SIZE),
        )?;
        let mut rec_free: Vec<u64> = (0..rec_slots)
            .filter(|&i| !rec_seen[i])
            .map(|i| recs_arena.base + i as u64 * RECORD_SIZE)
            .collect();
        rec_free.reverse();
        region.reset_arena_runtime(
            ArenaId::TreeRecords,
            recs_arena.len,
            rec_free,
            Some(RECORD_SIZE),
        )?;
        tree.size = leaf_ids
            .iter()
            .map(|&id| tree.nodes[id].keys.len() as u64)
            .sum();
        if leaf_ids.is_empty() {
            return Ok(tree);
        }
        tree.leftmost = Some(leaf_ids[0]);
        // Pack the chain into internal levels bottom-up.
        let mut level: Vec<(usize, i64)> = leaf_ids
            .iter()
            .map(|&id| (id, tree.nodes[id].keys[0]))
            .collect();
        while level.len() > 1 {
            let mut next_level = Vec::new();
            for chunk in bucket_chunks(&level, bucket_size) {
                let slot = if mode == Mode::Fully {
                    region.alloc(ArenaId::TreeNodes, NODE_SIZE, NODE_SIZE)?
                } else {
                    NIL
                };
                let id = tree.nodes.len();
                tree.nodes.push(MirrorNode {
                    live: true,
                    is_leaf: false,
                    keys: chunk[1..].iter().map(|&(_, min)| min).collect(),
                    children: chunk.iter().map(|&(c, _)| c).collect(),
                    records: Vec::new(),
                    next: None,
                    parent: None,
                    slot,
                });
                for &(c, _) in &chunk {
                    tree.nodes[c].parent = Some(id);
                }
                next_level.push((id, chunk[0].1));
            }
            level = next_level;
        }
        tree.root = Some(level[0].0);
        if mode == Mode::Fully {
            tree.write_recovered_images(region)?;
        }
        Ok(tree)
    }

    fn attach(region: &Region, mode: Mode) -> BPlusTree {
        let hdr = region.arena(ArenaId::TreeHeader).unwrap().base;
        BPlusTree {
            mode,
            fence: FencePolicy::default(),
            ops_since_fence: 0,
            hdr,
            nodes: Vec::new(),
            dead: Vec::new(),
            root: None,
            leftmost: None,
            size: 0,
            splits: 0,
            merges: 0,
            touched: TouchSet::new(),
        }
    }

    /// Rewrites the redundant durable images after recovery (fully
    /// persistent baseline): internal nodes, leaf parent links, header root.
    /// Plain writes — recovery never flushes; the copies re-earn durability
    /// as later operations touch them.
    fn write_recovered_images(&self, region: &mut Region) -> Result<()> {
        for n in self.nodes.iter().filter(|n| n.live) {
            let parent_line = n
                .parent
                .map_or(0u32, |p| (self.nodes[p].slot / LINE_SIZE) as u32);
            if n.is_leaf {
                region.write_u32(n.slot + PARENT_OFF, parent_line)?;
                continue;
            }
            for (i, &k) in n.keys.iter().enumerate() {
                region.write_i64(n.slot + KEYS_OFF + 8 * i as u64, k)?;
            }
            for (i, &c) in n.children.iter().enumerate() {
                let line = (self.nodes[c].slot / LINE_SIZE) as u32;
                region.write_u32(n.slot + LINKS_OFF + 4 * i as u64, line)?;
            }
            region.write_u32(n.slot + NUM_OFF, n.keys.len() as u32)?;
            region.write_u32(n.slot + IS_LEAF_OFF, 0)?;
            region.write_u32(n.slot + PARENT_OFF, parent_line)?;
        }
        let root_slot = self.root.map_or(NIL, |r| self.nodes[r].slot);
        region.write_u64(self.hdr + HDR_ROOT, root_slot)?;
        Ok(())
    }

    /// Replaces the fence policy (default: one fence per operation).
    pub fn set_fence_policy(&mut self, fence: FencePolicy) {
        self.fence = fence;
    }

    /// Number of live keys.
    pub fn len(&self) -> u64 {
        self.size
    }

    /// True when no keys are stored.
    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Leaf splits performed since this handle was created.
    pub fn split_count(&self) -> u64 {
        self.splits
    }

    /// Node merges performed since this handle was created.
    pub fn merge_count(&self) -> u64 {
        self.merges
    }

    /// Node levels from root to leaves inclusive; 0 when empty.
    pub fn height(&self) -> u32 {
        let mut h = 0;
        let mut cur = self.root;
        while let Some(id) = cur {
            h += 1;
            cur = if self.nodes[id].is_leaf {
                None
            } else {
                Some(self.nodes[id].children[0])
            };
        }
        h
    }

    // ------------------------------------------------------------------
    // Lookup

    fn find_leaf(&self, key: i64) -> Option<usize> {
        let mut c = self.root?;
        while !self.nodes[c].is_leaf {
            let n = &self.nodes[c];
            let mut i = 0;
            while i < n.keys.len() && key >= n.keys[i] {
                i += 1;
            }
            c = n.children[i];
        }
        Some(c)
    }

    /// Looks up a key; read-only, zero flushes.
    pub fn find(&self, region: &Region, key: i64) -> Result<Option<[u8; RECORD_SIZE as usize]>> {
        let Some(leaf) = self.find_leaf(key) else {
            return Ok(None);
        };
        match self.nodes[leaf].keys.binary_search(&key) {
            Ok(i) => {
                let mut value = [0u8; RECORD_SIZE as usize];
                value.copy_from_slice(region.read(self.nodes[leaf].records[i], RECORD_SIZE)?);
                Ok(Some(value))
            }
            Err(_) => Ok(None),
        }
    }

    /// Looks up a key's leading value word.
    pub fn find_word(&self, region: &Region, key: i64) -> Result<Option<u64>> {
        let Some(leaf) = self.find_leaf(key) else {
            return Ok(None);
        };
        match self.nodes[leaf].keys.binary_search(&key) {
            Ok(i) => Ok(Some(region.read_u64(self.nodes[leaf].records[i])?)),
            Err(_) => Ok(None),
        }
    }

    /// All keys in ascending order, via the leaf chain.
    pub fn keys(&self) -> Vec<i64> {
        let mut out = Vec::with_capacity(self.size as usize);
        let mut cur = self.leftmost;
        while let Some(id) = cur {
            out.extend_from_slice(&self.nodes[id].keys);
            cur = self.nodes[id].next;
        }
        out
    }

    /// All (key, leading value word) pairs in ascending key order.
    pub fn key_words(&self, region: &Region) -> Result<Vec<(i64, u64)>> {
        let mut out = Vec::with_capacity(self.size as usize);
        let mut cur = self.leftmost;
        while let Some(id) = cur {
            let n = &self.nodes[id];
            for (i, &k) in n.keys.iter().enumerate() {
                out.push((k, region.read_u64(n.records[i])?));
            }
            cur = n.next;
        }
        Ok(out)
    }

    /// Arena offsets of the live leaves in chain order (fault injection).
    pub fn leaf_slots(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut cur = self.leftmost;
        while let Some(id) = cur {
            out.push(self.nodes[id].slot);
            cur = self.nodes[id].next;
        }
        out
    }

    // ------------------------------------------------------------------
    // Insert

    /// Inserts a key with a 64 B record payload. Duplicates are rejected
    /// with no flushes and no fence.
    pub fn insert(
        &mut self,
        region: &mut Region,
        key: i64,
        value: &[u8; RECORD_SIZE as usize],
    ) -> Result<()> {
        let leaf = self.find_leaf(key);
        if let Some(l) = leaf {
            if self.nodes[l].keys.binary_search(&key).is_ok() {
                return Err(Error::Key(format!("key {key} is already present")));
            }
        }
        // Reserve the worst-case node allocations up front so a split can
        // never run out of space halfway through.
        let needed = match leaf {
            None => 1,
            Some(l) if self.nodes[l].keys.len() == LEAF_CAPACITY => match self.mode {
                Mode::Fully => self.height() as u64 + 1,
                _ => 1,
            },
            Some(_) => 0,
        };
        if needed > 0 {
            self.preflight_nodes(region, needed)?;
        }
        let record = region.alloc(ArenaId::TreeRecords, RECORD_SIZE, RECORD_SIZE)?;
        region.write(record, value)?;
        self.touched.note(record, RECORD_SIZE);
        match leaf {
            None => {
                let leaf = self.new_node(region, true)?;
                {
                    let n = &mut self.nodes[leaf];
                    n.keys.push(key);
                    n.records.push(record);
                }
                self.store_key(region, leaf, 0)?;
                self.store_link(region, leaf, 0)?;
                self.store_next(region, leaf)?;
                self.store_parent(region, leaf)?;
                self.store_num(region, leaf)?;
                self.root = Some(leaf);
                self.leftmost = Some(leaf);
                self.store_header_leftmost(region)?;
                self.store_header_root(region)?;
            }
            Some(leaf) if self.nodes[leaf].keys.len() < LEAF_CAPACITY => {
                self.insert_into_leaf(region, leaf, key, record)?;
            }
            Some(leaf) => {
                self.insert_into_leaf_split(region, leaf, key, record)?;
            }
        }
        self.size += 1;
        self.complete(region)
    }

    /// Inserts a word-derived record payload.
    pub fn insert_word(&mut self, region: &mut Region, key: i64, word: u64) -> Result<()> {
        self.insert(region, key, &record_value(word))
    }

    fn insert_into_leaf(
        &mut self,
        region: &mut Region,
        leaf: usize,
        key: i64,
        record: u64,
    ) -> Result<()> {
        let ip = self.nodes[leaf].keys.partition_point(|&k| k < key);
        {
            let n = &mut self.nodes[leaf];
            n.keys.insert(ip, key);
            n.records.insert(ip, record);
        }
        // The shift stores every key/link slot from the insertion point up.
        for i in ip..self.nodes[leaf].keys.len() {
            self.store_key(region, leaf, i)?;
            self.store_link(region, leaf, i)?;
        }
        self.store_num(region, leaf)
    }

    fn insert_into_leaf_split(
        &mut self,
        region: &mut Region,
        leaf: usize,
        key: i64,
        record: u64,
    ) -> Result<()> {
        let ip = self.nodes[leaf].keys.partition_point(|&k| k < key);
        let mut tk = self.nodes[leaf].keys.clone();
        let mut tr = self.nodes[leaf].records.clone();
        tk.insert(ip, key);
        tr.insert(ip, record);
        let split = cut(LEAF_CAPACITY);
        let new = self.new_node(region, true)?;
        // The new (right) leaf's lines are emitted before the old leaf's so
        // the chain link to it becomes durable last.
        {
            let n = &mut self.nodes[new];
            n.keys = tk[split..].to_vec();
            n.records = tr[split..].to_vec();
        }
        self.nodes[new].next = self.nodes[leaf].next;
        self.nodes[new].parent = self.nodes[leaf].parent;
        for j in 0..self.nodes[new].keys.len() {
            self.store_key(region, new, j)?;
            self.store_link(region, new, j)?;
        }
        self.store_next(region, new)?;
        for j in self.nodes[new].keys.len()..LEAF_CAPACITY {
            self.store_link(region, new, j)?; // tidy trailing link slots
        }
        self.store_num(region, new)?;
        self.store_parent(region, new)?;
        {
            let n = &mut self.nodes[leaf];
            n.keys = tk[..split].to_vec();
            n.records = tr[..split].to_vec();
        }
        for i in 0..split {
            self.store_key(region, leaf, i)?;
            self.store_link(region, leaf, i)?;
        }
        for i in split..LEAF_CAPACITY {
            self.store_link(region, leaf, i)?; // tidy
        }
        self.nodes[leaf].next = Some(new);
        self.store_next(region, leaf)?;
        self.store_num(region, leaf)?;
        self.splits += 1;
        let new_key = self.nodes[new].keys[0];
        self.insert_into_parent(region, leaf, new_key, new)
    }

    fn insert_into_parent(
        &mut self,
        region: &mut Region,
        left: usize,
        key: i64,
        right: usize,
    ) -> Result<()> {
        let Some(parent) = self.nodes[left].parent else {
            return self.insert_into_new_root(region, left, key, right);
        };
        let li = self.nodes[parent]
            .children
            .iter()
            .position(|&c| c == left)
            .unwrap();
        if self.nodes[parent].keys.len() < LEAF_CAPACITY {
            self.insert_into_node(region, parent, li, key, right)
        } else {
            self.insert_into_node_split(region, parent, li, key, right)
        }
    }

    fn insert_into_new_root(
        &mut self,
        region: &mut Region,
        left: usize,
        key: i64,
        right: usize,
    ) -> Result<()> {
        let root = self.new_node(region, false)?;
        {
            let n = &mut self.nodes[root];
            n.keys.push(key);
            n.children.push(left);
            n.children.push(right);
        }
        self.store_key(region, root, 0)?;
        self.store_link(region, root, 0)?;
        self.store_link(region, root, 1)?;
        self.store_num(region, root)?;
        self.store_parent(region, root)?;
        self.nodes[left].parent = Some(root);
        self.store_parent(region, left)?;
        self.nodes[right].parent = Some(root);
        self.store_parent(region, right)?;
        self.root = Some(root);
        self.store_header_root(region)
    }

    fn insert_into_node(
        &mut self,
        region: &mut Region,
        parent: usize,
        li: usize,
        key: i64,
        right: usize,
    ) -> Result<()> {
        {
            let n = &mut self.nodes[parent];
            n.keys.insert(li, key);
            n.children.insert(li + 1, right);
        }
        for i in li..self.nodes[parent].keys.len() {
            self.store_key(region, parent, i)?;
        }
        for i in (li + 1)..self.nodes[parent].children.len() {
            self.store_link(region, parent, i)?;
        }
        self.store_num(region, parent)
    }

    fn insert_into_node_split(
        &mut self,
        region: &mut Region,
        old: usize,
        li: usize,
        key: i64,
        right: usize,
    ) -> Result<()> {
        let mut tk = self.nodes[old].keys.clone();
        let mut tc = self.nodes[old].children.clone();
        tk.insert(li, key);
        tc.insert(li + 1, right);
        let split = cut(ORDER);
        let k_prime = tk[split - 1];
        let new = self.new_node(region, false)?;
        {
            let n = &mut self.nodes[new];
            n.keys = tk[split..].to_vec();
            n.children = tc[split..].to_vec();
        }
        self.nodes[new].parent = self.nodes[old].parent;
        for j in 0..self.nodes[new].keys.len() {
            self.store_key(region, new, j)?;
        }
        for j in 0..self.nodes[new].children.len() {
            self.store_link(region, new, j)?;
        }
        self.store_num(region, new)?;
        self.store_parent(region, new)?;
        {
            let n = &mut self.nodes[old];
            n.keys = tk[..split - 1].to_vec();
            n.children = tc[..split].to_vec();
        }
        for i in 0..self.nodes[old].keys.len() {
            self.store_key(region, old, i)?;
        }
        for i in 0..self.nodes[old].children.len() {
            self.store_link(region, old, i)?;
        }
        self.store_num(region, old)?;
        // The moved children now answer to the new node.
        for j in 0..self.nodes[new].children.len() {
            let child = self.nodes[new].children[j];
            self.nodes[child].parent = Some(new);
            self.store_parent(region, child)?;
        }
        self.splits += 1;
        self.insert_into_parent(region, old, k_prime, new)
    }

    // ------------------------------------------------------------------
    // Delete

    /// Deletes a key. Absent keys are rejected with no flushes and no fence.
    pub fn delete(&mut self, region: &mut Region, key: i64) -> Result<()> {
        let Some(leaf) = self.find_leaf(key) else {
            return Err(Error::Key(format!("key {key} not found")));
        };
        let Ok(idx) = self.nodes[leaf].keys.binary_search(&key) else {
            return Err(Error::Key(format!("key {key} not found")));
        };
        let record = self.nodes[leaf].records[idx];
        if Some(leaf) == self.root && self.nodes[leaf].keys.len() == 1 {
            // Removing the final key: only the header reaches the device.
            region.free(ArenaId::TreeRecords, record)?;
            self.free_node(region, leaf)?;
            self.root = None;
            self.leftmost = None;
            self.store_header_leftmost(region)?;
            self.store_header_root(region)?;
            self.size -= 1;
            return self.complete(region);
        }
        self.delete_entry(region, leaf, key, Ptr::Record(record))?;
        region.free(ArenaId::TreeRecords, record)?;
        self.size -= 1;
        self.complete(region)
    }

    fn delete_entry(&mut self, region: &mut Region, n: usize, key: i64, ptr: Ptr) -> Result<()> {
        self.remove_entry_from_node(region, n, key, &ptr)?;
        if Some(n) == self.root {
            return self.adjust_root(region);
        }
        let min_keys = if self.nodes[n].is_leaf {
            cut(LEAF_CAPACITY)
        } else {
            cut(ORDER) - 1
        };
        if self.nodes[n].keys.len() >= min_keys {
            return Ok(());
        }
        let parent = self.nodes[n].parent.unwrap();
        let pos = self.nodes[parent]
            .children
            .iter()
            .position(|&c| c == n)
            .unwrap();
        let neighbor_is_right = pos == 0;
        let k_prime_index = if neighbor_is_right { 0 } else { pos - 1 };
        let k_prime = self.nodes[parent].keys[k_prime_index];
        let neighbor = if neighbor_is_right {
            self.nodes[parent].children[1]
        } else {
            self.nodes[parent].children[pos - 1]
        };
        let capacity = if self.nodes[n].is_leaf {
            ORDER
        } else {
            ORDER - 1
        };
        if self.nodes[neighbor].keys.len() + self.nodes[n].keys.len() < capacity {
            self.coalesce(region, n, neighbor, neighbor_is_right, k_prime)
        } else {
            self.redistribute(
                region,
                n,
                neighbor,
                neighbor_is_right,
                k_prime_index,
                k_prime,
            )
        }
    }

    fn remove_entry_from_node(
        &mut self,
        region: &mut Region,
        n: usize,
        key: i64,
        ptr: &Ptr,
    ) -> Result<()> {
        let ki = self.nodes[n].keys.iter().position(|&k| k == key).unwrap();
        let pi = match ptr {
            Ptr::Record(r) => self.nodes[n].records.iter().position(|x| x == r).unwrap(),
            Ptr::Child(c) => self.nodes[n].children.iter().position(|x| x == c).unwrap(),
        };
        {
            let node = &mut self.nodes[n];
            node.keys.remove(ki);
            match ptr {
                Ptr::Record(_) => {
                    node.records.remove(pi);
                }
                Ptr::Child(_) => {
                    node.children.remove(pi);
                }
            }
        }
        // Shift stores plus the tidy loop that clears trailing link slots.
        for i in ki..self.nodes[n].keys.len() {
            self.store_key(region, n, i)?;
        }
        let link_end = if self.nodes[n].is_leaf {
            LEAF_CAPACITY
        } else {
            ORDER
        };
        for i in pi..link_end {
            self.store_link(region, n, i)?;
        }
        self.store_num(region, n)
    }

    fn adjust_root(&mut self, region: &mut Region) -> Result<()> {
        let root = self.root.unwrap();
        if !self.nodes[root].keys.is_empty() {
            return Ok(());
        }
        if !self.nodes[root].is_leaf {
            let child = self.nodes[root].children[0];
            self.nodes[child].parent = None;
            self.store_parent(region, child)?;
            self.root = Some(child);
            self.store_header_root(region)?;
            self.free_node(region, root)?;
        } else {
            // Keyless leaf root: the tree is empty. (Normally pre-empted by
            // the final-key fast path in `delete`.)
            self.free_node(region, root)?;
            self.root = None;
            self.leftmost = None;
            self.store_header_leftmost(region)?;
            self.store_header_root(region)?;
        }
        Ok(())
    }

    fn coalesce(
        &mut self,
        region: &mut Region,
        n: usize,
        neighbor: usize,
        neighbor_is_right: bool,
        k_prime: i64,
    ) -> Result<()> {
        // The left node always absorbs; the right node is the victim.
        let (keeper, victim) = if neighbor_is_right {
            (n, neighbor)
        } else {
            (neighbor, n)
        };
        let m = self.nodes[keeper].keys.len();
        if !self.nodes[keeper].is_leaf {
            self.nodes[keeper].keys.push(k_prime);
            self.store_key(region, keeper, m)?;
            let moved_keys = self.nodes[victim].keys.clone();
            let moved_children = self.nodes[victim].children.clone();
            for (j, &k) in moved_keys.iter().enumerate() {
                self.nodes[keeper].keys.push(k);
                self.nodes[keeper].children.push(moved_children[j]);
                self.store_key(region, keeper, m + 1 + j)?;
                self.store_link(region, keeper, m + 1 + j)?;
            }
            self.nodes[keeper]
                .children
                .push(*moved_children.last().unwrap());
            self.store_link(region, keeper, m + 1 + moved_keys.len())?;
            self.store_num(region, keeper)?;
            // Every child of the merged node gets its parent rewritten.
            for i in 0..self.nodes[keeper].children.len() {
                let c = self.nodes[keeper].children[i];
                self.nodes[c].parent = Some(keeper);
                self.store_parent(region, c)?;
            }
        } else {
            let moved_keys = self.nodes[victim].keys.clone();
            let moved_records = self.nodes[victim].records.clone();
            for (j, &k) in moved_keys.iter().enumerate() {
                self.nodes[keeper].keys.push(k);
                self.nodes[keeper].records.push(moved_records[j]);
                self.store_key(region, keeper, m + j)?;
                self.store_link(region, keeper, m + j)?;
            }
            self.nodes[keeper].next = self.nodes[victim].next;
            self.store_next(region, keeper)?;
            self.store_num(region, keeper)?;
        }
        self.merges += 1;
        let parent = self.nodes[victim].parent.unwrap();
        self.delete_entry(region, parent, k_prime, Ptr::Child(victim))?;
        self.free_node(region, victim)
    }

    fn redistribute(
        &mut self,
        region: &mut Region,
        n: usize,
        neighbor: usize,
        neighbor_is_right: bool,
        k_prime_index: usize,
        k_prime: i64,
    ) -> Result<()> {
        let parent = self.nodes[n].parent.unwrap();
        if !neighbor_is_right {
            // Pull the left neighbor's last entry onto the front of n.
            let m = self.nodes[neighbor].keys.len();
            if !self.nodes[n].is_leaf {
                let donated_key = self.nodes[neighbor].keys.pop().unwrap();
                let moved_child = self.nodes[neighbor].children.pop().unwrap();
                self.nodes[n].keys.insert(0, k_prime);
                self.nodes[n].children.insert(0, moved_child);
                self.nodes[moved_child].parent = Some(n);
                for i in 0..self.nodes[n].keys.len() {
                    self.store_key(region, n, i)?;
                }
                for i in 0..self.nodes[n].children.len() {
                    self.store_link(region, n, i)?;
                }
                self.store_num(region, n)?;
                self.store_parent(region, moved_child)?;
                self.store_link(region, neighbor, m)?; // tidy the vacated child slot
                self.store_num(region, neighbor)?;
                self.nodes[parent].keys[k_prime_index] = donated_key;
                self.store_key(region, parent, k_prime_index)?;
            } else {
                let moved_key = self.nodes[neighbor].keys.pop().unwrap();
                let moved_record = self.nodes[neighbor].records.pop().unwrap();
                self.nodes[n].keys.insert(0, moved_key);
                self.nodes[n].records.insert(0, moved_record);
                for i in 0..self.nodes[n].keys.len() {
                    self.store_key(region, n, i)?;
                    self.store_link(region, n, i)?;
                }
                self.store_num(region, n)?;
                self.store_link(region, neighbor, m - 1)?; // tidy the vacated record slot
                self.store_num(region, neighbor)?;
                self.nodes[parent].keys[k_prime_index] = moved_key;
                self.store_key(region, parent, k_prime_index)?;
            }
        } else {
            // n is its parent's leftmost child: pull the right neighbor's
            // first entry onto the end of n.
            if self.nodes[n].is_leaf {
                let moved_key = self.nodes[neighbor].keys.remove(0);
                let moved_record = self.nodes[neighbor].records.remove(0);
                let e = self.nodes[n].keys.len();
                self.nodes[n].keys.push(moved_key);
                self.nodes[n].records.push(moved_record);
                self.store_key(region, n, e)?;
                self.store_link(region, n, e)?;
                self.store_num(region, n)?;
                self.nodes[parent].keys[k_prime_index] = self.nodes[neighbor].keys[0];
                self.store_key(region, parent, k_prime_index)?;
                for i in 0..self.nodes[neighbor].keys.len() {
                    self.store_key(region, neighbor, i)?;
                    self.store_link(region, neighbor, i)?;
                }
                self.store_num(region, neighbor)?;
            } else {
                let neighbor_first_key = self.nodes[neighbor].keys.remove(0);
                let moved_child = self.nodes[neighbor].children.remove(0);
                let e = self.nodes[n].keys.len();
                self.nodes[n].keys.push(k_prime);
                self.nodes[n].children.push(moved_child);
                self.nodes[moved_child].parent = Some(n);
                self.store_key(region, n, e)?;
                self.store_link(region, n, e + 1)?;
                self.store_num(region, n)?;
                self.store_parent(region, moved_child)?;
                self.nodes[parent].keys[k_prime_index] = neighbor_first_key;
                self.store_key(region, parent, k_prime_index)?;
                for i in 0..self.nodes[neighbor].keys.len() {
                    self.store_key(region, neighbor, i)?;
                }
                for i in 0..self.nodes[neighbor].children.len() {
                    self.store_link(region, neighbor, i)?;
                }
                self.store_num(region, neighbor)?;
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Node bookkeeping and write-through stores

    fn preflight_nodes(&self, region: &Region, needed: u64) -> Result<()> {
        let a = region.arena(ArenaId::TreeNodes).unwrap();
        let available = a.free_slots + (a.len - a.high_water) / NODE_SIZE;
        if available < needed {
            return Err(Error::ArenaExhausted {
                arena: ArenaId::TreeNodes.name(),
                detail: format!("operation may need {needed} node slots, only {available} remain"),
            });
        }
        Ok(())
    }

    fn new_node(&mut self, region: &mut Region, is_leaf: bool) -> Result<usize> {
        let slot = if is_leaf || self.mode == Mode::Fully {
            region.alloc(ArenaId::TreeNodes, NODE_SIZE, NODE_SIZE)?
        } else {
            NIL
        };
        let id = match self.dead.pop() {
            Some(id) => {
                self.nodes[id] = MirrorNode::fresh(is_leaf, slot);
                id
            }
            None => {
                self.nodes.push(MirrorNode::fresh(is_leaf, slot));
                self.nodes.len() - 1
            }
        };
        self.store_is_leaf(region, id)?;
        self.store_num(region, id)?;
        Ok(id)
    }

    fn free_node(&mut self, region: &mut Region, id: usize) -> Result<()> {
        let slot = self.nodes[id].slot;
        if slot != NIL {
            region.free(ArenaId::TreeNodes, slot)?;
        }
        self.nodes[id] = MirrorNode::default();
        self.dead.push(id);
        Ok(())
    }

    /// True when the node's image is written through to the region: leaves
    /// always, internal nodes only in the fully persistent baseline.
    fn durable(&self, id: usize) -> bool {
        self.nodes[id].is_leaf || self.mode == Mode::Fully
    }

    fn store_key(&mut self, region: &mut Region, id: usize, i: usize) -> Result<()> {
        if !self.durable(id) {
            return Ok(());
        }
        let n = &self.nodes[id];
        let off = n.slot + KEYS_OFF + 8 * i as u64;
        let v = n.keys.get(i).copied().unwrap_or(0);
        region.write_i64(off, v)?;
        self.touched.note(off, 8);
        Ok(())
    }

    fn store_link(&mut self, region: &mut Region, id: usize, i: usize) -> Result<()> {
        if !self.durable(id) {
            return Ok(());
        }
        let (off, line) = {
            let n = &self.nodes[id];
            let line = if n.is_leaf {
                n.records.get(i).map_or(0u32, |&r| (r / LINE_SIZE) as u32)
            } else {
                n.children
                    .get(i)
                    .map_or(0u32, |&c| (self.nodes[c].slot / LINE_SIZE) as u32)
            };
            (n.slot + LINKS_OFF + 4 * i as u64, line)
        };
        region.write_u32(off, line)?;
        self.touched.note(off, 4);
        Ok(())
    }

    fn store_next(&mut self, region: &mut Region, id: usize) -> Result<()> {
        let (off, line) = {
            let n = &self.nodes[id];
            let line = n
                .next
                .map_or(0u32, |nx| (self.nodes[nx].slot / LINE_SIZE) as u32);
            (leaf_next_offset(n.slot), line)
        };
        region.write_u32(off, line)?;
        self.touched.note(off, 4);
        Ok(())
    }

    fn store_num(&mut self, region: &mut Region, id: usize) -> Result<()> {
        if !self.durable(id) {
            return Ok(());
        }
        let n = &self.nodes[id];
        let off = n.slot + NUM_OFF;
        let v = n.keys.len() as u32;
        region.write_u32(off, v)?;
        self.touched.note(off, 4);
        Ok(())
    }

    fn store_is_leaf(&mut self, region: &mut Region, id: usize) -> Result<()> {
        if !self.durable(id) {
            return Ok(());
        }
        let n = &self.nodes[id];
        let off = n.slot + IS_LEAF_OFF;
        let v = n.is_leaf as u32;
        region.write_u32(off, v)?;
        self.touched.note(off, 4);
        Ok(())
    }

    fn store_parent(&mut self, region: &mut Region, id: usize) -> Result<()> {
        if self.mode != Mode::Fully {
            return Ok(());
        }
        let (off, line) = {
            let n = &self.nodes[id];
            let line = n
                .parent
                .map_or(0u32, |p| (self.nodes[p].slot / LINE_SIZE) as u32);
            (n.slot + PARENT_OFF, line)
        };
        region.write_u32(off, line)?;
        self.touched.note(off, 4);
        Ok(())
    }

    fn store_header_leftmost(&mut self, region: &mut Region) -> Result<()> {
        let lm = self.leftmost.map_or(NIL, |id| self.nodes[id].slot);
        region.write_u64(self.hdr + HDR_LEFTMOST, lm)?;
        self.touched.note(self.hdr + HDR_LEFTMOST, 8);
        Ok(())
    }

    fn store_header_root(&mut self, region: &mut Region) -> Result<()> {
        if self.mode != Mode::Fully {
            return Ok(());
        }
        let rt = self.root.map_or(NIL, |id| self.nodes[id].slot);
        region.write_u64(self.hdr + HDR_ROOT, rt)?;
        self.touched.note(self.hdr + HDR_ROOT, 8);
        Ok(())
    }

    fn complete(&mut self, region: &mut Region) -> Result<()> {
        self.touched.flush_into(region)?;
        self.ops_since_fence += 1;
        match self.fence {
            FencePolicy::PerOp => {
                region.fence();
                self.ops_since_fence = 0;
            }
            FencePolicy::Batch(k) => {
                if self.ops_since_fence >= k {
                    region.fence();
                    self.ops_since_fence = 0;
                }
            }
        }
        Ok(())
    }

    /// Issues the trailing fence for a batched fence policy.
    pub fn finish(&mut self, region: &mut Region) {
        if self.ops_since_fence > 0 {
            region.fence();
            self.ops_since_fence = 0;
        }
    }

    // ------------------------------------------------------------------
    // Diagnostics

    /// Shape summary: leaf/internal counts, height, occupancy, and the
    /// measured vs modeled persistent-node ratio.
    pub fn stats(&self) -> TreeStats {
        let mut leaves = 0u64;
        let mut keys = 0u64;
        let mut cur = self.leftmost;
        while let Some(id) = cur {
            leaves += 1;
            keys += self.nodes[id].keys.len() as u64;
            cur = self.nodes[id].next;
        }
        let mut internal_nodes = 0u64;
        let mut children_total = 0u64;
        let mut stack: Vec<usize> = self.root.into_iter().collect();
        while let Some(id) = stack.pop() {
            if self.nodes[id].is_leaf {
                continue;
            }
            internal_nodes += 1;
            children_total += self.nodes[id].children.len() as u64;
            stack.extend_from_slice(&self.nodes[id].children);
        }
        let t = if internal_nodes > 0 {
            children_total as f64 / internal_nodes as f64
        } else {
            0.0
        };
        let (measured, modeled) = if internal_nodes > 0 {
            let n = leaves as f64;
            (
                (leaves + internal_nodes) as f64 / n,
                (1.0 - 1.0 / n) * t / (t - 1.0),
            )
        } else {
            (1.0, 1.0)
        };
        TreeStats {
            keys,
            leaves,
            internal_nodes,
            height: self.height(),
            avg_internal_occupancy: t,
            measured_node_ratio: measured,
            modeled_node_ratio: modeled,
        }
    }

    /// Redirects the volatile root to the leftmost leaf (fault injection:
    /// mirror-level root corruption that reconstruction must erase).
    pub fn corrupt_mirror_root(&mut self) {
        if let Some(lm) = self.leftmost {
            self.root = Some(lm);
        }
    }

    /// Points every non-root parent link at the root node (fault injection:
    /// mirror-level parent scramble that reconstruction must erase).
    pub fn scramble_mirror_parents(&mut self) {
        let Some(root) = self.root else { return };
        for id in 0..self.nodes.len() {
            if self.nodes[id].live && id != root {
                self.nodes[id].parent = Some(root);
            }
        }
    }

    /// Full structural audit: balanced depth, ordering, separation, minimum
    /// occupancy, chain consistency, and leaf images matching the mirror.
    pub fn validate(&self, region: &Region) -> Result<(), String> {
        let hdr_leftmost = region
            .read_u64(self.hdr + HDR_LEFTMOST)
            .map_err(|e| e.to_string())?;
        let Some(root) = self.root else {
            if self.leftmost.is_some() {
                return Err("rootless tree still holds a leftmost leaf".into());
            }
            if self.size != 0 {
                return Err(format!("rootless tree claims {} keys", self.size));
            }
            if hdr_leftmost != NIL {
                // A zombie leftmost from a torn first insert is legal only
                // when it carries no keys.
                let num = region
                    .read_u32(hdr_leftmost + NUM_OFF)
                    .map_err(|e| e.to_string())?;
                if num != 0 {
                    return Err(format!(
                        "empty tree, but the header points at a leaf with {num} keys"
                    ));
                }
            }
            return Ok(());
        };
        if self.nodes[root].parent.is_some() {
            return Err("root has a parent".into());
        }
        let mut leaf_depth: Option<u32> = None;
        let mut chain: Vec<usize> = Vec::new();
        self.check_subtree(root, 1, &mut leaf_depth, &mut chain)?;
        // The next-chain must visit exactly the in-order leaves.
        let mut cur = self.leftmost;
        for &expect in &chain {
            let Some(id) = cur else {
                return Err("leaf chain ends early".into());
            };
            if id != expect {
                return Err("leaf chain order deviates from tree order".into());
            }
            cur = self.nodes[id].next;
        }
        if cur.is_some() {
            return Err("leaf chain continues past the last leaf".into());
        }
        let total: u64 = chain
            .iter()
            .map(|&id| self.nodes[id].keys.len() as u64)
            .sum();
        if total != self.size {
            return Err(format!("leaves hold {total} keys, size says {}", self.size));
        }
        if hdr_leftmost != self.nodes[self.leftmost.unwrap()].slot {
            return Err("header leftmost pointer deviates from the mirror".into());
        }
        for &id in &chain {
            self.check_leaf_image(region, id)?;
        }
        Ok(())
    }

    fn check_subtree(
        &self,
        id: usize,
        depth: u32,
        leaf_depth: &mut Option<u32>,
        chain: &mut Vec<usize>,
    ) -> Result<(i64, i64), String> {
        let n = &self.nodes[id];
        if !n.live {
            return Err(format!("dead node {id} is reachable"));
        }
        if n.keys.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("keys not strictly ascending in node {id}"));
        }
        if n.keys.len() > LEAF_CAPACITY {
            return Err(format!("node {id} overflows with {} keys", n.keys.len()));
        }
        let is_root = Some(id) == self.root;
        if n.is_leaf {
            if n.records.len() != n.keys.len() {
                return Err(format!(
                    "leaf {id} has {} records for {} keys",
                    n.records.len(),
                    n.keys.len()
                ));
            }
            if n.keys.is_empty() {
                return Err(format!("leaf {id} holds no keys"));
            }
            if !is_root && n.keys.len() < cut(LEAF_CAPACITY) {
                return Err(format!(
                    "non-root leaf {id} underflows with {} keys",
                    n.keys.len()
                ));
            }
            match *leaf_depth {
                Some(d) if d != depth => return Err("leaves at unequal depths".into()),
                None => *leaf_depth = Some(depth),
                _ => {}
            }
            chain.push(id);
            return Ok((n.keys[0], *n.keys.last().unwrap()));
        }
        if n.children.len() != n.keys.len() + 1 {
            return Err(format!(
                "internal {id} has {} children for {} keys",
                n.children.len(),
                n.keys.len()
            ));
        }
        let min_keys = if is_root { 1 } else { cut(ORDER) - 1 };
        if n.keys.len() < min_keys {
            return Err(format!(
                "internal {id} underflows with {} keys",
                n.keys.len()
            ));
        }
        let mut bounds = Vec::with_capacity(n.children.len());
        for &c in &n.children {
            if self.nodes[c].parent != Some(id) {
                return Err(format!("child {c} does not point back at parent {id}"));
            }
            bounds.push(self.check_subtree(c, depth + 1, leaf_depth, chain)?);
        }
        for (i, &k) in n.keys.iter().enumerate() {
            if bounds[i].1 >= k {
                return Err(format!("separator {k} does not bound its left subtree"));
            }
            if bounds[i + 1].0 < k {
                return Err(format!("separator {k} exceeds its right subtree"));
            }
        }
        Ok((bounds[0].0, bounds[bounds.len() - 1].1))
    }

    fn check_leaf_image(&self, region: &Region, id: usize) -> Result<(), String> {
        let n = &self.nodes[id];
        let read_u32 = |off| region.read_u32(off).map_err(|e| e.to_string());
        if read_u32(n.slot + IS_LEAF_OFF)? != 1 {
            return Err(format!("leaf image {:#x} lost its is_leaf flag", n.slot));
        }
        if read_u32(n.slot + NUM_OFF)? as usize != n.keys.len() {
            return Err(format!("leaf image {:#x} key count deviates", n.slot));
        }
        for (i, &k) in n.keys.iter().enumerate() {
            let img = region
                .read_i64(n.slot + KEYS_OFF + 8 * i as u64)
                .map_err(|e| e.to_string())?;
            if img != k {
                return Err(format!("leaf image {:#x} key {i} deviates", n.slot));
            }
            let line = read_u32(n.slot + LINKS_OFF + 4 * i as u64)? as u64 * LINE_SIZE;
            if line != n.records[i] {
                return Err(format!("leaf image {:#x} record link {i} deviates", n.slot));
            }
        }
        let next_line = read_u32(leaf_next_offset(n.slot))? as u64 * LINE_SIZE;
        let expect = n.next.map_or(0, |nx| self.nodes[nx].slot);
        if next_line != expect {
            return Err(format!("leaf image {:#x} next link deviates", n.slot));
        }
        Ok(())
    }
}

/// Splits one reconstruction level into buckets of `b` children, fixing up a
/// short tail so every internal node respects the minimum occupancy: the
/// tail merges into its predecessor when the union still fits one node,
/// otherwise the two are rebalanced into equal halves.
fn bucket_chunks(level: &[(usize, i64)], b: usize) -> Vec<Vec<(usize, i64)>> {
    let mut chunks: Vec<Vec<(usize, i64)>> = level.chunks(b).map(|c| c.to_vec()).collect();
    let k = chunks.len();
    if k >= 2 && chunks[k - 1].len() < MIN_BUCKET_SIZE {
        let tail = chunks.pop().unwrap();
        let mut merged = chunks.pop().unwrap();
        merged.extend(tail);
        if merged.len() <= ORDER {
            chunks.push(merged);
        } else {
            let right = merged.split_off(cut(merged.len()));
            chunks.push(merged);
            chunks.push(right);
        }
    }
    chunks
}
