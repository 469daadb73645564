//! Recoverable doubly linked list.
//!
//! Each node occupies a 128 B slot (two cache lines) in the
//! [`ListNodes`](ArenaId::ListNodes) arena:
//!
//! ```text
//! line 1 (essential):  value [56 B] | next u64
//! line 2 (redundant):  prev u64 | padding
//! ```
//!
//! The list header holds a single essential field, `head`. `next` pointers
//! plus `head` are enough to rebuild everything else — `prev` pointers, the
//! tail handle, the length, and the allocator free list — so the partly
//! persistent modes flush only line 1 and the header. The fully persistent
//! baseline additionally flushes every `prev` update. Handles returned by
//! [`List::append`] are absolute region offsets and stay valid across
//! crash recovery.

use crate::error::{Error, Result};
use crate::region::{ArenaId, Region, TouchSet, LINE_SIZE, NIL};
use crate::{FencePolicy, Mode};

/// Size of one node slot: two cache lines.
pub const SLOT_SIZE: u64 = 128;
/// Bytes of payload stored in each node.
pub const VALUE_LEN: usize = 56;

const NEXT_OFF: u64 = 56;
const PREV_OFF: u64 = 64;
const HDR_HEAD: u64 = 0;

/// Offset of a node's persistent `next` field (harness fault injection).
pub fn node_next_offset(node: u64) -> u64 {
    node + NEXT_OFF
}

/// Offset of a node's redundant `prev` field (harness fault injection).
pub fn node_prev_offset(node: u64) -> u64 {
    node + PREV_OFF
}

/// Builds a 56 B payload from a word (word in the first 8 bytes, the rest a
/// repeating fill derived from it, so payload corruption is detectable).
pub fn word_value(word: u64) -> [u8; VALUE_LEN] {
    let mut value = [0u8; VALUE_LEN];
    value[..8].copy_from_slice(&word.to_le_bytes());
    for (i, byte) in value[8..].iter_mut().enumerate() {
        *byte = (word.wrapping_mul(0x9e37_79b9_7f4a_7c15) >> ((i % 8) * 8)) as u8;
    }
    value
}

/// Recoverable doubly linked list over a [`Region`].
///
/// `head` lives in the persistent header; `tail` and `len` are volatile and
/// recomputed by [`List::reconstruct`].
#[derive(Debug)]
pub struct List {
    mode: Mode,
    fence: FencePolicy,
    ops_since_fence: u32,
    hdr: u64,
    arena_base: u64,
    arena_len: u64,
    head: u64,
    tail: u64,
    len: u64,
    touched: TouchSet,
}

impl List {
    /// True once [`List::init`] has run on this region.
    pub fn is_initialized(region: &Region) -> Result<bool> {
        region.init_flag(ArenaId::ListHeader)
    }

    /// Initializes an empty list. The header is made durable first and the
    /// init flag is set only afterwards, so a crash during init is never
    /// mistaken for a valid (but torn) structure: two flushes, two fences.
    pub fn init(region: &mut Region, mode: Mode) -> Result<List> {
        if region.init_flag(ArenaId::ListHeader)? {
            return Err(Error::InitState(
                "list is already initialized in this region".into(),
            ));
        }
        region
            .arena(ArenaId::ListNodes)
            .ok_or_else(|| Error::OutOfBounds("region lacks a `list-nodes` arena".into()))?;
        if mode == Mode::PartlyCheckpoint {
            region.enable_staging();
        }
        let hdr = region.arena(ArenaId::ListHeader).unwrap().base;
        region.write_u64(hdr + HDR_HEAD, NIL)?;
        region.flush(hdr + HDR_HEAD, 8)?;
        region.fence();
        let (flag_off, flag_len) = region.set_init_flag(ArenaId::ListHeader)?;
        region.flush(flag_off, flag_len)?;
        region.fence();
        Ok(List::attach(region, mode, NIL, NIL, 0))
    }

    /// Rebuilds the volatile state (prev pointers, tail, length, allocator
    /// free list) from the essential persistent fields after a crash or
    /// reopen. Never flushes.
    pub fn reconstruct(region: &mut Region, mode: Mode) -> Result<List> {
        if !region.init_flag(ArenaId::ListHeader)? {
            return Err(Error::InitState(
                "list was never initialized in this region".into(),
            ));
        }
        if mode == Mode::PartlyCheckpoint {
            region.enable_staging();
        }
        let hdr = region.arena(ArenaId::ListHeader).unwrap().base;
        let arena = region
            .arena(ArenaId::ListNodes)
            .ok_or_else(|| Error::OutOfBounds("region lacks a `list-nodes` arena".into()))?;
        let head = region.read_u64(hdr + HDR_HEAD)?;
        let slots = (arena.len / SLOT_SIZE) as usize;
        let mut visited = vec![false; slots];
        let mut prev = NIL;
        let mut tail = NIL;
        let mut len = 0u64;
        let mut node = head;
        while node != NIL {
            let slot = slot_index(&arena, node).ok_or_else(|| {
                Error::Corruption(format!(
                    "list link points outside the node arena: {node:#x}"
                ))
            })?;
            if visited[slot] {
                return Err(Error::Corruption(format!(
                    "cycle in the list next-chain at node {node:#x}"
                )));
            }
            visited[slot] = true;
            region.write_u64(node + PREV_OFF, prev)?;
            len += 1;
            prev = node;
            let next = region.read_u64(node + NEXT_OFF)?;
            if next == NIL {
                tail = node;
            }
            node = next;
        }
        // Unreachability is deletion: every slot not on the chain joins the
        // free list, so the whole arena extent is accounted for (no leaks).
        let mut free = Vec::new();
        for (slot, seen) in visited.iter().enumerate() {
            if !seen {
                free.push(arena.base + slot as u64 * SLOT_SIZE);
            }
        }
        free.reverse(); // LIFO allocator: hand out the lowest slots first
        region.reset_arena_runtime(ArenaId::ListNodes, arena.len, free, Some(SLOT_SIZE))?;
        Ok(List::attach(region, mode, head, tail, len))
    }

    fn attach(region: &Region, mode: Mode, head: u64, tail: u64, len: u64) -> List {
        let hdr = region.arena(ArenaId::ListHeader).unwrap().base;
        let arena = region.arena(ArenaId::ListNodes).unwrap();
        List {
            mode,
            fence: FencePolicy::default(),
            ops_since_fence: 0,
            hdr,
            arena_base: arena.base,
            arena_len: arena.len,
            head,
            tail,
            len,
            touched: TouchSet::new(),
        }
    }

    /// Replaces the fence policy (default: one fence per operation).
    pub fn set_fence_policy(&mut self, fence: FencePolicy) {
        self.fence = fence;
    }

    /// Number of live nodes.
    pub fn len(&self) -> u64 {
        self.len
    }

    /// True when the list holds no nodes.
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Handle of the first node, or [`NIL`].
    pub fn head(&self) -> u64 {
        self.head
    }

    /// Handle of the last node, or [`NIL`].
    pub fn tail(&self) -> u64 {
        self.tail
    }

    /// Durability mode this list was opened with.
    pub fn mode(&self) -> Mode {
        self.mode
    }

    // ------------------------------------------------------------------
    // Operations
    // ------------------------------------------------------------------

    /// Appends a node at the tail; returns its handle.
    ///
    /// Flush cost: 2 lines in the partly modes (the node's essential line and
    /// the predecessor's `next` — or the header for the first node), 3 in the
    /// fully persistent baseline (plus the node's `prev` line).
    pub fn append(&mut self, region: &mut Region, value: &[u8; VALUE_LEN]) -> Result<u64> {
        let node = region.alloc(ArenaId::ListNodes, SLOT_SIZE, LINE_SIZE)?;
        let mut line = [0u8; 64];
        line[..VALUE_LEN].copy_from_slice(value);
        line[VALUE_LEN..].copy_from_slice(&NIL.to_le_bytes());
        self.pw(region, node, &line)?;
        region.write_u64(node + PREV_OFF, self.tail)?;
        if self.mode == Mode::Fully {
            self.touched.note(node + PREV_OFF, 8);
        }
        if self.tail == NIL {
            region.write_u64(self.hdr + HDR_HEAD, node)?;
            self.touched.note(self.hdr + HDR_HEAD, 8);
            self.head = node;
        } else {
            let pred = self.tail;
            region.write_u64(pred + NEXT_OFF, node)?;
            self.touched.note(pred + NEXT_OFF, 8);
        }
        self.tail = node;
        self.len += 1;
        self.complete(region)?;
        Ok(node)
    }

    /// Appends a node carrying a word payload; returns its handle.
    pub fn append_word(&mut self, region: &mut Region, word: u64) -> Result<u64> {
        self.append(region, &word_value(word))
    }

    /// Unlinks a node by handle.
    ///
    /// Flush cost: 1 line in the partly modes (the predecessor's `next` or
    /// the header); the fully persistent baseline adds the successor's `prev`
    /// line when a successor exists.
    pub fn delete(&mut self, region: &mut Region, node: u64) -> Result<()> {
        self.check_handle(region, node)?;
        let pred = region.read_u64(node + PREV_OFF)?;
        let succ = region.read_u64(node + NEXT_OFF)?;
        if pred == NIL {
            if self.head != node {
                return Err(Error::BadHandle(format!(
                    "node {node:#x} has no predecessor but is not the head"
                )));
            }
            region.write_u64(self.hdr + HDR_HEAD, succ)?;
            self.touched.note(self.hdr + HDR_HEAD, 8);
            self.head = succ;
        } else {
            if region.read_u64(pred + NEXT_OFF)? != node {
                return Err(Error::BadHandle(format!(
                    "node {node:#x} is not linked from its recorded predecessor"
                )));
            }
            region.write_u64(pred + NEXT_OFF, succ)?;
            self.touched.note(pred + NEXT_OFF, 8);
        }
        if succ != NIL {
            region.write_u64(succ + PREV_OFF, pred)?;
            if self.mode == Mode::Fully {
                self.touched.note(succ + PREV_OFF, 8);
            }
        }
        if self.tail == node {
            self.tail = pred;
        }
        region.free(ArenaId::ListNodes, node)?;
        self.len -= 1;
        self.complete(region)
    }

    /// Issues the trailing fence for a batched fence policy.
    pub fn finish(&mut self, region: &mut Region) {
        if self.ops_since_fence > 0 {
            region.fence();
            self.ops_since_fence = 0;
        }
    }

    fn pw(&mut self, region: &mut Region, off: u64, bytes: &[u8]) -> Result<()> {
        region.write(off, bytes)?;
        self.touched.note(off, bytes.len() as u64);
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

    fn check_handle(&self, region: &Region, node: u64) -> Result<()> {
        if self.len == 0 {
            return Err(Error::BadHandle("delete from an empty list".into()));
        }
        let in_arena = node >= self.arena_base
            && node + SLOT_SIZE <= self.arena_base + self.arena_len
            && (node - self.arena_base).is_multiple_of(SLOT_SIZE);
        if !in_arena {
            return Err(Error::BadHandle(format!(
                "{node:#x} is not a list node handle"
            )));
        }
        #[cfg(debug_assertions)]
        if self.len <= 1024 {
            let mut cur = self.head;
            let mut reachable = false;
            while cur != NIL {
                if cur == node {
                    reachable = true;
                    break;
                }
                cur = region.read_u64(cur + NEXT_OFF)?;
            }
            if !reachable {
                return Err(Error::BadHandle(format!(
                    "node {node:#x} is not reachable from the head"
                )));
            }
        }
        #[cfg(not(debug_assertions))]
        let _ = region;
        Ok(())
    }

    // ------------------------------------------------------------------
    // Reads
    // ------------------------------------------------------------------

    /// Payload of a node.
    pub fn value<'r>(&self, region: &'r Region, node: u64) -> Result<&'r [u8]> {
        region.read(node, VALUE_LEN as u64)
    }

    /// First 8 payload bytes as a word.
    pub fn word(&self, region: &Region, node: u64) -> Result<u64> {
        region.read_u64(node)
    }

    /// Successor handle, or [`NIL`].
    pub fn next(&self, region: &Region, node: u64) -> Result<u64> {
        region.read_u64(node + NEXT_OFF)
    }

    /// Predecessor handle (redundant field), or [`NIL`].
    pub fn prev(&self, region: &Region, node: u64) -> Result<u64> {
        region.read_u64(node + PREV_OFF)
    }

    /// Handle of the n-th node from the head (0-based).
    pub fn nth_node(&self, region: &Region, n: u64) -> Result<u64> {
        let mut cur = self.head;
        let mut i = 0;
        while cur != NIL {
            if i == n {
                return Ok(cur);
            }
            cur = self.next(region, cur)?;
            i += 1;
        }
        Err(Error::BadHandle(format!(
            "list has only {i} nodes, wanted index {n}"
        )))
    }

    /// Payload words from head to tail via `next` links.
    pub fn words(&self, region: &Region) -> Result<Vec<u64>> {
        let mut out = Vec::with_capacity(self.len as usize);
        let mut cur = self.head;
        let mut guard = 0u64;
        while cur != NIL {
            out.push(self.word(region, cur)?);
            cur = self.next(region, cur)?;
            guard += 1;
            if guard > self.len {
                return Err(Error::Corruption(
                    "next-chain longer than the tracked length".into(),
                ));
            }
        }
        Ok(out)
    }

    /// Payload words from tail to head via the redundant `prev` links.
    pub fn words_rev(&self, region: &Region) -> Result<Vec<u64>> {
        let mut out = Vec::with_capacity(self.len as usize);
        let mut cur = self.tail;
        let mut guard = 0u64;
        while cur != NIL {
            out.push(self.word(region, cur)?);
            cur = self.prev(region, cur)?;
            guard += 1;
            if guard > self.len {
                return Err(Error::Corruption(
                    "prev-chain longer than the tracked length".into(),
                ));
            }
        }
        Ok(out)
    }

    // ------------------------------------------------------------------
    // Fault-injection hooks (used by the crash harness)
    // ------------------------------------------------------------------

    /// Overwrites the volatile tail handle with a bogus value.
    pub fn corrupt_tail_handle(&mut self, bogus: u64) {
        self.tail = bogus;
    }

    /// Checks structural invariants against the region; returns a
    /// human-readable report of the first violation.
    pub fn validate(&self, region: &Region) -> Result<(), String> {
        let forward = self.words(region).map_err(|e| e.to_string())?;
        if forward.len() as u64 != self.len {
            return Err(format!(
                "length mismatch: walked {} nodes, tracked {}",
                forward.len(),
                self.len
            ));
        }
        let mut backward = self.words_rev(region).map_err(|e| e.to_string())?;
        backward.reverse();
        if forward != backward {
            return Err("prev-chain does not mirror the next-chain".into());
        }
        // prev of head must be NIL, next of tail must be NIL.
        if self.head != NIL && self.prev(region, self.head).map_err(|e| e.to_string())? != NIL {
            return Err("head has a non-nil prev".into());
        }
        if self.tail != NIL && self.next(region, self.tail).map_err(|e| e.to_string())? != NIL {
            return Err("tail has a non-nil next".into());
        }
        Ok(())
    }
}

fn slot_index(arena: &crate::region::ArenaInfo, node: u64) -> Option<usize> {
    if node < arena.base || node + SLOT_SIZE > arena.base + arena.len {
        return None;
    }
    let rel = node - arena.base;
    if !rel.is_multiple_of(SLOT_SIZE) {
        return None;
    }
    Some((rel / SLOT_SIZE) as usize)
}
