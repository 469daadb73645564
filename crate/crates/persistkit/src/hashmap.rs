//! Recoverable chained hashmap.
//!
//! Each entry occupies a 128 B slot (two cache lines) in the
//! [`MapEntries`](ArenaId::MapEntries) arena:
//!
//! ```text
//! line 1 (essential):  key u64 | value [56 B]        (key 0 = empty sentinel)
//! line 2 (redundant):  hash u32 | pad | next u64 | padding
//! ```
//!
//! Only the entry keys/values and the entry count in the header are
//! essential. The bucket array, chain links, cached hashes and the bucket
//! count itself are redundant: recovery always derives the bucket count from
//! the persisted size (smallest power of two keeping the load factor), then
//! scans the entry arena, stopping after `size` live entries, rehashing each
//! into fresh chains. Removal marks the key with the 0 sentinel, which also
//! lets recovery rebuild the allocator free list over the full arena extent.
//! The fully persistent baseline additionally flushes the bucket array, the
//! chain links and the hash cache; those copies are write-only redundancy —
//! recovery never reads them.

use crate::error::{Error, Result};
use crate::region::{ArenaId, Region, TouchSet, LINE_SIZE, NIL};
use crate::{FencePolicy, Mode};

/// Size of one entry slot: two cache lines.
pub const SLOT_SIZE: u64 = 128;
/// Bytes of payload stored with each key.
pub const VALUE_LEN: usize = 56;
/// Reserved key marking an empty slot.
pub const SENTINEL_KEY: u64 = 0;
/// Default load factor: grow when size exceeds 3/4 of the bucket count.
pub const DEFAULT_LOAD_FACTOR: f64 = 0.75;

const VALUE_OFF: u64 = 8;
const HASH_OFF: u64 = 64;
const NEXT_OFF: u64 = 72;
const HDR_SIZE: u64 = 0;

/// 64-bit mix of a key (splitmix64 finalizer).
pub fn hash64(key: u64) -> u64 {
    let mut x = key;
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// 32-bit hash cached in each entry's redundant line.
pub fn hash32(key: u64) -> u32 {
    hash64(key) as u32
}

fn bucket_of(h: u32, bucket_count: u64) -> usize {
    (h as u64 & (bucket_count - 1)) as usize
}

/// Bucket count recovery derives from a persisted size: the smallest power
/// of two whose load stays within the load factor.
pub fn recovered_bucket_count(size: u64, load_factor: f64) -> u64 {
    let mut c = 1u64;
    while size as f64 > load_factor * c as f64 {
        c *= 2;
    }
    c
}

/// Offset of an entry's redundant cached-hash field (fault injection).
pub fn entry_hash_offset(entry: u64) -> u64 {
    entry + HASH_OFF
}

/// Offset of an entry's redundant chain-link field (fault injection).
pub fn entry_next_offset(entry: u64) -> u64 {
    entry + NEXT_OFF
}

/// Builds a 56 B value from a word (same scheme as the list payloads).
pub fn word_value(word: u64) -> [u8; VALUE_LEN] {
    crate::list::word_value(word)
}

/// Recoverable hashmap over a [`Region`].
#[derive(Debug)]
pub struct Hashmap {
    mode: Mode,
    fence: FencePolicy,
    ops_since_fence: u32,
    hdr: u64,
    entries_base: u64,
    entries_len: u64,
    buckets_base: Option<u64>,
    buckets_len: u64,
    heads: Vec<u64>,
    bucket_count: u64,
    size: u64,
    load_factor: f64,
    touched: TouchSet,
}

impl Hashmap {
    /// True once [`Hashmap::init`] has run on this region.
    pub fn is_initialized(region: &Region) -> Result<bool> {
        region.init_flag(ArenaId::MapHeader)
    }

    /// Initializes an empty map sized for roughly `capacity_hint` entries.
    pub fn init(
        region: &mut Region,
        mode: Mode,
        capacity_hint: u64,
        load_factor: f64,
    ) -> Result<Hashmap> {
        check_load_factor(load_factor)?;
        if region.init_flag(ArenaId::MapHeader)? {
            return Err(Error::InitState(
                "hashmap is already initialized in this region".into(),
            ));
        }
        if mode == Mode::PartlyCheckpoint {
            region.enable_staging();
        }
        let bucket_count = recovered_bucket_count(capacity_hint, load_factor).max(16);
        let map = Hashmap::attach(region, mode, load_factor, bucket_count, 0)?;
        if mode == Mode::Fully {
            map.ensure_bucket_room(bucket_count)?;
        }
        // Make the header durable first, then set the init flag: a crash
        // between the two fences reads back as "never initialized" rather
        // than as a torn map. Two flushes, two fences, in every mode — the
        // bucket count is volatile and never persisted.
        region.write_u64(map.hdr + HDR_SIZE, 0)?;
        region.flush(map.hdr + HDR_SIZE, 8)?;
        region.fence();
        let (flag_off, flag_len) = region.set_init_flag(ArenaId::MapHeader)?;
        region.flush(flag_off, flag_len)?;
        region.fence();
        Ok(map)
    }

    /// Rebuilds the volatile state from the essential persistent fields.
    ///
    /// The bucket count is derived from the persisted size in every mode
    /// (smallest power of two keeping the load within the load factor). The
    /// entry arena is scanned in slot order; chain rebuilding stops once
    /// `size` live entries have been found, and the remainder of the arena
    /// extent feeds the allocator free list, so every slot is accounted for.
    /// Never flushes.
    pub fn reconstruct(region: &mut Region, mode: Mode, load_factor: f64) -> Result<Hashmap> {
        check_load_factor(load_factor)?;
        if !region.init_flag(ArenaId::MapHeader)? {
            return Err(Error::InitState(
                "hashmap was never initialized in this region".into(),
            ));
        }
        if mode == Mode::PartlyCheckpoint {
            region.enable_staging();
        }
        let hdr = region.arena(ArenaId::MapHeader).unwrap().base;
        let size = region.read_u64(hdr + HDR_SIZE)?;
        let bucket_count = recovered_bucket_count(size, load_factor);
        let mut map = Hashmap::attach(region, mode, load_factor, bucket_count, size)?;
        let slots = map.entries_len / SLOT_SIZE;
        let mut tails: Vec<u64> = vec![NIL; bucket_count as usize];
        let mut free = Vec::new();
        let mut found = 0u64;
        let mut slot = 0u64;
        while found < size {
            if slot == slots {
                return Err(Error::Corruption(format!(
                    "persisted size is {size} but only {found} live entries exist"
                )));
            }
            let e = map.entries_base + slot * SLOT_SIZE;
            let key = region.read_u64(e)?;
            if key == SENTINEL_KEY {
                free.push(e);
            } else {
                let h = hash32(key);
                let idx = bucket_of(h, bucket_count);
                let mut line2 = [0u8; 16];
                line2[..4].copy_from_slice(&h.to_le_bytes());
                line2[8..].copy_from_slice(&NIL.to_le_bytes());
                region.write(e + HASH_OFF, &line2)?;
                if tails[idx] == NIL {
                    map.heads[idx] = e;
                } else {
                    region.write_u64(tails[idx] + NEXT_OFF, e)?;
                }
                tails[idx] = e;
                found += 1;
            }
            slot += 1;
        }
        // The chains are complete; sweep the rest of the arena so every
        // sentinel slot lands on the free list. A live-looking slot out here
        // means the image holds more entries than the persisted size admits
        // (a torn insert) — report it rather than silently recycle it.
        for s in slot..slots {
            let e = map.entries_base + s * SLOT_SIZE;
            if region.read_u64(e)? == SENTINEL_KEY {
                free.push(e);
            } else {
                return Err(Error::Corruption(format!(
                    "live entry in slot {s} beyond the persisted size {size}"
                )));
            }
        }
        free.reverse(); // LIFO allocator: hand out the lowest slots first
        region.reset_arena_runtime(ArenaId::MapEntries, map.entries_len, free, Some(SLOT_SIZE))?;
        Ok(map)
    }

    fn attach(
        region: &Region,
        mode: Mode,
        load_factor: f64,
        bucket_count: u64,
        size: u64,
    ) -> Result<Hashmap> {
        let hdr = region
            .arena(ArenaId::MapHeader)
            .ok_or_else(|| Error::OutOfBounds("region lacks a `map-header` arena".into()))?
            .base;
        let entries = region
            .arena(ArenaId::MapEntries)
            .ok_or_else(|| Error::OutOfBounds("region lacks a `map-entries` arena".into()))?;
        let buckets = region.arena(ArenaId::MapBuckets);
        if mode == Mode::Fully && buckets.is_none() {
            return Err(Error::OutOfBounds(
                "fully persistent hashmap requires a `map-buckets` arena".into(),
            ));
        }
        Ok(Hashmap {
            mode,
            fence: FencePolicy::default(),
            ops_since_fence: 0,
            hdr,
            entries_base: entries.base,
            entries_len: entries.len,
            buckets_base: buckets.map(|b| b.base),
            buckets_len: buckets.map_or(0, |b| b.len),
            heads: vec![NIL; bucket_count as usize],
            bucket_count,
            size,
            load_factor,
            touched: TouchSet::new(),
        })
    }

    fn ensure_bucket_room(&self, bucket_count: u64) -> Result<()> {
        if self.mode == Mode::Fully && bucket_count * 8 > self.buckets_len {
            return Err(Error::ArenaExhausted {
                arena: ArenaId::MapBuckets.name(),
                detail: format!(
                    "bucket array of {bucket_count} heads needs {} bytes, arena holds {}",
                    bucket_count * 8,
                    self.buckets_len
                ),
            });
        }
        Ok(())
    }

    /// Replaces the fence policy (default: one fence per operation).
    pub fn set_fence_policy(&mut self, fence: FencePolicy) {
        self.fence = fence;
    }

    /// Number of live entries.
    pub fn len(&self) -> u64 {
        self.size
    }

    /// True when the map holds no entries.
    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Current bucket count.
    pub fn bucket_count(&self) -> u64 {
        self.bucket_count
    }

    /// Durability mode this map was opened with.
    pub fn mode(&self) -> Mode {
        self.mode
    }

    // ------------------------------------------------------------------
    // Operations
    // ------------------------------------------------------------------

    /// Inserts or overwrites; returns true when the key was new.
    ///
    /// Flush cost for a new key: 2 lines in the partly modes (entry line +
    /// header size line), 4 in the fully persistent baseline (plus the
    /// entry's redundant line and the chain/bucket link), and overwriting an
    /// existing key costs 1 line in every mode. A partly-mode table growth
    /// flushes nothing extra; a fully-persistent growth rewrites the bucket
    /// array and every chain link.
    pub fn put(&mut self, region: &mut Region, key: u64, value: &[u8; VALUE_LEN]) -> Result<bool> {
        check_key(key)?;
        let h = hash32(key);
        let idx = bucket_of(h, self.bucket_count);
        let mut pred = NIL;
        let mut e = self.heads[idx];
        while e != NIL {
            if region.read_u64(e)? == key {
                self.pw(region, e + VALUE_OFF, value)?;
                self.complete(region)?;
                return Ok(false);
            }
            pred = e;
            e = region.read_u64(e + NEXT_OFF)?;
        }
        let e = region.alloc(ArenaId::MapEntries, SLOT_SIZE, LINE_SIZE)?;
        let mut line1 = [0u8; 64];
        line1[..8].copy_from_slice(&key.to_le_bytes());
        line1[8..].copy_from_slice(value);
        self.pw(region, e, &line1)?;
        let mut line2 = [0u8; 16];
        line2[..4].copy_from_slice(&h.to_le_bytes());
        line2[8..].copy_from_slice(&NIL.to_le_bytes());
        region.write(e + HASH_OFF, &line2)?;
        if self.mode == Mode::Fully {
            self.touched.note(e + HASH_OFF, 16);
        }
        if pred == NIL {
            self.heads[idx] = e;
            if self.mode == Mode::Fully {
                let slot = self.buckets_base.unwrap() + idx as u64 * 8;
                self.pw(region, slot, &e.to_le_bytes())?;
            }
        } else {
            region.write_u64(pred + NEXT_OFF, e)?;
            if self.mode == Mode::Fully {
                self.touched.note(pred + NEXT_OFF, 8);
            }
        }
        self.size += 1;
        let size = self.size;
        self.pw(region, self.hdr + HDR_SIZE, &size.to_le_bytes())?;
        if self.size as f64 > self.load_factor * self.bucket_count as f64 {
            self.grow(region)?;
        }
        self.complete(region)?;
        Ok(true)
    }

    /// Inserts or overwrites a word payload.
    pub fn put_word(&mut self, region: &mut Region, key: u64, word: u64) -> Result<bool> {
        self.put(region, key, &word_value(word))
    }

    /// Removes a key.
    ///
    /// The entry's key field is overwritten with the 0 sentinel before the
    /// header size is updated, so recovery can never resurrect the entry.
    /// Flush cost: 2 lines in the partly modes, 3 fully persistent.
    pub fn remove(&mut self, region: &mut Region, key: u64) -> Result<()> {
        check_key(key)?;
        let idx = bucket_of(hash32(key), self.bucket_count);
        let mut pred = NIL;
        let mut e = self.heads[idx];
        while e != NIL {
            if region.read_u64(e)? == key {
                let succ = region.read_u64(e + NEXT_OFF)?;
                self.pw(region, e, &SENTINEL_KEY.to_le_bytes())?;
                if pred == NIL {
                    self.heads[idx] = succ;
                    if self.mode == Mode::Fully {
                        let slot = self.buckets_base.unwrap() + idx as u64 * 8;
                        self.pw(region, slot, &succ.to_le_bytes())?;
                    }
                } else {
                    region.write_u64(pred + NEXT_OFF, succ)?;
                    if self.mode == Mode::Fully {
                        self.touched.note(pred + NEXT_OFF, 8);
                    }
                }
                self.size -= 1;
                let size = self.size;
                self.pw(region, self.hdr + HDR_SIZE, &size.to_le_bytes())?;
                region.free(ArenaId::MapEntries, e)?;
                return self.complete(region);
            }
            pred = e;
            e = region.read_u64(e + NEXT_OFF)?;
        }
        Err(Error::Key(format!("key {key} is not present")))
    }

    /// Looks up a key's value.
    pub fn get<'r>(&self, region: &'r Region, key: u64) -> Result<Option<&'r [u8]>> {
        check_key(key)?;
        let idx = bucket_of(hash32(key), self.bucket_count);
        let mut e = self.heads[idx];
        while e != NIL {
            if region.read_u64(e)? == key {
                return Ok(Some(region.read(e + VALUE_OFF, VALUE_LEN as u64)?));
            }
            e = region.read_u64(e + NEXT_OFF)?;
        }
        Ok(None)
    }

    /// Looks up a key's word payload.
    pub fn get_word(&self, region: &Region, key: u64) -> Result<Option<u64>> {
        Ok(self
            .get(region, key)?
            .map(|value| u64::from_le_bytes(value[..8].try_into().unwrap())))
    }

    /// Issues the trailing fence for a batched fence policy.
    pub fn finish(&mut self, region: &mut Region) {
        if self.ops_since_fence > 0 {
            region.fence();
            self.ops_since_fence = 0;
        }
    }

    fn grow(&mut self, region: &mut Region) -> Result<()> {
        let new_count = self.bucket_count * 2;
        self.ensure_bucket_room(new_count)?;
        // Collect every chain up front: relinking rewrites the `next` fields
        // that the walk would otherwise follow.
        let mut chains: Vec<Vec<u64>> = vec![Vec::new(); new_count as usize];
        for &head in &self.heads {
            let mut e = head;
            while e != NIL {
                let h = region.read_u32(e + HASH_OFF)?;
                chains[bucket_of(h, new_count)].push(e);
                e = region.read_u64(e + NEXT_OFF)?;
            }
        }
        let mut heads = vec![NIL; new_count as usize];
        for (idx, chain) in chains.iter().enumerate() {
            if let Some(&first) = chain.first() {
                heads[idx] = first;
            }
            for pair in chain.windows(2) {
                region.write_u64(pair[0] + NEXT_OFF, pair[1])?;
                if self.mode == Mode::Fully {
                    self.touched.note(pair[0] + NEXT_OFF, 8);
                }
            }
            if let Some(&last) = chain.last() {
                region.write_u64(last + NEXT_OFF, NIL)?;
                if self.mode == Mode::Fully {
                    self.touched.note(last + NEXT_OFF, 8);
                }
            }
        }
        if self.mode == Mode::Fully {
            let mut array = Vec::with_capacity((new_count * 8) as usize);
            for &head in &heads {
                array.extend_from_slice(&head.to_le_bytes());
            }
            let base = self.buckets_base.unwrap();
            self.pw(region, base, &array)?;
        }
        self.bucket_count = new_count;
        self.heads = heads;
        Ok(())
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

    // ------------------------------------------------------------------
    // Inspection
    // ------------------------------------------------------------------

    /// All `(key, word)` pairs, sorted by key.
    pub fn word_pairs(&self, region: &Region) -> Result<Vec<(u64, u64)>> {
        let mut out = Vec::with_capacity(self.size as usize);
        for &head in &self.heads {
            let mut e = head;
            let mut guard = 0u64;
            while e != NIL {
                let key = region.read_u64(e)?;
                let word = region.read_u64(e + VALUE_OFF)?;
                out.push((key, word));
                e = region.read_u64(e + NEXT_OFF)?;
                guard += 1;
                if guard > self.size {
                    return Err(Error::Corruption("chain longer than the map size".into()));
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Handles of all live entries in bucket/chain order (fault injection).
    pub fn entries_in_chain_order(&self, region: &Region) -> Result<Vec<u64>> {
        let mut out = Vec::with_capacity(self.size as usize);
        for &head in &self.heads {
            let mut e = head;
            while e != NIL {
                out.push(e);
                e = region.read_u64(e + NEXT_OFF)?;
                if out.len() as u64 > self.size {
                    return Err(Error::Corruption("chain longer than the map size".into()));
                }
            }
        }
        Ok(out)
    }

    /// Overwrites a volatile bucket head with a bogus handle (fault
    /// injection; checkpoint mode keeps it out of the durable image).
    pub fn corrupt_bucket_head(&mut self, bucket: usize, bogus: u64) {
        if bucket < self.heads.len() {
            self.heads[bucket] = bogus;
        }
    }

    /// Checks structural invariants; returns the first violation.
    pub fn validate(&self, region: &Region) -> Result<(), String> {
        let mut counted = 0u64;
        for (idx, &head) in self.heads.iter().enumerate() {
            let mut e = head;
            while e != NIL {
                let key = region.read_u64(e).map_err(|err| err.to_string())?;
                if key == SENTINEL_KEY {
                    return Err(format!("chain {idx} contains a sentinel slot"));
                }
                let cached = region
                    .read_u32(e + HASH_OFF)
                    .map_err(|err| err.to_string())?;
                if cached != hash32(key) {
                    return Err(format!("entry for key {key} carries a stale hash cache"));
                }
                if bucket_of(cached, self.bucket_count) != idx {
                    return Err(format!("key {key} resides in bucket {idx}, not its home"));
                }
                counted += 1;
                if counted > self.size {
                    return Err("chains contain more entries than the tracked size".into());
                }
                e = region
                    .read_u64(e + NEXT_OFF)
                    .map_err(|err| err.to_string())?;
            }
        }
        if counted != self.size {
            return Err(format!(
                "chains hold {counted} entries, size says {}",
                self.size
            ));
        }
        let persisted = region
            .read_u64(self.hdr + HDR_SIZE)
            .map_err(|err| err.to_string())?;
        if persisted != self.size {
            return Err(format!(
                "persisted size {persisted} != tracked size {}",
                self.size
            ));
        }
        Ok(())
    }
}

fn check_key(key: u64) -> Result<()> {
    if key == SENTINEL_KEY {
        return Err(Error::Key(
            "key 0 is reserved as the empty-slot sentinel".into(),
        ));
    }
    Ok(())
}

fn check_load_factor(load_factor: f64) -> Result<()> {
    if !(load_factor > 0.0 && load_factor <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "load factor must be in (0, 1], got {load_factor}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::{CrashPolicy, RegionLayout};

    fn region() -> Region {
        let layout = RegionLayout::new()
            .with(ArenaId::MapHeader, 256)
            .with(ArenaId::MapEntries, 128 * 1024)
            .with(ArenaId::MapBuckets, 16 * 1024);
        Region::create_sim(256 + 256 + 128 * 1024 + 16 * 1024, &layout).unwrap()
    }

    fn flush_delta(region: &Region, before: u64) -> u64 {
        region.stats().line_flushes - before
    }

    #[test]
    fn init_flush_counts() {
        // Size round, then flag round: two flushes and two fences, in every
        // mode — the bucket count never reaches the header.
        for mode in [Mode::PartlyDirect, Mode::PartlyCheckpoint, Mode::Fully] {
            let mut r = region();
            Hashmap::init(&mut r, mode, 0, DEFAULT_LOAD_FACTOR).unwrap();
            assert_eq!(r.stats().line_flushes, 2, "{mode:?}");
            assert_eq!(r.stats().flush_calls, 2, "{mode:?}");
            assert_eq!(r.stats().fences, 2, "{mode:?}");
        }
    }

    #[test]
    fn crash_between_init_fences_leaves_flag_unset() {
        let mut r = region();
        r.arm_crash(
            crate::region::CrashTrigger::AfterFenceIndex(1),
            CrashPolicy::DropAllPending,
        )
        .unwrap();
        Hashmap::init(&mut r, Mode::PartlyDirect, 0, DEFAULT_LOAD_FACTOR).unwrap();
        let mut image = r.take_armed_crash().unwrap().unwrap();
        assert!(!Hashmap::is_initialized(&image).unwrap());
        assert!(matches!(
            Hashmap::reconstruct(&mut image, Mode::PartlyDirect, DEFAULT_LOAD_FACTOR),
            Err(Error::InitState(_))
        ));
    }

    #[test]
    fn put_new_costs_two_lines_partly_four_fully() {
        for (mode, expect) in [
            (Mode::PartlyDirect, 2),
            (Mode::PartlyCheckpoint, 2),
            (Mode::Fully, 4),
        ] {
            let mut r = region();
            let mut map = Hashmap::init(&mut r, mode, 8, DEFAULT_LOAD_FACTOR).unwrap();
            for key in 1..=8u64 {
                let before = r.stats().line_flushes;
                assert!(map.put_word(&mut r, key, key * 10).unwrap());
                assert_eq!(flush_delta(&r, before), expect, "put {key}, {mode:?}");
            }
        }
    }

    #[test]
    fn duplicate_put_costs_one_line() {
        for mode in [Mode::PartlyDirect, Mode::Fully] {
            let mut r = region();
            let mut map = Hashmap::init(&mut r, mode, 8, DEFAULT_LOAD_FACTOR).unwrap();
            map.put_word(&mut r, 7, 70).unwrap();
            let before = r.stats().line_flushes;
            assert!(!map.put_word(&mut r, 7, 71).unwrap());
            assert_eq!(flush_delta(&r, before), 1, "{mode:?}");
            assert_eq!(map.get_word(&r, 7).unwrap(), Some(71));
            assert_eq!(map.len(), 1);
        }
    }

    #[test]
    fn remove_costs_two_lines_partly_three_fully() {
        for (mode, expect) in [(Mode::PartlyDirect, 2), (Mode::Fully, 3)] {
            let mut r = region();
            let mut map = Hashmap::init(&mut r, mode, 8, DEFAULT_LOAD_FACTOR).unwrap();
            for key in 1..=4u64 {
                map.put_word(&mut r, key, key).unwrap();
            }
            let before = r.stats().line_flushes;
            map.remove(&mut r, 3).unwrap();
            assert_eq!(flush_delta(&r, before), expect, "{mode:?}");
            assert_eq!(map.get_word(&r, 3).unwrap(), None);
        }
    }

    #[test]
    fn missing_remove_flushes_and_fences_nothing() {
        let mut r = region();
        let mut map = Hashmap::init(&mut r, Mode::PartlyDirect, 8, DEFAULT_LOAD_FACTOR).unwrap();
        map.put_word(&mut r, 1, 1).unwrap();
        let before = r.stats();
        assert!(matches!(map.remove(&mut r, 99), Err(Error::Key(_))));
        let after = r.stats();
        assert_eq!(after.line_flushes, before.line_flushes);
        assert_eq!(after.fences, before.fences);
    }

    #[test]
    fn key_zero_is_rejected() {
        let mut r = region();
        let mut map = Hashmap::init(&mut r, Mode::PartlyDirect, 8, DEFAULT_LOAD_FACTOR).unwrap();
        assert!(matches!(map.put_word(&mut r, 0, 1), Err(Error::Key(_))));
        assert!(matches!(map.get(&r, 0), Err(Error::Key(_))));
    }

    #[test]
    fn partly_growth_adds_no_flushes() {
        let mut r = region();
        let mut map = Hashmap::init(&mut r, Mode::PartlyDirect, 8, DEFAULT_LOAD_FACTOR).unwrap();
        assert_eq!(map.bucket_count(), 16);
        // 13th insert crosses 0.75 * 16 = 12 and doubles the table.
        for key in 1..=13u64 {
            let before = r.stats().line_flushes;
            map.put_word(&mut r, key, key).unwrap();
            assert_eq!(flush_delta(&r, before), 2, "put {key}");
        }
        assert_eq!(map.bucket_count(), 32);
        map.validate(&r).unwrap();
    }

    #[test]
    fn fully_growth_rewrites_buckets_and_links() {
        let mut r = region();
        let mut map = Hashmap::init(&mut r, Mode::Fully, 8, DEFAULT_LOAD_FACTOR).unwrap();
        for key in 1..=12u64 {
            map.put_word(&mut r, key, key).unwrap();
        }
        let before = r.stats().line_flushes;
        map.put_word(&mut r, 13, 13).unwrap();
        // Union of the triggering put and the growth rewrite:
        // 1 entry line + 13 redundant entry lines + 32*8/64 bucket lines + header.
        assert_eq!(flush_delta(&r, before), 1 + 13 + 4 + 1);
        assert_eq!(map.bucket_count(), 32);
        map.validate(&r).unwrap();
    }

    #[test]
    fn recovery_matches_reference_and_derives_bucket_count() {
        let mut r = region();
        let mut map = Hashmap::init(&mut r, Mode::PartlyDirect, 8, DEFAULT_LOAD_FACTOR).unwrap();
        let mut reference = std::collections::HashMap::new();
        for key in 1..=100u64 {
            map.put_word(&mut r, key, key * 3).unwrap();
            reference.insert(key, key * 3);
        }
        for key in (2..=60u64).step_by(2) {
            map.remove(&mut r, key).unwrap();
            reference.remove(&key);
        }
        let mut crashed = r.simulate_crash(CrashPolicy::DropAllPending).unwrap();
        let recovered =
            Hashmap::reconstruct(&mut crashed, Mode::PartlyDirect, DEFAULT_LOAD_FACTOR).unwrap();
        assert_eq!(recovered.len(), 70);
        // 70 live entries: smallest power of two with 70 <= 0.75c is 128.
        assert_eq!(recovered.bucket_count(), 128);
        let mut expect: Vec<(u64, u64)> = reference.into_iter().collect();
        expect.sort_unstable();
        assert_eq!(recovered.word_pairs(&crashed).unwrap(), expect);
        recovered.validate(&crashed).unwrap();
    }

    #[test]
    fn recovery_bucket_count_examples() {
        assert_eq!(recovered_bucket_count(0, 0.75), 1);
        assert_eq!(recovered_bucket_count(3, 0.75), 4);
        assert_eq!(recovered_bucket_count(100, 0.75), 256);
        assert_eq!(recovered_bucket_count(96, 0.75), 128);
    }

    #[test]
    fn recovery_reuses_sentinel_slots() {
        let mut r = region();
        let mut map = Hashmap::init(&mut r, Mode::PartlyDirect, 8, DEFAULT_LOAD_FACTOR).unwrap();
        for key in 1..=6u64 {
            map.put_word(&mut r, key, key).unwrap();
        }
        map.remove(&mut r, 2).unwrap(); // slot 1 becomes a sentinel
        map.remove(&mut r, 5).unwrap(); // slot 4 becomes a sentinel
        let mut crashed = r.simulate_crash(CrashPolicy::DropAllPending).unwrap();
        let mut recovered =
            Hashmap::reconstruct(&mut crashed, Mode::PartlyDirect, DEFAULT_LOAD_FACTOR).unwrap();
        let base = crashed.arena(ArenaId::MapEntries).unwrap().base;
        recovered.put_word(&mut crashed, 50, 50).unwrap();
        recovered.put_word(&mut crashed, 51, 51).unwrap();
        // The rebuilt free list hands out the lowest sentinel slots first.
        assert_eq!(crashed.read_u64(base + SLOT_SIZE).unwrap(), 50);
        assert_eq!(crashed.read_u64(base + 4 * SLOT_SIZE).unwrap(), 51);
        recovered.validate(&crashed).unwrap();
    }

    #[test]
    fn oversized_persisted_size_is_corruption() {
        let mut r = region();
        let mut map = Hashmap::init(&mut r, Mode::PartlyDirect, 8, DEFAULT_LOAD_FACTOR).unwrap();
        for key in 1..=5u64 {
            map.put_word(&mut r, key, key).unwrap();
        }
        let hdr = r.arena(ArenaId::MapHeader).unwrap().base;
        r.write_u64(hdr, 6).unwrap(); // lie: one more entry than exists
        r.flush(hdr, 8).unwrap();
        r.fence();
        let mut crashed = r.simulate_crash(CrashPolicy::DropAllPending).unwrap();
        let err = Hashmap::reconstruct(&mut crashed, Mode::PartlyDirect, DEFAULT_LOAD_FACTOR)
            .unwrap_err();
        assert!(matches!(err, Error::Corruption(_)), "got {err}");
    }

    #[test]
    fn checkpoint_mode_confines_stray_hash_and_link_scribbles() {
        let mut r = region();
        let mut map =
            Hashmap::init(&mut r, Mode::PartlyCheckpoint, 8, DEFAULT_LOAD_FACTOR).unwrap();
        for key in 1..=10u64 {
            map.put_word(&mut r, key, key * 7).unwrap();
        }
        let entries = map.entries_in_chain_order(&r).unwrap();
        // Scribble over redundant fields in the checkpoint mirror.
        r.write_u32(entry_hash_offset(entries[3]), 0xbad).unwrap();
        r.write_u64(entry_next_offset(entries[5]), entries[5])
            .unwrap();
        let mut crashed = r.simulate_crash(CrashPolicy::KeepAllPending).unwrap();
        let recovered =
            Hashmap::reconstruct(&mut crashed, Mode::PartlyCheckpoint, DEFAULT_LOAD_FACTOR)
                .unwrap();
        let pairs = recovered.word_pairs(&crashed).unwrap();
        assert_eq!(pairs, (1..=10u64).map(|k| (k, k * 7)).collect::<Vec<_>>());
        recovered.validate(&crashed).unwrap();
    }

    #[test]
    fn fully_mode_recovery_also_derives_the_bucket_count() {
        // The fully persistent baseline flushes the bucket array and chain
        // links, but recovery never reads them: the bucket count still comes
        // from the persisted size, in every mode.
        let mut r = region();
        let mut map = Hashmap::init(&mut r, Mode::Fully, 8, DEFAULT_LOAD_FACTOR).unwrap();
        for key in 1..=20u64 {
            map.put_word(&mut r, key, key + 100).unwrap();
        }
        assert_eq!(map.bucket_count(), 32); // runtime growth from the 16 floor
        let mut crashed = r.simulate_crash(CrashPolicy::DropAllPending).unwrap();
        let recovered =
            Hashmap::reconstruct(&mut crashed, Mode::Fully, DEFAULT_LOAD_FACTOR).unwrap();
        // 20 entries: smallest power of two with 20 <= 0.75c is 32.
        assert_eq!(recovered.bucket_count(), 32);
        assert_eq!(
            recovered.word_pairs(&crashed).unwrap(),
            (1..=20u64).map(|k| (k, k + 100)).collect::<Vec<_>>()
        );
        recovered.validate(&crashed).unwrap();
    }

    #[test]
    fn torn_insert_beyond_size_is_reported() {
        // A live-looking slot past the `size`-bounded scan means the image
        // holds a flushed entry whose size increment never became durable.
        let mut r = region();
        let mut map = Hashmap::init(&mut r, Mode::PartlyDirect, 8, DEFAULT_LOAD_FACTOR).unwrap();
        for key in 1..=3u64 {
            map.put_word(&mut r, key, key).unwrap();
        }
        let base = r.arena(ArenaId::MapEntries).unwrap().base;
        r.write_u64(base + 3 * SLOT_SIZE, 99).unwrap(); // orphan entry line
        r.flush(base + 3 * SLOT_SIZE, 8).unwrap();
        r.fence();
        let mut crashed = r.simulate_crash(CrashPolicy::DropAllPending).unwrap();
        let err = Hashmap::reconstruct(&mut crashed, Mode::PartlyDirect, DEFAULT_LOAD_FACTOR)
            .unwrap_err();
        assert!(matches!(err, Error::Corruption(_)), "got {err}");
    }
}
