//! Shared helpers for the integration suites.
//!
//! The centerpiece is an independent per-operation flush-cost model for each
//! structure: a from-scratch replay of the documented store sequences with
//! its own line arithmetic, sharing no code with the library internals. The
//! acceptance gate replays every trace through both the real structures and
//! these models and demands equal line-flush totals, so any drift between
//! the implementation's dirty-line accounting and the design is caught.

use std::collections::HashSet;

use persistkit::workload::{Op, Structure};
use persistkit::Mode;

/// Per-operation flush-cost referee for one structure instance.
pub enum CostModel {
    List(ListModel),
    Tree(TreeModel),
    Map(MapModel),
}

impl CostModel {
    pub fn new(structure: Structure, mode: Mode, load_factor: f64) -> CostModel {
        match structure {
            Structure::List => CostModel::List(ListModel::new(mode)),
            Structure::BPlusTree => CostModel::Tree(TreeModel::new(mode)),
            Structure::Hashmap => CostModel::Map(MapModel::new(mode, load_factor)),
        }
    }

    /// Replays one operation and returns the lines it must flush.
    pub fn apply(&mut self, op: &Op) -> u64 {
        match self {
            CostModel::List(m) => m.apply(op),
            CostModel::Tree(m) => m.apply(op),
            CostModel::Map(m) => m.apply(op),
        }
    }

    /// Replays the untimed initialization inserts (costs discarded).
    pub fn replay_init(&mut self, init: &[(u64, u64)]) {
        for &(key, word) in init {
            self.apply(&Op::Insert { key, word });
        }
    }
}

// ---------------------------------------------------------------------------
// Doubly linked list
//
// A node slot spans two lines: the essential value+next line and the
// redundant prev line. Appending dirties the new node's essential line plus
// the predecessor's next field (or the list-head handle); the fully
// persistent baseline adds the new node's prev line. Unlinking dirties the
// predecessor's next (or the head handle); fully persistent adds the
// successor's prev line when a successor exists.
// ---------------------------------------------------------------------------

pub struct ListModel {
    fully: bool,
    order: Vec<u64>,
}

impl ListModel {
    pub fn new(mode: Mode) -> ListModel {
        ListModel {
            fully: mode == Mode::Fully,
            order: Vec::new(),
        }
    }

    pub fn apply(&mut self, op: &Op) -> u64 {
        match *op {
            Op::Insert { key, .. } => {
                self.order.push(key);
                if self.fully {
                    3
                } else {
                    2
                }
            }
            Op::Delete { key } => {
                let pos = self
                    .order
                    .iter()
                    .position(|&k| k == key)
                    .expect("trace deletes only live keys");
                let has_successor = pos + 1 < self.order.len();
                self.order.remove(pos);
                if self.fully && has_successor {
                    2
                } else {
                    1
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Hashmap
//
// An entry slot spans two lines: the essential key+value line and the
// redundant hash+next line. Sizes evolve as: new key -> entry line + size
// header (the baseline adds the redundant line and the bucket head or
// predecessor link); overwrite -> value line only; remove -> key sentinel +
// size header (the baseline adds the unlink). A growth doubles the bucket
// count; the partly modes relink chains volatilely at zero flush cost while
// the baseline rewrites every chain link (one redundant line per live
// entry, deduplicated against the lines the put already dirtied) plus the
// whole bucket array (eight heads per line).
// ---------------------------------------------------------------------------

pub struct MapModel {
    fully: bool,
    load_factor: f64,
    size: u64,
    buckets: u64,
    live: HashSet<u64>,
}

impl MapModel {
    pub fn new(mode: Mode, load_factor: f64) -> MapModel {
        MapModel {
            fully: mode == Mode::Fully,
            load_factor,
            size: 0,
            buckets: 16,
            live: HashSet::new(),
        }
    }

    pub fn apply(&mut self, op: &Op) -> u64 {
        match *op {
            Op::Insert { key, .. } => {
                if !self.live.insert(key) {
                    return 1;
                }
                self.size += 1;
                let grew = self.size as f64 > self.load_factor * self.buckets as f64;
                if grew {
                    self.buckets *= 2;
                }
                match (self.fully, grew) {
                    (false, _) => 2,
                    (true, false) => 4,
                    // Entry line + size header + every live entry's chain
                    // link line + the rewritten bucket array.
                    (true, true) => 2 + self.size + self.buckets / 8,
                }
            }
            Op::Delete { key } => {
                assert!(self.live.remove(&key), "trace deletes only live keys");
                self.size -= 1;
                if self.fully {
                    3
                } else {
                    2
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// B+Tree
//
// A 256 B node spans four lines: keys 0-7 | keys 8-15 | keys 16-17 plus
// links 0-11 | links 12-18, count, leaf flag, parent. Records are one line
// each. The model replays the exact store sequences of the tree algorithm
// (shift suffixes, split halves, tidy loops, merge and redistribute moves)
// against its own node mirror, accumulating a per-node four-bit line mask
// per operation; leaves always count, internal nodes and parent/root fields
// only in the fully persistent baseline. The insert path also counts the
// record line, and header stores count once (leftmost and root share a
// line).
// ---------------------------------------------------------------------------

const ORDER: usize = 19;
const CAPACITY: usize = ORDER - 1;
const MIN_KEYS: usize = CAPACITY.div_ceil(2);

fn half(len: usize) -> usize {
    len.div_ceil(2)
}

fn key_line(i: usize) -> u8 {
    (i / 8) as u8
}

fn link_line(i: usize) -> u8 {
    if i < 12 {
        2
    } else {
        3
    }
}

const TAIL_LINE: u8 = 3; // next link, key count, leaf flag, parent

#[derive(Default, Clone)]
struct ModelNode {
    leaf: bool,
    keys: Vec<i64>,
    kids: Vec<usize>,
    recs: Vec<u64>,
    next: Option<usize>,
    parent: Option<usize>,
}

enum Moved {
    Record(u64),
    Child(usize),
}

pub struct TreeModel {
    fully: bool,
    nodes: Vec<ModelNode>,
    dead: Vec<usize>,
    root: Option<usize>,
    next_record: u64,
    // Per-operation accumulators.
    masks: std::collections::HashMap<usize, u8>,
    record_lines: u64,
    header: bool,
}

impl TreeModel {
    pub fn new(mode: Mode) -> TreeModel {
        TreeModel {
            fully: mode == Mode::Fully,
            nodes: Vec::new(),
            dead: Vec::new(),
            root: None,
            next_record: 1,
            masks: std::collections::HashMap::new(),
            record_lines: 0,
            header: false,
        }
    }

    pub fn apply(&mut self, op: &Op) -> u64 {
        match *op {
            Op::Insert { key, .. } => self.insert(key as i64),
            Op::Delete { key } => self.delete(key as i64),
        }
        let node_lines: u32 = self.masks.values().map(|m| m.count_ones()).sum();
        let total = u64::from(node_lines) + self.record_lines + u64::from(self.header);
        self.masks.clear();
        self.record_lines = 0;
        self.header = false;
        total
    }

    // -- store accounting ---------------------------------------------------

    fn mark(&mut self, id: usize, line: u8) {
        if self.nodes[id].leaf || self.fully {
            *self.masks.entry(id).or_insert(0) |= 1 << line;
        }
    }

    fn s_key(&mut self, id: usize, i: usize) {
        self.mark(id, key_line(i));
    }

    fn s_link(&mut self, id: usize, i: usize) {
        self.mark(id, link_line(i));
    }

    fn s_tail(&mut self, id: usize) {
        self.mark(id, TAIL_LINE);
    }

    fn s_parent(&mut self, id: usize) {
        if self.fully {
            *self.masks.entry(id).or_insert(0) |= 1 << TAIL_LINE;
        }
    }

    fn s_header(&mut self) {
        self.header = true;
    }

    fn s_header_root(&mut self) {
        if self.fully {
            self.header = true;
        }
    }

    // -- node lifecycle -----------------------------------------------------

    fn new_node(&mut self, leaf: bool) -> usize {
        let node = ModelNode {
            leaf,
            ..ModelNode::default()
        };
        let id = match self.dead.pop() {
            Some(id) => {
                self.nodes[id] = node;
                id
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        self.s_tail(id); // leaf flag and the zero count
        id
    }

    fn free_node(&mut self, id: usize) {
        self.nodes[id] = ModelNode::default();
        self.dead.push(id);
    }

    fn find_leaf(&self, key: i64) -> Option<usize> {
        let mut c = self.root?;
        while !self.nodes[c].leaf {
            let n = &self.nodes[c];
            let mut i = 0;
            while i < n.keys.len() && key >= n.keys[i] {
                i += 1;
            }
            c = n.kids[i];
        }
        Some(c)
    }

    // -- insert -------------------------------------------------------------

    fn insert(&mut self, key: i64) {
        let leaf = self.find_leaf(key);
        let record = self.next_record;
        self.next_record += 1;
        self.record_lines += 1;
        match leaf {
            None => {
                let l = self.new_node(true);
                self.nodes[l].keys.push(key);
                self.nodes[l].recs.push(record);
                self.s_key(l, 0);
                self.s_link(l, 0);
                self.s_tail(l); // next
                self.s_parent(l);
                self.s_tail(l); // count
                self.root = Some(l);
                self.s_header();
                self.s_header_root();
            }
            Some(l) if self.nodes[l].keys.len() < CAPACITY => {
                let ip = self.nodes[l].keys.partition_point(|&k| k < key);
                self.nodes[l].keys.insert(ip, key);
                self.nodes[l].recs.insert(ip, record);
                for i in ip..self.nodes[l].keys.len() {
                    self.s_key(l, i);
                    self.s_link(l, i);
                }
                self.s_tail(l);
            }
            Some(l) => self.split_leaf(l, key, record),
        }
    }

    fn split_leaf(&mut self, l: usize, key: i64, record: u64) {
        let ip = self.nodes[l].keys.partition_point(|&k| k < key);
        let mut tk = self.nodes[l].keys.clone();
        let mut tr = self.nodes[l].recs.clone();
        tk.insert(ip, key);
        tr.insert(ip, record);
        let split = half(CAPACITY);
        let new = self.new_node(true);
        self.nodes[new].keys = tk[split..].to_vec();
        self.nodes[new].recs = tr[split..].to_vec();
        self.nodes[new].next = self.nodes[l].next;
        self.nodes[new].parent = self.nodes[l].parent;
        for j in 0..self.nodes[new].keys.len() {
            self.s_key(new, j);
            self.s_link(new, j);
        }
        self.s_tail(new); // next
        for j in self.nodes[new].keys.len()..CAPACITY {
            self.s_link(new, j);
        }
        self.s_tail(new); // count
        self.s_parent(new);
        self.nodes[l].keys = tk[..split].to_vec();
        self.nodes[l].recs = tr[..split].to_vec();
        for i in 0..split {
            self.s_key(l, i);
            self.s_link(l, i);
        }
        for i in split..CAPACITY {
            self.s_link(l, i);
        }
        self.nodes[l].next = Some(new);
        self.s_tail(l); // next and count
        let up_key = self.nodes[new].keys[0];
        self.insert_into_parent(l, up_key, new);
    }

    fn insert_into_parent(&mut self, left: usize, key: i64, right: usize) {
        let Some(parent) = self.nodes[left].parent else {
            self.grow_new_root(left, key, right);
            return;
        };
        let li = self.nodes[parent]
            .kids
            .iter()
            .position(|&c| c == left)
            .unwrap();
        if self.nodes[parent].keys.len() < CAPACITY {
            self.nodes[parent].keys.insert(li, key);
            self.nodes[parent].kids.insert(li + 1, right);
            for i in li..self.nodes[parent].keys.len() {
                self.s_key(parent, i);
            }
            for i in (li + 1)..self.nodes[parent].kids.len() {
                self.s_link(parent, i);
            }
            self.s_tail(parent);
        } else {
            self.split_node(parent, li, key, right);
        }
    }

    fn grow_new_root(&mut self, left: usize, key: i64, right: usize) {
        let r = self.new_node(false);
        self.nodes[r].keys.push(key);
        self.nodes[r].kids.push(left);
        self.nodes[r].kids.push(right);
        self.s_key(r, 0);
        self.s_link(r, 0);
        self.s_link(r, 1);
        self.s_tail(r);
        self.s_parent(r);
        self.nodes[left].parent = Some(r);
        self.s_parent(left);
        self.nodes[right].parent = Some(r);
        self.s_parent(right);
        self.root = Some(r);
        self.s_header_root();
    }

    fn split_node(&mut self, old: usize, li: usize, key: i64, right: usize) {
        let mut tk = self.nodes[old].keys.clone();
        let mut tc = self.nodes[old].kids.clone();
        tk.insert(li, key);
        tc.insert(li + 1, right);
        let split = half(ORDER);
        let up_key = tk[split - 1];
        let new = self.new_node(false);
        self.nodes[new].keys = tk[split..].to_vec();
        self.nodes[new].kids = tc[split..].to_vec();
        self.nodes[new].parent = self.nodes[old].parent;
        for j in 0..self.nodes[new].keys.len() {
            self.s_key(new, j);
        }
        for j in 0..self.nodes[new].kids.len() {
            self.s_link(new, j);
        }
        self.s_tail(new);
        self.s_parent(new);
        self.nodes[old].keys = tk[..split - 1].to_vec();
        self.nodes[old].kids = tc[..split].to_vec();
        for i in 0..self.nodes[old].keys.len() {
            self.s_key(old, i);
        }
        for i in 0..self.nodes[old].kids.len() {
            self.s_link(old, i);
        }
        self.s_tail(old);
        for j in 0..self.nodes[new].kids.len() {
            let child = self.nodes[new].kids[j];
            self.nodes[child].parent = Some(new);
            self.s_parent(child);
        }
        self.insert_into_parent(old, up_key, new);
    }

    // -- delete -------------------------------------------------------------

    fn delete(&mut self, key: i64) {
        let leaf = self.find_leaf(key).expect("trace deletes only live keys");
        let idx = self.nodes[leaf].keys.binary_search(&key).expect("live key");
        let record = self.nodes[leaf].recs[idx];
        if Some(leaf) == self.root && self.nodes[leaf].keys.len() == 1 {
            self.free_node(leaf);
            self.root = None;
            self.s_header();
            self.s_header_root();
            return;
        }
        self.delete_entry(leaf, key, Moved::Record(record));
    }

    fn delete_entry(&mut self, n: usize, key: i64, moved: Moved) {
        self.remove_from_node(n, key, &moved);
        if Some(n) == self.root {
            self.shrink_root();
            return;
        }
        if self.nodes[n].keys.len() >= MIN_KEYS {
            return;
        }
        let parent = self.nodes[n].parent.unwrap();
        let pos = self.nodes[parent]
            .kids
            .iter()
            .position(|&c| c == n)
            .unwrap();
        let neighbor_is_right = pos == 0;
        let sep_index = if neighbor_is_right { 0 } else { pos - 1 };
        let sep = self.nodes[parent].keys[sep_index];
        let neighbor = if neighbor_is_right {
            self.nodes[parent].kids[1]
        } else {
            self.nodes[parent].kids[pos - 1]
        };
        let room = if self.nodes[n].leaf { ORDER } else { ORDER - 1 };
        if self.nodes[neighbor].keys.len() + self.nodes[n].keys.len() < room {
            self.merge(n, neighbor, neighbor_is_right, sep);
        } else {
            self.borrow(n, neighbor, neighbor_is_right, sep_index, sep);
        }
    }

    fn remove_from_node(&mut self, n: usize, key: i64, moved: &Moved) {
        let ki = self.nodes[n].keys.iter().position(|&k| k == key).unwrap();
        let pi = match moved {
            Moved::Record(r) => self.nodes[n].recs.iter().position(|x| x == r).unwrap(),
            Moved::Child(c) => self.nodes[n].kids.iter().position(|x| x == c).unwrap(),
        };
        self.nodes[n].keys.remove(ki);
        match moved {
            Moved::Record(_) => {
                self.nodes[n].recs.remove(pi);
            }
            Moved::Child(_) => {
                self.nodes[n].kids.remove(pi);
            }
        }
        for i in ki..self.nodes[n].keys.len() {
            self.s_key(n, i);
        }
        let link_end = if self.nodes[n].leaf { CAPACITY } else { ORDER };
        for i in pi..link_end {
            self.s_link(n, i);
        }
        self.s_tail(n);
    }

    fn shrink_root(&mut self) {
        let root = self.root.unwrap();
        if !self.nodes[root].keys.is_empty() {
            return;
        }
        if !self.nodes[root].leaf {
            let child = self.nodes[root].kids[0];
            self.nodes[child].parent = None;
            self.s_parent(child);
            self.root = Some(child);
            self.s_header_root();
            self.free_node(root);
        } else {
            self.free_node(root);
            self.root = None;
            self.s_header();
            self.s_header_root();
        }
    }

    fn merge(&mut self, n: usize, neighbor: usize, neighbor_is_right: bool, sep: i64) {
        let (keeper, victim) = if neighbor_is_right {
            (n, neighbor)
        } else {
            (neighbor, n)
        };
        let m = self.nodes[keeper].keys.len();
        if !self.nodes[keeper].leaf {
            self.nodes[keeper].keys.push(sep);
            self.s_key(keeper, m);
            let moved_keys = self.nodes[victim].keys.clone();
            let moved_kids = self.nodes[victim].kids.clone();
            for (j, &k) in moved_keys.iter().enumerate() {
                self.nodes[keeper].keys.push(k);
                self.nodes[keeper].kids.push(moved_kids[j]);
                self.s_key(keeper, m + 1 + j);
                self.s_link(keeper, m + 1 + j);
            }
            self.nodes[keeper].kids.push(*moved_kids.last().unwrap());
            self.s_link(keeper, m + 1 + moved_keys.len());
            self.s_tail(keeper);
            for i in 0..self.nodes[keeper].kids.len() {
                let c = self.nodes[keeper].kids[i];
                self.nodes[c].parent = Some(keeper);
                self.s_parent(c);
            }
        } else {
            let moved_keys = self.nodes[victim].keys.clone();
            let moved_recs = self.nodes[victim].recs.clone();
            for (j, &k) in moved_keys.iter().enumerate() {
                self.nodes[keeper].keys.push(k);
                self.nodes[keeper].recs.push(moved_recs[j]);
                self.s_key(keeper, m + j);
                self.s_link(keeper, m + j);
            }
            self.nodes[keeper].next = self.nodes[victim].next;
            self.s_tail(keeper);
        }
        let parent = self.nodes[victim].parent.unwrap();
        self.delete_entry(parent, sep, Moved::Child(victim));
        self.free_node(victim);
    }

    fn borrow(
        &mut self,
        n: usize,
        neighbor: usize,
        neighbor_is_right: bool,
        sep_index: usize,
        sep: i64,
    ) {
        let parent = self.nodes[n].parent.unwrap();
        if !neighbor_is_right {
            let m = self.nodes[neighbor].keys.len();
            if !self.nodes[n].leaf {
                let donated = self.nodes[neighbor].keys.pop().unwrap();
                let moved_child = self.nodes[neighbor].kids.pop().unwrap();
                self.nodes[n].keys.insert(0, sep);
                self.nodes[n].kids.insert(0, moved_child);
                self.nodes[moved_child].parent = Some(n);
                for i in 0..self.nodes[n].keys.len() {
                    self.s_key(n, i);
                }
                for i in 0..self.nodes[n].kids.len() {
                    self.s_link(n, i);
                }
                self.s_tail(n);
                self.s_parent(moved_child);
                self.s_link(neighbor, m);
                self.s_tail(neighbor);
                self.nodes[parent].keys[sep_index] = donated;
                self.s_key(parent, sep_index);
            } else {
                let moved_key = self.nodes[neighbor].keys.pop().unwrap();
                let moved_rec = self.nodes[neighbor].recs.pop().unwrap();
                self.nodes[n].keys.insert(0, moved_key);
                self.nodes[n].recs.insert(0, moved_rec);
                for i in 0..self.nodes[n].keys.len() {
                    self.s_key(n, i);
                    self.s_link(n, i);
                }
                self.s_tail(n);
                self.s_link(neighbor, m - 1);
                self.s_tail(neighbor);
                self.nodes[parent].keys[sep_index] = moved_key;
                self.s_key(parent, sep_index);
            }
        } else if self.nodes[n].leaf {
            let moved_key = self.nodes[neighbor].keys.remove(0);
            let moved_rec = self.nodes[neighbor].recs.remove(0);
            let e = self.nodes[n].keys.len();
            self.nodes[n].keys.push(moved_key);
            self.nodes[n].recs.push(moved_rec);
            self.s_key(n, e);
            self.s_link(n, e);
            self.s_tail(n);
            self.nodes[parent].keys[sep_index] = self.nodes[neighbor].keys[0];
            self.s_key(parent, sep_index);
            for i in 0..self.nodes[neighbor].keys.len() {
                self.s_key(neighbor, i);
                self.s_link(neighbor, i);
            }
            self.s_tail(neighbor);
        } else {
            let neighbor_first = self.nodes[neighbor].keys.remove(0);
            let moved_child = self.nodes[neighbor].kids.remove(0);
            let e = self.nodes[n].keys.len();
            self.nodes[n].keys.push(sep);
            self.nodes[n].kids.push(moved_child);
            self.nodes[moved_child].parent = Some(n);
            self.s_key(n, e);
            self.s_link(n, e + 1);
            self.s_tail(n);
            self.s_parent(moved_child);
            self.nodes[parent].keys[sep_index] = neighbor_first;
            self.s_key(parent, sep_index);
            for i in 0..self.nodes[neighbor].keys.len() {
                self.s_key(neighbor, i);
            }
            for i in 0..self.nodes[neighbor].kids.len() {
                self.s_link(neighbor, i);
            }
            self.s_tail(neighbor);
        }
    }
}

/// Internal-node count of the bottom-up leaf-chain packing: levels of
/// `bucket` children each, where an undersized tail chunk is merged into
/// its predecessor when the pair fits in one node and split evenly when it
/// does not.
pub fn packed_internal_count(leaf_count: u64, bucket: u64) -> u64 {
    let order = ORDER as u64;
    let min = MIN_KEYS as u64 + 1; // MIN_BUCKET_SIZE in node terms
    let mut m = leaf_count;
    let mut total = 0;
    while m > 1 {
        let mut chunks = m.div_ceil(bucket);
        let tail = m % bucket;
        if chunks >= 2 && tail != 0 && tail < min && bucket + tail <= order {
            chunks -= 1;
        }
        total += chunks;
        m = chunks;
    }
    total
}
