//! Deterministic workload traces.
//!
//! A trace is a seeded, fully reproducible stream of insert/delete
//! operations over abstract `(key, word)` pairs, shared by the crash harness
//! and the benchmark drivers. Keys are drawn uniformly with live-set
//! rejection sampling, so an insert never hits an existing key and a delete
//! always names a live one; replaying the same `(mix, counts, seed)` yields
//! the identical operation sequence everywhere.

use std::collections::HashSet;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Keys live in `1..=KEY_SPACE`: nonzero (the hashmap reserves 0 as its
/// sentinel), positive as `i64` (tree keys), and sparse enough that
/// rejection sampling almost never rejects at desk scale.
pub const KEY_SPACE: u64 = u32::MAX as u64;

/// Which recoverable structure a workload targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    List,
    BPlusTree,
    Hashmap,
}

impl Structure {
    /// All three structures, in reporting order.
    pub const ALL: [Structure; 3] = [Structure::List, Structure::BPlusTree, Structure::Hashmap];

    /// Stable label used in CSV output and CLI arguments.
    pub fn label(self) -> &'static str {
        match self {
            Structure::List => "list",
            Structure::BPlusTree => "tree",
            Structure::Hashmap => "hashmap",
        }
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "list" => Ok(Structure::List),
            "tree" | "bptree" | "btree" => Ok(Structure::BPlusTree),
            "hashmap" | "map" | "hash" => Ok(Structure::Hashmap),
            other => Err(Error::InvalidConfig(format!(
                "unknown structure `{other}` (expected list, tree, or hashmap)"
            ))),
        }
    }
}

/// Insert/delete ratio of a workload.
///
/// A mixed ratio `A:B` cycles through `A` inserts followed by `B` deletes,
/// so any prefix stays within one cycle of the nominal ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpMix {
    InsertOnly,
    DeleteOnly,
    Mixed { inserts: u32, deletes: u32 },
}

impl OpMix {
    /// The workloads every experiment reports, in reporting order.
    pub const STANDARD: [OpMix; 5] = [
        OpMix::InsertOnly,
        OpMix::DeleteOnly,
        OpMix::Mixed {
            inserts: 1,
            deletes: 1,
        },
        OpMix::Mixed {
            inserts: 2,
            deletes: 1,
        },
        OpMix::Mixed {
            inserts: 4,
            deletes: 1,
        },
    ];

    /// Stable label used in CSV output (`insert-only`, `delete-only`, `A:B`).
    pub fn label(self) -> String {
        match self {
            OpMix::InsertOnly => "insert-only".into(),
            OpMix::DeleteOnly => "delete-only".into(),
            OpMix::Mixed { inserts, deletes } => format!("{inserts}:{deletes}"),
        }
    }

    /// Whether operation `i` of the cyclic pattern is an insert.
    fn is_insert(self, i: u64) -> bool {
        match self {
            OpMix::InsertOnly => true,
            OpMix::DeleteOnly => false,
            OpMix::Mixed { inserts, deletes } => {
                i % u64::from(inserts + deletes) < u64::from(inserts)
            }
        }
    }
}

impl FromStr for OpMix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "insert-only" | "insert" => return Ok(OpMix::InsertOnly),
            "delete-only" | "delete" => return Ok(OpMix::DeleteOnly),
            _ => {}
        }
        let parse = |part: &str| -> Result<u32> {
            part.parse()
                .map_err(|_| Error::InvalidConfig(format!("bad mix `{s}` (expected A:B)")))
        };
        if let Some((a, b)) = s.split_once(':') {
            let (a, b) = (parse(a)?, parse(b)?);
            return match (a, b) {
                (0, 0) => Err(Error::InvalidConfig("mix 0:0 has no operations".into())),
                (_, 0) => Ok(OpMix::InsertOnly),
                (0, _) => Ok(OpMix::DeleteOnly),
                _ => Ok(OpMix::Mixed {
                    inserts: a,
                    deletes: b,
                }),
            };
        }
        Err(Error::InvalidConfig(format!(
            "unknown mix `{s}` (expected insert-only, delete-only, or A:B)"
        )))
    }
}

/// One trace operation over an abstract keyed structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Insert { key: u64, word: u64 },
    Delete { key: u64 },
}

/// A reproducible workload: an initial population plus an operation stream.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `(key, word)` pairs inserted before the measured/verified phase.
    pub init: Vec<(u64, u64)>,
    /// The operation stream itself.
    pub ops: Vec<Op>,
    /// Maximum number of live entries at any instant (arena sizing).
    pub peak_live: u64,
}

impl Trace {
    /// Number of inserts in the operation stream.
    pub fn insert_count(&self) -> u64 {
        self.ops
            .iter()
            .filter(|op| matches!(op, Op::Insert { .. }))
            .count() as u64
    }
}

/// Generates the trace for `(mix, op_count, init_count, seed)`.
///
/// Fails when a delete comes due with nothing live to delete, which for the
/// standard mixes can only happen on delete-only traces with
/// `init_count < op_count`.
pub fn generate(mix: OpMix, op_count: u64, init_count: u64, seed: u64) -> Result<Trace> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut live: Vec<u64> = Vec::with_capacity(init_count as usize);
    let mut live_set: HashSet<u64> = HashSet::with_capacity(init_count as usize);
    let fresh_key = |rng: &mut ChaCha12Rng, live_set: &mut HashSet<u64>| loop {
        let key = rng.gen_range(1..=KEY_SPACE);
        if live_set.insert(key) {
            return key;
        }
    };
    let mut init = Vec::with_capacity(init_count as usize);
    for _ in 0..init_count {
        let key = fresh_key(&mut rng, &mut live_set);
        live.push(key);
        init.push((key, rng.gen()));
    }
    let mut peak_live = live.len() as u64;
    let mut ops = Vec::with_capacity(op_count as usize);
    for i in 0..op_count {
        if mix.is_insert(i) {
            let key = fresh_key(&mut rng, &mut live_set);
            live.push(key);
            ops.push(Op::Insert {
                key,
                word: rng.gen(),
            });
        } else {
            if live.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "trace ran out of live keys at operation {i}: a {} workload \
                     needs init_count >= the number of deletes",
                    mix.label()
                )));
            }
            let j = rng.gen_range(0..live.len());
            let key = live.swap_remove(j);
            live_set.remove(&key);
            ops.push(Op::Delete { key });
        }
        peak_live = peak_live.max(live.len() as u64);
    }
    Ok(Trace {
        init,
        ops,
        peak_live,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for (text, label) in [
            ("insert-only", "insert-only"),
            ("delete-only", "delete-only"),
            ("1:1", "1:1"),
            ("2:1", "2:1"),
            ("4:1", "4:1"),
            ("3:0", "insert-only"),
            ("0:2", "delete-only"),
        ] {
            assert_eq!(text.parse::<OpMix>().unwrap().label(), label);
        }
        assert!("0:0".parse::<OpMix>().is_err());
        assert!("fast".parse::<OpMix>().is_err());
        assert_eq!("tree".parse::<Structure>().unwrap(), Structure::BPlusTree);
        assert!("deque".parse::<Structure>().is_err());
    }

    #[test]
    fn traces_are_deterministic() {
        let a = generate(
            OpMix::Mixed {
                inserts: 2,
                deletes: 1,
            },
            300,
            50,
            9,
        )
        .unwrap();
        let b = generate(
            OpMix::Mixed {
                inserts: 2,
                deletes: 1,
            },
            300,
            50,
            9,
        )
        .unwrap();
        assert_eq!(a.init, b.init);
        assert_eq!(a.ops, b.ops);
        let c = generate(
            OpMix::Mixed {
                inserts: 2,
                deletes: 1,
            },
            300,
            50,
            10,
        )
        .unwrap();
        assert_ne!(a.ops, c.ops);
    }

    #[test]
    fn mixes_honor_their_ratios() {
        let t = generate(
            OpMix::Mixed {
                inserts: 4,
                deletes: 1,
            },
            500,
            0,
            3,
        )
        .unwrap();
        assert_eq!(t.insert_count(), 400);
        let t = generate(OpMix::InsertOnly, 500, 0, 3).unwrap();
        assert_eq!(t.insert_count(), 500);
        let t = generate(OpMix::DeleteOnly, 500, 500, 3).unwrap();
        assert_eq!(t.insert_count(), 0);
        assert_eq!(t.peak_live, 500);
    }

    #[test]
    fn deletes_name_live_keys_and_inserts_fresh_ones() {
        let t = generate(
            OpMix::Mixed {
                inserts: 1,
                deletes: 1,
            },
            1000,
            100,
            7,
        )
        .unwrap();
        let mut live: HashSet<u64> = t.init.iter().map(|&(k, _)| k).collect();
        assert_eq!(live.len(), 100);
        for op in &t.ops {
            match *op {
                Op::Insert { key, .. } => assert!(live.insert(key)),
                Op::Delete { key } => assert!(live.remove(&key)),
            }
        }
        assert!(t.peak_live >= 100);
    }

    #[test]
    fn delete_only_without_enough_init_errs() {
        assert!(matches!(
            generate(OpMix::DeleteOnly, 10, 5, 1),
            Err(Error::InvalidConfig(_))
        ));
    }
}
