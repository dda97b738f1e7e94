//! Whole-system invariant checker.
//!
//! For every core:
//! - (a) no physical line has more than S valid cache lines translating to it;
//! - (b) for each line offset within a page, no more distinct physical lines
//!   are resident than the RLUT has ways;
//! - (c) every valid line holds the bytes memory holds, unless an
//!   invalidation of that physical line is still queued at the core;
//! - (d) the RLUT is structurally sound;
//! - (e) every valid line is recorded in the RLUT under its physical line.
//!
//! Resident lines are translated with the core's current context, which is
//! sound because a context switch flushes the cache.

use std::fmt;

use rustc_hash::FxHashSet;

use crate::addr::{rlut_index, PhysAddr, VirtAddr};
use crate::coherence::{ControllerState, MemorySystem};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    TooManySynonyms {
        core: usize,
        p: PhysAddr,
        count: usize,
        limit: usize,
    },
    TooManyPhysicalLines {
        core: usize,
        rlut_set: usize,
        count: usize,
        limit: usize,
    },
    StaleData {
        core: usize,
        v: VirtAddr,
        p: PhysAddr,
    },
    Rlut {
        core: usize,
        detail: String,
    },
    Untracked {
        core: usize,
        v: VirtAddr,
        p: PhysAddr,
    },
    Untranslatable {
        core: usize,
        v: VirtAddr,
    },
    MissPending {
        core: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooManySynonyms { core, p, count, limit } => {
                write!(f, "core {core}: {count} resident synonyms of {p} (limit {limit})")
            }
            Violation::TooManyPhysicalLines {
                core,
                rlut_set,
                count,
                limit,
            } => write!(
                f,
                "core {core}: {count} physical lines resident at page line {rlut_set} (limit {limit})"
            ),
            Violation::StaleData { core, v, p } => {
                write!(f, "core {core}: line {v} differs from memory at {p} with no invalidation queued")
            }
            Violation::Rlut { core, detail } => write!(f, "core {core}: RLUT {detail}"),
            Violation::Untracked { core, v, p } => write!(f, "core {core}: line {v} ({p}) missing from the RLUT"),
            Violation::Untranslatable { core, v } => write!(f, "core {core}: resident line {v} does not translate"),
            Violation::MissPending { core } => write!(f, "core {core}: checked while a miss is pending"),
        }
    }
}

pub fn check_invariants(system: &MemorySystem) -> Vec<Violation> {
    (0..system.cores().len())
        .flat_map(|c| check_core(system, c))
        .collect()
}

pub fn check_core(system: &MemorySystem, core: usize) -> Vec<Violation> {
    let g = *system.geometry();
    let c = system.core(core);
    let mut out = Vec::new();
    if c.state() != ControllerState::Ready {
        out.push(Violation::MissPending { core });
        return out;
    }
    let queued: FxHashSet<PhysAddr> = c.queue().iter().copied().collect();
    let mut plines: Vec<u64> = Vec::with_capacity(c.cache().valid_count());

    for (v, bytes) in c.cache().valid_lines() {
        let p = match system.page_table().translate(c.ctx(), v, &g) {
            Ok(p) => p,
            Err(_) => {
                out.push(Violation::Untranslatable { core, v });
                continue;
            }
        };
        plines.push(p.0 >> g.line_bits);
        if !queued.contains(&p) && !system.memory().matches(p, bytes) {
            out.push(Violation::StaleData { core, v, p });
        }
        let tracked = c.rlut().records(p, c.cache().line_ref(v));
        if !tracked {
            out.push(Violation::Untracked { core, v, p });
        }
    }

    plines.sort_unstable();
    let s = g.config.synonym_limit;
    for run in plines.chunk_by(|a, b| a == b) {
        if run.len() > s {
            out.push(Violation::TooManySynonyms {
                core,
                p: PhysAddr(run[0] << g.line_bits),
                count: run.len(),
                limit: s,
            });
        }
    }
    plines.dedup();
    let mut per_set = vec![0usize; g.rlut_sets];
    for &l in &plines {
        per_set[rlut_index(PhysAddr(l << g.line_bits), &g)] += 1;
    }
    for (set, &count) in per_set.iter().enumerate() {
        if count > g.rlut_ways {
            out.push(Violation::TooManyPhysicalLines {
                core,
                rlut_set: set,
                count,
                limit: g.rlut_ways,
            });
        }
    }
    out.extend(
        c.rlut()
            .check_structure()
            .into_iter()
            .map(|detail| Violation::Rlut { core, detail }),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::{derive_geometry, CacheConfig};
    use crate::mmu::{Latencies, PageTable};

    fn aliased() -> MemorySystem {
        let g = derive_geometry(&CacheConfig::default()).unwrap();
        let mut pt = PageTable::new(true);
        pt.map(0, 1, 0x40);
        pt.map(0, 2, 0x40);
        MemorySystem::new(g, Latencies::default(), 2, pt)
    }

    #[test]
    fn fresh_system_is_clean() {
        assert!(check_invariants(&aliased()).is_empty());
    }

    #[test]
    fn constructed_double_synonym_is_reported() {
        let mut m = aliased();
        let line = vec![0u8; 64];
        {
            let (cache, rlut) = m.core_mut(0).parts_mut();
            // bypass the miss path: both aliases resident under S = 1
            cache.fill_line(VirtAddr(0x1080), &line);
            cache.fill_line(VirtAddr(0x2080), &line);
            rlut.lookup_and_insert(PhysAddr(0x40080), VirtAddr(0x1080));
        }
        let v = check_invariants(&m);
        let synonyms: Vec<_> = v
            .iter()
            .filter(|x| matches!(x, Violation::TooManySynonyms { .. }))
            .collect();
        assert_eq!(
            synonyms,
            vec![&Violation::TooManySynonyms {
                core: 0,
                p: PhysAddr(0x40080),
                count: 2,
                limit: 1
            }]
        );
        // the second alias was never recorded
        assert!(v.contains(&Violation::Untracked {
            core: 0,
            v: VirtAddr(0x2080),
            p: PhysAddr(0x40080)
        }));
    }

    #[test]
    fn stale_data_is_exempt_only_while_queued() {
        let mut m = aliased();
        m.read(0, 0, 0x1080).unwrap();
        m.write(1, 0, 0x1080, 9).unwrap();
        assert!(check_invariants(&m).is_empty());
        // apply the invalidation, then plant the pre-write image again
        let mut broken = m.clone();
        broken.drain(0);
        let line = vec![0u8; 64];
        broken
            .core_mut(0)
            .parts_mut()
            .0
            .fill_line(VirtAddr(0x1080), &line);
        assert_eq!(
            check_invariants(&broken),
            vec![Violation::StaleData {
                core: 0,
                v: VirtAddr(0x1080),
                p: PhysAddr(0x40080)
            }]
        );
    }
}
