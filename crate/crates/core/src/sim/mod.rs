//! Trace-driven simulation: the event loop, the reference oracle, the
//! invariant checker, statistics, the trace generator and file formats.

pub mod check;
pub mod config;
pub mod gen;
pub mod oracle;
pub mod stats;
pub mod trace;

use thiserror::Error;

use crate::addr::{ConfigError, PhysAddr, VirtAddr};
use crate::cache::Rw;
use crate::coherence::MemorySystem;
use crate::mmu::{ContextId, PageTable, PageTableError};

use self::check::{check_core, check_invariants, Violation};
use self::config::SimConfig;
use self::oracle::Oracle;
use self::stats::SimStats;
use self::trace::{validate_events, TraceEvent};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{what} line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },
    #[error("event {index}: {msg}")]
    InvalidEvent { index: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("page table: {0}")]
    PageTable(#[from] PageTableError),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("{} invariant violation(s) {}: {}", violations.len(), at(*index), violations[0])]
    Violation {
        /// `None` when found by the end-of-run check.
        index: Option<usize>,
        violations: Vec<Violation>,
    },
    #[error("event {index}: core {core} read {v} in context {ctx} returned {got:#x}, oracle has {expected:#x}")]
    OracleMismatch {
        index: usize,
        core: usize,
        ctx: ContextId,
        v: VirtAddr,
        got: u32,
        expected: u32,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at(index: Option<usize>) -> String {
    match index {
        Some(i) => format!("after event {i}"),
        None => "at end of run".into(),
    }
}

impl SimError {
    /// Violations of the model, as opposed to bad input.
    pub fn is_violation(&self) -> bool {
        matches!(
            self,
            SimError::Violation { .. } | SimError::OracleMismatch { .. }
        )
    }
}

/// Drives a [`MemorySystem`] with trace events.
#[derive(Debug, Clone)]
pub struct Simulator {
    system: MemorySystem,
    oracle: Option<Oracle>,
    check_mode: bool,
    next_index: usize,
    events: u64,
}

impl Simulator {
    /// With `check_mode` every event is followed by an invariant check and
    /// every read is compared with the flat-memory oracle.
    pub fn new(
        config: &SimConfig,
        page_table: PageTable,
        check_mode: bool,
    ) -> Result<Self, SimError> {
        let g = config.cache.geometry()?;
        page_table.validate(&g)?;
        if config.cores == 0 {
            return Err(SimError::Param("cores must be at least 1".into()));
        }
        let oracle = check_mode.then(|| Oracle::new(g, page_table.clone()));
        Ok(Simulator {
            system: MemorySystem::new(g, config.latencies, config.cores, page_table),
            oracle,
            check_mode,
            next_index: 0,
            events: 0,
        })
    }

    /// Adds the oracle comparison without per-event invariant checks.
    pub fn with_oracle(mut self) -> Self {
        if self.oracle.is_none() {
            self.oracle = Some(Oracle::new(
                *self.system.geometry(),
                self.system.page_table().clone(),
            ));
        }
        self
    }

    pub fn system(&self) -> &MemorySystem {
        &self.system
    }

    pub fn system_mut(&mut self) -> &mut MemorySystem {
        &mut self.system
    }

    /// Runs one event to completion. Returns the value of a read; faulting
    /// accesses are counted and skipped.
    pub fn apply(&mut self, event: &TraceEvent) -> Result<Option<u32>, SimError> {
        let index = self.next_index;
        self.next_index += 1;
        self.events += 1;
        let cores = self.system.cores().len();
        if let Some(msg) = validate_events(std::slice::from_ref(event), cores)
            .err()
            .map(|e| e.to_string())
        {
            return Err(SimError::InvalidEvent { index, msg });
        }
        let expected = self.oracle.as_mut().and_then(|o| o.apply(event));
        let g = *self.system.geometry();

        let result = match *event {
            TraceEvent::Read { core, ctx, vaddr } => {
                let v = g.virt(vaddr);
                match self.system.access(core, ctx, Rw::Read, v) {
                    Ok(got) => {
                        if let Some(expected) = expected {
                            if got != expected {
                                return Err(SimError::OracleMismatch {
                                    index,
                                    core,
                                    ctx,
                                    v,
                                    got,
                                    expected,
                                });
                            }
                        }
                        Some(got)
                    }
                    Err(_) => None,
                }
            }
            TraceEvent::Write {
                core,
                ctx,
                vaddr,
                data,
            } => {
                let _ = self
                    .system
                    .access(core, ctx, Rw::Write(data), g.virt(vaddr));
                None
            }
            TraceEvent::ContextSwitch { core, new_ctx } => {
                self.system.context_switch(core, new_ctx);
                None
            }
            TraceEvent::ExternalInvalidate { paddr } => {
                self.system
                    .external_invalidate(PhysAddr(paddr & g.pa_mask()));
                None
            }
        };

        if self.check_mode {
            // Other cores can only have gained queued invalidations, which
            // never turn a passing check into a failing one, so only the
            // core that ran the event needs rechecking. `finish` checks all.
            let violations = match *event {
                TraceEvent::Read { core, .. }
                | TraceEvent::Write { core, .. }
                | TraceEvent::ContextSwitch { core, .. } => check_core(&self.system, core),
                TraceEvent::ExternalInvalidate { .. } => Vec::new(),
            };
            if !violations.is_empty() {
                return Err(SimError::Violation {
                    index: Some(index),
                    violations,
                });
            }
        }
        Ok(result)
    }

    pub fn stats(&self) -> SimStats {
        let cores: Vec<_> = self.system.cores().iter().map(|c| *c.counters()).collect();
        SimStats {
            events: self.events,
            max_invalidate_queue_depth: self.system.max_queue_depth() as u64,
            cores,
        }
    }

    /// Drains every invalidation queue and checks the invariants once more.
    pub fn finish(&mut self) -> Result<SimStats, SimError> {
        self.system.quiesce();
        let violations = check_invariants(&self.system);
        if !violations.is_empty() {
            return Err(SimError::Violation {
                index: None,
                violations,
            });
        }
        Ok(self.stats())
    }
}

/// Runs `events` on a fresh system built from `config`.
pub fn run_trace(
    events: &[TraceEvent],
    config: &SimConfig,
    page_table: &PageTable,
    check_mode: bool,
) -> Result<SimStats, SimError> {
    validate_events(events, config.cores)?;
    let mut sim = Simulator::new(config, page_table.clone(), check_mode)?;
    for e in events {
        sim.apply(e)?;
    }
    sim.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::CacheConfig;

    fn aliases() -> PageTable {
        let mut pt = PageTable::new(true);
        pt.map(0, 1, 0x40);
        pt.map(0, 2, 0x40);
        pt
    }

    #[test]
    fn empty_trace_gives_zero_stats() {
        let s = run_trace(&[], &SimConfig::default(), &PageTable::identity(), true).unwrap();
        assert_eq!(s.events, 0);
        assert_eq!(s.cores.len(), 1);
        assert_eq!(s.total(), Default::default());
    }

    #[test]
    fn single_cold_read() {
        let ev = [TraceEvent::Read {
            core: 0,
            ctx: 0,
            vaddr: 0x1234,
        }];
        let s = run_trace(&ev, &SimConfig::default(), &PageTable::identity(), true).unwrap();
        let c = s.cores[0];
        assert_eq!(c.read_misses, 1);
        assert_eq!(c.total_cycles, 2 + 8);
    }

    #[test]
    fn synonym_ping_pong_under_one_slot() {
        let r = |vaddr| TraceEvent::Read {
            core: 0,
            ctx: 0,
            vaddr,
        };
        let ev = [r(0x1080), r(0x2080), r(0x1080)];
        let s = run_trace(&ev, &SimConfig::default(), &aliases(), true).unwrap();
        assert_eq!(s.cores[0].read_misses, 3);
        assert_eq!(s.cores[0].synonym_evictions, 2);
    }

    #[test]
    fn bad_core_index_is_reported() {
        let ev = [TraceEvent::Read {
            core: 3,
            ctx: 0,
            vaddr: 0,
        }];
        assert!(matches!(
            run_trace(&ev, &SimConfig::default(), &PageTable::identity(), false),
            Err(SimError::InvalidEvent { index: 0, .. })
        ));
    }

    #[test]
    fn faulting_access_is_skipped() {
        let ev = [
            TraceEvent::Write {
                core: 0,
                ctx: 0,
                vaddr: 0x5000,
                data: 1,
            },
            TraceEvent::Read {
                core: 0,
                ctx: 0,
                vaddr: 0x1000,
            },
        ];
        let mut pt = PageTable::new(false);
        pt.map(0, 1, 7);
        let s = run_trace(&ev, &SimConfig::default(), &pt, true).unwrap();
        assert_eq!(s.cores[0].translation_faults, 1);
        assert_eq!(s.cores[0].read_misses, 1);
        assert_eq!(s.cores[0].write_misses, 0);
    }

    #[test]
    fn page_table_outside_widths_is_rejected() {
        let mut pt = PageTable::new(false);
        pt.map(0, 1, 1 << 30);
        let cfg = SimConfig {
            cache: CacheConfig::default(),
            ..SimConfig::default()
        };
        assert!(matches!(
            Simulator::new(&cfg, pt, false),
            Err(SimError::PageTable(_))
        ));
    }
}
