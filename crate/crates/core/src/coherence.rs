//! Multi-core memory system with a write-through invalidating controller.
//!
//! Every write-through reaching the memory controller updates memory and
//! queues an invalidation of that physical line at every other core. A core's
//! cache controller samples its queue only when no miss is pending: queued
//! invalidations are applied on entry to `Ready`, before the next request is
//! served. The RLUT turns each physical address back into the resident
//! virtual lines.

use std::collections::VecDeque;

use crate::addr::{Geometry, PhysAddr, VirtAddr};
use crate::cache::{CacheState, LineRef, Rw};
use crate::memory::PhysMemory;
use crate::mmu::{
    start_miss, ContextId, InvalidationCause, Latencies, PageTable, PendingMiss, TranslationFault,
};
use crate::rlut::{Rlut, INSERT_CYCLES, LOOKUP_CYCLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerState {
    Ready,
    MissPendingAwaitInvalidate,
    MissPendingAwaitLine,
}

/// Per-core event counters and cycle ledger.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoreCounters {
    pub read_hits: u64,
    pub read_misses: u64,
    pub write_hits: u64,
    pub write_misses: u64,
    /// Resident synonyms cleared at the RLUT's direction.
    pub synonym_evictions: u64,
    /// Residents cleared because their RLUT entry was reclaimed.
    pub rlut_displacement_evictions: u64,
    pub snoop_invalidations_applied: u64,
    /// RLUT-directed invalidations that found no valid line.
    pub stale_invalidation_noops: u64,
    pub flushes: u64,
    pub translation_faults: u64,
    pub hit_cycles: u64,
    pub miss_cycles: u64,
    pub snoop_cycles: u64,
    pub fault_cycles: u64,
    pub total_cycles: u64,
    pub rlut_lookups: u64,
    pub rlut_lookup_cycles: u64,
    pub rlut_inserts: u64,
    pub rlut_insert_cycles: u64,
    pub max_queue_depth: u64,
}

impl CoreCounters {
    pub fn accesses(&self) -> u64 {
        self.hits() + self.misses()
    }

    pub fn hits(&self) -> u64 {
        self.read_hits + self.write_hits
    }

    pub fn misses(&self) -> u64 {
        self.read_misses + self.write_misses
    }

    fn charge(&mut self, cycles: u64) {
        self.total_cycles += cycles;
    }
}

/// Entries of the optional event log, used to assert orderings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEntry {
    Hit {
        core: usize,
        v: VirtAddr,
    },
    MissStart {
        core: usize,
        v: VirtAddr,
        p: PhysAddr,
    },
    SynonymInvalidate {
        core: usize,
        line: LineRef,
        cleared: bool,
    },
    Fill {
        core: usize,
        v: VirtAddr,
    },
    Enqueue {
        core: usize,
        p: PhysAddr,
    },
    Snoop {
        core: usize,
        p: PhysAddr,
        cleared: usize,
    },
    Flush {
        core: usize,
        ctx: ContextId,
    },
    Fault {
        core: usize,
        v: VirtAddr,
    },
}

#[derive(Debug, Clone)]
pub struct Core {
    cache: CacheState,
    rlut: Rlut,
    state: ControllerState,
    queue: VecDeque<PhysAddr>,
    pending: Option<PendingMiss>,
    ctx: ContextId,
    counters: CoreCounters,
}

impl Core {
    fn new(g: Geometry) -> Self {
        Core {
            cache: CacheState::new(g),
            rlut: Rlut::new(g),
            state: ControllerState::Ready,
            queue: VecDeque::new(),
            pending: None,
            ctx: 0,
            counters: CoreCounters::default(),
        }
    }

    pub fn cache(&self) -> &CacheState {
        &self.cache
    }

    pub fn rlut(&self) -> &Rlut {
        &self.rlut
    }

    pub fn state(&self) -> ControllerState {
        self.state
    }

    pub fn queue(&self) -> &VecDeque<PhysAddr> {
        &self.queue
    }

    pub fn ctx(&self) -> ContextId {
        self.ctx
    }

    pub fn counters(&self) -> &CoreCounters {
        &self.counters
    }

    /// Direct access for building test states by hand.
    pub fn parts_mut(&mut self) -> (&mut CacheState, &mut Rlut) {
        (&mut self.cache, &mut self.rlut)
    }
}

/// Result of presenting a request to a `Ready` controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Issue {
    /// Served in one cycle; carries the word read or written.
    Hit(u32),
    /// A miss is now pending; step the controller to finish it.
    Miss,
}

#[derive(Debug, Clone)]
pub struct MemorySystem {
    geometry: Geometry,
    latencies: Latencies,
    memory: PhysMemory,
    page_table: PageTable,
    cores: Vec<Core>,
    cycle: u64,
    max_queue_depth: usize,
    log: Option<Vec<LogEntry>>,
}

impl MemorySystem {
    pub fn new(
        geometry: Geometry,
        latencies: Latencies,
        core_count: usize,
        page_table: PageTable,
    ) -> Self {
        assert!(core_count > 0, "a system needs at least one core");
        MemorySystem {
            geometry,
            latencies,
            memory: PhysMemory::new(geometry.config.line_size),
            page_table,
            cores: (0..core_count).map(|_| Core::new(geometry)).collect(),
            cycle: 0,
            max_queue_depth: 0,
            log: None,
        }
    }

    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    pub fn log(&self) -> &[LogEntry] {
        self.log.as_deref().unwrap_or(&[])
    }

    fn record(&mut self, e: LogEntry) {
        if let Some(log) = &mut self.log {
            log.push(e);
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn latencies(&self) -> &Latencies {
        &self.latencies
    }

    pub fn memory(&self) -> &PhysMemory {
        &self.memory
    }

    pub fn page_table(&self) -> &PageTable {
        &self.page_table
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn core(&self, i: usize) -> &Core {
        &self.cores[i]
    }

    pub fn core_mut(&mut self, i: usize) -> &mut Core {
        &mut self.cores[i]
    }

    /// Cycles elapsed across the serialized event stream.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn max_queue_depth(&self) -> usize {
        self.max_queue_depth
    }

    fn charge(&mut self, core: usize, cycles: u64) {
        self.cores[core].counters.charge(cycles);
        self.cycle += cycles;
    }

    fn enqueue(&mut self, core: usize, p: PhysAddr) {
        let line = self.geometry.line_base_phys(p);
        let c = &mut self.cores[core];
        c.queue.push_back(line);
        c.counters.max_queue_depth = c.counters.max_queue_depth.max(c.queue.len() as u64);
        self.max_queue_depth = self.max_queue_depth.max(c.queue.len());
        self.record(LogEntry::Enqueue { core, p: line });
    }

    /// Memory controller handling of a write-through from `source`.
    pub fn coherent_write(&mut self, source: usize, p: PhysAddr, word: u32) {
        self.memory.write_word(p, word);
        self.broadcast_from(source, p);
    }

    fn broadcast_from(&mut self, source: usize, p: PhysAddr) {
        for c in 0..self.cores.len() {
            if c != source {
                self.enqueue(c, p);
            }
        }
    }

    /// An invalidation from outside the cores (e.g. a DMA agent): queued at every core.
    pub fn external_invalidate(&mut self, p: PhysAddr) {
        for c in 0..self.cores.len() {
            self.enqueue(c, p);
        }
    }

    /// Looks `p` up in the core's RLUT and clears every resident synonym.
    /// Returns the number of valid lines cleared.
    ///
    /// Panics if the core has a miss pending.
    pub fn apply_snoop_invalidate(&mut self, p: PhysAddr, core: usize) -> usize {
        assert_eq!(
            self.cores[core].state,
            ControllerState::Ready,
            "snoop applied while a miss is pending"
        );
        let c = &mut self.cores[core];
        let targets = c.rlut.lookup(p);
        c.counters.rlut_lookups += 1;
        c.counters.rlut_lookup_cycles += LOOKUP_CYCLES;
        c.counters.snoop_cycles += LOOKUP_CYCLES;
        let mut cleared = 0;
        for line in targets {
            if c.cache.invalidate_virtual_line(line) {
                cleared += 1;
                c.counters.snoop_invalidations_applied += 1;
            } else {
                c.counters.stale_invalidation_noops += 1;
            }
        }
        self.charge(core, LOOKUP_CYCLES);
        self.record(LogEntry::Snoop { core, p, cleared });
        cleared
    }

    /// Applies every queued invalidation, oldest first.
    pub fn drain(&mut self, core: usize) -> usize {
        let mut cleared = 0;
        while let Some(p) = self.cores[core].queue.pop_front() {
            cleared += self.apply_snoop_invalidate(p, core);
        }
        cleared
    }

    /// Drains every core's queue.
    pub fn quiesce(&mut self) {
        for c in 0..self.cores.len() {
            debug_assert_eq!(self.cores[c].state, ControllerState::Ready);
            self.drain(c);
        }
    }

    pub fn context_switch(&mut self, core: usize, ctx: ContextId) {
        assert_eq!(self.cores[core].state, ControllerState::Ready);
        self.drain(core);
        self.switch_to(core, ctx);
    }

    fn switch_to(&mut self, core: usize, ctx: ContextId) {
        let c = &mut self.cores[core];
        c.cache.flush_all();
        c.ctx = ctx;
        c.counters.flushes += 1;
        self.record(LogEntry::Flush { core, ctx });
    }

    /// Presents a memory access to a `Ready` controller. Queued invalidations
    /// are applied first; an access in a context other than the core's current
    /// one implies a context switch.
    pub fn issue(
        &mut self,
        core: usize,
        ctx: ContextId,
        rw: Rw,
        v: VirtAddr,
    ) -> Result<Issue, TranslationFault> {
        assert_eq!(
            self.cores[core].state,
            ControllerState::Ready,
            "request issued while a miss is pending"
        );
        self.drain(core);
        if self.cores[core].ctx != ctx {
            self.switch_to(core, ctx);
        }
        let g = self.geometry;
        let v = g.virt(v.0 & !3);

        if let Some(word) = self.cores[core].cache.hit_check_and_access(rw, v) {
            {
                let k = &mut self.cores[core].counters;
                k.hit_cycles += 1;
                match rw {
                    Rw::Read => k.read_hits += 1,
                    Rw::Write(_) => k.write_hits += 1,
                }
            }
            self.charge(core, 1);
            self.record(LogEntry::Hit { core, v });
            if let Rw::Write(w) = rw {
                self.write_hit_through(core, ctx, v, w);
            }
            return Ok(Issue::Hit(word));
        }

        let c = &mut self.cores[core];
        let pending = match start_miss(
            rw,
            ctx,
            v,
            &self.page_table,
            &mut c.rlut,
            &mut self.memory,
            &self.latencies,
        ) {
            Ok(p) => p,
            Err(fault) => {
                c.counters.translation_faults += 1;
                c.counters.fault_cycles += self.latencies.translate;
                let t = self.latencies.translate;
                self.charge(core, t);
                self.record(LogEntry::Fault { core, v });
                return Err(fault);
            }
        };
        c.counters.rlut_inserts += 1;
        c.counters.rlut_insert_cycles += INSERT_CYCLES;
        match rw {
            Rw::Read => c.counters.read_misses += 1,
            Rw::Write(_) => c.counters.write_misses += 1,
        }
        let p = pending.p;
        c.pending = Some(pending);
        c.state = ControllerState::MissPendingAwaitInvalidate;
        self.record(LogEntry::MissStart { core, v, p });
        if rw.is_write() {
            // the miss path already wrote memory
            self.broadcast_from(core, p);
        }
        Ok(Issue::Miss)
    }

    fn write_hit_through(&mut self, core: usize, ctx: ContextId, v: VirtAddr, word: u32) {
        let g = self.geometry;
        // the line is resident, so its page translated when it was filled
        let p = self
            .page_table
            .translate(ctx, v, &g)
            .expect("resident line lost its translation");
        self.coherent_write(core, p, word);
        if g.config.synonym_limit > 1 {
            let c = &mut self.cores[core];
            let own = c.cache.line_ref(v);
            let targets = c.rlut.lookup(p);
            c.counters.rlut_lookups += 1;
            c.counters.rlut_lookup_cycles += LOOKUP_CYCLES;
            for line in targets {
                if line.index == own.index && line.vtag.is_none_or(|t| Some(t) == own.vtag) {
                    continue;
                }
                if c.cache.invalidate_virtual_line(line) {
                    c.counters.synonym_evictions += 1;
                } else {
                    c.counters.stale_invalidation_noops += 1;
                }
            }
        }
    }

    /// Advances a pending miss by one controller state. Returns the word
    /// read or written once the line has been installed.
    pub fn step(&mut self, core: usize) -> Option<u32> {
        match self.cores[core].state {
            ControllerState::Ready => None,
            ControllerState::MissPendingAwaitInvalidate => {
                let c = &mut self.cores[core];
                let pending = c.pending.as_ref().expect("pending miss");
                let issued = pending.apply_invalidations(&mut c.cache);
                for inv in &issued {
                    match (inv.cleared, inv.cause) {
                        (false, _) => c.counters.stale_invalidation_noops += 1,
                        (true, InvalidationCause::Synonym) => c.counters.synonym_evictions += 1,
                        (true, InvalidationCause::Displaced) => {
                            c.counters.rlut_displacement_evictions += 1
                        }
                    }
                }
                c.state = ControllerState::MissPendingAwaitLine;
                for inv in issued {
                    self.record(LogEntry::SynonymInvalidate {
                        core,
                        line: inv.line,
                        cleared: inv.cleared,
                    });
                }
                None
            }
            ControllerState::MissPendingAwaitLine => {
                let c = &mut self.cores[core];
                let pending = c.pending.take().expect("pending miss");
                pending.fill(&mut c.cache);
                c.state = ControllerState::Ready;
                c.counters.miss_cycles += pending.cycles;
                let word = match pending.rw {
                    Rw::Write(w) => w,
                    Rw::Read => {
                        let off = self.geometry.line_offset(pending.v.0) & !3;
                        crate::cache::read_be_word(&pending.line, off)
                    }
                };
                self.charge(core, pending.cycles);
                self.record(LogEntry::Fill { core, v: pending.v });
                Some(word)
            }
        }
    }

    /// A complete access: issue and, on a miss, run the controller to `Ready`.
    pub fn access(
        &mut self,
        core: usize,
        ctx: ContextId,
        rw: Rw,
        v: VirtAddr,
    ) -> Result<u32, TranslationFault> {
        match self.issue(core, ctx, rw, v)? {
            Issue::Hit(w) => Ok(w),
            Issue::Miss => loop {
                if let Some(w) = self.step(core) {
                    return Ok(w);
                }
            },
        }
    }

    pub fn read(&mut self, core: usize, ctx: ContextId, v: u64) -> Result<u32, TranslationFault> {
        self.access(core, ctx, Rw::Read, VirtAddr(v))
    }

    pub fn write(
        &mut self,
        core: usize,
        ctx: ContextId,
        v: u64,
        word: u32,
    ) -> Result<u32, TranslationFault> {
        self.access(core, ctx, Rw::Write(word), VirtAddr(v))
    }
}
