//! Forward translation and the cache miss path.
//!
//! On a miss the MMU translates the virtual address, then presents the
//! (physical, virtual) pair to the RLUT while the line fetch is in flight.
//! The RLUT's answer names the synonyms the cache must drop before the new
//! line is installed, which keeps every physical line at no more than S
//! resident virtual copies.

use std::fmt;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::addr::{intra_page_offset, Geometry, PhysAddr, VirtAddr};
use crate::cache::{CacheState, LineRef, Rw};
use crate::memory::PhysMemory;
use crate::rlut::{InvalidationPlan, Rlut, INSERT_CYCLES};
use crate::text::{content, parse_hex, parse_hex_or_dec};

pub type ContextId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("translation fault: context {ctx} has no mapping for {v}")]
pub struct TranslationFault {
    pub ctx: ContextId,
    pub v: VirtAddr,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PageTableError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: context {ctx} page {vpn:#x} is already mapped")]
    Duplicate {
        line: usize,
        ctx: ContextId,
        vpn: u64,
    },
    #[error("context {ctx} page {vpn:#x}: {msg}")]
    Range {
        ctx: ContextId,
        vpn: u64,
        msg: &'static str,
    },
}

/// Static virtual→physical page mapping keyed by context.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageTable {
    map: FxHashMap<(ContextId, u64), u64>,
    /// Unmapped pages translate to the same page number.
    pub default_identity: bool,
}

impl PageTable {
    pub fn identity() -> Self {
        PageTable {
            map: FxHashMap::default(),
            default_identity: true,
        }
    }

    pub fn new(default_identity: bool) -> Self {
        PageTable {
            map: FxHashMap::default(),
            default_identity,
        }
    }

    /// Adds a mapping; returns false if (ctx, vpn) was already mapped.
    pub fn map(&mut self, ctx: ContextId, vpn: u64, ppn: u64) -> bool {
        use std::collections::hash_map::Entry;
        match self.map.entry((ctx, vpn)) {
            Entry::Occupied(_) => false,
            Entry::Vacant(e) => {
                e.insert(ppn);
                true
            }
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn lookup(&self, ctx: ContextId, vpn: u64) -> Option<u64> {
        self.map
            .get(&(ctx, vpn))
            .copied()
            .or(self.default_identity.then_some(vpn))
    }

    /// Mappings sorted by (ctx, vpn).
    pub fn mappings(&self) -> Vec<(ContextId, u64, u64)> {
        let mut v: Vec<_> = self.map.iter().map(|(&(c, vp), &pp)| (c, vp, pp)).collect();
        v.sort_unstable();
        v
    }

    /// Checks every mapping fits the address widths of `g`.
    pub fn validate(&self, g: &Geometry) -> Result<(), PageTableError> {
        let vpn_limit = 1u64 << (g.config.va_width - g.page_bits);
        let ppn_limit = 1u64 << (g.config.pa_width - g.page_bits);
        for (ctx, vpn, ppn) in self.mappings() {
            if vpn >= vpn_limit {
                return Err(PageTableError::Range {
                    ctx,
                    vpn,
                    msg: "virtual page number exceeds va_width",
                });
            }
            if ppn >= ppn_limit {
                return Err(PageTableError::Range {
                    ctx,
                    vpn,
                    msg: "physical page number exceeds pa_width",
                });
            }
        }
        Ok(())
    }

    pub fn translate(
        &self,
        ctx: ContextId,
        v: VirtAddr,
        g: &Geometry,
    ) -> Result<PhysAddr, TranslationFault> {
        translate(ctx, v, self, g)
    }
}

impl fmt::Display for PageTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "identity {}",
            if self.default_identity { "on" } else { "off" }
        )?;
        for (ctx, vpn, ppn) in self.mappings() {
            writeln!(f, "{ctx} {vpn:#x} {ppn:#x}")?;
        }
        Ok(())
    }
}

pub fn translate(
    ctx: ContextId,
    v: VirtAddr,
    pt: &PageTable,
    g: &Geometry,
) -> Result<PhysAddr, TranslationFault> {
    let v = g.virt(v.0);
    let ppn = pt
        .lookup(ctx, g.vpn(v))
        .ok_or(TranslationFault { ctx, v })?;
    Ok(g.phys((ppn << g.page_bits) | intra_page_offset(v.0, g)))
}

/// Parses the page-table file format: an optional `identity on|off` header
/// followed by `<ctx> <vpn-hex> <ppn-hex>` lines; `#` starts a comment.
pub fn load_page_table(text: &str) -> Result<PageTable, PageTableError> {
    let mut pt = PageTable::new(false);
    let mut seen_mapping = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = content(raw);
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let err = |msg: String| PageTableError::Parse { line, msg };
        if fields[0] == "identity" {
            if seen_mapping {
                return Err(err("identity header must precede mappings".into()));
            }
            pt.default_identity = match fields.get(1..) {
                Some(["on"]) => true,
                Some(["off"]) => false,
                _ => return Err(err("expected `identity on` or `identity off`".into())),
            };
            continue;
        }
        if fields.len() != 3 {
            return Err(err(format!(
                "expected `<ctx> <vpn> <ppn>`, got {} fields",
                fields.len()
            )));
        }
        let ctx = parse_hex_or_dec(fields[0])
            .and_then(|c| ContextId::try_from(c).ok())
            .ok_or_else(|| err(format!("bad context id `{}`", fields[0])))?;
        let vpn =
            parse_hex(fields[1]).ok_or_else(|| err(format!("bad virtual page `{}`", fields[1])))?;
        let ppn = parse_hex(fields[2])
            .ok_or_else(|| err(format!("bad physical page `{}`", fields[2])))?;
        if !pt.map(ctx, vpn, ppn) {
            return Err(PageTableError::Duplicate { line, ctx, vpn });
        }
        seen_mapping = true;
    }
    Ok(pt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Latencies {
    pub translate: u64,
    pub fetch: u64,
}

impl Default for Latencies {
    fn default() -> Self {
        Latencies {
            translate: 2,
            fetch: 8,
        }
    }
}

impl Latencies {
    /// Translation, then the line fetch with the RLUT insert running
    /// alongside it.
    pub fn miss_cycles(&self) -> u64 {
        self.translate + self.fetch.max(INSERT_CYCLES)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidationCause {
    /// A synonym of the missing line's physical address.
    Synonym,
    /// A resident of a physical line whose RLUT entry was reclaimed.
    Displaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssuedInvalidation {
    pub line: LineRef,
    pub cause: InvalidationCause,
    /// Whether a valid line was actually cleared.
    pub cleared: bool,
}

/// A miss that has been translated, recorded in the RLUT and whose line has
/// been fetched, but whose invalidations and fill are still outstanding.
#[derive(Debug, Clone)]
pub struct PendingMiss {
    pub rw: Rw,
    pub v: VirtAddr,
    pub p: PhysAddr,
    pub plan: InvalidationPlan,
    pub line: Vec<u8>,
    pub cycles: u64,
}

impl PendingMiss {
    /// Invalidations the cache must apply, in order.
    pub fn invalidations(&self) -> Vec<(LineRef, InvalidationCause)> {
        let mut out: Vec<(LineRef, InvalidationCause)> = Vec::new();
        out.extend(self.plan.evict.map(|l| (l, InvalidationCause::Synonym)));
        if self.rw.is_write() {
            out.extend(
                self.plan
                    .others
                    .iter()
                    .map(|&l| (l, InvalidationCause::Synonym)),
            );
        }
        out.extend(
            self.plan
                .displaced
                .iter()
                .map(|&l| (l, InvalidationCause::Displaced)),
        );
        out
    }

    pub fn apply_invalidations(&self, cache: &mut CacheState) -> Vec<IssuedInvalidation> {
        self.invalidations()
            .into_iter()
            .map(|(line, cause)| IssuedInvalidation {
                line,
                cause,
                cleared: cache.invalidate_virtual_line(line),
            })
            .collect()
    }

    /// Installs the fetched line; returns the line the fill displaced.
    pub fn fill(&self, cache: &mut CacheState) -> Option<LineRef> {
        cache.fill_line(self.v, &self.line)
    }
}

/// Translation, RLUT update, write-through of a write miss and the line
/// fetch. On a fault nothing is modified.
pub fn start_miss(
    rw: Rw,
    ctx: ContextId,
    v: VirtAddr,
    pt: &PageTable,
    rlut: &mut Rlut,
    memory: &mut PhysMemory,
    latencies: &Latencies,
) -> Result<PendingMiss, TranslationFault> {
    let g = *rlut.geometry();
    let v = g.virt(v.0);
    let p = translate(ctx, v, pt, &g)?;
    let plan = rlut.lookup_and_insert(p, v);
    if let Rw::Write(word) = rw {
        memory.write_word(p, word);
    }
    let line = memory.read_line(g.line_base_phys(p), g.config.line_size as usize);
    Ok(PendingMiss {
        rw,
        v,
        p,
        plan,
        line,
        cycles: latencies.miss_cycles(),
    })
}

#[derive(Debug, Clone)]
pub struct MissResult {
    pub p: PhysAddr,
    pub line: Vec<u8>,
    pub invalidations_issued: Vec<IssuedInvalidation>,
    /// Line displaced by the fill itself (capacity or conflict).
    pub fill_victim: Option<LineRef>,
    pub cycles: u64,
}

/// The complete miss path for one core.
#[allow(clippy::too_many_arguments)]
pub fn handle_miss(
    rw: Rw,
    ctx: ContextId,
    v: VirtAddr,
    pt: &PageTable,
    rlut: &mut Rlut,
    cache: &mut CacheState,
    memory: &mut PhysMemory,
    latencies: &Latencies,
) -> Result<MissResult, TranslationFault> {
    let pending = start_miss(rw, ctx, v, pt, rlut, memory, latencies)?;
    let invalidations_issued = pending.apply_invalidations(cache);
    let fill_victim = pending.fill(cache);
    Ok(MissResult {
        p: pending.p,
        invalidations_issued,
        fill_victim,
        cycles: pending.cycles,
        line: pending.line,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::{derive_geometry, vivt_index, CacheConfig};

    fn geometry(s: usize, r: u32) -> Geometry {
        derive_geometry(&CacheConfig {
            synonym_limit: s,
            assoc_log2: r,
            ..CacheConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn translation() {
        let g = geometry(1, 0);
        let id = PageTable::identity();
        assert_eq!(
            translate(0, VirtAddr(0x1234_5678), &id, &g),
            Ok(PhysAddr(0x0_1234_5678))
        );
        let mut pt = PageTable::new(false);
        pt.map(3, 0x2, 0x5);
        assert_eq!(
            translate(3, VirtAddr(0x2040), &pt, &g),
            Ok(PhysAddr(0x5040))
        );
        assert_eq!(
            translate(0, VirtAddr(0x2040), &pt, &g),
            Err(TranslationFault {
                ctx: 0,
                v: VirtAddr(0x2040)
            })
        );
    }

    #[test]
    fn page_table_files() {
        let pt = load_page_table("identity on\n").unwrap();
        assert!(pt.default_identity && pt.is_empty());
        let pt = load_page_table("").unwrap();
        assert!(!pt.default_identity);
        let pt = load_page_table("# one mapping\n0 0x2 0x5\n").unwrap();
        assert_eq!(pt.mappings(), vec![(0, 2, 5)]);
        let pt = load_page_table("identity off\n0x1f 10 abc # trailing\n").unwrap();
        assert_eq!(pt.lookup(0x1f, 0x10), Some(0xabc));
        assert_eq!(
            load_page_table("0 0x2 0x5\n\n0 0x2 0x7\n"),
            Err(PageTableError::Duplicate {
                line: 3,
                ctx: 0,
                vpn: 2
            })
        );
        assert!(matches!(
            load_page_table("0 0x2\n"),
            Err(PageTableError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            load_page_table("0 zz 1\n"),
            Err(PageTableError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            load_page_table("1 1 1\nidentity on\n"),
            Err(PageTableError::Parse { line: 2, .. })
        ));
        // display output parses back
        let mut pt = PageTable::new(true);
        pt.map(1, 0x10, 0x20);
        pt.map(0, 0x3, 0x4);
        assert_eq!(load_page_table(&pt.to_string()).unwrap(), pt);
    }

    #[test]
    fn validate_widths() {
        let g = geometry(1, 0);
        let mut pt = PageTable::new(false);
        pt.map(0, 0xF_FFFF, 0xFF_FFFF);
        assert!(pt.validate(&g).is_ok());
        pt.map(0, 0x10_0000, 0);
        assert!(pt.validate(&g).is_err());
    }

    struct Core {
        g: Geometry,
        rlut: Rlut,
        cache: CacheState,
        mem: PhysMemory,
        pt: PageTable,
    }

    impl Core {
        fn new(s: usize, r: u32, pt: PageTable) -> Self {
            let g = geometry(s, r);
            Core {
                g,
                rlut: Rlut::new(g),
                cache: CacheState::new(g),
                mem: PhysMemory::new(64),
                pt,
            }
        }

        fn miss(&mut self, rw: Rw, v: u64) -> MissResult {
            handle_miss(
                rw,
                0,
                VirtAddr(v),
                &self.pt,
                &mut self.rlut,
                &mut self.cache,
                &mut self.mem,
                &Latencies::default(),
            )
            .unwrap()
        }

        fn resident_for(&self, p: PhysAddr) -> usize {
            self.cache
                .valid_lines()
                .filter(|(v, _)| {
                    translate(0, *v, &self.pt, &self.g).map(|q| self.g.line_base_phys(q))
                        == Ok(self.g.line_base_phys(p))
                })
                .count()
        }
    }

    /// Virtual pages 1, 2, 3 alias physical page 0x40.
    fn aliasing() -> PageTable {
        let mut pt = PageTable::new(true);
        for vpn in 1..=3 {
            pt.map(0, vpn, 0x40);
        }
        pt
    }

    #[test]
    fn cold_miss_records_only_the_new_line() {
        let mut c = Core::new(1, 0, PageTable::identity());
        let r = c.miss(Rw::Read, 0x1_2340);
        assert!(r.invalidations_issued.is_empty());
        assert_eq!(r.cycles, 10);
        assert!(c.cache.probe(VirtAddr(0x1_2340)));
        let found = c.rlut.lookup(r.p);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].index, vivt_index(VirtAddr(0x1_2340), &c.g));
    }

    #[test]
    fn read_miss_on_synonym_evicts_the_resident_copy() {
        let mut c = Core::new(1, 0, aliasing());
        c.miss(Rw::Read, 0x1080);
        let r = c.miss(Rw::Read, 0x2080);
        assert_eq!(r.invalidations_issued.len(), 1);
        assert_eq!(r.invalidations_issued[0].line.index, 0x42);
        assert!(r.invalidations_issued[0].cleared);
        assert!(!c.cache.probe(VirtAddr(0x1080)));
        assert!(c.cache.probe(VirtAddr(0x2080)));
        assert_eq!(c.resident_for(r.p), 1);
    }

    #[test]
    fn write_miss_leaves_only_the_writer() {
        // every slot state of a two-slot entry: zero, one or two residents,
        // in every order, followed by a write miss on the third alias
        let vs = [0x1080u64, 0x2080, 0x3080];
        let seqs: Vec<Vec<usize>> = vec![vec![], vec![0], vec![1], vec![0, 1], vec![1, 0]];
        for seq in seqs {
            for writer in 0..3 {
                if seq.contains(&writer) {
                    continue;
                }
                let mut c = Core::new(2, 0, aliasing());
                for &i in &seq {
                    c.miss(Rw::Read, vs[i]);
                }
                let r = c.miss(Rw::Write(0xFEED), vs[writer]);
                let cleared = r.invalidations_issued.iter().filter(|i| i.cleared).count();
                assert_eq!(cleared, seq.len(), "{seq:?} then write {writer}");
                assert_eq!(c.resident_for(r.p), 1);
                assert!(c.cache.probe(VirtAddr(vs[writer])));
                assert_eq!(c.mem.read_word(r.p), 0xFEED);
                assert_eq!(
                    c.cache.hit_check_and_access(Rw::Read, VirtAddr(vs[writer])),
                    Some(0xFEED)
                );
                assert!(c.rlut.lookup(r.p).len() <= 2);
            }
        }
    }

    #[test]
    fn read_miss_with_room_keeps_both_synonyms() {
        let mut c = Core::new(2, 0, aliasing());
        c.miss(Rw::Read, 0x1080);
        let r = c.miss(Rw::Read, 0x2080);
        assert!(r.invalidations_issued.is_empty());
        assert_eq!(c.resident_for(r.p), 2);
        let r = c.miss(Rw::Read, 0x3080);
        // round robin replaces the oldest slot
        assert_eq!(r.invalidations_issued.len(), 1);
        assert!(!c.cache.probe(VirtAddr(0x1080)));
        assert_eq!(c.resident_for(r.p), 2);
    }

    #[test]
    fn fault_mutates_nothing() {
        let mut c = Core::new(1, 0, PageTable::new(false));
        let before_mem = c.mem.clone();
        let err = handle_miss(
            Rw::Write(5),
            0,
            VirtAddr(0x4000),
            &c.pt,
            &mut c.rlut,
            &mut c.cache,
            &mut c.mem,
            &Latencies::default(),
        )
        .unwrap_err();
        assert_eq!(err.v, VirtAddr(0x4000));
        assert_eq!(c.mem, before_mem);
        assert_eq!(c.rlut.occupancy(), 0);
        assert_eq!(c.cache.valid_count(), 0);
    }

    #[test]
    fn insert_hides_behind_fetch() {
        let l = Latencies::default();
        assert_eq!(l.miss_cycles(), l.translate + l.fetch);
        let short = Latencies {
            translate: 2,
            fetch: 1,
        };
        assert_eq!(short.miss_cycles(), 2 + INSERT_CYCLES);
    }
}
