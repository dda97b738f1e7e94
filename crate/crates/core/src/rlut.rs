//! Reverse lookup table: physical line → resident virtual lines.
//!
//! The table is set associative. It is indexed by the line-within-page bits of
//! the physical address and tagged by the physical page number, so a matching
//! entry identifies one physical line. Each entry holds up to S synonym slots.
//!
//! A direct-mapped cache only needs the virtual set-index bits that lie above
//! the page offset: together with the physical line offset they name the one
//! line a synonym can occupy. A set-associative cache must also know which way
//! holds it, so slots keep the whole virtual page number there.

use crate::addr::{rlut_index, vivt_index, Geometry, PhysAddr, VirtAddr};
use crate::cache::LineRef;

/// Cycles for a lookup; lookups are fully pipelined.
pub const LOOKUP_CYCLES: u64 = 1;
/// Cycles for a lookup followed by an insert; not pipelined.
pub const INSERT_CYCLES: u64 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct SynonymSlot {
    valid: bool,
    bits: u64,
}

#[derive(Debug, Clone, Default)]
struct RlutEntry {
    valid: bool,
    ptag: u64,
    slots: Vec<SynonymSlot>,
    replace_ptr: usize,
}

impl RlutEntry {
    fn valid_slots(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.valid)
            .map(|(i, s)| (i, s.bits))
    }
}

/// What the cache must invalidate after [`Rlut::lookup_and_insert`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InvalidationPlan {
    /// Synonym whose slot was overwritten by the new virtual address.
    pub evict: Option<LineRef>,
    /// Remaining synonyms of the same physical line. Only a write miss
    /// invalidates these.
    pub others: Vec<LineRef>,
    /// Residents of a different physical line whose entry was reclaimed to
    /// make room. These must always be invalidated.
    pub displaced: Vec<LineRef>,
}

#[derive(Debug, Clone)]
pub struct Rlut {
    geometry: Geometry,
    entries: Vec<RlutEntry>,
    way_ptr: Vec<usize>,
}

impl Rlut {
    pub fn new(geometry: Geometry) -> Self {
        let s = geometry.config.synonym_limit;
        let entry = RlutEntry {
            slots: vec![SynonymSlot::default(); s],
            ..RlutEntry::default()
        };
        Rlut {
            geometry,
            entries: vec![entry; geometry.rlut_sets * geometry.rlut_ways],
            way_ptr: vec![0; geometry.rlut_sets],
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    fn stores_full_page(&self) -> bool {
        self.geometry.ways > 1
    }

    fn slot_bits(&self, v: VirtAddr) -> u64 {
        if self.stores_full_page() {
            self.geometry.vpn(v)
        } else {
            self.geometry.synonym_field(v)
        }
    }

    fn set_range(&self, set: usize) -> std::ops::Range<usize> {
        let ways = self.geometry.rlut_ways;
        set * ways..(set + 1) * ways
    }

    fn find(&self, p: PhysAddr) -> Option<usize> {
        let ptag = self.geometry.ppn(p);
        self.set_range(rlut_index(p, &self.geometry))
            .find(|&e| self.entries[e].valid && self.entries[e].ptag == ptag)
    }

    /// Rebuilds the cache line a slot refers to from the slot bits and the
    /// physical line offset.
    fn reconstruct(&self, set: usize, bits: u64) -> LineRef {
        let g = &self.geometry;
        let line_in_page = (set as u64) << g.line_bits;
        let v = g.virt((bits << g.page_bits) | line_in_page);
        LineRef {
            index: vivt_index(v, g),
            vtag: self.stores_full_page().then(|| g.vtag(v)),
        }
    }

    /// Resident synonyms recorded for the physical line containing `p`.
    pub fn lookup(&self, p: PhysAddr) -> Vec<LineRef> {
        let set = rlut_index(p, &self.geometry);
        match self.find(p) {
            Some(e) => self.entries[e]
                .valid_slots()
                .map(|(_, bits)| self.reconstruct(set, bits))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Records `p → v` and reports what must leave the cache so that no
    /// physical line ends up with more than S resident synonyms.
    ///
    /// If `v` is already recorded (a stale record left after the cache
    /// dropped the line), the record is reused and only the other synonyms
    /// are reported.
    pub fn lookup_and_insert(&mut self, p: PhysAddr, v: VirtAddr) -> InvalidationPlan {
        let set = rlut_index(p, &self.geometry);
        let bits = self.slot_bits(v);
        let mut plan = InvalidationPlan::default();

        let e = match self.find(p) {
            Some(e) => e,
            None => {
                let range = self.set_range(set);
                let e = match range.clone().find(|&e| !self.entries[e].valid) {
                    Some(e) => e,
                    None => {
                        let ways = self.geometry.rlut_ways;
                        let e = range.start + self.way_ptr[set];
                        self.way_ptr[set] = (self.way_ptr[set] + 1) % ways;
                        plan.displaced = self.entries[e]
                            .valid_slots()
                            .map(|(_, b)| self.reconstruct(set, b))
                            .collect();
                        e
                    }
                };
                let entry = &mut self.entries[e];
                entry.valid = true;
                entry.ptag = self.geometry.ppn(p);
                entry.replace_ptr = 0;
                entry.slots[0] = SynonymSlot { valid: true, bits };
                entry.slots[1..].iter_mut().for_each(|s| s.valid = false);
                return plan;
            }
        };

        let s = self.geometry.config.synonym_limit;
        let existing: Vec<(usize, u64)> = self.entries[e].valid_slots().collect();
        if let Some(&(hit, _)) = existing.iter().find(|(_, b)| *b == bits) {
            plan.others = existing
                .iter()
                .filter(|(i, _)| *i != hit)
                .map(|&(_, b)| self.reconstruct(set, b))
                .collect();
            return plan;
        }
        if existing.len() < s {
            let free = self.entries[e].slots.iter().position(|s| !s.valid).unwrap();
            self.entries[e].slots[free] = SynonymSlot { valid: true, bits };
            plan.others = existing
                .iter()
                .map(|&(_, b)| self.reconstruct(set, b))
                .collect();
            return plan;
        }
        let victim = self.entries[e].replace_ptr;
        self.entries[e].replace_ptr = (victim + 1) % s;
        let old = self.entries[e].slots[victim].bits;
        self.entries[e].slots[victim].bits = bits;
        plan.evict = Some(self.reconstruct(set, old));
        plan.others = existing
            .iter()
            .filter(|(i, _)| *i != victim)
            .map(|&(_, b)| self.reconstruct(set, b))
            .collect();
        plan
    }

    /// Number of valid entries (tracked physical lines).
    pub fn occupancy(&self) -> usize {
        self.entries.iter().filter(|e| e.valid).count()
    }

    /// Physical line addresses with a valid entry, with their synonym count.
    pub fn tracked_lines(&self) -> Vec<(PhysAddr, usize)> {
        let g = &self.geometry;
        let ways = g.rlut_ways;
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.valid)
            .map(|(i, e)| {
                let set = (i / ways) as u64;
                let p = PhysAddr((e.ptag << g.page_bits) | (set << g.line_bits));
                (p, e.valid_slots().count())
            })
            .collect()
    }

    /// Whether the entry for `p` names `line`. A tagless reference matches
    /// on the set index alone.
    pub fn records(&self, p: PhysAddr, line: LineRef) -> bool {
        let set = rlut_index(p, &self.geometry);
        self.find(p).is_some_and(|e| {
            self.entries[e].valid_slots().any(|(_, b)| {
                let r = self.reconstruct(set, b);
                r.index == line.index
                    && (r.vtag.is_none() || line.vtag.is_none() || r.vtag == line.vtag)
            })
        })
    }

    /// Structural invariants; returns a description of each violation.
    pub fn check_structure(&self) -> Vec<String> {
        let mut out = Vec::new();
        let s = self.geometry.config.synonym_limit;
        let tag_limit = 1u64 << self.geometry.rlut_tag.width();
        for set in 0..self.geometry.rlut_sets {
            let entries = &self.entries[self.set_range(set)];
            for (i, e) in entries.iter().enumerate() {
                if !e.valid {
                    continue;
                }
                if e.ptag >= tag_limit {
                    out.push(format!(
                        "set {set}: tag {:#x} exceeds the physical width",
                        e.ptag
                    ));
                }
                if entries[..i].iter().any(|o| o.valid && o.ptag == e.ptag) {
                    out.push(format!("set {set}: duplicate entry for tag {:#x}", e.ptag));
                }
                if e.slots.len() != s {
                    out.push(format!(
                        "set {set} tag {:#x}: {} synonym slots for S={s}",
                        e.ptag,
                        e.slots.len()
                    ));
                }
                for (j, slot) in e.slots.iter().enumerate() {
                    if slot.valid && e.slots[..j].iter().any(|o| o.valid && o.bits == slot.bits) {
                        out.push(format!(
                            "set {set} tag {:#x}: duplicate synonym {:#x}",
                            e.ptag, slot.bits
                        ));
                    }
                }
            }
        }
        out
    }
}

/// Bytes of RLUT storage for a 64-byte-line cache with 4 KB pages: a 24-bit
/// physical tag and a 3-bit synonym field per slot for every cache line.
/// Caches of one page or less need no table.
pub fn bytes_needed(cache_size: u64, synonym_limit: u64) -> u64 {
    if cache_size <= 4096 {
        return 0;
    }
    (cache_size / 64) * (24 + 3 * synonym_limit) / 8
}
