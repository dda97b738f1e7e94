//! The VIVT cache array.
//!
//! Tags and data are looked up together using only virtual address bits.
//! Writes are write-through with allocation; keeping memory current is the
//! caller's job. Lines are invalidated by virtual line index, optionally
//! qualified by the virtual tag when the cache is set associative.

use crate::addr::{vivt_index, Geometry, VirtAddr};

/// Read or write request presented to the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rw {
    Read,
    Write(u32),
}

impl Rw {
    pub fn is_write(&self) -> bool {
        matches!(self, Rw::Write(_))
    }
}

/// A virtual cache line as named by the RLUT: its set index plus, when the
/// RLUT keeps enough bits to know it, the virtual tag selecting the way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LineRef {
    pub index: usize,
    pub vtag: Option<u64>,
}

pub fn read_be_word(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn write_be_word(bytes: &mut [u8], offset: usize, word: u32) {
    bytes[offset..offset + 4].copy_from_slice(&word.to_be_bytes());
}

#[derive(Debug, Clone)]
pub struct CacheState {
    geometry: Geometry,
    valid: Vec<bool>,
    vtags: Vec<u64>,
    // 0 = most recently used
    lru_rank: Vec<u8>,
    data: Vec<u8>,
}

impl CacheState {
    pub fn new(geometry: Geometry) -> Self {
        let lines = geometry.line_count();
        let ways = geometry.ways;
        CacheState {
            geometry,
            valid: vec![false; lines],
            vtags: vec![0; lines],
            lru_rank: (0..lines).map(|i| (i % ways) as u8).collect(),
            data: vec![0; lines * geometry.config.line_size as usize],
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    fn slot(&self, set: usize, way: usize) -> usize {
        set * self.geometry.ways + way
    }

    fn line_bytes(&self, slot: usize) -> &[u8] {
        let n = self.geometry.config.line_size as usize;
        &self.data[slot * n..(slot + 1) * n]
    }

    fn line_bytes_mut(&mut self, slot: usize) -> &mut [u8] {
        let n = self.geometry.config.line_size as usize;
        &mut self.data[slot * n..(slot + 1) * n]
    }

    fn find(&self, set: usize, vtag: u64) -> Option<usize> {
        (0..self.geometry.ways)
            .map(|w| self.slot(set, w))
            .find(|&s| self.valid[s] && self.vtags[s] == vtag)
    }

    fn touch(&mut self, set: usize, slot: usize) {
        let ways = self.geometry.ways;
        if ways == 1 {
            return;
        }
        let rank = self.lru_rank[slot];
        for s in set * ways..(set + 1) * ways {
            if self.lru_rank[s] < rank {
                self.lru_rank[s] += 1;
            }
        }
        self.lru_rank[slot] = 0;
    }

    /// Tag check and data access in one step. Returns the word read (or
    /// written) on a hit and `None` on a miss, in which case nothing changes.
    pub fn hit_check_and_access(&mut self, rw: Rw, v: VirtAddr) -> Option<u32> {
        let g = self.geometry;
        let set = vivt_index(v, &g);
        let slot = self.find(set, g.vtag(v))?;
        self.touch(set, slot);
        let offset = g.line_offset(v.0) & !3;
        match rw {
            Rw::Read => Some(read_be_word(self.line_bytes(slot), offset)),
            Rw::Write(word) => {
                write_be_word(self.line_bytes_mut(slot), offset, word);
                Some(word)
            }
        }
    }

    /// Side-effect-free presence check.
    pub fn probe(&self, v: VirtAddr) -> bool {
        self.find(vivt_index(v, &self.geometry), self.geometry.vtag(v))
            .is_some()
    }

    /// Installs `line` for `v`, returning the valid line it displaced.
    pub fn fill_line(&mut self, v: VirtAddr, line: &[u8]) -> Option<LineRef> {
        let g = self.geometry;
        assert_eq!(
            line.len() as u64,
            g.config.line_size,
            "line image has the wrong size"
        );
        let set = vivt_index(v, &g);
        let vtag = g.vtag(v);
        let ways = g.ways;
        let slot = self.find(set, vtag).unwrap_or_else(|| {
            (set * ways..(set + 1) * ways)
                .find(|&s| !self.valid[s])
                .unwrap_or_else(|| {
                    (set * ways..(set + 1) * ways)
                        .max_by_key(|&s| self.lru_rank[s])
                        .unwrap()
                })
        });
        let evicted = (self.valid[slot] && self.vtags[slot] != vtag).then(|| LineRef {
            index: set,
            vtag: Some(self.vtags[slot]),
        });
        self.valid[slot] = true;
        self.vtags[slot] = vtag;
        self.line_bytes_mut(slot).copy_from_slice(line);
        self.touch(set, slot);
        evicted
    }

    /// Clears the line named by `line`. Without a tag every valid way of the
    /// set is cleared. Returns whether any valid line was cleared.
    pub fn invalidate_virtual_line(&mut self, line: LineRef) -> bool {
        let ways = self.geometry.ways;
        if line.index >= self.geometry.sets {
            return false;
        }
        let mut cleared = false;
        for s in line.index * ways..(line.index + 1) * ways {
            if self.valid[s] && line.vtag.is_none_or(|t| t == self.vtags[s]) {
                self.valid[s] = false;
                cleared = true;
            }
        }
        cleared
    }

    pub fn flush_all(&mut self) {
        self.valid.iter_mut().for_each(|v| *v = false);
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Valid lines as (virtual line address, cached bytes).
    pub fn valid_lines(&self) -> impl Iterator<Item = (VirtAddr, &[u8])> + '_ {
        let g = self.geometry;
        (0..self.valid.len())
            .filter(move |&s| self.valid[s])
            .map(move |s| {
                (
                    g.virt_line_addr(s / g.ways, self.vtags[s]),
                    self.line_bytes(s),
                )
            })
    }

    /// Valid lines in set `index` as (way, vtag).
    pub fn set_contents(&self, index: usize) -> Vec<(usize, u64)> {
        let ways = self.geometry.ways;
        (0..ways)
            .filter(|&w| self.valid[index * ways + w])
            .map(|w| (w, self.vtags[index * ways + w]))
            .collect()
    }

    /// The line reference that names the resident copy of `v`, if any.
    pub fn line_ref(&self, v: VirtAddr) -> LineRef {
        LineRef {
            index: vivt_index(v, &self.geometry),
            vtag: Some(self.geometry.vtag(v)),
        }
    }
}
