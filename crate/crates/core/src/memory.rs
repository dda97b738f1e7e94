//! Sparse physical memory backed by line-sized chunks. Untouched bytes read as 0.

use rustc_hash::FxHashMap;

use crate::addr::PhysAddr;
use crate::cache::{read_be_word, write_be_word};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhysMemory {
    chunk: u64,
    chunks: FxHashMap<u64, Box<[u8]>>,
    zeros: Box<[u8]>,
}

impl PhysMemory {
    pub fn new(chunk: u64) -> Self {
        assert!(chunk.is_power_of_two() && chunk >= 4);
        PhysMemory {
            chunk,
            chunks: FxHashMap::default(),
            zeros: vec![0; chunk as usize].into_boxed_slice(),
        }
    }

    fn split(&self, p: PhysAddr) -> (u64, usize) {
        (p.0 / self.chunk, (p.0 % self.chunk) as usize)
    }

    /// Big-endian word at the word-aligned address containing `p`.
    pub fn read_word(&self, p: PhysAddr) -> u32 {
        let (key, off) = self.split(p);
        self.chunks
            .get(&key)
            .map_or(0, |c| read_be_word(c, off & !3))
    }

    pub fn write_word(&mut self, p: PhysAddr, word: u32) {
        let (key, off) = self.split(p);
        let n = self.chunk as usize;
        let c = self
            .chunks
            .entry(key)
            .or_insert_with(|| vec![0; n].into_boxed_slice());
        write_be_word(c, off & !3, word);
    }

    /// Copies `out.len()` bytes starting at the (aligned) address `p`.
    pub fn read_into(&self, p: PhysAddr, out: &mut [u8]) {
        let (key, off) = self.split(p);
        debug_assert!(off + out.len() <= self.chunk as usize);
        match self.chunks.get(&key) {
            Some(c) => out.copy_from_slice(&c[off..off + out.len()]),
            None => out.fill(0),
        }
    }

    pub fn read_line(&self, p: PhysAddr, len: usize) -> Vec<u8> {
        let mut v = vec![0; len];
        self.read_into(p, &mut v);
        v
    }

    /// Compares the bytes at `p` with `bytes` without allocating.
    pub fn matches(&self, p: PhysAddr, bytes: &[u8]) -> bool {
        let (key, off) = self.split(p);
        match self.chunks.get(&key) {
            Some(c) => &c[off..off + bytes.len()] == bytes,
            None => bytes == &self.zeros[..bytes.len()],
        }
    }

    /// Non-zero words as (address, value), sorted by address.
    pub fn image(&self) -> Vec<(u64, u32)> {
        let mut out: Vec<(u64, u32)> = self
            .chunks
            .iter()
            .flat_map(|(&k, c)| {
                (0..c.len()).step_by(4).filter_map(move |o| {
                    let w = read_be_word(c, o);
                    (w != 0).then_some((k * self.chunk + o as u64, w))
                })
            })
            .collect();
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untouched_reads_zero() {
        let m = PhysMemory::new(64);
        assert_eq!(m.read_word(PhysAddr(0x1234)), 0);
        assert_eq!(m.read_line(PhysAddr(0x40), 64), vec![0; 64]);
        assert!(m.matches(PhysAddr(0x80), &[0; 64]));
    }

    #[test]
    fn word_round_trip_is_big_endian() {
        let mut m = PhysMemory::new(64);
        m.write_word(PhysAddr(0x1044), 0x0102_0304);
        m.write_word(PhysAddr(0x1044), 0xA0B0_C0D0);
        assert_eq!(m.read_word(PhysAddr(0x1044)), 0xA0B0_C0D0);
        let line = m.read_line(PhysAddr(0x1040), 64);
        assert_eq!(&line[4..8], &[0xA0, 0xB0, 0xC0, 0xD0]);
        assert_eq!(m.image(), vec![(0x1044, 0xA0B0_C0D0)]);
    }
}
