//! Reference model: flat physical memory behind the page table, no caches.

use crate::addr::{Geometry, PhysAddr, VirtAddr};
use crate::memory::PhysMemory;
use crate::mmu::{translate, PageTable};

use super::trace::TraceEvent;

#[derive(Debug, Clone)]
pub struct Oracle {
    geometry: Geometry,
    page_table: PageTable,
    memory: PhysMemory,
}

impl Oracle {
    pub fn new(geometry: Geometry, page_table: PageTable) -> Self {
        Oracle {
            geometry,
            page_table,
            memory: PhysMemory::new(geometry.config.line_size),
        }
    }

    pub fn oracle_read(&self, p: PhysAddr) -> u32 {
        self.memory.read_word(p)
    }

    pub fn oracle_write(&mut self, p: PhysAddr, data: u32) {
        self.memory.write_word(p, data);
    }

    pub fn memory(&self) -> &PhysMemory {
        &self.memory
    }

    /// Replays one event. Returns the expected value of a read, `None` for
    /// every other event and for accesses that do not translate.
    pub fn apply(&mut self, event: &TraceEvent) -> Option<u32> {
        match *event {
            TraceEvent::Read { ctx, vaddr, .. } => {
                let p = translate(ctx, VirtAddr(vaddr), &self.page_table, &self.geometry).ok()?;
                Some(self.oracle_read(p))
            }
            TraceEvent::Write {
                ctx, vaddr, data, ..
            } => {
                if let Ok(p) = translate(ctx, VirtAddr(vaddr), &self.page_table, &self.geometry) {
                    self.oracle_write(p, data);
                }
                None
            }
            TraceEvent::ContextSwitch { .. } | TraceEvent::ExternalInvalidate { .. } => None,
        }
    }
}
