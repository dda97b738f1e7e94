//! Simulator for multi-core memory subsystems built on virtually-indexed,
//! virtually-tagged L1 caches kept synonym safe and coherent by a per-core
//! reverse lookup table.

pub mod addr;
pub mod cache;
pub mod coherence;
pub mod memory;
pub mod mmu;
pub mod rlut;
pub mod sim;
mod text;
