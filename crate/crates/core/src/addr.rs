//! Address arithmetic for a VIVT cache and its reverse lookup table.
//!
//! Every bit-field the cache, the RLUT and the MMU need is derived once from
//! a [`CacheConfig`] into a [`Geometry`]. Addresses are carried as `u64` and
//! masked to the configured virtual/physical widths at module boundaries.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{field} must be a power of two (got {value})")]
    NotPowerOfTwo { field: &'static str, value: u64 },
    #[error("{field} = {value} is out of range: {reason}")]
    OutOfRange {
        field: &'static str,
        value: u64,
        reason: &'static str,
    },
}

/// A virtual address, masked to the configured virtual width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VirtAddr(pub u64);

/// A physical address, masked to the configured physical width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PhysAddr(pub u64);

impl fmt::Display for VirtAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v:{:#010x}", self.0)
    }
}

impl fmt::Display for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p:{:#011x}", self.0)
    }
}

/// Static parameters of one core's L1 cache and its translation environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheConfig {
    pub cache_size: u64,
    pub line_size: u64,
    /// log2 of the associativity; 0 is direct mapped.
    pub assoc_log2: u32,
    pub page_size: u64,
    pub va_width: u32,
    pub pa_width: u32,
    /// Maximum number of resident virtual lines per physical line (S).
    pub synonym_limit: usize,
}

impl Default for CacheConfig {
    /// 32 KB direct-mapped, 64 B lines, 4 KB pages, 32-bit VA, 36-bit PA, S = 1.
    fn default() -> Self {
        CacheConfig {
            cache_size: 32 * 1024,
            line_size: 64,
            assoc_log2: 0,
            page_size: 4096,
            va_width: 32,
            pa_width: 36,
            synonym_limit: 1,
        }
    }
}

impl CacheConfig {
    pub fn geometry(&self) -> Result<Geometry, ConfigError> {
        derive_geometry(self)
    }
}

/// Inclusive bit range `[high:low]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitRange {
    pub high: u32,
    pub low: u32,
}

impl BitRange {
    pub fn width(&self) -> u32 {
        self.high + 1 - self.low
    }

    pub fn extract(&self, value: u64) -> u64 {
        (value >> self.low) & mask(self.width())
    }
}

impl fmt::Display for BitRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}:{}]", self.high, self.low)
    }
}

/// Derived bit-field layout for a [`CacheConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub config: CacheConfig,
    pub line_bits: u32,
    pub page_bits: u32,
    /// VIVT set index within a virtual address.
    pub set_index: BitRange,
    /// RLUT set index within a physical address (the line offset inside a page).
    pub rlut_index: BitRange,
    /// RLUT tag within a physical address (the physical page number).
    pub rlut_tag: BitRange,
    /// Width of the virtual set-index bits that lie above the page offset.
    pub synonym_bits: u32,
    pub rlut_ways: usize,
    pub rlut_sets: usize,
    pub ways: usize,
    pub sets: usize,
    pub synonym_problem: bool,
}

fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

fn log2_exact(field: &'static str, value: u64) -> Result<u32, ConfigError> {
    if value == 0 || !value.is_power_of_two() {
        return Err(ConfigError::NotPowerOfTwo { field, value });
    }
    Ok(value.trailing_zeros())
}

/// Validates `config` and computes its bit-field layout.
pub fn derive_geometry(config: &CacheConfig) -> Result<Geometry, ConfigError> {
    let cache_bits = log2_exact("cache_size", config.cache_size)?;
    let line_bits = log2_exact("line_size", config.line_size)?;
    let page_bits = log2_exact("page_size", config.page_size)?;

    if config.line_size < 4 {
        return Err(ConfigError::OutOfRange {
            field: "line_size",
            value: config.line_size,
            reason: "a line must hold at least one 32-bit word",
        });
    }
    if line_bits > page_bits {
        return Err(ConfigError::OutOfRange {
            field: "line_size",
            value: config.line_size,
            reason: "must not exceed page_size",
        });
    }
    if page_bits > cache_bits {
        return Err(ConfigError::OutOfRange {
            field: "page_size",
            value: config.page_size,
            reason: "must not exceed cache_size",
        });
    }
    let line_count_bits = cache_bits - line_bits;
    if config.assoc_log2 > line_count_bits {
        return Err(ConfigError::OutOfRange {
            field: "assoc_log2",
            value: config.assoc_log2 as u64,
            reason: "associativity exceeds the number of lines",
        });
    }
    if config.pa_width > 63 {
        return Err(ConfigError::OutOfRange {
            field: "pa_width",
            value: config.pa_width as u64,
            reason: "at most 63 bits",
        });
    }
    if config.va_width > config.pa_width {
        return Err(ConfigError::OutOfRange {
            field: "va_width",
            value: config.va_width as u64,
            reason: "must not exceed pa_width",
        });
    }
    if config.synonym_limit == 0 {
        return Err(ConfigError::OutOfRange {
            field: "synonym_limit",
            value: 0,
            reason: "must be at least 1",
        });
    }

    let set_bits = line_count_bits - config.assoc_log2;
    let index_top = line_bits + set_bits; // one past the highest set-index bit
    if config.va_width < index_top.max(page_bits) {
        return Err(ConfigError::OutOfRange {
            field: "va_width",
            value: config.va_width as u64,
            reason: "too narrow for the set index and page offset",
        });
    }
    if config.pa_width <= page_bits {
        return Err(ConfigError::OutOfRange {
            field: "pa_width",
            value: config.pa_width as u64,
            reason: "must exceed the page offset width",
        });
    }

    let synonym_bits = index_top.saturating_sub(page_bits);
    let set_index = if set_bits == 0 {
        // fully associative: an empty range just above the line offset
        BitRange {
            high: line_bits,
            low: line_bits + 1,
        }
    } else {
        BitRange {
            high: index_top - 1,
            low: line_bits,
        }
    };
    let rlut_index = if page_bits == line_bits {
        BitRange {
            high: line_bits,
            low: line_bits + 1,
        }
    } else {
        BitRange {
            high: page_bits - 1,
            low: line_bits,
        }
    };

    Ok(Geometry {
        config: *config,
        line_bits,
        page_bits,
        set_index,
        rlut_index,
        rlut_tag: BitRange {
            high: config.pa_width - 1,
            low: page_bits,
        },
        synonym_bits,
        rlut_ways: 1usize << synonym_bits,
        rlut_sets: 1usize << (page_bits - line_bits),
        ways: 1usize << config.assoc_log2,
        sets: 1usize << set_bits,
        synonym_problem: synonym_bits > 0,
    })
}

impl Geometry {
    pub fn set_index_bits(&self) -> u32 {
        self.set_index.high + 1 - self.set_index.low
    }

    pub fn va_mask(&self) -> u64 {
        mask(self.config.va_width)
    }

    pub fn pa_mask(&self) -> u64 {
        mask(self.config.pa_width)
    }

    pub fn virt(&self, raw: u64) -> VirtAddr {
        VirtAddr(raw & self.va_mask())
    }

    pub fn phys(&self, raw: u64) -> PhysAddr {
        PhysAddr(raw & self.pa_mask())
    }

    pub fn line_count(&self) -> usize {
        self.sets * self.ways
    }

    /// Bits of a virtual address above the set index.
    pub fn vtag(&self, v: VirtAddr) -> u64 {
        (v.0 & self.va_mask()) >> (self.line_bits + self.set_index_bits())
    }

    /// Virtual address of the line at `index` carrying `vtag`.
    pub fn virt_line_addr(&self, index: usize, vtag: u64) -> VirtAddr {
        let raw =
            (vtag << (self.line_bits + self.set_index_bits())) | ((index as u64) << self.line_bits);
        self.virt(raw)
    }

    /// The virtual set-index bits above the page offset (`V[page_bits+k-1 : page_bits]`).
    pub fn synonym_field(&self, v: VirtAddr) -> u64 {
        (v.0 >> self.page_bits) & mask(self.synonym_bits)
    }

    /// Virtual page number of `v`.
    pub fn vpn(&self, v: VirtAddr) -> u64 {
        (v.0 & self.va_mask()) >> self.page_bits
    }

    /// Physical page number of `p`; this is the RLUT tag.
    pub fn ppn(&self, p: PhysAddr) -> u64 {
        (p.0 & self.pa_mask()) >> self.page_bits
    }

    pub fn line_base_phys(&self, p: PhysAddr) -> PhysAddr {
        PhysAddr(p.0 & self.pa_mask() & !mask(self.line_bits))
    }

    pub fn line_base_virt(&self, v: VirtAddr) -> VirtAddr {
        VirtAddr(v.0 & self.va_mask() & !mask(self.line_bits))
    }

    pub fn line_offset(&self, addr: u64) -> usize {
        (addr & mask(self.line_bits)) as usize
    }
}

/// VIVT set index of `v`.
pub fn vivt_index(v: VirtAddr, g: &Geometry) -> usize {
    if g.sets == 1 {
        return 0;
    }
    g.set_index.extract(v.0) as usize
}

/// RLUT set index of `p`: the line number within its page.
pub fn rlut_index(p: PhysAddr, g: &Geometry) -> usize {
    if g.rlut_sets == 1 {
        return 0;
    }
    g.rlut_index.extract(p.0) as usize
}

pub fn intra_page_offset(addr: u64, g: &Geometry) -> u64 {
    addr & mask(g.page_bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_instance() -> Geometry {
        derive_geometry(&CacheConfig::default()).unwrap()
    }

    #[test]
    fn default_direct_mapped_layout() {
        let g = default_instance();
        assert_eq!(g.set_index, BitRange { high: 14, low: 6 });
        assert_eq!(g.rlut_index, BitRange { high: 11, low: 6 });
        assert_eq!(g.rlut_tag, BitRange { high: 35, low: 12 });
        assert_eq!(g.synonym_bits, 3);
        assert_eq!((g.rlut_ways, g.rlut_sets), (8, 64));
        assert!(g.synonym_problem);
        assert_eq!(g.line_count(), 512);
    }

    #[test]
    fn four_way_layout() {
        let g = derive_geometry(&CacheConfig {
            assoc_log2: 2,
            ..CacheConfig::default()
        })
        .unwrap();
        assert_eq!(g.set_index, BitRange { high: 12, low: 6 });
        assert_eq!(g.synonym_bits, 1);
        assert_eq!((g.rlut_ways, g.rlut_sets), (2, 64));
    }

    #[test]
    fn page_sized_cache_has_no_synonyms() {
        let g = derive_geometry(&CacheConfig {
            cache_size: 4096,
            ..CacheConfig::default()
        })
        .unwrap();
        assert_eq!(g.synonym_bits, 0);
        assert!(!g.synonym_problem);
        // associativity 8 on the 32 KB instance removes the problem as well
        let g = derive_geometry(&CacheConfig {
            assoc_log2: 3,
            ..CacheConfig::default()
        })
        .unwrap();
        assert!(!g.synonym_problem);
    }

    #[test]
    fn rlut_capacity_matches_line_count_over_ways() {
        for cache_kb in [4u64, 8, 16, 32, 64] {
            for r in 0..3 {
                let cfg = CacheConfig {
                    cache_size: cache_kb * 1024,
                    assoc_log2: r,
                    ..CacheConfig::default()
                };
                let g = derive_geometry(&cfg).unwrap();
                let pages_per_way = cfg.cache_size / (cfg.page_size << r);
                let expect = pages_per_way.max(1) * (cfg.page_size / cfg.line_size);
                assert_eq!(
                    (g.rlut_ways * g.rlut_sets) as u64,
                    expect,
                    "{cache_kb}KB r={r}"
                );
                assert_eq!(g.synonym_problem, cfg.cache_size >> r > cfg.page_size);
            }
        }
    }

    #[test]
    fn rejects_bad_configs_naming_the_field() {
        let bad = |cfg: CacheConfig| derive_geometry(&cfg).unwrap_err();
        let d = CacheConfig::default();
        assert!(matches!(
            bad(CacheConfig {
                cache_size: 3000,
                ..d
            }),
            ConfigError::NotPowerOfTwo {
                field: "cache_size",
                ..
            }
        ));
        assert!(matches!(
            bad(CacheConfig { line_size: 48, ..d }),
            ConfigError::NotPowerOfTwo {
                field: "line_size",
                ..
            }
        ));
        assert!(matches!(
            bad(CacheConfig { page_size: 0, ..d }),
            ConfigError::NotPowerOfTwo {
                field: "page_size",
                ..
            }
        ));
        assert!(matches!(
            bad(CacheConfig {
                assoc_log2: 10,
                ..d
            }),
            ConfigError::OutOfRange {
                field: "assoc_log2",
                ..
            }
        ));
        assert!(matches!(
            bad(CacheConfig { va_width: 40, ..d }),
            ConfigError::OutOfRange {
                field: "va_width",
                ..
            }
        ));
        assert!(matches!(
            bad(CacheConfig {
                synonym_limit: 0,
                ..d
            }),
            ConfigError::OutOfRange {
                field: "synonym_limit",
                ..
            }
        ));
        assert!(matches!(
            bad(CacheConfig {
                page_size: 64 * 1024,
                ..d
            }),
            ConfigError::OutOfRange {
                field: "page_size",
                ..
            }
        ));
    }

    #[test]
    fn index_extraction() {
        let g = default_instance();
        assert_eq!(vivt_index(VirtAddr(0), &g), 0);
        assert_eq!(vivt_index(VirtAddr(0x1FC0), &g), 127);
        assert_eq!(vivt_index(VirtAddr(0xFFFF_FFC0), &g), 511);
        assert_eq!(rlut_index(PhysAddr(0x0_0000_0FC0), &g), 63);
        assert_eq!(rlut_index(PhysAddr(0), &g), 0);
        assert_eq!(rlut_index(PhysAddr(0xF_FFFF_F03F), &g), 0);
    }

    #[test]
    fn page_offsets() {
        let g = default_instance();
        assert_eq!(intra_page_offset(0x1234_5678, &g), 0x678);
        assert_eq!(intra_page_offset(0, &g), 0);
        assert_eq!(intra_page_offset(0xFFFF_FFFF, &g), 0xFFF);
    }

    #[test]
    fn line_address_round_trip() {
        let g = default_instance();
        let v = VirtAddr(0xDEAD_BEC0);
        let back = g.virt_line_addr(vivt_index(v, &g), g.vtag(v));
        assert_eq!(back, g.line_base_virt(v));
    }

    #[test]
    fn index_is_determined_by_synonym_bits_and_physical_line() {
        // toy geometry: 256 B cache, 16 B lines, 64 B pages, direct mapped
        let cfg = CacheConfig {
            cache_size: 256,
            line_size: 16,
            assoc_log2: 0,
            page_size: 64,
            va_width: 10,
            pa_width: 12,
            synonym_limit: 1,
        };
        let g = derive_geometry(&cfg).unwrap();
        assert_eq!(g.synonym_bits, 2);
        // every V, paired with every physical page it could map to
        for v in 0..(1u64 << 10) {
            for ppn in 0..(1u64 << 6) {
                let p = (ppn << 6) | intra_page_offset(v, &g);
                assert_eq!(intra_page_offset(v, &g), intra_page_offset(p, &g));
                let rebuilt =
                    ((g.synonym_field(VirtAddr(v)) as usize) << 2) | rlut_index(PhysAddr(p), &g);
                assert_eq!(vivt_index(VirtAddr(v), &g), rebuilt);
            }
        }
    }
}
