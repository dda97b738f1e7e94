//! Seeded random trace generator.
//!
//! Each context gets a set of private pages, each backed by its own physical
//! page. Synonym groups add virtual pages that share one physical page; the
//! members of a group differ in the virtual set-index bits above the page
//! offset, so they land in different cache sets and compete for RLUT slots.
//! One extra member of each group lives in another context, which gives
//! cross-context sharing for the coherence machinery.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;

use crate::addr::Geometry;
use crate::mmu::{ContextId, PageTable};

use super::trace::TraceEvent;
use super::SimError;

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub seed: u64,
    pub cores: usize,
    pub events: usize,
    pub synonym_page_groups: usize,
    pub write_ratio: f64,
    pub context_switch_ratio: f64,
    pub external_invalidate_ratio: f64,
    pub contexts: u32,
    pub private_pages: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            seed: 0,
            cores: 1,
            events: 10_000,
            synonym_page_groups: 4,
            write_ratio: 0.3,
            context_switch_ratio: 0.001,
            external_invalidate_ratio: 0.002,
            contexts: 4,
            private_pages: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedTrace {
    pub events: Vec<TraceEvent>,
    pub page_table: PageTable,
}

fn check_ratio(name: &'static str, x: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(SimError::Param(format!(
            "{name} must lie in [0, 1], got {x}"
        )))
    }
}

pub fn generate_trace(params: &GenParams, g: &Geometry) -> Result<GeneratedTrace, SimError> {
    check_ratio("write_ratio", params.write_ratio)?;
    check_ratio("context_switch_ratio", params.context_switch_ratio)?;
    check_ratio(
        "external_invalidate_ratio",
        params.external_invalidate_ratio,
    )?;
    check_ratio(
        "context_switch_ratio + external_invalidate_ratio",
        params.context_switch_ratio + params.external_invalidate_ratio,
    )?;
    if params.cores == 0 || params.contexts == 0 {
        return Err(SimError::Param(
            "cores and contexts must be at least 1".into(),
        ));
    }
    if params.private_pages == 0 && params.synonym_page_groups == 0 {
        return Err(SimError::Param(
            "nothing to access: no private pages and no synonym groups".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let vpn_bits = g.config.va_width - g.page_bits;
    let ppn_bits = g.config.pa_width - g.page_bits;
    let k = g.synonym_bits.min(vpn_bits);
    let group_size = (1usize << k).clamp(2, 8);
    let contexts = params.contexts;
    let cross = usize::from(contexts > 1);

    let physical_pages =
        contexts as u64 * params.private_pages as u64 + params.synonym_page_groups as u64;
    if physical_pages >= 1u64 << ppn_bits.min(62)
        || (params.private_pages + group_size + 1) as u64 >= 1u64 << vpn_bits
    {
        return Err(SimError::Param(
            "address space too small for the requested page counts".into(),
        ));
    }
    let ppn_base = rng.gen_range(0..(1u64 << ppn_bits.min(62)) - physical_pages);
    let mut next_ppn = ppn_base;

    let mut pt = PageTable::new(false);
    let mut pages: Vec<Vec<u64>> = vec![Vec::new(); contexts as usize];
    let mut used: FxHashSet<(ContextId, u64)> = FxHashSet::default();
    let mut fresh_vpn = |rng: &mut ChaCha8Rng, ctx: ContextId, field: Option<u64>| loop {
        let raw = rng.gen_range(0..1u64 << vpn_bits);
        let vpn = match field {
            Some(f) => (raw & !((1u64 << k) - 1)) | f,
            None => raw,
        };
        if used.insert((ctx, vpn)) {
            return vpn;
        }
    };

    for ctx in 0..contexts {
        for _ in 0..params.private_pages {
            let vpn = fresh_vpn(&mut rng, ctx, None);
            pt.map(ctx, vpn, next_ppn);
            pages[ctx as usize].push(vpn);
            next_ppn += 1;
        }
    }
    for _ in 0..params.synonym_page_groups {
        let home = rng.gen_range(0..contexts);
        let mut fields: Vec<u64> = (0..1u64 << k).collect();
        fields.shuffle(&mut rng);
        for m in 0..group_size + cross {
            let ctx = if m < group_size {
                home
            } else {
                (home + 1) % contexts
            };
            let field = if k > 0 && m < group_size {
                Some(fields[m % fields.len()])
            } else {
                None
            };
            let vpn = fresh_vpn(&mut rng, ctx, field);
            pt.map(ctx, vpn, next_ppn);
            pages[ctx as usize].push(vpn);
        }
        next_ppn += 1;
    }

    let lines_per_page = (g.config.page_size / g.config.line_size) as i64;
    let words_per_line = g.config.line_size / 4;
    let mut core_ctx: Vec<ContextId> = vec![0; params.cores];
    let mut last: Vec<Option<(u64, i64)>> = vec![None; params.cores];
    let mut events = Vec::with_capacity(params.events);

    while events.len() < params.events {
        let core = rng.gen_range(0..params.cores);
        let roll: f64 = rng.gen();
        if roll < params.external_invalidate_ratio {
            let ppn = rng.gen_range(ppn_base..next_ppn.max(ppn_base + 1));
            let line = rng.gen_range(0..lines_per_page) as u64;
            events.push(TraceEvent::ExternalInvalidate {
                paddr: (ppn << g.page_bits) | (line << g.line_bits),
            });
            continue;
        }
        if roll < params.external_invalidate_ratio + params.context_switch_ratio {
            let new_ctx = if contexts > 1 {
                (core_ctx[core] + rng.gen_range(1..contexts)) % contexts
            } else {
                0
            };
            core_ctx[core] = new_ctx;
            last[core] = None;
            events.push(TraceEvent::ContextSwitch { core, new_ctx });
            continue;
        }
        let ctx = core_ctx[core];
        let list = &pages[ctx as usize];
        if list.is_empty() {
            // this context owns no pages; move on
            core_ctx[core] = (ctx + 1) % contexts;
            continue;
        }
        let (vpn, line) = match last[core] {
            Some((vpn, line)) if rng.gen_bool(0.75) => (
                vpn,
                (line + rng.gen_range(-2..=2)).clamp(0, lines_per_page - 1),
            ),
            _ => (
                *list.choose(&mut rng).unwrap(),
                rng.gen_range(0..lines_per_page),
            ),
        };
        last[core] = Some((vpn, line));
        let word = rng.gen_range(0..words_per_line);
        let vaddr = (vpn << g.page_bits) | ((line as u64) << g.line_bits) | (word * 4);
        events.push(if rng.gen_bool(params.write_ratio) {
            TraceEvent::Write {
                core,
                ctx,
                vaddr,
                data: rng.gen(),
            }
        } else {
            TraceEvent::Read { core, ctx, vaddr }
        });
    }
    Ok(GeneratedTrace {
        events,
        page_table: pt,
    })
}
