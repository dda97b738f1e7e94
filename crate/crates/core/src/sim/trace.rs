//! Trace events and the line-oriented trace file format:
//!
//! ```text
//! R <core> <ctx> <vaddr-hex>
//! W <core> <ctx> <vaddr-hex> <word-hex>
//! X <core> <ctx>
//! I <paddr-hex>
//! ```

use std::fmt::Write as _;

use crate::mmu::ContextId;
use crate::text::{content, parse_hex, parse_hex_or_dec};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Read {
        core: usize,
        ctx: ContextId,
        vaddr: u64,
    },
    Write {
        core: usize,
        ctx: ContextId,
        vaddr: u64,
        data: u32,
    },
    ContextSwitch {
        core: usize,
        new_ctx: ContextId,
    },
    ExternalInvalidate {
        paddr: u64,
    },
}

impl TraceEvent {
    pub fn core(&self) -> Option<usize> {
        match *self {
            TraceEvent::Read { core, .. }
            | TraceEvent::Write { core, .. }
            | TraceEvent::ContextSwitch { core, .. } => Some(core),
            TraceEvent::ExternalInvalidate { .. } => None,
        }
    }

    fn problem(&self, core_count: usize) -> Option<String> {
        if let Some(c) = self.core() {
            if c >= core_count {
                return Some(format!("core {c} out of range (system has {core_count})"));
            }
        }
        match *self {
            TraceEvent::Read { vaddr, .. } | TraceEvent::Write { vaddr, .. } if vaddr % 4 != 0 => {
                Some(format!("address {vaddr:#x} is not word aligned"))
            }
            TraceEvent::ExternalInvalidate { paddr } if paddr % 4 != 0 => {
                Some(format!("address {paddr:#x} is not word aligned"))
            }
            _ => None,
        }
    }
}

/// Checks core indices and alignment; errors name the event index.
pub fn validate_events(events: &[TraceEvent], core_count: usize) -> Result<(), SimError> {
    for (i, e) in events.iter().enumerate() {
        if let Some(msg) = e.problem(core_count) {
            return Err(SimError::InvalidEvent { index: i, msg });
        }
    }
    Ok(())
}

pub fn parse_trace(text: &str, core_count: usize) -> Result<Vec<TraceEvent>, SimError> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = content(raw);
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| SimError::Parse {
            what: "trace",
            line,
            msg,
        };
        let f: Vec<&str> = body.split_whitespace().collect();
        let core = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| err(format!("bad core `{s}`")))
        };
        let ctx = |s: &str| {
            parse_hex_or_dec(s)
                .and_then(|c| ContextId::try_from(c).ok())
                .ok_or_else(|| err(format!("bad context `{s}`")))
        };
        let hex = |s: &str| parse_hex(s).ok_or_else(|| err(format!("bad hex value `{s}`")));
        let event = match f.as_slice() {
            ["R", c, x, v] => TraceEvent::Read {
                core: core(c)?,
                ctx: ctx(x)?,
                vaddr: hex(v)?,
            },
            ["W", c, x, v, d] => TraceEvent::Write {
                core: core(c)?,
                ctx: ctx(x)?,
                vaddr: hex(v)?,
                data: u32::try_from(hex(d)?)
                    .map_err(|_| err(format!("data `{d}` exceeds 32 bits")))?,
            },
            ["X", c, x] => TraceEvent::ContextSwitch {
                core: core(c)?,
                new_ctx: ctx(x)?,
            },
            ["I", p] => TraceEvent::ExternalInvalidate { paddr: hex(p)? },
            _ => return Err(err(format!("unrecognised event `{body}`"))),
        };
        if let Some(msg) = event.problem(core_count) {
            return Err(err(msg));
        }
        events.push(event);
    }
    Ok(events)
}

pub fn format_trace(events: &[TraceEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 24);
    for e in events {
        let _ = match *e {
            TraceEvent::Read { core, ctx, vaddr } => writeln!(out, "R {core} {ctx} {vaddr:#x}"),
            TraceEvent::Write {
                core,
                ctx,
                vaddr,
                data,
            } => writeln!(out, "W {core} {ctx} {vaddr:#x} {data:#x}"),
            TraceEvent::ContextSwitch { core, new_ctx } => writeln!(out, "X {core} {new_ctx}"),
            TraceEvent::ExternalInvalidate { paddr } => writeln!(out, "I {paddr:#x}"),
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_every_event_kind() {
        let text =
            "# header\nR 0 0 0x1000\nW 1 0x2 2004 deadbeef\n\nX 1 3 # switch\nI 0x9_0000_0040\n";
        let ev = parse_trace(text, 2).unwrap();
        assert_eq!(
            ev,
            vec![
                TraceEvent::Read {
                    core: 0,
                    ctx: 0,
                    vaddr: 0x1000
                },
                TraceEvent::Write {
                    core: 1,
                    ctx: 2,
                    vaddr: 0x2004,
                    data: 0xdead_beef
                },
                TraceEvent::ContextSwitch {
                    core: 1,
                    new_ctx: 3
                },
                TraceEvent::ExternalInvalidate {
                    paddr: 0x9_0000_0040
                },
            ]
        );
    }

    #[test]
    fn rejects_with_line_numbers() {
        let line_of = |text: &str| match parse_trace(text, 2) {
            Err(SimError::Parse { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(line_of("R 0 0 0x10\nQ 1\n"), 2);
        assert_eq!(line_of("R 0 0 0x11\n"), 1);
        assert_eq!(line_of("\n\nR 2 0 0x10\n"), 3);
        assert_eq!(line_of("W 0 0 0x10 0x1_0000_0000\n"), 1);
        assert_eq!(line_of("R 0 0\n"), 1);
    }

    #[test]
    fn validation_names_event_index() {
        let ev = [
            TraceEvent::ExternalInvalidate { paddr: 0x40 },
            TraceEvent::ContextSwitch {
                core: 5,
                new_ctx: 0,
            },
        ];
        assert!(matches!(
            validate_events(&ev, 2),
            Err(SimError::InvalidEvent { index: 1, .. })
        ));
        assert!(validate_events(&ev[..1], 1).is_ok());
    }

    fn event() -> impl Strategy<Value = TraceEvent> {
        let addr = (0u64..1 << 32).prop_map(|a| a & !3);
        prop_oneof![
            (0usize..4, 0u32..8, addr.clone()).prop_map(|(core, ctx, vaddr)| TraceEvent::Read {
                core,
                ctx,
                vaddr
            }),
            (0usize..4, 0u32..8, addr.clone(), any::<u32>()).prop_map(
                |(core, ctx, vaddr, data)| TraceEvent::Write {
                    core,
                    ctx,
                    vaddr,
                    data
                }
            ),
            (0usize..4, 0u32..8)
                .prop_map(|(core, new_ctx)| TraceEvent::ContextSwitch { core, new_ctx }),
            addr.prop_map(|paddr| TraceEvent::ExternalInvalidate { paddr }),
        ]
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(events in proptest::collection::vec(event(), 0..64)) {
            prop_assert_eq!(parse_trace(&format_trace(&events), 4).unwrap(), events);
        }
    }
}
