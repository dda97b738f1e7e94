//! Run statistics and their text/CSV reports.

use std::fmt::Write as _;

use crate::coherence::CoreCounters;

use super::SimError;

macro_rules! counter_fields {
    ($($name:ident),* $(,)?) => {
        const COUNTER_NAMES: &[&str] = &[$(stringify!($name)),*];

        fn counter_values(c: &CoreCounters) -> Vec<u64> {
            vec![$(c.$name),*]
        }

        fn set_counter(c: &mut CoreCounters, name: &str, value: u64) -> bool {
            match name {
                $(stringify!($name) => { c.$name = value; true })*
                _ => false,
            }
        }
    };
}

counter_fields!(
    read_hits,
    read_misses,
    write_hits,
    write_misses,
    synonym_evictions,
    rlut_displacement_evictions,
    snoop_invalidations_applied,
    stale_invalidation_noops,
    flushes,
    translation_faults,
    hit_cycles,
    miss_cycles,
    snoop_cycles,
    fault_cycles,
    total_cycles,
    rlut_lookups,
    rlut_lookup_cycles,
    rlut_inserts,
    rlut_insert_cycles,
    max_queue_depth,
);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub cores: Vec<CoreCounters>,
    pub events: u64,
    pub max_invalidate_queue_depth: u64,
}

impl SimStats {
    pub fn total(&self) -> CoreCounters {
        let mut acc = vec![0u64; COUNTER_NAMES.len()];
        for c in &self.cores {
            for ((slot, v), name) in acc.iter_mut().zip(counter_values(c)).zip(COUNTER_NAMES) {
                *slot = if *name == "max_queue_depth" {
                    (*slot).max(v)
                } else {
                    *slot + v
                };
            }
        }
        let mut t = CoreCounters::default();
        for (name, v) in COUNTER_NAMES.iter().zip(acc) {
            set_counter(&mut t, name, v);
        }
        t
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("core,");
        out.push_str(&COUNTER_NAMES.join(","));
        out.push_str(",hit_ratio\n");
        let row = |out: &mut String, label: &str, c: &CoreCounters| {
            out.push_str(label);
            for v in counter_values(c) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{:.6}", hit_ratio(c));
        };
        for (i, c) in self.cores.iter().enumerate() {
            row(&mut out, &i.to_string(), c);
        }
        row(&mut out, "all", &self.total());
        out
    }

    /// Rebuilds per-core counters from [`SimStats::to_csv`] output. The
    /// event count is not part of the report and comes back as zero.
    pub fn from_csv(text: &str) -> Result<SimStats, SimError> {
        let err = |line: usize, msg: String| SimError::Parse {
            what: "csv",
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let header: Vec<&str> = match lines.next() {
            Some((_, h)) => h.split(',').collect(),
            None => return Err(err(1, "empty report".into())),
        };
        let mut stats = SimStats::default();
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(err(
                    i + 1,
                    format!("{} cells, header has {}", cells.len(), header.len()),
                ));
            }
            if cells[0] == "all" {
                continue;
            }
            let mut c = CoreCounters::default();
            for (name, cell) in header.iter().zip(&cells).skip(1) {
                if *name == "hit_ratio" {
                    continue;
                }
                let v = cell
                    .parse()
                    .map_err(|_| err(i + 1, format!("bad number `{cell}`")))?;
                if !set_counter(&mut c, name, v) {
                    return Err(err(1, format!("unknown column `{name}`")));
                }
            }
            stats.cores.push(c);
        }
        stats.max_invalidate_queue_depth = stats
            .cores
            .iter()
            .map(|c| c.max_queue_depth)
            .max()
            .unwrap_or(0);
        Ok(stats)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "events: {}", self.events);
        let _ = writeln!(
            out,
            "max invalidate queue depth: {}",
            self.max_invalidate_queue_depth
        );
        let mut section = |label: String, c: &CoreCounters| {
            let _ = writeln!(out, "{label}");
            for (name, v) in COUNTER_NAMES.iter().zip(counter_values(c)) {
                let _ = writeln!(out, "  {name:<28} {v}");
            }
            let _ = writeln!(out, "  {:<28} {:.4}", "hit_ratio", hit_ratio(c));
        };
        for (i, c) in self.cores.iter().enumerate() {
            section(format!("core {i}"), c);
        }
        if self.cores.len() > 1 {
            section("all cores".into(), &self.total());
        }
        out
    }
}

pub fn hit_ratio(c: &CoreCounters) -> f64 {
    match c.accesses() {
        0 => 0.0,
        n => c.hits() as f64 / n as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_stats_report_zero_rows() {
        let s = SimStats {
            cores: vec![CoreCounters::default()],
            ..SimStats::default()
        };
        let csv = s.to_csv();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].starts_with("0,0,0,"));
        assert!(rows[1]
            .split(',')
            .skip(1)
            .all(|c| c.parse::<f64>().unwrap() == 0.0));
        assert!(rows[2].starts_with("all,"));
    }

    #[test]
    fn hit_ratio_column_matches_counters() {
        let c = CoreCounters {
            read_hits: 3,
            write_hits: 1,
            read_misses: 2,
            write_misses: 2,
            ..CoreCounters::default()
        };
        let s = SimStats {
            cores: vec![c],
            ..SimStats::default()
        };
        let csv = s.to_csv();
        let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        let col = header.iter().position(|h| *h == "hit_ratio").unwrap();
        assert_eq!(row[col], "0.500000");
        assert!(s.to_text().contains("hit_ratio"));
    }

    fn counters() -> impl Strategy<Value = CoreCounters> {
        proptest::collection::vec(0u64..1 << 40, COUNTER_NAMES.len()).prop_map(|vals| {
            let mut c = CoreCounters::default();
            for (n, v) in COUNTER_NAMES.iter().zip(vals) {
                set_counter(&mut c, n, v);
            }
            c
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(cores in proptest::collection::vec(counters(), 1..5)) {
            let max = cores.iter().map(|c| c.max_queue_depth).max().unwrap();
            let s = SimStats { cores, events: 0, max_invalidate_queue_depth: max };
            prop_assert_eq!(SimStats::from_csv(&s.to_csv()).unwrap(), s);
        }
    }
}
