//! `key = value` configuration files.

use std::fmt;
use std::path::PathBuf;

use crate::addr::CacheConfig;
use crate::mmu::Latencies;
use crate::text::{content, parse_hex_or_dec};

use super::SimError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub cache: CacheConfig,
    pub cores: usize,
    pub latencies: Latencies,
    /// Page-table file, relative to the config file's directory.
    pub page_table: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cache: CacheConfig::default(),
            cores: 1,
            latencies: Latencies::default(),
            page_table: None,
        }
    }
}

/// Integer with an optional `K`/`KB`/`M`/`MB` suffix, in decimal or `0x` hex.
fn parse_size(s: &str) -> Option<u64> {
    let upper = s.to_ascii_uppercase();
    let (digits, scale) =
        if let Some(d) = upper.strip_suffix("KB").or_else(|| upper.strip_suffix('K')) {
            (d.to_string(), 1024)
        } else if let Some(d) = upper.strip_suffix("MB").or_else(|| upper.strip_suffix('M')) {
            (d.to_string(), 1024 * 1024)
        } else {
            (s.to_string(), 1)
        };
    let digits = digits.trim();
    let n = if scale == 1 {
        parse_hex_or_dec(digits)?
    } else {
        digits.parse::<u64>().ok()?
    };
    n.checked_mul(scale)
}

pub fn parse_config(text: &str) -> Result<SimConfig, SimError> {
    let mut cfg = SimConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = content(raw);
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| SimError::Parse {
            what: "config",
            line,
            msg,
        };
        let (key, value) = body
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(format!("expected `key = value`, got `{body}`")))?;
        if key == "page_table" {
            cfg.page_table = Some(PathBuf::from(value));
            continue;
        }
        let n = parse_size(value).ok_or_else(|| err(format!("bad value `{value}` for {key}")))?;
        let small = |n: u64| u32::try_from(n).map_err(|_| err(format!("{key} = {n} is too large")));
        match key {
            "cache_size" => cfg.cache.cache_size = n,
            "line_size" => cfg.cache.line_size = n,
            "assoc_log2" => cfg.cache.assoc_log2 = small(n)?,
            "page_size" => cfg.cache.page_size = n,
            "va_width" => cfg.cache.va_width = small(n)?,
            "pa_width" => cfg.cache.pa_width = small(n)?,
            "synonym_limit" => cfg.cache.synonym_limit = n as usize,
            "cores" => cfg.cores = n as usize,
            "translate_latency" => cfg.latencies.translate = n,
            "fetch_latency" => cfg.latencies.fetch = n,
            _ => return Err(err(format!("unknown key `{key}`"))),
        }
    }
    if cfg.cores == 0 {
        return Err(SimError::Parse {
            what: "config",
            line: 0,
            msg: "cores must be at least 1".into(),
        });
    }
    cfg.cache.geometry()?;
    Ok(cfg)
}

impl fmt::Display for SimConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.cache;
        writeln!(f, "cache_size = {}", c.cache_size)?;
        writeln!(f, "line_size = {}", c.line_size)?;
        writeln!(f, "assoc_log2 = {}", c.assoc_log2)?;
        writeln!(f, "page_size = {}", c.page_size)?;
        writeln!(f, "va_width = {}", c.va_width)?;
        writeln!(f, "pa_width = {}", c.pa_width)?;
        writeln!(f, "synonym_limit = {}", c.synonym_limit)?;
        writeln!(f, "cores = {}", self.cores)?;
        writeln!(f, "translate_latency = {}", self.latencies.translate)?;
        writeln!(f, "fetch_latency = {}", self.latencies.fetch)?;
        if let Some(p) = &self.page_table {
            writeln!(f, "page_table = {}", p.display())?;
        }
        Ok(())
    }
}
