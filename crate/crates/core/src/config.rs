//! `key = value` configuration files.
//!
//! One pair per line; `#` starts a comment; blank lines are ignored;
//! a repeated key is an error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hnsw::IndexConfig;
use crate::reorder::ScoreMode;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!("config line {}: expected key = value", i + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::invalid(format!("config line {}: empty key", i + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::invalid(format!(
                    "config line {}: duplicate key {k}",
                    i + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parsed value of `key`, if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::invalid(format!("config key {key}: cannot parse {v:?}"))),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Errors on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(Error::invalid(format!("unknown config key {k}"))),
            None => Ok(()),
        }
    }
}

/// Keys understood by [`apply_index_config`].
pub const INDEX_KEYS: &[&str] = &[
    "dim",
    "m",
    "m_max",
    "ef_construction",
    "bits",
    "hash_seed",
    "level_seed",
    "heat_decay",
    "lambda",
    "window",
    "score_mode",
    "reorder_every",
    "memtable_bytes",
    "size_ratio",
    "l0_run_limit",
    "level1_bytes",
    "max_levels",
    "run_max_entries",
    "bloom",
    "auto_compact",
];

fn mode_name(m: ScoreMode) -> &'static str {
    match m {
        ScoreMode::Heat => "heat",
        ScoreMode::Literal => "literal",
    }
}

pub fn parse_score_mode(s: &str) -> Result<ScoreMode> {
    match s {
        "heat" => Ok(ScoreMode::Heat),
        "literal" => Ok(ScoreMode::Literal),
        other => Err(Error::invalid(format!("unknown score mode {other:?}"))),
    }
}

/// Overrides fields of `cfg` with whatever index keys `kv` sets.
pub fn apply_index_config(kv: &KvConfig, cfg: &mut IndexConfig) -> Result<()> {
    macro_rules! set {
        ($key:literal, $field:expr) => {
            if let Some(v) = kv.get($key)? {
                $field = v;
            }
        };
    }
    set!("dim", cfg.dim);
    set!("m", cfg.hnsw.m);
    set!("m_max", cfg.hnsw.m_max);
    set!("ef_construction", cfg.hnsw.ef_construction);
    set!("bits", cfg.bits);
    set!("hash_seed", cfg.hash_seed);
    set!("level_seed", cfg.level_seed);
    set!("heat_decay", cfg.heat_decay);
    set!("lambda", cfg.score.lambda);
    set!("window", cfg.score.window);
    set!("reorder_every", cfg.reorder_every);
    set!("memtable_bytes", cfg.lsm.memtable_bytes);
    set!("size_ratio", cfg.lsm.size_ratio);
    set!("l0_run_limit", cfg.lsm.l0_run_limit);
    set!("level1_bytes", cfg.lsm.level1_bytes);
    set!("max_levels", cfg.lsm.max_levels);
    set!("run_max_entries", cfg.lsm.run_max_entries);
    set!("bloom", cfg.lsm.bloom);
    set!("auto_compact", cfg.lsm.auto_compact);
    if let Some(m) = kv.get_str("score_mode") {
        cfg.score.mode = parse_score_mode(m)?;
    }
    Ok(())
}

pub fn index_config_from_kv(kv: &KvConfig) -> Result<IndexConfig> {
    let dim = kv
        .get("dim")?
        .ok_or_else(|| Error::invalid("config lacks dim"))?;
    let mut cfg = IndexConfig::new(dim);
    apply_index_config(kv, &mut cfg)?;
    Ok(cfg)
}

pub fn index_config_to_kv(cfg: &IndexConfig) -> String {
    let mut s = String::new();
    let mut put = |k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(s, "{k} = {v}");
    };
    put("dim", &cfg.dim);
    put("m", &cfg.hnsw.m);
    put("m_max", &cfg.hnsw.m_max);
    put("ef_construction", &cfg.hnsw.ef_construction);
    put("bits", &cfg.bits);
    put("hash_seed", &cfg.hash_seed);
    put("level_seed", &cfg.level_seed);
    put("heat_decay", &cfg.heat_decay);
    put("lambda", &cfg.score.lambda);
    put("window", &cfg.score.window);
    put("score_mode", &mode_name(cfg.score.mode));
    put("reorder_every", &cfg.reorder_every);
    put("memtable_bytes", &cfg.lsm.memtable_bytes);
    put("size_ratio", &cfg.lsm.size_ratio);
    put("l0_run_limit", &cfg.lsm.l0_run_limit);
    put("level1_bytes", &cfg.lsm.level1_bytes);
    put("max_levels", &cfg.lsm.max_levels);
    put("run_max_entries", &cfg.lsm.run_max_entries);
    put("bloom", &cfg.lsm.bloom);
    put("auto_compact", &cfg.lsm.auto_compact);
    s
}
