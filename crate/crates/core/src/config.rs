//! Flat `key = value` system configuration.
//!
//! ```text
//! # two engines with 256-row tables
//! n = 2
//! mtSize = 256
//! mode = heapsafe-nb
//! cyclesBlockingValidateStall = 4
//! ```

use std::path::Path;

use thiserror::Error;

use crate::bench::CostModel;
use crate::engine::{EngineConfig, EngineFleet};
use crate::pointer::TagWidth;
use crate::runtime::{Mode, RuntimeConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value {value:?} for `{key}`: {reason}")]
    InvalidValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: `{key}` {reason}")]
    Invalid { key: &'static str, reason: String },
}

impl ConfigError {
    /// The key the error refers to, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. }
            | ConfigError::DuplicateKey { key, .. }
            | ConfigError::InvalidValue { key, .. } => Some(key),
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Number of engine instances, bound to harts `0..n`.
    pub n: usize,
    pub mt_size: usize,
    pub mode: Mode,
    pub tbi: bool,
    pub cost: CostModel,
    pub heap_size: u64,
    pub seed: u64,
    pub hart_id: u32,
    pub drain_interval: u64,
    pub require_machine_mode: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let rt = RuntimeConfig::default();
        SystemConfig {
            n: 1,
            mt_size: rt.mt_size,
            mode: rt.mode,
            tbi: rt.tbi,
            cost: CostModel::default(),
            heap_size: rt.heap_size,
            seed: 0,
            hart_id: 0,
            drain_interval: rt.drain_interval,
            require_machine_mode: false,
        }
    }
}

const KEYS: &[&str] = &[
    "n",
    "mtSize",
    "mode",
    "tbi",
    "heapSize",
    "seed",
    "hartId",
    "drainInterval",
    "requireMachineMode",
    "cyclesPerPlainInstr",
    "cyclesPerSoftBoundsCheck",
    "cyclesBlockingValidateStall",
    "cyclesNbIssue",
    "cyclesStoreIssue",
    "cyclesFreeIssue",
];

fn parse_uint(value: &str) -> Result<u64, String> {
    let v = value.replace('_', "");
    let parsed = if let Some(hex) = v.strip_prefix("0x").or_else(|| v.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16)
    } else {
        v.parse()
    };
    parsed.map_err(|e| e.to_string())
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err("expected true or false".to_string()),
    }
}

impl SystemConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SystemConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax { line, text: raw.to_string() });
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            };
            if seen.contains(&known) {
                return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
            }
            seen.push(known);
            cfg.set(known, value).map_err(|reason| ConfigError::InvalidValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
                reason,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "n" => self.n = parse_uint(value)? as usize,
            "mtSize" => self.mt_size = parse_uint(value)? as usize,
            "mode" => self.mode = value.parse().map_err(|e: crate::runtime::UnknownMode| e.to_string())?,
            "tbi" => self.tbi = parse_bool(value)?,
            "heapSize" => self.heap_size = parse_uint(value)?,
            "seed" => self.seed = parse_uint(value)?,
            "hartId" => self.hart_id = u32::try_from(parse_uint(value)?).map_err(|e| e.to_string())?,
            "drainInterval" => self.drain_interval = parse_uint(value)?,
            "requireMachineMode" => self.require_machine_mode = parse_bool(value)?,
            "cyclesPerPlainInstr" => self.cost.plain_instr = parse_uint(value)?,
            "cyclesPerSoftBoundsCheck" => self.cost.soft_bounds_check = parse_uint(value)?,
            "cyclesBlockingValidateStall" => self.cost.blocking_validate_stall = parse_uint(value)?,
            "cyclesNbIssue" => self.cost.nb_issue = parse_uint(value)?,
            "cyclesStoreIssue" => self.cost.store_issue = parse_uint(value)?,
            "cyclesFreeIssue" => self.cost.free_issue = parse_uint(value)?,
            _ => unreachable!("key list and setter disagree on {key}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::Invalid { key: "n", reason: "must be at least 1".into() });
        }
        if let Err(e) = TagWidth::for_table_size(self.mt_size) {
            return Err(ConfigError::Invalid { key: "mtSize", reason: e.to_string() });
        }
        if self.mt_size > 1 << TagWidth::MAX_BITS {
            return Err(ConfigError::Invalid { key: "mtSize", reason: "exceeds 65536 rows".into() });
        }
        if self.hart_id as usize >= self.n {
            return Err(ConfigError::Invalid {
                key: "hartId",
                reason: format!("{} has no engine (n = {})", self.hart_id, self.n),
            });
        }
        if self.drain_interval == 0 {
            return Err(ConfigError::Invalid { key: "drainInterval", reason: "must be at least 1".into() });
        }
        if let Err(e) = self.cost.check() {
            return Err(ConfigError::Invalid { key: "cyclesNbIssue", reason: e.to_string() });
        }
        Ok(())
    }

    pub fn runtime_config(&self) -> RuntimeConfig {
        RuntimeConfig {
            mode: self.mode,
            tbi: self.tbi,
            heap_size: self.heap_size,
            hart_id: self.hart_id,
            mt_size: self.mt_size,
            drain_interval: self.drain_interval,
            require_machine_mode: self.require_machine_mode,
            ..RuntimeConfig::default()
        }
    }

    /// The `n` engines for `mode`, one per hart.
    pub fn fleet(&self, mode: Mode) -> EngineFleet {
        let template = self
            .runtime_config()
            .with_mode(mode)
            .engine_config()
            .unwrap_or_else(|_| EngineConfig::default());
        EngineFleet::uniform(self.n, template)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key() {
        let text = "\
# comment
n = 2
mtSize = 16   # small table
mode = heapsafe-nb
tbi = true
heapSize = 0x8000
seed = 42
hartId = 1
drainInterval = 3
requireMachineMode = yes
cyclesPerPlainInstr = 2
cyclesPerSoftBoundsCheck = 9
cyclesBlockingValidateStall = 5
cyclesNbIssue = 2
cyclesStoreIssue = 3
cyclesFreeIssue = 4
";
        let c = SystemConfig::parse(text).unwrap();
        assert_eq!(c.n, 2);
        assert_eq!(c.mt_size, 16);
        assert_eq!(c.mode, Mode::HeapSafeNb);
        assert!(c.tbi && c.require_machine_mode);
        assert_eq!((c.heap_size, c.seed, c.hart_id, c.drain_interval), (0x8000, 42, 1, 3));
        assert_eq!(
            c.cost,
            CostModel {
                plain_instr: 2,
                soft_bounds_check: 9,
                blocking_validate_stall: 5,
                nb_issue: 2,
                store_issue: 3,
                free_issue: 4
            }
        );
        assert_eq!(c.fleet(c.mode).len(), 2);
    }

    #[test]
    fn empty_is_default() {
        assert_eq!(SystemConfig::parse("").unwrap(), SystemConfig::default());
    }

    #[test]
    fn reports_offending_key_and_line() {
        let e = SystemConfig::parse("n = 1\nbogus = 3\n").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey { line: 2, .. }));
        assert_eq!(e.key(), Some("bogus"));

        let e = SystemConfig::parse("mtSize = lots").unwrap_err();
        assert!(matches!(e, ConfigError::InvalidValue { line: 1, .. }));
        assert_eq!(e.key(), Some("mtSize"));

        let e = SystemConfig::parse("mtSize = 100").unwrap_err();
        assert_eq!(e.key(), Some("mtSize"));

        let e = SystemConfig::parse("just words").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 1, .. }));

        let e = SystemConfig::parse("n = 1\nn = 2").unwrap_err();
        assert!(matches!(e, ConfigError::DuplicateKey { line: 2, .. }));

        assert_eq!(SystemConfig::parse("n = 0").unwrap_err().key(), Some("n"));
        assert_eq!(SystemConfig::parse("hartId = 1").unwrap_err().key(), Some("hartId"));
        assert_eq!(SystemConfig::parse("mode = fast").unwrap_err().key(), Some("mode"));
    }
}
