//! Replays of the two heap weaknesses: a `strcpy` overflow into an adjacent
//! buffer (CWE-122) and a read through a dangling pointer after the freed
//! memory was handed out again (CWE-416).

use std::fmt;
use std::str::FromStr;

use crate::engine::RoccPort;
use crate::pointer::SafePointer;
use crate::runtime::{Mode, Runtime, RuntimeConfig, RuntimeError, MEMORY_BASE};

/// Buffer size used by both replays.
pub const SIZE: u64 = 16;
/// The attacker-controlled string copied into the `SIZE`-byte buffer.
pub const OVERFLOW_INPUT: &[u8] = b"AAAAAAAAAAAAAAAAAAAAAAAA\0";
pub const NEIGHBOUR_DATA: &[u8; 16] = b"neighbour-secret";
pub const REALLOC_DATA: &[u8; 16] = b"p2-private-data!";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attack {
    Cwe122,
    Cwe416,
}

impl Attack {
    pub fn name(self) -> &'static str {
        match self {
            Attack::Cwe122 => "cwe122",
            Attack::Cwe416 => "cwe416",
        }
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attack {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cwe122" | "cwe-122" => Ok(Attack::Cwe122),
            "cwe416" | "cwe-416" => Ok(Attack::Cwe416),
            other => Err(format!("unknown attack {other:?} (expected cwe122 or cwe416)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackReport {
    pub attack: Attack,
    pub mode: Mode,
    pub detected: bool,
    /// Byte offset from the buffer start of the first flagged access.
    pub detected_at_offset: Option<u64>,
    /// Bytes changed outside the target buffer.
    pub corrupted_bytes: usize,
    /// Bytes of another allocation's data read through the stale pointer.
    pub leaked_bytes: usize,
    /// Operations between the flagged access and its observation.
    pub latency: Option<u64>,
    /// The reallocation received the freed pointer's tag again.
    pub tag_reissued: bool,
}

impl AttackReport {
    pub fn verdict(&self) -> String {
        match (self.detected, self.attack) {
            (true, _) => match self.detected_at_offset {
                Some(off) => format!("detected at offset {off}"),
                None => "detected".to_string(),
            },
            (false, Attack::Cwe416) if self.leaked_bytes > 0 => "undetected, data leaked".to_string(),
            (false, Attack::Cwe122) if self.corrupted_bytes > 0 => {
                "undetected, adjacent memory corrupted".to_string()
            }
            (false, _) => "undetected".to_string(),
        }
    }

    /// One comma-separated line for scripts.
    pub fn verdict_line(&self) -> String {
        format!(
            "verdict,{},{},{},{},{},{},{}",
            self.attack,
            self.mode,
            if self.detected { "detected" } else { "undetected" },
            self.detected_at_offset.map_or("-".to_string(), |o| o.to_string()),
            self.corrupted_bytes,
            self.leaked_bytes,
            self.latency.map_or("-".to_string(), |l| l.to_string()),
        )
    }
}

impl fmt::Display for AttackReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "attack:          {}", self.attack)?;
        writeln!(f, "mode:            {}", self.mode)?;
        writeln!(f, "verdict:         {}", self.verdict())?;
        writeln!(f, "corrupted bytes: {}", self.corrupted_bytes)?;
        writeln!(f, "leaked bytes:    {}", self.leaked_bytes)?;
        match self.latency {
            Some(l) => writeln!(f, "latency (ops):   {l}")?,
            None => writeln!(f, "latency (ops):   -")?,
        }
        if self.tag_reissued {
            writeln!(f, "note:            freed tag was reissued; stale aliases are indistinguishable")?;
        }
        Ok(())
    }
}

fn base_of<P: RoccPort>(rt: &Runtime<P>, p: SafePointer) -> u64 {
    if rt.mode().is_protected() {
        p.raw(rt.tag_width())
    } else {
        p.bits()
    }
}

/// Buffer overflow: `buf = malloc(SIZE); strcpy(buf, input)` with a second
/// buffer allocated right after `buf`.
pub fn attack_cwe122_on<P: RoccPort>(rt: &mut Runtime<P>) -> Result<AttackReport, RuntimeError> {
    let width = rt.tag_width();
    let buf = rt.malloc(SIZE)?;
    let neighbour = rt.malloc(SIZE)?;
    rt.copy(neighbour, NEIGHBOUR_DATA)?;
    let buf_base = base_of(rt, buf);
    let before = rt.memory().to_vec();

    let first_op = rt.op_count();
    let mut stopped_at = None;
    for (i, &byte) in OVERFLOW_INPUT.iter().enumerate() {
        let dst = buf.offset(i as i64, width)?;
        match rt.write(dst, byte) {
            Ok(()) => {}
            Err(RuntimeError::OutOfBoundsAccess(_)) => {
                stopped_at = Some(i as u64);
                break;
            }
            Err(e) => return Err(e),
        }
        // the exception handler terminates the program
        if !rt.violations().is_empty() {
            break;
        }
    }
    rt.drain();

    let start = (buf_base - MEMORY_BASE) as usize;
    let region = start..start + SIZE as usize;
    let corrupted_bytes = before
        .iter()
        .zip(rt.memory())
        .enumerate()
        .filter(|(i, (a, b))| !region.contains(i) && a != b)
        .count();
    let first = rt.violations().first().copied();
    Ok(AttackReport {
        attack: Attack::Cwe122,
        mode: rt.mode(),
        detected: first.is_some(),
        detected_at_offset: first.map(|v| v.op - first_op).or(stopped_at),
        corrupted_bytes,
        leaked_bytes: 0,
        latency: first.map(|v| v.latency()),
        tag_reissued: false,
    })
}

/// Use after free. `p1` is freed on an error path and an error-log buffer is
/// allocated before `p2` lands in `p1`'s old location; `p1` is then read.
///
/// With `reissue` the log allocation is skipped, so `p2` receives both the
/// address and the tag `p1` had and the stale pointer is indistinguishable
/// from the new one.
pub fn attack_cwe416_on<P: RoccPort>(rt: &mut Runtime<P>, reissue: bool) -> Result<AttackReport, RuntimeError> {
    let width = rt.tag_width();
    let p1 = rt.malloc(SIZE)?;
    rt.copy(p1, b"p1-original-data")?;
    let _guard = rt.malloc(SIZE)?;
    rt.free(p1)?;
    if !reissue {
        let _log = rt.malloc(4 * SIZE)?;
    }
    let p2 = rt.malloc(SIZE)?;
    rt.copy(p2, REALLOC_DATA)?;
    let tag_reissued = rt.mode().is_protected() && p2 == p1;

    let first_op = rt.op_count();
    let mut leaked_bytes = 0;
    let mut stopped_at = None;
    for i in 0..SIZE {
        let src = p1.offset(i as i64, width)?;
        match rt.read(src) {
            Ok(byte) => {
                if byte == REALLOC_DATA[i as usize] {
                    leaked_bytes += 1;
                }
            }
            Err(RuntimeError::OutOfBoundsAccess(_)) => {
                stopped_at = Some(i);
                break;
            }
            Err(e) => return Err(e),
        }
        if !rt.violations().is_empty() {
            break;
        }
    }
    rt.drain();

    let first = rt.violations().first().copied();
    Ok(AttackReport {
        attack: Attack::Cwe416,
        mode: rt.mode(),
        detected: first.is_some(),
        detected_at_offset: first.map(|v| v.op - first_op).or(stopped_at),
        corrupted_bytes: 0,
        leaked_bytes,
        latency: first.map(|v| v.latency()),
        tag_reissued,
    })
}

pub fn attack_cwe122(mode: Mode, config: &RuntimeConfig) -> Result<AttackReport, RuntimeError> {
    attack_cwe122_on(&mut Runtime::new(config.with_mode(mode))?)
}

pub fn attack_cwe416(mode: Mode, config: &RuntimeConfig, reissue: bool) -> Result<AttackReport, RuntimeError> {
    attack_cwe416_on(&mut Runtime::new(config.with_mode(mode))?, reissue)
}
