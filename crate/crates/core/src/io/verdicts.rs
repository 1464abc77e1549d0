//! Streaming verdicts as JSON lines: `{"index":..,"label":..,"new":..,"dist":..}`.
//! `dist` is the squared distance to the nearest leader, or `null` when the
//! strategy has no distance (hash codes).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, write_atomic};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub index: usize,
    pub label: i64,
    pub new: bool,
    pub dist: Option<f64>,
}

pub fn write_verdicts(records: &[VerdictRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

/// Reads verdicts and checks that indices are consecutive. A resumed run
/// starts at its snapshot offset rather than 0.
pub fn read_verdicts(path: &Path) -> Result<Vec<VerdictRecord>> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::MetadataMismatch(format!("verdicts are not UTF-8: {e}")))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: VerdictRecord = serde_json::from_str(line)?;
        if let Some(prev) = out.last().map(|p: &VerdictRecord| p.index) {
            if r.index != prev + 1 {
                return Err(Error::MetadataMismatch(format!(
                    "verdict index {} follows {prev}",
                    r.index
                )));
            }
        }
        out.push(r);
    }
    Ok(out)
}
