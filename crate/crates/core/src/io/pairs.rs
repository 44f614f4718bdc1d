//! Pair lists (`<a> <b> <label>`) and score files (`<a> <b> <score>`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{PairEntry, PairList, ScoredPair};

/// Parses one pair per line, fields separated by single spaces, label 1
/// (genuine) or 0 (impostor). Blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<PairList> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        let bad = |why: &str| Error::Format(format!("pair list line {}: {why}", i + 1));
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(bad("expected `<ref_a> <ref_b> <label>`"));
        }
        let genuine = match fields[2] {
            "1" => true,
            "0" => false,
            other => return Err(bad(&format!("label must be 0 or 1, got `{other}`"))),
        };
        entries.push(PairEntry {
            a: fields[0].to_string(),
            b: fields[1].to_string(),
            genuine,
        });
    }
    if entries.is_empty() {
        return Err(Error::Format("pair list is empty".into()));
    }
    Ok(PairList { entries })
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<PairList> {
    parse_pairs(&std::fs::read_to_string(path)?)
}

/// One `<a> <b> <score>` line per pair, score at 6 decimals.
pub fn format_scores(pairs: &[ScoredPair]) -> String {
    pairs.iter().map(|p| format!("{} {} {:.6}\n", p.a, p.b, p.score)).collect()
}
