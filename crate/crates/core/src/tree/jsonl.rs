use super::{depths_to_tree, parse_newick, tree_to_depths, write_newick, DepthSeq, TreeError};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

pub const JSONL_FORMAT_TAG: &str = "lfcoal-trees";
pub const JSONL_FORMAT_VERSION: u32 = 1;
pub const NEWICK_FORMAT_TAG: &str = "lfcoal-newick";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeFormat {
    JsonLines,
    Newick,
}

impl TreeFormat {
    /// JSON-lines if the first non-blank, non-comment line opens an object,
    /// Newick otherwise.
    pub fn sniff(text: &str) -> TreeFormat {
        match text.lines().map(str::trim).find(|l| !l.is_empty() && !is_comment(l)) {
            Some(line) if line.starts_with('{') => TreeFormat::JsonLines,
            _ => TreeFormat::Newick,
        }
    }
}

/// Writes a header line followed by one compact `{"T":..,"depths":[..]}`
/// record per line.
pub fn write_depth_seqs<W: Write>(mut out: W, seqs: &[DepthSeq]) -> io::Result<()> {
    let header = Header {
        format: JSONL_FORMAT_TAG.to_string(),
        version: JSONL_FORMAT_VERSION,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for seq in seqs {
        serde_json::to_writer(&mut out, seq)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A whole-line bracketed Newick comment such as the file header.
fn is_comment(line: &str) -> bool {
    line.starts_with('[') && line.ends_with(']')
}

/// Writes a `[lfcoal-newick 1]` header line followed by one Newick tree per
/// line.
pub fn write_newick_file<W: Write>(mut out: W, seqs: &[DepthSeq]) -> io::Result<()> {
    writeln!(out, "[{NEWICK_FORMAT_TAG} {JSONL_FORMAT_VERSION}]")?;
    for seq in seqs {
        writeln!(out, "{}", write_newick(&depths_to_tree(seq)))?;
    }
    Ok(())
}

/// Reads JSON-lines tree records; blank lines and format header lines are
/// skipped.
pub fn read_depth_seqs(text: &str) -> Result<Vec<DepthSeq>, TreeError> {
    let mut seqs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let record_error = |message: String| TreeError::Record {
            line: i + 1,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| record_error(e.to_string()))?;
        if value.get("format").is_some() {
            let header: Header =
                serde_json::from_value(value).map_err(|e| record_error(e.to_string()))?;
            if header.format != JSONL_FORMAT_TAG || header.version > JSONL_FORMAT_VERSION {
                return Err(record_error(format!(
                    "unsupported format {} version {}",
                    header.format, header.version
                )));
            }
            continue;
        }
        let seq: DepthSeq =
            serde_json::from_value(value).map_err(|e| record_error(e.to_string()))?;
        seqs.push(seq);
    }
    Ok(seqs)
}

/// Reads trees in either format, one tree per line for Newick, where
/// whole-line bracketed comments are skipped.
pub fn read_trees(text: &str, format: Option<TreeFormat>) -> Result<Vec<DepthSeq>, TreeError> {
    match format.unwrap_or_else(|| TreeFormat::sniff(text)) {
        TreeFormat::JsonLines => read_depth_seqs(text),
        TreeFormat::Newick => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !is_comment(l.trim()))
            .map(|(i, l)| {
                parse_newick(l)
                    .and_then(|t| tree_to_depths(&t))
                    .map_err(|e| TreeError::Record {
                        line: i + 1,
                        message: e.to_string(),
                    })
            })
            .collect(),
    }
}
