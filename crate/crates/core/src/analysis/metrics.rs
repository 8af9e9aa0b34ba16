use std::collections::HashMap;
use std::io::Write;

use flate2::write::GzEncoder;
use serde::{Deserialize, Serialize};

use crate::Real;

/// Gzip level used for compression ratios, recorded next to every report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Compression(pub u32);

impl Default for Compression {
    fn default() -> Self {
        Compression(6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionRatio {
    pub ratio: Real,
    /// Empty payload: the ratio is the bare container size over one byte.
    pub empty_payload: bool,
}

/// Gzip-compressed length over original length. Short payloads give ratios
/// above 1 because of the container header and trailer.
pub fn compression_ratio(payload: &str, level: Compression) -> CompressionRatio {
    let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::new(level.0.min(9)));
    enc.write_all(payload.as_bytes()).expect("writing to a Vec");
    let compressed = enc.finish().expect("writing to a Vec").len();
    let original = payload.len();
    CompressionRatio {
        ratio: compressed as Real / original.max(1) as Real,
        empty_payload: original == 0,
    }
}

/// Shannon entropy in bits of the empirical distribution of `items`.
pub fn failure_entropy<S: AsRef<str>>(items: &[S]) -> Real {
    if items.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in items {
        *counts.entry(s.as_ref()).or_default() += 1;
    }
    let n = items.len() as Real;
    let mut freqs: Vec<usize> = counts.into_values().collect();
    // summation order fixed so results do not depend on hash order
    freqs.sort_unstable();
    let h: Real = freqs
        .into_iter()
        .map(|c| {
            let p = c as Real / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
