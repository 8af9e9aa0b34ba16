use std::collections::{BTreeMap, HashSet};
use std::io;

use serde::{Deserialize, Serialize};

use crate::runtime::{AstMetrics, RuleExecutor};
use crate::scalar::round_decimal;
use crate::task::{Protocol, TaskInstance};
use crate::value::Dimension;
use crate::Exact;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub author_model: String,
    pub dimension: Dimension,
    pub rules: usize,
    /// Field means in [`AstMetrics::FIELD_NAMES`] order.
    pub means: [Exact; 6],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub rows: Vec<ComplexityRow>,
    /// Rules whose source the runner could not analyse.
    pub excluded: usize,
}

/// Mean AST metrics per (author, dimension) over the distinct rules of the
/// original seed tasks. Variations reuse their seed's rule and are skipped.
pub fn complexity_report<E: RuleExecutor>(tasks: &[TaskInstance], exec: &E) -> ComplexityReport {
    let mut seen = HashSet::new();
    let mut groups: BTreeMap<(String, Dimension), Vec<AstMetrics>> = BTreeMap::new();
    let mut excluded = 0;
    for t in tasks.iter().filter(|t| t.is_seed() && t.protocol == Protocol::P0) {
        let Some(rule) = &t.rule else { continue };
        if !seen.insert(rule.rule_id()) {
            continue;
        }
        match exec.code_metrics(&rule.source).value {
            Some(m) => groups.entry((t.author_model.clone(), t.dimension)).or_default().push(m),
            None => excluded += 1,
        }
    }
    let rows = groups
        .into_iter()
        .map(|((author_model, dimension), ms)| {
            let n = ms.len() as i64;
            let mut sums = [0i64; 6];
            for m in &ms {
                for (s, v) in sums.iter_mut().zip(m.as_array()) {
                    *s += i64::from(v);
                }
            }
            ComplexityRow {
                author_model,
                dimension,
                rules: ms.len(),
                means: sums.map(|s| Exact::new(s, n)),
            }
        })
        .collect();
    ComplexityReport { rows, excluded }
}

impl ComplexityReport {
    pub fn row(&self, author: &str, dimension: Dimension) -> Option<&ComplexityRow> {
        self.rows
            .iter()
            .find(|r| r.author_model == author && r.dimension == dimension)
    }

    /// Delimited table with means to two decimals.
    pub fn write_table<W: io::Write>(&self, out: W, delimiter: u8) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
        let mut header = vec!["author_model", "dimension", "rules"];
        header.extend(AstMetrics::FIELD_NAMES);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.author_model.clone(), r.dimension.label().to_string(), r.rules.to_string()];
            rec.extend(r.means.iter().map(|m| round_decimal(m, 2)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
