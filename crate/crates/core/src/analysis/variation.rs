use std::collections::{BTreeMap, HashMap, HashSet};
use std::io;

use serde::{Deserialize, Serialize};

use super::metrics::{compression_ratio, edit_distance, failure_entropy, Compression};
use crate::evaluation::{AnswerVerdict, EvalRecord, JoinError, Rate};
use crate::scalar::mean;
use crate::task::TaskInstance;
use crate::value::Value;
use crate::Real;

/// Stands in for a wrong answer that could not be extracted.
pub const UNPARSEABLE_SENTINEL: &str = "<unparseable>";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadScope {
    /// Example inputs followed by the query.
    #[default]
    InputSet,
    Query,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationOptions {
    pub payload: PayloadScope,
    pub compression: Compression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationStats {
    pub variation_index: u8,
    pub tasks: usize,
    pub records: usize,
    pub accuracy: Rate,
    /// Mean over the variation's tasks; `None` without tasks.
    pub compression_ratio: Option<Real>,
    /// Mean distinct wrong answers per task.
    pub unique_errors: Option<Real>,
    pub failure_entropy_bits: Option<Real>,
    /// Mean over tasks of the mean distance from each extracted wrong answer
    /// to the ground truth. Unparseable answers are left out.
    pub avg_edit_distance: Option<Real>,
}

fn payload(task: &TaskInstance, scope: PayloadScope) -> String {
    match scope {
        PayloadScope::InputSet => Value::Sequence(task.inputs()).canonical(),
        PayloadScope::Query => task.query.canonical(),
    }
}

fn non_empty_mean(values: &[Real]) -> Option<Real> {
    (!values.is_empty()).then(|| mean(values))
}

/// One row per variation index 0 to 9. Failure statistics are computed per
/// task across all solvers, then averaged over the variation's tasks.
pub fn variation_stats(
    records: &[EvalRecord],
    tasks: &[TaskInstance],
    options: VariationOptions,
) -> Result<Vec<VariationStats>, JoinError> {
    let by_id: HashMap<&str, &TaskInstance> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut per_task: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        if !by_id.contains_key(r.task_id.as_str()) {
            return Err(JoinError::Orphan {
                task_id: r.task_id.clone(),
                solver: r.solver_model.clone(),
            });
        }
        per_task.entry(&r.task_id).or_default().push(r);
    }

    let mut rows = Vec::new();
    for index in 0..=9u8 {
        let vtasks: Vec<&TaskInstance> = tasks.iter().filter(|t| t.variation_index == index).collect();
        let ratios: Vec<Real> = vtasks
            .iter()
            .map(|t| compression_ratio(&payload(t, options.payload), options.compression).ratio)
            .collect();
        let mut accuracy = Rate::default();
        let mut record_count = 0;
        let (mut uniques, mut entropies, mut distances) = (Vec::new(), Vec::new(), Vec::new());
        for t in &vtasks {
            let Some(rs) = per_task.get(t.task_id.as_str()) else { continue };
            record_count += rs.len();
            let truth = t.answer.canonical();
            let mut wrong = Vec::new();
            let mut task_distances = Vec::new();
            for r in rs {
                accuracy.total += 1;
                match r.verdict {
                    Some(AnswerVerdict::Correct) => accuracy.hits += 1,
                    Some(_) => {
                        let text = r.extracted_answer.as_ref().map(Value::canonical);
                        if let Some(text) = &text {
                            task_distances.push(edit_distance(text, &truth) as Real);
                        }
                        wrong.push(text.unwrap_or_else(|| UNPARSEABLE_SENTINEL.to_string()));
                    }
                    None => {}
                }
            }
            let distinct: HashSet<&str> = wrong.iter().map(String::as_str).collect();
            uniques.push(distinct.len() as Real);
            entropies.push(failure_entropy(&wrong));
            if let Some(d) = non_empty_mean(&task_distances) {
                distances.push(d);
            }
        }
        rows.push(VariationStats {
            variation_index: index,
            tasks: vtasks.len(),
            records: record_count,
            accuracy,
            compression_ratio: non_empty_mean(&ratios),
            unique_errors: non_empty_mean(&uniques),
            failure_entropy_bits: non_empty_mean(&entropies),
            avg_edit_distance: non_empty_mean(&distances),
        });
    }
    Ok(rows)
}

/// Series for an accuracy-versus-input-complexity chart:
/// `variation,compression_ratio,accuracy_pct,failure_entropy_bits`.
pub fn write_plot_data<W: io::Write>(stats: &[VariationStats], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variation", "compression_ratio", "accuracy_pct", "failure_entropy_bits"])?;
    let opt = |v: Option<Real>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    for s in stats {
        let acc = if s.accuracy.total == 0 { String::new() } else { s.accuracy.percent(2) };
        w.write_record([
            format!("V{}", s.variation_index),
            opt(s.compression_ratio),
            acc,
            opt(s.failure_entropy_bits),
        ])?;
    }
    w.flush()?;
    Ok(())
}
