//! Per-call cost accounting in exact dollars.

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::str::FromStr;
use std::sync::Mutex;

use num_rational::Ratio;
use num_traits::Zero;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::Role;
use crate::scalar::round_decimal;
use crate::Money;

/// Dollar amount written as a decimal string (`"0.15"`), held exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Usd(pub Money);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("invalid decimal amount {0:?}")]
pub struct AmountError(String);

impl FromStr for Usd {
    type Err = AmountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || AmountError(s.to_string());
        let t = s.trim().trim_start_matches('$');
        let (negative, t) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int, frac) = t.split_once('.').unwrap_or((t, ""));
        if int.is_empty() && frac.is_empty() {
            return Err(err());
        }
        if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || frac.len() > 18 {
            return Err(err());
        }
        let digits: i128 = format!("{int}{frac}").parse().map_err(|_| err())?;
        let scale = 10i128.pow(frac.len() as u32);
        let value = Ratio::new(digits, scale);
        Ok(Usd(if negative { -value } else { value }))
    }
}

impl Usd {
    pub fn zero() -> Self {
        Usd(Money::zero())
    }

    /// Rounded half away from zero to `digits` decimals.
    pub fn display(&self, digits: u32) -> String {
        round_decimal(&self.0, digits)
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}", self.display(2))
    }
}

impl std::ops::Add for Usd {
    type Output = Usd;
    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0 + rhs.0)
    }
}

impl std::iter::Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::zero(), |a, b| a + b)
    }
}

impl Serialize for Usd {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        // exact: numerator/denominator when not a terminating decimal
        let r = self.0;
        let mut den = *r.denom();
        let mut digits = 0u32;
        while den % 10 == 0 {
            den /= 10;
            digits += 1;
        }
        while den % 2 == 0 || den % 5 == 0 {
            if den % 2 == 0 {
                den /= 2;
            } else {
                den /= 5;
            }
            digits += 1;
        }
        if den == 1 {
            s.serialize_str(&round_decimal(&r, digits))
        } else {
            s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
        }
    }
}

impl<'de> Deserialize<'de> for Usd {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if let Some((n, m)) = s.split_once('/') {
            let n: i128 = n.trim().parse().map_err(serde::de::Error::custom)?;
            let m: i128 = m.trim().parse().map_err(serde::de::Error::custom)?;
            if m == 0 {
                return Err(serde::de::Error::custom("zero denominator"));
            }
            return Ok(Usd(Ratio::new(n, m)));
        }
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Prices per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelPrice {
    pub input_per_mtok: Usd,
    pub output_per_mtok: Usd,
}

/// Model name to price. Models without an entry cost nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PricingTable {
    pub models: BTreeMap<String, ModelPrice>,
}

impl PricingTable {
    pub fn cost(&self, model: &str, prompt_tokens: u64, completion_tokens: u64) -> Usd {
        let Some(p) = self.models.get(model) else {
            return Usd::zero();
        };
        let million = Ratio::from_integer(1_000_000i128);
        let input = p.input_per_mtok.0 * Ratio::from_integer(prompt_tokens as i128) / million;
        let output = p.output_per_mtok.0 * Ratio::from_integer(completion_tokens as i128) / million;
        Usd(input + output)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Seed,
    Expansion,
    Evaluation,
    Analysis,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Seed => "seed",
            Stage::Expansion => "expansion",
            Stage::Evaluation => "evaluation",
            Stage::Analysis => "analysis",
        })
    }
}

/// Which stage and task a call is billed to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallContext {
    pub stage: Stage,
    pub task_key: Option<String>,
}

impl CallContext {
    pub fn new(stage: Stage, task_key: impl Into<String>) -> Self {
        CallContext {
            stage,
            task_key: Some(task_key.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub seq: u64,
    pub role: Role,
    pub model: String,
    pub stage: Stage,
    pub task_key: Option<String>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub usd_cost: Usd,
}

/// Append-only log of billed calls.
#[derive(Debug, Default)]
pub struct CostLedger {
    records: Mutex<Vec<CallRecord>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub tasks: usize,
    pub calls: usize,
    pub total: Usd,
    /// Total over tasks; zero when no task was billed.
    pub per_task: Usd,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<CallRecord>) -> Self {
        CostLedger {
            records: Mutex::new(records),
        }
    }

    pub fn record(
        &self,
        role: Role,
        model: &str,
        ctx: &CallContext,
        prompt_tokens: u64,
        completion_tokens: u64,
        usd_cost: Usd,
    ) {
        let mut records = self.records.lock().unwrap_or_else(|e| e.into_inner());
        let seq = records.len() as u64;
        records.push(CallRecord {
            seq,
            role,
            model: model.to_string(),
            stage: ctx.stage,
            task_key: ctx.task_key.clone(),
            prompt_tokens,
            completion_tokens,
            usd_cost,
        });
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn total(&self) -> Usd {
        self.records().iter().map(|r| r.usd_cost).sum()
    }

    pub fn by_stage(&self) -> BTreeMap<Stage, Usd> {
        let mut out = BTreeMap::new();
        for r in self.records() {
            let e = out.entry(r.stage).or_insert_with(Usd::zero);
            *e = *e + r.usd_cost;
        }
        out
    }

    pub fn by_task(&self) -> BTreeMap<String, Usd> {
        let mut out = BTreeMap::new();
        for r in self.records() {
            if let Some(k) = r.task_key {
                let e = out.entry(k).or_insert_with(Usd::zero);
                *e = *e + r.usd_cost;
            }
        }
        out
    }

    pub fn stage_summary(&self, stage: Stage) -> StageSummary {
        let records: Vec<CallRecord> = self.records().into_iter().filter(|r| r.stage == stage).collect();
        let mut tasks: Vec<&str> = records.iter().filter_map(|r| r.task_key.as_deref()).collect();
        tasks.sort_unstable();
        tasks.dedup();
        let total: Usd = records.iter().map(|r| r.usd_cost).sum();
        let per_task = if tasks.is_empty() {
            Usd::zero()
        } else {
            Usd(total.0 / Ratio::from_integer(tasks.len() as i128))
        };
        StageSummary {
            stage,
            tasks: tasks.len(),
            calls: records.len(),
            total,
            per_task,
        }
    }

    /// Total cost spread over `task_count` tasks.
    pub fn average_over(&self, task_count: usize) -> Usd {
        if task_count == 0 {
            return Usd::zero();
        }
        Usd(self.total().0 / Ratio::from_integer(task_count as i128))
    }

    /// Tab-separated export: one row per call, then one row per stage.
    pub fn write_table<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
        w.write_record(["seq", "role", "model", "stage", "task", "prompt_tokens", "completion_tokens", "usd"])?;
        for r in self.records() {
            w.write_record([
                r.seq.to_string(),
                r.role.to_string(),
                r.model,
                r.stage.to_string(),
                r.task_key.unwrap_or_default(),
                r.prompt_tokens.to_string(),
                r.completion_tokens.to_string(),
                r.usd_cost.display(6),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_jsonl<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        for r in self.records() {
            writeln!(out, "{}", crate::canonical::to_canonical_string(&r))?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<CallRecord>, _>>()?;
        Ok(CostLedger::from_records(records))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usd(s: &str) -> Usd {
        s.parse().unwrap()
    }

    #[test]
    fn decimal_parsing_is_exact() {
        assert_eq!(usd("0.19").0, Ratio::new(19, 100));
        assert_eq!(usd("$13.68").0, Ratio::new(1368, 100));
        assert_eq!(usd("5").0, Ratio::from_integer(5));
        assert_eq!(usd(".5").0, Ratio::new(1, 2));
        assert!("1.2.3".parse::<Usd>().is_err());
        assert!("abc".parse::<Usd>().is_err());
    }

    #[test]
    fn serde_keeps_exact_values() {
        for v in [usd("0.005"), usd("13.68"), Usd(Ratio::new(1, 3))] {
            let text = serde_json::to_string(&v).unwrap();
            assert_eq!(serde_json::from_str::<Usd>(&text).unwrap(), v);
        }
        assert_eq!(serde_json::to_string(&usd("0.005")).unwrap(), "\"0.005\"");
    }

    #[test]
    fn per_call_pricing() {
        let mut t = PricingTable::default();
        t.models.insert(
            "m".into(),
            ModelPrice {
                input_per_mtok: usd("2"),
                output_per_mtok: usd("10"),
            },
        );
        assert_eq!(t.cost("m", 30_000, 13_000), usd("0.19"));
        assert_eq!(t.cost("m", 1_000, 300), usd("0.005"));
        assert_eq!(t.cost("unknown", 1_000, 300), Usd::zero());
    }

    #[test]
    fn aggregates_are_additive() {
        let ledger = CostLedger::new();
        let seed = CallContext::new(Stage::Seed, "s1");
        let exp = CallContext::new(Stage::Expansion, "s1/v1");
        ledger.record(Role::AuthorRule, "m", &seed, 1, 1, usd("0.10"));
        ledger.record(Role::AuthorCode, "m", &seed, 1, 1, usd("0.09"));
        ledger.record(Role::Expander, "m", &exp, 1, 1, usd("0.005"));
        assert_eq!(ledger.total(), usd("0.195"));
        let by_stage = ledger.by_stage();
        assert_eq!(by_stage[&Stage::Seed], usd("0.19"));
        assert_eq!(by_stage.values().copied().sum::<Usd>(), ledger.total());
        assert_eq!(ledger.by_task()["s1"], usd("0.19"));
        assert_eq!(ledger.stage_summary(Stage::Seed).per_task, usd("0.19"));

        let mut buf = Vec::new();
        ledger.write_jsonl(&mut buf).unwrap();
        let back = CostLedger::read_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.records(), ledger.records());
    }
}
