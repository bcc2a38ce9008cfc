//! Multi-label evaluation: Micro-F1, Macro-F1, example-based F1 and the
//! share of predictions that break hierarchy consistency.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::hierarchy::{LabelHierarchy, LabelId, LabelSet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no prediction records")]
    NoRecords,
    #[error("no eligible labels for Macro-F1")]
    NoEligibleLabels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub predicted: LabelSet,
    pub gold: LabelSet,
}

/// F1 from raw counts, with 0 for undefined precision or recall.
fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-example F1. Both sets empty scores 1; exactly one empty scores 0.
pub fn ebf(pred: &LabelSet, gold: &LabelSet) -> f64 {
    match (pred.is_empty(), gold.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let tp = pred.intersection_len(gold);
            f1_from_counts(tp, pred.len() - tp, gold.len() - tp)
        }
    }
}

/// Mean per-example F1 over the records.
pub fn mean_ebf(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    Ok(records.iter().map(|r| ebf(&r.predicted, &r.gold)).sum::<f64>() / records.len() as f64)
}

pub fn micro_f1(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoRecords);
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for r in records {
        let hit = r.predicted.intersection_len(&r.gold);
        tp += hit;
        fp += r.predicted.len() - hit;
        fn_ += r.gold.len() - hit;
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn f1(&self) -> f64 {
        f1_from_counts(self.tp, self.fp, self.fn_)
    }
}

pub fn per_label_counts(records: &[PredictionRecord]) -> BTreeMap<LabelId, Counts> {
    let mut out: BTreeMap<LabelId, Counts> = BTreeMap::new();
    for r in records {
        for l in r.predicted.iter() {
            let c = out.entry(l).or_default();
            if r.gold.contains(l) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for l in r.gold.iter().filter(|&l| !r.predicted.contains(l)) {
            out.entry(l).or_default().fn_ += 1;
        }
    }
    out
}

/// Mean per-label F1 over `eligible`.
pub fn macro_f1(records: &[PredictionRecord], eligible: &[LabelId]) -> Result<f64, MetricsError> {
    if eligible.is_empty() {
        return Err(MetricsError::NoEligibleLabels);
    }
    let counts = per_label_counts(records);
    let total: f64 = eligible.iter().map(|l| counts.get(l).map_or(0.0, Counts::f1)).sum();
    Ok(total / eligible.len() as f64)
}

/// Labels with at least one gold occurrence in the records, ascending.
pub fn supported_labels(records: &[PredictionRecord]) -> Vec<LabelId> {
    let mut seen: Vec<LabelId> = records.iter().flat_map(|r| r.gold.iter()).collect();
    seen.sort_unstable();
    seen.dedup();
    seen
}

pub fn inconsistency_rate(records: &[PredictionRecord], hierarchy: &LabelHierarchy) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let bad = records.iter().filter(|r| !hierarchy.is_consistent(&r.predicted)).count();
    bad as f64 / records.len() as f64
}

/// Every label whose probability reaches `threshold`; no consistency repair.
pub fn flat_decode(probs: &[f64], threshold: f64) -> LabelSet {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| LabelId(i))
        .collect()
}

/// Splits labels into three equal-sized popularity groups, most frequent first.
/// Ties keep ascending id order; earlier groups take the remainder.
pub fn popularity_terciles(support: &BTreeMap<LabelId, usize>) -> [Vec<LabelId>; 3] {
    let mut labels: Vec<(LabelId, usize)> = support.iter().map(|(&l, &n)| (l, n)).collect();
    labels.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let n = labels.len();
    let base = n / 3;
    let extra = n % 3;
    let mut groups: [Vec<LabelId>; 3] = Default::default();
    let mut it = labels.into_iter().map(|(l, _)| l);
    for (g, group) in groups.iter_mut().enumerate() {
        let size = base + usize::from(g < extra);
        group.extend(it.by_ref().take(size));
    }
    groups
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub examples: usize,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub ebf: f64,
    pub inconsistency_rate: f64,
    /// `(level, Macro-F1)` over eligible labels at that depth.
    pub per_level: Vec<(usize, f64)>,
    /// Macro-F1 of popularity groups P1 (most frequent) to P3; `None` when a group is empty.
    pub per_popularity: [Option<f64>; 3],
}

impl EvalReport {
    /// `eligible` restricts Macro-F1; `support` gives per-label example counts
    /// used to rank popularity (typically training counts).
    pub fn build(
        records: &[PredictionRecord],
        hierarchy: &LabelHierarchy,
        eligible: &[LabelId],
        support: &BTreeMap<LabelId, usize>,
    ) -> Result<Self, MetricsError> {
        let micro = micro_f1(records)?;
        let macro_ = macro_f1(records, eligible)?;
        let ebf = mean_ebf(records)?;
        let mut by_level: BTreeMap<usize, Vec<LabelId>> = BTreeMap::new();
        for &l in eligible {
            by_level.entry(hierarchy.level(l)).or_default().push(l);
        }
        let per_level = by_level
            .into_iter()
            .map(|(lvl, ls)| Ok((lvl, macro_f1(records, &ls)?)))
            .collect::<Result<Vec<_>, MetricsError>>()?;
        let ranked: BTreeMap<LabelId, usize> =
            eligible.iter().map(|&l| (l, support.get(&l).copied().unwrap_or(0))).collect();
        let groups = popularity_terciles(&ranked);
        let per_popularity = groups.map(|g| macro_f1(records, &g).ok());
        Ok(EvalReport {
            examples: records.len(),
            micro_f1: micro,
            macro_f1: macro_,
            ebf,
            inconsistency_rate: inconsistency_rate(records, hierarchy),
            per_level,
            per_popularity,
        })
    }

    /// Bottom-level Macro-F1, if any eligible label sits at the deepest level.
    pub fn deepest_level_macro(&self) -> Option<(usize, f64)> {
        self.per_level.last().copied()
    }

    pub const CSV_HEADER: &'static str = "metric,value";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let mut row = |k: &str, v: f64| out.push_str(&format!("{k},{v}\n"));
        row("examples", self.examples as f64);
        row("micro_f1", self.micro_f1);
        row("macro_f1", self.macro_f1);
        row("ebf", self.ebf);
        row("inconsistency_rate", self.inconsistency_rate);
        for &(lvl, v) in &self.per_level {
            row(&format!("macro_f1_level_{lvl}"), v);
        }
        for (i, v) in self.per_popularity.iter().enumerate() {
            if let Some(v) = v {
                row(&format!("macro_f1_p{}", i + 1), *v);
            }
        }
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "examples            {}", self.examples)?;
        writeln!(f, "Micro-F1            {:.2}", 100.0 * self.micro_f1)?;
        writeln!(f, "Macro-F1            {:.2}", 100.0 * self.macro_f1)?;
        writeln!(f, "EBF                 {:.2}", 100.0 * self.ebf)?;
        writeln!(f, "inconsistent        {:.2}%", 100.0 * self.inconsistency_rate)?;
        for &(lvl, v) in &self.per_level {
            writeln!(f, "Macro-F1 L{lvl:<15} {:.2}", 100.0 * v)?;
        }
        for (i, v) in self.per_popularity.iter().enumerate() {
            match v {
                Some(v) => writeln!(f, "Macro-F1 P{:<15} {:.2}", i + 1, 100.0 * v)?,
                None => writeln!(f, "Macro-F1 P{:<15} -", i + 1)?,
            }
        }
        Ok(())
    }
}
