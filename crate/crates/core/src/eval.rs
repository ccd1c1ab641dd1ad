//! Moderation evaluation: answer parsing, category and character recall,
//! false-positive rate and drift alarms.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::text::{CharBag, CharBagDiff};

pub const DEFAULT_DRIFT_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("subset {0} has no items")]
    EmptySubset(String),
    #[error("empty input")]
    EmptyInput,
    #[error("metric keys differ: {0:?}")]
    KeyMismatch(Vec<String>),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
}

macro_rules! label_enum {
    ($name:ident { $($variant:ident => $text:literal),* $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),*
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),*
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = EvalError;

            fn from_str(s: &str) -> Result<Self, EvalError> {
                let t = s.trim();
                $name::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str().eq_ignore_ascii_case(t))
                    .ok_or_else(|| EvalError::UnknownLabel(s.to_string()))
            }
        }
    };
}

label_enum!(Category {
    Ad => "ad",
    HighRisk => "high-risk",
    Illegal => "illegal",
    Porn => "porn",
    Vulgar => "vulgar",
    Other => "other",
    Normal => "normal",
});

label_enum!(AdversarialSubset {
    Aigc => "aigc",
    Combination => "combination",
    Handwriting => "handwriting",
    Long => "long",
    Noise => "noise",
    Small => "small",
    Warp => "warp",
    Watermark => "watermark",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BinaryAnswer {
    Yes,
    No,
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChoiceAnswer {
    A,
    B,
    C,
    D,
    Unparseable,
}

impl ChoiceAnswer {
    fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'A' => Some(ChoiceAnswer::A),
            'B' => Some(ChoiceAnswer::B),
            'C' => Some(ChoiceAnswer::C),
            'D' => Some(ChoiceAnswer::D),
            _ => None,
        }
    }
}

/// The standalone yes/no token closest to the end of `raw`.
pub fn extract_binary_answer(raw: &str) -> BinaryAnswer {
    raw.split(|c: char| !c.is_alphanumeric())
        .rev()
        .find_map(|tok| {
            if tok.eq_ignore_ascii_case("yes") {
                Some(BinaryAnswer::Yes)
            } else if tok.eq_ignore_ascii_case("no") {
                Some(BinaryAnswer::No)
            } else {
                None
            }
        })
        .unwrap_or(BinaryAnswer::Unparseable)
}

/// The last `[X]` letter in `raw`, else the last `ANSWER: X`.
pub fn extract_choice_letter(raw: &str) -> ChoiceAnswer {
    let chars: Vec<char> = raw.chars().collect();
    for i in (0..chars.len().saturating_sub(2)).rev() {
        if chars[i] == '[' && chars[i + 2] == ']' {
            if let Some(a) = ChoiceAnswer::from_char(chars[i + 1]) {
                return a;
            }
        }
    }
    let upper = raw.to_ascii_uppercase();
    for (at, _) in upper.rmatch_indices("ANSWER") {
        let rest = upper[at + "ANSWER".len()..].trim_start();
        let Some(rest) = rest.strip_prefix(':') else {
            continue;
        };
        let mut it = rest.trim_start().chars();
        if let Some(a) = it.next().and_then(ChoiceAnswer::from_char) {
            if it.next().is_none_or(|c| !c.is_alphanumeric()) {
                return a;
            }
        }
    }
    ChoiceAnswer::Unparseable
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationCase {
    pub id: String,
    pub category: Category,
    /// True when the content belongs to `category`.
    pub gold: bool,
    pub model_answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryTally {
    pub cases: u64,
    pub positives: u64,
    pub hits: u64,
    pub unparseable: u64,
}

impl CategoryTally {
    pub fn add(&mut self, gold: bool, answer: BinaryAnswer) {
        self.cases += 1;
        if answer == BinaryAnswer::Unparseable {
            self.unparseable += 1;
        }
        if gold {
            self.positives += 1;
            if answer == BinaryAnswer::Yes {
                self.hits += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &CategoryTally) {
        self.cases += other.cases;
        self.positives += other.positives;
        self.hits += other.hits;
        self.unparseable += other.unparseable;
    }

    pub fn recall(&self) -> Option<f64> {
        (self.positives > 0).then(|| self.hits as f64 / self.positives as f64)
    }
}

/// Per-category tallies. Unparseable answers count as "No".
pub fn tally_categories(cases: &[ModerationCase]) -> BTreeMap<Category, CategoryTally> {
    let mut out: BTreeMap<Category, CategoryTally> = BTreeMap::new();
    for c in cases {
        out.entry(c.category).or_default().add(c.gold, extract_binary_answer(&c.model_answer));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubsetTally {
    pub n_recognized: u64,
    pub n_total: u64,
}

impl SubsetTally {
    pub fn from_diff(d: &CharBagDiff) -> Self {
        SubsetTally {
            n_recognized: d.n_matched() as u64,
            n_total: d.n_gt as u64,
        }
    }

    pub fn merge(&mut self, other: &SubsetTally) {
        self.n_recognized += other.n_recognized;
        self.n_total += other.n_total;
    }
}

pub fn subset_recall(t: &SubsetTally) -> Result<f64, EvalError> {
    if t.n_total == 0 {
        return Err(EvalError::EmptySubset(String::new()));
    }
    Ok(t.n_recognized as f64 / t.n_total as f64)
}

/// Pooled character recall over all subsets.
pub fn weighted_overall<'a>(tallies: impl IntoIterator<Item = &'a SubsetTally>) -> Result<f64, EvalError> {
    let mut pooled = SubsetTally::default();
    let mut any = false;
    for t in tallies {
        if t.n_total == 0 {
            return Err(EvalError::EmptySubset(String::new()));
        }
        pooled.merge(t);
        any = true;
    }
    if !any {
        return Err(EvalError::EmptyInput);
    }
    subset_recall(&pooled)
}

pub fn average_k(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialCase {
    pub id: String,
    pub subset: AdversarialSubset,
    pub gold_chars: String,
    pub recognized_chars: String,
}

impl AdversarialCase {
    pub fn tally(&self) -> SubsetTally {
        SubsetTally::from_diff(&CharBagDiff::between(&CharBag::normalized(&self.recognized_chars), &CharBag::normalized(&self.gold_chars)))
    }
}

pub fn tally_subsets(cases: &[AdversarialCase]) -> BTreeMap<AdversarialSubset, SubsetTally> {
    let mut out: BTreeMap<AdversarialSubset, SubsetTally> = BTreeMap::new();
    for c in cases {
        out.entry(c.subset).or_default().merge(&c.tally());
    }
    out
}

/// Share of benign cases whose parsed answer flags a violation.
pub fn false_positive_rate(answers: &[BinaryAnswer]) -> Result<f64, EvalError> {
    if answers.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let flagged = answers.iter().filter(|&&a| a == BinaryAnswer::Yes).count();
    Ok(flagged as f64 / answers.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub metric: String,
    pub baseline: f64,
    pub current: f64,
    pub delta: f64,
}

/// Evaluation summary. Rates are percentages.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalReport {
    pub per_category_recall: BTreeMap<String, f64>,
    pub average_k: Option<f64>,
    pub per_subset_recall: BTreeMap<String, f64>,
    pub weighted_overall: Option<f64>,
    pub false_positive_rate: Option<f64>,
    /// Binary answers that could not be parsed, over all binary answers.
    pub unparseable_rate: Option<f64>,
    pub alarms: Vec<Alarm>,
}

pub const FALSE_POSITIVE_METRIC: &str = "false_positive_rate";

impl EvalReport {
    pub fn build(
        categories: &BTreeMap<Category, CategoryTally>,
        subsets: &BTreeMap<AdversarialSubset, SubsetTally>,
        benign: &[BinaryAnswer],
    ) -> Result<Self, EvalError> {
        let mut report = EvalReport::default();
        let mut all = CategoryTally::default();
        for (cat, t) in categories {
            all.merge(t);
            if let Some(r) = t.recall() {
                report.per_category_recall.insert(cat.as_str().to_string(), 100.0 * r);
            }
        }
        if !report.per_category_recall.is_empty() {
            let values: Vec<f64> = report.per_category_recall.values().copied().collect();
            report.average_k = Some(average_k(&values)?);
        }
        for (subset, t) in subsets {
            let r = subset_recall(t).map_err(|_| EvalError::EmptySubset(subset.as_str().to_string()))?;
            report.per_subset_recall.insert(subset.as_str().to_string(), 100.0 * r);
        }
        if !subsets.is_empty() {
            report.weighted_overall = Some(100.0 * weighted_overall(subsets.values())?);
        }
        let benign_unparseable = benign.iter().filter(|&&a| a == BinaryAnswer::Unparseable).count() as u64;
        if !benign.is_empty() {
            report.false_positive_rate = Some(100.0 * false_positive_rate(benign)?);
        }
        let answered = all.cases + benign.len() as u64;
        if answered > 0 {
            report.unparseable_rate = Some(100.0 * (all.unparseable + benign_unparseable) as f64 / answered as f64);
        }
        Ok(report)
    }

    /// Flat view of every tracked metric, keyed by name.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        for (k, v) in &self.per_category_recall {
            m.insert(alloc::format!("category.{k}"), *v);
        }
        for (k, v) in &self.per_subset_recall {
            m.insert(alloc::format!("subset.{k}"), *v);
        }
        if let Some(v) = self.average_k {
            m.insert("average_k".to_string(), v);
        }
        if let Some(v) = self.weighted_overall {
            m.insert("weighted_overall".to_string(), v);
        }
        if let Some(v) = self.false_positive_rate {
            m.insert(FALSE_POSITIVE_METRIC.to_string(), v);
        }
        m
    }
}

fn lower_is_better(metric: &str) -> bool {
    metric == FALSE_POSITIVE_METRIC
}

/// Metrics that moved the wrong way by more than `threshold_points`,
/// ordered by name.
pub fn drift_alarm(baseline: &EvalReport, current: &EvalReport, threshold_points: f64) -> Result<Vec<Alarm>, EvalError> {
    let b = baseline.metrics();
    let c = current.metrics();
    let mismatched: Vec<String> = b.keys().filter(|k| !c.contains_key(*k)).chain(c.keys().filter(|k| !b.contains_key(*k))).cloned().collect();
    if !mismatched.is_empty() {
        let mut keys = mismatched;
        keys.sort();
        return Err(EvalError::KeyMismatch(keys));
    }
    let mut alarms = Vec::new();
    for (name, &base) in &b {
        let cur = c[name];
        let delta = cur - base;
        let worse = if lower_is_better(name) { delta } else { -delta };
        if worse > threshold_points {
            alarms.push(Alarm {
                metric: name.clone(),
                baseline: base,
                current: cur,
                delta,
            });
        }
    }
    Ok(alarms)
}
