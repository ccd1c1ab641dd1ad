//! Composite RL reward for structured moderation responses and
//! group-relative advantages.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::text::{quoted_spans, CharBag, CharBagDiff};

pub const BLOCKS: [&str; 4] = ["[Observation]", "[Extraction]", "[Reasoning]", "[Conclusion]"];

pub const DEFAULT_CATEGORIES: [&str; 7] = ["off-platform diversion", "ad", "high-risk", "illegal", "porn", "vulgar", "other"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("group has {got} rewards, expected {expected}")]
    GroupSizeMismatch { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Violation categories a conclusion may name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub categories: Vec<String>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy {
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Safe,
    Violation(String),
}

impl Verdict {
    pub fn is_violation(&self) -> bool {
        matches!(self, Verdict::Violation(_))
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Byte offsets of `needle` in `hay` where it is not glued to other word characters.
fn word_hits(hay: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(i) = hay[from..].find(needle) {
        let at = from + i;
        let end = at + needle.len();
        let before_ok = hay[..at].chars().next_back().is_none_or(|c| !is_word_char(c));
        let after_ok = hay[end..].chars().next().is_none_or(|c| !is_word_char(c));
        if before_ok && after_ok {
            out.push(at);
        }
        from = at + needle.len().max(1);
    }
    out
}

impl Taxonomy {
    /// Reads a verdict from free text such as a conclusion block or a gold
    /// label. A named category wins over "Safe"; the category written last
    /// wins among several.
    pub fn parse_verdict(&self, text: &str) -> Option<Verdict> {
        let lower = text.to_lowercase();
        let mut best: Option<(usize, usize, &String)> = None;
        for cat in &self.categories {
            let needle = cat.to_lowercase();
            if let Some(&at) = word_hits(&lower, &needle).last() {
                let key = (at, needle.len());
                if best.is_none_or(|(a, l, _)| key > (a, l)) {
                    best = Some((key.0, key.1, cat));
                }
            }
        }
        if let Some((_, _, cat)) = best {
            return Some(Verdict::Violation(cat.clone()));
        }
        if !word_hits(&lower, "safe").is_empty() {
            return Some(Verdict::Safe);
        }
        None
    }
}

/// The four blocks of a structured response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blocks<'a> {
    pub observation: &'a str,
    pub extraction: &'a str,
    pub reasoning: &'a str,
    pub conclusion: &'a str,
}

/// Splits a response into its blocks. Each header must occur exactly once and
/// in order.
pub fn parse_blocks(response: &str) -> Option<Blocks<'_>> {
    let mut starts = [0usize; 4];
    for (i, header) in BLOCKS.iter().enumerate() {
        let mut hits = response.match_indices(header);
        let (at, _) = hits.next()?;
        if hits.next().is_some() {
            return None;
        }
        starts[i] = at;
    }
    if starts.windows(2).any(|w| w[0] >= w[1]) {
        return None;
    }
    let body = |i: usize| {
        let from = starts[i] + BLOCKS[i].len();
        let to = if i + 1 < 4 { starts[i + 1] } else { response.len() };
        response[from..to].trim()
    };
    Some(Blocks {
        observation: body(0),
        extraction: body(1),
        reasoning: body(2),
        conclusion: body(3),
    })
}

/// Violating text claimed by a response: its quoted spans in the
/// [Extraction] block, concatenated. Empty when the block is missing.
pub fn extracted_text(response: &str) -> String {
    parse_blocks(response).map(|b| quoted_spans(b.extraction).concat()).unwrap_or_default()
}

/// Bag-similarity OCR reward and the underlying multiset diff.
///
/// The raw score goes negative once hallucinations plus misses exceed the
/// larger bag (e.g. disjoint bags), so it is floored at 0.
pub fn ocr_reward_with(pred: &str, gold: &str, normalize: bool) -> (f64, CharBagDiff) {
    let bag = |s: &str| if normalize { CharBag::normalized(s) } else { CharBag::from_text(s) };
    let diff = CharBagDiff::between(&bag(pred), &bag(gold));
    let denom = diff.n_pred.max(diff.n_gt);
    if denom == 0 {
        return (1.0, diff);
    }
    ((1.0 - (diff.n_halluc + diff.n_miss) as f64 / denom as f64).max(0.0), diff)
}

pub fn ocr_reward(pred: &str, gold: &str) -> (f64, CharBagDiff) {
    ocr_reward_with(pred, gold, true)
}

pub fn format_reward(response: &str, taxonomy: &Taxonomy) -> f64 {
    match parse_blocks(response) {
        Some(b) if taxonomy.parse_verdict(b.conclusion).is_some() => 1.0,
        _ => 0.0,
    }
}

/// 1 when the conclusion's verdict matches the gold label. In binary mode
/// only the violation decision is compared.
pub fn classification_reward(response: &str, gold_label: &str, taxonomy: &Taxonomy, binary: bool) -> f64 {
    let Some(pred) = parse_blocks(response).and_then(|b| taxonomy.parse_verdict(b.conclusion)) else {
        return 0.0;
    };
    let Some(gold) = taxonomy.parse_verdict(gold_label) else {
        return 0.0;
    };
    let hit = if binary { pred.is_violation() == gold.is_violation() } else { pred == gold };
    if hit {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub cls: f64,
    pub fmt: f64,
    pub ocr: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            cls: 1.0,
            fmt: 1.0,
            ocr: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub taxonomy: Taxonomy,
    pub weights: RewardWeights,
    pub binary_classification: bool,
    /// Skip NFKC and whitespace stripping before bagging.
    pub raw_ocr: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample {
    /// Id of the prompt/image the response answers.
    pub x: String,
    /// Generated response.
    pub y: String,
    pub gold_label: String,
    pub gold_violating_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_cls: f64,
    pub r_fmt: f64,
    pub r_ocr: f64,
    pub total: f64,
    pub diff: CharBagDiff,
}

pub fn total_reward(sample: &GroupSample, cfg: &RewardConfig) -> RewardBreakdown {
    let r_cls = classification_reward(&sample.y, &sample.gold_label, &cfg.taxonomy, cfg.binary_classification);
    let r_fmt = format_reward(&sample.y, &cfg.taxonomy);
    let (r_ocr, diff) = ocr_reward_with(&extracted_text(&sample.y), &sample.gold_violating_text, !cfg.raw_ocr);
    let w = cfg.weights;
    RewardBreakdown {
        r_cls,
        r_fmt,
        r_ocr,
        total: w.cls * r_cls + w.fmt * r_fmt + w.ocr * r_ocr,
        diff,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub kl_beta: f64,
    pub std_epsilon: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            kl_beta: 0.01,
            std_epsilon: 1e-8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if self.group_size < 2 {
            return Err(RewardError::InvalidConfig("group_size must be at least 2".into()));
        }
        if !(self.kl_beta >= 0.0) {
            return Err(RewardError::InvalidConfig("kl_beta must be non-negative".into()));
        }
        if !(self.std_epsilon > 0.0) {
            return Err(RewardError::InvalidConfig("std_epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// `(r - mean) / (std + eps)` with the population std of the group; a group
/// of identical rewards gets all zeros.
pub fn group_advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<Vec<f64>, RewardError> {
    cfg.validate()?;
    if rewards.len() != cfg.group_size {
        return Err(RewardError::GroupSizeMismatch {
            expected: cfg.group_size,
            got: rewards.len(),
        });
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(alloc::vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = libm::sqrt(var) + cfg.std_epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const GOOD: &str = "[Observation] A product photo with a caption overlay.\n\
        [Extraction] The overlay reads \"加微信 abc123\" in the corner.\n\
        [Reasoning] The text directs users to an outside contact channel.\n\
        [Conclusion] Determination: **Violation (off-platform diversion)**.";

    fn sample(y: &str, gold_label: &str, gold_text: &str) -> GroupSample {
        GroupSample {
            x: "img-1".into(),
            y: y.into(),
            gold_label: gold_label.into(),
            gold_violating_text: gold_text.into(),
        }
    }

    // independent multiset oracle: counts via sorted vectors
    fn oracle(pred: &str, gold: &str) -> f64 {
        let mut p: Vec<char> = pred.chars().collect();
        let mut g: Vec<char> = gold.chars().collect();
        p.sort_unstable();
        g.sort_unstable();
        let (mut i, mut j, mut matched) = (0, 0, 0);
        while i < p.len() && j < g.len() {
            match p[i].cmp(&g[j]) {
                core::cmp::Ordering::Equal => {
                    matched += 1;
                    i += 1;
                    j += 1;
                }
                core::cmp::Ordering::Less => i += 1,
                core::cmp::Ordering::Greater => j += 1,
            }
        }
        let denom = p.len().max(g.len());
        if denom == 0 {
            1.0
        } else {
            (1.0 - ((p.len() - matched) + (g.len() - matched)) as f64 / denom as f64).max(0.0)
        }
    }

    #[test]
    fn ocr_examples() {
        assert_eq!(ocr_reward("违规文字", "违规文字").0, 1.0);
        let (r, d) = ocr_reward("", "abcde");
        assert_eq!((r, d.n_miss), (0.0, 5));
        let (r, d) = ocr_reward("abcx", "abcd");
        assert_eq!((d.n_halluc, d.n_miss), (1, 1));
        assert_eq!(r, 0.5);
        assert_eq!(ocr_reward("", "").0, 1.0);
        // full-width and spaced variants match after normalization
        assert_eq!(ocr_reward("ＡＢＣ １２", "ABC12").0, 1.0);
        assert!(ocr_reward_with("ＡＢＣ", "ABC", false).0 < 1.0);
    }

    #[test]
    fn format_cases() {
        let t = Taxonomy::default();
        assert_eq!(format_reward(GOOD, &t), 1.0);
        let swapped = GOOD.replace("[Observation]", "[Tmp]").replace("[Reasoning]", "[Observation]").replace("[Tmp]", "[Reasoning]");
        assert_eq!(format_reward(&swapped, &t), 0.0);
        assert_eq!(format_reward(&GOOD.replace("[Extraction]", ""), &t), 0.0);
        let twice = format!("{GOOD}\n[Conclusion] Safe");
        assert_eq!(format_reward(&twice, &t), 0.0);
        let vague = GOOD.replace("**Violation (off-platform diversion)**", "unclear");
        assert_eq!(format_reward(&vague, &t), 0.0);
        assert_eq!(format_reward(&GOOD.replace("**Violation (off-platform diversion)**", "Safe"), &t), 1.0);
    }

    #[test]
    fn classification_cases() {
        let t = Taxonomy::default();
        assert_eq!(classification_reward(GOOD, "Violation (off-platform diversion)", &t, false), 1.0);
        assert_eq!(classification_reward(GOOD, "off-platform diversion", &t, false), 1.0);
        assert_eq!(classification_reward(GOOD, "ad", &t, false), 0.0);
        assert_eq!(classification_reward(GOOD, "ad", &t, true), 1.0);
        let safe = GOOD.replace("**Violation (off-platform diversion)**", "Safe");
        assert_eq!(classification_reward(&safe, "porn", &t, false), 0.0);
        assert_eq!(classification_reward(&safe, "Safe", &t, false), 1.0);
        assert_eq!(classification_reward("no blocks here", "Safe", &t, false), 0.0);
        // "unsafe" is not the word "safe"
        assert_eq!(t.parse_verdict("looks unsafe"), None);
        assert_eq!(t.parse_verdict("an advert"), None);
    }

    #[test]
    fn totals() {
        let cfg = RewardConfig::default();
        let b = total_reward(&sample(GOOD, "off-platform diversion", "加微信abc123"), &cfg);
        assert_eq!((b.r_cls, b.r_fmt, b.r_ocr, b.total), (1.0, 1.0, 1.0, 3.0));
        let half = GOOD.replace("加微信 abc123", "abcd");
        let b = total_reward(&sample(&half, "off-platform diversion", "abcdefgh"), &cfg);
        assert_eq!(b.total, 2.5);
        let b = total_reward(&sample("lorem ipsum", "ad", "abc"), &cfg);
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn advantages() {
        let cfg = |n| GrpoConfig {
            group_size: n,
            ..GrpoConfig::default()
        };
        assert_eq!(group_advantages(&[1.0; 4], &cfg(4)).unwrap(), vec![0.0; 4]);
        let a = group_advantages(&[1.0, 0.0], &cfg(2)).unwrap();
        assert_relative_eq!(a[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(a[1], -1.0, epsilon = 1e-7);
        let a = group_advantages(&[3.0, 1.0, 2.0], &cfg(3)).unwrap();
        assert_relative_eq!(a[0], 1.224_744_871, epsilon = 1e-7);
        assert_relative_eq!(a[1], -1.224_744_871, epsilon = 1e-7);
        assert_eq!(a[2], 0.0);
        assert_eq!(
            group_advantages(&[1.0], &cfg(2)),
            Err(RewardError::GroupSizeMismatch { expected: 2, got: 1 })
        );
        assert!(group_advantages(&[1.0], &cfg(1)).is_err());
        assert_eq!(GrpoConfig::default().kl_beta, 0.01);
    }

    proptest! {
        #[test]
        fn ocr_matches_oracle(a in "[abcde]{0,20}", b in "[abcde]{0,20}") {
            let (r, d) = ocr_reward_with(&a, &b, false);
            prop_assert!((r - oracle(&a, &b)).abs() < 1e-12);
            prop_assert_eq!(r, ocr_reward_with(&b, &a, false).0);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(d.n_halluc <= d.n_pred && d.n_miss <= d.n_gt);
            let mut ca: Vec<char> = a.chars().collect();
            let mut cb: Vec<char> = b.chars().collect();
            ca.sort_unstable();
            cb.sort_unstable();
            prop_assert_eq!(r == 1.0, ca == cb);
            let disjoint = ca.iter().all(|c| !cb.contains(c));
            if disjoint && !(ca.is_empty() && cb.is_empty()) {
                prop_assert_eq!(r, 0.0);
            }
            prop_assert_eq!(r == 0.0, d.n_halluc + d.n_miss >= d.n_pred.max(d.n_gt) && d.n_pred.max(d.n_gt) > 0);
        }

        #[test]
        fn advantage_stats(rs in prop::collection::vec(-5.0f64..5.0, 2..16), rot in 0usize..16) {
            let cfg = GrpoConfig { group_size: rs.len(), ..GrpoConfig::default() };
            let a = group_advantages(&rs, &cfg).unwrap();
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-12);
            let rm = rs.iter().sum::<f64>() / n;
            let rstd = libm::sqrt(rs.iter().map(|r| (r - rm) * (r - rm)).sum::<f64>() / n);
            if rstd > 1e-3 {
                let astd = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>() / n);
                prop_assert!((astd - 1.0).abs() <= cfg.std_epsilon / rstd + 1e-12);
            }
            let k = rot % rs.len();
            let mut rotated = rs.clone();
            rotated.rotate_left(k);
            let mut expect = a.clone();
            expect.rotate_left(k);
            let got = group_advantages(&rotated, &cfg).unwrap();
            for (x, y) in got.iter().zip(&expect) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn total_is_component_sum(y in "\\PC{0,80}", gold in "[a-z]{0,10}") {
            let b = total_reward(&sample(&y, "ad", &gold), &RewardConfig::default());
            prop_assert_eq!(b.total, b.r_cls + b.r_fmt + b.r_ocr);
        }
    }
}
