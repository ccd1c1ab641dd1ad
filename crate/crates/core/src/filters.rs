//! Coarse filtering: image geometry, n-gram perplexity and safety scores.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::record::{SampleRecord, IMAGE_PLACEHOLDER, VIDEO_PLACEHOLDER};
use crate::scorer::{ScoreKind, ScoreRequest, Scorer, ScorerError};
use crate::text::tokenize;

pub const RULE_ASPECT: &str = "aspect_ratio";
pub const RULE_SHORT_EDGE: &str = "short_edge";
pub const RULE_PERPLEXITY: &str = "perplexity";
pub const RULE_SAFETY: &str = "safety";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error("image {locator:?} has no decoded dimensions")]
    MissingDimensions { locator: String },
    #[error("cannot compute perplexity of empty text")]
    EmptyText,
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub max_aspect_ratio: f64,
    pub min_short_edge: u32,
    pub max_perplexity: f64,
    pub safety_threshold: f64,
    /// Tall images (height > width) skip the aspect-ratio rule.
    pub long_image_exempt: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_aspect_ratio: 4.0,
            min_short_edge: 224,
            max_perplexity: 1000.0,
            safety_threshold: 0.5,
            long_image_exempt: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(FilterError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("max_aspect_ratio", self.max_aspect_ratio)?;
        positive("min_short_edge", f64::from(self.min_short_edge))?;
        positive("max_perplexity", self.max_perplexity)?;
        if !(0.0..=1.0).contains(&self.safety_threshold) {
            return Err(FilterError::InvalidConfig(format!(
                "safety_threshold must lie in [0, 1], got {}",
                self.safety_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub keep: bool,
    /// Names of the rules that fired, sorted.
    pub reasons: Vec<String>,
    pub scores: BTreeMap<String, f64>,
}

impl FilterVerdict {
    pub fn pass() -> Self {
        FilterVerdict {
            keep: true,
            ..Default::default()
        }
    }

    pub fn reject(&mut self, rule: &str) {
        self.keep = false;
        if let Err(at) = self.reasons.binary_search_by(|r| r.as_str().cmp(rule)) {
            self.reasons.insert(at, String::from(rule));
        }
    }

    /// Conjunction of two verdicts. Commutative and associative.
    pub fn and(mut self, other: FilterVerdict) -> FilterVerdict {
        for r in other.reasons {
            self.reject(&r);
        }
        self.keep &= other.keep;
        self.scores.extend(other.scores);
        self
    }
}

/// Rejects records carrying any image outside the configured geometry.
pub fn heuristic_filter(record: &SampleRecord, cfg: &FilterConfig) -> Result<FilterVerdict, FilterError> {
    let mut v = FilterVerdict::pass();
    let mut worst_aspect: Option<f64> = None;
    let mut min_short: Option<u32> = None;
    for img in record.images() {
        let (w, h) = img.dims().ok_or_else(|| FilterError::MissingDimensions {
            locator: img.locator.clone(),
        })?;
        let short = w.min(h);
        let aspect = f64::from(w.max(h)) / f64::from(short.max(1));
        if short < cfg.min_short_edge {
            v.reject(RULE_SHORT_EDGE);
        }
        let tall = h > w;
        if aspect > cfg.max_aspect_ratio && !(cfg.long_image_exempt && tall) {
            v.reject(RULE_ASPECT);
        }
        worst_aspect = Some(worst_aspect.map_or(aspect, |a| a.max(aspect)));
        min_short = Some(min_short.map_or(short, |s| s.min(short)));
    }
    if let Some(a) = worst_aspect {
        v.scores.insert(String::from(RULE_ASPECT), a);
    }
    if let Some(s) = min_short {
        v.scores.insert(String::from(RULE_SHORT_EDGE), f64::from(s));
    }
    Ok(v)
}

/// Rejects records whose safety score exceeds the threshold.
///
/// Scorer failures propagate so the caller can quarantine the record.
pub fn safety_filter<S: Scorer>(
    record: &SampleRecord,
    scorer: &mut S,
    cfg: &FilterConfig,
) -> Result<FilterVerdict, ScorerError> {
    let resp = scorer.score(&ScoreRequest::for_record(ScoreKind::Safety, record))?;
    let score = resp
        .score()
        .ok_or_else(|| ScorerError::SchemaViolation(String::from("safety response without a score")))?;
    let mut v = FilterVerdict::pass();
    v.scores.insert(String::from(RULE_SAFETY), score);
    if score > cfg.safety_threshold {
        v.reject(RULE_SAFETY);
    }
    Ok(v)
}

/// Tokens of a record's text with media placeholders removed.
pub fn text_tokens(text: &str) -> Vec<String> {
    tokenize(&text.replace(IMAGE_PLACEHOLDER, " ").replace(VIDEO_PLACEHOLDER, " "))
}

/// Add-alpha smoothed n-gram language model.
///
/// `P(w | c) = (count(c w) + alpha) / (count_as_context(c) + alpha * V)` where
/// `c` is the previous `order - 1` tokens, truncated at the start of the
/// sequence. One vocabulary slot is reserved for unseen tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    order: usize,
    alpha: f64,
    min_vocab: usize,
    vocab: BTreeMap<String, u32>,
    /// Every n-gram of length 1..=order, keyed by token ids.
    counts: BTreeMap<Vec<u32>, u64>,
    /// Occurrences of each sequence of length 0..order as a context.
    context_counts: BTreeMap<Vec<u32>, u64>,
}

const UNK: u32 = u32::MAX;

impl NGramLm {
    pub fn new(order: usize, alpha: f64) -> Self {
        NGramLm {
            order: order.max(1),
            alpha,
            min_vocab: 1,
            vocab: BTreeMap::new(),
            counts: BTreeMap::new(),
            context_counts: BTreeMap::new(),
        }
    }

    /// Reserves at least `size` vocabulary slots (including the unseen slot).
    pub fn with_vocab_size(mut self, size: usize) -> Self {
        self.min_vocab = size.max(1);
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn vocab_size(&self) -> usize {
        (self.vocab.len() + 1).max(self.min_vocab)
    }

    fn id_of(&self, tok: &str) -> u32 {
        self.vocab.get(tok).copied().unwrap_or(UNK)
    }

    pub fn train_sequence<S: AsRef<str>>(&mut self, tokens: &[S]) {
        let ids: Vec<u32> = tokens
            .iter()
            .map(|t| {
                let next = self.vocab.len() as u32;
                *self.vocab.entry(String::from(t.as_ref())).or_insert(next)
            })
            .collect();
        for i in 0..ids.len() {
            let start = i.saturating_sub(self.order - 1);
            for s in start..=i {
                *self.counts.entry(ids[s..=i].to_vec()).or_insert(0) += 1;
                *self.context_counts.entry(ids[s..i].to_vec()).or_insert(0) += 1;
            }
        }
    }

    pub fn train<I, T>(&mut self, sequences: I)
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[String]>,
    {
        for seq in sequences {
            self.train_sequence(seq.as_ref());
        }
    }

    /// `ln P(token | context)`, where `context` is already truncated.
    fn log_prob(&self, context: &[u32], token: u32) -> f64 {
        let v = self.vocab_size() as f64;
        let ctx = self.context_counts.get(context).copied().unwrap_or(0) as f64;
        let joint = if token == UNK || context.contains(&UNK) {
            0.0
        } else {
            let mut key = context.to_vec();
            key.push(token);
            self.counts.get(&key).copied().unwrap_or(0) as f64
        };
        libm::log((joint + self.alpha) / (ctx + self.alpha * v))
    }

    /// Probability of `token` after `context` (raw tokens, any length).
    pub fn prob<S: AsRef<str>>(&self, context: &[S], token: &str) -> f64 {
        let keep = context.len().min(self.order - 1);
        let ctx: Vec<u32> = context[context.len() - keep..].iter().map(|t| self.id_of(t.as_ref())).collect();
        libm::exp(self.log_prob(&ctx, self.id_of(token)))
    }

    /// `exp` of the mean negative log-probability of `tokens`.
    pub fn perplexity<S: AsRef<str>>(&self, tokens: &[S]) -> Result<f64, FilterError> {
        if tokens.is_empty() {
            return Err(FilterError::EmptyText);
        }
        let ids: Vec<u32> = tokens.iter().map(|t| self.id_of(t.as_ref())).collect();
        let mut nll = 0.0;
        for i in 0..ids.len() {
            let start = i.saturating_sub(self.order - 1);
            nll -= self.log_prob(&ids[start..i], ids[i]);
        }
        Ok(libm::exp(nll / ids.len() as f64))
    }

    /// Whether every stored n-gram's (n-1)-prefix is also stored.
    pub fn prefixes_closed(&self) -> bool {
        self.counts
            .keys()
            .all(|k| k.len() == 1 || self.counts.contains_key(&k[..k.len() - 1]))
    }
}

/// Rejects text whose perplexity exceeds `cfg.max_perplexity`. Text-free
/// records pass.
pub fn perplexity_filter(record: &SampleRecord, lm: &NGramLm, cfg: &FilterConfig) -> FilterVerdict {
    let mut v = FilterVerdict::pass();
    let tokens = text_tokens(&record.text);
    if let Ok(ppl) = lm.perplexity(&tokens) {
        v.scores.insert(String::from(RULE_PERPLEXITY), ppl);
        if ppl > cfg.max_perplexity {
            v.reject(RULE_PERPLEXITY);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::MediaRef;
    use crate::scorer::{FnScorer, ScoreResponse, ScoreValue};
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn with_image(w: u32, h: u32) -> SampleRecord {
        SampleRecord::assemble("r", "<image>", vec![MediaRef::image("i.png", w, h)], vec![]).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn geometry_rules() {
        let cfg = FilterConfig::default();
        assert!(heuristic_filter(&with_image(448, 448), &cfg).unwrap().keep);
        let v = heuristic_filter(&with_image(100, 448), &cfg).unwrap();
        assert!(!v.keep);
        assert_eq!(v.reasons, vec![String::from(RULE_SHORT_EDGE)]);
        assert!(heuristic_filter(&with_image(500, 5000), &cfg).unwrap().keep);
        let strict = FilterConfig {
            long_image_exempt: false,
            ..cfg.clone()
        };
        assert_eq!(heuristic_filter(&with_image(500, 5000), &strict).unwrap().reasons, vec![String::from(RULE_ASPECT)]);
        // wide banners are never exempt
        assert!(!heuristic_filter(&with_image(5000, 500), &cfg).unwrap().keep);
    }

    #[test]
    fn rule_table_oracle() {
        // Independent restatement of the geometry rules over a grid of sizes.
        let cfg = FilterConfig::default();
        for w in (50..6000).step_by(157) {
            for h in (50..6000).step_by(211) {
                let short_bad = w.min(h) < 224;
                let aspect_bad = (w.max(h) as f64) > 4.0 * w.min(h) as f64 && !(h > w);
                let want = !(short_bad || aspect_bad);
                assert_eq!(heuristic_filter(&with_image(w, h), &cfg).unwrap().keep, want, "{w}x{h}");
            }
        }
    }

    #[test]
    fn missing_dimensions() {
        let mut r = with_image(10, 10);
        r.media[0].width = None;
        assert!(matches!(heuristic_filter(&r, &FilterConfig::default()), Err(FilterError::MissingDimensions { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        let bad = FilterConfig {
            safety_threshold: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = FilterConfig {
            max_perplexity: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unigram_closed_form() {
        let mut lm = NGramLm::new(1, 1e-12);
        lm.train_sequence(&toks("a a a b"));
        assert_relative_eq!(lm.perplexity(&toks("a a")).unwrap(), 1.0 / 0.75, epsilon = 1e-9);
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let lm = NGramLm::new(3, 0.5).with_vocab_size(37);
        assert_relative_eq!(lm.perplexity(&toks("anything at all here")).unwrap(), 37.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_text_errors() {
        let lm = NGramLm::new(3, 1.0);
        assert_eq!(lm.perplexity::<String>(&[]), Err(FilterError::EmptyText));
    }

    #[test]
    fn training_text_beats_its_reversal() {
        let corpus = toks("the cat sat on the mat while the dog slept by the door");
        let mut lm = NGramLm::new(3, 1.0);
        lm.train_sequence(&corpus);
        let mut rev = corpus.clone();
        rev.reverse();
        assert!(lm.perplexity(&corpus).unwrap() <= lm.perplexity(&rev).unwrap());
        assert!(lm.prefixes_closed());
    }

    #[test]
    fn distributions_sum_to_one() {
        let mut lm = NGramLm::new(3, 0.7);
        lm.train_sequence(&toks("a b c a b d a c c b"));
        let vocab = ["a", "b", "c", "d"];
        for ctx in [vec![], vec!["a"], vec!["a", "b"], vec!["c", "c"], vec!["z", "a"]] {
            let mut total: f64 = vocab.iter().map(|w| lm.prob(&ctx, w)).sum();
            total += lm.prob(&ctx, "<never-seen>");
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn safety_threshold() {
        let cfg = FilterConfig::default();
        let rec = SampleRecord::text_only("r", "x");
        let fixed = |s: f64| {
            FnScorer(move |req: &ScoreRequest| {
                Ok(ScoreResponse {
                    record_id: req.record_id.clone(),
                    kind: req.kind,
                    value: ScoreValue::Score(s),
                    attempts: 1,
                })
            })
        };
        let v = safety_filter(&rec, &mut fixed(0.9), &cfg).unwrap();
        assert!(!v.keep);
        assert_eq!(v.scores[RULE_SAFETY], 0.9);
        assert!(safety_filter(&rec, &mut fixed(0.0), &cfg).unwrap().keep);
        let mut down = FnScorer(|_: &ScoreRequest| {
            Err(ScorerError::Unavailable {
                attempts: 3,
                reason: String::from("x"),
            })
        });
        assert!(safety_filter(&rec, &mut down, &cfg).is_err());
    }

    #[test]
    fn safety_interception_rate_fixture() {
        // 172 of 1,000 records scored high-risk.
        let cfg = FilterConfig::default();
        let mut scorer = FnScorer(|req: &ScoreRequest| {
            let i: usize = req.record_id.parse().unwrap();
            Ok(ScoreResponse {
                record_id: req.record_id.clone(),
                kind: req.kind,
                value: ScoreValue::Score(if i < 172 { 0.93 } else { 0.12 }),
                attempts: 1,
            })
        });
        let rejected = (0..1000)
            .filter(|i| !safety_filter(&SampleRecord::text_only(format!("{i}"), "t"), &mut scorer, &cfg).unwrap().keep)
            .count();
        assert_eq!(rejected as f64 / 1000.0, 0.172);
    }

    proptest! {
        #[test]
        fn adding_sentence_never_raises_its_unigram_perplexity(
            base in proptest::collection::vec(0u8..6, 0..40),
            sent in proptest::collection::vec(0u8..6, 1..15),
            alpha in 0.01f64..3.0,
        ) {
            let words = |v: &[u8]| v.iter().map(|b| format!("w{b}")).collect::<Vec<_>>();
            let mut before = NGramLm::new(1, alpha).with_vocab_size(16);
            before.train_sequence(&words(&base));
            let mut after = before.clone();
            after.train_sequence(&words(&sent));
            let s = words(&sent);
            prop_assert!(after.perplexity(&s).unwrap() <= before.perplexity(&s).unwrap() * (1.0 + 1e-12));
        }

        #[test]
        fn verdict_conjunction_commutes(a in any::<[bool; 3]>(), b in any::<[bool; 3]>()) {
            let mk = |flags: [bool; 3]| {
                let mut v = FilterVerdict::pass();
                for (i, f) in flags.iter().enumerate() {
                    if *f { v.reject(["x", "y", "z"][i]); }
                }
                v
            };
            let ab = mk(a).and(mk(b));
            let ba = mk(b).and(mk(a));
            prop_assert_eq!(ab.keep, ba.keep);
            prop_assert_eq!(ab.reasons, ba.reasons);
        }
    }
}
