//! Contract for external models: labelers, judges, safety classifiers,
//! embedders and loss-rescoring teachers.
//!
//! Every kind travels in the same [`ScoreRequest`] / [`ScoreResponse`] shape
//! with a `kind` tag, so transports for different vendors plug in behind one
//! trait. [`StubScorer`] answers every kind offline as a pure function of
//! `(seed, record_id, kind)`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::hashing::{hash_str, hash_u64s, mix64, unit_f64};
use crate::record::SampleRecord;
use crate::text::token_count;

/// Minimum system-prompt length for labeling requests, in tokens.
pub const LABELING_PROMPT_FLOOR: usize = 800;
/// Default minimum analysis length for labeling responses, in tokens.
pub const DEFAULT_MIN_ANALYSIS_TOKENS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Label,
    MatchScore,
    Safety,
    Embedding,
    LossProfile,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Label => "label",
            ScoreKind::MatchScore => "match_score",
            ScoreKind::Safety => "safety",
            ScoreKind::Embedding => "embedding",
            ScoreKind::LossProfile => "loss_profile",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePromptSpec {
    pub system_prompt: String,
    pub min_analysis_tokens: usize,
}

impl JudgePromptSpec {
    /// A labeling-mode spec. The system prompt must reach
    /// [`LABELING_PROMPT_FLOOR`] tokens.
    pub fn labeling(system_prompt: impl Into<String>) -> Result<Self, ScorerError> {
        let spec = JudgePromptSpec {
            system_prompt: system_prompt.into(),
            min_analysis_tokens: DEFAULT_MIN_ANALYSIS_TOKENS,
        };
        spec.check_labeling()?;
        Ok(spec)
    }

    pub fn check_labeling(&self) -> Result<(), ScorerError> {
        let tokens = token_count(&self.system_prompt);
        if tokens < LABELING_PROMPT_FLOOR {
            return Err(ScorerError::PromptTooShort {
                tokens,
                floor: LABELING_PROMPT_FLOOR,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub kind: ScoreKind,
    pub record_id: String,
    /// Record excerpt. `text` is required for `label` and `match_score`;
    /// `modality` (text or vision) and `dim` are read by `embedding`.
    #[serde(default)]
    pub payload: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_spec: Option<JudgePromptSpec>,
}

impl ScoreRequest {
    pub fn new(kind: ScoreKind, record_id: impl Into<String>) -> Self {
        ScoreRequest {
            kind,
            record_id: record_id.into(),
            payload: BTreeMap::new(),
            prompt_spec: None,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.payload.insert(String::from(key), value.into());
        self
    }

    pub fn with_prompt(mut self, spec: JudgePromptSpec) -> Self {
        self.prompt_spec = Some(spec);
        self
    }

    /// Request for `record` carrying its text as payload.
    pub fn for_record(kind: ScoreKind, record: &SampleRecord) -> Self {
        ScoreRequest::new(kind, record.id.clone()).with("text", record.text.clone())
    }

    /// Checks the payload fields `kind` requires.
    pub fn check(&self) -> Result<(), ScorerError> {
        let need = |key: &str| {
            if self.payload.contains_key(key) {
                Ok(())
            } else {
                Err(ScorerError::SchemaViolation(format!(
                    "{} request for {} lacks payload field {key:?}",
                    self.kind.as_str(),
                    self.record_id
                )))
            }
        };
        match self.kind {
            ScoreKind::Label => {
                need("text")?;
                match &self.prompt_spec {
                    Some(spec) => spec.check_labeling(),
                    None => Err(ScorerError::SchemaViolation(format!(
                        "label request for {} has no prompt spec",
                        self.record_id
                    ))),
                }
            }
            ScoreKind::MatchScore => need("text"),
            ScoreKind::Embedding => need("modality"),
            ScoreKind::Safety | ScoreKind::LossProfile => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPair {
    pub loss_small: f64,
    pub loss_expert: f64,
    pub confidence_small: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreValue {
    Label(String),
    Score(f64),
    Vector(Vec<f64>),
    Losses(LossPair),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub record_id: String,
    pub kind: ScoreKind,
    pub value: ScoreValue,
    #[serde(default = "one")]
    pub attempts: u32,
}

fn one() -> u32 {
    1
}

impl ScoreResponse {
    pub fn score(&self) -> Option<f64> {
        match self.value {
            ScoreValue::Score(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScorerError {
    #[error("scorer unavailable after {attempts} attempt(s): {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("labeling analysis has {tokens} tokens, below the floor of {floor}")]
    QualityTooLow { tokens: usize, floor: usize },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("labeling system prompt has {tokens} tokens, below the floor of {floor}")]
    PromptTooShort { tokens: usize, floor: usize },
}

/// Checks that `resp` answers `req` with a value of the right shape.
pub fn validate_response(req: &ScoreRequest, resp: &ScoreResponse) -> Result<(), ScorerError> {
    let bad = |what: String| Err(ScorerError::SchemaViolation(what));
    if resp.kind != req.kind {
        return bad(format!("expected {} response, got {}", req.kind.as_str(), resp.kind.as_str()));
    }
    if resp.record_id != req.record_id {
        return bad(format!("response for {} answered request {}", resp.record_id, req.record_id));
    }
    match (req.kind, &resp.value) {
        (ScoreKind::Label, ScoreValue::Label(text)) => {
            let floor = req
                .prompt_spec
                .as_ref()
                .map_or(DEFAULT_MIN_ANALYSIS_TOKENS, |s| s.min_analysis_tokens);
            let tokens = token_count(text);
            if tokens < floor {
                return Err(ScorerError::QualityTooLow { tokens, floor });
            }
            Ok(())
        }
        (ScoreKind::MatchScore | ScoreKind::Safety, ScoreValue::Score(s)) => {
            if (0.0..=1.0).contains(s) {
                Ok(())
            } else {
                bad(format!("score {s} outside [0, 1]"))
            }
        }
        (ScoreKind::Embedding, ScoreValue::Vector(v)) => {
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                bad(String::from("embedding must be a non-empty finite vector"))
            } else {
                Ok(())
            }
        }
        (ScoreKind::LossProfile, ScoreValue::Losses(l)) => {
            let ok = l.loss_small.is_finite()
                && l.loss_expert.is_finite()
                && l.loss_small >= 0.0
                && l.loss_expert >= 0.0
                && (0.0..=1.0).contains(&l.confidence_small);
            if ok {
                Ok(())
            } else {
                bad(String::from("loss profile out of range"))
            }
        }
        (kind, _) => bad(format!("value type does not match kind {}", kind.as_str())),
    }
}

/// Anything that answers score requests.
pub trait Scorer {
    fn score(&mut self, req: &ScoreRequest) -> Result<ScoreResponse, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &mut S {
    fn score(&mut self, req: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        (**self).score(req)
    }
}

impl<S: Scorer + ?Sized> Scorer for alloc::boxed::Box<S> {
    fn score(&mut self, req: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        (**self).score(req)
    }
}

/// Adapts a closure into a [`Scorer`].
pub struct FnScorer<F>(pub F);

impl<F> Scorer for FnScorer<F>
where
    F: FnMut(&ScoreRequest) -> Result<ScoreResponse, ScorerError>,
{
    fn score(&mut self, req: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        (self.0)(req)
    }
}

/// Deterministic offline scorer.
///
/// Value distributions, with `u` uniform in `[0, 1)` drawn from
/// `hash(seed, record_id, kind)`:
/// - safety: `u^4` (about 16% above 0.5)
/// - match_score: `1 - u^4`
/// - label: an analysis of `120 + floor(400 u)` tokens
/// - embedding: standard normal entries, keyed additionally by modality
/// - loss_profile: `loss_small = 0.5 + 3u`, `loss_expert` a fraction of it
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StubScorer {
    pub seed: u64,
    pub embedding_dim: usize,
}

impl Default for StubScorer {
    fn default() -> Self {
        StubScorer {
            seed: 0,
            embedding_dim: 32,
        }
    }
}

impl StubScorer {
    pub fn new(seed: u64) -> Self {
        StubScorer {
            seed,
            ..Default::default()
        }
    }

    fn key(&self, req: &ScoreRequest) -> u64 {
        hash_u64s(
            &[hash_str(&req.record_id, self.seed), hash_str(req.kind.as_str(), 0)],
            self.seed,
        )
    }

    /// Answers `req` without validation or request checks.
    pub fn answer(&self, req: &ScoreRequest) -> ScoreResponse {
        let key = self.key(req);
        let u = unit_f64(key);
        let value = match req.kind {
            ScoreKind::Safety => ScoreValue::Score(u * u * u * u),
            ScoreKind::MatchScore => ScoreValue::Score(1.0 - u * u * u * u),
            ScoreKind::Label => {
                let n = 120 + (u * 400.0) as usize;
                ScoreValue::Label(stub_analysis(&req.record_id, n))
            }
            ScoreKind::Embedding => {
                let modality = req.payload.get("modality").map_or("", String::as_str);
                let dim = req
                    .payload
                    .get("dim")
                    .and_then(|d| d.parse().ok())
                    .unwrap_or(self.embedding_dim)
                    .max(1);
                let base = mix64(key ^ hash_str(modality, 7));
                ScoreValue::Vector((0..dim).map(|i| gaussian(base, i as u64)).collect())
            }
            ScoreKind::LossProfile => {
                let u2 = unit_f64(mix64(key ^ 0x5151));
                let loss_small = 0.5 + 3.0 * u;
                let loss_expert = loss_small * (0.3 + 0.6 * u2);
                ScoreValue::Losses(LossPair {
                    loss_small,
                    loss_expert,
                    confidence_small: libm::exp(-loss_small),
                })
            }
        };
        ScoreResponse {
            record_id: req.record_id.clone(),
            kind: req.kind,
            value,
            attempts: 1,
        }
    }
}

impl Scorer for StubScorer {
    fn score(&mut self, req: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        req.check()?;
        let resp = self.answer(req);
        validate_response(req, &resp)?;
        Ok(resp)
    }
}

fn gaussian(base: u64, i: u64) -> f64 {
    // Box-Muller on two hashed uniforms
    let u1 = unit_f64(mix64(base ^ (2 * i + 1))).max(f64::MIN_POSITIVE);
    let u2 = unit_f64(mix64(base ^ (2 * i + 2)));
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

fn stub_analysis(record_id: &str, tokens: usize) -> String {
    let mut s = String::from("[Observation] stub");
    let mut n = 2;
    while n + 4 < tokens {
        s.push_str(" token");
        n += 1;
    }
    s.push_str(&format!(" [Conclusion] Safe {record_id}"));
    s
}

/// Outcome of a threshold filter backed by a scorer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredSplit {
    pub kept: Vec<SampleRecord>,
    pub removed: Vec<SampleRecord>,
    /// Records whose scoring failed, paired with the failure.
    pub quarantined: Vec<(SampleRecord, ScorerError)>,
}

/// Keeps records whose image-text match score reaches `threshold`.
///
/// The score is written to `meta["match_score"]` on kept and removed records.
pub fn match_score_filter<S: Scorer>(records: Vec<SampleRecord>, scorer: &mut S, threshold: f64) -> ScoredSplit {
    let mut out = ScoredSplit::default();
    for mut rec in records {
        let req = ScoreRequest::for_record(ScoreKind::MatchScore, &rec);
        match scorer.score(&req).and_then(|r| {
            r.score()
                .ok_or_else(|| ScorerError::SchemaViolation(String::from("match_score without a score")))
        }) {
            Ok(score) => {
                rec.meta.insert(String::from("match_score"), format!("{score}"));
                if score >= threshold {
                    out.kept.push(rec);
                } else {
                    out.removed.push(rec);
                }
            }
            Err(e) => out.quarantined.push((rec, e)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn score_of(id: &str, s: f64) -> ScoreResponse {
        ScoreResponse {
            record_id: String::from(id),
            kind: ScoreKind::MatchScore,
            value: ScoreValue::Score(s),
            attempts: 1,
        }
    }

    #[test]
    fn stub_is_deterministic() {
        let mut a = StubScorer::new(42);
        let mut b = StubScorer::new(42);
        let req = ScoreRequest::new(ScoreKind::Safety, "r1");
        assert_eq!(a.score(&req).unwrap(), b.score(&req).unwrap());
        let other = StubScorer::new(43).answer(&req);
        assert_ne!(a.answer(&req), other);
    }

    #[test]
    fn short_analysis_is_rejected() {
        let spec = JudgePromptSpec {
            system_prompt: String::new(),
            min_analysis_tokens: 200,
        };
        let req = ScoreRequest::new(ScoreKind::Label, "r").with("text", "t").with_prompt(spec);
        let words: Vec<&str> = vec!["w"; 50];
        let resp = ScoreResponse {
            record_id: String::from("r"),
            kind: ScoreKind::Label,
            value: ScoreValue::Label(words.join(" ")),
            attempts: 1,
        };
        assert_eq!(
            validate_response(&req, &resp),
            Err(ScorerError::QualityTooLow { tokens: 50, floor: 200 })
        );
    }

    #[test]
    fn labeling_prompt_floor() {
        assert!(matches!(
            JudgePromptSpec::labeling("too short"),
            Err(ScorerError::PromptTooShort { tokens: 2, .. })
        ));
        let long: Vec<&str> = vec!["rule"; 800];
        assert!(JudgePromptSpec::labeling(long.join(" ")).is_ok());
    }

    #[test]
    fn wrong_value_type_is_schema_violation() {
        let req = ScoreRequest::new(ScoreKind::Safety, "r");
        let mut resp = score_of("r", 0.5);
        resp.kind = ScoreKind::Safety;
        assert!(validate_response(&req, &resp).is_ok());
        resp.value = ScoreValue::Vector(vec![1.0]);
        assert!(matches!(validate_response(&req, &resp), Err(ScorerError::SchemaViolation(_))));
        resp.value = ScoreValue::Score(1.5);
        assert!(matches!(validate_response(&req, &resp), Err(ScorerError::SchemaViolation(_))));
    }

    #[test]
    fn match_filter_thresholds() {
        let recs = vec![
            SampleRecord::text_only("hi", "a"),
            SampleRecord::text_only("lo", "b"),
            SampleRecord::text_only("err", "c"),
        ];
        let mut scorer = FnScorer(|req: &ScoreRequest| match req.record_id.as_str() {
            "hi" => Ok(score_of("hi", 1.0)),
            "lo" => Ok(score_of("lo", 0.0)),
            _ => Err(ScorerError::Unavailable {
                attempts: 3,
                reason: String::from("down"),
            }),
        });
        let split = match_score_filter(recs, &mut scorer, 0.3);
        assert_eq!(split.kept.len(), 1);
        assert_eq!(split.kept[0].meta["match_score"], "1");
        assert_eq!(split.removed.len(), 1);
        assert_eq!(split.quarantined.len(), 1);
    }

    #[test]
    fn retention_one_in_twelve() {
        // 700 of 8,400 pass: the 70k-of-840k teacher-consensus ratio at 1:100.
        let recs: Vec<_> = (0..8400).map(|i| SampleRecord::text_only(format!("r{i}"), "t")).collect();
        let mut scorer = FnScorer(|req: &ScoreRequest| {
            let i: usize = req.record_id[1..].parse().unwrap();
            Ok(score_of(&req.record_id, if i % 12 == 0 { 0.9 } else { 0.1 }))
        });
        let split = match_score_filter(recs, &mut scorer, 0.3);
        assert_eq!(split.kept.len(), 700);
        assert_eq!(split.kept.len() * 12, 8400);
        assert_eq!(split.kept.len() + split.removed.len() + split.quarantined.len(), 8400);
    }

    #[test]
    fn embedding_modalities_differ() {
        let s = StubScorer::new(1);
        let t = s.answer(&ScoreRequest::new(ScoreKind::Embedding, "r").with("modality", "text"));
        let v = s.answer(&ScoreRequest::new(ScoreKind::Embedding, "r").with("modality", "vision"));
        assert_ne!(t.value, v.value);
        match t.value {
            ScoreValue::Vector(x) => assert_eq!(x.len(), 32),
            _ => panic!(),
        }
    }
}
