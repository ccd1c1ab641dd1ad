//! Stage orchestration.
//!
//! Every stage reads the previous stage's kept records and writes
//! `<out>/<stage>/` with `part-NNNNN.jsonl` shards plus manifests,
//! `rejects.jsonl`, `quarantine.jsonl` and `report.json`. Each report
//! satisfies `input = output + rejected + quarantined`. Nothing time-dependent
//! is written, so equal inputs and seeds give byte-identical outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use forge_core::cluster::{balanced_downsample, kmeans_fit, reduce_dim, ClusterError};
use forge_core::dedup::{dedup_corpus, make_item, phash, DedupIndex, DedupItem, DedupParams, MinHasher};
use forge_core::difficulty::{curriculum_order, grade_batch, ScorerProfile};
use forge_core::filters::{heuristic_filter, perplexity_filter, safety_filter, text_tokens, NGramLm};
use forge_core::record::{LabelValue, SampleRecord, IMAGE_PLACEHOLDER, VIDEO_PLACEHOLDER};
use forge_core::rewards::{Taxonomy, Verdict};
use forge_core::scorer::{match_score_filter, JudgePromptSpec, ScoreKind, ScoreRequest, ScoreResponse, ScoreValue, Scorer, ScorerError};
use forge_core::vision::{select_grid, TileLayout};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::embeddings::{write_embeddings, EmbeddingMatrix};
use crate::error::{ForgeError, Result};
use crate::index_io::{load_index, save_index};
use crate::media::{load_image, probe_dims};
use crate::shard::{read_lines, read_records, record_to_line, parse_record, sha256_hex, write_json, write_jsonl, write_shard_dir};

pub const SUMMARY_VERSION: u32 = 1;

/// Bundled labeling system prompt.
pub const LABELING_PROMPT: &str = include_str!("../assets/labeling_prompt.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub id: String,
    pub stage: String,
    pub reasons: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub id: String,
    pub stage: String,
    pub error: String,
    /// The record as it entered the stage, for replay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub input: usize,
    pub output: usize,
    pub rejected: usize,
    pub quarantined: usize,
    /// Rejections per reason; a record rejected by two rules counts twice.
    pub reasons: BTreeMap<String, usize>,
    pub shards: usize,
    /// SHA-256 over the stage's shard checksums, in shard order.
    pub checksum: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl StageReport {
    pub fn is_conserved(&self) -> bool {
        self.input == self.output + self.rejected + self.quarantined
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: u32,
    pub seed: u64,
    pub stages: Vec<StageReport>,
    pub final_count: usize,
    pub quarantined: usize,
    /// SHA-256 over every stage checksum.
    pub checksum: String,
}

/// Result of one stage before it is written.
#[derive(Debug, Default)]
pub struct StageOutput {
    pub input: usize,
    pub kept: Vec<SampleRecord>,
    pub rejects: Vec<Reject>,
    pub quarantine: Vec<Quarantined>,
    pub details: serde_json::Value,
}

impl StageOutput {
    fn new(input: usize) -> Self {
        StageOutput {
            input,
            ..Default::default()
        }
    }

    fn reject(&mut self, stage: &str, id: &str, reasons: Vec<String>, detail: Option<String>) {
        self.rejects.push(Reject {
            id: id.to_string(),
            stage: stage.to_string(),
            reasons,
            detail,
        });
    }

    fn quarantine(&mut self, stage: &str, rec: &SampleRecord, error: impl ToString) {
        self.quarantine.push(Quarantined {
            id: rec.id.clone(),
            stage: stage.to_string(),
            error: error.to_string(),
            record: Some(record_to_line(rec)),
        });
    }
}

/// Text used for shingling: placeholders removed.
pub fn dedup_text(text: &str) -> String {
    text.replace(IMAGE_PLACEHOLDER, " ").replace(VIDEO_PLACEHOLDER, " ")
}

/// Dedup keys of a record; images are loaded and hashed.
pub fn dedup_item(rec: &SampleRecord, shard: u32, params: &DedupParams, hasher: &MinHasher, media_root: &Path) -> Result<DedupItem> {
    let phashes = rec
        .images()
        .map(|m| load_image(&m.locator, media_root).map(|img| phash(&img)))
        .collect::<Result<Vec<_>>>()?;
    Ok(make_item(&rec.id, shard, rec.url.as_deref(), &dedup_text(&rec.text), phashes, hasher, params))
}

/// Index over a reference set such as a baseline corpus or an eval split.
pub fn build_index(records: &[SampleRecord], params: &DedupParams, media_root: &Path) -> Result<DedupIndex> {
    let hasher = MinHasher::new(params.num_hashes, params.seed);
    let items = records
        .par_iter()
        .map(|r| dedup_item(r, 0, params, &hasher, media_root))
        .collect::<Result<Vec<_>>>()?;
    Ok(DedupIndex::from_items(*params, &items))
}

/// One embedding of `rec` in `modality` ("text" or "vision").
pub fn embed_with<S: Scorer + ?Sized>(scorer: &mut S, rec: &SampleRecord, modality: &str, dim: usize) -> std::result::Result<Vec<f64>, ScorerError> {
    let req = ScoreRequest::for_record(ScoreKind::Embedding, rec)
        .with("modality", modality)
        .with("dim", dim.to_string());
    match scorer.score(&req)?.value {
        ScoreValue::Vector(v) if v.len() == dim => Ok(v),
        ScoreValue::Vector(v) => Err(ScorerError::SchemaViolation(format!("embedding has {} values, expected {dim}", v.len()))),
        _ => Err(ScorerError::SchemaViolation("embedding response without a vector".into())),
    }
}

/// Writes a stage's shards, rejects, quarantine and report into `dir`.
pub fn write_stage_dir(dir: &Path, stage: &str, out: &StageOutput, shard_size: usize) -> Result<StageReport> {
    let manifests = write_shard_dir(dir, &out.kept, stage, shard_size)?;
    write_jsonl(&dir.join("rejects.jsonl"), &out.rejects)?;
    write_jsonl(&dir.join("quarantine.jsonl"), &out.quarantine)?;
    let mut reasons = BTreeMap::new();
    for r in &out.rejects {
        for reason in &r.reasons {
            *reasons.entry(reason.clone()).or_insert(0) += 1;
        }
    }
    let joined: String = manifests.iter().map(|m| m.checksum.as_str()).collect::<Vec<_>>().join("\n");
    let report = StageReport {
        stage: stage.to_string(),
        input: out.input,
        output: out.kept.len(),
        rejected: out.rejects.len(),
        quarantined: out.quarantine.len(),
        reasons,
        shards: manifests.len(),
        checksum: sha256_hex(joined.as_bytes()),
        details: out.details.clone(),
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// Loads the perplexity model's training text: one sequence per line.
fn train_lm(cfg: &PipelineConfig, fallback: &[SampleRecord]) -> Result<NGramLm> {
    let f = &cfg.filter;
    let mut lm = NGramLm::new(f.lm_order, f.lm_alpha).with_vocab_size(f.lm_vocab_size);
    match &f.lm_corpus {
        Some(path) => {
            for (_, line) in read_lines(path)? {
                lm.train_sequence(&text_tokens(&line));
            }
        }
        None => {
            for r in fallback {
                lm.train_sequence(&text_tokens(&r.text));
            }
        }
    }
    Ok(lm)
}

pub struct Pipeline<'a> {
    pub cfg: &'a PipelineConfig,
    pub scorer: Box<dyn Scorer + Send>,
    /// Writes stage side files here instead of `<output>/<stage>`.
    pub dir_override: Option<PathBuf>,
}

impl<'a> Pipeline<'a> {
    pub fn new(cfg: &'a PipelineConfig, scorer: Box<dyn Scorer + Send>) -> Self {
        Pipeline {
            cfg,
            scorer,
            dir_override: None,
        }
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.dir_override.clone().unwrap_or_else(|| self.cfg.io.output.join(stage))
    }

    /// Runs every configured stage and writes `summary.json` and
    /// `report.txt`. With `strict`, a non-empty quarantine is an error after
    /// all outputs are written.
    pub fn run(&mut self, strict: bool) -> Result<Summary> {
        let cfg = self.cfg;
        let stages = cfg.stages.clone();
        let mut records = if stages.first().map(String::as_str) == Some("ingest") {
            Vec::new()
        } else {
            read_records(&cfg.io.input)?
        };
        let mut reports = Vec::new();
        for stage in &stages {
            let started = Instant::now();
            let input = std::mem::take(&mut records);
            let n_in = input.len();
            let mut out = match stage.as_str() {
                "ingest" => self.ingest()?,
                "filter" => self.filter(input)?,
                "dedup" => self.dedup(input)?,
                "cluster" => self.cluster(input)?,
                "label" => self.label(input)?,
                "judge" => self.judge(input),
                "grade" => self.grade(input),
                "vision" => self.vision(input)?,
                other => return Err(ForgeError::Config(format!("unknown stage {other:?}"))),
            };
            for r in &mut out.kept {
                r.mark_stage(stage);
            }
            let report = self.write_stage(stage, &out)?;
            if !report.is_conserved() {
                return Err(ForgeError::stage(stage, format!("count mismatch: {report:?}")));
            }
            log::info!(
                "{stage}: {} in, {} out, {} rejected, {} quarantined ({:.2?})",
                if stage == "ingest" { report.input } else { n_in },
                report.output,
                report.rejected,
                report.quarantined,
                started.elapsed()
            );
            records = out.kept;
            reports.push(report);
        }
        let quarantined = reports.iter().map(|r| r.quarantined).sum();
        let joined: String = reports.iter().map(|r| r.checksum.as_str()).collect::<Vec<_>>().join("\n");
        let summary = Summary {
            version: SUMMARY_VERSION,
            seed: cfg.seed,
            final_count: records.len(),
            quarantined,
            checksum: sha256_hex(joined.as_bytes()),
            stages: reports,
        };
        write_json(&cfg.io.output.join("summary.json"), &summary)?;
        crate::shard::write_bytes(&cfg.io.output.join("report.txt"), crate::report::summary_table(&summary).as_bytes())?;
        if strict && quarantined > 0 {
            return Err(ForgeError::QuarantineNonEmpty(quarantined));
        }
        Ok(summary)
    }

    fn write_stage(&self, stage: &str, out: &StageOutput) -> Result<StageReport> {
        write_stage_dir(&self.stage_dir(stage), stage, out, self.cfg.shard_size)
    }

    /// Parses raw record files, probing missing image sizes. Malformed
    /// lines, invalid records, unreadable media and repeated ids are
    /// rejected.
    pub fn ingest(&self) -> Result<StageOutput> {
        const STAGE: &str = "ingest";
        let root = self.cfg.media_root();
        let mut lines = Vec::new();
        for input in &self.cfg.io.input {
            for shard in crate::shard::list_shards(input)? {
                let name = shard.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                for (no, text) in read_lines(&shard)? {
                    lines.push((format!("{name}:{no}"), text));
                }
            }
        }
        let parsed: Vec<std::result::Result<SampleRecord, (String, String)>> = lines
            .par_iter()
            .map(|(_, text)| {
                let mut rec = parse_record(text).map_err(|e| (e.reason().to_string(), e.to_string()))?;
                for m in rec.media.iter_mut() {
                    if m.kind == forge_core::record::MediaKind::Image && m.dims().is_none() {
                        let (w, h) = probe_dims(&m.locator, &root).map_err(|e| ("unreadable_media".to_string(), e.to_string()))?;
                        m.width = Some(w);
                        m.height = Some(h);
                    }
                }
                rec.validate().map_err(|e| ("zero_dimension".to_string(), e.to_string()))?;
                Ok(rec)
            })
            .collect();
        let mut out = StageOutput::new(lines.len());
        let mut ids = BTreeSet::new();
        for ((pos, _), res) in lines.iter().zip(parsed) {
            match res {
                Ok(rec) => {
                    if ids.insert(rec.id.clone()) {
                        out.kept.push(rec);
                    } else {
                        out.reject(STAGE, &rec.id, vec!["duplicate_id".into()], Some(pos.clone()));
                    }
                }
                Err((reason, msg)) => out.reject(STAGE, pos, vec![reason], Some(msg)),
            }
        }
        Ok(out)
    }

    /// Geometry, perplexity and safety rules. Perplexity and geometry run
    /// first; only survivors are sent to the safety scorer.
    pub fn filter(&mut self, input: Vec<SampleRecord>) -> Result<StageOutput> {
        const STAGE: &str = "filter";
        let cfg = &self.cfg.filter;
        let lm = train_lm(self.cfg, &input)?;
        let local: Vec<_> = input
            .par_iter()
            .map(|r| heuristic_filter(r, &cfg.rules).map(|v| v.and(perplexity_filter(r, &lm, &cfg.rules))))
            .collect();
        let mut out = StageOutput::new(input.len());
        for (mut rec, verdict) in input.into_iter().zip(local) {
            let verdict = match verdict {
                Ok(v) => v,
                Err(e) => {
                    out.quarantine(STAGE, &rec, e);
                    continue;
                }
            };
            let verdict = if verdict.keep {
                match safety_filter(&rec, &mut self.scorer, &cfg.rules) {
                    Ok(s) => verdict.and(s),
                    Err(e) => {
                        out.quarantine(STAGE, &rec, e);
                        continue;
                    }
                }
            } else {
                verdict
            };
            for (k, v) in &verdict.scores {
                rec.meta.insert(format!("filter.{k}"), format!("{v}"));
            }
            if verdict.keep {
                out.kept.push(rec);
            } else {
                let detail = verdict.scores.iter().map(|(k, v)| format!("{k}={v:.4}")).collect::<Vec<_>>().join(" ");
                out.reject(STAGE, &rec.id, verdict.reasons, Some(detail));
            }
        }
        out.details = serde_json::json!({
            "lm_order": lm.order(),
            "lm_vocab_size": lm.vocab_size(),
        });
        Ok(out)
    }

    /// URL, near-duplicate text and image, and eval-leakage removal. The kept
    /// records' index is saved under `dedup/index`.
    pub fn dedup(&mut self, input: Vec<SampleRecord>) -> Result<StageOutput> {
        const STAGE: &str = "dedup";
        let dc = &self.cfg.dedup;
        let params = dc.params;
        let load = |p: &Option<PathBuf>| -> Result<Option<DedupIndex>> {
            p.as_ref().map(|p| load_index(p)).transpose()
        };
        let baseline = load(&dc.baseline_index)?;
        let eval = load(&dc.eval_index)?;
        let root = self.cfg.media_root();
        let hasher = MinHasher::new(params.num_hashes, params.seed);
        let shard_size = self.cfg.shard_size.max(1);
        let items: Vec<Result<DedupItem>> = input
            .par_iter()
            .enumerate()
            .map(|(i, r)| dedup_item(r, (i / shard_size) as u32, &params, &hasher, &root))
            .collect();
        let mut out = StageOutput::new(input.len());
        let mut ok_items = Vec::new();
        let mut ok_records = Vec::new();
        for (rec, item) in input.into_iter().zip(items) {
            match item {
                Ok(it) => {
                    ok_items.push(it);
                    ok_records.push(rec);
                }
                Err(e) => out.quarantine(STAGE, &rec, e),
            }
        }
        let outcome = dedup_corpus(&ok_items, baseline.as_ref(), eval.as_ref(), &params).map_err(|e| ForgeError::stage(STAGE, e))?;
        let pairs: BTreeMap<&str, &forge_core::dedup::DuplicatePair> =
            outcome.report.duplicate_pairs.iter().map(|p| (p.removed_id.as_str(), p)).collect();
        let kept: BTreeSet<usize> = outcome.kept.iter().copied().collect();
        for (i, rec) in ok_records.into_iter().enumerate() {
            if kept.contains(&i) {
                out.kept.push(rec);
            } else {
                let p = pairs.get(rec.id.as_str()).expect("every removed item has a pair");
                let reason = serde_json::to_value(p.reason).expect("reason").as_str().unwrap_or_default().to_string();
                let source = serde_json::to_value(p.source).expect("source").as_str().unwrap_or_default().to_string();
                out.reject(STAGE, &rec.id, vec![reason], Some(format!("{source}:{}", p.kept_id)));
            }
        }
        let kept_items: Vec<&DedupItem> = outcome.kept.iter().map(|&i| &ok_items[i]).collect();
        save_index(&DedupIndex::from_items(params, kept_items), &self.stage_dir(STAGE).join("index"))?;
        let r = &outcome.report;
        out.details = serde_json::json!({
            "url_dupes": r.url_dupes,
            "text_dupes": r.text_dupes,
            "image_dupes": r.image_dupes,
            "leakage_hits": r.leakage_hits,
        });
        Ok(out)
    }

    fn embed(&mut self, rec: &SampleRecord, modality: &str, dim: usize) -> std::result::Result<Vec<f64>, ScorerError> {
        embed_with(&mut self.scorer, rec, modality, dim)
    }

    /// Fused text and vision embeddings, PCA, k-means and cluster-capped
    /// downsampling.
    pub fn cluster(&mut self, input: Vec<SampleRecord>) -> Result<StageOutput> {
        const STAGE: &str = "cluster";
        let cc = self.cfg.cluster.clone();
        let mut out = StageOutput::new(input.len());
        let mut vecs = Vec::new();
        let mut recs = Vec::new();
        for rec in input {
            let text = self.embed(&rec, "text", cc.embedding_dim);
            let vision = if rec.images().next().is_some() {
                self.embed(&rec, "vision", cc.embedding_dim)
            } else {
                Ok(vec![0.0; cc.embedding_dim])
            };
            match text.and_then(|t| vision.map(|v| [t, v].concat())) {
                Ok(v) => {
                    vecs.push(v);
                    recs.push(rec);
                }
                Err(e) => out.quarantine(STAGE, &rec, e),
            }
        }
        if recs.len() < 2 {
            out.kept = recs;
            out.details = serde_json::json!({ "skipped": "fewer than two records" });
            return Ok(out);
        }
        let dir = self.stage_dir(STAGE);
        write_embeddings(
            &dir.join("embeddings.bin"),
            &EmbeddingMatrix {
                dim: 2 * cc.embedding_dim,
                rows: vecs.clone(),
                ids: Some(recs.iter().map(|r| r.id.clone()).collect()),
            },
        )?;
        let red = reduce_dim(&vecs, cc.target_dim).map_err(|e| ForgeError::stage(STAGE, e))?;
        let seed = self.cfg.seed;
        let k = cc.k.min(recs.len());
        let model = match kmeans_fit(&red.vectors, k, seed, cc.max_iters) {
            Err(ClusterError::KTooLarge { distinct, .. }) if distinct > 0 => kmeans_fit(&red.vectors, distinct, seed, cc.max_iters),
            other => other,
        }
        .map_err(|e| ForgeError::stage(STAGE, e))?;
        let plan = balanced_downsample(&model.assignment, model.k, cc.cap_factor, seed);
        let selected: BTreeSet<usize> = plan.selected.iter().copied().collect();
        for (i, mut rec) in recs.into_iter().enumerate() {
            let c = model.assignment[i];
            rec.meta.insert("cluster".into(), c.to_string());
            if selected.contains(&i) {
                out.kept.push(rec);
            } else {
                out.reject(STAGE, &rec.id, vec!["downsampled".into()], Some(format!("cluster {c}")));
            }
        }
        out.details = serde_json::json!({
            "k": model.k,
            "iterations": model.iterations,
            "inertia": model.inertia,
            "captured_variance_ratio": red.captured_variance_ratio,
            "degenerate": red.degenerate,
            "cap": plan.cap,
            "cluster_sizes": model.sizes(),
            "quotas": plan.per_cluster_quota,
        });
        Ok(out)
    }

    /// Structured analyses from the labeling model. Analyses under the
    /// length floor are quarantined.
    pub fn label(&mut self, input: Vec<SampleRecord>) -> Result<StageOutput> {
        const STAGE: &str = "label";
        let lc = &self.cfg.label;
        let prompt = match &lc.prompt {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ForgeError::Config(format!("{}: {e}", p.display())))?,
            None => LABELING_PROMPT.to_string(),
        };
        let spec = JudgePromptSpec {
            system_prompt: prompt,
            min_analysis_tokens: lc.min_analysis_tokens,
        };
        spec.check_labeling().map_err(|e| ForgeError::Config(e.to_string()))?;
        let taxonomy = Taxonomy::default();
        let mut out = StageOutput::new(input.len());
        for mut rec in input {
            let req = ScoreRequest::for_record(ScoreKind::Label, &rec).with_prompt(spec.clone());
            match self.scorer.score(&req) {
                Ok(resp) => {
                    let ScoreValue::Label(analysis) = resp.value else {
                        out.quarantine(STAGE, &rec, "label response without text");
                        continue;
                    };
                    let verdict = match taxonomy.parse_verdict(&analysis) {
                        Some(Verdict::Violation(c)) => c,
                        Some(Verdict::Safe) => "safe".to_string(),
                        None => "unparsed".to_string(),
                    };
                    rec.labels.insert("verdict".into(), LabelValue::Text(verdict));
                    rec.meta.insert("analysis".into(), analysis);
                    out.kept.push(rec);
                }
                Err(e) => out.quarantine(STAGE, &rec, e),
            }
        }
        Ok(out)
    }

    /// Image-text match scoring; records below the threshold are rejected.
    pub fn judge(&mut self, input: Vec<SampleRecord>) -> StageOutput {
        const STAGE: &str = "judge";
        let mut out = StageOutput::new(input.len());
        let split = match_score_filter(input, &mut self.scorer, self.cfg.judge.threshold);
        out.kept = split.kept;
        for r in &split.removed {
            let score = r.meta.get("match_score").cloned();
            out.reject(STAGE, &r.id, vec!["match_score".into()], score);
        }
        for (r, e) in &split.quarantined {
            out.quarantine(STAGE, r, e);
        }
        out
    }

    /// Difficulty grading over the whole stage input, emitted in curriculum
    /// order (easy, medium, hard).
    pub fn grade(&mut self, input: Vec<SampleRecord>) -> StageOutput {
        const STAGE: &str = "grade";
        let mut out = StageOutput::new(input.len());
        let mut profiles = Vec::new();
        let mut recs = Vec::new();
        for rec in input {
            let req = ScoreRequest::new(ScoreKind::LossProfile, rec.id.clone());
            match self.scorer.score(&req) {
                Ok(ScoreResponse { value: ScoreValue::Losses(l), .. }) => {
                    profiles.push(ScorerProfile {
                        record_id: rec.id.clone(),
                        loss_small: l.loss_small,
                        loss_expert: l.loss_expert,
                        confidence_small: l.confidence_small,
                    });
                    recs.push(rec);
                }
                Ok(_) => out.quarantine(STAGE, &rec, "loss profile response without losses"),
                Err(e) => out.quarantine(STAGE, &rec, e),
            }
        }
        if recs.is_empty() {
            return out;
        }
        let grades = match grade_batch(&profiles, &self.cfg.grade.weights) {
            Ok(g) => g,
            Err(e) => {
                for r in &recs {
                    out.quarantine(STAGE, r, &e);
                }
                return out;
            }
        };
        let mut by_id: BTreeMap<String, SampleRecord> = recs.into_iter().map(|r| (r.id.clone(), r)).collect();
        let mut counts = BTreeMap::new();
        for g in curriculum_order(&grades) {
            let mut rec = by_id.remove(&g.record_id).expect("graded record");
            rec.labels.insert("difficulty".into(), LabelValue::Text(g.grade.as_str().into()));
            rec.meta.insert("difficulty_score".into(), format!("{}", g.score));
            *counts.entry(g.grade.as_str()).or_insert(0usize) += 1;
            out.kept.push(rec);
        }
        out.details = serde_json::json!({ "grades": counts });
        out
    }

    /// Tiling layouts and visual-token budgets. Writes `layouts.jsonl`.
    pub fn vision(&mut self, input: Vec<SampleRecord>) -> Result<StageOutput> {
        const STAGE: &str = "vision";
        let mut out = StageOutput::new(input.len());
        let mut lines = Vec::new();
        let mut total_tokens = 0u64;
        for mut rec in input {
            let layouts: Vec<(String, TileLayout)> = rec
                .images()
                .filter_map(|m| m.dims().map(|(w, h)| (m.locator.clone(), select_grid(w, h))))
                .collect();
            if !layouts.is_empty() {
                let grids: Vec<String> = layouts.iter().map(|(_, l)| format!("{}x{}", l.grid_cols, l.grid_rows)).collect();
                let tokens: u32 = layouts.iter().map(|(_, l)| l.token_count).sum();
                total_tokens += u64::from(tokens);
                rec.meta.insert("tile_grid".into(), grids.join(","));
                rec.meta.insert("visual_tokens".into(), tokens.to_string());
                lines.push(LayoutLine {
                    id: rec.id.clone(),
                    images: layouts.into_iter().map(|(locator, layout)| ImageLayout { locator, layout }).collect(),
                });
            }
            out.kept.push(rec);
        }
        write_jsonl(&self.stage_dir(STAGE).join("layouts.jsonl"), &lines)?;
        out.details = serde_json::json!({
            "records_with_images": lines.len(),
            "visual_tokens": total_tokens,
        });
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageLayout {
    pub locator: String,
    #[serde(flatten)]
    pub layout: TileLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutLine {
    pub id: String,
    pub images: Vec<ImageLayout>,
}
