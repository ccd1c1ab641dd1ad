//! The `forge` command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use forge_core::cluster::{balanced_downsample, kmeans_fit, reduce_dim, ClusterError, SamplingPlan};
use forge_core::dedup::DedupParams;
use forge_core::difficulty::{curriculum_order, grade_batch, DifficultyWeights, ScorerProfile};
use forge_core::eval::{
    drift_alarm, extract_binary_answer, tally_categories, tally_subsets, AdversarialCase, AdversarialSubset, BinaryAnswer, Category,
    EvalReport, ModerationCase,
};
use forge_core::rewards::{group_advantages, parse_blocks, extracted_text, total_reward, GroupSample, GrpoConfig, RewardConfig};
use forge_core::vision::{low_pass, tile_image};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::embeddings::{read_embeddings, write_embeddings, EmbeddingMatrix};
use crate::error::{ForgeError, Result, EXIT_OK};
use crate::index_io::save_index;
use crate::media::{load_image, save_png};
use crate::pipeline::{build_index, write_stage_dir, LayoutLine, Pipeline};
use crate::report::{drift_table, eval_table, summary_table};
use crate::shard::{list_shards, pack_tar, read_jsonl, read_records, read_shard, write_json, write_jsonl};
use crate::synth::{write_synth, SynthParams};

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Curate multimodal moderation corpora")]
pub struct Cli {
    /// Worker threads for per-record work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse raw record files into validated shards.
    Ingest(IngestArgs),
    /// Apply geometry, perplexity and safety filters.
    Filter(FilterArgs),
    /// Remove duplicates and eval leakage.
    Dedup(DedupArgs),
    /// Build a dedup index from records.
    Index(IndexArgs),
    /// Compute fused embeddings for records.
    Embed(EmbedArgs),
    /// Cluster embeddings and plan a balanced downsample.
    Cluster(ClusterArgs),
    /// Grade loss profiles into easy, medium and hard.
    Grade(GradeArgs),
    /// Tiling layouts and optional low-passed tiles.
    PrepVision(PrepVisionArgs),
    /// Score grouped responses and compute group-relative advantages.
    Reward(RewardArgs),
    /// Score model answers against eval cases.
    Eval(EvalArgs),
    /// Compare two eval reports and list regressions.
    Report(ReportArgs),
    /// Run the configured pipeline.
    Run(RunArgs),
    /// Write a synthetic corpus with planted flaws.
    Synth(SynthArgs),
    /// Pack a shard directory into a tar archive.
    Pack(PackArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub shard_size: usize,
    /// Base directory for relative image paths (default: current directory).
    #[arg(long)]
    pub media_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in", required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Rejections file (default: `<out>/rejects.jsonl`).
    #[arg(long)]
    pub rejects: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in", required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Dedup report (default: `<out>/report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in", required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub media_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in", required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Embedding matrix file.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub k: usize,
    /// Per-cluster cap as a multiple of the mean cluster size.
    #[arg(long, default_value_t = 2.0)]
    pub cap: f64,
    /// Sampling plan file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub target_dim: usize,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
}

#[derive(Debug, Args)]
pub struct GradeArgs {
    /// JSONL of `{record_id, loss_small, loss_expert, confidence_small}`.
    #[arg(long)]
    pub profiles: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub w_loss: f64,
    #[arg(long, default_value_t = 0.5)]
    pub w_gap: f64,
}

#[derive(Debug, Args)]
pub struct PrepVisionArgs {
    #[arg(long = "in", required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of highest-frequency DCT coefficients removed per tile.
    #[arg(long, default_value_t = 0.03)]
    pub lowpass: f64,
    /// Write low-passed tiles as PNG under `<out>/tiles/`.
    #[arg(long)]
    pub emit_tiles: bool,
    #[arg(long)]
    pub media_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RewardArgs {
    /// JSONL of `{id, group, response}`.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// JSONL of `{group, label, violating_text}`.
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub kl_beta: f64,
    /// Score classification as violation versus safe only.
    #[arg(long)]
    pub binary: bool,
    /// Compare extracted text without normalization.
    #[arg(long)]
    pub raw_ocr: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Case files or directories (JSONL).
    #[arg(long, required = true, num_args = 1..)]
    pub cases: Vec<PathBuf>,
    /// JSONL of `{id, answer}`.
    #[arg(long)]
    pub answers: PathBuf,
    /// Report JSON; a text table is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub current: PathBuf,
    #[arg(long, default_value_t = forge_core::eval::DEFAULT_DRIFT_THRESHOLD)]
    pub threshold: f64,
    /// Exit with status 2 when any alarm fires.
    #[arg(long)]
    pub fail_on_alarm: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Exit with status 3 when any record was quarantined.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Config for a single-stage command: the file when given, else defaults.
fn stage_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => {
            let mut cfg = PipelineConfig::new(Vec::new(), PathBuf::new());
            cfg.resolve_paths(Path::new("."));
            Ok(cfg)
        }
    }
}

fn single_stage<'a>(cfg: &'a PipelineConfig, out: &Path) -> Result<Pipeline<'a>> {
    let mut p = Pipeline::new(cfg, cfg.scorer()?);
    p.dir_override = Some(out.to_path_buf());
    Ok(p)
}

pub fn run(cli: Cli) -> Result<i32> {
    if cli.workers > 0 {
        // a second initialization (tests) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global();
    }
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Filter(a) => filter(a),
        Command::Dedup(a) => dedup(a),
        Command::Index(a) => index(a),
        Command::Embed(a) => embed(a),
        Command::Cluster(a) => cluster(a),
        Command::Grade(a) => grade(a),
        Command::PrepVision(a) => prep_vision(a),
        Command::Reward(a) => reward(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run_pipeline(a),
        Command::Synth(a) => synth(a),
        Command::Pack(a) => {
            let n = pack_tar(&a.input, &a.out)?;
            println!("packed {n} files into {}", a.out.display());
            Ok(EXIT_OK)
        }
    }
}

fn print_stage(r: &crate::pipeline::StageReport) {
    println!(
        "{}: {} in, {} out, {} rejected, {} quarantined",
        r.stage, r.input, r.output, r.rejected, r.quarantined
    );
}

fn ingest(a: IngestArgs) -> Result<i32> {
    let mut cfg = PipelineConfig::new(a.input, a.out.clone());
    cfg.shard_size = a.shard_size;
    cfg.io.media_root = Some(a.media_root.unwrap_or_else(|| PathBuf::from(".")));
    cfg.validate_run()?;
    let p = single_stage(&cfg, &a.out)?;
    let out = p.ingest()?;
    let r = write_stage_dir(&a.out, "ingest", &out, cfg.shard_size)?;
    print_stage(&r);
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct ShardRejections {
    shard: String,
    input: usize,
    rejected: usize,
    quarantined: usize,
    reasons: BTreeMap<String, usize>,
}

fn filter(a: FilterArgs) -> Result<i32> {
    let cfg = stage_config(a.config.as_deref())?;
    let mut shard_of = BTreeMap::new();
    let mut records = Vec::new();
    let mut shard_names = Vec::new();
    for input in &a.input {
        for shard in list_shards(input)? {
            let name = shard.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            for r in read_shard(&shard)? {
                shard_of.insert(r.id.clone(), shard_names.len());
                records.push(r);
            }
            shard_names.push(name);
        }
    }
    let mut p = single_stage(&cfg, &a.out)?;
    let out = p.filter(records)?;
    let mut per_shard: Vec<ShardRejections> = shard_names
        .iter()
        .map(|s| ShardRejections {
            shard: s.clone(),
            input: 0,
            rejected: 0,
            quarantined: 0,
            reasons: BTreeMap::new(),
        })
        .collect();
    for &s in shard_of.values() {
        per_shard[s].input += 1;
    }
    for r in &out.rejects {
        let s = &mut per_shard[shard_of[&r.id]];
        s.rejected += 1;
        for reason in &r.reasons {
            *s.reasons.entry(reason.clone()).or_insert(0) += 1;
        }
    }
    for q in &out.quarantine {
        per_shard[shard_of[&q.id]].quarantined += 1;
    }
    let r = write_stage_dir(&a.out, "filter", &out, cfg.shard_size)?;
    if let Some(path) = &a.rejects {
        write_jsonl(path, &out.rejects)?;
    }
    write_json(&a.out.join("rejection_summary.json"), &per_shard)?;
    print_stage(&r);
    Ok(EXIT_OK)
}

fn dedup(a: DedupArgs) -> Result<i32> {
    let mut cfg = stage_config(a.config.as_deref())?;
    if a.baseline.is_some() {
        cfg.dedup.baseline_index = a.baseline.clone();
    }
    if a.eval.is_some() {
        cfg.dedup.eval_index = a.eval.clone();
    }
    let records = read_records(&a.input)?;
    let mut p = single_stage(&cfg, &a.out)?;
    let out = p.dedup(records)?;
    let r = write_stage_dir(&a.out, "dedup", &out, cfg.shard_size)?;
    if let Some(path) = &a.report {
        write_json(path, &r)?;
    }
    print_stage(&r);
    Ok(EXIT_OK)
}

fn index(a: IndexArgs) -> Result<i32> {
    let cfg = stage_config(a.config.as_deref())?;
    let records = read_records(&a.input)?;
    let root = a.media_root.unwrap_or_else(|| cfg.media_root());
    let idx = build_index(&records, &cfg.dedup.params, &root)?;
    save_index(&idx, &a.out)?;
    println!("indexed {} records into {}", records.len(), a.out.display());
    Ok(EXIT_OK)
}

fn embed(a: EmbedArgs) -> Result<i32> {
    let cfg = stage_config(a.config.as_deref())?;
    let records = read_records(&a.input)?;
    let dim = cfg.cluster.embedding_dim;
    let mut scorer = cfg.scorer()?;
    let mut rows = Vec::with_capacity(records.len());
    for r in &records {
        let text = crate::pipeline::embed_with(&mut scorer, r, "text", dim).map_err(|e| ForgeError::stage("embed", e))?;
        let vision = if r.images().next().is_some() {
            crate::pipeline::embed_with(&mut scorer, r, "vision", dim).map_err(|e| ForgeError::stage("embed", e))?
        } else {
            vec![0.0; dim]
        };
        rows.push([text, vision].concat());
    }
    write_embeddings(
        &a.out,
        &EmbeddingMatrix {
            dim: 2 * dim,
            rows,
            ids: Some(records.iter().map(|r| r.id.clone()).collect()),
        },
    )?;
    println!("embedded {} records", records.len());
    Ok(EXIT_OK)
}

/// Sampling plan written by `forge cluster`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterPlan {
    pub k: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub captured_variance_ratio: f64,
    pub cluster_sizes: Vec<usize>,
    pub assignment: Vec<usize>,
    #[serde(flatten)]
    pub plan: SamplingPlanOut,
    /// Ids of selected rows when the matrix has an id sidecar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_ids: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SamplingPlanOut {
    pub cap_factor: f64,
    pub seed: u64,
    pub cap: usize,
    pub per_cluster_quota: Vec<usize>,
    pub selected: Vec<usize>,
}

impl From<SamplingPlan> for SamplingPlanOut {
    fn from(p: SamplingPlan) -> Self {
        SamplingPlanOut {
            cap_factor: p.cap_factor,
            seed: p.seed,
            cap: p.cap,
            per_cluster_quota: p.per_cluster_quota,
            selected: p.selected,
        }
    }
}

fn cluster(a: ClusterArgs) -> Result<i32> {
    if a.k == 0 || !(a.cap > 0.0) || a.target_dim == 0 {
        return Err(ForgeError::Config("k, cap and target-dim must be positive".into()));
    }
    let m = read_embeddings(&a.input)?;
    let st = |e: ClusterError| ForgeError::stage("cluster", e);
    let target = a.target_dim.min(m.dim);
    let red = reduce_dim(&m.rows, target).map_err(st)?;
    let k = a.k.min(m.rows.len());
    let model = match kmeans_fit(&red.vectors, k, a.seed, a.max_iters) {
        Err(ClusterError::KTooLarge { distinct, .. }) if distinct > 0 => kmeans_fit(&red.vectors, distinct, a.seed, a.max_iters),
        other => other,
    }
    .map_err(st)?;
    let plan = balanced_downsample(&model.assignment, model.k, a.cap, a.seed);
    let selected_ids = m.ids.as_ref().map(|ids| plan.selected.iter().map(|&i| ids[i].clone()).collect());
    let out = ClusterPlan {
        k: model.k,
        iterations: model.iterations,
        inertia: model.inertia,
        captured_variance_ratio: red.captured_variance_ratio,
        cluster_sizes: model.sizes(),
        assignment: model.assignment.clone(),
        plan: plan.into(),
        selected_ids,
    };
    write_json(&a.out, &out)?;
    println!("k={} kept {} of {} rows", out.k, out.plan.selected.len(), m.rows.len());
    Ok(EXIT_OK)
}

fn grade(a: GradeArgs) -> Result<i32> {
    let profiles: Vec<ScorerProfile> = read_jsonl(&a.profiles)?;
    let weights = DifficultyWeights {
        loss_small: a.w_loss,
        gap: a.w_gap,
    };
    let grades = grade_batch(&profiles, &weights).map_err(|e| ForgeError::stage("grade", e))?;
    let ordered: Vec<_> = curriculum_order(&grades).into_iter().cloned().collect();
    write_jsonl(&a.out, &ordered)?;
    println!("graded {} profiles", ordered.len());
    Ok(EXIT_OK)
}

fn prep_vision(a: PrepVisionArgs) -> Result<i32> {
    let mut cfg = PipelineConfig::new(Vec::new(), a.out.clone());
    cfg.vision.lowpass_fraction = a.lowpass;
    cfg.validate()?;
    let lp = cfg.vision.lowpass();
    let root = a.media_root.unwrap_or_else(|| PathBuf::from("."));
    let records = read_records(&a.input)?;
    let mut p = Pipeline::new(&cfg, Box::new(forge_core::scorer::StubScorer::default()));
    p.dir_override = Some(a.out.clone());
    let out = p.vision(records)?;
    let r = write_stage_dir(&a.out, "vision", &out, cfg.shard_size)?;
    if a.emit_tiles {
        let lines: Vec<LayoutLine> = read_jsonl(&a.out.join("layouts.jsonl"))?;
        let mut written = 0usize;
        for line in &lines {
            for (i, img) in line.images.iter().enumerate() {
                let full = load_image(&img.locator, &root)?;
                for (t, tile) in tile_image(&full, &img.layout).iter().enumerate() {
                    let filtered = low_pass(tile, &lp).map_err(|e| ForgeError::stage("vision", e))?;
                    save_png(&filtered, &a.out.join("tiles").join(&line.id).join(format!("{i}-{t:02}.png")))?;
                    written += 1;
                }
            }
        }
        println!("wrote {written} tiles");
    }
    print_stage(&r);
    Ok(EXIT_OK)
}

#[derive(Debug, Deserialize)]
struct ResponseLine {
    id: String,
    group: String,
    response: String,
}

#[derive(Debug, Deserialize)]
struct GoldLine {
    group: String,
    label: String,
    #[serde(default)]
    violating_text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RewardLine {
    pub id: String,
    pub group: String,
    pub r_cls: f64,
    pub r_fmt: f64,
    pub r_ocr: f64,
    pub total: f64,
    pub advantage: f64,
    pub kl_beta: f64,
}

fn reward(a: RewardArgs) -> Result<i32> {
    let grpo = GrpoConfig {
        group_size: a.group_size,
        kl_beta: a.kl_beta,
        ..GrpoConfig::default()
    };
    grpo.validate().map_err(|e| ForgeError::Config(e.to_string()))?;
    let cfg = RewardConfig {
        binary_classification: a.binary,
        raw_ocr: a.raw_ocr,
        ..RewardConfig::default()
    };
    let responses: Vec<ResponseLine> = read_jsonl(&a.input)?;
    let gold: BTreeMap<String, GoldLine> = read_jsonl::<GoldLine>(&a.gold)?.into_iter().map(|g| (g.group.clone(), g)).collect();
    let mut groups: BTreeMap<&str, Vec<&ResponseLine>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in &responses {
        let e = groups.entry(r.group.as_str()).or_default();
        if e.is_empty() {
            order.push(r.group.as_str());
        }
        e.push(r);
    }
    let mut out = Vec::with_capacity(responses.len());
    for g in order {
        let members = &groups[g];
        let gl = gold.get(g).ok_or_else(|| ForgeError::stage("reward", format!("no gold for group {g}")))?;
        let breakdowns: Vec<_> = members
            .iter()
            .map(|m| {
                total_reward(
                    &GroupSample {
                        x: g.to_string(),
                        y: m.response.clone(),
                        gold_label: gl.label.clone(),
                        gold_violating_text: gl.violating_text.clone(),
                    },
                    &cfg,
                )
            })
            .collect();
        let totals: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let adv = group_advantages(&totals, &grpo).map_err(|e| ForgeError::stage("reward", format!("group {g}: {e}")))?;
        for ((m, b), adv) in members.iter().zip(&breakdowns).zip(adv) {
            out.push(RewardLine {
                id: m.id.clone(),
                group: g.to_string(),
                r_cls: b.r_cls,
                r_fmt: b.r_fmt,
                r_ocr: b.r_ocr,
                total: b.total,
                advantage: adv,
                kl_beta: grpo.kl_beta,
            });
        }
    }
    write_jsonl(&a.out, &out)?;
    println!("scored {} responses", out.len());
    Ok(EXIT_OK)
}

/// One eval case; the kind picks the metric it feeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvalCase {
    /// Binary question: does the content belong to `category`?
    Moderation { id: String, category: Category, gold: bool },
    /// Text hidden in an image under an adversarial transform.
    Adversarial { id: String, subset: AdversarialSubset, gold_text: String },
    /// Benign content; a "yes" answer is a false positive.
    Benign { id: String },
}

#[derive(Debug, Deserialize)]
struct AnswerLine {
    id: String,
    answer: String,
}

/// Builds the eval report from cases and raw model answers. Cases without
/// an answer count as unparseable.
pub fn evaluate(cases: &[EvalCase], answers: &BTreeMap<String, String>) -> Result<EvalReport> {
    let mut moderation = Vec::new();
    let mut adversarial = Vec::new();
    let mut benign = Vec::new();
    for c in cases {
        match c {
            EvalCase::Moderation { id, category, gold } => moderation.push(ModerationCase {
                id: id.clone(),
                category: *category,
                gold: *gold,
                model_answer: answers.get(id).cloned().unwrap_or_default(),
            }),
            EvalCase::Adversarial { id, subset, gold_text } => {
                let raw = answers.get(id).map(String::as_str).unwrap_or_default();
                let recognized = if parse_blocks(raw).is_some() { extracted_text(raw) } else { raw.to_string() };
                adversarial.push(AdversarialCase {
                    id: id.clone(),
                    subset: *subset,
                    gold_chars: gold_text.clone(),
                    recognized_chars: recognized,
                });
            }
            EvalCase::Benign { id } => benign.push(answers.get(id).map_or(BinaryAnswer::Unparseable, |a| extract_binary_answer(a))),
        }
    }
    EvalReport::build(&tally_categories(&moderation), &tally_subsets(&adversarial), &benign).map_err(|e| ForgeError::stage("eval", e))
}

fn eval(a: EvalArgs) -> Result<i32> {
    let mut cases: Vec<EvalCase> = Vec::new();
    for p in &a.cases {
        for shard in list_shards(p)? {
            cases.extend(read_jsonl::<EvalCase>(&shard)?);
        }
    }
    let answers: BTreeMap<String, String> = read_jsonl::<AnswerLine>(&a.answers)?.into_iter().map(|l| (l.id, l.answer)).collect();
    let report = evaluate(&cases, &answers)?;
    write_json(&a.out, &report)?;
    let table = eval_table(&report);
    crate::shard::write_bytes(&a.out.with_extension("txt"), table.as_bytes())?;
    print!("{table}");
    Ok(EXIT_OK)
}

fn report(a: ReportArgs) -> Result<i32> {
    let base: EvalReport = crate::shard::read_json(&a.baseline)?;
    let cur: EvalReport = crate::shard::read_json(&a.current)?;
    let alarms = drift_alarm(&base, &cur, a.threshold).map_err(|e| ForgeError::stage("report", e))?;
    print!("{}", drift_table(&alarms, a.threshold));
    Ok(if a.fail_on_alarm && !alarms.is_empty() { crate::error::EXIT_STAGE } else { EXIT_OK })
}

fn run_pipeline(a: RunArgs) -> Result<i32> {
    let cfg = PipelineConfig::load(&a.config)?;
    cfg.validate_run()?;
    if cfg.workers > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    let mut p = Pipeline::new(&cfg, cfg.scorer()?);
    let summary = p.run(a.strict)?;
    print!("{}", summary_table(&summary));
    Ok(EXIT_OK)
}

fn synth(a: SynthArgs) -> Result<i32> {
    let m = write_synth(&a.out, &SynthParams::new(a.n, a.seed), &DedupParams::default())?;
    println!("wrote {} records to {}", m.params.n, a.out.display());
    for (plant, n) in &m.plants {
        println!("  {plant:?}: {n}");
    }
    Ok(EXIT_OK)
}
