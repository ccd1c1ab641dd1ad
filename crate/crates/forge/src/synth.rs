//! Synthetic corpora for offline runs and tests.
//!
//! Text comes from a first-order Markov grammar over invented words, so an
//! n-gram model trained on the reference text scores grammar output low and
//! random strings very high. Images are `synth:` locators rendered on demand.
//! Known flaws are planted at fixed rates and counted in [`SynthCorpus::plants`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use forge_core::dedup::DedupParams;
use forge_core::record::{MediaKind, MediaRef, SampleRecord, IMAGE_PLACEHOLDER, VIDEO_PLACEHOLDER};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{ForgeError, Result};
use crate::index_io::save_index;
use crate::media::synth_locator;
use crate::pipeline::build_index;
use crate::shard::{record_to_line, write_bytes, write_json};

const SUCCESSORS: usize = 8;
const SOURCES: [&str; 5] = ["forum", "shop", "chat", "news", "stream"];

/// Word-level Markov chain with Zipf-weighted successors.
#[derive(Debug, Clone)]
pub struct Grammar {
    words: Vec<String>,
    successors: Vec<[usize; SUCCESSORS]>,
    zipf: WeightedIndex<f64>,
}

impl Grammar {
    pub fn new(seed: u64, vocab: usize) -> Self {
        const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "sh", "tr"];
        const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_616d);
        let mut seen = BTreeSet::new();
        let mut words = Vec::with_capacity(vocab);
        while words.len() < vocab {
            let syllables = rng.random_range(2..=3);
            let w: String = (0..syllables)
                .map(|_| format!("{}{}", ONSETS.choose(&mut rng).unwrap(), VOWELS.choose(&mut rng).unwrap()))
                .collect();
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let successors = (0..vocab)
            .map(|_| std::array::from_fn(|_| rng.random_range(0..vocab)))
            .collect();
        let zipf = WeightedIndex::new((1..=SUCCESSORS).map(|r| 1.0 / r as f64)).expect("positive weights");
        Grammar { words, successors, zipf }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn sentence(&self, rng: &mut impl Rng) -> String {
        let len = rng.random_range(12..=40);
        let mut w = rng.random_range(0..self.words.len());
        let mut out = self.words[w].clone();
        for _ in 1..len {
            w = self.successors[w][self.zipf.sample(rng)];
            out.push(' ');
            out.push_str(&self.words[w]);
        }
        out
    }
}

/// Random lowercase strings: text no grammar would produce.
pub fn gibberish(rng: &mut impl Rng) -> String {
    let n = rng.random_range(15..=30);
    (0..n)
        .map(|_| {
            let len = rng.random_range(3..=9);
            (0..len).map(|_| char::from(b'a' + rng.random_range(0..26u8))).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Per-record probabilities of each planted flaw. At most one flaw per
/// record; the remainder are clean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mix {
    pub malformed: f64,
    pub placeholder_mismatch: f64,
    pub duplicate_id: f64,
    pub small_image: f64,
    pub wide_image: f64,
    pub tall_image: f64,
    pub gibberish: f64,
    pub url_dupe: f64,
    pub text_dupe: f64,
    pub image_dupe: f64,
    pub eval_leak: f64,
    pub baseline_copy: f64,
    /// Share of clean image records whose dimensions are left for ingest to
    /// probe.
    pub missing_dims: f64,
    pub text_only: f64,
    pub video: f64,
}

impl Mix {
    /// Rates used by `forge synth`.
    pub fn corpus() -> Self {
        Mix {
            malformed: 0.005,
            placeholder_mismatch: 0.005,
            duplicate_id: 0.002,
            small_image: 0.03,
            wide_image: 0.02,
            tall_image: 0.01,
            gibberish: 0.02,
            url_dupe: 0.03,
            text_dupe: 0.04,
            image_dupe: 0.02,
            eval_leak: 0.01,
            baseline_copy: 0.01,
            missing_dims: 0.05,
            text_only: 0.3,
            video: 0.03,
        }
    }

    /// Valid records with duplicates only.
    pub fn dedup_only() -> Self {
        Mix {
            malformed: 0.0,
            placeholder_mismatch: 0.0,
            duplicate_id: 0.0,
            small_image: 0.0,
            wide_image: 0.0,
            tall_image: 0.0,
            gibberish: 0.0,
            missing_dims: 0.0,
            ..Mix::corpus()
        }
    }

    fn flaws(&self) -> [(Plant, f64); 12] {
        [
            (Plant::Malformed, self.malformed),
            (Plant::PlaceholderMismatch, self.placeholder_mismatch),
            (Plant::DuplicateId, self.duplicate_id),
            (Plant::SmallImage, self.small_image),
            (Plant::WideImage, self.wide_image),
            (Plant::TallImage, self.tall_image),
            (Plant::Gibberish, self.gibberish),
            (Plant::UrlDupe, self.url_dupe),
            (Plant::TextDupe, self.text_dupe),
            (Plant::ImageDupe, self.image_dupe),
            (Plant::EvalLeak, self.eval_leak),
            (Plant::BaselineCopy, self.baseline_copy),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Plant {
    Clean,
    Malformed,
    PlaceholderMismatch,
    DuplicateId,
    SmallImage,
    WideImage,
    TallImage,
    Gibberish,
    UrlDupe,
    TextDupe,
    ImageDupe,
    EvalLeak,
    BaselineCopy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthParams {
    pub n: usize,
    pub seed: u64,
    pub baseline_n: usize,
    pub eval_n: usize,
    pub reference_sentences: usize,
    pub vocab: usize,
    pub mix: Mix,
}

impl SynthParams {
    pub fn new(n: usize, seed: u64) -> Self {
        SynthParams {
            n,
            seed,
            baseline_n: 1500,
            eval_n: 300,
            reference_sentences: 8000,
            vocab: 400,
            mix: Mix::corpus(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// Raw corpus lines, some deliberately invalid.
    pub lines: Vec<String>,
    /// Flaw of each line.
    pub plants: Vec<Plant>,
    pub baseline: Vec<SampleRecord>,
    pub eval: Vec<SampleRecord>,
    /// Reference sentences for the perplexity model.
    pub reference: Vec<String>,
}

impl SynthCorpus {
    pub fn plant_counts(&self) -> BTreeMap<Plant, usize> {
        let mut m = BTreeMap::new();
        for &p in &self.plants {
            *m.entry(p).or_insert(0) += 1;
        }
        m
    }
}

struct Gen<'a> {
    grammar: &'a Grammar,
    mix: &'a Mix,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn image(&mut self, short: (u32, u32), aspect: (f64, f64), tall: Option<bool>) -> MediaRef {
        let s = self.rng.random_range(short.0..=short.1);
        let a = self.rng.random_range(aspect.0..=aspect.1);
        let l = (f64::from(s) * a).round() as u32;
        let tall = tall.unwrap_or_else(|| self.rng.random_bool(0.5));
        let (w, h) = if tall { (s, l) } else { (l, s) };
        MediaRef::image(synth_locator(self.rng.random(), w, h), w, h)
    }

    fn normal_image(&mut self) -> MediaRef {
        self.image((300, 1200), (1.0, 2.5), None)
    }

    fn text(&mut self) -> String {
        let n = self.rng.random_range(1..=2);
        (0..n).map(|_| self.grammar.sentence(&mut self.rng)).collect::<Vec<_>>().join(" ")
    }

    /// Attaches media to `body`: placeholders first, then the text.
    fn assemble(id: String, body: &str, media: Vec<MediaRef>, source: &str, url: Option<String>) -> SampleRecord {
        let mut text = String::new();
        for m in &media {
            text.push_str(m.kind.placeholder());
            text.push(' ');
        }
        text.push_str(body);
        SampleRecord {
            media,
            source: source.to_string(),
            url,
            ..SampleRecord::text_only(id, text)
        }
    }

    fn clean(&mut self, prefix: &str, i: usize) -> SampleRecord {
        let source = *SOURCES.choose(&mut self.rng).unwrap();
        let r: f64 = self.rng.random();
        let media = if r < self.mix.text_only {
            Vec::new()
        } else if r < self.mix.text_only + self.mix.video {
            vec![MediaRef::video(format!("videos/{prefix}{i}.mp4"))]
        } else {
            let n = if self.rng.random_bool(0.85) { 1 } else { 2 };
            (0..n).map(|_| self.normal_image()).collect()
        };
        let body = self.text();
        let url = Some(format!("https://{source}.example/{prefix}/{i}"));
        Self::assemble(format!("{prefix}-{i:06}"), &body, media, source, url)
    }

    fn fresh_like(&mut self, media: &[MediaRef], prefix: &str, i: usize) -> Vec<MediaRef> {
        media
            .iter()
            .map(|m| match m.kind {
                MediaKind::Image => self.normal_image(),
                MediaKind::Video => MediaRef::video(format!("videos/{prefix}{i}.mp4")),
            })
            .collect()
    }

    fn draw_plant(&mut self) -> Plant {
        let mut u: f64 = self.rng.random();
        for (p, rate) in self.mix.flaws() {
            if u < rate {
                return p;
            }
            u -= rate;
        }
        Plant::Clean
    }
}

fn strip_placeholders(text: &str) -> String {
    text.replace(IMAGE_PLACEHOLDER, "").replace(VIDEO_PLACEHOLDER, "").trim().to_string()
}

pub fn generate(params: &SynthParams) -> SynthCorpus {
    let grammar = Grammar::new(params.seed, params.vocab);
    let mut g = Gen {
        grammar: &grammar,
        mix: &params.mix,
        rng: ChaCha8Rng::seed_from_u64(params.seed),
    };
    let reference = (0..params.reference_sentences).map(|_| grammar.sentence(&mut g.rng)).collect();
    let baseline: Vec<SampleRecord> = (0..params.baseline_n).map(|i| g.clean("b", i)).collect();
    let eval: Vec<SampleRecord> = (0..params.eval_n).map(|i| g.clean("e", i)).collect();

    let mut lines = Vec::with_capacity(params.n);
    let mut plants = Vec::with_capacity(params.n);
    // clean corpus records that later dupes may copy
    let mut originals: Vec<SampleRecord> = Vec::new();
    for i in 0..params.n {
        let mut plant = g.draw_plant();
        let needs_original = matches!(plant, Plant::DuplicateId | Plant::UrlDupe | Plant::TextDupe | Plant::ImageDupe);
        let any_images = originals.iter().any(|r| r.images().next().is_some());
        if (needs_original && originals.is_empty())
            || (plant == Plant::ImageDupe && !any_images)
            || (plant == Plant::EvalLeak && eval.is_empty())
            || (plant == Plant::BaselineCopy && baseline.is_empty())
        {
            plant = Plant::Clean;
        }
        let mut rec = g.clean("c", i);
        let line = match plant {
            Plant::Clean => {
                originals.push(rec.clone());
                if rec.images().next().is_some() && g.rng.random_bool(params.mix.missing_dims) {
                    for m in &mut rec.media {
                        if m.kind == MediaKind::Image {
                            m.width = None;
                            m.height = None;
                        }
                    }
                }
                record_to_line(&rec)
            }
            Plant::Malformed => format!("{{\"id\": \"c-{i:06}\", \"text\": \"{}", &rec.text[..rec.text.len().min(20)]),
            Plant::PlaceholderMismatch => {
                rec.text = format!("{IMAGE_PLACEHOLDER} {}", rec.text);
                record_to_line(&rec)
            }
            Plant::DuplicateId => {
                rec.id = originals.choose(&mut g.rng).unwrap().id.clone();
                record_to_line(&rec)
            }
            Plant::SmallImage | Plant::WideImage | Plant::TallImage => {
                let img = match plant {
                    Plant::SmallImage => g.image((64, 200), (1.0, 1.5), None),
                    Plant::WideImage => g.image((300, 500), (5.0, 8.0), Some(false)),
                    _ => g.image((300, 500), (5.0, 8.0), Some(true)),
                };
                let body = strip_placeholders(&rec.text);
                let media = vec![img];
                record_to_line(&Gen::assemble(rec.id, &body, media, &rec.source, rec.url))
            }
            Plant::Gibberish => {
                let body = gibberish(&mut g.rng);
                let media = rec.media.clone();
                record_to_line(&Gen::assemble(rec.id, &body, media, &rec.source, rec.url))
            }
            Plant::UrlDupe => {
                rec.url = originals.choose(&mut g.rng).unwrap().url.clone();
                record_to_line(&rec)
            }
            Plant::TextDupe => {
                let orig = originals.choose(&mut g.rng).unwrap().clone();
                let media = g.fresh_like(&orig.media, "c", i);
                let extra = grammar.words().choose(&mut g.rng).unwrap();
                let body = format!("{} {extra}", strip_placeholders(&orig.text));
                record_to_line(&Gen::assemble(rec.id, &body, media, &rec.source, rec.url))
            }
            Plant::ImageDupe => {
                let with_images: Vec<&SampleRecord> = originals.iter().filter(|r| r.images().next().is_some()).collect();
                let orig = with_images.choose(&mut g.rng).unwrap().images().next().unwrap().clone();
                let img = if g.rng.random_bool(0.5) {
                    orig
                } else {
                    let (seed, w, h) = crate::media::parse_synth(&orig.locator).expect("synthetic locator");
                    let s = g.rng.random_range(0.8..1.25);
                    let (w2, h2) = (((f64::from(w) * s) as u32).max(1), ((f64::from(h) * s) as u32).max(1));
                    MediaRef::image(synth_locator(seed, w2, h2), w2, h2)
                };
                let body = strip_placeholders(&rec.text);
                record_to_line(&Gen::assemble(rec.id, &body, vec![img], &rec.source, rec.url))
            }
            Plant::EvalLeak | Plant::BaselineCopy => {
                let pool = if plant == Plant::EvalLeak { &eval } else { &baseline };
                let src = pool.choose(&mut g.rng).unwrap();
                let media = g.fresh_like(&src.media, "c", i);
                record_to_line(&Gen::assemble(rec.id, &strip_placeholders(&src.text), media, &rec.source, rec.url))
            }
        };
        lines.push(line);
        plants.push(plant);
    }
    SynthCorpus {
        lines,
        plants,
        baseline,
        eval,
        reference,
    }
}

/// Files written by [`write_synth`], relative to its output directory.
#[derive(Debug, Clone, Serialize)]
pub struct SynthManifest {
    pub params: SynthParams,
    pub corpus: String,
    pub baseline: String,
    pub eval: String,
    pub reference: String,
    pub baseline_index: String,
    pub eval_index: String,
    pub config: String,
    pub plants: BTreeMap<Plant, usize>,
}

fn jsonl(lines: impl Iterator<Item = String>) -> Vec<u8> {
    let mut buf = String::new();
    for l in lines {
        buf.push_str(&l);
        buf.push('\n');
    }
    buf.into_bytes()
}

/// Writes the corpus, baseline, eval set, reference text, their dedup
/// indices and a ready-to-run `forge.toml` into `dir`.
pub fn write_synth(dir: &Path, params: &SynthParams, dedup: &DedupParams) -> Result<SynthManifest> {
    std::fs::create_dir_all(dir).map_err(ForgeError::io(dir))?;
    let corpus = generate(params);
    write_bytes(&dir.join("corpus.jsonl"), &jsonl(corpus.lines.iter().cloned()))?;
    write_bytes(&dir.join("baseline.jsonl"), &jsonl(corpus.baseline.iter().map(record_to_line)))?;
    write_bytes(&dir.join("eval.jsonl"), &jsonl(corpus.eval.iter().map(record_to_line)))?;
    write_bytes(&dir.join("reference.txt"), &jsonl(corpus.reference.iter().cloned()))?;
    save_index(&build_index(&corpus.baseline, dedup, dir)?, &dir.join("baseline-index"))?;
    save_index(&build_index(&corpus.eval, dedup, dir)?, &dir.join("eval-index"))?;

    let mut cfg = PipelineConfig::new(vec!["corpus.jsonl".into()], "out".into());
    cfg.seed = params.seed;
    cfg.filter.lm_corpus = Some("reference.txt".into());
    cfg.dedup.params = *dedup;
    cfg.dedup.baseline_index = Some("baseline-index".into());
    cfg.dedup.eval_index = Some("eval-index".into());
    write_bytes(&dir.join("forge.toml"), cfg.to_toml().as_bytes())?;

    let manifest = SynthManifest {
        params: params.clone(),
        corpus: "corpus.jsonl".into(),
        baseline: "baseline.jsonl".into(),
        eval: "eval.jsonl".into(),
        reference: "reference.txt".into(),
        baseline_index: "baseline-index".into(),
        eval_index: "eval-index".into(),
        config: "forge.toml".into(),
        plants: corpus.plant_counts(),
    };
    write_json(&dir.join("synth.json"), &manifest)?;
    Ok(manifest)
}

/// Valid corpus with planted duplicates plus its baseline and eval sets.
pub fn dedup_fixture(n: usize, baseline_n: usize, seed: u64) -> (Vec<SampleRecord>, Vec<SampleRecord>, Vec<SampleRecord>) {
    let params = SynthParams {
        baseline_n,
        mix: Mix::dedup_only(),
        ..SynthParams::new(n, seed)
    };
    let c = generate(&params);
    let corpus = c
        .lines
        .iter()
        .map(|l| crate::shard::parse_record(l).expect("fixture lines are valid"))
        .collect();
    (corpus, c.baseline, c.eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shard::parse_record;

    #[test]
    fn generation_is_seeded() {
        let p = SynthParams::new(300, 5);
        let (a, b) = (generate(&p), generate(&p));
        assert_eq!(a.lines, b.lines);
        assert_ne!(a.lines, generate(&SynthParams::new(300, 6)).lines);
    }

    #[test]
    fn plants_behave_as_labelled() {
        let c = generate(&SynthParams::new(3000, 11));
        let counts = c.plant_counts();
        assert!(counts[&Plant::Clean] > 2000);
        assert!(counts[&Plant::TextDupe] > 60);
        for (line, plant) in c.lines.iter().zip(&c.plants) {
            let parsed = parse_record(line);
            match plant {
                Plant::Malformed => assert_eq!(parsed.unwrap_err().reason(), "malformed"),
                Plant::PlaceholderMismatch => assert_eq!(parsed.unwrap_err().reason(), "placeholder_mismatch"),
                _ => assert!(parsed.is_ok(), "{plant:?}: {line}"),
            }
        }
    }

    #[test]
    fn sentences_stay_in_vocabulary() {
        let g = Grammar::new(1, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let words: BTreeSet<&str> = g.words().iter().map(String::as_str).collect();
        for _ in 0..20 {
            let s = g.sentence(&mut rng);
            let n = s.split(' ').count();
            assert!((12..=40).contains(&n));
            assert!(s.split(' ').all(|w| words.contains(w)));
        }
    }
}
