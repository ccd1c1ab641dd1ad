//! URL, MinHash/LSH text and perceptual-hash image deduplication, plus
//! leakage checks against an evaluation index.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::hashing::{hash_str, hash_u64s, mix64};
use crate::vision::{dct2, resize_plane, Image, Plane};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DedupError {
    #[error("cannot sign an empty shingle set")]
    EmptyShingleSet,
    #[error("signatures differ in length or seed")]
    SignatureMismatch,
    #[error("index was built with different hash parameters: {0}")]
    IndexParameterMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupParams {
    pub num_hashes: usize,
    pub bands: usize,
    pub rows_per_band: usize,
    pub shingle_width: usize,
    pub jaccard_threshold: f64,
    pub hamming_threshold: u32,
    pub seed: u64,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams {
            num_hashes: 128,
            bands: 16,
            rows_per_band: 8,
            shingle_width: 5,
            jaccard_threshold: 0.8,
            hamming_threshold: 8,
            seed: 0x5eed,
        }
    }
}

impl DedupParams {
    pub fn validate(&self) -> Result<(), DedupError> {
        if self.num_hashes == 0 || self.bands == 0 || self.rows_per_band == 0 || self.shingle_width == 0 {
            return Err(DedupError::InvalidParams("sizes must be positive".into()));
        }
        if self.bands * self.rows_per_band != self.num_hashes {
            return Err(DedupError::InvalidParams(alloc::format!(
                "{} bands x {} rows != {} hashes",
                self.bands,
                self.rows_per_band,
                self.num_hashes
            )));
        }
        if !(0.0..=1.0).contains(&self.jaccard_threshold) {
            return Err(DedupError::InvalidParams("jaccard_threshold must be in [0, 1]".into()));
        }
        if self.hamming_threshold >= 64 {
            return Err(DedupError::InvalidParams("hamming_threshold must be below 64".into()));
        }
        Ok(())
    }

    /// Checks that signatures and buckets built under `other` are comparable
    /// with ours. Thresholds may differ.
    pub fn check_compatible(&self, other: &DedupParams) -> Result<(), DedupError> {
        let fields = [
            ("num_hashes", self.num_hashes as u64, other.num_hashes as u64),
            ("bands", self.bands as u64, other.bands as u64),
            ("rows_per_band", self.rows_per_band as u64, other.rows_per_band as u64),
            ("shingle_width", self.shingle_width as u64, other.shingle_width as u64),
            ("seed", self.seed, other.seed),
        ];
        for (name, a, b) in fields {
            if a != b {
                return Err(DedupError::IndexParameterMismatch(alloc::format!("{name}: {a} vs {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub seed: u64,
}

impl MinHashSignature {
    pub fn num_hashes(&self) -> usize {
        self.values.len()
    }
}

/// Holds the per-position salts so they are derived once per run.
#[derive(Debug, Clone)]
pub struct MinHasher {
    seed: u64,
    salts: Vec<u64>,
}

impl MinHasher {
    pub fn new(num_hashes: usize, seed: u64) -> Self {
        let salts = (0..num_hashes as u64).map(|i| mix64(seed ^ mix64(i.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))).collect();
        MinHasher { seed, salts }
    }

    pub fn sign<'a, I>(&self, shingles: I) -> Result<MinHashSignature, DedupError>
    where
        I: IntoIterator<Item = &'a String>,
    {
        let mut values = vec![u64::MAX; self.salts.len()];
        let mut any = false;
        for s in shingles {
            any = true;
            let h = hash_str(s, self.seed);
            for (v, salt) in values.iter_mut().zip(&self.salts) {
                let x = mix64(h ^ salt);
                if x < *v {
                    *v = x;
                }
            }
        }
        if !any {
            return Err(DedupError::EmptyShingleSet);
        }
        Ok(MinHashSignature { values, seed: self.seed })
    }
}

pub fn minhash_signature(shingles: &BTreeSet<String>, num_hashes: usize, seed: u64) -> Result<MinHashSignature, DedupError> {
    MinHasher::new(num_hashes, seed).sign(shingles)
}

/// Fraction of positions where the two signatures agree.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64, DedupError> {
    if a.values.len() != b.values.len() || a.seed != b.seed || a.values.is_empty() {
        return Err(DedupError::SignatureMismatch);
    }
    let agree = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.values.len() as f64)
}

/// Banded LSH buckets: `(band, band hash) -> sorted ids`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LshIndex {
    bands: usize,
    rows_per_band: usize,
    buckets: BTreeMap<(u32, u64), Vec<String>>,
}

impl LshIndex {
    pub fn new(bands: usize, rows_per_band: usize) -> Self {
        LshIndex {
            bands,
            rows_per_band,
            buckets: BTreeMap::new(),
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn rows_per_band(&self) -> usize {
        self.rows_per_band
    }

    pub fn band_keys(&self, sig: &MinHashSignature) -> Vec<u64> {
        (0..self.bands)
            .map(|b| hash_u64s(&sig.values[b * self.rows_per_band..(b + 1) * self.rows_per_band], b as u64))
            .collect()
    }

    /// Adds `id` under `(band, key)`, keeping each bucket sorted and unique.
    pub fn insert_key(&mut self, band: u32, key: u64, id: &str) {
        let bucket = self.buckets.entry((band, key)).or_default();
        if let Err(pos) = bucket.binary_search_by(|x| x.as_str().cmp(id)) {
            bucket.insert(pos, id.to_string());
        }
    }

    pub fn insert(&mut self, id: &str, sig: &MinHashSignature) {
        for (b, key) in self.band_keys(sig).into_iter().enumerate() {
            self.insert_key(b as u32, key, id);
        }
    }

    /// Ids sharing at least one bucket with `sig`, sorted.
    pub fn candidates(&self, sig: &MinHashSignature) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for (b, key) in self.band_keys(sig).into_iter().enumerate() {
            if let Some(ids) = self.buckets.get(&(b as u32, key)) {
                out.extend(ids.iter().map(String::as_str));
            }
        }
        out
    }

    pub fn merge(&mut self, other: &LshIndex) {
        for ((band, key), ids) in &other.buckets {
            for id in ids {
                self.insert_key(*band, *key, id);
            }
        }
    }

    /// Buckets of one band, ordered by key.
    pub fn band(&self, band: u32) -> impl Iterator<Item = (u64, &[String])> {
        self.buckets.range((band, 0)..=(band, u64::MAX)).map(|((_, k), ids)| (*k, ids.as_slice()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PHash64(pub u64);

impl PHash64 {
    pub fn hamming(self, other: PHash64) -> u32 {
        (self.0 ^ other.0).count_ones()
    }
}

/// Perceptual hash of a real-valued plane.
///
/// Bits 0..63 compare the 63 low-frequency AC coefficients of the 32x32
/// DCT (8x8 block, row-major, DC skipped) with their median. Bit 63 says
/// whether the DC term exceeds the mean of the 8x8 block.
pub fn phash_plane(p: &Plane) -> PHash64 {
    let small = resize_plane(p, 32, 32);
    let coef = dct2(&small);
    let mut block = [0.0f64; 64];
    for v in 0..8 {
        for u in 0..8 {
            block[v * 8 + u] = coef.data[v * 32 + u];
        }
    }
    let mut ac: Vec<f64> = block[1..].to_vec();
    ac.sort_by(f64::total_cmp);
    let median = ac[31];
    let mut bits = 0u64;
    for (i, &c) in block[1..].iter().enumerate() {
        if c > median {
            bits |= 1 << i;
        }
    }
    let mean = block.iter().sum::<f64>() / 64.0;
    if block[0] > mean {
        bits |= 1 << 63;
    }
    PHash64(bits)
}

pub fn phash(img: &Image) -> PHash64 {
    phash_plane(&img.luma())
}

/// Multi-index table for Hamming range queries. With `t + 1` disjoint bit
/// segments, any hash within distance `t` agrees exactly on one segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PHashTable {
    max_distance: u32,
    segments: Vec<(u32, u32)>,
    tables: Vec<BTreeMap<u64, Vec<usize>>>,
    entries: Vec<(PHash64, String)>,
}

impl PHashTable {
    pub fn new(max_distance: u32) -> Self {
        let m = max_distance + 1;
        let mut segments = Vec::with_capacity(m as usize);
        let mut start = 0;
        for i in 0..m {
            let len = 64 / m + u32::from(i < 64 % m);
            segments.push((start, len));
            start += len;
        }
        PHashTable {
            max_distance,
            tables: vec![BTreeMap::new(); segments.len()],
            segments,
            entries: Vec::new(),
        }
    }

    fn segment(h: PHash64, (start, len): (u32, u32)) -> u64 {
        let mask = if len >= 64 { u64::MAX } else { (1u64 << len) - 1 };
        (h.0 >> start) & mask
    }

    pub fn insert(&mut self, h: PHash64, id: &str) {
        let idx = self.entries.len();
        self.entries.push((h, id.to_string()));
        for (table, &seg) in self.tables.iter_mut().zip(&self.segments) {
            table.entry(Self::segment(h, seg)).or_default().push(idx);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(PHash64, String)] {
        &self.entries
    }

    /// Closest entry within `max_dist`; ties go to the earliest insert.
    pub fn nearest_within(&self, h: PHash64, max_dist: u32) -> Option<(u32, &str)> {
        let mut best: Option<(u32, usize)> = None;
        let mut consider = |i: usize| {
            let d = self.entries[i].0.hamming(h);
            if d <= max_dist && best.is_none_or(|b| (d, i) < b) {
                best = Some((d, i));
            }
        };
        if max_dist <= self.max_distance {
            for (table, &seg) in self.tables.iter().zip(&self.segments) {
                if let Some(ids) = table.get(&Self::segment(h, seg)) {
                    ids.iter().for_each(|&i| consider(i));
                }
            }
        } else {
            (0..self.entries.len()).for_each(&mut consider);
        }
        best.map(|(d, i)| (d, self.entries[i].1.as_str()))
    }
}

/// Everything needed to match new records against a reference set.
#[derive(Debug, Clone)]
pub struct DedupIndex {
    pub params: DedupParams,
    pub lsh: LshIndex,
    pub signatures: BTreeMap<String, MinHashSignature>,
    pub phashes: PHashTable,
    pub urls: BTreeSet<String>,
}

impl DedupIndex {
    pub fn new(params: DedupParams) -> Self {
        DedupIndex {
            lsh: LshIndex::new(params.bands, params.rows_per_band),
            signatures: BTreeMap::new(),
            phashes: PHashTable::new(params.hamming_threshold),
            urls: BTreeSet::new(),
            params,
        }
    }

    pub fn add(&mut self, item: &DedupItem) {
        if let Some(url) = &item.url {
            self.urls.insert(url.clone());
        }
        if let Some(sig) = &item.signature {
            self.lsh.insert(&item.id, sig);
            self.signatures.insert(item.id.clone(), sig.clone());
        }
        for &h in &item.phashes {
            self.phashes.insert(h, &item.id);
        }
    }

    pub fn from_items<'a>(params: DedupParams, items: impl IntoIterator<Item = &'a DedupItem>) -> Self {
        let mut idx = DedupIndex::new(params);
        for it in items {
            idx.add(it);
        }
        idx
    }

    /// Union of two indices built with the same parameters. Bucket contents
    /// do not depend on merge order.
    pub fn merge(&mut self, other: &DedupIndex) -> Result<(), DedupError> {
        self.params.check_compatible(&other.params)?;
        self.lsh.merge(&other.lsh);
        for (id, sig) in &other.signatures {
            self.signatures.entry(id.clone()).or_insert_with(|| sig.clone());
        }
        for (h, id) in other.phashes.entries() {
            self.phashes.insert(*h, id);
        }
        self.urls.extend(other.urls.iter().cloned());
        Ok(())
    }

    /// Best verified text match: highest estimate, then smallest id.
    fn text_match(&self, sig: &MinHashSignature, threshold: f64) -> Option<String> {
        let mut best: Option<(f64, &str)> = None;
        for id in self.lsh.candidates(sig) {
            let Some(other) = self.signatures.get(id) else {
                continue;
            };
            let Ok(j) = estimate_jaccard(sig, other) else {
                continue;
            };
            if j >= threshold && best.is_none_or(|(bj, _)| j > bj) {
                best = Some((j, id));
            }
        }
        best.map(|(_, id)| id.to_string())
    }

    fn image_match(&self, hashes: &[PHash64], max_dist: u32) -> Option<String> {
        hashes
            .iter()
            .filter_map(|&h| self.phashes.nearest_within(h, max_dist))
            .min_by(|a, b| a.cmp(b))
            .map(|(_, id)| id.to_string())
    }
}

/// Precomputed dedup keys for one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupItem {
    pub id: String,
    /// Position of the record's shard; earlier shards win ties.
    pub shard: u32,
    pub url: Option<String>,
    /// `None` when the text has no shingles.
    pub signature: Option<MinHashSignature>,
    pub phashes: Vec<PHash64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DupReason {
    Url,
    Text,
    Image,
    Leakage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchSource {
    Corpus,
    Baseline,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub kept_id: String,
    pub removed_id: String,
    pub reason: DupReason,
    pub source: MatchSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DedupReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub url_dupes: usize,
    pub text_dupes: usize,
    pub image_dupes: usize,
    pub leakage_hits: usize,
    pub duplicate_pairs: Vec<DuplicatePair>,
}

impl DedupReport {
    pub fn is_conserved(&self) -> bool {
        self.kept_count + self.url_dupes + self.text_dupes + self.image_dupes + self.leakage_hits == self.input_count
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupOutcome {
    /// Indices of kept items, in input order.
    pub kept: Vec<usize>,
    pub report: DedupReport,
}

/// Computes the dedup keys of a record's text, url and image hashes.
pub fn make_item(
    id: &str,
    shard: u32,
    url: Option<&str>,
    text: &str,
    phashes: Vec<PHash64>,
    hasher: &MinHasher,
    params: &DedupParams,
) -> DedupItem {
    let shingles = crate::text::shingles(text, params.shingle_width);
    DedupItem {
        id: id.to_string(),
        shard,
        url: url.map(str::to_string),
        signature: hasher.sign(&shingles).ok(),
        phashes,
    }
}

/// Removes, in order of precedence, URL, near-duplicate text, near-duplicate
/// image and eval-leakage matches.
///
/// Items are visited by `(shard, id)`; each is compared with the items kept
/// so far and with `baseline`. Only `eval` matches count as leakage.
pub fn dedup_corpus(
    items: &[DedupItem],
    baseline: Option<&DedupIndex>,
    eval: Option<&DedupIndex>,
    params: &DedupParams,
) -> Result<DedupOutcome, DedupError> {
    params.validate()?;
    for idx in baseline.iter().chain(eval.iter()) {
        params.check_compatible(&idx.params)?;
    }
    for it in items {
        if let Some(sig) = &it.signature {
            if sig.num_hashes() != params.num_hashes || sig.seed != params.seed {
                return Err(DedupError::IndexParameterMismatch(alloc::format!("signature of {}", it.id)));
            }
        }
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| (items[a].shard, &items[a].id, a).cmp(&(items[b].shard, &items[b].id, b)));

    let mut seen = DedupIndex::new(*params);
    let mut url_owner: BTreeMap<&str, &str> = BTreeMap::new();
    let mut keep = vec![false; items.len()];
    let mut report = DedupReport {
        input_count: items.len(),
        ..DedupReport::default()
    };
    let jt = params.jaccard_threshold;
    let ht = params.hamming_threshold;

    for &i in &order {
        let it = &items[i];
        let hit = |reason: DupReason, source: MatchSource, kept_id: String| Some((reason, source, kept_id));
        let mut found = None;
        if let Some(url) = it.url.as_deref() {
            if let Some(owner) = url_owner.get(url) {
                found = hit(DupReason::Url, MatchSource::Corpus, owner.to_string());
            } else if baseline.is_some_and(|b| b.urls.contains(url)) {
                found = hit(DupReason::Url, MatchSource::Baseline, url.to_string());
            }
        }
        if found.is_none() {
            if let Some(sig) = &it.signature {
                if let Some(id) = seen.text_match(sig, jt) {
                    found = hit(DupReason::Text, MatchSource::Corpus, id);
                } else if let Some(id) = baseline.and_then(|b| b.text_match(sig, jt)) {
                    found = hit(DupReason::Text, MatchSource::Baseline, id);
                }
            }
        }
        if found.is_none() && !it.phashes.is_empty() {
            if let Some(id) = seen.image_match(&it.phashes, ht) {
                found = hit(DupReason::Image, MatchSource::Corpus, id);
            } else if let Some(id) = baseline.and_then(|b| b.image_match(&it.phashes, ht)) {
                found = hit(DupReason::Image, MatchSource::Baseline, id);
            }
        }
        if found.is_none() {
            if let Some(ev) = eval {
                let url_hit = it.url.as_deref().filter(|u| ev.urls.contains(*u)).map(str::to_string);
                let text_hit = || it.signature.as_ref().and_then(|s| ev.text_match(s, jt));
                let image_hit = || ev.image_match(&it.phashes, ht);
                if let Some(id) = url_hit.or_else(text_hit).or_else(image_hit) {
                    found = hit(DupReason::Leakage, MatchSource::Eval, id);
                }
            }
        }
        match found {
            Some((reason, source, kept_id)) => {
                match reason {
                    DupReason::Url => report.url_dupes += 1,
                    DupReason::Text => report.text_dupes += 1,
                    DupReason::Image => report.image_dupes += 1,
                    DupReason::Leakage => report.leakage_hits += 1,
                }
                report.duplicate_pairs.push(DuplicatePair {
                    kept_id,
                    removed_id: it.id.clone(),
                    reason,
                    source,
                });
            }
            None => {
                keep[i] = true;
                if let Some(url) = it.url.as_deref() {
                    url_owner.insert(url, &it.id);
                }
                seen.add(it);
            }
        }
    }
    let kept: Vec<usize> = (0..items.len()).filter(|&i| keep[i]).collect();
    report.kept_count = kept.len();
    Ok(DedupOutcome { kept, report })
}
