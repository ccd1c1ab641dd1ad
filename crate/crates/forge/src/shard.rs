//! Line-delimited record shards with manifest sidecars.
//!
//! One record per line, UTF-8 JSON with the fields `id`, `text`, `images`,
//! `videos`, `labels`, `source`, `url`, `meta` and `stage_history`. Media
//! entries are `{"locator": .., "width": .., "height": ..}` objects (bare
//! locator strings are accepted on input). Fields outside the schema are
//! kept in `meta`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use forge_core::record::{interleave_media, LabelValue, MediaKind, MediaRef, RecordError, SampleRecord, ShardManifest};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct WireMedia {
    locator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<u32>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MediaIn {
    Bare(String),
    Full(WireMedia),
}

impl MediaIn {
    fn into_ref(self, kind: MediaKind) -> MediaRef {
        let w = match self {
            MediaIn::Bare(locator) => WireMedia {
                locator,
                width: None,
                height: None,
            },
            MediaIn::Full(w) => w,
        };
        MediaRef {
            kind,
            locator: w.locator,
            width: w.width,
            height: w.height,
        }
    }
}

#[derive(Deserialize)]
struct WireIn {
    id: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    images: Vec<MediaIn>,
    #[serde(default)]
    videos: Vec<MediaIn>,
    #[serde(default)]
    labels: BTreeMap<String, LabelValue>,
    #[serde(default)]
    source: String,
    #[serde(default)]
    url: Option<String>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    #[serde(default)]
    stage_history: Vec<String>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize)]
struct WireOut<'a> {
    id: &'a str,
    text: &'a str,
    images: Vec<WireMedia>,
    videos: Vec<WireMedia>,
    labels: &'a BTreeMap<String, LabelValue>,
    source: &'a str,
    url: &'a Option<String>,
    meta: &'a BTreeMap<String, String>,
    stage_history: &'a [String],
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("{0}")]
    Malformed(String),
    #[error(transparent)]
    Invalid(#[from] RecordError),
}

impl ParseError {
    /// Short tag used as a rejection reason.
    pub fn reason(&self) -> &'static str {
        match self {
            ParseError::Malformed(_) => "malformed",
            ParseError::Invalid(RecordError::PlaceholderMismatch { .. }) => "placeholder_mismatch",
            ParseError::Invalid(RecordError::EmptyId) => "empty_id",
            ParseError::Invalid(RecordError::ZeroDimension { .. }) => "zero_dimension",
        }
    }
}

/// Parses and validates one serialized record.
pub fn parse_record(line: &str) -> std::result::Result<SampleRecord, ParseError> {
    let w: WireIn = serde_json::from_str(line).map_err(|e| ParseError::Malformed(e.to_string()))?;
    let images = w.images.into_iter().map(|m| m.into_ref(MediaKind::Image)).collect();
    let videos = w.videos.into_iter().map(|m| m.into_ref(MediaKind::Video)).collect();
    let media = interleave_media(&w.text, images, videos)?;
    let mut meta = w.meta;
    for (k, v) in w.extra {
        let text = match v {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        meta.entry(k).or_insert(text);
    }
    let rec = SampleRecord {
        id: w.id,
        text: w.text,
        media,
        labels: w.labels,
        source: w.source,
        url: w.url,
        meta,
        stage_history: w.stage_history,
    };
    rec.validate()?;
    Ok(rec)
}

fn wire_media<'a>(it: impl Iterator<Item = &'a MediaRef>) -> Vec<WireMedia> {
    it.map(|m| WireMedia {
        locator: m.locator.clone(),
        width: m.width,
        height: m.height,
    })
    .collect()
}

/// Serializes a record as one line, without the trailing newline.
pub fn record_to_line(r: &SampleRecord) -> String {
    let out = WireOut {
        id: &r.id,
        text: &r.text,
        images: wire_media(r.images()),
        videos: wire_media(r.videos()),
        labels: &r.labels,
        source: &r.source,
        url: &r.url,
        meta: &r.meta,
        stage_history: &r.stage_history,
    };
    serde_json::to_string(&out).expect("record serialization cannot fail")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn shard_file_name(index: usize) -> String {
    format!("part-{index:05}.jsonl")
}

pub fn manifest_path(shard: &Path) -> PathBuf {
    shard.with_extension("manifest.json")
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(ForgeError::io(parent))?;
    }
    let mut f = fs::File::create(path).map_err(ForgeError::io(path))?;
    f.write_all(bytes).map_err(ForgeError::io(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(ForgeError::io(path))?;
    serde_json::from_str(&s).map_err(|e| ForgeError::Malformed {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = String::new();
    for it in items {
        buf.push_str(&serde_json::to_string(it).expect("serializable value"));
        buf.push('\n');
    }
    write_bytes(path, buf.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            serde_json::from_str(&text).map_err(|e| ForgeError::Malformed {
                path: path.to_path_buf(),
                line,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Non-blank lines of a file with their 1-based line numbers.
pub fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(ForgeError::io(path))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

/// Writes `records` to `path` and its manifest sidecar.
pub fn write_shard(path: &Path, records: &[SampleRecord], stage: &str) -> Result<ShardManifest> {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&record_to_line(r));
        buf.push('\n');
    }
    write_bytes(path, buf.as_bytes())?;
    let manifest = ShardManifest {
        shard_id: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        record_count: records.len() as u64,
        byte_size: buf.len() as u64,
        checksum: sha256_hex(buf.as_bytes()),
        stage: stage.to_string(),
    };
    write_json(&manifest_path(path), &manifest)?;
    Ok(manifest)
}

/// Reads a shard, checking it against its manifest when one exists.
pub fn read_shard(path: &Path) -> Result<Vec<SampleRecord>> {
    let bytes = fs::read(path).map_err(ForgeError::io(path))?;
    let mpath = manifest_path(path);
    let manifest: Option<ShardManifest> = if mpath.exists() { Some(read_json(&mpath)?) } else { None };
    if let Some(m) = &manifest {
        if m.checksum != sha256_hex(&bytes) || m.byte_size != bytes.len() as u64 {
            return Err(ForgeError::Integrity {
                path: path.to_path_buf(),
                msg: "checksum does not match manifest".into(),
            });
        }
    }
    let text = String::from_utf8(bytes).map_err(|e| ForgeError::Integrity {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_record(line).map_err(|e| match e {
            ParseError::Malformed(msg) => ForgeError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            },
            ParseError::Invalid(source) => ForgeError::InvalidRecord {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            },
        })?;
        out.push(rec);
    }
    if let Some(m) = &manifest {
        if m.record_count != out.len() as u64 {
            return Err(ForgeError::Integrity {
                path: path.to_path_buf(),
                msg: format!("manifest counts {} records, shard has {}", m.record_count, out.len()),
            });
        }
    }
    Ok(out)
}

/// Shard files under `path`: the file itself, or the sorted `part-*.jsonl`
/// files of a directory (any `*.jsonl` when there are no part files).
pub fn list_shards(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut all = Vec::new();
    for entry in fs::read_dir(path).map_err(ForgeError::io(path))? {
        let p = entry.map_err(ForgeError::io(path))?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "jsonl") {
            all.push(p);
        }
    }
    all.sort();
    let parts: Vec<PathBuf> = all
        .iter()
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("part-")))
        .cloned()
        .collect();
    Ok(if parts.is_empty() { all } else { parts })
}

/// Records of every shard under each path, concatenated in shard order.
pub fn read_records(paths: &[PathBuf]) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    for p in paths {
        for shard in list_shards(p)? {
            out.extend(read_shard(&shard)?);
        }
    }
    Ok(out)
}

/// Replaces the shards in `dir` with `records` split into chunks of
/// `shard_size`. An empty input still produces one empty shard.
pub fn write_shard_dir(dir: &Path, records: &[SampleRecord], stage: &str, shard_size: usize) -> Result<Vec<ShardManifest>> {
    fs::create_dir_all(dir).map_err(ForgeError::io(dir))?;
    for entry in fs::read_dir(dir).map_err(ForgeError::io(dir))? {
        let p = entry.map_err(ForgeError::io(dir))?.path();
        if p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("part-")) {
            fs::remove_file(&p).map_err(ForgeError::io(&p))?;
        }
    }
    let size = shard_size.max(1);
    let mut manifests = Vec::new();
    if records.is_empty() {
        manifests.push(write_shard(&dir.join(shard_file_name(0)), &[], stage)?);
    }
    for (i, chunk) in records.chunks(size).enumerate() {
        manifests.push(write_shard(&dir.join(shard_file_name(i)), chunk, stage)?);
    }
    Ok(manifests)
}

/// Packs every shard and manifest in `dir` into an uncompressed tar with
/// fixed metadata, so identical shards give identical archives.
pub fn pack_tar(dir: &Path, out: &Path) -> Result<usize> {
    let mut files: Vec<PathBuf> = Vec::new();
    for shard in list_shards(dir)? {
        let m = manifest_path(&shard);
        files.push(shard);
        if m.exists() {
            files.push(m);
        }
    }
    let file = fs::File::create(out).map_err(ForgeError::io(out))?;
    let mut builder = tar::Builder::new(file);
    for f in &files {
        let data = fs::read(f).map_err(ForgeError::io(f))?;
        let mut header = tar::Header::new_gnu();
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_uid(0);
        header.set_gid(0);
        let name = f.file_name().expect("shard files have names");
        builder.append_data(&mut header, name, data.as_slice()).map_err(ForgeError::io(out))?;
    }
    builder.into_inner().map_err(ForgeError::io(out))?;
    Ok(files.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_examples() {
        let r = parse_record(r#"{"id":"a","text":"look <image> here","images":[{"locator":"x.png","width":10,"height":20}]}"#).unwrap();
        assert_eq!(r.media.len(), 1);
        assert_eq!(r.media[0].dims(), Some((10, 20)));
        let e = parse_record(r#"{"id":"b","text":"<image><image>","images":["x.png"]}"#).unwrap_err();
        assert_eq!(e.reason(), "placeholder_mismatch");
        let r = parse_record(r#"{"id":"c","text":"plain"}"#).unwrap();
        assert!(r.media.is_empty());
        assert_eq!(parse_record("{not json").unwrap_err().reason(), "malformed");
        assert_eq!(parse_record(r#"{"text":"no id"}"#).unwrap_err().reason(), "malformed");
    }

    #[test]
    fn unknown_fields_land_in_meta() {
        let r = parse_record(r#"{"id":"a","text":"t","lang":"zh","score":0.5,"tags":["x"]}"#).unwrap();
        assert_eq!(r.meta["lang"], "zh");
        assert_eq!(r.meta["score"], "0.5");
        assert_eq!(r.meta["tags"], r#"["x"]"#);
    }

    #[test]
    fn mixed_media_keep_placeholder_order() {
        let line = r#"{"id":"m","text":"<video> then <image>","images":["i.png"],"videos":["v.mp4"]}"#;
        let r = parse_record(line).unwrap();
        assert_eq!(r.media[0].kind, MediaKind::Video);
        assert_eq!(r.media[1].kind, MediaKind::Image);
        assert_eq!(parse_record(&record_to_line(&r)).unwrap(), r);
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
