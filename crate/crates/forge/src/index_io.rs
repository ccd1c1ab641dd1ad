//! On-disk dedup index.
//!
//! Layout of an index directory:
//! - `manifest.json`: format name, version and hash parameters
//! - `band-NNN.jsonl`: one file per LSH band
//! - `signatures.jsonl`, `phash.jsonl`, `urls.jsonl`
//!
//! Every `.jsonl` file starts with a header line `{"format":..,"version":1}`.

use std::fs;
use std::path::Path;

use forge_core::dedup::{DedupIndex, DedupParams, MinHashSignature, PHash64};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::shard::{read_json, read_lines, write_bytes, write_json};

pub const INDEX_VERSION: u32 = 1;
const FORMAT: &str = "forge-dedup-index";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    params: DedupParams,
    signatures: usize,
    phashes: usize,
    urls: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct BandLine {
    key: String,
    ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SigLine {
    id: String,
    values: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PHashLine {
    hash: String,
    id: String,
}

fn hex64(v: u64) -> String {
    format!("{v:016x}")
}

fn parse_hex64(s: &str, path: &Path) -> Result<u64> {
    u64::from_str_radix(s, 16).map_err(|e| ForgeError::Integrity {
        path: path.to_path_buf(),
        msg: format!("bad hex {s:?}: {e}"),
    })
}

fn write_lines<T: Serialize>(path: &Path, kind: &str, items: impl Iterator<Item = T>) -> Result<()> {
    let header = Header {
        format: kind.to_string(),
        version: INDEX_VERSION,
    };
    let mut buf = serde_json::to_string(&header).expect("header");
    buf.push('\n');
    for it in items {
        buf.push_str(&serde_json::to_string(&it).expect("index line"));
        buf.push('\n');
    }
    write_bytes(path, buf.as_bytes())
}

fn read_body<T: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<Vec<T>> {
    let lines = read_lines(path)?;
    let mut it = lines.into_iter();
    let bad = |msg: String| ForgeError::Integrity {
        path: path.to_path_buf(),
        msg,
    };
    let (_, first) = it.next().ok_or_else(|| bad("missing header".into()))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| bad(e.to_string()))?;
    if header.format != kind || header.version != INDEX_VERSION {
        return Err(bad(format!("expected {kind} v{INDEX_VERSION}, found {} v{}", header.format, header.version)));
    }
    it.map(|(line, text)| {
        serde_json::from_str(&text).map_err(|e| ForgeError::Malformed {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })
    })
    .collect()
}

pub fn save_index(index: &DedupIndex, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(ForgeError::io(dir))?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            format: FORMAT.into(),
            version: INDEX_VERSION,
            params: index.params,
            signatures: index.signatures.len(),
            phashes: index.phashes.len(),
            urls: index.urls.len(),
        },
    )?;
    for band in 0..index.lsh.bands() as u32 {
        write_lines(
            &dir.join(format!("band-{band:03}.jsonl")),
            "forge-lsh-band",
            index.lsh.band(band).map(|(key, ids)| BandLine {
                key: hex64(key),
                ids: ids.to_vec(),
            }),
        )?;
    }
    write_lines(
        &dir.join("signatures.jsonl"),
        "forge-minhash",
        index.signatures.iter().map(|(id, sig)| SigLine {
            id: id.clone(),
            values: sig.values.iter().map(|&v| hex64(v)).collect(),
        }),
    )?;
    write_lines(
        &dir.join("phash.jsonl"),
        "forge-phash",
        index.phashes.entries().iter().map(|(h, id)| PHashLine {
            hash: hex64(h.0),
            id: id.clone(),
        }),
    )?;
    write_lines(&dir.join("urls.jsonl"), "forge-urls", index.urls.iter())
}

pub fn load_index(dir: &Path) -> Result<DedupIndex> {
    let mpath = dir.join("manifest.json");
    let manifest: Manifest = read_json(&mpath)?;
    if manifest.format != FORMAT || manifest.version != INDEX_VERSION {
        return Err(ForgeError::Integrity {
            path: mpath,
            msg: format!("unsupported index {} v{}", manifest.format, manifest.version),
        });
    }
    let params = manifest.params;
    params.validate().map_err(|e| ForgeError::Integrity {
        path: mpath.clone(),
        msg: e.to_string(),
    })?;
    let mut index = DedupIndex::new(params);
    for band in 0..params.bands as u32 {
        let path = dir.join(format!("band-{band:03}.jsonl"));
        for line in read_body::<BandLine>(&path, "forge-lsh-band")? {
            let key = parse_hex64(&line.key, &path)?;
            for id in &line.ids {
                index.lsh.insert_key(band, key, id);
            }
        }
    }
    let path = dir.join("signatures.jsonl");
    for line in read_body::<SigLine>(&path, "forge-minhash")? {
        let values = line.values.iter().map(|v| parse_hex64(v, &path)).collect::<Result<Vec<_>>>()?;
        if values.len() != params.num_hashes {
            return Err(ForgeError::Integrity {
                path: path.clone(),
                msg: format!("signature of {} has {} values", line.id, values.len()),
            });
        }
        index.signatures.insert(line.id, MinHashSignature { values, seed: params.seed });
    }
    let path = dir.join("phash.jsonl");
    for line in read_body::<PHashLine>(&path, "forge-phash")? {
        index.phashes.insert(PHash64(parse_hex64(&line.hash, &path)?), &line.id);
    }
    index.urls = read_body::<String>(&dir.join("urls.jsonl"), "forge-urls")?.into_iter().collect();
    let counts = (index.signatures.len(), index.phashes.len(), index.urls.len());
    if counts != (manifest.signatures, manifest.phashes, manifest.urls) {
        return Err(ForgeError::Integrity {
            path: mpath,
            msg: "entry counts do not match manifest".into(),
        });
    }
    Ok(index)
}
