//! Embedding matrix files.
//!
//! A text header line `FORGE-EMB 1 dim=<D> count=<N> dtype=f32le` followed by
//! `N * D` little-endian `f32` values, row-major. Row ids live in an optional
//! sidecar `<file>.ids`, one per line.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{ForgeError, Result};
use crate::shard::write_bytes;

const MAGIC: &str = "FORGE-EMB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub rows: Vec<Vec<f64>>,
    pub ids: Option<Vec<String>>,
}

fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn write_embeddings(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    let mut buf = format!("{MAGIC} {VERSION} dim={} count={} dtype=f32le\n", m.dim, m.rows.len()).into_bytes();
    for row in &m.rows {
        assert_eq!(row.len(), m.dim, "embedding row width");
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_bytes(path, &buf)?;
    if let Some(ids) = &m.ids {
        let mut s = ids.join("\n");
        s.push('\n');
        write_bytes(&ids_path(path), s.as_bytes())?;
    }
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(ForgeError::io(path))?;
    let bad = |msg: String| ForgeError::Integrity {
        path: path.to_path_buf(),
        msg,
    };
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|e| bad(e.to_string()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) || parts.next() != Some("1") {
        return Err(bad(format!("not a {MAGIC} v{VERSION} file")));
    }
    let (mut dim, mut count, mut dtype) = (None, None, None);
    for p in parts {
        match p.split_once('=') {
            Some(("dim", v)) => dim = v.parse::<usize>().ok(),
            Some(("count", v)) => count = v.parse::<usize>().ok(),
            Some(("dtype", v)) => dtype = Some(v.to_string()),
            _ => return Err(bad(format!("unknown header field {p:?}"))),
        }
    }
    let (Some(dim), Some(count)) = (dim, count) else {
        return Err(bad("header lacks dim or count".into()));
    };
    if dtype.as_deref() != Some("f32le") {
        return Err(bad(format!("unsupported dtype {dtype:?}")));
    }
    let body = &bytes[nl + 1..];
    if body.len() != dim * count * 4 {
        return Err(bad(format!("expected {} data bytes, found {}", dim * count * 4, body.len())));
    }
    let rows = body
        .chunks_exact(4 * dim.max(1))
        .take(count)
        .map(|row| row.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))).collect())
        .collect::<Vec<Vec<f64>>>();
    let rows = if dim == 0 { vec![Vec::new(); count] } else { rows };
    let ip = ids_path(path);
    let ids = if ip.exists() {
        let text = fs::read_to_string(&ip).map_err(ForgeError::io(&ip))?;
        let ids: Vec<String> = text.lines().map(str::to_string).collect();
        if ids.len() != count {
            return Err(bad(format!("{} ids for {count} rows", ids.len())));
        }
        Some(ids)
    } else {
        None
    };
    Ok(EmbeddingMatrix { dim, rows, ids })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        let m = EmbeddingMatrix {
            dim: 3,
            rows: vec![vec![1.0, -2.5, 0.25], vec![0.0, 3.0, 1e-3_f32 as f64]],
            ids: Some(vec!["a".into(), "b".into()]),
        };
        write_embeddings(&p, &m).unwrap();
        assert_eq!(read_embeddings(&p).unwrap(), m);
        let raw = fs::read(&p).unwrap();
        assert!(raw.starts_with(b"FORGE-EMB 1 dim=3 count=2 dtype=f32le\n"));
        fs::write(&p, &raw[..raw.len() - 1]).unwrap();
        assert!(read_embeddings(&p).is_err());
    }
}
