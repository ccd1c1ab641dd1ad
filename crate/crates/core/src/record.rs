//! Canonical multimodal record schema.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const IMAGE_PLACEHOLDER: &str = "<image>";
pub const VIDEO_PLACEHOLDER: &str = "<video>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Image,
    Video,
}

impl MediaKind {
    pub fn placeholder(self) -> &'static str {
        match self {
            MediaKind::Image => IMAGE_PLACEHOLDER,
            MediaKind::Video => VIDEO_PLACEHOLDER,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MediaKind::Image => "image",
            MediaKind::Video => "video",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaRef {
    pub kind: MediaKind,
    /// Path or object-store key.
    pub locator: String,
    pub width: Option<u32>,
    pub height: Option<u32>,
}

impl MediaRef {
    pub fn image(locator: impl Into<String>, width: u32, height: u32) -> Self {
        MediaRef {
            kind: MediaKind::Image,
            locator: locator.into(),
            width: Some(width),
            height: Some(height),
        }
    }

    pub fn video(locator: impl Into<String>) -> Self {
        MediaRef {
            kind: MediaKind::Video,
            locator: locator.into(),
            width: None,
            height: None,
        }
    }

    pub fn dims(&self) -> Option<(u32, u32)> {
        Some((self.width?, self.height?))
    }
}

/// A label value: either a boolean flag or a free-form string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    Flag(bool),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("record id is empty")]
    EmptyId,
    #[error("{kind:?} placeholder count {placeholders} does not match {refs} media refs")]
    PlaceholderMismatch {
        kind: MediaKind,
        placeholders: usize,
        refs: usize,
    },
    #[error("media {locator:?} has a zero dimension")]
    ZeroDimension { locator: String },
}

/// One multimodal corpus item.
///
/// `media` is ordered by placeholder occurrence in `text`: the i-th
/// placeholder of either kind binds to the i-th entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: String,
    pub text: String,
    pub media: Vec<MediaRef>,
    pub labels: BTreeMap<String, LabelValue>,
    pub source: String,
    pub url: Option<String>,
    pub meta: BTreeMap<String, String>,
    pub stage_history: Vec<String>,
}

impl SampleRecord {
    pub fn text_only(id: impl Into<String>, text: impl Into<String>) -> Self {
        SampleRecord {
            id: id.into(),
            text: text.into(),
            media: Vec::new(),
            labels: BTreeMap::new(),
            source: String::new(),
            url: None,
            meta: BTreeMap::new(),
            stage_history: Vec::new(),
        }
    }

    /// Builds a record from per-kind media lists, interleaving them in
    /// placeholder order, and validates it.
    pub fn assemble(
        id: impl Into<String>,
        text: impl Into<String>,
        images: Vec<MediaRef>,
        videos: Vec<MediaRef>,
    ) -> Result<Self, RecordError> {
        let text = text.into();
        let media = interleave_media(&text, images, videos)?;
        let rec = SampleRecord {
            media,
            ..SampleRecord::text_only(id, text)
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        if self.id.is_empty() {
            return Err(RecordError::EmptyId);
        }
        for kind in [MediaKind::Image, MediaKind::Video] {
            let placeholders = count_placeholders(&self.text, kind);
            let refs = self.media.iter().filter(|m| m.kind == kind).count();
            if placeholders != refs {
                return Err(RecordError::PlaceholderMismatch {
                    kind,
                    placeholders,
                    refs,
                });
            }
        }
        for m in &self.media {
            if m.width == Some(0) || m.height == Some(0) {
                return Err(RecordError::ZeroDimension {
                    locator: m.locator.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn images(&self) -> impl Iterator<Item = &MediaRef> {
        self.media.iter().filter(|m| m.kind == MediaKind::Image)
    }

    pub fn videos(&self) -> impl Iterator<Item = &MediaRef> {
        self.media.iter().filter(|m| m.kind == MediaKind::Video)
    }

    /// Appends a stage tag. History is append-only.
    pub fn mark_stage(&mut self, stage: &str) {
        self.stage_history.push(String::from(stage));
    }
}

pub fn count_placeholders(text: &str, kind: MediaKind) -> usize {
    text.matches(kind.placeholder()).count()
}

/// Kinds of the placeholders in `text`, in order of appearance.
pub fn placeholder_sequence(text: &str) -> Vec<MediaKind> {
    let mut seq = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('<') {
        let at = i + off;
        let rest = &text[at..];
        if rest.starts_with(IMAGE_PLACEHOLDER) {
            seq.push(MediaKind::Image);
            i = at + IMAGE_PLACEHOLDER.len();
        } else if rest.starts_with(VIDEO_PLACEHOLDER) {
            seq.push(MediaKind::Video);
            i = at + VIDEO_PLACEHOLDER.len();
        } else {
            i = at + 1;
        }
    }
    seq
}

/// Merges per-kind media lists into placeholder order.
pub fn interleave_media(
    text: &str,
    images: Vec<MediaRef>,
    videos: Vec<MediaRef>,
) -> Result<Vec<MediaRef>, RecordError> {
    let seq = placeholder_sequence(text);
    for (kind, refs) in [(MediaKind::Image, images.len()), (MediaKind::Video, videos.len())] {
        let placeholders = seq.iter().filter(|&&k| k == kind).count();
        if placeholders != refs {
            return Err(RecordError::PlaceholderMismatch {
                kind,
                placeholders,
                refs,
            });
        }
    }
    let mut images = images.into_iter();
    let mut videos = videos.into_iter();
    // kind follows the list an entry came from
    Ok(seq
        .into_iter()
        .filter_map(|k| {
            let mut m = match k {
                MediaKind::Image => images.next()?,
                MediaKind::Video => videos.next()?,
            };
            m.kind = k;
            Some(m)
        })
        .collect())
}

/// Summary of one written shard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub shard_id: String,
    pub record_count: u64,
    pub byte_size: u64,
    /// Lowercase hex SHA-256 of the shard bytes.
    pub checksum: String,
    pub stage: String,
}
