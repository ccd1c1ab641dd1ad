//! Text normalization, tokenization, shingling and character bags.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use unicode_normalization::UnicodeNormalization;

/// NFKC-normalizes `s` and drops every whitespace character.
///
/// Full-width and half-width forms of the same character compare equal after
/// this step, which is what character-level OCR scoring needs.
pub fn normalize_for_bag(s: &str) -> String {
    s.nfkc().filter(|c| !c.is_whitespace()).collect()
}

/// True for ideographs and kana/hangul, which carry no whitespace between
/// words and are split one character per token.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30ff        // hiragana, katakana
        | 0x3400..=0x4dbf      // CJK ext A
        | 0x4e00..=0x9fff      // CJK unified
        | 0xac00..=0xd7af      // hangul syllables
        | 0xf900..=0xfaff      // compatibility ideographs
        | 0x20000..=0x2ffff)   // ext B and later
}

/// Whitespace split, with every CJK character emitted as its own token.
pub fn tokenize(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in s.chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
        } else if is_cjk(c) {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
            let mut t = String::new();
            t.push(c);
            out.push(t);
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Number of tokens [`tokenize`] would produce, without allocating them.
pub fn token_count(s: &str) -> usize {
    let mut n = 0;
    let mut in_word = false;
    for c in s.chars() {
        if c.is_whitespace() {
            in_word = false;
        } else if is_cjk(c) {
            n += 1;
            in_word = false;
        } else if !in_word {
            n += 1;
            in_word = true;
        }
    }
    n
}

/// Sliding character shingles of `width` over the text with whitespace runs
/// collapsed to a single space and case folded.
///
/// Texts shorter than `width` yield one shingle holding the whole text; an
/// empty text yields the empty set.
pub fn shingles(text: &str, width: usize) -> BTreeSet<String> {
    let width = width.max(1);
    let mut chars: Vec<char> = Vec::with_capacity(text.len());
    let mut last_space = true;
    for c in text.nfkc() {
        if c.is_whitespace() {
            if !last_space {
                chars.push(' ');
                last_space = true;
            }
        } else {
            chars.extend(c.to_lowercase());
            last_space = false;
        }
    }
    while chars.last() == Some(&' ') {
        chars.pop();
    }
    let mut out = BTreeSet::new();
    if chars.is_empty() {
        return out;
    }
    if chars.len() <= width {
        out.insert(chars.iter().collect());
        return out;
    }
    for w in chars.windows(width) {
        out.insert(w.iter().collect());
    }
    out
}

/// Multiset of characters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CharBag {
    counts: BTreeMap<char, u32>,
    len: usize,
}

impl CharBag {
    pub fn from_text(s: &str) -> Self {
        let mut bag = CharBag::default();
        for c in s.chars() {
            *bag.counts.entry(c).or_insert(0) += 1;
            bag.len += 1;
        }
        bag
    }

    /// Bag of `s` after [`normalize_for_bag`].
    pub fn normalized(s: &str) -> Self {
        Self::from_text(&normalize_for_bag(s))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count(&self, c: char) -> u32 {
        self.counts.get(&c).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, u32)> + '_ {
        self.counts.iter().map(|(&c, &n)| (c, n))
    }
}

/// Multiset difference between a predicted and a reference bag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct CharBagDiff {
    /// Characters in the prediction.
    pub n_pred: usize,
    /// Characters in the reference.
    pub n_gt: usize,
    /// Predicted characters with no counterpart in the reference.
    pub n_halluc: usize,
    /// Reference characters the prediction did not produce.
    pub n_miss: usize,
}

impl CharBagDiff {
    pub fn between(pred: &CharBag, gt: &CharBag) -> Self {
        let mut n_halluc = 0usize;
        let mut n_miss = 0usize;
        for (c, p) in pred.iter() {
            n_halluc += p.saturating_sub(gt.count(c)) as usize;
        }
        for (c, g) in gt.iter() {
            n_miss += g.saturating_sub(pred.count(c)) as usize;
        }
        CharBagDiff {
            n_pred: pred.len(),
            n_gt: gt.len(),
            n_halluc,
            n_miss,
        }
    }

    /// Reference characters matched by the prediction.
    pub fn n_matched(&self) -> usize {
        self.n_gt - self.n_miss
    }
}

/// Contents of every double-quoted span in `s`, in order.
///
/// ASCII `"..."`, curly `“...”` and corner-bracket `「...」` quotes are recognized.
pub fn quoted_spans(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = s;
    loop {
        let Some((open_at, open, close)) = [('"', '"'), ('\u{201c}', '\u{201d}'), ('\u{300c}', '\u{300d}')]
            .iter()
            .filter_map(|&(o, c)| rest.find(o).map(|i| (i, o, c)))
            .min_by_key(|&(i, _, _)| i)
        else {
            break;
        };
        let body_start = open_at + open.len_utf8();
        match rest[body_start..].find(close) {
            Some(len) => {
                out.push(&rest[body_start..body_start + len]);
                rest = &rest[body_start + len + close.len_utf8()..];
            }
            None => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn tokenize_mixed() {
        assert_eq!(tokenize("  join 约加Q群 now "), vec!["join", "约", "加", "Q", "群", "now"]);
        assert_eq!(token_count("  join 约加Q群 now "), 6);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn normalize_width_variants() {
        assert_eq!(normalize_for_bag("ＡＢＣ １２"), "ABC12");
    }

    #[test]
    fn shingle_edges() {
        assert!(shingles("", 5).is_empty());
        assert!(shingles("   ", 5).is_empty());
        assert_eq!(shingles("abc", 5).len(), 1);
        assert_eq!(shingles("abcdef", 5).len(), 2);
        assert_eq!(shingles("A  B", 5), shingles("a b", 5));
    }

    #[test]
    fn bag_diff_counts() {
        let d = CharBagDiff::between(&CharBag::from_text("abcx"), &CharBag::from_text("abcd"));
        assert_eq!((d.n_pred, d.n_gt, d.n_halluc, d.n_miss), (4, 4, 1, 1));
        let d = CharBagDiff::between(&CharBag::from_text("aab"), &CharBag::from_text("ab"));
        assert_eq!((d.n_halluc, d.n_miss, d.n_matched()), (1, 0, 2));
    }

    #[test]
    fn quotes() {
        assert_eq!(quoted_spans(r#"string: "yyKhxa"."#), vec!["yyKhxa"]);
        assert_eq!(quoted_spans("“a” and \"b\" 「c」"), vec!["a", "b", "c"]);
        assert!(quoted_spans("no quotes \"dangling").is_empty());
    }
}
