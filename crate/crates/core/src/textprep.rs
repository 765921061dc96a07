//! Text preparation: cleaning, tokenization, vocabulary, and encodings.
//!
//! `clean_text` is idempotent; cleaning already-cleaned text is a no-op.
//! Tokenization follows the Treebank conventions (contraction and
//! punctuation splitting) and then drops tokens consisting solely of
//! punctuation. Numbers that are not hex literals are kept: identifiers,
//! versions, and error codes carry signal in bug reports.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextprepError {
    #[error("cannot access vocabulary file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed vocabulary at line {line}: {reason}")]
    MalformedVocab { line: usize, reason: String },
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:[a-z][a-z0-9+.-]*://|www\.)\S+").unwrap())
}

fn hex_prefixed_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b0x[0-9a-f]+\b").unwrap())
}

fn hex_long_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b[0-9a-f]{8,}\b").unwrap())
}

// Stack-trace lines are recognized by three regex families:
//  (a) frames in the Java/JavaScript style: the line starts with `at `;
//  (b) frames in the gdb style: the line starts with `#<N> `;
//  (c) source locations: the line ends with `file.ext:line[:col][)]`.
fn frame_at_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*at\s+\S").unwrap())
}

fn frame_hash_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*#\d+\s").unwrap())
}

fn frame_fileline_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)[^\s:]+\.\w{1,5}:\d+(?::\d+)?\)?\s*$").unwrap())
}

/// Normalizes raw report text: URLs and hex literals (0x-prefixed, or
/// standalone pure-hex tokens of eight or more characters) are removed,
/// stack-trace lines are dropped, the result is lowercased and whitespace
/// is collapsed. The frame check runs on each line after URL/hex removal,
/// which makes the whole pipeline a fixed point: `clean_text` of cleaned
/// text is the identity.
pub fn clean_text(text: &str) -> String {
    let mut kept: Vec<String> = Vec::new();
    for line in text.lines() {
        let no_urls = url_re().replace_all(line, " ");
        let no_hex0x = hex_prefixed_re().replace_all(&no_urls, " ");
        let cleaned = hex_long_re().replace_all(&no_hex0x, " ");
        if frame_at_re().is_match(&cleaned)
            || frame_hash_re().is_match(&cleaned)
            || frame_fileline_re().is_match(&cleaned)
        {
            continue;
        }
        kept.push(cleaned.into_owned());
    }
    let joined = kept.join(" ").to_lowercase();
    let mut out = String::with_capacity(joined.len());
    for token in joined.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

const CLAUSE_SPLIT: &[char] = &[
    ',', ';', ':', '!', '?', '(', ')', '[', ']', '{', '}', '"', '<', '>',
];

fn is_punct_char(c: char) -> bool {
    c.is_ascii_punctuation()
}

fn is_pure_punctuation(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_punct_char)
}

// Contraction suffixes in the Treebank convention. `n't` keeps the `n`
// ("can't" -> "ca", "n't"); the apostrophe forms split cleanly.
const APOSTROPHE_SUFFIXES: &[&str] = &["'s", "'m", "'re", "'ve", "'ll", "'d"];

fn split_contractions(core: &str, out: &mut Vec<String>) {
    let lower = core.to_lowercase();
    if let Some(stem_len) = lower.strip_suffix("n't").map(|s| s.len()) {
        if stem_len > 0 {
            split_contractions(&core[..stem_len], out);
            out.push(core[stem_len..].to_string());
            return;
        }
    }
    for suffix in APOSTROPHE_SUFFIXES {
        if let Some(stem_len) = lower.strip_suffix(suffix).map(|s| s.len()) {
            if stem_len > 0 {
                split_contractions(&core[..stem_len], out);
                out.push(core[stem_len..].to_string());
                return;
            }
        }
    }
    out.push(core.to_string());
}

/// Treebank-style word tokenization followed by dropping pure-punctuation
/// tokens. Contractions split (`doesn't` -> `does`, `n't`), clause
/// punctuation separates even without spaces, and trailing sentence
/// punctuation is peeled off. Word-internal periods, hyphens, slashes and
/// apostrophes stay attached, so identifiers like `file.cpp`, `foo-bar` and
/// `o'clock` survive as single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let trimmed = chunk.trim_matches(is_punct_char);
        if trimmed.is_empty() {
            continue;
        }
        for piece in trimmed.split(CLAUSE_SPLIT) {
            let piece = piece.trim_matches(is_punct_char);
            if piece.is_empty() {
                continue;
            }
            let mut parts = Vec::new();
            split_contractions(piece, &mut parts);
            for part in parts {
                if !is_pure_punctuation(&part) {
                    tokens.push(part);
                }
            }
        }
    }
    tokens
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct VocabEntry {
    token: String,
    frequency: u64,
}

/// Token-to-index mapping with reserved specials. Index 0 is the
/// out-of-vocabulary token `<unk>`; index 1 is the padding token `<pad>`.
/// Regular tokens start at index 2, ordered by descending frequency with
/// lexicographic tie-breaks, so construction is independent of input order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    lookup: HashMap<String, usize>,
    min_frequency: u32,
}

impl Vocabulary {
    pub const UNK: usize = 0;
    pub const PAD: usize = 1;
    pub const NUM_SPECIALS: usize = 2;
    pub const UNK_TOKEN: &'static str = "<unk>";
    pub const PAD_TOKEN: &'static str = "<pad>";

    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn min_frequency(&self) -> u32 {
        self.min_frequency
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.lookup.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.entries[index].token
    }

    pub fn frequency(&self, index: usize) -> u64 {
        self.entries[index].frequency
    }

    pub fn is_special(index: usize) -> bool {
        index < Self::NUM_SPECIALS
    }

    /// Writes the vocabulary as `index<TAB>token<TAB>frequency` lines under
    /// a `#vocab v1 k=<min_frequency>` header.
    pub fn save(&self, path: &Path) -> Result<(), TextprepError> {
        let mut file = fs::File::create(path)?;
        writeln!(file, "#vocab v1 k={}", self.min_frequency)?;
        for (index, entry) in self.entries.iter().enumerate() {
            writeln!(file, "{index}\t{}\t{}", entry.token, entry.frequency)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary, TextprepError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(TextprepError::MalformedVocab {
            line: 1,
            reason: "empty file".to_string(),
        })?;
        let min_frequency = header
            .strip_prefix("#vocab v1 k=")
            .and_then(|k| k.trim().parse::<u32>().ok())
            .ok_or_else(|| TextprepError::MalformedVocab {
                line: 1,
                reason: format!("bad header `{header}`"),
            })?;
        let mut entries = Vec::new();
        let mut lookup = HashMap::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let malformed = |reason: &str| TextprepError::MalformedVocab {
                line: line_no,
                reason: reason.to_string(),
            };
            let index: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| malformed("bad index"))?;
            let token = fields.next().ok_or_else(|| malformed("missing token"))?;
            let frequency: u64 = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| malformed("bad frequency"))?;
            if index != entries.len() {
                return Err(malformed(&format!(
                    "index {index} out of order, expected {}",
                    entries.len()
                )));
            }
            lookup.insert(token.to_string(), index);
            entries.push(VocabEntry {
                token: token.to_string(),
                frequency,
            });
        }
        if entries.len() < Self::NUM_SPECIALS
            || entries[Self::UNK].token != Self::UNK_TOKEN
            || entries[Self::PAD].token != Self::PAD_TOKEN
        {
            return Err(TextprepError::MalformedVocab {
                line: 1,
                reason: "specials <unk>/<pad> missing from indices 0/1".to_string(),
            });
        }
        Ok(Vocabulary {
            entries,
            lookup,
            min_frequency,
        })
    }

    /// Token indices for a document; unknown tokens map to `<unk>` and the
    /// sequence is truncated to `max_len` when given. `<pad>` is never
    /// produced.
    pub fn encode<T: AsRef<str>>(&self, tokens: &[T], max_len: Option<usize>) -> Vec<usize> {
        let limit = max_len.unwrap_or(usize::MAX);
        tokens
            .iter()
            .take(limit)
            .map(|t| self.index_of(t.as_ref()).unwrap_or(Self::UNK))
            .collect()
    }

    /// Term-frequency vector of length [`Vocabulary::size`]. Entries for
    /// the specials are always zero: out-of-vocabulary tokens are dropped,
    /// not counted under `<unk>`.
    pub fn bow_vector<T: AsRef<str>>(&self, tokens: &[T]) -> Vec<u32> {
        let mut counts = vec![0u32; self.size()];
        for t in tokens {
            if let Some(index) = self.index_of(t.as_ref()) {
                if !Self::is_special(index) {
                    counts[index] += 1;
                }
            }
        }
        counts
    }
}

/// Counts tokens and keeps those with frequency at least `min_frequency`.
/// `min_frequency` must be at least 1. Tokens that collide with the special
/// token strings are ignored; the tokenizer never produces them.
pub fn build_vocabulary<I, T>(tokens: I, min_frequency: u32) -> Vocabulary
where
    I: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    assert!(min_frequency >= 1, "min_frequency must be at least 1");
    let mut counts: HashMap<String, u64> = HashMap::new();
    for token in tokens {
        let token = token.as_ref();
        if token == Vocabulary::UNK_TOKEN || token == Vocabulary::PAD_TOKEN {
            continue;
        }
        *counts.entry(token.to_string()).or_insert(0) += 1;
    }
    let mut kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_frequency as u64)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut entries = vec![
        VocabEntry {
            token: Vocabulary::UNK_TOKEN.to_string(),
            frequency: 0,
        },
        VocabEntry {
            token: Vocabulary::PAD_TOKEN.to_string(),
            frequency: 0,
        },
    ];
    let mut lookup = HashMap::new();
    lookup.insert(Vocabulary::UNK_TOKEN.to_string(), Vocabulary::UNK);
    lookup.insert(Vocabulary::PAD_TOKEN.to_string(), Vocabulary::PAD);
    for (token, frequency) in kept {
        lookup.insert(token.clone(), entries.len());
        entries.push(VocabEntry { token, frequency });
    }
    Vocabulary {
        entries,
        lookup,
        min_frequency,
    }
}

/// The classification text of a report: the title, or title and
/// description joined with a sentence separator.
pub fn report_text(title: &str, description: &str, title_only: bool) -> String {
    if title_only || description.trim().is_empty() {
        title.to_string()
    } else {
        format!("{title} . {description}")
    }
}
