use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::read_to_string;
use crate::{DiscoError, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stored {
    tokens: Vec<String>,
    lowercase: bool,
}

/// Greedy longest-match-first subword tokenizer with a BERT vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Stored", into = "Stored")]
pub struct WordPiece {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    lowercase: bool,
    unk: u32,
    cls: u32,
    sep: u32,
    pad: u32,
}

impl TryFrom<Stored> for WordPiece {
    type Error = DiscoError;

    fn try_from(s: Stored) -> Result<Self> {
        WordPiece::from_tokens(s.tokens, s.lowercase)
    }
}

impl From<WordPiece> for Stored {
    fn from(w: WordPiece) -> Self {
        Stored {
            tokens: w.tokens,
            lowercase: w.lowercase,
        }
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F | 0x2B820..=0x2CEAF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

/// Splits text into basic units: whitespace-separated, with punctuation and
/// CJK characters standing alone.
pub fn basic_split(text: &str, lowercase: bool) -> Vec<String> {
    let text = if lowercase { text.to_lowercase() } else { text.to_string() };
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() || c.is_control() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if is_punct(c) || is_cjk(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl WordPiece {
    pub fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Result<Self> {
        let index: HashMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let id = |t: &str| {
            index
                .get(t)
                .copied()
                .ok_or_else(|| DiscoError::config(format!("subword vocabulary lacks {t}")))
        };
        Ok(WordPiece {
            unk: id(UNK)?,
            cls: id(CLS)?,
            sep: id(SEP)?,
            pad: id(PAD)?,
            tokens,
            index,
            lowercase,
        })
    }

    /// Reads a `vocab.txt` with one subword per line.
    pub fn from_vocab_file(path: &Path, lowercase: bool) -> Result<Self> {
        let text = read_to_string(path)?;
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect(), lowercase)
    }

    /// Builds a vocabulary for a randomly initialized encoder: special
    /// tokens, every character seen (word-initial and `##` forms), then
    /// whole words by descending frequency up to `max_words`.
    pub fn build_from_words<'a, I>(words: I, lowercase: bool, max_words: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for w in words {
            for piece in basic_split(w, lowercase) {
                *freq.entry(piece).or_default() += 1;
            }
        }
        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
        let chars: BTreeSet<char> = freq.keys().flat_map(|w| w.chars()).collect();
        for c in &chars {
            tokens.push(c.to_string());
        }
        for c in &chars {
            tokens.push(format!("##{c}"));
        }
        let mut by_freq: Vec<(&String, &usize)> = freq.iter().filter(|(w, _)| w.chars().count() > 1).collect();
        by_freq.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        tokens.extend(by_freq.into_iter().take(max_words).map(|(w, _)| w.clone()));
        Self::from_tokens(tokens, lowercase).expect("special tokens present")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    pub fn pad_id(&self) -> u32 {
        self.pad
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    fn wordpiece(&self, piece: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = piece.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(self.unk);
            return;
        }
        let mut ids = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut sub: String = chars[start..end].iter().collect();
                if start > 0 {
                    sub.insert_str(0, "##");
                }
                if let Some(&id) = self.index.get(&sub) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    ids.push(id);
                    start = end;
                }
                None => {
                    out.push(self.unk);
                    return;
                }
            }
        }
        out.extend(ids);
    }

    /// Subword ids for one corpus token. Never empty: a token with no
    /// pieces maps to the unknown subword.
    pub fn tokenize_word(&self, word: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for piece in basic_split(word, self.lowercase) {
            self.wordpiece(&piece, &mut out);
        }
        if out.is_empty() {
            out.push(self.unk);
        }
        out
    }

    /// Subword ids for running text.
    pub fn tokenize_text(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for piece in basic_split(text, self.lowercase) {
            self.wordpiece(&piece, &mut out);
        }
        out
    }
}
