//! Document and relation model for the shared-task file formats.
//!
//! Three formats are supported: `.conllu` (gold syntax), `.tok` (tokens
//! only) and `.rels` (relation instances). Parsed documents keep their
//! original line layout so predictions can be written back without touching
//! any column other than the label.

mod conllu;
mod rels;

pub use conllu::{bio_violations, parse_conllu, parse_conllu_named, parse_tok, parse_tok_named,
    serialize_seg_file, serialize_seg_predictions};
pub use rels::{parse_rels, parse_span_list, serialize_rel_predictions, RelsTable};

use std::fmt;

use serde::{Deserialize, Serialize};

/// Segmentation / connective label carried in the MISC column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SegLabel {
    None,
    BeginSeg,
    BeginConn,
    InsideConn,
}

impl SegLabel {
    /// MISC entry encoding this label, `None` when the label writes nothing.
    pub fn misc_entry(self) -> Option<&'static str> {
        match self {
            SegLabel::None => None,
            SegLabel::BeginSeg => Some("BeginSeg=Yes"),
            SegLabel::BeginConn => Some("Seg=B-Conn"),
            SegLabel::InsideConn => Some("Seg=I-Conn"),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SegLabel::None => "_",
            SegLabel::BeginSeg => "BeginSeg",
            SegLabel::BeginConn => "B-Conn",
            SegLabel::InsideConn => "I-Conn",
        }
    }

    /// Reads a label from a MISC entry; `Some(None)` means "a seg key that
    /// encodes no label", `None` means the entry is not a seg key at all.
    fn from_misc_entry(entry: &str) -> Option<Option<SegLabel>> {
        let (key, value) = entry.split_once('=')?;
        match key {
            "BeginSeg" => Some(if value == "Yes" {
                Some(SegLabel::BeginSeg)
            } else {
                None
            }),
            "Seg" => Some(match value {
                "B-Conn" => Some(SegLabel::BeginConn),
                "I-Conn" => Some(SegLabel::InsideConn),
                _ => None,
            }),
            _ => None,
        }
    }
}

impl fmt::Display for SegLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    /// 1-based position within the sentence.
    pub index: usize,
    pub form: String,
    pub lemma: Option<String>,
    pub upos: Option<String>,
    pub xpos: Option<String>,
    /// Morphological features as `(key, value)` pairs in file order.
    pub feats: Vec<(String, String)>,
    /// Head index within the sentence, 0 for the root.
    pub head: Option<usize>,
    pub deprel: Option<String>,
    /// Raw MISC entries in file order (seg keys included).
    pub misc: Vec<String>,
    pub seg_label: SegLabel,
}

impl Token {
    pub fn new(index: usize, form: impl Into<String>) -> Self {
        Token {
            index,
            form: form.into(),
            lemma: None,
            upos: None,
            xpos: None,
            feats: Vec::new(),
            head: None,
            deprel: None,
            misc: Vec::new(),
            seg_label: SegLabel::None,
        }
    }

    pub fn feat(&self, key: &str) -> Option<&str> {
        self.feats
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn misc_value(&self, key: &str) -> Option<&str> {
        self.misc.iter().find_map(|entry| {
            let (k, v) = entry.split_once('=')?;
            (k == key).then_some(v)
        })
    }

    /// True when any syntax column carries a value.
    pub fn has_syntax(&self) -> bool {
        self.upos.is_some() || self.deprel.is_some() || self.head.is_some()
    }

    pub fn clear_syntax(&mut self) {
        self.lemma = None;
        self.upos = None;
        self.xpos = None;
        self.feats.clear();
        self.head = None;
        self.deprel = None;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub index_in_doc: usize,
    pub tokens: Vec<Token>,
    pub speaker: Option<String>,
}

impl Sentence {
    pub fn new(index_in_doc: usize, tokens: Vec<Token>) -> Self {
        Sentence {
            index_in_doc,
            tokens,
            speaker: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }

    /// Index (0-based) of the root token, if syntax is present.
    pub fn root(&self) -> Option<usize> {
        self.tokens.iter().position(|t| t.head == Some(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    Rst,
    Sdrt,
    Pdtb,
}

impl Framework {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rst" => Some(Framework::Rst),
            "sdrt" => Some(Framework::Sdrt),
            "pdtb" => Some(Framework::Pdtb),
            _ => None,
        }
    }
}

/// A corpus identifier of the form `lang.framework.name`, e.g. `eng.rst.gum`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusId {
    pub language: String,
    pub framework: Option<Framework>,
    pub name: String,
}

impl CorpusId {
    pub fn parse(id: &str) -> Self {
        let mut parts = id.splitn(3, '.');
        let language = parts.next().unwrap_or_default().to_string();
        let framework = parts.next().and_then(Framework::parse);
        let name = parts.next().unwrap_or_default().to_string();
        CorpusId {
            language,
            framework,
            name,
        }
    }
}

/// One line of the original file, kept for byte-exact serialization.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RawLine {
    /// Comments, blank lines, multiword ranges and empty nodes.
    Verbatim(String),
    /// A token line split into its ten columns.
    Token(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub genre: Option<String>,
    pub language: String,
    pub framework: Option<Framework>,
    pub sentences: Vec<Sentence>,
    pub(crate) raw: Vec<RawLine>,
}

impl Document {
    /// Builds a document from sentences, synthesizing a CoNLL-U layout for them.
    pub fn from_sentences(doc_id: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        let doc_id = doc_id.into();
        let mut raw = vec![RawLine::Verbatim(format!("# newdoc id = {doc_id}"))];
        for sent in &sentences {
            for tok in &sent.tokens {
                raw.push(RawLine::Token(conllu::token_columns(tok)));
            }
            raw.push(RawLine::Verbatim(String::new()));
        }
        Document {
            doc_id,
            genre: None,
            language: "und".to_string(),
            framework: None,
            sentences,
            raw,
        }
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn labels(&self) -> Vec<SegLabel> {
        self.tokens().map(|t| t.seg_label).collect()
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens().map(|t| t.form.as_str()).collect()
    }

    /// Document-level 1-based token offset of each sentence's first token.
    pub fn sentence_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.sentences.len());
        let mut next = 1;
        for sent in &self.sentences {
            offsets.push(next);
            next += sent.len();
        }
        offsets
    }

    /// Replaces every token's label, in document order.
    pub fn set_labels(&mut self, labels: &[SegLabel]) -> crate::Result<()> {
        if labels.len() != self.token_count() {
            return Err(crate::DiscoError::contract(format!(
                "document {} has {} tokens but {} labels were given",
                self.doc_id,
                self.token_count(),
                labels.len()
            )));
        }
        for (tok, &label) in self
            .sentences
            .iter_mut()
            .flat_map(|s| s.tokens.iter_mut())
            .zip(labels)
        {
            tok.seg_label = label;
        }
        Ok(())
    }

    /// Applies corpus-level metadata derived from an id such as `eng.rst.gum`.
    pub fn set_corpus(&mut self, corpus: &CorpusId) {
        self.language = corpus.language.clone();
        self.framework = corpus.framework;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// `1>2`
    LeftToRight,
    /// `1<2`
    RightToLeft,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "1>2" => Some(Direction::LeftToRight),
            "1<2" => Some(Direction::RightToLeft),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::LeftToRight => "1>2",
            Direction::RightToLeft => "1<2",
        }
    }
}

/// Inclusive range of 1-based document token indices.
pub type Span = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct RelationInstance {
    pub doc_id: String,
    pub unit1_spans: Vec<Span>,
    pub unit2_spans: Vec<Span>,
    pub unit1_text: String,
    pub unit2_text: String,
    pub unit1_sent_text: String,
    pub unit2_sent_text: String,
    pub direction: Direction,
    pub label: String,
}

/// Number of tokens covered by a span list.
pub fn span_token_count(spans: &[Span]) -> usize {
    spans.iter().map(|(a, b)| b - a + 1).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_id_components() {
        let id = CorpusId::parse("eng.sdrt.stac");
        assert_eq!(id.language, "eng");
        assert_eq!(id.framework, Some(Framework::Sdrt));
        assert_eq!(id.name, "stac");
        assert_eq!(CorpusId::parse("synthetic").framework, None);
    }

    #[test]
    fn misc_seg_keys() {
        assert_eq!(
            SegLabel::from_misc_entry("BeginSeg=Yes"),
            Some(Some(SegLabel::BeginSeg))
        );
        assert_eq!(
            SegLabel::from_misc_entry("Seg=I-Conn"),
            Some(Some(SegLabel::InsideConn))
        );
        assert_eq!(SegLabel::from_misc_entry("Seg=O"), Some(None));
        assert_eq!(SegLabel::from_misc_entry("SpaceAfter=No"), None);
    }
}
