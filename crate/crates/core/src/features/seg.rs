//! Per-token features for segmentation and connective detection.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{fmt_real, FeatureVocab, ABSENT};
use crate::corpus::{Document, Sentence, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentType {
    Decl,
    Q,
    Imp,
    Sub,
    Frag,
    Intj,
    Ger,
    Inf,
    Wh,
    Other,
}

impl SentType {
    pub fn as_str(self) -> &'static str {
        match self {
            SentType::Decl => "decl",
            SentType::Q => "q",
            SentType::Imp => "imp",
            SentType::Sub => "sub",
            SentType::Frag => "frag",
            SentType::Intj => "intj",
            SentType::Ger => "ger",
            SentType::Inf => "inf",
            SentType::Wh => "wh",
            SentType::Other => "other",
        }
    }
}

impl fmt::Display for SentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseShape {
    Lower,
    Upper,
    Title,
    Mixed,
    None,
}

impl CaseShape {
    pub fn of(form: &str) -> Self {
        let cased: Vec<char> = form
            .chars()
            .filter(|c| c.is_lowercase() || c.is_uppercase())
            .collect();
        match cased.as_slice() {
            [] => CaseShape::None,
            [first, rest @ ..] => {
                if cased.iter().all(|c| c.is_lowercase()) {
                    CaseShape::Lower
                } else if !rest.is_empty() && cased.iter().all(|c| c.is_uppercase()) {
                    CaseShape::Upper
                } else if first.is_uppercase() && rest.iter().all(|c| c.is_lowercase()) {
                    CaseShape::Title
                } else {
                    CaseShape::Mixed
                }
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CaseShape::Lower => "lower",
            CaseShape::Upper => "upper",
            CaseShape::Title => "title",
            CaseShape::Mixed => "mixed",
            CaseShape::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenFeatureRecord {
    pub upos: String,
    pub xpos: String,
    pub deprel: String,
    pub head_distance: i64,
    pub sent_type: SentType,
    pub genre: Option<String>,
    pub sent_length: usize,
    pub sent_doc_percentile: f64,
    pub token_len: usize,
    pub case_shape: CaseShape,
    pub is_sent_first: bool,
    pub is_sent_last: bool,
}

impl TokenFeatureRecord {
    pub const CATEGORICAL: [&'static str; 8] = [
        "upos",
        "xpos",
        "deprel",
        "sent_type",
        "genre",
        "case_shape",
        "is_sent_first",
        "is_sent_last",
    ];
    pub const NUMERIC: [&'static str; 4] =
        ["head_distance", "sent_length", "sent_doc_percentile", "token_len"];
    pub const COLUMNS: [&'static str; 12] = [
        "upos",
        "xpos",
        "deprel",
        "head_distance",
        "sent_type",
        "genre",
        "sent_length",
        "sent_doc_percentile",
        "token_len",
        "case_shape",
        "is_sent_first",
        "is_sent_last",
    ];

    /// Categorical values in [`Self::CATEGORICAL`] order.
    pub fn categorical_values(&self) -> [String; 8] {
        [
            self.upos.clone(),
            self.xpos.clone(),
            self.deprel.clone(),
            self.sent_type.as_str().to_string(),
            self.genre.clone().unwrap_or_else(|| ABSENT.to_string()),
            self.case_shape.as_str().to_string(),
            self.is_sent_first.to_string(),
            self.is_sent_last.to_string(),
        ]
    }

    /// Raw numeric values in [`Self::NUMERIC`] order.
    pub fn numeric_values(&self) -> [f64; 4] {
        [
            self.head_distance as f64,
            self.sent_length as f64,
            self.sent_doc_percentile,
            self.token_len as f64,
        ]
    }

    /// Values in [`Self::COLUMNS`] order, formatted for the TSV dump.
    pub fn tsv_fields(&self) -> Vec<String> {
        vec![
            self.upos.clone(),
            self.xpos.clone(),
            self.deprel.clone(),
            self.head_distance.to_string(),
            self.sent_type.to_string(),
            self.genre.clone().unwrap_or_else(|| ABSENT.to_string()),
            self.sent_length.to_string(),
            fmt_real(self.sent_doc_percentile),
            self.token_len.to_string(),
            self.case_shape.as_str().to_string(),
            self.is_sent_first.to_string(),
            self.is_sent_last.to_string(),
        ]
    }
}

/// English interrogative words that open wh-questions.
const WH_WORDS: [&str; 9] = [
    "what", "who", "whom", "whose", "which", "when", "where", "why", "how",
];

fn deprel_base(tok: &Token) -> Option<&str> {
    tok.deprel.as_deref().map(|d| d.split(':').next().unwrap_or(d))
}

fn is_verbal(tok: &Token) -> bool {
    matches!(tok.upos.as_deref(), Some("VERB" | "AUX"))
}

/// Classifies a sentence's mood and shape by a fixed rule cascade.
pub fn sentence_type(sent: &Sentence) -> SentType {
    let (Some(first), Some(last)) = (sent.tokens.first(), sent.tokens.last()) else {
        return SentType::Other;
    };
    if matches!(last.form.as_str(), "?" | "？") {
        return SentType::Q;
    }
    if WH_WORDS.contains(&first.form.to_lowercase().as_str()) {
        return SentType::Wh;
    }
    let Some(root_at) = sent.root() else {
        return SentType::Other;
    };
    let root = &sent.tokens[root_at];
    let root_id = root.index;
    let dependents = || sent.tokens.iter().filter(move |t| t.head == Some(root_id));

    if root.feat("Mood") == Some("Sub") {
        return SentType::Sub;
    }
    let has_subject =
        dependents().any(|t| matches!(deprel_base(t), Some("nsubj" | "csubj" | "expl")));
    let verb_first = root_at == 0 && root.upos.as_deref() == Some("VERB");
    if root.feat("Mood") == Some("Imp") || (verb_first && !has_subject) {
        return SentType::Imp;
    }
    if sent.len() == 1 && root.upos.as_deref() == Some("INTJ") {
        return SentType::Intj;
    }
    let predicate_is_verbal =
        is_verbal(root) || dependents().any(|t| matches!(deprel_base(t), Some("cop" | "aux")));
    if !predicate_is_verbal {
        return SentType::Frag;
    }
    match root.feat("VerbForm") {
        Some("Ger") => SentType::Ger,
        Some("Inf") => SentType::Inf,
        _ => SentType::Decl,
    }
}

/// One feature record per token, in document order.
pub fn extract_seg_features(doc: &Document) -> Vec<TokenFeatureRecord> {
    let n_sent = doc.sentences.len();
    let mut out = Vec::with_capacity(doc.token_count());
    for sent in &doc.sentences {
        let sent_type = sentence_type(sent);
        let percentile = if n_sent > 1 {
            sent.index_in_doc as f64 / (n_sent - 1) as f64
        } else {
            0.0
        };
        let n = sent.len();
        for (i, tok) in sent.tokens.iter().enumerate() {
            let label = |v: &Option<String>| v.clone().unwrap_or_else(|| ABSENT.to_string());
            let head_distance = match tok.head {
                None | Some(0) => 0,
                Some(h) => h as i64 - tok.index as i64,
            };
            out.push(TokenFeatureRecord {
                upos: label(&tok.upos),
                xpos: label(&tok.xpos),
                deprel: label(&tok.deprel),
                head_distance,
                sent_type,
                genre: doc.genre.clone(),
                sent_length: n,
                sent_doc_percentile: percentile,
                token_len: tok.form.chars().count(),
                case_shape: CaseShape::of(&tok.form),
                is_sent_first: i == 0,
                is_sent_last: i + 1 == n,
            });
        }
    }
    out
}

/// TSV dump of the token features of several documents.
pub fn dump_seg_features(docs: &[Document]) -> String {
    let mut out = String::from("doc_id\tsent\ttoken\tform\t");
    out.push_str(&TokenFeatureRecord::COLUMNS.join("\t"));
    out.push('\n');
    for doc in docs {
        let records = extract_seg_features(doc);
        let positions = doc
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(move |t| (s.index_in_doc, t)));
        for ((sent, tok), rec) in positions.zip(&records) {
            out.push_str(&format!("{}\t{}\t{}\t{}\t", doc.doc_id, sent, tok.index, tok.form));
            out.push_str(&rec.tsv_fields().join("\t"));
            out.push('\n');
        }
    }
    out
}

/// Vocabularies for the categorical token features, built from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegFeatureVocabs {
    pub vocabs: Vec<FeatureVocab>,
}

impl SegFeatureVocabs {
    pub fn build(records: &[TokenFeatureRecord]) -> Self {
        let vocabs = (0..TokenFeatureRecord::CATEGORICAL.len())
            .map(|k| FeatureVocab::build(records.iter().map(|r| r.categorical_values()[k].clone())))
            .collect();
        SegFeatureVocabs { vocabs }
    }

    /// Width of the concatenated feature embedding: categorical widths plus
    /// one dimension per numeric feature.
    pub fn feature_dim(&self) -> usize {
        self.vocabs.iter().map(FeatureVocab::embed_dim).sum::<usize>()
            + TokenFeatureRecord::NUMERIC.len()
    }

    pub fn indices(&self, rec: &TokenFeatureRecord) -> Vec<usize> {
        rec.categorical_values()
            .iter()
            .zip(&self.vocabs)
            .map(|(v, vocab)| vocab.index(v))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_conllu;
    use proptest::prelude::*;

    fn tok(index: usize, form: &str, upos: &str, head: usize, deprel: &str) -> Token {
        let mut t = Token::new(index, form);
        t.upos = Some(upos.into());
        t.head = Some(head);
        t.deprel = Some(deprel.into());
        t
    }

    fn sent(tokens: Vec<Token>) -> Sentence {
        Sentence::new(0, tokens)
    }

    #[test]
    fn table_example_labels() {
        let text = "1\tQuickly\tquickly\tPROPN\tNNP\t_\t2\tadvmod\t_\t_\n\
                    2\tgo\tgo\tVERB\tVB\t_\t0\troot\t_\t_\n";
        let docs = parse_conllu(text).unwrap();
        let recs = extract_seg_features(&docs[0]);
        assert_eq!(recs[0].upos, "PROPN");
        assert_eq!(recs[0].xpos, "NNP");
        assert_eq!(recs[0].deprel, "advmod");
        assert_eq!(recs[0].head_distance, 1);
        assert_eq!(recs[1].head_distance, 0);
    }

    #[test]
    fn head_distance_and_sentence_length() {
        let mut tokens: Vec<Token> = (1..=23).map(|i| tok(i, "w", "NOUN", 8, "dep")).collect();
        tokens[7] = tok(8, "v", "VERB", 0, "root");
        let doc = Document::from_sentences("d", vec![sent(tokens)]);
        let recs = extract_seg_features(&doc);
        assert_eq!(recs[2].head_distance, 5);
        assert_eq!(recs[9].head_distance, -2);
        assert!(recs.iter().all(|r| r.sent_length == 23));
        assert!(recs[0].is_sent_first && recs[22].is_sent_last);
    }

    #[test]
    fn absent_syntax_degrades() {
        let doc = Document::from_sentences(
            "d",
            vec![sent(vec![Token::new(1, "Hello"), Token::new(2, "WORLD")])],
        );
        let recs = extract_seg_features(&doc);
        assert_eq!(recs[0].upos, ABSENT);
        assert_eq!(recs[0].head_distance, 0);
        assert_eq!(recs[0].sent_type, SentType::Other);
        assert_eq!(recs[0].case_shape, CaseShape::Title);
        assert_eq!(recs[1].case_shape, CaseShape::Upper);
    }

    #[test]
    fn sentence_type_cascade() {
        let q = sent(vec![tok(1, "ok", "INTJ", 0, "root"), tok(2, "?", "PUNCT", 1, "punct")]);
        assert_eq!(sentence_type(&q), SentType::Q);

        let mut sub = tok(2, "were", "VERB", 0, "root");
        sub.feats.push(("Mood".into(), "Sub".into()));
        let s = sent(vec![tok(1, "I", "PRON", 2, "nsubj"), sub]);
        assert_eq!(sentence_type(&s), SentType::Sub);

        let intj = sent(vec![tok(1, "wow", "INTJ", 0, "root")]);
        assert_eq!(sentence_type(&intj), SentType::Intj);

        let wh = sent(vec![tok(1, "How", "ADV", 2, "advmod"), tok(2, "nice", "ADJ", 0, "root")]);
        assert_eq!(sentence_type(&wh), SentType::Wh);

        let imp = sent(vec![tok(1, "Go", "VERB", 0, "root"), tok(2, "home", "ADV", 1, "advmod")]);
        assert_eq!(sentence_type(&imp), SentType::Imp);

        let frag = sent(vec![tok(1, "The", "DET", 2, "det"), tok(2, "end", "NOUN", 0, "root")]);
        assert_eq!(sentence_type(&frag), SentType::Frag);

        let cop = sent(vec![
            tok(1, "It", "PRON", 3, "nsubj"),
            tok(2, "is", "AUX", 3, "cop"),
            tok(3, "fine", "ADJ", 0, "root"),
        ]);
        assert_eq!(sentence_type(&cop), SentType::Decl);

        let mut ger = tok(2, "running", "VERB", 0, "root");
        ger.feats.push(("VerbForm".into(), "Ger".into()));
        let g = sent(vec![tok(1, "Just", "ADV", 2, "advmod"), ger]);
        assert_eq!(sentence_type(&g), SentType::Ger);

        let mut inf = tok(2, "leave", "VERB", 0, "root");
        inf.feats.push(("VerbForm".into(), "Inf".into()));
        let i = sent(vec![tok(1, "to", "PART", 2, "mark"), inf]);
        assert_eq!(sentence_type(&i), SentType::Inf);
    }

    #[test]
    fn case_shapes() {
        assert_eq!(CaseShape::of("abc"), CaseShape::Lower);
        assert_eq!(CaseShape::of("ABC"), CaseShape::Upper);
        assert_eq!(CaseShape::of("Abc"), CaseShape::Title);
        assert_eq!(CaseShape::of("I"), CaseShape::Title);
        assert_eq!(CaseShape::of("iPhone"), CaseShape::Mixed);
        assert_eq!(CaseShape::of("42"), CaseShape::None);
        assert_eq!(CaseShape::of("我"), CaseShape::None);
    }

    #[test]
    fn vocab_dim_bookkeeping() {
        let doc = Document::from_sentences(
            "d",
            vec![sent(vec![tok(1, "Go", "VERB", 0, "root"), tok(2, "now", "ADV", 1, "advmod")])],
        );
        let recs = extract_seg_features(&doc);
        let vocabs = SegFeatureVocabs::build(&recs);
        let expected: usize = vocabs
            .vocabs
            .iter()
            .map(|v| super::super::categorical_embed_dim(v.cardinality().max(1)).unwrap())
            .sum::<usize>()
            + 4;
        assert_eq!(vocabs.feature_dim(), expected);
        assert_eq!(vocabs.indices(&recs[0]).len(), 8);
    }

    proptest! {
        #[test]
        fn one_record_per_token(lengths in proptest::collection::vec(1usize..12, 1..6)) {
            let sentences = lengths
                .iter()
                .enumerate()
                .map(|(s, &n)| {
                    let mut st = Sentence::new(s, (1..=n).map(|i| Token::new(i, "x")).collect());
                    st.index_in_doc = s;
                    st
                })
                .collect();
            let doc = Document::from_sentences("d", sentences);
            let recs = extract_seg_features(&doc);
            prop_assert_eq!(recs.len(), doc.token_count());
            for r in &recs {
                prop_assert!(r.sent_length >= 1);
                prop_assert!((0.0..=1.0).contains(&r.sent_doc_percentile));
            }
        }
    }
}
