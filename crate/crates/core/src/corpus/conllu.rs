use super::{Document, RawLine, SegLabel, Sentence, Token};
use crate::{DiscoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Conllu,
    Tok,
}

const FALLBACK_DOC_ID: &str = "document";

/// Parses a `.conllu` file with syntax columns.
pub fn parse_conllu(text: &str) -> Result<Vec<Document>> {
    parse(text, FALLBACK_DOC_ID, Mode::Conllu)
}

/// Like [`parse_conllu`], naming a document without `# newdoc id` `fallback_id`.
pub fn parse_conllu_named(text: &str, fallback_id: &str) -> Result<Vec<Document>> {
    parse(text, fallback_id, Mode::Conllu)
}

/// Parses a `.tok` file: forms and labels only, one sentence per blank-line group.
pub fn parse_tok(text: &str) -> Result<Vec<Document>> {
    parse(text, FALLBACK_DOC_ID, Mode::Tok)
}

pub fn parse_tok_named(text: &str, fallback_id: &str) -> Result<Vec<Document>> {
    parse(text, fallback_id, Mode::Tok)
}

/// Positions of `I-Conn` labels not preceded by `B-Conn` or `I-Conn`.
pub fn bio_violations(labels: &[SegLabel]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            label == SegLabel::InsideConn
                && (i == 0
                    || !matches!(labels[i - 1], SegLabel::BeginConn | SegLabel::InsideConn))
        })
        .map(|(i, _)| i)
        .collect()
}

/// Writes `doc` back in its original layout with the seg key of every token
/// replaced by `labels`.
pub fn serialize_seg_predictions(doc: &Document, labels: &[SegLabel]) -> Result<String> {
    let n = doc.token_count();
    if labels.len() != n {
        return Err(DiscoError::contract(format!(
            "document {} has {n} tokens but {} labels were given",
            doc.doc_id,
            labels.len()
        )));
    }
    let mut out = String::new();
    let mut next = 0;
    for line in &doc.raw {
        match line {
            RawLine::Verbatim(s) => out.push_str(s),
            RawLine::Token(cols) => {
                let label = labels[next];
                next += 1;
                for (i, col) in cols.iter().enumerate() {
                    if i > 0 {
                        out.push('\t');
                    }
                    if i == 9 {
                        out.push_str(&rewrite_misc(col, label));
                    } else {
                        out.push_str(col);
                    }
                }
            }
        }
        out.push('\n');
    }
    debug_assert_eq!(next, n);
    Ok(out)
}

/// Serializes several documents into one file.
pub fn serialize_seg_file(docs: &[Document], labels: &[Vec<SegLabel>]) -> Result<String> {
    if docs.len() != labels.len() {
        return Err(DiscoError::contract(format!(
            "{} documents but {} label sequences",
            docs.len(),
            labels.len()
        )));
    }
    let mut out = String::new();
    for (doc, labels) in docs.iter().zip(labels) {
        out.push_str(&serialize_seg_predictions(doc, labels)?);
    }
    Ok(out)
}

fn rewrite_misc(misc: &str, label: SegLabel) -> String {
    let mut entries: Vec<&str> = if misc == "_" || misc.is_empty() {
        Vec::new()
    } else {
        misc.split('|').collect()
    };
    let slot = entries
        .iter()
        .position(|e| SegLabel::from_misc_entry(e).is_some());
    entries.retain(|e| SegLabel::from_misc_entry(e).is_none());
    if let Some(entry) = label.misc_entry() {
        let at = slot.unwrap_or(entries.len()).min(entries.len());
        entries.insert(at, entry);
    }
    if entries.is_empty() {
        "_".to_string()
    } else {
        entries.join("|")
    }
}

pub(crate) fn token_columns(tok: &Token) -> Vec<String> {
    let opt = |v: &Option<String>| v.clone().unwrap_or_else(|| "_".to_string());
    let feats = if tok.feats.is_empty() {
        "_".to_string()
    } else {
        tok.feats
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("|")
    };
    let misc = if tok.misc.is_empty() {
        "_".to_string()
    } else {
        tok.misc.join("|")
    };
    vec![
        tok.index.to_string(),
        tok.form.clone(),
        opt(&tok.lemma),
        opt(&tok.upos),
        opt(&tok.xpos),
        feats,
        tok.head.map_or_else(|| "_".to_string(), |h| h.to_string()),
        opt(&tok.deprel),
        "_".to_string(),
        rewrite_misc(&misc, tok.seg_label),
    ]
}

fn comment_value<'a>(line: &'a str, keys: &[&str]) -> Option<&'a str> {
    let body = line.strip_prefix('#')?.trim_start();
    for key in keys {
        if let Some(rest) = body.strip_prefix(key) {
            let rest = rest.trim_start();
            if let Some(value) = rest.strip_prefix('=') {
                return Some(value.trim());
            }
        }
    }
    None
}

fn absent(col: &str) -> Option<String> {
    (col != "_").then(|| col.to_string())
}

struct DocBuilder {
    doc_id: Option<String>,
    genre: Option<String>,
    raw: Vec<RawLine>,
    sentences: Vec<Sentence>,
    current: Vec<Token>,
    speaker: Option<String>,
    start_line: usize,
}

impl DocBuilder {
    fn new(doc_id: Option<String>, start_line: usize) -> Self {
        DocBuilder {
            doc_id,
            genre: None,
            raw: Vec::new(),
            sentences: Vec::new(),
            current: Vec::new(),
            speaker: None,
            start_line,
        }
    }

    fn has_tokens(&self) -> bool {
        !self.sentences.is_empty() || !self.current.is_empty()
    }

    fn close_sentence(&mut self, line: usize, mode: Mode) -> Result<()> {
        if self.current.is_empty() {
            self.speaker = None;
            return Ok(());
        }
        let tokens = std::mem::take(&mut self.current);
        if mode == Mode::Conllu {
            let n = tokens.len();
            for tok in &tokens {
                if let Some(head) = tok.head {
                    if head > n {
                        return Err(DiscoError::format(
                            line,
                            format!(
                                "token {} has head {head} outside its {n}-token sentence",
                                tok.index
                            ),
                        ));
                    }
                }
            }
        }
        let speaker = self
            .speaker
            .take()
            .or_else(|| tokens[0].misc_value("speaker").map(str::to_string));
        let mut sent = Sentence::new(self.sentences.len(), tokens);
        sent.speaker = speaker;
        self.sentences.push(sent);
        Ok(())
    }

    fn finish(mut self, fallback_id: &str, line: usize, mode: Mode) -> Result<Document> {
        self.close_sentence(line, mode)?;
        let doc_id = self.doc_id.unwrap_or_else(|| fallback_id.to_string());
        if doc_id.is_empty() {
            return Err(DiscoError::format(self.start_line, "empty document id"));
        }
        if self.sentences.is_empty() {
            return Err(DiscoError::format(
                self.start_line,
                format!("document {doc_id} has no tokens"),
            ));
        }
        let genre = self.genre.or_else(|| {
            doc_id
                .strip_prefix("GUM_")
                .and_then(|rest| rest.split('_').next())
                .map(str::to_string)
        });
        let labels: Vec<SegLabel> = self
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.seg_label))
            .collect();
        let violations = bio_violations(&labels);
        if !violations.is_empty() {
            log::warn!(
                "document {doc_id}: I-Conn without an open B-Conn at token(s) {:?}",
                violations.iter().map(|i| i + 1).collect::<Vec<_>>()
            );
        }
        Ok(Document {
            doc_id,
            genre,
            language: "und".to_string(),
            framework: None,
            sentences: self.sentences,
            raw: self.raw,
        })
    }
}

fn parse(text: &str, fallback_id: &str, mode: Mode) -> Result<Vec<Document>> {
    let text = text.replace("\r\n", "\n");
    let mut docs = Vec::new();
    let mut builder = DocBuilder::new(None, 1);
    let mut last_line = 0;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        last_line = lineno;
        if line.starts_with('#') {
            if let Some(id) = comment_value(line, &["newdoc id"]) {
                if builder.has_tokens() {
                    let done = std::mem::replace(
                        &mut builder,
                        DocBuilder::new(Some(id.to_string()), lineno),
                    );
                    docs.push(done.finish(fallback_id, lineno, mode)?);
                } else {
                    builder.doc_id = Some(id.to_string());
                    builder.start_line = lineno;
                }
            } else if let Some(genre) =
                comment_value(line, &["newdoc genre", "meta::genre", "genre"])
            {
                builder.genre = Some(genre.to_string());
            } else if let Some(speaker) = comment_value(line, &["speaker"]) {
                builder.speaker = Some(speaker.to_string());
            }
            builder.raw.push(RawLine::Verbatim(line.to_string()));
            continue;
        }
        if line.trim().is_empty() {
            builder.close_sentence(lineno, mode)?;
            builder.raw.push(RawLine::Verbatim(line.to_string()));
            continue;
        }

        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(DiscoError::format(
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            // multiword token range or empty node: not part of the token sequence
            builder.raw.push(RawLine::Verbatim(line.to_string()));
            continue;
        }
        let file_index: usize = id
            .parse()
            .map_err(|_| DiscoError::format(lineno, format!("invalid token id {id:?}")))?;
        let index = builder.current.len() + 1;
        if mode == Mode::Conllu && file_index != index {
            return Err(DiscoError::format(
                lineno,
                format!("token id {file_index} breaks the contiguous sequence (expected {index})"),
            ));
        }

        let mut tok = Token::new(index, cols[1]);
        if cols[9] != "_" && !cols[9].is_empty() {
            tok.misc = cols[9].split('|').map(str::to_string).collect();
        }
        for entry in &tok.misc {
            if let Some(label) = SegLabel::from_misc_entry(entry) {
                tok.seg_label = label.unwrap_or(SegLabel::None);
            }
        }

        let head = match cols[6] {
            "_" => None,
            h => Some(h.parse::<usize>().map_err(|_| {
                DiscoError::format(lineno, format!("head {h:?} is not a non-negative integer"))
            })?),
        };
        if mode == Mode::Conllu {
            if head == Some(file_index) {
                return Err(DiscoError::format(
                    lineno,
                    format!("token {file_index} is its own head"),
                ));
            }
            tok.lemma = absent(cols[2]);
            tok.upos = absent(cols[3]);
            tok.xpos = absent(cols[4]);
            if cols[5] != "_" {
                tok.feats = cols[5]
                    .split('|')
                    .filter_map(|f| f.split_once('='))
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect();
            }
            tok.head = head;
            tok.deprel = absent(cols[7]);
        }
        builder.current.push(tok);
        builder
            .raw
            .push(RawLine::Token(cols.iter().map(|c| c.to_string()).collect()));
    }

    if builder.has_tokens() {
        docs.push(builder.finish(fallback_id, last_line, mode)?);
    } else if builder.doc_id.is_some() {
        return Err(DiscoError::format(
            builder.start_line,
            format!(
                "document {} has no tokens",
                builder.doc_id.unwrap_or_default()
            ),
        ));
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_TOKENS: &str = "# newdoc id = d1\n\
        1\tHello\thello\tINTJ\tUH\t_\t0\troot\t_\tBeginSeg=Yes\n\
        2\tthere\tthere\tADV\tRB\t_\t1\tadvmod\t_\t_\n\n";

    #[test]
    fn minimal_document() {
        let docs = parse_conllu(TWO_TOKENS).unwrap();
        assert_eq!(docs.len(), 1);
        let doc = &docs[0];
        assert_eq!(doc.doc_id, "d1");
        assert_eq!(doc.sentences.len(), 1);
        let toks = &doc.sentences[0].tokens;
        assert_eq!(toks[0].seg_label, SegLabel::BeginSeg);
        assert_eq!(toks[1].seg_label, SegLabel::None);
        assert_eq!(toks[0].head, Some(0));
        assert_eq!(toks[0].deprel.as_deref(), Some("root"));
        assert_eq!(toks[1].upos.as_deref(), Some("ADV"));
    }

    #[test]
    fn nine_columns_is_an_error() {
        let text = "# newdoc id = d1\n1\ta\ta\tX\tX\t_\t0\troot\t_\n";
        match parse_conllu(text) {
            Err(DiscoError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn non_integer_head() {
        let text = "1\ta\ta\tX\tX\t_\tzero\troot\t_\t_\n";
        assert!(matches!(
            parse_conllu(text),
            Err(DiscoError::Format { line: 1, .. })
        ));
    }

    #[test]
    fn dangling_inside_conn_is_not_fatal() {
        let text = "1\ta\t_\t_\t_\t_\t_\t_\t_\tSeg=I-Conn\n";
        let docs = parse_tok(text).unwrap();
        assert_eq!(docs[0].labels(), vec![SegLabel::InsideConn]);
        assert_eq!(bio_violations(&docs[0].labels()), vec![0]);
    }

    #[test]
    fn tok_file_without_syntax() {
        let text = "# newdoc id = t1\n\
            1\tWe\t_\t_\t_\t_\t_\t_\t_\tBeginSeg=Yes\n\
            2\tleft\t_\t_\t_\t_\t_\t_\t_\t_\n\
            3\tbecause\t_\t_\t_\t_\t_\t_\t_\tSeg=B-Conn\n";
        let docs = parse_tok(text).unwrap();
        let toks = &docs[0].sentences[0].tokens;
        assert_eq!(toks.len(), 3);
        assert!(toks.iter().all(|t| t.upos.is_none() && t.deprel.is_none()));
        assert_eq!(toks[2].seg_label, SegLabel::BeginConn);
    }

    #[test]
    fn empty_file() {
        assert!(parse_tok("").unwrap().is_empty());
        assert!(parse_conllu("\n\n").unwrap().is_empty());
    }

    #[test]
    fn missing_newdoc_uses_fallback() {
        let text = "1\ta\t_\t_\t_\t_\t_\t_\t_\t_\n";
        let docs = parse_tok_named(text, "file_stem").unwrap();
        assert_eq!(docs[0].doc_id, "file_stem");
    }

    #[test]
    fn crlf_is_normalized() {
        let docs = parse_conllu(&TWO_TOKENS.replace('\n', "\r\n")).unwrap();
        assert_eq!(docs[0].token_count(), 2);
        let out = serialize_seg_predictions(&docs[0], &docs[0].labels()).unwrap();
        assert_eq!(out, TWO_TOKENS);
    }

    #[test]
    fn serialize_round_trip_and_relabel() {
        let docs = parse_conllu(TWO_TOKENS).unwrap();
        let doc = &docs[0];
        assert_eq!(
            serialize_seg_predictions(doc, &doc.labels()).unwrap(),
            TWO_TOKENS
        );
        let none = serialize_seg_predictions(doc, &[SegLabel::None; 2]).unwrap();
        assert!(!none.contains("BeginSeg") && !none.contains("Seg="));
        let conn =
            serialize_seg_predictions(doc, &[SegLabel::None, SegLabel::BeginConn]).unwrap();
        assert!(conn.lines().nth(2).unwrap().ends_with("\tSeg=B-Conn"));
        assert!(matches!(
            serialize_seg_predictions(doc, &[SegLabel::None]),
            Err(DiscoError::Contract(_))
        ));
    }

    #[test]
    fn misc_rewrite_keeps_other_entries() {
        assert_eq!(
            rewrite_misc("SpaceAfter=No|BeginSeg=Yes|Foo=1", SegLabel::BeginConn),
            "SpaceAfter=No|Seg=B-Conn|Foo=1"
        );
        assert_eq!(rewrite_misc("SpaceAfter=No", SegLabel::BeginSeg), "SpaceAfter=No|BeginSeg=Yes");
        assert_eq!(rewrite_misc("BeginSeg=Yes", SegLabel::None), "_");
    }

    #[test]
    fn multiword_lines_pass_through() {
        let text = "# newdoc id = es\n\
            1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n\
            1\tde\tde\tADP\t_\t_\t2\tcase\t_\tBeginSeg=Yes\n\
            2\tel\tel\tDET\t_\t_\t0\troot\t_\t_\n\n";
        let docs = parse_conllu(text).unwrap();
        assert_eq!(docs[0].token_count(), 2);
        assert_eq!(
            serialize_seg_predictions(&docs[0], &docs[0].labels()).unwrap(),
            text
        );
    }

    #[test]
    fn speaker_and_genre_metadata() {
        let text = "# newdoc id = GUM_reddit_cats\n# speaker = alice\n\
            1\thi\t_\t_\t_\t_\t_\t_\t_\t_\n\n\
            1\tyo\t_\t_\t_\t_\t_\t_\t_\tspeaker=bob\n";
        let docs = parse_tok(text).unwrap();
        assert_eq!(docs[0].genre.as_deref(), Some("reddit"));
        assert_eq!(docs[0].sentences[0].speaker.as_deref(), Some("alice"));
        assert_eq!(docs[0].sentences[1].speaker.as_deref(), Some("bob"));
    }

    #[test]
    fn two_documents() {
        let text = format!("{TWO_TOKENS}{}", TWO_TOKENS.replace("d1", "d2"));
        let docs = parse_conllu(&text).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].doc_id, "d2");
        let labels: Vec<_> = docs.iter().map(|d| d.labels()).collect();
        assert_eq!(serialize_seg_file(&docs, &labels).unwrap(), text);
    }
}
