//! Sentence splitting and syntactic annotation for tokenized input without
//! gold sentence breaks.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use crate::corpus::{parse_conllu_named, Document, Sentence, Token};
use crate::{DiscoError, Result};

/// Sentence-final tokens recognized by [`split_on_punctuation`].
pub const DEFAULT_SPLITTERS: [&str; 6] = [".", "!", "?", "。", "！", "？"];

/// Languages for which punctuation splitting is the configured strategy.
const PUNCTUATION_LANGUAGES: [&str; 2] = ["fas", "zho"];

#[derive(Debug, Clone)]
pub struct PunctuationSplitter {
    splitters: Vec<String>,
}

impl Default for PunctuationSplitter {
    fn default() -> Self {
        Self::new(DEFAULT_SPLITTERS.iter().map(|s| s.to_string()).collect())
    }
}

impl PunctuationSplitter {
    pub fn new(splitters: Vec<String>) -> Self {
        PunctuationSplitter { splitters }
    }

    fn is_splitter(&self, form: &str) -> bool {
        self.splitters.iter().any(|s| s == form)
    }

    /// Sentence lengths for a token sequence: a break follows every splitter token.
    pub fn boundaries(&self, forms: &[&str]) -> Vec<usize> {
        let mut lengths = Vec::new();
        let mut current = 0;
        for form in forms {
            current += 1;
            if self.is_splitter(form) {
                lengths.push(current);
                current = 0;
            }
        }
        if current > 0 {
            lengths.push(current);
        }
        lengths
    }

    pub fn split(&self, doc: &Document) -> Result<Document> {
        if doc.token_count() == 0 {
            return Err(DiscoError::contract(format!(
                "document {} has no tokens to split",
                doc.doc_id
            )));
        }
        let lengths = self.boundaries(&doc.forms());
        resegment(doc, &lengths)
    }
}

/// Splits after `.`, `!`, `?` and their full-width equivalents.
pub fn split_on_punctuation(doc: &Document, language: &str) -> Result<Document> {
    if !PUNCTUATION_LANGUAGES.contains(&language) {
        log::warn!(
            "punctuation sentence splitting applied to language {language:?}; \
             it is tuned for fas and zho"
        );
    }
    PunctuationSplitter::default().split(doc)
}

/// Rebuilds `doc` with new sentence lengths, keeping token order and content.
///
/// Sentences whose extent changes lose their syntax, since head indices are
/// sentence-relative.
pub fn resegment(doc: &Document, lengths: &[usize]) -> Result<Document> {
    let total: usize = lengths.iter().sum();
    if total != doc.token_count() || lengths.contains(&0) {
        return Err(DiscoError::contract(format!(
            "sentence lengths {lengths:?} do not partition the {} tokens of {}",
            doc.token_count(),
            doc.doc_id
        )));
    }
    let old_extents: Vec<(usize, usize)> = doc
        .sentence_offsets()
        .into_iter()
        .zip(doc.sentences.iter().map(Sentence::len))
        .collect();
    let speakers: Vec<Option<&String>> = doc
        .sentences
        .iter()
        .flat_map(|s| std::iter::repeat(s.speaker.as_ref()).take(s.len()))
        .collect();
    let mut tokens = doc.tokens().cloned();
    let mut sentences = Vec::with_capacity(lengths.len());
    let mut offset = 1;
    for (i, &len) in lengths.iter().enumerate() {
        let keep_syntax = old_extents.contains(&(offset, len));
        let mut sent_tokens: Vec<Token> = tokens.by_ref().take(len).collect();
        for (j, tok) in sent_tokens.iter_mut().enumerate() {
            tok.index = j + 1;
            if !keep_syntax {
                tok.clear_syntax();
            }
        }
        let mut sent = Sentence::new(i, sent_tokens);
        sent.speaker = speakers[offset - 1].cloned();
        sentences.push(sent);
        offset += len;
    }
    let mut out = doc.clone();
    out.sentences = sentences;
    Ok(out)
}

/// Syntax for one token as produced by an annotator.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntaxAnnotation {
    pub lemma: Option<String>,
    pub upos: Option<String>,
    pub xpos: Option<String>,
    pub feats: Vec<(String, String)>,
    pub head: Option<usize>,
    pub deprel: Option<String>,
}

/// A third-party sentence splitter plus tagger/parser.
pub trait ExternalAnnotator {
    /// Sentence lengths partitioning `tokens`.
    fn split(&self, tokens: &[&str]) -> Result<Vec<usize>>;

    /// One annotation per token of `sentence`.
    fn parse(&self, sentence: &[&str]) -> Result<Vec<SyntaxAnnotation>>;

    /// Whether concurrent calls from several workers are safe.
    fn is_reentrant(&self) -> bool {
        false
    }

    fn is_available(&self) -> bool {
        true
    }
}

/// Re-splits `doc` with the annotator and fills in its syntax.
pub fn annotate_syntax(doc: &Document, annotator: &dyn ExternalAnnotator) -> Result<Document> {
    if !annotator.is_available() {
        return Err(DiscoError::Annotator(
            "annotator unavailable; fall back to punctuation splitting without syntax".into(),
        ));
    }
    let forms = doc.forms();
    let lengths = annotator.split(&forms)?;
    let mut out = resegment(doc, &lengths)?;
    for sent in &mut out.sentences {
        let forms: Vec<&str> = sent.tokens.iter().map(|t| t.form.as_str()).collect();
        let parsed = annotator.parse(&forms)?;
        if parsed.len() != forms.len() {
            return Err(DiscoError::contract(format!(
                "annotator returned {} analyses for a {}-token sentence",
                parsed.len(),
                forms.len()
            )));
        }
        for (tok, syn) in sent.tokens.iter_mut().zip(parsed) {
            tok.lemma = syn.lemma;
            tok.upos = syn.upos;
            tok.xpos = syn.xpos;
            tok.feats = syn.feats;
            tok.head = syn.head;
            tok.deprel = syn.deprel;
        }
    }
    Ok(out)
}

/// Runs an external program that reads CoNLL-U on stdin and writes
/// CoNLL-U on stdout.
///
/// `split` sends the whole document as one sentence and reads the sentence
/// breaks of the output; `parse` sends one sentence and reads its columns.
#[derive(Debug, Clone)]
pub struct SubprocessAnnotator {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub reentrant: bool,
}

impl SubprocessAnnotator {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        SubprocessAnnotator {
            program: program.into(),
            args,
            reentrant: false,
        }
    }

    fn run(&self, forms: &[&str]) -> Result<Vec<Sentence>> {
        let mut input = String::new();
        for (i, form) in forms.iter().enumerate() {
            input.push_str(&format!("{}\t{form}\t_\t_\t_\t_\t_\t_\t_\t_\n", i + 1));
        }
        input.push('\n');
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| {
                DiscoError::Annotator(format!(
                    "cannot start {}: {e}; fall back to punctuation splitting without syntax",
                    self.program.display()
                ))
            })?;
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let output = child
            .wait_with_output()
            .map_err(|e| DiscoError::Annotator(e.to_string()))?;
        writer
            .join()
            .map_err(|_| DiscoError::Annotator("writer thread panicked".into()))?
            .map_err(|e| DiscoError::Annotator(e.to_string()))?;
        if !output.status.success() {
            return Err(DiscoError::Annotator(format!(
                "{} exited with {}: {}",
                self.program.display(),
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        let text = String::from_utf8(output.stdout)
            .map_err(|e| DiscoError::Annotator(format!("annotator output is not UTF-8: {e}")))?;
        let docs = parse_conllu_named(&text, "annotator")?;
        let sentences: Vec<Sentence> = docs.into_iter().flat_map(|d| d.sentences).collect();
        let returned: Vec<&str> = sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(|t| t.form.as_str()))
            .collect();
        if returned != forms {
            return Err(DiscoError::contract(format!(
                "annotator changed the token sequence ({} tokens in, {} out)",
                forms.len(),
                returned.len()
            )));
        }
        Ok(sentences)
    }
}

impl ExternalAnnotator for SubprocessAnnotator {
    fn split(&self, tokens: &[&str]) -> Result<Vec<usize>> {
        Ok(self.run(tokens)?.iter().map(Sentence::len).collect())
    }

    fn parse(&self, sentence: &[&str]) -> Result<Vec<SyntaxAnnotation>> {
        let sentences = self.run(sentence)?;
        Ok(sentences
            .into_iter()
            .flat_map(|s| s.tokens)
            .map(|t| SyntaxAnnotation {
                lemma: t.lemma,
                upos: t.upos,
                xpos: t.xpos,
                feats: t.feats,
                head: t.head,
                deprel: t.deprel,
            })
            .collect())
    }

    fn is_reentrant(&self) -> bool {
        self.reentrant
    }

    fn is_available(&self) -> bool {
        self.program.is_file() || which(&self.program)
    }
}

fn which(program: &std::path::Path) -> bool {
    if program.components().count() > 1 {
        return false;
    }
    std::env::var_os("PATH")
        .map(|paths| std::env::split_paths(&paths).any(|dir| dir.join(program).is_file()))
        .unwrap_or(false)
}
