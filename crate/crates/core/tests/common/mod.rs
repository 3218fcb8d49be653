//! Rule-generated corpora for the integration tests.
#![allow(dead_code)]

use std::path::Path;

use disco::corpus::{serialize_seg_file, Direction, Document, RelationInstance, SegLabel, Sentence, Token};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLERS: [&str; 40] = [
    "river", "stone", "garden", "window", "teacher", "market", "winter", "engine", "letter", "forest",
    "painter", "bridge", "castle", "doctor", "island", "planet", "rabbit", "silver", "tunnel", "violin",
    "walks", "builds", "paints", "reads", "carries", "finds", "opens", "watches", "sells", "follows",
    "green", "quiet", "early", "heavy", "bright", "narrow", "gentle", "distant", "simple", "golden",
];

const FINAL: [&str; 3] = [".", "!", "?"];
const NON_FINAL: [&str; 2] = [",", ";"];

pub struct Splits {
    pub train: Vec<Document>,
    pub dev: Vec<Document>,
    pub test: Vec<Document>,
}

fn split(mut docs: Vec<Document>) -> Splits {
    let test = docs.split_off(docs.len() * 9 / 10);
    let dev = docs.split_off(docs.len() * 8 / 9);
    Splits { train: docs, dev, test }
}

fn make_doc(id: String, sents: Vec<Vec<(String, SegLabel)>>) -> Document {
    let sentences = sents
        .into_iter()
        .enumerate()
        .map(|(si, toks)| {
            let tokens = toks
                .into_iter()
                .enumerate()
                .map(|(i, (form, label))| {
                    let mut t = Token::new(i + 1, form);
                    t.seg_label = label;
                    t
                })
                .collect();
            Sentence::new(si, tokens)
        })
        .collect();
    Document::from_sentences(id, sentences)
}

/// Boundary iff the token follows `.`, `!` or `?`, or starts the document.
/// Sentences hold one to three clauses; inner clauses may end in `,` or `;`.
pub fn seg_corpus(n_docs: usize, seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..n_docs)
        .map(|d| {
            let mut after_final = true;
            let sents = (0..rng.random_range(2..=4))
                .map(|_| {
                    let n_clauses = rng.random_range(1..=3);
                    let mut toks = Vec::new();
                    for c in 0..n_clauses {
                        for _ in 0..rng.random_range(2..=6) {
                            let mut w = FILLERS.choose(&mut rng).unwrap().to_string();
                            if after_final && rng.random_bool(0.5) {
                                w[..1].make_ascii_uppercase();
                            }
                            let label = if after_final { SegLabel::BeginSeg } else { SegLabel::None };
                            toks.push((w, label));
                            after_final = false;
                        }
                        let punct = if c + 1 == n_clauses || rng.random_bool(0.4) {
                            *FINAL.choose(&mut rng).unwrap()
                        } else {
                            *NON_FINAL.choose(&mut rng).unwrap()
                        };
                        toks.push((punct.to_string(), SegLabel::None));
                        after_final = FINAL.contains(&punct);
                    }
                    toks
                })
                .collect();
            make_doc(format!("seg_doc{d:03}"), sents)
        })
        .collect();
    split(docs)
}

pub const CONNECTIVES: [&str; 10] = [
    "because",
    "however",
    "therefore",
    "although",
    "but",
    "meanwhile",
    "as a result",
    "in addition",
    "even though",
    "so that",
];

/// Every occurrence of a lexicon entry is a BIO-marked connective.
pub fn conn_corpus(n_docs: usize, seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..n_docs)
        .map(|d| {
            let sents = (0..rng.random_range(2..=4))
                .map(|_| {
                    let mut toks: Vec<(String, SegLabel)> = (0..rng.random_range(4..=9))
                        .map(|_| (FILLERS.choose(&mut rng).unwrap().to_string(), SegLabel::None))
                        .collect();
                    for _ in 0..rng.random_range(0..=2) {
                        let conn = CONNECTIVES.choose(&mut rng).unwrap();
                        let at = rng.random_range(0..=toks.len());
                        let words: Vec<(String, SegLabel)> = conn
                            .split(' ')
                            .enumerate()
                            .map(|(i, w)| {
                                let l = if i == 0 { SegLabel::BeginConn } else { SegLabel::InsideConn };
                                (w.to_string(), l)
                            })
                            .collect();
                        // Never split an existing connective.
                        let at = (at..=toks.len())
                            .find(|&i| i == toks.len() || toks[i].1 != SegLabel::InsideConn)
                            .unwrap();
                        toks.splice(at..at, words);
                    }
                    toks.push((".".to_string(), SegLabel::None));
                    toks
                })
                .collect();
            make_doc(format!("conn_doc{d:03}"), sents)
        })
        .collect();
    split(docs)
}

pub struct RelSplits {
    pub docs: Vec<Document>,
    pub train: Vec<RelationInstance>,
    pub dev: Vec<RelationInstance>,
    pub test: Vec<RelationInstance>,
}

/// Label as a function of direction and whether the units share a content word.
pub fn rel_label(direction: Direction, overlap: bool) -> &'static str {
    match (direction, overlap) {
        (Direction::LeftToRight, true) => "elaboration",
        (Direction::LeftToRight, false) => "joint",
        (Direction::RightToLeft, true) => "restatement",
        (Direction::RightToLeft, false) => "background",
    }
}

/// Documents of short sentences; each relation links two adjacent
/// sentences as units.
pub fn rel_corpus(n_docs: usize, seed: u64) -> RelSplits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut all: Vec<RelationInstance> = Vec::new();
    for d in 0..n_docs {
        let doc_id = format!("rel_doc{d:03}");
        let n_sent = rng.random_range(3..=5);
        let mut sents: Vec<Vec<String>> = Vec::new();
        let mut overlaps = Vec::new();
        for s in 0..n_sent {
            let len = rng.random_range(3..=6);
            let overlap = s > 0 && rng.random_bool(0.5);
            let prev: Vec<String> = sents.last().cloned().unwrap_or_default();
            let pool: Vec<&str> = FILLERS.iter().copied().filter(|w| !prev.iter().any(|p| p == w)).collect();
            let mut words: Vec<String> = (0..len).map(|_| pool.choose(&mut rng).unwrap().to_string()).collect();
            if overlap {
                let shared = prev.iter().filter(|w| w.chars().all(char::is_alphanumeric)).collect::<Vec<_>>();
                let at = rng.random_range(0..words.len());
                words[at] = shared.choose(&mut rng).unwrap().to_string();
            }
            words.push(".".to_string());
            sents.push(words);
            overlaps.push(overlap);
        }
        let mut offset = 1;
        let mut spans = Vec::new();
        for s in &sents {
            spans.push((offset, offset + s.len() - 1));
            offset += s.len();
        }
        for s in 1..n_sent {
            let direction = if rng.random_bool(0.5) { Direction::LeftToRight } else { Direction::RightToLeft };
            let u1 = sents[s - 1].join(" ");
            let u2 = sents[s].join(" ");
            all.push(RelationInstance {
                doc_id: doc_id.clone(),
                unit1_spans: vec![spans[s - 1]],
                unit2_spans: vec![spans[s]],
                unit1_text: u1.clone(),
                unit2_text: u2.clone(),
                unit1_sent_text: u1,
                unit2_sent_text: u2,
                direction,
                label: rel_label(direction, overlaps[s]).to_string(),
            });
        }
        let labeled = sents
            .into_iter()
            .map(|s| s.into_iter().map(|w| (w, SegLabel::None)).collect())
            .collect();
        docs.push(make_doc(doc_id, labeled));
    }
    let n = all.len();
    let test = all.split_off(n * 9 / 10);
    let dev = all.split_off(all.len() * 8 / 9);
    RelSplits { docs, train: all, dev, test }
}

pub fn conllu_text(docs: &[Document]) -> String {
    let labels: Vec<Vec<SegLabel>> = docs.iter().map(Document::labels).collect();
    serialize_seg_file(docs, &labels).unwrap()
}

pub fn rels_text(instances: &[RelationInstance]) -> String {
    let span = |s: &[(usize, usize)]| {
        s.iter()
            .map(|&(a, b)| if a == b { a.to_string() } else { format!("{a}-{b}") })
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = String::from(
        "doc\tunit1_toks\tunit2_toks\tunit1_txt\tunit2_txt\ts1_toks\ts2_toks\tunit1_sent\tunit2_sent\tdir\torig_label\tlabel\n",
    );
    for i in instances {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            i.doc_id,
            span(&i.unit1_spans),
            span(&i.unit2_spans),
            i.unit1_text,
            i.unit2_text,
            span(&i.unit1_spans),
            span(&i.unit2_spans),
            i.unit1_sent_text,
            i.unit2_sent_text,
            i.direction.as_str(),
            i.label,
            i.label
        ));
    }
    out
}

pub fn write(path: &Path, text: &str) {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).unwrap();
    }
    std::fs::write(path, text).unwrap();
}
