//! Per-instance features for relation classification.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{fmt_real, Stoplist, ABSENT};
use crate::corpus::{span_token_count, CorpusId, Direction, Document, Framework, RelationInstance, Span};
use crate::{DiscoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelFeature {
    Genre,
    ChildrenU1,
    ChildrenU2,
    DiscontinuousU1,
    DiscontinuousU2,
    IsSentenceU1,
    IsSentenceU2,
    LengthRatio,
    SameSpeaker,
    DocLength,
    PositionU1,
    PositionU2,
    Distance,
    LexicalOverlap,
    Direction,
}

impl RelFeature {
    pub const ALL: [RelFeature; 15] = [
        RelFeature::Genre,
        RelFeature::ChildrenU1,
        RelFeature::ChildrenU2,
        RelFeature::DiscontinuousU1,
        RelFeature::DiscontinuousU2,
        RelFeature::IsSentenceU1,
        RelFeature::IsSentenceU2,
        RelFeature::LengthRatio,
        RelFeature::SameSpeaker,
        RelFeature::DocLength,
        RelFeature::PositionU1,
        RelFeature::PositionU2,
        RelFeature::Distance,
        RelFeature::LexicalOverlap,
        RelFeature::Direction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RelFeature::Genre => "genre",
            RelFeature::ChildrenU1 => "children_u1",
            RelFeature::ChildrenU2 => "children_u2",
            RelFeature::DiscontinuousU1 => "discontinuous_u1",
            RelFeature::DiscontinuousU2 => "discontinuous_u2",
            RelFeature::IsSentenceU1 => "is_sentence_u1",
            RelFeature::IsSentenceU2 => "is_sentence_u2",
            RelFeature::LengthRatio => "length_ratio",
            RelFeature::SameSpeaker => "same_speaker",
            RelFeature::DocLength => "doc_length",
            RelFeature::PositionU1 => "position_u1",
            RelFeature::PositionU2 => "position_u2",
            RelFeature::Distance => "distance",
            RelFeature::LexicalOverlap => "lexical_overlap",
            RelFeature::Direction => "direction",
        }
    }

    pub fn is_categorical(self) -> bool {
        matches!(
            self,
            RelFeature::Genre
                | RelFeature::DiscontinuousU1
                | RelFeature::DiscontinuousU2
                | RelFeature::IsSentenceU1
                | RelFeature::IsSentenceU2
                | RelFeature::SameSpeaker
                | RelFeature::Direction
        )
    }

    /// Expands a menu entry; paired features may be named without the unit suffix.
    pub fn expand(name: &str) -> Option<Vec<RelFeature>> {
        let pair = |a, b| Some(vec![a, b]);
        match name {
            "children" => pair(RelFeature::ChildrenU1, RelFeature::ChildrenU2),
            "discontinuous" => pair(RelFeature::DiscontinuousU1, RelFeature::DiscontinuousU2),
            "is_sentence" => pair(RelFeature::IsSentenceU1, RelFeature::IsSentenceU2),
            "position" => pair(RelFeature::PositionU1, RelFeature::PositionU2),
            _ => name.parse().ok().map(|f| vec![f]),
        }
    }

    fn default_transform(self) -> NumericTransform {
        match self {
            RelFeature::PositionU1 | RelFeature::PositionU2 => NumericTransform::Bin {
                bins: 10,
                min: 0.0,
                max: 1.0,
            },
            _ => NumericTransform::Log,
        }
    }
}

impl FromStr for RelFeature {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        RelFeature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown relation feature {s:?}"))
    }
}

impl fmt::Display for RelFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How a numeric feature enters the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericTransform {
    /// Signed log scaling, one dimension.
    Log,
    /// The value itself, one dimension.
    Raw,
    /// Equal-width bins over `[min, max]` (clamped), embedded.
    Bin { bins: usize, min: f64, max: f64 },
}

impl NumericTransform {
    pub fn bin_index(&self, x: f64) -> Option<usize> {
        match *self {
            NumericTransform::Bin { bins, min, max } => {
                let t = ((x - min) / (max - min)).clamp(0.0, 1.0);
                Some(((t * bins as f64) as usize).min(bins - 1))
            }
            _ => None,
        }
    }
}

/// Which unit of a `1>2` relation is the head when counting children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadSide {
    /// `1>2`: unit 2 attaches to unit 1.
    #[default]
    Unit1OnLeftToRight,
    /// `1>2`: unit 1 attaches to unit 2.
    Unit2OnLeftToRight,
}

/// Enabled features (in vector order) and numeric transforms for a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFeatureConfig {
    pub features: Vec<RelFeature>,
    #[serde(default)]
    pub transforms: BTreeMap<RelFeature, NumericTransform>,
    #[serde(default)]
    pub head_side: HeadSide,
}

impl CorpusFeatureConfig {
    pub fn new(features: Vec<RelFeature>) -> Self {
        CorpusFeatureConfig {
            features,
            transforms: BTreeMap::new(),
            head_side: HeadSide::default(),
        }
    }

    /// Parses menu names such as `["direction", "children", "position"]`.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut features = Vec::new();
        for name in names {
            let expanded = RelFeature::expand(name.as_ref()).ok_or_else(|| {
                DiscoError::config(format!("unknown relation feature {:?}", name.as_ref()))
            })?;
            for f in expanded {
                if !features.contains(&f) {
                    features.push(f);
                }
            }
        }
        Ok(Self::new(features))
    }

    pub fn none() -> Self {
        Self::new(Vec::new())
    }

    pub fn transform(&self, feature: RelFeature) -> NumericTransform {
        self.transforms
            .get(&feature)
            .copied()
            .unwrap_or_else(|| feature.default_transform())
    }

    pub fn is_enabled(&self, feature: RelFeature) -> bool {
        self.features.contains(&feature)
    }
}

const DISCONTINUOUS_CORPORA: [&str; 6] = [
    "eng.rst.gum",
    "eng.rst.rstdt",
    "por.rst.cstn",
    "spa.rst.rststb",
    "zho.rst.sctb",
    "fas.rst.prstc",
];
const DISTANCE_CORPORA: [&str; 8] = [
    "deu.rst.pcc",
    "eng.rst.gum",
    "eng.rst.rstdt",
    "eng.sdrt.stac",
    "eus.rst.ert",
    "fra.sdrt.annodis",
    "nld.rst.nldt",
    "rus.rst.rrt",
];
const POSITION_CORPORA: [&str; 8] = [
    "eng.pdtb.pdtb",
    "eng.rst.gum",
    "eng.rst.rstdt",
    "por.rst.cstn",
    "spa.rst.rststb",
    "spa.rst.sctb",
    "tur.pdtb.tdb",
    "zho.pdtb.cdtb",
];

/// Default feature menu for a shared-task corpus id.
pub fn default_feature_menu(corpus_id: &str) -> CorpusFeatureConfig {
    let id = CorpusId::parse(corpus_id);
    let mut names = vec!["direction", "lexical_overlap"];
    match id.framework {
        Some(Framework::Rst) => names.push("children"),
        Some(Framework::Pdtb) => names.push("length_ratio"),
        Some(Framework::Sdrt) | None => {}
    }
    if corpus_id == "eng.sdrt.stac" {
        names.push("same_speaker");
    }
    if corpus_id == "eng.rst.gum" {
        names.push("genre");
    }
    if DISCONTINUOUS_CORPORA.contains(&corpus_id) {
        names.push("discontinuous");
    }
    if DISTANCE_CORPORA.contains(&corpus_id) {
        names.push("distance");
    }
    if POSITION_CORPORA.contains(&corpus_id) {
        names.push("position");
    }
    CorpusFeatureConfig::from_names(&names).expect("built-in names are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelFeatureRecord {
    pub genre: Option<String>,
    pub children_u1: usize,
    pub children_u2: usize,
    pub discontinuous_u1: bool,
    pub discontinuous_u2: bool,
    pub is_sentence_u1: bool,
    pub is_sentence_u2: bool,
    pub length_ratio: f64,
    pub same_speaker: Option<bool>,
    pub doc_length: usize,
    pub position_u1: f64,
    pub position_u2: f64,
    pub distance: usize,
    pub lexical_overlap: usize,
    pub direction: Direction,
}

impl RelFeatureRecord {
    /// Categorical label of a categorical feature.
    pub fn categorical(&self, feature: RelFeature) -> Option<String> {
        let b = |v: bool| v.to_string();
        Some(match feature {
            RelFeature::Genre => self.genre.clone().unwrap_or_else(|| ABSENT.to_string()),
            RelFeature::DiscontinuousU1 => b(self.discontinuous_u1),
            RelFeature::DiscontinuousU2 => b(self.discontinuous_u2),
            RelFeature::IsSentenceU1 => b(self.is_sentence_u1),
            RelFeature::IsSentenceU2 => b(self.is_sentence_u2),
            RelFeature::SameSpeaker => self
                .same_speaker
                .map_or_else(|| ABSENT.to_string(), |v| v.to_string()),
            RelFeature::Direction => self.direction.as_str().to_string(),
            _ => return None,
        })
    }

    /// Raw value of a numeric feature.
    pub fn numeric(&self, feature: RelFeature) -> Option<f64> {
        Some(match feature {
            RelFeature::ChildrenU1 => self.children_u1 as f64,
            RelFeature::ChildrenU2 => self.children_u2 as f64,
            RelFeature::LengthRatio => self.length_ratio,
            RelFeature::DocLength => self.doc_length as f64,
            RelFeature::PositionU1 => self.position_u1,
            RelFeature::PositionU2 => self.position_u2,
            RelFeature::Distance => self.distance as f64,
            RelFeature::LexicalOverlap => self.lexical_overlap as f64,
            _ => return None,
        })
    }

    /// Values in [`RelFeature::ALL`] order, formatted for the TSV dump.
    pub fn tsv_fields(&self) -> Vec<String> {
        RelFeature::ALL
            .iter()
            .map(|&f| match self.numeric(f) {
                Some(x) if matches!(
                    f,
                    RelFeature::LengthRatio | RelFeature::PositionU1 | RelFeature::PositionU2
                ) =>
                {
                    fmt_real(x)
                }
                Some(x) => (x as u64).to_string(),
                None => self.categorical(f).expect("categorical feature"),
            })
            .collect()
    }
}

/// Per-document index of discourse units and their child counts.
#[derive(Debug, Clone)]
pub struct DocUnitIndex {
    /// Distinct units ordered by start offset.
    units: Vec<Vec<Span>>,
    children: BTreeMap<Vec<Span>, usize>,
}

impl DocUnitIndex {
    /// Indexes the instances of `doc_id` among `all_instances`.
    pub fn build(doc_id: &str, all_instances: &[RelationInstance], head_side: HeadSide) -> Self {
        let mut units = BTreeSet::new();
        let mut children = BTreeMap::new();
        for inst in all_instances.iter().filter(|i| i.doc_id == doc_id) {
            units.insert(inst.unit1_spans.clone());
            units.insert(inst.unit2_spans.clone());
            let head = match (inst.direction, head_side) {
                (Direction::LeftToRight, HeadSide::Unit1OnLeftToRight)
                | (Direction::RightToLeft, HeadSide::Unit2OnLeftToRight) => &inst.unit1_spans,
                _ => &inst.unit2_spans,
            };
            *children.entry(head.clone()).or_insert(0) += 1;
        }
        DocUnitIndex {
            units: units.into_iter().collect(),
            children,
        }
    }

    pub fn units(&self) -> &[Vec<Span>] {
        &self.units
    }
}

fn first_token(spans: &[Span]) -> usize {
    spans.first().map_or(0, |s| s.0)
}

fn last_token(spans: &[Span]) -> usize {
    spans.last().map_or(0, |s| s.1)
}

fn overlaps(x: &[Span], y: &[Span]) -> bool {
    x.iter().any(|&(a, b)| y.iter().any(|&(c, d)| a <= d && c <= b))
}

fn is_discontinuous(spans: &[Span]) -> bool {
    spans.windows(2).any(|w| w[1].0 > w[0].1 + 1)
}

/// Number of relations in which `unit` is the head.
pub fn children_count(unit: &[Span], index: &DocUnitIndex) -> usize {
    index.children.get(unit).copied().unwrap_or(0)
}

/// Number of indexed units lying strictly between the two units of `inst`.
pub fn unit_distance(inst: &RelationInstance, index: &DocUnitIndex) -> Result<usize> {
    let (u1, u2) = (&inst.unit1_spans, &inst.unit2_spans);
    if overlaps(u1, u2) {
        return Err(DiscoError::contract(format!(
            "units of a relation in {} overlap: {u1:?} / {u2:?}",
            inst.doc_id
        )));
    }
    let (left, right) = if first_token(u1) < first_token(u2) {
        (u1, u2)
    } else {
        (u2, u1)
    };
    let gap_start = last_token(left);
    let gap_end = first_token(right);
    Ok(index
        .units
        .iter()
        .filter(|u| *u != left && *u != right)
        .filter(|u| first_token(u) > gap_start && last_token(u) < gap_end)
        .count())
}

fn overlap_types(tokens: &[&str], stoplist: &Stoplist) -> HashSet<String> {
    tokens
        .iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .map(|t| t.to_lowercase())
        .filter(|t| !stoplist.contains(t))
        .collect()
}

/// Number of distinct case-folded non-stoplist word types shared by both units.
pub fn lexical_overlap(u1_tokens: &[&str], u2_tokens: &[&str], stoplist: &Stoplist) -> usize {
    let a = overlap_types(u1_tokens, stoplist);
    let b = overlap_types(u2_tokens, stoplist);
    a.intersection(&b).count()
}

/// Computes every feature of `inst`; the corpus menu decides later which
/// ones reach the feature vector.
pub fn compute_rel_features(
    inst: &RelationInstance,
    doc: &Document,
    index: &DocUnitIndex,
    stoplist: &Stoplist,
) -> Result<RelFeatureRecord> {
    if doc.doc_id != inst.doc_id {
        return Err(DiscoError::contract(format!(
            "instance of {} paired with document {}",
            inst.doc_id, doc.doc_id
        )));
    }
    let doc_length = doc.token_count();
    for spans in [&inst.unit1_spans, &inst.unit2_spans] {
        if spans.is_empty() || last_token(spans) > doc_length {
            return Err(DiscoError::contract(format!(
                "unit {spans:?} lies outside the {doc_length}-token document {}",
                doc.doc_id
            )));
        }
    }

    let offsets = doc.sentence_offsets();
    let sentence_of = |tok: usize| offsets.partition_point(|&o| o <= tok) - 1;
    let is_sentence = |spans: &[Span]| match spans {
        [(a, b)] => {
            let s = sentence_of(*a);
            *a == offsets[s] && *b == offsets[s] + doc.sentences[s].len() - 1
        }
        _ => false,
    };
    let speaker = |spans: &[Span]| doc.sentences[sentence_of(first_token(spans))].speaker.clone();
    let same_speaker = match (speaker(&inst.unit1_spans), speaker(&inst.unit2_spans)) {
        (Some(a), Some(b)) => Some(a == b),
        _ => None,
    };

    let u1: Vec<&str> = inst.unit1_text.split_whitespace().collect();
    let u2: Vec<&str> = inst.unit2_text.split_whitespace().collect();
    let len1 = span_token_count(&inst.unit1_spans);
    let len2 = span_token_count(&inst.unit2_spans);

    Ok(RelFeatureRecord {
        genre: doc.genre.clone(),
        children_u1: children_count(&inst.unit1_spans, index),
        children_u2: children_count(&inst.unit2_spans, index),
        discontinuous_u1: is_discontinuous(&inst.unit1_spans),
        discontinuous_u2: is_discontinuous(&inst.unit2_spans),
        is_sentence_u1: is_sentence(&inst.unit1_spans),
        is_sentence_u2: is_sentence(&inst.unit2_spans),
        length_ratio: len1 as f64 / len2 as f64,
        same_speaker,
        doc_length,
        position_u1: first_token(&inst.unit1_spans) as f64 / doc_length as f64,
        position_u2: first_token(&inst.unit2_spans) as f64 / doc_length as f64,
        distance: unit_distance(inst, index)?,
        lexical_overlap: lexical_overlap(&u1, &u2, stoplist),
        direction: inst.direction,
    })
}

/// Computes features for every instance, indexing each document once.
pub fn compute_all_rel_features(
    instances: &[RelationInstance],
    docs: &[Document],
    stoplist: &Stoplist,
    head_side: HeadSide,
) -> Result<Vec<RelFeatureRecord>> {
    let by_id: BTreeMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut indices: BTreeMap<&str, DocUnitIndex> = BTreeMap::new();
    instances
        .iter()
        .map(|inst| {
            let doc = by_id.get(inst.doc_id.as_str()).ok_or_else(|| {
                DiscoError::contract(format!("no document {} for relation instance", inst.doc_id))
            })?;
            let index = indices
                .entry(inst.doc_id.as_str())
                .or_insert_with(|| DocUnitIndex::build(&inst.doc_id, instances, head_side));
            compute_rel_features(inst, doc, index, stoplist)
        })
        .collect()
}

/// TSV dump of relation features, one row per instance.
pub fn dump_rel_features(instances: &[RelationInstance], records: &[RelFeatureRecord]) -> String {
    let mut out = String::from("doc_id\tunit1_toks\tunit2_toks\t");
    out.push_str(
        &RelFeature::ALL
            .iter()
            .map(|f| f.name())
            .collect::<Vec<_>>()
            .join("\t"),
    );
    out.push('\n');
    let spans = |s: &[Span]| {
        s.iter()
            .map(|(a, b)| if a == b { a.to_string() } else { format!("{a}-{b}") })
            .collect::<Vec<_>>()
            .join(",")
    };
    for (inst, rec) in instances.iter().zip(records) {
        out.push_str(&format!(
            "{}\t{}\t{}\t",
            inst.doc_id,
            spans(&inst.unit1_spans),
            spans(&inst.unit2_spans)
        ));
        out.push_str(&rec.tsv_fields().join("\t"));
        out.push('\n');
    }
    out
}
