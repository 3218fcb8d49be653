//! Hand-crafted features for the tagger and the relation classifier.

pub mod rel;
pub mod seg;
mod stoplist;
mod vocab;

pub use rel::{
    children_count, compute_all_rel_features, compute_rel_features, default_feature_menu,
    dump_rel_features, lexical_overlap, unit_distance, CorpusFeatureConfig, DocUnitIndex,
    HeadSide, NumericTransform, RelFeature, RelFeatureRecord,
};
pub use seg::{
    dump_seg_features, extract_seg_features, sentence_type, CaseShape, SegFeatureVocabs,
    SentType, TokenFeatureRecord,
};
pub use stoplist::Stoplist;
pub use vocab::FeatureVocab;

use crate::{DiscoError, Result};

/// Label used for categorical features whose source value is missing.
pub const ABSENT: &str = "<absent>";

/// Embedding width for a categorical feature with `cardinality` labels:
/// the square root, rounded up.
pub fn categorical_embed_dim(cardinality: usize) -> Result<usize> {
    if cardinality < 1 {
        return Err(DiscoError::contract("categorical cardinality must be at least 1"));
    }
    let mut d = (cardinality as f64).sqrt() as usize;
    while d * d < cardinality {
        d += 1;
    }
    while d > 1 && (d - 1) * (d - 1) >= cardinality {
        d -= 1;
    }
    Ok(d)
}

/// Signed log scaling, `sign(x) * ln(1 + |x|)`.
pub fn scale_numeric(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(DiscoError::contract(format!("cannot scale non-finite value {x}")));
    }
    Ok(x.signum() * x.abs().ln_1p())
}

/// Fixed-point formatting used by the feature dumps.
pub(crate) fn fmt_real(x: f64) -> String {
    format!("{x:.6}")
}
