use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::features::{categorical_embed_dim, scale_numeric, CorpusFeatureConfig, FeatureVocab, NumericTransform, RelFeature, RelFeatureRecord};
use crate::nn::{Embedding, Init, ParamGroup, ParamStore};
use crate::{DiscoError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SlotKind {
    /// Embedded label; row 0 is the unseen-label row.
    Categorical { vocab: FeatureVocab },
    /// One transformed scalar.
    Scalar { transform: NumericTransform },
    /// Embedded bin index.
    Binned { transform: NumericTransform },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub feature: RelFeature,
    pub offset: usize,
    pub width: usize,
    #[serde(flatten)]
    pub kind: SlotKind,
}

/// Where each enabled feature lives inside the injected vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub entries: Vec<LayoutEntry>,
    pub hidden: usize,
}

impl FeatureLayout {
    /// Lays out the enabled features in config order. Categorical vocabularies
    /// come from `train`; direction always has both values.
    pub fn build(config: &CorpusFeatureConfig, train: &[RelFeatureRecord], hidden: usize) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for &feature in &config.features {
            let (kind, width) = if feature.is_categorical() {
                let vocab = if feature == RelFeature::Direction {
                    FeatureVocab::build(["1<2", "1>2"])
                } else {
                    FeatureVocab::build(train.iter().filter_map(|r| r.categorical(feature)))
                };
                let width = vocab.embed_dim();
                (SlotKind::Categorical { vocab }, width)
            } else {
                match config.transform(feature) {
                    t @ NumericTransform::Bin { bins, min, max } => {
                        if bins == 0 || !(max > min) {
                            return Err(DiscoError::config(format!("bad bin transform for {feature}")));
                        }
                        (SlotKind::Binned { transform: t }, categorical_embed_dim(bins)?)
                    }
                    t => (SlotKind::Scalar { transform: t }, 1),
                }
            };
            entries.push(LayoutEntry {
                feature,
                offset,
                width,
                kind,
            });
            offset += width;
        }
        if offset > hidden {
            return Err(DiscoError::config(format!(
                "feature layout needs {offset} dimensions but the encoder hidden size is {hidden}"
            )));
        }
        Ok(FeatureLayout { entries, hidden })
    }

    pub fn width(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.width)
    }

    pub fn entry(&self, feature: RelFeature) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.feature == feature)
    }

    /// The slice of a feature vector holding `feature`.
    pub fn slice<'a>(&self, vector: &'a [f32], feature: RelFeature) -> Option<&'a [f32]> {
        self.entry(feature).map(|e| &vector[e.offset..e.offset + e.width])
    }
}

/// Turns feature records into `hidden`-wide vectors with trainable
/// embeddings for categorical and binned slots.
#[derive(Debug, Clone)]
pub struct FeatureEncoder {
    layout: FeatureLayout,
    tables: Vec<Option<Embedding>>,
}

fn scalar_value(transform: NumericTransform, x: f64) -> Result<f64> {
    match transform {
        NumericTransform::Log => scale_numeric(x),
        _ => Ok(x),
    }
}

impl FeatureEncoder {
    pub fn new(ps: &mut ParamStore, layout: FeatureLayout) -> Result<Self> {
        let tables = layout
            .entries
            .iter()
            .map(|e| {
                let name = format!("features.{}", e.feature);
                let rows = match &e.kind {
                    SlotKind::Categorical { vocab } => vocab.table_size(),
                    SlotKind::Binned {
                        transform: NumericTransform::Bin { bins, .. },
                    } => *bins,
                    _ => return Ok(None),
                };
                Embedding::new(ps, &name, rows, e.width, Init::Normal(0.5), ParamGroup::Other).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureEncoder { layout, tables })
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    /// Row index (categorical, binned) or transformed value (scalar) of one
    /// record for one layout entry.
    fn slot_input(entry: &LayoutEntry, rec: &RelFeatureRecord) -> Result<(u32, f64)> {
        let f = entry.feature;
        Ok(match &entry.kind {
            SlotKind::Categorical { vocab } => {
                let label = rec.categorical(f).expect("categorical feature");
                (vocab.index(&label) as u32, 0.0)
            }
            SlotKind::Binned { transform } => {
                let x = rec.numeric(f).expect("numeric feature");
                (transform.bin_index(x).expect("bin transform") as u32, 0.0)
            }
            SlotKind::Scalar { transform } => (0, scalar_value(*transform, rec.numeric(f).expect("numeric feature"))?),
        })
    }

    /// Vectors `[B, hidden]`: feature slices in layout order, zeros after.
    pub fn encode(&self, records: &[&RelFeatureRecord], ps: &ParamStore) -> Result<Tensor> {
        let b = records.len();
        let dev = ps.device();
        let dt = ps.dtype();
        let mut parts = Vec::new();
        for (entry, table) in self.layout.entries.iter().zip(&self.tables) {
            let inputs = records
                .iter()
                .map(|r| Self::slot_input(entry, r))
                .collect::<Result<Vec<_>>>()?;
            match table {
                Some(t) => {
                    let ids: Vec<u32> = inputs.iter().map(|x| x.0).collect();
                    parts.push(t.forward(&Tensor::from_vec(ids, b, dev)?)?);
                }
                None => {
                    let vals: Vec<f64> = inputs.iter().map(|x| x.1).collect();
                    parts.push(Tensor::from_vec(vals, (b, 1), dev)?.to_dtype(dt)?);
                }
            }
        }
        let pad = self.layout.hidden - self.layout.width();
        if pad > 0 {
            parts.push(Tensor::zeros((b, pad), dt, dev)?);
        }
        Ok(Tensor::cat(&parts, D::Minus1)?)
    }

    /// Host copy of the vector for one record.
    pub fn build_feature_vector(&self, rec: &RelFeatureRecord, ps: &ParamStore) -> Result<Vec<f32>> {
        Ok(self
            .encode(&[rec], ps)?
            .squeeze(0)?
            .to_dtype(candle_core::DType::F32)?
            .to_vec1::<f32>()?)
    }

    /// Embedding row a categorical or binned slot uses for `rec`.
    pub fn slot_row(&self, feature: RelFeature, rec: &RelFeatureRecord) -> Result<Option<Vec<f32>>> {
        let Some(i) = self.layout.entries.iter().position(|e| e.feature == feature) else {
            return Ok(None);
        };
        let entry = &self.layout.entries[i];
        let (row, value) = Self::slot_input(entry, rec)?;
        Ok(Some(match &self.tables[i] {
            Some(t) => t.table().get(row as usize)?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()?,
            None => vec![value as f32],
        }))
    }
}

/// Inserts `fvec` `[B, H]` after the first position of `embedded`
/// `[B, L, H]` and extends `mask` `[B, L]` with a 1 there.
pub fn inject_feature_vector(embedded: &Tensor, mask: &Tensor, fvec: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, l, h) = embedded.dims3()?;
    if fvec.dims2()? != (b, h) || mask.dims2()? != (b, l) {
        return Err(DiscoError::contract("feature vector or mask shape does not match the sequence"));
    }
    if l == 0 {
        return Err(DiscoError::contract("cannot inject into an empty sequence"));
    }
    let first = embedded.narrow(1, 0, 1)?;
    let rest = embedded.narrow(1, 1, l - 1)?;
    let seq = Tensor::cat(&[first, fvec.unsqueeze(1)?.to_dtype(embedded.dtype())?, rest], 1)?;
    let ones = Tensor::ones((b, 1), mask.dtype(), mask.device())?;
    let mask = Tensor::cat(&[mask.narrow(1, 0, 1)?, ones, mask.narrow(1, 1, l - 1)?], 1)?;
    Ok((seq, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Direction;
    use candle_core::{DType, Device};
    use proptest::prelude::*;

    fn record(direction: Direction, overlap: usize, genre: &str, distance: usize) -> RelFeatureRecord {
        RelFeatureRecord {
            genre: Some(genre.to_string()),
            children_u1: 0,
            children_u2: 2,
            discontinuous_u1: false,
            discontinuous_u2: false,
            is_sentence_u1: true,
            is_sentence_u2: false,
            length_ratio: 0.5,
            same_speaker: None,
            doc_length: 40,
            position_u1: 0.1,
            position_u2: 0.3,
            distance,
            lexical_overlap: overlap,
            direction,
        }
    }

    fn layout(names: &[&str], train: &[RelFeatureRecord], hidden: usize) -> Result<FeatureLayout> {
        FeatureLayout::build(&CorpusFeatureConfig::from_names(names).unwrap(), train, hidden)
    }

    #[test]
    fn no_features_gives_zero_vector() {
        let mut ps = ParamStore::new(1, DType::F32);
        let l = layout(&[], &[], 16).unwrap();
        let enc = FeatureEncoder::new(&mut ps, l).unwrap();
        let v = enc.build_feature_vector(&record(Direction::LeftToRight, 1, "news", 1), &ps).unwrap();
        assert_eq!(v, vec![0.0; 16]);
    }

    #[test]
    fn direction_only() {
        let mut ps = ParamStore::new(1, DType::F32);
        let enc = FeatureEncoder::new(&mut ps, layout(&["direction"], &[], 8).unwrap()).unwrap();
        assert_eq!(enc.layout().width(), 2);
        let v = enc.build_feature_vector(&record(Direction::RightToLeft, 0, "x", 1), &ps).unwrap();
        assert!(v[..2].iter().any(|&x| x != 0.0));
        assert!(v[2..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn overflow_is_config_error() {
        let train = [record(Direction::LeftToRight, 1, "a", 1)];
        let err = layout(&["direction", "genre", "lexical_overlap"], &train, 3).unwrap_err();
        assert!(matches!(err, DiscoError::Config(_)));
    }

    #[test]
    fn binned_numeric() {
        let mut cfg = CorpusFeatureConfig::from_names(&["distance"]).unwrap();
        cfg.transforms.insert(RelFeature::Distance, NumericTransform::Bin { bins: 5, min: 0.0, max: 10.0 });
        let l = FeatureLayout::build(&cfg, &[], 8).unwrap();
        assert_eq!(l.entries[0].width, 3);
        let mut ps = ParamStore::new(1, DType::F32);
        let enc = FeatureEncoder::new(&mut ps, l).unwrap();
        let near = enc.build_feature_vector(&record(Direction::LeftToRight, 0, "a", 1), &ps).unwrap();
        let also_near = enc.build_feature_vector(&record(Direction::LeftToRight, 0, "a", 0), &ps).unwrap();
        let far = enc.build_feature_vector(&record(Direction::LeftToRight, 0, "a", 9), &ps).unwrap();
        assert_eq!(near, also_near);
        assert_ne!(near, far);
    }

    #[test]
    fn injection_examples() {
        let dev = Device::Cpu;
        let emb = Tensor::arange(0f32, 30.0, &dev).unwrap().reshape((1, 10, 3)).unwrap();
        let mask = Tensor::ones((1, 10), DType::F32, &dev).unwrap();
        let fvec = Tensor::zeros((1, 3), DType::F32, &dev).unwrap();
        let (seq, m) = inject_feature_vector(&emb, &mask, &fvec).unwrap();
        assert_eq!(seq.dims3().unwrap(), (1, 11, 3));
        let rows = seq.squeeze(0).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(rows[1], vec![0.0; 3]);
        assert_eq!(rows[2], vec![3.0, 4.0, 5.0]);
        assert_eq!(m.to_vec2::<f32>().unwrap()[0], vec![1.0; 11]);
        let short = Tensor::new(&[[1f32, 1.0, 1.0]], &dev).unwrap();
        let (_, m) = inject_feature_vector(&emb.narrow(1, 0, 3).unwrap(), &short, &fvec).unwrap();
        assert_eq!(m.to_vec2::<f32>().unwrap()[0], vec![1.0; 4]);
        assert!(inject_feature_vector(&emb, &short, &fvec).is_err());
    }

    proptest! {
        #[test]
        fn layout_round_trip(
            overlap in 0usize..20,
            ltr in any::<bool>(),
            genre in prop::sample::select(vec!["news", "blog", "fiction", "unseen"]),
            distance in 0usize..30,
        ) {
            let train: Vec<RelFeatureRecord> = ["news", "blog", "fiction"]
                .iter()
                .map(|g| record(Direction::LeftToRight, 1, g, 1))
                .collect();
            let names = ["direction", "genre", "lexical_overlap", "distance", "position"];
            let l = layout(&names, &train, 32).unwrap();
            let mut ps = ParamStore::new(7, DType::F32);
            let enc = FeatureEncoder::new(&mut ps, l).unwrap();
            let dir = if ltr { Direction::LeftToRight } else { Direction::RightToLeft };
            let rec = record(dir, overlap, genre, distance);
            let v = enc.build_feature_vector(&rec, &ps).unwrap();
            prop_assert_eq!(v.len(), 32);
            let width = enc.layout().width();
            prop_assert!(v[width..].iter().all(|&x| x == 0.0));
            for e in &enc.layout().entries {
                let slice = enc.layout().slice(&v, e.feature).unwrap();
                let expected = enc.slot_row(e.feature, &rec).unwrap().unwrap();
                prop_assert_eq!(slice, &expected[..]);
            }
            let ov = enc.layout().slice(&v, RelFeature::LexicalOverlap).unwrap()[0] as f64;
            prop_assert!((ov - (1.0 + overlap as f64).ln()).abs() < 1e-6);
            let g = enc.layout().slice(&v, RelFeature::Genre).unwrap();
            if genre == "unseen" {
                let oov = enc.tables[1].as_ref().unwrap().table().get(0).unwrap().to_vec1::<f32>().unwrap();
                prop_assert_eq!(g, &oov[..]);
            }
        }

        #[test]
        fn injection_preserves_rows(b in 1usize..4, l in 1usize..12, h in 1usize..6, seed in 0u64..1000) {
            let dev = Device::Cpu;
            let mut ps = ParamStore::new(seed, DType::F32);
            let emb = ps.param("e", &[b, l, h], crate::nn::Init::Normal(1.0), ParamGroup::Other).unwrap();
            let fvec = ps.param("f", &[b, h], crate::nn::Init::Normal(1.0), ParamGroup::Other).unwrap();
            let lens: Vec<usize> = (0..b).map(|i| 1 + (i * 7 + seed as usize) % l).collect();
            let mask_v: Vec<f32> = lens.iter().flat_map(|&n| (0..l).map(move |j| if j < n { 1.0 } else { 0.0 })).collect();
            let mask = Tensor::from_vec(mask_v.clone(), (b, l), &dev).unwrap();
            let (seq, m) = inject_feature_vector(&emb, &mask, &fvec).unwrap();
            prop_assert_eq!(seq.dims3().unwrap(), (b, l + 1, h));
            let e = emb.to_vec3::<f32>().unwrap();
            let s = seq.to_vec3::<f32>().unwrap();
            let f = fvec.to_vec2::<f32>().unwrap();
            let m = m.to_vec2::<f32>().unwrap();
            for i in 0..b {
                prop_assert_eq!(&s[i][0], &e[i][0]);
                prop_assert_eq!(&s[i][1], &f[i]);
                for j in 1..l {
                    prop_assert_eq!(&s[i][j + 1], &e[i][j]);
                    prop_assert_eq!(m[i][j + 1], mask_v[i * l + j]);
                }
                prop_assert_eq!((m[i][0], m[i][1]), (1.0, 1.0));
            }
        }
    }
}
