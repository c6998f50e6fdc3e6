//! Per-sample feature extraction from a frozen audited model.
//!
//! Two feature kinds: flattened loss gradients of selected parameter layers
//! (the gMINT feature) and the penultimate-layer activation (the embedding
//! baseline). Probing never mutates the model; every probe records its own
//! tape against a shared immutable parameter set, so samples can be probed
//! in parallel.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::ParameterSet;
use crate::models::{AuditedModel, EncodedSample, ModelError};
use crate::seed;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("selector names missing layer {0}")]
    MissingLayer(String),
    #[error("selector requests {k} layers but the model has {available}")]
    SelectorOutOfRange { k: usize, available: usize },
    #[error("selector k must be positive")]
    ZeroK,
    #[error("invalid selector syntax {0:?} (expected first:K, last:K, or names:a,b)")]
    BadSelectorSyntax(String),
    #[error("non-finite gradient while probing sample {0}")]
    NonFiniteFeature(String),
    #[error("sample sets overlap: {0} appears in both the member and external subsets")]
    OverlappingSubsets(String),
    #[error("member and external subsets must both be non-empty")]
    EmptySubset,
    #[error("feature file: {0}")]
    FeatureFormat(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ProbeError>;

/// Which parameter layers feed the gradient feature. Selection order is the
/// model's layer order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LayerSelector {
    FirstK { k: usize },
    LastK { k: usize },
    Named { names: Vec<String> },
}

impl LayerSelector {
    /// Parse `first:K`, `last:K`, or `names:a,b,c`.
    pub fn parse(s: &str) -> Result<Self> {
        let (mode, rest) =
            s.split_once(':').ok_or_else(|| ProbeError::BadSelectorSyntax(s.to_string()))?;
        match mode {
            "first" | "last" => {
                let k: usize =
                    rest.parse().map_err(|_| ProbeError::BadSelectorSyntax(s.to_string()))?;
                if k == 0 {
                    return Err(ProbeError::ZeroK);
                }
                Ok(if mode == "first" {
                    LayerSelector::FirstK { k }
                } else {
                    LayerSelector::LastK { k }
                })
            }
            "names" => {
                let names: Vec<String> =
                    rest.split(',').filter(|n| !n.is_empty()).map(str::to_string).collect();
                if names.is_empty() {
                    return Err(ProbeError::BadSelectorSyntax(s.to_string()));
                }
                Ok(LayerSelector::Named { names })
            }
            _ => Err(ProbeError::BadSelectorSyntax(s.to_string())),
        }
    }

    /// Resolve to concrete layer names against a parameter set, preserving
    /// the model's layer order.
    pub fn resolve(&self, params: &ParameterSet) -> Result<Vec<String>> {
        let trainable: Vec<&str> =
            params.trainable_entries().map(|e| e.name.as_str()).collect();
        match self {
            LayerSelector::FirstK { k } | LayerSelector::LastK { k } => {
                if *k == 0 {
                    return Err(ProbeError::ZeroK);
                }
                if *k > trainable.len() {
                    return Err(ProbeError::SelectorOutOfRange { k: *k, available: trainable.len() });
                }
                let slice = match self {
                    LayerSelector::FirstK { .. } => &trainable[..*k],
                    _ => &trainable[trainable.len() - k..],
                };
                Ok(slice.iter().map(|s| s.to_string()).collect())
            }
            LayerSelector::Named { names } => {
                for n in names {
                    if !trainable.contains(&n.as_str()) {
                        return Err(ProbeError::MissingLayer(n.clone()));
                    }
                }
                // Model layer order, not the order given.
                Ok(trainable
                    .iter()
                    .filter(|t| names.iter().any(|n| n == *t))
                    .map(|s| s.to_string())
                    .collect())
            }
        }
    }
}

impl std::fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerSelector::FirstK { k } => write!(f, "first:{k}"),
            LayerSelector::LastK { k } => write!(f, "last:{k}"),
            LayerSelector::Named { names } => write!(f, "names:{}", names.join(",")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Gradient,
    Embedding,
}

impl FeatureKind {
    fn wire_tag(self) -> u8 {
        match self {
            FeatureKind::Gradient => 0,
            FeatureKind::Embedding => 1,
        }
    }

    fn from_wire_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(FeatureKind::Gradient),
            1 => Ok(FeatureKind::Embedding),
            other => Err(ProbeError::FeatureFormat(format!("unknown feature kind tag {other}"))),
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gradient" => Ok(FeatureKind::Gradient),
            "embedding" => Ok(FeatureKind::Embedding),
            other => Err(format!("unknown feature kind {other:?}")),
        }
    }
}

/// One probed sample: the flat feature vector plus its membership label.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientFeature {
    pub sample_id: String,
    pub feature: Vec<f64>,
    /// 1 if the sample was in the audited model's training set, else 0.
    pub membership_label: u8,
    pub source_corpus: String,
}

/// Per-dimension standardization statistics, fitted on the MINT-train rows
/// only. Dimensions with (near-)zero variance pass through unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit(rows: &[&[f64]]) -> Normalization {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(*r) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; dim];
        for r in rows {
            for ((s, x), m) in std.iter_mut().zip(*r).zip(&mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        for s in &mut std {
            *s = s.sqrt();
            if *s < 1e-12 {
                *s = 1.0; // zero-variance floor: pass through unscaled
            }
        }
        Normalization { mean, std }
    }

    pub fn apply(&self, feature: &[f64]) -> Vec<f64> {
        feature
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// Probed features ready for auditor training. Rows are shuffled under the
/// dataset seed; the first `train_count` rows are the MINT-train portion.
#[derive(Debug, Clone)]
pub struct MintDataset {
    pub features: Vec<GradientFeature>,
    pub model_fingerprint: [u8; 32],
    pub selector: LayerSelector,
    pub feature_kind: FeatureKind,
    pub normalization: Normalization,
    pub train_count: usize,
    pub seed: u64,
}

impl MintDataset {
    pub fn train_rows(&self) -> &[GradientFeature] {
        &self.features[..self.train_count]
    }

    pub fn test_rows(&self) -> &[GradientFeature] {
        &self.features[self.train_count..]
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.feature.len())
    }

    /// Permute the membership labels across rows (diagnostic null: any
    /// auditor trained on permuted labels should score at chance).
    pub fn permute_labels(&mut self, seed_value: u64) {
        let mut labels: Vec<u8> = self.features.iter().map(|f| f.membership_label).collect();
        let mut rng = seed::rng(seed_value, "label-permutation");
        labels.shuffle(&mut rng);
        for (f, l) in self.features.iter_mut().zip(labels) {
            f.membership_label = l;
        }
    }
}

/// A sample to probe, tagged with the corpus it came from.
#[derive(Debug, Clone)]
pub struct ProbeInput {
    pub sample: EncodedSample,
    pub source_corpus: String,
}

/// Flattened loss gradient of the selected layers for one sample. The loss
/// target is the sample's own class label; selected layer gradients are
/// concatenated in model layer order, row-major.
pub fn per_sample_gradient(
    model: &AuditedModel,
    sample: &EncodedSample,
    selector: &LayerSelector,
) -> Result<Vec<f64>> {
    let selected = selector.resolve(&model.params)?;
    let grads = model.sample_gradient(sample)?;
    let mut feature = Vec::new();
    for name in &selected {
        let g = grads.get(name).expect("resolved layers exist in the gradient map");
        feature.extend_from_slice(g.data());
    }
    if feature.iter().any(|x| !x.is_finite()) {
        return Err(ProbeError::NonFiniteFeature(sample.id.clone()));
    }
    Ok(feature)
}

/// Per-sample gradient features for a batch. Samples are independent, so
/// this runs data-parallel when the `parallel` feature is on; output order
/// matches input order either way.
pub fn batch_gradients(
    model: &AuditedModel,
    samples: &[EncodedSample],
    selector: &LayerSelector,
) -> Result<Vec<Vec<f64>>> {
    crate::par::map(samples, |s| per_sample_gradient(model, s, selector))
        .into_iter()
        .collect()
}

/// Penultimate-layer activation for one sample (embedding baseline).
pub fn embedding_feature(model: &AuditedModel, sample: &EncodedSample) -> Result<Vec<f64>> {
    let feature = model.penultimate(&sample.token_ids)?;
    if feature.iter().any(|x| !x.is_finite()) {
        return Err(ProbeError::NonFiniteFeature(sample.id.clone()));
    }
    Ok(feature)
}

/// Probe member and external subsets and assemble an auditor-ready dataset.
///
/// Probing runs in parallel; rows are then sorted by sample id and shuffled
/// under `seed_value`, so the result is independent of probe order. The
/// 65/35 MINT-internal split and the normalization statistics (train rows
/// only) are fixed here.
pub fn build_mint_dataset(
    model: &AuditedModel,
    members: &[ProbeInput],
    externals: &[ProbeInput],
    selector: &LayerSelector,
    feature_kind: FeatureKind,
    seed_value: u64,
) -> Result<MintDataset> {
    if members.is_empty() || externals.is_empty() {
        return Err(ProbeError::EmptySubset);
    }
    let member_ids: HashSet<&str> = members.iter().map(|p| p.sample.id.as_str()).collect();
    if let Some(dup) = externals.iter().find(|p| member_ids.contains(p.sample.id.as_str())) {
        return Err(ProbeError::OverlappingSubsets(dup.sample.id.clone()));
    }

    let probe_one = |input: &ProbeInput, label: u8| -> Result<GradientFeature> {
        let feature = match feature_kind {
            FeatureKind::Gradient => per_sample_gradient(model, &input.sample, selector)?,
            FeatureKind::Embedding => embedding_feature(model, &input.sample)?,
        };
        Ok(GradientFeature {
            sample_id: input.sample.id.clone(),
            feature,
            membership_label: label,
            source_corpus: input.source_corpus.clone(),
        })
    };
    let mut rows: Vec<GradientFeature> = Vec::with_capacity(members.len() + externals.len());
    for r in crate::par::map(members, |p| probe_one(p, 1)) {
        rows.push(r?);
    }
    for r in crate::par::map(externals, |p| probe_one(p, 0)) {
        rows.push(r?);
    }

    rows.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut rng = seed::rng(seed_value, "mint-shuffle");
    rows.shuffle(&mut rng);

    let train_count = (0.65 * rows.len() as f64).floor() as usize;
    let train_slices: Vec<&[f64]> =
        rows[..train_count].iter().map(|r| r.feature.as_slice()).collect();
    let normalization = Normalization::fit(&train_slices);

    Ok(MintDataset {
        features: rows,
        model_fingerprint: model.params.fingerprint(),
        selector: selector.clone(),
        feature_kind,
        normalization,
        train_count,
        seed: seed_value,
    })
}

const FEATURE_MAGIC: &[u8; 4] = b"GMNT";
const FEATURE_VERSION: u32 = 1;

/// Feature file payload is f32; in-memory features stay f64.
pub fn write_features(dataset: &MintDataset, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.push(dataset.feature_kind.wire_tag());
    out.extend_from_slice(&(dataset.features.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dataset.feature_dim() as u64).to_le_bytes());
    let selector_json = serde_json::to_vec(&dataset.selector)?;
    out.extend_from_slice(&(selector_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&selector_json);
    out.extend_from_slice(&dataset.model_fingerprint);
    for row in &dataset.features {
        out.extend_from_slice(&(row.sample_id.len() as u16).to_le_bytes());
        out.extend_from_slice(row.sample_id.as_bytes());
        out.push(row.membership_label);
        for &x in &row.feature {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a GMNT feature file back. The returned dataset re-fits its
/// normalization from the (f32-rounded) stored rows, using the train split
/// recorded via `train_count`.
pub fn read_features(path: &Path, train_count: usize, seed_value: u64) -> Result<MintDataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(ProbeError::FeatureFormat("unexpected end of file".into()));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4)? != FEATURE_MAGIC {
        return Err(ProbeError::FeatureFormat("bad magic, not a GMNT file".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(ProbeError::FeatureFormat(format!("unsupported version {version}")));
    }
    let kind = FeatureKind::from_wire_tag(take(1)?[0])?;
    let rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let sel_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let selector: LayerSelector = serde_json::from_slice(take(sel_len)?)?;
    let fingerprint: [u8; 32] = take(32)?.try_into().unwrap();
    let mut features = Vec::with_capacity(rows);
    for _ in 0..rows {
        let id_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(take(id_len)?)
            .map_err(|_| ProbeError::FeatureFormat("sample id is not UTF-8".into()))?
            .to_string();
        let label = take(1)?[0];
        if label > 1 {
            return Err(ProbeError::FeatureFormat(format!("membership label {label} not in {{0,1}}")));
        }
        let payload = take(cols * 4)?;
        let feature: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        features.push(GradientFeature {
            sample_id: id,
            feature,
            membership_label: label,
            source_corpus: String::new(),
        });
    }
    if pos != bytes.len() {
        return Err(ProbeError::FeatureFormat("trailing bytes after last row".into()));
    }
    if train_count > features.len() {
        return Err(ProbeError::FeatureFormat(format!(
            "train_count {train_count} exceeds row count {}",
            features.len()
        )));
    }
    let train_slices: Vec<&[f64]> =
        features[..train_count].iter().map(|r| r.feature.as_slice()).collect();
    let normalization = Normalization::fit(&train_slices);
    Ok(MintDataset {
        features,
        model_fingerprint: fingerprint,
        selector,
        feature_kind: kind,
        normalization,
        train_count,
        seed: seed_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{AuditedModel, AuditedModelSpec, ModelKind};

    fn logreg(vocab_size: usize, num_classes: usize, seed: u64) -> AuditedModel {
        AuditedModel::build(&AuditedModelSpec {
            kind: ModelKind::Logreg,
            vocab_size,
            max_len: 8,
            embed_dim: 0,
            hidden_dim: 0,
            num_heads: 1,
            num_classes,
            seed,
        })
        .unwrap()
    }

    fn sample(id: &str, token_ids: &[usize], label: usize) -> EncodedSample {
        EncodedSample { id: id.to_string(), token_ids: token_ids.to_vec(), label }
    }

    fn inputs(samples: &[EncodedSample]) -> Vec<ProbeInput> {
        samples
            .iter()
            .map(|s| ProbeInput { sample: s.clone(), source_corpus: "c".to_string() })
            .collect()
    }

    #[test]
    fn selector_parsing_and_errors() {
        assert_eq!(LayerSelector::parse("first:2").unwrap(), LayerSelector::FirstK { k: 2 });
        assert_eq!(LayerSelector::parse("last:3").unwrap(), LayerSelector::LastK { k: 3 });
        assert_eq!(
            LayerSelector::parse("names:layer00.weight,layer00.bias").unwrap(),
            LayerSelector::Named {
                names: vec!["layer00.weight".to_string(), "layer00.bias".to_string()]
            }
        );
        assert!(matches!(LayerSelector::parse("first:0"), Err(ProbeError::ZeroK)));
        assert!(matches!(
            LayerSelector::parse("middle:2"),
            Err(ProbeError::BadSelectorSyntax(_))
        ));
        assert!(matches!(LayerSelector::parse("first"), Err(ProbeError::BadSelectorSyntax(_))));
    }

    #[test]
    fn selector_resolution_respects_model_layer_order() {
        let model = logreg(6, 2, 1);
        let all = LayerSelector::parse("first:2").unwrap().resolve(&model.params).unwrap();
        assert_eq!(all, ["layer00.weight", "layer00.bias"]);
        let last = LayerSelector::parse("last:1").unwrap().resolve(&model.params).unwrap();
        assert_eq!(last, ["layer00.bias"]);
        assert!(matches!(
            LayerSelector::parse("first:3").unwrap().resolve(&model.params),
            Err(ProbeError::SelectorOutOfRange { k: 3, available: 2 })
        ));
        assert!(matches!(
            LayerSelector::parse("names:layer09.weight").unwrap().resolve(&model.params),
            Err(ProbeError::MissingLayer(_))
        ));
    }

    #[test]
    fn logreg_gradient_matches_closed_form_at_zero_weights() {
        // With W = 0 and b = 0 the predicted distribution is uniform, so
        // dL/dW[v][c] = x[v] * (p[c] - y[c]) with p = [0.5, 0.5].
        let mut model = logreg(6, 2, 7);
        for name in ["layer00.weight", "layer00.bias"] {
            model.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        // Token 3 appears twice, token 2 once; PAD (0) is excluded.
        let s = sample("s0", &[2, 3, 3, 0, 0], 1);
        let selector = LayerSelector::parse("first:2").unwrap();
        let feature = per_sample_gradient(&model, &s, &selector).unwrap();

        let x = [0.0, 0.0, 1.0, 2.0, 0.0, 0.0];
        let mut expected = Vec::new();
        for xv in x {
            expected.push(xv * 0.5); // class 0: p - y = 0.5
            expected.push(xv * -0.5); // class 1: p - y = -0.5
        }
        expected.extend_from_slice(&[0.5, -0.5]); // bias gradient
        assert_eq!(feature.len(), 6 * 2 + 2);
        for (got, want) in feature.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn feature_dim_is_selected_parameter_count() {
        let model = logreg(11, 3, 2);
        let s = sample("s", &[1, 2], 0);
        let selector = LayerSelector::parse("first:2").unwrap();
        let f = per_sample_gradient(&model, &s, &selector).unwrap();
        assert_eq!(f.len(), 11 * 3 + 3);
        let bias_only = LayerSelector::parse("last:1").unwrap();
        assert_eq!(per_sample_gradient(&model, &s, &bias_only).unwrap().len(), 3);
    }

    #[test]
    fn embedding_feature_is_the_penultimate_activation() {
        let model = logreg(6, 2, 3);
        let s = sample("s", &[2, 3], 0);
        let f = embedding_feature(&model, &s).unwrap();
        assert_eq!(f, model.penultimate(&s.token_ids).unwrap());
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn batch_gradients_match_the_sequential_loop() {
        let model = logreg(8, 2, 5);
        let samples: Vec<EncodedSample> =
            (0..6).map(|i| sample(&format!("s{i}"), &[1 + i % 7, 2, 3], i % 2)).collect();
        let selector = LayerSelector::parse("first:2").unwrap();
        let batched = batch_gradients(&model, &samples, &selector).unwrap();
        for (s, b) in samples.iter().zip(&batched) {
            assert_eq!(b, &per_sample_gradient(&model, s, &selector).unwrap());
        }
    }

    #[test]
    fn normalization_standardizes_train_statistics() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 10.0, 5.0], vec![3.0, 10.0, 9.0]];
        let slices: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let norm = Normalization::fit(&slices);
        assert_eq!(norm.mean, vec![2.0, 10.0, 7.0]);
        // Population std; the constant dimension floors to 1.0.
        assert_eq!(norm.std, vec![1.0, 1.0, 2.0]);
        assert_eq!(norm.apply(&rows[0]), vec![-1.0, 0.0, -1.0]);
        assert_eq!(norm.apply(&[2.0, 11.0, 7.0]), vec![0.0, 1.0, 0.0]);
    }

    fn build_dataset(n_members: usize, n_externals: usize, seed_value: u64) -> MintDataset {
        let model = logreg(10, 2, 9);
        let members: Vec<EncodedSample> = (0..n_members)
            .map(|i| sample(&format!("m{i:03}"), &[1 + i % 9, 2 + i % 8], i % 2))
            .collect();
        let externals: Vec<EncodedSample> = (0..n_externals)
            .map(|i| sample(&format!("e{i:03}"), &[3 + i % 7, 1 + i % 9], i % 2))
            .collect();
        build_mint_dataset(
            &model,
            &inputs(&members),
            &inputs(&externals),
            &LayerSelector::parse("first:2").unwrap(),
            FeatureKind::Gradient,
            seed_value,
        )
        .unwrap()
    }

    #[test]
    fn dataset_split_is_65_percent_floor() {
        let ds = build_dataset(7, 6, 42);
        assert_eq!(ds.features.len(), 13);
        assert_eq!(ds.train_count, 8); // floor(0.65 * 13)
        assert_eq!(ds.train_rows().len() + ds.test_rows().len(), 13);
    }

    #[test]
    fn dataset_is_deterministic_in_the_seed() {
        let a = build_dataset(10, 10, 77);
        let b = build_dataset(10, 10, 77);
        assert_eq!(a.features, b.features);
        let c = build_dataset(10, 10, 78);
        let ids = |d: &MintDataset| -> Vec<String> {
            d.features.iter().map(|f| f.sample_id.clone()).collect()
        };
        assert_ne!(ids(&a), ids(&c), "different seeds should shuffle differently");
    }

    #[test]
    fn dataset_rejects_overlapping_subsets() {
        let model = logreg(10, 2, 9);
        let shared = [sample("dup", &[1, 2], 0)];
        let err = build_mint_dataset(
            &model,
            &inputs(&shared),
            &inputs(&shared),
            &LayerSelector::parse("first:1").unwrap(),
            FeatureKind::Gradient,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, ProbeError::OverlappingSubsets(id) if id == "dup"));
    }

    #[test]
    fn permuting_labels_preserves_the_multiset() {
        let mut ds = build_dataset(12, 8, 5);
        let before: usize = ds.features.iter().map(|f| f.membership_label as usize).sum();
        ds.permute_labels(99);
        let after: usize = ds.features.iter().map(|f| f.membership_label as usize).sum();
        assert_eq!(before, after);
    }

    #[test]
    fn feature_file_round_trip() {
        let ds = build_dataset(8, 8, 13);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.gmnt");
        write_features(&ds, &path).unwrap();
        let back = read_features(&path, ds.train_count, ds.seed).unwrap();

        assert_eq!(back.features.len(), ds.features.len());
        assert_eq!(back.feature_kind, ds.feature_kind);
        assert_eq!(back.selector, ds.selector);
        assert_eq!(back.model_fingerprint, ds.model_fingerprint);
        assert_eq!(back.train_count, ds.train_count);
        for (a, b) in ds.features.iter().zip(&back.features) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.membership_label, b.membership_label);
            // Payload is stored as f32.
            for (x, y) in a.feature.iter().zip(&b.feature) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn feature_file_rejects_corruption() {
        let ds = build_dataset(4, 4, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.gmnt");
        write_features(&ds, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad_magic = dir.path().join("bad_magic.gmnt");
        std::fs::write(&bad_magic, &bytes).unwrap();
        assert!(matches!(
            read_features(&bad_magic, 0, 0),
            Err(ProbeError::FeatureFormat(_))
        ));

        let truncated = dir.path().join("truncated.gmnt");
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&truncated, &full[..full.len() - 3]).unwrap();
        assert!(matches!(
            read_features(&truncated, 0, 0),
            Err(ProbeError::FeatureFormat(_))
        ));
    }

    #[test]
    fn frozen_model_probes_identically_across_calls() {
        let model = logreg(9, 2, 21);
        let s = sample("s", &[4, 5, 6], 1);
        let selector = LayerSelector::parse("first:2").unwrap();
        let fp_before = model.params.fingerprint();
        let a = per_sample_gradient(&model, &s, &selector).unwrap();
        let b = per_sample_gradient(&model, &s, &selector).unwrap();
        assert_eq!(a, b);
        assert_eq!(model.params.fingerprint(), fp_before, "probing must not mutate the model");
    }
}
