//! ROC/AUC metrics and the two audit protocols.
//!
//! Intra-database: member and external MINT samples both come from the
//! audited corpus (members from its training split, externals from its
//! held-out split). Mixed-database: the external pool additionally contains
//! samples from other corpora, tokenized under the audited model's
//! vocabulary; pool composition is recorded per cell.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::auditor::{predict_membership, train_mint, AuditorConfig, AuditorError};
use crate::models::{
    encode_samples, train_audited, AuditedModel, AuditedModelSpec, ModelError,
    TrainConfig,
};
use crate::probe::{
    build_mint_dataset, FeatureKind, LayerSelector, ProbeError, ProbeInput,
};
use crate::seed;
use crate::text::{build_vocab, split, Corpus, TextError, Vocabulary};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("labels contain a single class; AUC is undefined")]
    SingleClass,
    #[error("scores contain non-finite values")]
    NonFiniteScore,
    #[error("size pair ({size_d}, {size_e}) is unsatisfiable: {available_d} member and {available_e} external samples available")]
    InsufficientSamples { size_d: usize, size_e: usize, available_d: usize, available_e: usize },
    #[error("mixed protocol requires at least one external corpus")]
    NoExternalCorpora,
    #[error("sweep plan has no size pairs")]
    EmptyPlan,
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Auditor(#[from] AuditorError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// ROC curve: one point per distinct threshold plus the (0,0) and (1,1)
/// anchors, sorted by false-positive rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (false_positive_rate, true_positive_rate), both non-decreasing.
    pub points: Vec<(f64, f64)>,
    /// Score threshold producing each point (`inf` for the (0,0) anchor).
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let (x0, y0) = w[0];
                let (x1, y1) = w[1];
                (x1 - x0) * (y0 + y1) / 2.0
            })
            .sum()
    }

    /// Write as CSV with header `threshold,fpr,tpr`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("threshold,fpr,tpr\n");
        for (t, (fpr, tpr)) in self.thresholds.iter().zip(&self.points) {
            out.push_str(&format!("{t},{fpr},{tpr}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn validate_scores(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(EvalError::SingleClass);
    }
    Ok(())
}

/// ROC curve by descending-score sweep. Tied scores collapse into one
/// threshold step, which makes the trapezoidal area equal to the
/// Mann-Whitney U statistic (ties count half).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    validate_scores(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = labels.len() as f64 - pos;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // Consume the whole tie group at this threshold.
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg, tp as f64 / pos));
        thresholds.push(threshold);
    }
    Ok(RocCurve { points, thresholds })
}

/// AUC by trapezoidal integration of the ROC curve; equivalent to the
/// Mann-Whitney U statistic with 0.5 credit per tied positive/negative pair.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    Ok(roc_curve(scores, labels)?.area())
}

/// MINT sample-size sweep. Size pairs default to the five standard cells;
/// `repetitions` is the number of seeds per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub size_pairs: Vec<(usize, usize)>,
    pub repetitions: usize,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            size_pairs: vec![(2500, 2500), (2250, 2250), (1500, 1500), (1250, 1250), (750, 750)],
            repetitions: 1,
        }
    }
}

impl SweepPlan {
    /// Clamp every size pair to available member/external counts, dropping
    /// duplicate pairs that clamping produces.
    pub fn clamped(&self, max_d: usize, max_e: usize) -> SweepPlan {
        let mut pairs = Vec::new();
        for &(d, e) in &self.size_pairs {
            let p = (d.min(max_d), e.min(max_e));
            if !pairs.contains(&p) {
                pairs.push(p);
            }
        }
        SweepPlan { size_pairs: pairs, repetitions: self.repetitions }
    }
}

/// Inputs shared by both protocols.
pub struct ProtocolContext<'a> {
    pub corpus: &'a Corpus,
    /// External corpora for the mixed protocol; ignored by intra.
    pub externals: &'a [&'a Corpus],
    pub model_spec: &'a AuditedModelSpec,
    pub train_config: &'a TrainConfig,
    pub auditor_config: &'a AuditorConfig,
    pub selector: &'a LayerSelector,
    pub feature_kind: FeatureKind,
    pub sweep: &'a SweepPlan,
    pub base_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub size_d: usize,
    pub size_e: usize,
    pub repetition: usize,
    pub cell_seed: u64,
    pub auc: f64,
    /// Relative path of the sibling ROC CSV.
    pub roc_file: String,
    /// For mixed protocol: external-sample counts per source corpus.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_composition: Option<BTreeMap<String, usize>>,
    /// SHA-256 over the sorted MINT sample ids (controlled-comparison check).
    pub sample_ids_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size_d: usize,
    pub size_e: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub aucs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub protocol: String,
    pub model_spec: AuditedModelSpec,
    pub train_config: TrainConfig,
    pub auditor_config: AuditorConfig,
    pub selector: String,
    pub feature_kind: FeatureKind,
    pub base_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub audited_train_accuracy: f64,
    pub audited_test_accuracy: f64,
    pub sizes: Vec<SizeSummary>,
    pub cells: Vec<CellRecord>,
    pub timestamp: String,
}

/// Protocol result: the report plus the ROC curves to be written next to it.
pub struct ProtocolOutcome {
    pub report: AuditReport,
    pub curves: Vec<(String, RocCurve)>,
}

/// Audited model plus the sample pools the MINT cells draw from.
pub struct TrainedPipeline {
    pub model: AuditedModel,
    pub vocab: Vocabulary,
    pub member_pool: Vec<ProbeInput>,
    pub external_pool: Vec<ProbeInput>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Train the audited model on the corpus's 65% split and assemble the
/// member/external pools. For the mixed protocol, external-corpus samples
/// join the pool with their class labels folded into the audited model's
/// label range.
pub fn prepare_pipeline(
    corpus: &Corpus,
    externals: &[&Corpus],
    model_spec: &AuditedModelSpec,
    train_config: &TrainConfig,
    base_seed: u64,
) -> Result<TrainedPipeline> {
    let vocab = build_vocab(corpus, model_spec.vocab_size)?;
    let corpus_split = split(corpus, 0.65, seed::derive(base_seed, "target-split"))?;
    let by_id: BTreeMap<&str, &crate::text::Sample> =
        corpus.samples.iter().map(|s| (s.id.as_str(), s)).collect();

    let train_samples: Vec<&crate::text::Sample> =
        corpus_split.train_d.iter().map(|id| by_id[id.as_str()]).collect();
    let test_samples: Vec<&crate::text::Sample> =
        corpus_split.test.iter().map(|id| by_id[id.as_str()]).collect();

    let train_encoded = encode_samples(train_samples.iter().copied(), &vocab, model_spec.max_len);
    let test_encoded = encode_samples(test_samples.iter().copied(), &vocab, model_spec.max_len);

    let mut model = AuditedModel::build(model_spec)?;
    train_audited(&mut model, &train_encoded, train_config)?;
    let train_accuracy = crate::models::evaluate_accuracy(&model, &train_encoded)?;
    let test_accuracy = crate::models::evaluate_accuracy(&model, &test_encoded)?;

    let member_pool: Vec<ProbeInput> = train_encoded
        .into_iter()
        .map(|sample| ProbeInput { sample, source_corpus: corpus.name.clone() })
        .collect();
    let mut external_pool: Vec<ProbeInput> = test_encoded
        .into_iter()
        .map(|sample| ProbeInput { sample, source_corpus: corpus.name.clone() })
        .collect();
    for ext in externals {
        let encoded = encode_samples(ext.samples.iter(), &vocab, model_spec.max_len);
        for mut sample in encoded {
            // External corpora may use different label sets; fold into the
            // audited model's range so the probe loss is well-defined.
            sample.label %= model_spec.num_classes;
            sample.id = format!("{}::{}", ext.name, sample.id);
            external_pool.push(ProbeInput { sample, source_corpus: ext.name.clone() });
        }
    }
    Ok(TrainedPipeline {
        model,
        vocab,
        member_pool,
        external_pool,
        train_accuracy,
        test_accuracy,
    })
}

struct CellOutput {
    record: CellRecord,
    curve: RocCurve,
}

/// A single sweep cell: subsample, probe, train the auditor, score the
/// MINT-test rows.
pub fn run_cell(
    pipeline: &TrainedPipeline,
    selector: &LayerSelector,
    feature_kind: FeatureKind,
    auditor_config: &AuditorConfig,
    size_d: usize,
    size_e: usize,
    cell_seed: u64,
    protocol: &str,
    repetition: usize,
) -> Result<(CellRecord, RocCurve)> {
    let members = sample_pool(&pipeline.member_pool, size_d, cell_seed, "mint-d");
    let externals = sample_pool(&pipeline.external_pool, size_e, cell_seed, "mint-e");

    let mut composition: BTreeMap<String, usize> = BTreeMap::new();
    for e in &externals {
        *composition.entry(e.source_corpus.clone()).or_insert(0) += 1;
    }

    let dataset = build_mint_dataset(
        &pipeline.model,
        &members,
        &externals,
        selector,
        feature_kind,
        seed::derive(cell_seed, "mint-dataset"),
    )?;
    let config = AuditorConfig { seed: seed::derive(cell_seed, "auditor"), ..auditor_config.clone() };
    let auditor = train_mint(&dataset, &config)?;
    let predictions = predict_membership(&auditor, dataset.test_rows())?;
    let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
    let labels: Vec<u8> = dataset.test_rows().iter().map(|r| r.membership_label).collect();
    let curve = roc_curve(&scores, &labels)?;
    let cell_auc = curve.area();

    let mut ids: Vec<&str> = dataset.features.iter().map(|f| f.sample_id.as_str()).collect();
    ids.sort_unstable();
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    let record = CellRecord {
        size_d,
        size_e,
        repetition,
        cell_seed,
        auc: cell_auc,
        roc_file: format!("roc_{protocol}_{size_d}x{size_e}_rep{repetition}.csv"),
        pool_composition: if protocol == "mixed" { Some(composition) } else { None },
        sample_ids_hash: hex_string(&hasher.finalize()),
    };
    Ok((record, curve))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sample_pool(pool: &[ProbeInput], n: usize, cell_seed: u64, stream: &str) -> Vec<ProbeInput> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    let mut rng = seed::rng(cell_seed, stream);
    idx.shuffle(&mut rng);
    idx.truncate(n);
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

fn run_protocol(ctx: &ProtocolContext<'_>, protocol: &str) -> Result<ProtocolOutcome> {
    if ctx.sweep.size_pairs.is_empty() {
        return Err(EvalError::EmptyPlan);
    }
    let externals: &[&Corpus] = if protocol == "mixed" { ctx.externals } else { &[] };
    if protocol == "mixed" && externals.is_empty() {
        return Err(EvalError::NoExternalCorpora);
    }
    let pipeline = prepare_pipeline(
        ctx.corpus,
        externals,
        ctx.model_spec,
        ctx.train_config,
        ctx.base_seed,
    )?;
    for &(d, e) in &ctx.sweep.size_pairs {
        if d == 0
            || e == 0
            || d > pipeline.member_pool.len()
            || e > pipeline.external_pool.len()
        {
            return Err(EvalError::InsufficientSamples {
                size_d: d,
                size_e: e,
                available_d: pipeline.member_pool.len(),
                available_e: pipeline.external_pool.len(),
            });
        }
    }

    // Cell jobs are independent; run them (possibly in parallel) and
    // assemble in plan order.
    struct CellJob {
        size_d: usize,
        size_e: usize,
        repetition: usize,
        cell_seed: u64,
    }
    let jobs: Vec<CellJob> = ctx
        .sweep
        .size_pairs
        .iter()
        .flat_map(|&(d, e)| {
            (0..ctx.sweep.repetitions).map(move |r| CellJob {
                size_d: d,
                size_e: e,
                repetition: r,
                cell_seed: seed::derive(ctx.base_seed, &format!("cell:{d}x{e}:rep{r}")),
            })
        })
        .collect();
    let outputs: Vec<Result<CellOutput>> = crate::par::map(&jobs, |job| {
        let (record, curve) = run_cell(
            &pipeline,
            ctx.selector,
            ctx.feature_kind,
            ctx.auditor_config,
            job.size_d,
            job.size_e,
            job.cell_seed,
            protocol,
            job.repetition,
        )?;
        Ok(CellOutput { record, curve })
    });

    let mut cells = Vec::new();
    let mut curves = Vec::new();
    for out in outputs {
        let out = out?;
        curves.push((out.record.roc_file.clone(), out.curve));
        cells.push(out.record);
    }

    let sizes = summarize_cells(&ctx.sweep.size_pairs, &cells);
    let report = AuditReport {
        schema_version: 1,
        protocol: protocol.to_string(),
        model_spec: ctx.model_spec.clone(),
        train_config: ctx.train_config.clone(),
        auditor_config: ctx.auditor_config.clone(),
        selector: ctx.selector.to_string(),
        feature_kind: ctx.feature_kind,
        base_seed: ctx.base_seed,
        config_hash: None,
        audited_train_accuracy: pipeline.train_accuracy,
        audited_test_accuracy: pipeline.test_accuracy,
        sizes,
        cells,
        timestamp: unix_timestamp(),
    };
    Ok(ProtocolOutcome { report, curves })
}

/// Per-size mean/std over the cell AUCs, in plan order.
pub fn summarize_cells(size_pairs: &[(usize, usize)], cells: &[CellRecord]) -> Vec<SizeSummary> {
    size_pairs
        .iter()
        .map(|&(d, e)| {
            let aucs: Vec<f64> = cells
                .iter()
                .filter(|c| c.size_d == d && c.size_e == e)
                .map(|c| c.auc)
                .collect();
            let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
            let var = aucs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / aucs.len() as f64;
            SizeSummary { size_d: d, size_e: e, auc_mean: mean, auc_std: var.sqrt(), aucs }
        })
        .collect()
}

fn unix_timestamp() -> String {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_default()
}

/// Intra-database protocol (1-vs-1): members and externals from the same
/// corpus.
pub fn run_intra_protocol(ctx: &ProtocolContext<'_>) -> Result<ProtocolOutcome> {
    run_protocol(ctx, "intra")
}

/// Mixed-database protocol (1-vs-N): externals pooled from the target's
/// held-out split and every other corpus.
pub fn run_mixed_protocol(ctx: &ProtocolContext<'_>) -> Result<ProtocolOutcome> {
    run_protocol(ctx, "mixed")
}

/// Gradient-vs-embedding comparison under identical sampling: both feature
/// kinds see the same MINT sample ids and auditor configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureComparison {
    pub size_d: usize,
    pub size_e: usize,
    pub auc_gradient_mean: f64,
    pub auc_embedding_mean: f64,
    pub per_seed: Vec<(f64, f64)>,
    /// True when both runs probed identical sample id sets in every cell.
    pub same_sample_ids: bool,
}

pub fn compare_feature_kinds(
    ctx: &ProtocolContext<'_>,
    size_pair: (usize, usize),
) -> Result<FeatureComparison> {
    let pipeline = prepare_pipeline(ctx.corpus, &[], ctx.model_spec, ctx.train_config, ctx.base_seed)?;
    let (d, e) = size_pair;
    if d == 0 || e == 0 || d > pipeline.member_pool.len() || e > pipeline.external_pool.len() {
        return Err(EvalError::InsufficientSamples {
            size_d: d,
            size_e: e,
            available_d: pipeline.member_pool.len(),
            available_e: pipeline.external_pool.len(),
        });
    }
    let mut per_seed = Vec::new();
    let mut same_ids = true;
    for r in 0..ctx.sweep.repetitions {
        let cell_seed = seed::derive(ctx.base_seed, &format!("cell:{d}x{e}:rep{r}"));
        let (grad_rec, _) = run_cell(
            &pipeline,
            ctx.selector,
            FeatureKind::Gradient,
            ctx.auditor_config,
            d,
            e,
            cell_seed,
            "compare-gradient",
            r,
        )?;
        let (emb_rec, _) = run_cell(
            &pipeline,
            ctx.selector,
            FeatureKind::Embedding,
            ctx.auditor_config,
            d,
            e,
            cell_seed,
            "compare-embedding",
            r,
        )?;
        same_ids &= grad_rec.sample_ids_hash == emb_rec.sample_ids_hash;
        per_seed.push((grad_rec.auc, emb_rec.auc));
    }
    let n = per_seed.len() as f64;
    Ok(FeatureComparison {
        size_d: d,
        size_e: e,
        auc_gradient_mean: per_seed.iter().map(|p| p.0).sum::<f64>() / n,
        auc_embedding_mean: per_seed.iter().map(|p| p.1).sum::<f64>() / n,
        per_seed,
        same_sample_ids: same_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// O(n^2) pair-counting oracle: wins + half-ties over all
    /// positive/negative pairs.
    pub(crate) fn auc_pair_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_trivial_cases() {
        // Perfect separation.
        let a = auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap();
        assert_eq!(a, 1.0);
        // Pure ties.
        let a = auc(&[0.5, 0.5, 0.5, 0.5], &[1, 1, 0, 0]).unwrap();
        assert_eq!(a, 0.5);
        // Worked example: members [0.9, 0.4], non-members [0.4, 0.1] -> 0.875.
        let a = auc(&[0.9, 0.4, 0.4, 0.1], &[1, 1, 0, 0]).unwrap();
        assert!((a - 0.875).abs() < 1e-15, "auc = {a}");
    }

    #[test]
    fn auc_errors() {
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(EvalError::SingleClass)));
        assert!(matches!(
            auc(&[0.1], &[1, 0]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn roc_curve_shape_and_area() {
        let curve = roc_curve(&[1.0, 0.0], &[1, 0]).unwrap();
        assert_eq!(curve.points, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(curve.area(), 1.0);
    }

    #[test]
    fn auc_matches_pair_oracle_on_random_instances() {
        use rand::Rng;
        let mut rng = crate::seed::rng(123, "auc-oracle");
        for case in 0..200 {
            let n = rng.gen_range(2..120);
            // Quantized scores make ties common.
            let scores: Vec<f64> =
                (0..n).map(|_| (rng.gen_range(0..10) as f64) / 10.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[n - 1] = 0;
            let fast = auc(&scores, &labels).unwrap();
            let slow = auc_pair_oracle(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "case {case}: {fast} vs {slow}");
        }
    }

    #[test]
    fn roc_is_monotone_and_anchored() {
        use rand::Rng;
        let mut rng = crate::seed::rng(7, "roc-mono");
        for _ in 0..50 {
            let n = rng.gen_range(4..64);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let curve = roc_curve(&scores, &labels).unwrap();
            assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
            assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));
            for w in curve.points.windows(2) {
                assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            assert!((curve.area() - auc(&scores, &labels).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn auc_invariant_under_increasing_transform() {
        use rand::Rng;
        let mut rng = crate::seed::rng(9, "auc-transform");
        let scores: Vec<f64> = (0..60).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut labels: Vec<u8> = (0..60).map(|_| rng.gen_range(0..2) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let base = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        assert!((auc(&squashed, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn sweep_plan_clamps_and_dedupes() {
        let plan = SweepPlan::default().clamped(1000, 800);
        assert_eq!(plan.size_pairs, vec![(1000, 800), (750, 750)]);
    }

    fn tiny_context_parts() -> (crate::text::Corpus, AuditedModelSpec, TrainConfig, AuditorConfig)
    {
        let corpus = crate::text::synth_corpus(&crate::text::SynthSpec {
            num_classes: 2,
            samples_per_class: 60,
            vocab_size: 60,
            class_signal_strength: 0.8,
            seed: 5,
        })
        .unwrap();
        let model_spec = AuditedModelSpec {
            kind: crate::models::ModelKind::Logreg,
            vocab_size: 60,
            max_len: 20,
            embed_dim: 0,
            hidden_dim: 0,
            num_heads: 1,
            num_classes: 2,
            seed: 5,
        };
        let train_config = TrainConfig { epochs: 5, batch_size: 16, learning_rate: 0.05, seed: 5 };
        let auditor_config = AuditorConfig {
            hidden_layers: vec![16, 8],
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
        };
        (corpus, model_spec, train_config, auditor_config)
    }

    #[test]
    fn intra_protocol_produces_a_complete_deterministic_report() {
        let (corpus, model_spec, train_config, auditor_config) = tiny_context_parts();
        let selector = LayerSelector::parse("last:1").unwrap();
        let sweep = SweepPlan { size_pairs: vec![(30, 30), (20, 20)], repetitions: 2 };
        let ctx = ProtocolContext {
            corpus: &corpus,
            externals: &[],
            model_spec: &model_spec,
            train_config: &train_config,
            auditor_config: &auditor_config,
            selector: &selector,
            feature_kind: FeatureKind::Gradient,
            sweep: &sweep,
            base_seed: 11,
        };
        let a = run_intra_protocol(&ctx).unwrap();
        let b = run_intra_protocol(&ctx).unwrap();

        assert_eq!(a.report.protocol, "intra");
        assert_eq!(a.report.cells.len(), 4);
        assert_eq!(a.report.sizes.len(), 2);
        assert_eq!(a.curves.len(), 4);
        for cell in &a.report.cells {
            assert!(cell.auc >= 0.0 && cell.auc <= 1.0);
            assert!(cell.pool_composition.is_none());
        }
        for summary in &a.report.sizes {
            assert_eq!(summary.aucs.len(), 2);
            assert!(summary.auc_std >= 0.0);
        }
        // Same inputs, same report (timestamps aside).
        let strip = |r: &AuditReport| {
            let mut v = serde_json::to_value(r).unwrap();
            v.as_object_mut().unwrap().remove("timestamp");
            v
        };
        assert_eq!(strip(&a.report), strip(&b.report));
        assert_eq!(
            a.curves.iter().map(|(n, c)| (n.clone(), c.clone())).collect::<Vec<_>>(),
            b.curves.iter().map(|(n, c)| (n.clone(), c.clone())).collect::<Vec<_>>()
        );
    }

    #[test]
    fn mixed_protocol_records_pool_composition() {
        let (corpus, model_spec, train_config, auditor_config) = tiny_context_parts();
        let external = crate::text::synth_corpus(&crate::text::SynthSpec {
            num_classes: 3,
            samples_per_class: 30,
            vocab_size: 40,
            class_signal_strength: 0.5,
            seed: 99,
        })
        .unwrap();
        let mut external = external;
        external.name = "other".to_string();
        let selector = LayerSelector::parse("last:1").unwrap();
        let sweep = SweepPlan { size_pairs: vec![(40, 60)], repetitions: 1 };
        let ctx = ProtocolContext {
            corpus: &corpus,
            externals: &[&external],
            model_spec: &model_spec,
            train_config: &train_config,
            auditor_config: &auditor_config,
            selector: &selector,
            feature_kind: FeatureKind::Gradient,
            sweep: &sweep,
            base_seed: 21,
        };
        let out = run_mixed_protocol(&ctx).unwrap();
        assert_eq!(out.report.protocol, "mixed");
        let composition = out.report.cells[0].pool_composition.as_ref().unwrap();
        assert_eq!(composition.values().sum::<usize>(), 60);
        assert!(composition.len() >= 2, "expected externals from both corpora: {composition:?}");

        // Intra with no externals is fine; mixed without them is an error.
        let no_ext = ProtocolContext { externals: &[], ..ctx };
        assert!(matches!(run_mixed_protocol(&no_ext), Err(EvalError::NoExternalCorpora)));
    }

    #[test]
    fn protocols_reject_unsatisfiable_size_pairs() {
        let (corpus, model_spec, train_config, auditor_config) = tiny_context_parts();
        let selector = LayerSelector::parse("last:1").unwrap();
        let sweep = SweepPlan { size_pairs: vec![(5000, 5000)], repetitions: 1 };
        let ctx = ProtocolContext {
            corpus: &corpus,
            externals: &[],
            model_spec: &model_spec,
            train_config: &train_config,
            auditor_config: &auditor_config,
            selector: &selector,
            feature_kind: FeatureKind::Gradient,
            sweep: &sweep,
            base_seed: 1,
        };
        assert!(matches!(
            run_intra_protocol(&ctx),
            Err(EvalError::InsufficientSamples { .. })
        ));
    }
}
