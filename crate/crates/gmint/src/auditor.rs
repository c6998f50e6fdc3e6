//! The MINT auditor: a fully connected network (dense 256/128/64 with ReLU,
//! sigmoid output unit) trained with binary cross-entropy and Adam on
//! probed features to emit membership scores.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    adam_step, glorot_uniform, AdamHyper, AdamState, AutodiffError, Graph, ParameterSet, Tensor,
};
use crate::probe::{GradientFeature, MintDataset, Normalization};
use crate::seed;

#[derive(Debug, Error)]
pub enum AuditorError {
    #[error("invalid auditor config: {0}")]
    BadConfig(String),
    #[error("dataset contains only membership label {0}; both classes are required")]
    SingleClass(u8),
    #[error("feature length {got} does not match expected {expected} (sample {id})")]
    DimMismatch { id: String, got: usize, expected: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, AuditorError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditorConfig {
    pub hidden_layers: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AuditorConfig {
    fn default() -> Self {
        AuditorConfig {
            hidden_layers: vec![256, 128, 64],
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// A membership score for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    /// Membership probability, strictly inside (0, 1).
    pub score: f64,
    /// Convenience thresholding at 0.5; AUC is the primary metric.
    pub predicted_member: bool,
}

/// Trained auditor. Holds the normalization statistics of the dataset it
/// was trained on; predictions always normalize their inputs with them.
#[derive(Debug, Clone)]
pub struct MintAuditor {
    pub config: AuditorConfig,
    pub params: ParameterSet,
    pub input_dim: usize,
    pub normalization: Normalization,
    /// Mean training loss per epoch.
    pub train_history: Vec<f64>,
}

fn layer_names(n_layers: usize) -> Vec<(String, String)> {
    (0..n_layers)
        .map(|i| (format!("layer{i:02}.weight"), format!("layer{i:02}.bias")))
        .collect()
}

fn build_params(input_dim: usize, hidden: &[usize], seed_value: u64) -> Result<ParameterSet> {
    let mut widths = vec![input_dim];
    widths.extend_from_slice(hidden);
    widths.push(1);
    let mut params = ParameterSet::new();
    let mut rng = seed::rng(seed_value, "auditor-init");
    for (i, (w_name, b_name)) in layer_names(widths.len() - 1).iter().enumerate() {
        let (fan_in, fan_out) = (widths[i], widths[i + 1]);
        params.push(w_name, glorot_uniform(&[fan_in, fan_out], fan_in, fan_out, &mut rng), true)?;
        params.push(b_name, Tensor::zeros(vec![fan_out]), true)?;
    }
    Ok(params)
}

/// Forward a normalized batch `[B,d]`; returns the sigmoid output node.
fn forward_batch(
    graph: &mut Graph,
    params: &ParameterSet,
    n_layers: usize,
    batch: Tensor,
) -> Result<crate::autodiff::NodeId> {
    let mut x = graph.input(batch);
    for (i, (w_name, b_name)) in layer_names(n_layers).iter().enumerate() {
        let w = graph.param(w_name, params.get(w_name).unwrap());
        let b = graph.param(b_name, params.get(b_name).unwrap());
        x = graph.matmul(x, w)?;
        x = graph.add_row(x, b)?;
        if i + 1 < n_layers {
            x = graph.relu(x);
        }
    }
    Ok(graph.sigmoid(x))
}

fn batch_tensor(rows: &[&GradientFeature], norm: &Normalization, dim: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        if r.feature.len() != dim {
            return Err(AuditorError::DimMismatch {
                id: r.sample_id.clone(),
                got: r.feature.len(),
                expected: dim,
            });
        }
        data.extend(norm.apply(&r.feature));
    }
    Ok(Tensor::new(vec![rows.len(), dim], data).expect("dimensions checked above"))
}

/// Train the auditor on the dataset's MINT-train portion (the 65/35 split
/// fixed when the dataset was built).
pub fn train_mint(dataset: &MintDataset, config: &AuditorConfig) -> Result<MintAuditor> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(AuditorError::BadConfig("epochs and batch_size must be positive".into()));
    }
    if config.hidden_layers.is_empty() || config.hidden_layers.contains(&0) {
        return Err(AuditorError::BadConfig("hidden layer sizes must be positive".into()));
    }
    let train = dataset.train_rows();
    if train.is_empty() {
        return Err(AuditorError::EmptyDataset);
    }
    let dim = dataset.feature_dim();
    for labels_needed in [0u8, 1u8] {
        if !dataset.features.iter().any(|f| f.membership_label == labels_needed) {
            return Err(AuditorError::SingleClass(1 - labels_needed));
        }
    }
    let n_layers = config.hidden_layers.len() + 1;
    let mut params = build_params(dim, &config.hidden_layers, config.seed)?;
    let mut state = AdamState::new(&params, AdamHyper::with_learning_rate(config.learning_rate));
    let mut rng = seed::rng(config.seed, "auditor-shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch_size = config.batch_size.min(train.len());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            let rows: Vec<&GradientFeature> = chunk.iter().map(|&i| &train[i]).collect();
            let targets: Vec<f64> =
                rows.iter().map(|r| r.membership_label as f64).collect();
            let batch = batch_tensor(&rows, &dataset.normalization, dim)?;
            let mut graph = Graph::new();
            let out = forward_batch(&mut graph, &params, n_layers, batch)?;
            let loss = graph.binary_cross_entropy(out, &targets)?;
            let grads = graph.backward(loss)?;
            if !grads.loss_value().is_finite() {
                return Err(AuditorError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            epoch_loss += grads.loss_value();
            batches += 1;
            adam_step(&mut params, &grads, &mut state)?;
        }
        history.push(epoch_loss / batches as f64);
    }

    Ok(MintAuditor {
        config: config.clone(),
        params,
        input_dim: dim,
        normalization: dataset.normalization.clone(),
        train_history: history,
    })
}

/// Membership scores for a list of features, order preserved.
pub fn predict_membership(
    auditor: &MintAuditor,
    features: &[GradientFeature],
) -> Result<Vec<Prediction>> {
    if features.is_empty() {
        return Ok(Vec::new());
    }
    let dim = auditor.input_dim;
    let rows: Vec<&GradientFeature> = features.iter().collect();
    let batch = batch_tensor(&rows, &auditor.normalization, dim)?;
    let n_layers = auditor.config.hidden_layers.len() + 1;
    let mut graph = Graph::new();
    let out = forward_batch(&mut graph, &auditor.params, n_layers, batch)?;
    let scores = graph.value(out).data();
    Ok(features
        .iter()
        .zip(scores)
        .map(|(f, &score)| Prediction {
            sample_id: f.sample_id.clone(),
            score,
            predicted_member: score >= 0.5,
        })
        .collect())
}
