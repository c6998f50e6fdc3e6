//! The audited classifiers: small trainable text models standing in for the
//! language model under audit, plus a shared training loop.
//!
//! Layer naming is fixed per kind (`layer00.embedding`, `layer01.weight`,
//! ...) so that "first k" / "last k" layer selection is unambiguous:
//!
//! - `logreg`: `layer00.weight [V,C]`, `layer00.bias [C]` over bag-of-words
//!   counts (PAD excluded, so row 0 of the weight is unused).
//! - `mlp`: `layer00.embedding [V,E]`, `layer01.weight [E,H]`,
//!   `layer01.bias [H]`, `layer02.weight [H,C]`, `layer02.bias [C]`;
//!   mean-pooled embeddings, one ReLU hidden layer.
//! - `tiny_transformer`: `layer00.embedding [V,E]`, `layer01.{query,key,
//!   value,output} [E,E]`, `layer02.{gamma,beta} [E]`, `layer03.weight
//!   [E,C]`, `layer03.bias [C]`; one self-attention block with a residual
//!   connection and layer norm, mean-pooled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    adam_step, glorot_uniform, AdamHyper, AdamState, AutodiffError, GradientMap, Graph, NodeId,
    ParameterSet, Tensor,
};
use crate::seed;
use crate::text::{tokenize, Sample, Vocabulary, PAD_ID};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    BadSpec(String),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("sample {id} has label {label}, but the model has {classes} classes")]
    LabelOutOfRange { id: String, label: usize, classes: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logreg,
    Mlp,
    TinyTransformer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditedModelSpec {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub max_len: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Attention heads; only meaningful for the tiny transformer.
    pub num_heads: usize,
    pub num_classes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clamped to the training-set size.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, batch_size: 512, learning_rate: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// A text classifier under audit. Once trained it is treated as frozen:
/// probing reads parameters but never mutates them.
#[derive(Debug, Clone)]
pub struct AuditedModel {
    pub spec: AuditedModelSpec,
    pub params: ParameterSet,
    pub training_config: Option<TrainConfig>,
    pub train_history: Vec<EpochStats>,
}

/// A sample tokenized under the model's vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub id: String,
    pub token_ids: Vec<usize>,
    pub label: usize,
}

pub fn encode_samples<'a, I>(samples: I, vocab: &Vocabulary, max_len: usize) -> Vec<EncodedSample>
where
    I: IntoIterator<Item = &'a Sample>,
{
    samples
        .into_iter()
        .map(|s| EncodedSample {
            id: s.id.clone(),
            token_ids: tokenize(&s.text, vocab, max_len),
            label: s.label,
        })
        .collect()
}

/// Forward-pass handles: the penultimate representation (input to the final
/// classification layer) and the output probability row.
pub struct ForwardNodes {
    pub penultimate: NodeId,
    pub probs: NodeId,
}

impl AuditedModel {
    /// Deterministically initialized, untrained model.
    pub fn build(spec: &AuditedModelSpec) -> Result<Self> {
        validate_spec(spec)?;
        let mut params = ParameterSet::new();
        let mut rng = seed::rng(spec.seed, "model-init");
        let (v, e, h, c) = (spec.vocab_size, spec.embed_dim, spec.hidden_dim, spec.num_classes);
        let glorot = |shape: &[usize], rng: &mut _| {
            glorot_uniform(shape, shape[0], shape[shape.len() - 1], rng)
        };
        match spec.kind {
            ModelKind::Logreg => {
                params.push("layer00.weight", glorot(&[v, c], &mut rng), true)?;
                params.push("layer00.bias", Tensor::zeros(vec![c]), true)?;
            }
            ModelKind::Mlp => {
                params.push("layer00.embedding", glorot(&[v, e], &mut rng), true)?;
                params.push("layer01.weight", glorot(&[e, h], &mut rng), true)?;
                params.push("layer01.bias", Tensor::zeros(vec![h]), true)?;
                params.push("layer02.weight", glorot(&[h, c], &mut rng), true)?;
                params.push("layer02.bias", Tensor::zeros(vec![c]), true)?;
            }
            ModelKind::TinyTransformer => {
                params.push("layer00.embedding", glorot(&[v, e], &mut rng), true)?;
                for name in ["query", "key", "value", "output"] {
                    params.push(&format!("layer01.{name}"), glorot(&[e, e], &mut rng), true)?;
                }
                params.push("layer02.gamma", Tensor::new(vec![e], vec![1.0; e]).unwrap(), true)?;
                params.push("layer02.beta", Tensor::zeros(vec![e]), true)?;
                params.push("layer03.weight", glorot(&[e, c], &mut rng), true)?;
                params.push("layer03.bias", Tensor::zeros(vec![c]), true)?;
            }
        }
        Ok(AuditedModel { spec: spec.clone(), params, training_config: None, train_history: Vec::new() })
    }

    /// Record a forward pass for one sample on `graph`, registering every
    /// parameter. Returns handles to the penultimate activation and the
    /// class probability row.
    pub fn forward_sample(&self, graph: &mut Graph, token_ids: &[usize]) -> Result<ForwardNodes> {
        let nodes = match self.spec.kind {
            ModelKind::Logreg => {
                let x = graph.input(self.bag_of_words(token_ids));
                let w = graph.param("layer00.weight", self.params.get("layer00.weight").unwrap());
                let b = graph.param("layer00.bias", self.params.get("layer00.bias").unwrap());
                let logits = graph.matmul(x, w)?;
                let logits = graph.add_row(logits, b)?;
                let probs = graph.softmax(logits);
                ForwardNodes { penultimate: logits, probs }
            }
            ModelKind::Mlp => {
                let table =
                    graph.param("layer00.embedding", self.params.get("layer00.embedding").unwrap());
                let emb = graph.embedding_lookup(table, token_ids)?;
                let pooled = graph.mean_pool(emb)?;
                let w1 = graph.param("layer01.weight", self.params.get("layer01.weight").unwrap());
                let b1 = graph.param("layer01.bias", self.params.get("layer01.bias").unwrap());
                let h = graph.matmul(pooled, w1)?;
                let h = graph.add_row(h, b1)?;
                let h = graph.relu(h);
                let w2 = graph.param("layer02.weight", self.params.get("layer02.weight").unwrap());
                let b2 = graph.param("layer02.bias", self.params.get("layer02.bias").unwrap());
                let logits = graph.matmul(h, w2)?;
                let logits = graph.add_row(logits, b2)?;
                let probs = graph.softmax(logits);
                ForwardNodes { penultimate: h, probs }
            }
            ModelKind::TinyTransformer => {
                let table =
                    graph.param("layer00.embedding", self.params.get("layer00.embedding").unwrap());
                let x = graph.embedding_lookup(table, token_ids)?;
                let wq = graph.param("layer01.query", self.params.get("layer01.query").unwrap());
                let wk = graph.param("layer01.key", self.params.get("layer01.key").unwrap());
                let wv = graph.param("layer01.value", self.params.get("layer01.value").unwrap());
                let wo = graph.param("layer01.output", self.params.get("layer01.output").unwrap());
                let q = graph.matmul(x, wq)?;
                let k = graph.matmul(x, wk)?;
                let v = graph.matmul(x, wv)?;
                let att = graph.scaled_dot_attention(q, k, v, self.spec.num_heads)?;
                let att = graph.matmul(att, wo)?;
                let res = graph.add(x, att)?;
                let gamma = graph.param("layer02.gamma", self.params.get("layer02.gamma").unwrap());
                let beta = graph.param("layer02.beta", self.params.get("layer02.beta").unwrap());
                let normed = graph.layer_norm(res, gamma, beta)?;
                let pooled = graph.mean_pool(normed)?;
                let w = graph.param("layer03.weight", self.params.get("layer03.weight").unwrap());
                let b = graph.param("layer03.bias", self.params.get("layer03.bias").unwrap());
                let logits = graph.matmul(pooled, w)?;
                let logits = graph.add_row(logits, b)?;
                let probs = graph.softmax(logits);
                ForwardNodes { penultimate: pooled, probs }
            }
        };
        Ok(nodes)
    }

    /// Bag-of-words count vector `[1, V]`; PAD tokens are not counted.
    fn bag_of_words(&self, token_ids: &[usize]) -> Tensor {
        let mut counts = vec![0.0; self.spec.vocab_size];
        for &t in token_ids {
            if t != PAD_ID {
                counts[t] += 1.0;
            }
        }
        Tensor::new(vec![1, self.spec.vocab_size], counts).unwrap()
    }

    /// Per-sample cross-entropy loss and gradients against the sample's own
    /// class label. This is the same path batch training averages over.
    pub fn sample_gradient(&self, sample: &EncodedSample) -> Result<GradientMap> {
        if sample.label >= self.spec.num_classes {
            return Err(ModelError::LabelOutOfRange {
                id: sample.id.clone(),
                label: sample.label,
                classes: self.spec.num_classes,
            });
        }
        let mut graph = Graph::new();
        let nodes = self.forward_sample(&mut graph, &sample.token_ids)?;
        let loss = graph.categorical_cross_entropy(nodes.probs, &[sample.label])?;
        Ok(graph.backward(loss)?)
    }

    /// Class probabilities for one sample.
    pub fn predict_probs(&self, token_ids: &[usize]) -> Result<Vec<f64>> {
        let mut graph = Graph::new();
        let nodes = self.forward_sample(&mut graph, token_ids)?;
        Ok(graph.value(nodes.probs).data().to_vec())
    }

    /// Penultimate activation for one sample (the embedding-baseline
    /// feature).
    pub fn penultimate(&self, token_ids: &[usize]) -> Result<Vec<f64>> {
        let mut graph = Graph::new();
        let nodes = self.forward_sample(&mut graph, token_ids)?;
        Ok(graph.value(nodes.penultimate).data().to_vec())
    }
}

fn validate_spec(spec: &AuditedModelSpec) -> Result<()> {
    if spec.vocab_size < 2 {
        return Err(ModelError::BadSpec("vocab_size must be at least 2 (PAD and UNK)".into()));
    }
    if spec.max_len == 0 || spec.num_classes < 2 {
        return Err(ModelError::BadSpec("max_len must be positive and num_classes >= 2".into()));
    }
    match spec.kind {
        ModelKind::Logreg => {}
        ModelKind::Mlp => {
            if spec.embed_dim == 0 || spec.hidden_dim == 0 {
                return Err(ModelError::BadSpec("embed_dim and hidden_dim must be positive".into()));
            }
        }
        ModelKind::TinyTransformer => {
            if spec.embed_dim == 0 || spec.num_heads == 0 {
                return Err(ModelError::BadSpec("embed_dim and num_heads must be positive".into()));
            }
            if spec.embed_dim % spec.num_heads != 0 {
                return Err(ModelError::BadSpec(format!(
                    "embed_dim {} not divisible by num_heads {}",
                    spec.embed_dim, spec.num_heads
                )));
            }
        }
    }
    Ok(())
}

/// Train with Adam on mean per-sample gradients. Batches are data-parallel:
/// each sample's gradient is computed on its own tape and the batch mean is
/// reduced in a fixed order, so results are independent of thread count.
pub fn train_audited(
    model: &mut AuditedModel,
    train_set: &[EncodedSample],
    config: &TrainConfig,
) -> Result<()> {
    if config.epochs == 0 {
        return Err(ModelError::BadConfig("epochs must be at least 1".into()));
    }
    if config.batch_size == 0 {
        return Err(ModelError::BadConfig("batch_size must be at least 1".into()));
    }
    if train_set.is_empty() {
        return Err(ModelError::EmptyTrainSet);
    }
    for s in train_set {
        if s.label >= model.spec.num_classes {
            return Err(ModelError::LabelOutOfRange {
                id: s.id.clone(),
                label: s.label,
                classes: model.spec.num_classes,
            });
        }
    }
    let batch_size = config.batch_size.min(train_set.len());
    let mut state =
        AdamState::new(&model.params, AdamHyper::with_learning_rate(config.learning_rate));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = seed::rng(config.seed, "train-shuffle");
    model.train_history.clear();

    for epoch in 0..config.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            let batch: Vec<&EncodedSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let grads: Vec<Result<GradientMap>> =
                crate::par::map(&batch, |s| model.sample_gradient(s));
            let grads: Vec<GradientMap> = grads.into_iter().collect::<Result<_>>()?;
            let mean = GradientMap::mean(&grads)?;
            if !mean.loss_value().is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            epoch_loss += mean.loss_value();
            batches += 1;
            adam_step(&mut model.params, &mean, &mut state)?;
        }
        let accuracy = evaluate_accuracy(model, train_set)?;
        model.train_history.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / batches as f64,
            train_accuracy: accuracy,
        });
    }
    model.training_config = Some(config.clone());
    Ok(())
}

/// Fraction of argmax-correct predictions; probability ties resolve to the
/// lowest class index.
pub fn evaluate_accuracy(model: &AuditedModel, labeled_set: &[EncodedSample]) -> Result<f64> {
    if labeled_set.is_empty() {
        return Err(ModelError::EmptyEvalSet);
    }
    let correct: Vec<Result<bool>> = crate::par::map(labeled_set, |s| {
        let probs = model.predict_probs(&s.token_ids)?;
        let mut best = 0usize;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Ok(best == s.label)
    });
    let mut hits = 0usize;
    for c in correct {
        if c? {
            hits += 1;
        }
    }
    Ok(hits as f64 / labeled_set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ModelKind) -> AuditedModelSpec {
        AuditedModelSpec {
            kind,
            vocab_size: 12,
            max_len: 6,
            embed_dim: 8,
            hidden_dim: 10,
            num_heads: 2,
            num_classes: 3,
            seed: 17,
        }
    }

    fn sample(id: &str, token_ids: &[usize], label: usize) -> EncodedSample {
        EncodedSample { id: id.to_string(), token_ids: token_ids.to_vec(), label }
    }

    /// A trivially separable task: class c samples contain only token 2 + c.
    fn separable_set(n_per_class: usize, classes: usize) -> Vec<EncodedSample> {
        let mut out = Vec::new();
        for c in 0..classes {
            for i in 0..n_per_class {
                out.push(sample(&format!("c{c}-{i}"), &[2 + c, 2 + c, 2 + c, 0, 0, 0], c));
            }
        }
        out
    }

    #[test]
    fn layer_layout_per_model_kind() {
        let shapes = |kind: ModelKind| -> Vec<(String, Vec<usize>)> {
            let m = AuditedModel::build(&spec(kind)).unwrap();
            m.params
                .entries()
                .iter()
                .map(|e| (e.name.clone(), e.tensor.shape().to_vec()))
                .collect()
        };
        assert_eq!(
            shapes(ModelKind::Logreg),
            vec![
                ("layer00.weight".to_string(), vec![12, 3]),
                ("layer00.bias".to_string(), vec![3]),
            ]
        );
        assert_eq!(
            shapes(ModelKind::Mlp),
            vec![
                ("layer00.embedding".to_string(), vec![12, 8]),
                ("layer01.weight".to_string(), vec![8, 10]),
                ("layer01.bias".to_string(), vec![10]),
                ("layer02.weight".to_string(), vec![10, 3]),
                ("layer02.bias".to_string(), vec![3]),
            ]
        );
        assert_eq!(
            shapes(ModelKind::TinyTransformer),
            vec![
                ("layer00.embedding".to_string(), vec![12, 8]),
                ("layer01.query".to_string(), vec![8, 8]),
                ("layer01.key".to_string(), vec![8, 8]),
                ("layer01.value".to_string(), vec![8, 8]),
                ("layer01.output".to_string(), vec![8, 8]),
                ("layer02.gamma".to_string(), vec![8]),
                ("layer02.beta".to_string(), vec![8]),
                ("layer03.weight".to_string(), vec![8, 3]),
                ("layer03.bias".to_string(), vec![3]),
            ]
        );
    }

    #[test]
    fn build_is_deterministic_in_the_seed() {
        for kind in [ModelKind::Logreg, ModelKind::Mlp, ModelKind::TinyTransformer] {
            let a = AuditedModel::build(&spec(kind)).unwrap();
            let b = AuditedModel::build(&spec(kind)).unwrap();
            assert_eq!(a.params.fingerprint(), b.params.fingerprint());
            let mut other = spec(kind);
            other.seed += 1;
            let c = AuditedModel::build(&other).unwrap();
            assert_ne!(a.params.fingerprint(), c.params.fingerprint());
        }
    }

    #[test]
    fn predictions_are_probability_distributions() {
        for kind in [ModelKind::Logreg, ModelKind::Mlp, ModelKind::TinyTransformer] {
            let m = AuditedModel::build(&spec(kind)).unwrap();
            let probs = m.predict_probs(&[3, 4, 5, 0, 0, 0]).unwrap();
            assert_eq!(probs.len(), 3);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn penultimate_dimension_per_model_kind() {
        let dims = [
            (ModelKind::Logreg, 3),          // pre-softmax logits
            (ModelKind::Mlp, 10),            // hidden ReLU activation
            (ModelKind::TinyTransformer, 8), // pooled representation
        ];
        for (kind, d) in dims {
            let m = AuditedModel::build(&spec(kind)).unwrap();
            assert_eq!(m.penultimate(&[3, 4, 0, 0, 0, 0]).unwrap().len(), d);
        }
    }

    #[test]
    fn training_learns_a_separable_task() {
        for kind in [ModelKind::Logreg, ModelKind::Mlp] {
            let mut m = AuditedModel::build(&spec(kind)).unwrap();
            let train = separable_set(8, 3);
            let config = TrainConfig { epochs: 40, batch_size: 8, learning_rate: 0.05, seed: 1 };
            train_audited(&mut m, &train, &config).unwrap();
            let acc = evaluate_accuracy(&m, &train).unwrap();
            assert!(acc >= 0.95, "{kind:?}: accuracy {acc}");
            assert_eq!(m.train_history.len(), 40);
            let first = m.train_history.first().unwrap().mean_loss;
            let last = m.train_history.last().unwrap().mean_loss;
            assert!(last < first, "{kind:?}: loss {first} -> {last}");
        }
    }

    #[test]
    fn transformer_training_reduces_loss() {
        let mut m = AuditedModel::build(&spec(ModelKind::TinyTransformer)).unwrap();
        let train = separable_set(4, 3);
        let config = TrainConfig { epochs: 10, batch_size: 6, learning_rate: 0.02, seed: 2 };
        train_audited(&mut m, &train, &config).unwrap();
        let first = m.train_history.first().unwrap().mean_loss;
        let last = m.train_history.last().unwrap().mean_loss;
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut m = AuditedModel::build(&spec(ModelKind::Mlp)).unwrap();
            let train = separable_set(5, 3);
            let config = TrainConfig { epochs: 5, batch_size: 4, learning_rate: 0.01, seed: 3 };
            train_audited(&mut m, &train, &config).unwrap();
            m.params.fingerprint()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_config_validation() {
        let mut m = AuditedModel::build(&spec(ModelKind::Logreg)).unwrap();
        let train = separable_set(2, 3);
        let zero_epochs = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(
            train_audited(&mut m, &train, &zero_epochs),
            Err(ModelError::BadConfig(_))
        ));
        assert!(matches!(
            train_audited(&mut m, &[], &TrainConfig::default()),
            Err(ModelError::EmptyTrainSet)
        ));
        let bad_label = [sample("x", &[1], 3)];
        assert!(matches!(
            train_audited(&mut m, &bad_label, &TrainConfig::default()),
            Err(ModelError::LabelOutOfRange { label: 3, classes: 3, .. })
        ));
    }

    #[test]
    fn argmax_ties_resolve_to_the_lowest_class() {
        let mut m = AuditedModel::build(&spec(ModelKind::Logreg)).unwrap();
        for name in ["layer00.weight", "layer00.bias"] {
            m.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        // Uniform predictions: only label 0 counts as correct.
        let set =
            [sample("a", &[1, 2], 0), sample("b", &[1, 2], 1), sample("c", &[1, 2], 2)];
        let acc = evaluate_accuracy(&m, &set).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-15);
    }
}
