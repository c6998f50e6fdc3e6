//! gMINT: gradient-based membership inference auditing for text classifiers.
//!
//! The toolkit trains a small audited classifier on a text corpus, extracts
//! per-sample loss gradients (or penultimate-layer embeddings) from the frozen
//! model, and trains a MINT auditor network on those features to decide
//! whether a sample was part of the classifier's training set.
//!
//! Crate layout follows the pipeline order:
//! - [`autodiff`]: dense-tensor reverse-mode AD, Adam, parameter serialization
//! - [`text`]: corpus ingestion, tokenization, splitting, synthetic corpora
//! - [`models`]: the audited classifiers (logreg / MLP / tiny transformer)
//! - [`probe`]: per-sample gradient and embedding feature extraction
//! - [`auditor`]: the MINT auditor network
//! - [`eval`]: ROC/AUC metrics and the intra- / mixed-database protocols
//!
//! With the default `parallel` feature, per-sample work (batch gradients,
//! feature probing, matrix rows) is distributed with rayon. Results are
//! bit-identical to the sequential build: parallel units write disjoint
//! outputs and all reductions happen in a fixed sequential order.

pub mod auditor;
pub mod autodiff;
pub mod eval;
pub mod models;
pub mod probe;
pub mod seed;
pub mod text;

pub(crate) mod par;

/// Cap the rayon worker count (a no-op without the `parallel` feature, or if
/// the global pool is already running). Call once, before any parallel work.
pub fn set_jobs(jobs: usize) {
    #[cfg(feature = "parallel")]
    {
        if jobs > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
}
