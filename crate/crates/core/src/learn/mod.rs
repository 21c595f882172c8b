//! From-scratch learners: tf-idf vectorizer, logistic regression, an
//! embedding-average classifier, a cross-fitted stacked meta-classifier,
//! and a small random forest.

mod forest;
mod logreg;
pub mod persist;
mod stack;
mod tfidf;

pub use forest::{train_forest, ForestConfig, ForestModel};
pub use logreg::{
    log_loss, log_loss_gradient, predict_proba, train_logreg, LogRegConfig, LogisticModel,
};
pub use stack::{
    cross_fit_features, train_embed_classifier, train_stacked, EmbedLogReg, StackedModel,
    TextClassifier, TfidfLogReg,
};
pub use tfidf::{fit_tfidf, TfidfConfig, TfidfVectorizer};

use thiserror::Error;

/// Sparse feature vector: (index, value) pairs sorted by index.
pub type SparseVec = Vec<(usize, f64)>;

pub fn dense_to_sparse(dense: &[f64]) -> SparseVec {
    dense
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("need at least {need} examples, got {got}")]
    TooFewExamples { need: usize, got: usize },
    #[error("training data contains a single class; use a constant classifier instead")]
    SingleClass,
    #[error("feature index {index} out of range for dimension {dim}")]
    DimensionMismatch { index: usize, dim: usize },
    #[error("labels ({labels}) and examples ({examples}) differ in length")]
    LengthMismatch { labels: usize, examples: usize },
    #[error("{folds} folds exceed dataset size {size}")]
    TooManyFolds { folds: usize, size: usize },
    #[error("model not fitted")]
    NotFitted,
    #[error("bad model file {path}: {reason}")]
    BadModelFile { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Mean of the in-vocabulary token vectors; zero vector if none are known.
pub fn embed_features(model: &crate::lexvar::EmbeddingModel, doc: &[String]) -> Vec<f64> {
    let dim = model.dim();
    let mut sum = vec![0.0f64; dim];
    let mut count = 0usize;
    for token in doc {
        if let Some(v) = model.vector(token) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += *x as f64;
            }
            count += 1;
        }
    }
    if count > 0 {
        for s in &mut sum {
            *s /= count as f64;
        }
    }
    sum
}
