//! Stacking: a meta logistic regression over the out-of-fold probabilities
//! of the two base classifiers (tf-idf LR and embedding-average LR).

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::logreg::{train_logreg, LogRegConfig, LogisticModel};
use super::tfidf::{fit_tfidf, TfidfConfig, TfidfVectorizer};
use super::{dense_to_sparse, embed_features, LearnError, SparseVec};
use crate::lexvar::EmbeddingModel;

/// A classifier over tokenized patient text.
pub trait TextClassifier {
    fn fit(&mut self, docs: &[Vec<String>], y: &[bool]) -> Result<(), LearnError>;
    fn predict_proba(&self, doc: &[String]) -> Result<f64, LearnError>;
    fn reset(&self) -> Box<dyn TextClassifier>;
}

/// tf-idf features into a logistic regression.
#[derive(Debug, Clone)]
pub struct TfidfLogReg {
    pub tfidf_config: TfidfConfig,
    pub logreg_config: LogRegConfig,
    pub fitted: Option<(TfidfVectorizer, LogisticModel)>,
}

impl TfidfLogReg {
    pub fn new(tfidf_config: TfidfConfig, logreg_config: LogRegConfig) -> TfidfLogReg {
        TfidfLogReg {
            tfidf_config,
            logreg_config,
            fitted: None,
        }
    }
}

impl TextClassifier for TfidfLogReg {
    fn fit(&mut self, docs: &[Vec<String>], y: &[bool]) -> Result<(), LearnError> {
        let vectorizer = fit_tfidf(docs, self.tfidf_config)?;
        let x: Vec<SparseVec> = docs.iter().map(|d| vectorizer.vectorize(d)).collect();
        let model = train_logreg(&x, y, vectorizer.dim(), &self.logreg_config)?;
        self.fitted = Some((vectorizer, model));
        Ok(())
    }

    fn predict_proba(&self, doc: &[String]) -> Result<f64, LearnError> {
        let (vectorizer, model) = self.fitted.as_ref().ok_or(LearnError::NotFitted)?;
        model.predict_proba(&vectorizer.vectorize(doc))
    }

    fn reset(&self) -> Box<dyn TextClassifier> {
        Box::new(TfidfLogReg::new(self.tfidf_config, self.logreg_config))
    }
}

/// Mean pre-trained word vectors into a logistic regression.
#[derive(Clone)]
pub struct EmbedLogReg {
    pub embeddings: Arc<EmbeddingModel>,
    pub logreg_config: LogRegConfig,
    pub fitted: Option<LogisticModel>,
}

impl EmbedLogReg {
    pub fn new(embeddings: Arc<EmbeddingModel>, logreg_config: LogRegConfig) -> EmbedLogReg {
        EmbedLogReg {
            embeddings,
            logreg_config,
            fitted: None,
        }
    }
}

impl TextClassifier for EmbedLogReg {
    fn fit(&mut self, docs: &[Vec<String>], y: &[bool]) -> Result<(), LearnError> {
        let x: Vec<SparseVec> = docs
            .iter()
            .map(|d| dense_to_sparse(&embed_features(&self.embeddings, d)))
            .collect();
        let model = train_logreg(&x, y, self.embeddings.dim(), &self.logreg_config)?;
        self.fitted = Some(model);
        Ok(())
    }

    fn predict_proba(&self, doc: &[String]) -> Result<f64, LearnError> {
        let model = self.fitted.as_ref().ok_or(LearnError::NotFitted)?;
        model.predict_proba(&dense_to_sparse(&embed_features(&self.embeddings, doc)))
    }

    fn reset(&self) -> Box<dyn TextClassifier> {
        Box::new(EmbedLogReg::new(self.embeddings.clone(), self.logreg_config))
    }
}

/// Convenience wrapper: trains the embedding-average classifier alone.
pub fn train_embed_classifier(
    embeddings: Arc<EmbeddingModel>,
    docs: &[Vec<String>],
    y: &[bool],
    logreg_config: LogRegConfig,
) -> Result<EmbedLogReg, LearnError> {
    let mut clf = EmbedLogReg::new(embeddings, logreg_config);
    clf.fit(docs, y)?;
    Ok(clf)
}

pub struct StackedModel {
    pub base_a: TfidfLogReg,
    pub base_b: EmbedLogReg,
    pub meta: LogisticModel,
    pub folds: usize,
    pub seed: u64,
}

impl StackedModel {
    pub fn predict_proba(&self, doc: &[String]) -> Result<f64, LearnError> {
        let pa = self.base_a.predict_proba(doc)?;
        let pb = self.base_b.predict_proba(doc)?;
        self.meta.predict_proba(&vec![(0, pa), (1, pb)])
    }
}

/// Deterministic fold assignment: a seeded shuffle chunked into `folds`
/// nearly equal parts.
fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (rank, &idx) in order.iter().enumerate() {
        assignment[idx] = rank % folds;
    }
    assignment
}

/// Out-of-fold base probabilities: for each example, both base classifiers
/// are trained without its fold and then applied to it. These are the meta
/// features, so the meta learner never sees in-fold leakage.
pub fn cross_fit_features(
    base_a: &TfidfLogReg,
    base_b: &EmbedLogReg,
    docs: &[Vec<String>],
    y: &[bool],
    folds: usize,
    seed: u64,
) -> Result<Vec<[f64; 2]>, LearnError> {
    if folds < 2 || folds > docs.len() {
        return Err(LearnError::TooManyFolds {
            folds,
            size: docs.len(),
        });
    }
    let assignment = fold_assignment(docs.len(), folds, seed);
    let mut features = vec![[0.0f64; 2]; docs.len()];
    for fold in 0..folds {
        let train_idx: Vec<usize> = (0..docs.len()).filter(|&i| assignment[i] != fold).collect();
        let test_idx: Vec<usize> = (0..docs.len()).filter(|&i| assignment[i] == fold).collect();
        if test_idx.is_empty() {
            continue;
        }
        let train_docs: Vec<Vec<String>> = train_idx.iter().map(|&i| docs[i].clone()).collect();
        let train_y: Vec<bool> = train_idx.iter().map(|&i| y[i]).collect();
        let mut fold_a = TfidfLogReg::new(base_a.tfidf_config, base_a.logreg_config);
        fold_a.fit(&train_docs, &train_y)?;
        let mut fold_b = EmbedLogReg::new(base_b.embeddings.clone(), base_b.logreg_config);
        fold_b.fit(&train_docs, &train_y)?;
        for &i in &test_idx {
            features[i] = [fold_a.predict_proba(&docs[i])?, fold_b.predict_proba(&docs[i])?];
        }
    }
    Ok(features)
}

/// Trains the stack: cross-fitted meta features, meta logistic regression,
/// then base models refit on the full data for inference.
pub fn train_stacked(
    mut base_a: TfidfLogReg,
    mut base_b: EmbedLogReg,
    docs: &[Vec<String>],
    y: &[bool],
    folds: usize,
    seed: u64,
    meta_config: LogRegConfig,
) -> Result<StackedModel, LearnError> {
    let features = cross_fit_features(&base_a, &base_b, docs, y, folds, seed)?;
    let meta_x: Vec<SparseVec> = features
        .iter()
        .map(|f| vec![(0usize, f[0]), (1usize, f[1])])
        .collect();
    let meta = train_logreg(&meta_x, y, 2, &meta_config)?;
    base_a.fit(docs, y)?;
    base_b.fit(docs, y)?;
    Ok(StackedModel {
        base_a,
        base_b,
        meta,
        folds,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexvar::{train_embeddings, EmbeddingConfig};
    use rand::Rng;

    fn toy_embeddings() -> Arc<EmbeddingModel> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vocab = [
            "liver", "detox", "withdrawal", "sober", "stable", "walk", "diet", "clinic",
        ];
        let mut tokens = Vec::new();
        for _ in 0..400 {
            for _ in 0..3 {
                tokens.push(vocab[rng.gen_range(0..vocab.len())].to_string());
            }
        }
        let config = EmbeddingConfig {
            dim: 12,
            window: 2,
            negatives: 2,
            epochs: 2,
            min_count: 2,
            learning_rate: 0.05,
            min_tokens: 100,
            seed: 3,
        };
        Arc::new(train_embeddings(&tokens, &config).unwrap())
    }

    fn labeled_corpus(n: usize, seed: u64) -> (Vec<Vec<String>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos_words = ["liver", "detox", "withdrawal"];
        let neg_words = ["sober", "stable", "walk"];
        let shared = ["diet", "clinic"];
        let mut docs = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let positive = i % 2 == 0;
            let pool: Vec<&str> = if positive {
                pos_words.iter().chain(shared.iter()).copied().collect()
            } else {
                neg_words.iter().chain(shared.iter()).copied().collect()
            };
            let doc: Vec<String> = (0..10)
                .map(|_| pool[rng.gen_range(0..pool.len())].to_string())
                .collect();
            docs.push(doc);
            y.push(positive);
        }
        (docs, y)
    }

    fn bases() -> (TfidfLogReg, EmbedLogReg) {
        let tfidf = TfidfLogReg::new(
            TfidfConfig {
                min_df: 1,
                l2_normalize: true,
            },
            LogRegConfig::default(),
        );
        let embed = EmbedLogReg::new(toy_embeddings(), LogRegConfig::default());
        (tfidf, embed)
    }

    #[test]
    fn stacked_tracks_good_base() {
        let (docs, y) = labeled_corpus(60, 11);
        let (base_a, base_b) = bases();
        let model =
            train_stacked(base_a, base_b, &docs, &y, 5, 7, LogRegConfig::default()).unwrap();
        let (test_docs, test_y) = labeled_corpus(40, 99);
        let correct = test_docs
            .iter()
            .zip(&test_y)
            .filter(|(d, &label)| (model.predict_proba(d).unwrap() > 0.5) == label)
            .count();
        let accuracy = correct as f64 / test_y.len() as f64;
        assert!(accuracy >= 0.9, "stacked accuracy {accuracy}");
    }

    #[test]
    fn meta_has_two_inputs() {
        let (docs, y) = labeled_corpus(30, 2);
        let (base_a, base_b) = bases();
        let model =
            train_stacked(base_a, base_b, &docs, &y, 3, 1, LogRegConfig::default()).unwrap();
        assert_eq!(model.meta.dim(), 2);
    }

    #[test]
    fn folds_exceeding_dataset_error() {
        let (docs, y) = labeled_corpus(4, 3);
        let (base_a, base_b) = bases();
        assert!(matches!(
            train_stacked(base_a, base_b, &docs, &y, 10, 1, LogRegConfig::default()),
            Err(LearnError::TooManyFolds { .. })
        ));
    }

    #[test]
    fn out_of_fold_poisoning_check() {
        // Shuffling labels inside one fold must change only that fold's
        // meta features.
        let (docs, y) = labeled_corpus(40, 8);
        let (base_a, base_b) = bases();
        let folds = 4;
        let seed = 13;
        let clean = cross_fit_features(&base_a, &base_b, &docs, &y, folds, seed).unwrap();

        let assignment = fold_assignment(docs.len(), folds, seed);
        let poisoned_fold = 0usize;
        let mut poisoned_y = y.clone();
        for i in 0..docs.len() {
            if assignment[i] == poisoned_fold {
                poisoned_y[i] = !poisoned_y[i];
            }
        }
        let poisoned =
            cross_fit_features(&base_a, &base_b, &docs, &poisoned_y, folds, seed).unwrap();
        for i in 0..docs.len() {
            if assignment[i] == poisoned_fold {
                assert_eq!(
                    clean[i], poisoned[i],
                    "fold {poisoned_fold} features must not depend on its own labels"
                );
            }
        }
        // And some other fold's features must have moved.
        let moved = (0..docs.len())
            .any(|i| assignment[i] != poisoned_fold && clean[i] != poisoned[i]);
        assert!(moved);
    }

    #[test]
    fn embed_classifier_oov_falls_back_to_bias() {
        let (docs, y) = labeled_corpus(30, 5);
        let clf = train_embed_classifier(toy_embeddings(), &docs, &y, LogRegConfig::default())
            .unwrap();
        let oov = vec!["zzz".to_string(), "qqq".to_string()];
        let p = clf.predict_proba(&oov).unwrap();
        let bias_only = 1.0 / (1.0 + (-clf.fitted.as_ref().unwrap().bias).exp());
        assert!((p - bias_only).abs() < 1e-12);
        // Determinism on duplicates.
        assert_eq!(
            clf.predict_proba(&docs[0]).unwrap(),
            clf.predict_proba(&docs[0].clone()).unwrap()
        );
    }
}
