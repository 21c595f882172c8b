//! Sublinear tf, smoothed idf, optional L2 normalization:
//! weight = (1 + ln tf) * (ln((1+N)/(1+df)) + 1).

use std::collections::HashMap;

use super::{LearnError, SparseVec};

#[derive(Debug, Clone, Copy)]
pub struct TfidfConfig {
    pub min_df: usize,
    pub l2_normalize: bool,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        TfidfConfig {
            min_df: 2,
            l2_normalize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TfidfVectorizer {
    /// Ordered by (df desc, token asc).
    vocabulary: Vec<String>,
    index: HashMap<String, usize>,
    idf: Vec<f64>,
    n_docs: usize,
    config: TfidfConfig,
}

impl TfidfVectorizer {
    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.index.get(token).map(|&i| self.idf[i])
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn config(&self) -> TfidfConfig {
        self.config
    }

    /// Sparse tf-idf vector for a tokenized document; out-of-vocabulary
    /// tokens are ignored.
    pub fn vectorize(&self, doc: &[String]) -> SparseVec {
        let mut tf: HashMap<usize, usize> = HashMap::new();
        for token in doc {
            if let Some(&idx) = self.index.get(token) {
                *tf.entry(idx).or_insert(0) += 1;
            }
        }
        let mut entries: SparseVec = tf
            .into_iter()
            .map(|(idx, count)| (idx, (1.0 + (count as f64).ln()) * self.idf[idx]))
            .collect();
        entries.sort_by_key(|&(idx, _)| idx);
        if self.config.l2_normalize {
            let norm: f64 = entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (_, v) in &mut entries {
                    *v /= norm;
                }
            }
        }
        entries
    }

    pub(crate) fn from_parts(
        vocabulary: Vec<String>,
        idf: Vec<f64>,
        n_docs: usize,
        config: TfidfConfig,
    ) -> TfidfVectorizer {
        let index = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TfidfVectorizer {
            vocabulary,
            index,
            idf,
            n_docs,
            config,
        }
    }

    pub(crate) fn idf_values(&self) -> &[f64] {
        &self.idf
    }
}

/// Fits the vocabulary and idf table on tokenized documents.
pub fn fit_tfidf(docs: &[Vec<String>], config: TfidfConfig) -> Result<TfidfVectorizer, LearnError> {
    if docs.is_empty() {
        return Err(LearnError::EmptyCorpus);
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        let mut seen: Vec<&str> = doc.iter().map(|s| s.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        for token in seen {
            *df.entry(token).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = df
        .into_iter()
        .filter(|&(_, c)| c >= config.min_df)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let n = docs.len();
    let vocabulary: Vec<String> = kept.iter().map(|&(t, _)| t.to_string()).collect();
    let idf: Vec<f64> = kept
        .iter()
        .map(|&(_, df)| ((1.0 + n as f64) / (1.0 + df as f64)).ln() + 1.0)
        .collect();
    Ok(TfidfVectorizer::from_parts(vocabulary, idf, n, config))
}
