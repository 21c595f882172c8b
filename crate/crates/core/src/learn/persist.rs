//! Versioned binary persistence for trained weak-supervision models, plus a
//! human-readable summary export for audit.
//!
//! The stacked model's embedding vectors are not duplicated into the file;
//! the loader re-binds the separately persisted embedding model.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::forest::{ForestConfig, ForestModel, TreeNode};
use super::logreg::{LogRegConfig, LogisticModel};
use super::stack::{EmbedLogReg, StackedModel, TfidfLogReg};
use super::tfidf::{TfidfConfig, TfidfVectorizer};
use super::LearnError;
use crate::lexvar::EmbeddingModel;

const MAGIC: &[u8; 4] = b"CSWM";
const VERSION: u32 = 1;

/// A persisted weak-supervision model with its decision threshold.
pub enum WeakModel {
    Stacked { model: StackedModel, threshold: f64 },
    Forest {
        vectorizer: TfidfVectorizer,
        model: ForestModel,
    },
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LearnError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(LearnError::BadModelFile {
                path: self.path.clone(),
                reason: "truncated".to_string(),
            });
        }
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
    fn u8(&mut self) -> Result<u8, LearnError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, LearnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, LearnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, LearnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, LearnError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| LearnError::BadModelFile {
            path: self.path.clone(),
            reason: "bad utf8".to_string(),
        })
    }
}

fn write_tfidf(w: &mut Writer, v: &TfidfVectorizer) {
    w.u64(v.n_docs() as u64);
    w.u64(v.config().min_df as u64);
    w.u8(u8::from(v.config().l2_normalize));
    w.u32(v.dim() as u32);
    for (token, idf) in v.vocabulary().iter().zip(v.idf_values()) {
        w.str(token);
        w.f64(*idf);
    }
}

fn read_tfidf(r: &mut Reader<'_>) -> Result<TfidfVectorizer, LearnError> {
    let n_docs = r.u64()? as usize;
    let min_df = r.u64()? as usize;
    let l2_normalize = r.u8()? != 0;
    let dim = r.u32()? as usize;
    let mut vocabulary = Vec::with_capacity(dim);
    let mut idf = Vec::with_capacity(dim);
    for _ in 0..dim {
        vocabulary.push(r.str()?);
        idf.push(r.f64()?);
    }
    Ok(TfidfVectorizer::from_parts(
        vocabulary,
        idf,
        n_docs,
        TfidfConfig { min_df, l2_normalize },
    ))
}

fn write_logreg(w: &mut Writer, m: &LogisticModel) {
    w.u32(m.weights.len() as u32);
    for v in &m.weights {
        w.f64(*v);
    }
    w.f64(m.bias);
    w.f64(m.l2);
    w.f64(m.config.learning_rate);
    w.u32(m.config.epochs as u32);
    w.u32(m.config.batch_size as u32);
    w.u64(m.config.seed);
    w.f64(m.initial_loss);
    w.f64(m.final_loss);
}

fn read_logreg(r: &mut Reader<'_>) -> Result<LogisticModel, LearnError> {
    let dim = r.u32()? as usize;
    let mut weights = Vec::with_capacity(dim);
    for _ in 0..dim {
        weights.push(r.f64()?);
    }
    let bias = r.f64()?;
    let l2 = r.f64()?;
    let learning_rate = r.f64()?;
    let epochs = r.u32()? as usize;
    let batch_size = r.u32()? as usize;
    let seed = r.u64()?;
    let initial_loss = r.f64()?;
    let final_loss = r.f64()?;
    Ok(LogisticModel {
        weights,
        bias,
        l2,
        config: LogRegConfig {
            l2,
            learning_rate,
            epochs,
            batch_size,
            seed,
        },
        initial_loss,
        final_loss,
    })
}

fn write_tree(w: &mut Writer, node: &TreeNode) {
    match node {
        TreeNode::Leaf { dist } => {
            w.u8(0);
            w.f64(dist[0]);
            w.f64(dist[1]);
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            w.u8(1);
            w.u32(*feature as u32);
            w.f64(*threshold);
            write_tree(w, left);
            write_tree(w, right);
        }
    }
}

fn read_tree(r: &mut Reader<'_>) -> Result<TreeNode, LearnError> {
    match r.u8()? {
        0 => Ok(TreeNode::Leaf {
            dist: [r.f64()?, r.f64()?],
        }),
        1 => Ok(TreeNode::Split {
            feature: r.u32()? as usize,
            threshold: r.f64()?,
            left: Box::new(read_tree(r)?),
            right: Box::new(read_tree(r)?),
        }),
        tag => Err(LearnError::BadModelFile {
            path: r.path.clone(),
            reason: format!("unknown tree node tag {tag}"),
        }),
    }
}

fn write_forest(w: &mut Writer, m: &ForestModel) {
    w.u32(m.dim as u32);
    w.u32(m.config.n_trees as u32);
    w.u32(m.config.max_depth as u32);
    match m.config.features_per_split {
        Some(f) => {
            w.u8(1);
            w.u32(f as u32);
        }
        None => w.u8(0),
    }
    w.u64(m.config.seed);
    w.u32(m.trees.len() as u32);
    for tree in &m.trees {
        write_tree(w, tree);
    }
}

fn read_forest(r: &mut Reader<'_>) -> Result<ForestModel, LearnError> {
    let dim = r.u32()? as usize;
    let n_trees = r.u32()? as usize;
    let max_depth = r.u32()? as usize;
    let features_per_split = if r.u8()? == 1 {
        Some(r.u32()? as usize)
    } else {
        None
    };
    let seed = r.u64()?;
    let count = r.u32()? as usize;
    let mut trees = Vec::with_capacity(count);
    for _ in 0..count {
        trees.push(read_tree(r)?);
    }
    Ok(ForestModel {
        trees,
        dim,
        config: ForestConfig {
            n_trees,
            max_depth,
            features_per_split,
            seed,
        },
    })
}

pub fn save_weak_model(model: &WeakModel, path: &Path) -> Result<(), LearnError> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    match model {
        WeakModel::Stacked { model, threshold } => {
            w.u8(1);
            w.f64(*threshold);
            let (vectorizer, lr_a) = model
                .base_a
                .fitted
                .as_ref()
                .ok_or(LearnError::NotFitted)?;
            write_tfidf(&mut w, vectorizer);
            write_logreg(&mut w, lr_a);
            let lr_b = model.base_b.fitted.as_ref().ok_or(LearnError::NotFitted)?;
            write_logreg(&mut w, lr_b);
            write_logreg(&mut w, &model.meta);
            w.u32(model.folds as u32);
            w.u64(model.seed);
        }
        WeakModel::Forest { vectorizer, model } => {
            w.u8(2);
            w.f64(0.5);
            write_tfidf(&mut w, vectorizer);
            write_forest(&mut w, model);
        }
    }
    std::fs::write(path, w.buf).map_err(|e| LearnError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Loads a weak model; `embeddings` re-binds the stacked model's base B.
pub fn load_weak_model(
    path: &Path,
    embeddings: Option<Arc<EmbeddingModel>>,
) -> Result<WeakModel, LearnError> {
    let buf = std::fs::read(path).map_err(|e| LearnError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut r = Reader {
        buf: &buf,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4)? != MAGIC {
        return Err(LearnError::BadModelFile {
            path: r.path,
            reason: "bad magic".to_string(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(LearnError::BadModelFile {
            path: r.path,
            reason: format!("unsupported version {version}"),
        });
    }
    match r.u8()? {
        1 => {
            let threshold = r.f64()?;
            let vectorizer = read_tfidf(&mut r)?;
            let lr_a = read_logreg(&mut r)?;
            let lr_b = read_logreg(&mut r)?;
            let meta = read_logreg(&mut r)?;
            let folds = r.u32()? as usize;
            let seed = r.u64()?;
            let embeddings = embeddings.ok_or_else(|| LearnError::BadModelFile {
                path: path.display().to_string(),
                reason: "stacked model requires an embedding model".to_string(),
            })?;
            let base_a = TfidfLogReg {
                tfidf_config: vectorizer.config(),
                logreg_config: lr_a.config,
                fitted: Some((vectorizer, lr_a)),
            };
            let base_b = EmbedLogReg {
                embeddings,
                logreg_config: lr_b.config,
                fitted: Some(lr_b),
            };
            Ok(WeakModel::Stacked {
                model: StackedModel {
                    base_a,
                    base_b,
                    meta,
                    folds,
                    seed,
                },
                threshold,
            })
        }
        2 => {
            let _threshold = r.f64()?;
            let vectorizer = read_tfidf(&mut r)?;
            let model = read_forest(&mut r)?;
            Ok(WeakModel::Forest { vectorizer, model })
        }
        kind => Err(LearnError::BadModelFile {
            path: path.display().to_string(),
            reason: format!("unknown model kind {kind}"),
        }),
    }
}

/// Audit text: dimensions, hyperparameters, and the top-weighted vocabulary
/// tokens of the tf-idf base.
pub fn summarize(model: &WeakModel) -> String {
    let mut out = String::new();
    match model {
        WeakModel::Stacked { model, threshold } => {
            let (vectorizer, lr_a) = model.base_a.fitted.as_ref().expect("fitted");
            writeln!(out, "kind: stacked").unwrap();
            writeln!(out, "threshold: {threshold}").unwrap();
            writeln!(out, "folds: {}", model.folds).unwrap();
            writeln!(out, "tfidf vocabulary: {}", vectorizer.dim()).unwrap();
            writeln!(
                out,
                "base_a logreg: dim={} lr={} epochs={} l2={}",
                lr_a.dim(),
                lr_a.config.learning_rate,
                lr_a.config.epochs,
                lr_a.l2
            )
            .unwrap();
            if let Some(lr_b) = &model.base_b.fitted {
                writeln!(out, "base_b logreg: dim={}", lr_b.dim()).unwrap();
            }
            writeln!(out, "meta logreg: dim={}", model.meta.dim()).unwrap();
            let mut weighted: Vec<(usize, f64)> = lr_a
                .weights
                .iter()
                .enumerate()
                .map(|(i, w)| (i, *w))
                .collect();
            weighted.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap());
            writeln!(out, "top tokens:").unwrap();
            for (idx, weight) in weighted.into_iter().take(20) {
                writeln!(out, "  {}\t{weight:.6}", vectorizer.vocabulary()[idx]).unwrap();
            }
        }
        WeakModel::Forest { vectorizer, model } => {
            writeln!(out, "kind: forest").unwrap();
            writeln!(out, "trees: {}", model.trees.len()).unwrap();
            writeln!(out, "max_depth: {}", model.config.max_depth).unwrap();
            writeln!(out, "dim: {}", model.dim).unwrap();
            writeln!(out, "tfidf vocabulary: {}", vectorizer.dim()).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{dense_to_sparse, train_forest, train_logreg, SparseVec};
    use crate::learn::{fit_tfidf, TfidfConfig};

    #[test]
    fn forest_model_round_trips() {
        let docs: Vec<Vec<String>> = (0..10)
            .map(|i| vec![format!("tok{}", i % 3), "shared".to_string()])
            .collect();
        let vectorizer = fit_tfidf(
            &docs,
            TfidfConfig {
                min_df: 1,
                l2_normalize: true,
            },
        )
        .unwrap();
        let x: Vec<SparseVec> = docs.iter().map(|d| vectorizer.vectorize(d)).collect();
        let y: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
        let forest = train_forest(&x, &y, vectorizer.dim(), &Default::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_weak_model(
            &WeakModel::Forest {
                vectorizer,
                model: forest.clone(),
            },
            &path,
        )
        .unwrap();
        match load_weak_model(&path, None).unwrap() {
            WeakModel::Forest { model, vectorizer } => {
                assert_eq!(model, forest);
                assert_eq!(vectorizer.dim(), model.dim);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn logreg_encoding_is_exact() {
        let x = vec![dense_to_sparse(&[1.0]), dense_to_sparse(&[-1.0])];
        let y = vec![true, false];
        let lr = train_logreg(&x, &y, 1, &Default::default()).unwrap();
        let mut w = Writer::new();
        write_logreg(&mut w, &lr);
        let buf = w.buf;
        let mut r = Reader {
            buf: &buf,
            pos: 0,
            path: "mem".to_string(),
        };
        let back = read_logreg(&mut r).unwrap();
        assert_eq!(back, lr);
    }
}
