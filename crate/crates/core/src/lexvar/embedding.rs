//! Skip-gram with negative sampling, trained sequentially for determinism.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LexvarError {
    #[error("corpus has {got} tokens, below the configured minimum {min}")]
    CorpusTooSmall { got: usize, min: usize },
    #[error("embedding dimension must be >= 8, got {0}")]
    DimensionTooSmall(usize),
    #[error("vocabulary is empty after min-count filtering")]
    EmptyVocabulary,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed line {line} in {path}")]
    MalformedLine { path: String, line: usize },
    #[error("bad model file {path}: {reason}")]
    BadModelFile { path: String, reason: String },
}

#[derive(Debug, Clone)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: usize,
    pub learning_rate: f32,
    /// Corpora below this size are rejected as too small to be meaningful.
    pub min_tokens: usize,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            min_count: 5,
            learning_rate: 0.025,
            min_tokens: 10_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: usize,
    pub seed: u64,
    /// Mean negative-sampling loss per epoch, in training order.
    pub epoch_losses: Vec<f64>,
}

/// Trained word vectors with a word -> index lookup.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    words: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major |V| x dim input vectors.
    vectors: Vec<f32>,
    dim: usize,
    pub meta: TrainingMeta,
}

impl EmbeddingModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.index
            .get(word)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Top-`k` cosine neighbors, descending, ties broken by vocabulary index.
    /// Returns `None` for out-of-vocabulary queries.
    pub fn nearest_neighbors(&self, word: &str, k: usize) -> Option<Vec<(String, f32)>> {
        let &query = self.index.get(word)?;
        let qv = self.row(query);
        let qnorm = norm(qv);
        let mut scored: Vec<(usize, f32)> = (0..self.words.len())
            .filter(|&i| i != query)
            .map(|i| {
                let v = self.row(i);
                let denom = qnorm * norm(v);
                let cos = if denom > 0.0 { dot(qv, v) / denom } else { 0.0 };
                (i, cos)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Some(
            scored
                .into_iter()
                .map(|(i, cos)| (self.words[i].clone(), cos))
                .collect(),
        )
    }

    /// Binary layout: magic, version, dim, |V|, word table, f32 vectors, meta.
    pub fn save(&self, path: &Path) -> Result<(), LexvarError> {
        let io_err = |e| LexvarError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"EMBD");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.words.len() as u32).to_le_bytes());
        for word in &self.words {
            let bytes = word.as_bytes();
            buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
            buf.extend_from_slice(bytes);
        }
        for v in &self.vectors {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(self.meta.window as u32).to_le_bytes());
        buf.extend_from_slice(&(self.meta.negatives as u32).to_le_bytes());
        buf.extend_from_slice(&(self.meta.epochs as u32).to_le_bytes());
        buf.extend_from_slice(&(self.meta.min_count as u32).to_le_bytes());
        buf.extend_from_slice(&self.meta.seed.to_le_bytes());
        buf.extend_from_slice(&(self.meta.epoch_losses.len() as u32).to_le_bytes());
        for loss in &self.meta.epoch_losses {
            buf.extend_from_slice(&loss.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<EmbeddingModel, LexvarError> {
        let bad = |reason: &str| LexvarError::BadModelFile {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        let mut file = std::fs::File::open(path).map_err(|e| LexvarError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(|e| LexvarError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8], LexvarError> {
            let end = *cursor + n;
            if end > buf.len() {
                return Err(bad("truncated"));
            }
            let slice = &buf[*cursor..end];
            *cursor = end;
            Ok(slice)
        };
        if take(&mut cursor, 4)? != b"EMBD" {
            return Err(bad("bad magic"));
        }
        let read_u32 = |cursor: &mut usize| -> Result<u32, LexvarError> {
            Ok(u32::from_le_bytes(take(cursor, 4)?.try_into().unwrap()))
        };
        let version = read_u32(&mut cursor)?;
        if version != 1 {
            return Err(bad("unsupported version"));
        }
        let dim = read_u32(&mut cursor)? as usize;
        let vocab = read_u32(&mut cursor)? as usize;
        let mut words = Vec::with_capacity(vocab);
        for _ in 0..vocab {
            let len = read_u32(&mut cursor)? as usize;
            let bytes = take(&mut cursor, len)?;
            words.push(String::from_utf8(bytes.to_vec()).map_err(|_| bad("bad utf8"))?);
        }
        let mut vectors = Vec::with_capacity(vocab * dim);
        for _ in 0..vocab * dim {
            vectors.push(f32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()));
        }
        let window = read_u32(&mut cursor)? as usize;
        let negatives = read_u32(&mut cursor)? as usize;
        let epochs = read_u32(&mut cursor)? as usize;
        let min_count = read_u32(&mut cursor)? as usize;
        let seed = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
        let n_losses = read_u32(&mut cursor)? as usize;
        let mut epoch_losses = Vec::with_capacity(n_losses);
        for _ in 0..n_losses {
            epoch_losses.push(f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()));
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(EmbeddingModel {
            words,
            index,
            vectors,
            dim,
            meta: TrainingMeta {
                window,
                negatives,
                epochs,
                min_count,
                seed,
                epoch_losses,
            },
        })
    }

    /// Text export, one `<word> <v1> ... <vd>` line per vocabulary word.
    pub fn export_text(&self, path: &Path) -> Result<(), LexvarError> {
        let mut out = Vec::new();
        for (i, word) in self.words.iter().enumerate() {
            write!(out, "{word}").expect("vec write");
            for v in self.row(i) {
                write!(out, " {v}").expect("vec write");
            }
            writeln!(out).expect("vec write");
        }
        std::fs::write(path, out).map_err(|e| LexvarError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f32]) -> f32 {
    dot(a, a).sqrt()
}

/// Trains skip-gram vectors with negative sampling. Deterministic given the
/// seed: vocabulary order, window draws, and negative draws are all fixed.
pub fn train_embeddings(
    tokens: &[String],
    config: &EmbeddingConfig,
) -> Result<EmbeddingModel, LexvarError> {
    if tokens.len() < config.min_tokens {
        return Err(LexvarError::CorpusTooSmall {
            got: tokens.len(),
            min: config.min_tokens,
        });
    }
    if config.dim < 8 {
        return Err(LexvarError::DimensionTooSmall(config.dim));
    }

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut vocab: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= config.min_count)
        .collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if vocab.is_empty() {
        return Err(LexvarError::EmptyVocabulary);
    }
    let words: Vec<String> = vocab.iter().map(|&(w, _)| w.to_string()).collect();
    let index: HashMap<String, usize> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();

    // Corpus as vocabulary ids, out-of-vocabulary tokens dropped.
    let ids: Vec<usize> = tokens.iter().filter_map(|t| index.get(t.as_str()).copied()).collect();

    // Negative-sampling distribution: count^0.75, sampled by binary search
    // over the cumulative table.
    let mut cumulative: Vec<f64> = Vec::with_capacity(vocab.len());
    let mut acc = 0.0f64;
    for &(_, c) in &vocab {
        acc += (c as f64).powf(0.75);
        cumulative.push(acc);
    }
    let total_mass = acc;

    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut input: Vec<f32> = (0..words.len() * dim)
        .map(|_| (rng.gen::<f32>() - 0.5) / dim as f32)
        .collect();
    let mut output: Vec<f32> = vec![0.0; words.len() * dim];

    let total_pairs_hint = (ids.len().max(1) * config.epochs) as f64;
    let mut processed = 0f64;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut grad = vec![0.0f32; dim];

    for _epoch in 0..config.epochs {
        let mut loss_sum = 0.0f64;
        let mut loss_count = 0usize;
        for (pos, &center) in ids.iter().enumerate() {
            let lr = config.learning_rate
                * (1.0 - (processed / total_pairs_hint) as f32).max(1e-4);
            processed += 1.0;
            let reach = rng.gen_range(1..=config.window);
            let lo = pos.saturating_sub(reach);
            let hi = (pos + reach).min(ids.len() - 1);
            for ctx_pos in lo..=hi {
                if ctx_pos == pos {
                    continue;
                }
                let context = ids[ctx_pos];
                grad.iter_mut().for_each(|g| *g = 0.0);
                let center_row = center * dim;
                for sample in 0..=config.negatives {
                    let (target, label) = if sample == 0 {
                        (context, 1.0f32)
                    } else {
                        let draw = rng.gen::<f64>() * total_mass;
                        let idx = cumulative.partition_point(|&c| c < draw).min(words.len() - 1);
                        if idx == context {
                            continue;
                        }
                        (idx, 0.0f32)
                    };
                    let target_row = target * dim;
                    let z = dot(
                        &input[center_row..center_row + dim],
                        &output[target_row..target_row + dim],
                    );
                    let p = sigmoid(z);
                    if label > 0.5 {
                        loss_sum += -ln_clamped(p);
                    } else {
                        loss_sum += -ln_clamped(1.0 - p);
                    }
                    loss_count += 1;
                    let g = (label - p) * lr;
                    for d in 0..dim {
                        grad[d] += g * output[target_row + d];
                        output[target_row + d] += g * input[center_row + d];
                    }
                }
                for d in 0..dim {
                    input[center_row + d] += grad[d];
                }
            }
        }
        epoch_losses.push(if loss_count > 0 {
            loss_sum / loss_count as f64
        } else {
            0.0
        });
    }

    Ok(EmbeddingModel {
        words,
        index,
        vectors: input,
        dim,
        meta: TrainingMeta {
            window: config.window,
            negatives: config.negatives,
            epochs: config.epochs,
            min_count: config.min_count,
            seed: config.seed,
            epoch_losses,
        },
    })
}

fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn ln_clamped(p: f32) -> f64 {
    (p.max(1e-7) as f64).ln()
}
