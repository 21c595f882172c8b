//! Spelling-variant expansion: word embeddings trained on an unlabeled
//! corpus, plus edit-distance filtering of nearest neighbors.

mod embedding;

pub use embedding::{train_embeddings, EmbeddingConfig, EmbeddingModel, LexvarError, TrainingMeta};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

/// Unit-cost insert/delete/substitute edit distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mapping from a terminology word to its accepted spelling variants.
///
/// Every variant is at edit distance exactly 1 from its source, and only
/// source words longer than three letters carry variants.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VariantLexicon {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl VariantLexicon {
    pub fn variants(&self, word: &str) -> Option<&BTreeSet<String>> {
        self.map.get(word)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &BTreeSet<String>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Writes `<source_word>\t<variant1>,<variant2>,...` lines.
    pub fn save(&self, path: &Path) -> Result<(), LexvarError> {
        let mut out = Vec::new();
        for (word, variants) in &self.map {
            let joined: Vec<&str> = variants.iter().map(|s| s.as_str()).collect();
            writeln!(out, "{word}\t{}", joined.join(",")).expect("vec write");
        }
        std::fs::write(path, out).map_err(|e| LexvarError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<VariantLexicon, LexvarError> {
        let text = std::fs::read_to_string(path).map_err(|e| LexvarError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, rest) = line.split_once('\t').ok_or(LexvarError::MalformedLine {
                path: path.display().to_string(),
                line: i + 1,
            })?;
            let variants: BTreeSet<String> = rest
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(str::to_string)
                .collect();
            map.insert(word.to_string(), variants);
        }
        Ok(VariantLexicon { map })
    }
}

/// Expands each terminology word into its misspelling variants: the top-`k`
/// embedding neighbors at edit distance exactly 1. Words of three letters or
/// fewer, and out-of-vocabulary words, get empty entries.
pub fn expand_variants(
    model: &EmbeddingModel,
    term_words: &[String],
    k: usize,
) -> VariantLexicon {
    let mut map = BTreeMap::new();
    for word in term_words {
        let mut variants = BTreeSet::new();
        if word.chars().count() > 3 {
            if let Some(neighbors) = model.nearest_neighbors(word, k) {
                for (neighbor, _) in neighbors {
                    if levenshtein(word, &neighbor) == 1 {
                        variants.insert(neighbor);
                    }
                }
            }
        }
        map.insert(word.clone(), variants);
    }
    VariantLexicon { map }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levenshtein_known_distances() {
        assert_eq!(levenshtein("creatinine", "creatinin"), 1);
        assert_eq!(levenshtein("etoh", "etoh"), 0);
        assert_eq!(levenshtein("alcohol", "alchool"), 2);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    /// Direct recursive statement of the edit-distance definition.
    fn lev_recursive(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((ca, ra)), Some((cb, rb))) => {
                let sub = lev_recursive(ra, rb) + usize::from(ca != cb);
                let del = lev_recursive(ra, b) + 1;
                let ins = lev_recursive(a, rb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn levenshtein_matches_recursive_oracle_small() {
        let alphabet = ['a', 'b', 'c'];
        let mut words: Vec<String> = vec![String::new()];
        for _ in 0..4 {
            let mut next: Vec<String> = Vec::new();
            for w in &words {
                for c in alphabet {
                    let mut s = w.clone();
                    s.push(c);
                    next.push(s);
                }
            }
            words.extend(next.into_iter().filter(|w| w.len() <= 4));
        }
        words.sort();
        words.dedup();
        for a in &words {
            let ca: Vec<char> = a.chars().collect();
            for b in &words {
                let cb: Vec<char> = b.chars().collect();
                assert_eq!(
                    levenshtein(a, b),
                    lev_recursive(&ca, &cb),
                    "mismatch on ({a:?}, {b:?})"
                );
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn levenshtein_is_a_metric(
            a in "[a-c]{0,6}",
            b in "[a-c]{0,6}",
            c in "[a-c]{0,6}",
        ) {
            let dab = levenshtein(&a, &b);
            let dba = levenshtein(&b, &a);
            proptest::prop_assert_eq!(dab, dba);
            proptest::prop_assert_eq!(dab == 0, a == b);
            let dac = levenshtein(&a, &c);
            let dcb = levenshtein(&c, &b);
            proptest::prop_assert!(dab <= dac + dcb);
        }
    }

    #[test]
    fn variant_lexicon_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("variants.tsv");
        let mut map = BTreeMap::new();
        map.insert(
            "metformin".to_string(),
            ["metfornin".to_string(), "metformim".to_string()]
                .into_iter()
                .collect(),
        );
        map.insert("aspirin".to_string(), BTreeSet::new());
        let lexicon = VariantLexicon { map };
        lexicon.save(&path).unwrap();
        let loaded = VariantLexicon::load(&path).unwrap();
        assert_eq!(loaded, lexicon);
    }
}
