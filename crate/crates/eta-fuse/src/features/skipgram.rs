//! Skip-gram with negative sampling over link-id sequences.
//!
//! Trips are treated as sentences of link tokens. For every center/context
//! pair inside the window the model maximizes `log sigmoid(u.v)` plus
//! `log sigmoid(-u.v')` over sampled negatives, with negatives drawn from
//! the unigram distribution raised to 0.75. Training is single-threaded and
//! fully determined by the seed; the returned table holds the input-side
//! vectors. Unknown links map to the zero vector.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 16,
            window: 2,
            negatives: 3,
            epochs: 2,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "TableRepr", into = "TableRepr")]
pub struct LinkEmbeddingTable {
    dim: usize,
    /// Sorted by link id for deterministic serialization.
    entries: Vec<(u64, Vec<f64>)>,
    lookup: HashMap<u64, usize>,
    zero: Vec<f64>,
}

/// Wire form: just the dimension and the sorted vectors; the lookup table
/// is rebuilt on the way in.
#[derive(Serialize, Deserialize)]
struct TableRepr {
    dim: usize,
    entries: Vec<(u64, Vec<f64>)>,
}

impl From<TableRepr> for LinkEmbeddingTable {
    fn from(repr: TableRepr) -> Self {
        LinkEmbeddingTable::from_entries(repr.dim, repr.entries)
    }
}

impl From<LinkEmbeddingTable> for TableRepr {
    fn from(table: LinkEmbeddingTable) -> Self {
        TableRepr {
            dim: table.dim,
            entries: table.entries,
        }
    }
}

impl LinkEmbeddingTable {
    /// Builds a table from explicit vectors (entries are sorted by id).
    pub fn from_entries(dim: usize, mut entries: Vec<(u64, Vec<f64>)>) -> Self {
        assert!(entries.iter().all(|(_, v)| v.len() == dim));
        entries.sort_unstable_by_key(|(id, _)| *id);
        let mut table = LinkEmbeddingTable {
            dim,
            entries,
            lookup: HashMap::new(),
            zero: Vec::new(),
        };
        table.rebuild_lookup();
        table
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The trained vector, or the all-zero out-of-vocabulary vector.
    pub fn vector(&self, link_id: u64) -> &[f64] {
        match self.lookup.get(&link_id) {
            Some(&i) => &self.entries[i].1,
            None => &self.zero,
        }
    }

    pub fn contains(&self, link_id: u64) -> bool {
        self.lookup.contains_key(&link_id)
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, (id, _))| (*id, i))
            .collect();
        self.zero = vec![0.0; self.dim];
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn train_skipgram(
    corpus: &[Vec<u64>],
    config: &SkipGramConfig,
) -> Result<LinkEmbeddingTable, FeatureError> {
    assert!(config.dim >= 2, "embedding dim must be >= 2");
    assert!(config.window >= 1, "window must be >= 1");
    assert!(config.negatives >= 1, "negatives must be >= 1");

    let mut counts: HashMap<u64, u64> = HashMap::new();
    for seq in corpus {
        for &id in seq {
            *counts.entry(id).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut vocab: Vec<u64> = counts.keys().copied().collect();
    vocab.sort_unstable();
    let index: HashMap<u64, usize> = vocab.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let v = vocab.len();
    let dim = config.dim;

    // negative-sampling distribution: unigram ^ 0.75, as a cumulative table
    let mut cumulative = Vec::with_capacity(v);
    let mut acc = 0.0;
    for &id in &vocab {
        acc += (counts[&id] as f64).powf(0.75);
        cumulative.push(acc);
    }
    let total = acc;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "skipgram"));
    let span = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..v * dim)
        .map(|_| rng.random::<f64>() * 2.0 * span - span)
        .collect();
    let mut output = vec![0.0; v * dim];

    let sample_negative = |rng: &mut ChaCha8Rng| -> usize {
        let x = rng.random::<f64>() * total;
        cumulative.partition_point(|&c| c < x).min(v - 1)
    };

    let lr = config.learning_rate;
    let mut u_grad = vec![0.0; dim];
    for _epoch in 0..config.epochs {
        for seq in corpus {
            let tokens: Vec<usize> = seq.iter().map(|id| index[id]).collect();
            for (i, &center) in tokens.iter().enumerate() {
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window).min(tokens.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let context = tokens[j];
                    u_grad.iter_mut().for_each(|g| *g = 0.0);
                    // positive target plus sampled negatives
                    for t in 0..=config.negatives {
                        let (target, label) = if t == 0 {
                            (context, 1.0)
                        } else {
                            (sample_negative(&mut rng), 0.0)
                        };
                        let u = &input[center * dim..(center + 1) * dim];
                        let w = &output[target * dim..(target + 1) * dim];
                        let dot: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
                        let g = (sigmoid(dot) - label) * lr;
                        for k in 0..dim {
                            u_grad[k] += g * w[k];
                        }
                        let u_snapshot: Vec<f64> = u.to_vec();
                        let w = &mut output[target * dim..(target + 1) * dim];
                        for k in 0..dim {
                            w[k] -= g * u_snapshot[k];
                        }
                    }
                    let u = &mut input[center * dim..(center + 1) * dim];
                    for k in 0..dim {
                        u[k] -= u_grad[k];
                    }
                }
            }
        }
    }

    let entries: Vec<(u64, Vec<f64>)> = vocab
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, input[i * dim..(i + 1) * dim].to_vec()))
        .collect();
    let mut table = LinkEmbeddingTable {
        dim,
        entries,
        lookup: HashMap::new(),
        zero: Vec::new(),
    };
    table.rebuild_lookup();
    Ok(table)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SkipGramConfig {
        SkipGramConfig {
            dim: 8,
            window: 1,
            negatives: 2,
            epochs: 12,
            learning_rate: 0.05,
            seed: 3,
        }
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(matches!(
            train_skipgram(&[], &cfg()),
            Err(FeatureError::EmptyCorpus)
        ));
        assert!(matches!(
            train_skipgram(&[vec![]], &cfg()),
            Err(FeatureError::EmptyCorpus)
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus: Vec<Vec<u64>> = (0..20)
            .map(|i| vec![i % 5, (i + 1) % 5, (i + 2) % 5])
            .collect();
        let a = train_skipgram(&corpus, &cfg()).unwrap();
        let b = train_skipgram(&corpus, &cfg()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn co_occurring_links_end_up_closer() {
        // one long sequence of the repeated pair (1, 2): with window 2 the
        // two links share contexts, unlike 3 which only ever travels with 4
        let pair_seq: Vec<u64> = (0..120).map(|i| 1 + i % 2).collect();
        let other_seq: Vec<u64> = (0..120).map(|i| 3 + i % 2).collect();
        let corpus = vec![pair_seq, other_seq];
        let config = SkipGramConfig { window: 2, ..cfg() };
        let table = train_skipgram(&corpus, &config).unwrap();
        let ab = cosine(table.vector(1), table.vector(2));
        let ac = cosine(table.vector(1), table.vector(3));
        assert!(ab > ac, "cosine(1,2)={ab} should beat cosine(1,3)={ac}");
    }

    #[test]
    fn deserialized_table_still_resolves_vectors() {
        let corpus = vec![vec![10u64, 20, 10, 20]];
        let table = train_skipgram(&corpus, &cfg()).unwrap();
        let json = serde_json::to_string(&table).unwrap();
        let back: LinkEmbeddingTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back.vector(10), table.vector(10));
        assert_eq!(back.vector(999).len(), table.dim());
        assert!(back.vector(999).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn oov_vector_is_zero() {
        let corpus = vec![vec![1u64, 2, 1, 2]];
        let table = train_skipgram(&corpus, &cfg()).unwrap();
        assert!(table.vector(999).iter().all(|&x| x == 0.0));
        assert_eq!(table.vector(999).len(), 8);
        assert!(table.contains(1));
        assert!(!table.contains(999));
    }
}
