//! Exact top-N maximum inner-product search over library keys.
//!
//! Scores are accumulated in `f64` sequentially over the dimensions, so a
//! given (key, query) pair always produces the same bits. Hits are ordered by
//! score descending and then by entry ordinal ascending.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::library::SourcePromptLibrary;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("cannot index an empty library")]
    EmptyLibrary,
    #[error("top-N must be at least 1")]
    ZeroTopN,
    #[error("query has dimension {found}, index has dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("query {query_index} has dimension {found}, index has dimension {expected}")]
    BatchDimensionMismatch {
        query_index: usize,
        expected: usize,
        found: usize,
    },
    #[error("query {query_index} contains a non-finite component")]
    NonFiniteQuery { query_index: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// Raw dot product.
    #[default]
    InnerProduct,
    /// Dot product of L2-normalized vectors; zero vectors score 0.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub ordinal: usize,
    pub embedding_id: String,
    pub score: f64,
}

/// Dot product accumulated in `f64`, dimension by dimension.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        acc += f64::from(x) * f64::from(y);
    }
    acc
}

fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// Read-only flattened copy of a library's keys.
#[derive(Debug, Clone)]
pub struct MipsIndex {
    key_dim: usize,
    keys: Vec<f32>,
    owners: Vec<u32>,
    embedding_ids: Vec<String>,
    similarity: Similarity,
    inverse_norms: Vec<f64>,
}

impl MipsIndex {
    pub fn build(library: &SourcePromptLibrary) -> Result<Self, SearchError> {
        Self::build_with(library, Similarity::InnerProduct)
    }

    pub fn build_with(
        library: &SourcePromptLibrary,
        similarity: Similarity,
    ) -> Result<Self, SearchError> {
        if library.is_empty() {
            return Err(SearchError::EmptyLibrary);
        }
        let key_dim = library.key_dim();
        let mut keys = Vec::with_capacity(library.len() * key_dim);
        let mut owners = Vec::with_capacity(library.len());
        for entry in library.entries() {
            keys.extend_from_slice(&entry.key);
            owners.push(entry.embedding as u32);
        }
        let inverse_norms = match similarity {
            Similarity::InnerProduct => Vec::new(),
            Similarity::Cosine => keys
                .chunks_exact(key_dim)
                .map(|k| {
                    let n = norm(k);
                    if n > 0.0 {
                        1.0 / n
                    } else {
                        0.0
                    }
                })
                .collect(),
        };
        Ok(Self {
            key_dim,
            keys,
            owners,
            embedding_ids: library.embeddings().iter().map(|e| e.id.clone()).collect(),
            similarity,
            inverse_norms,
        })
    }

    pub fn len(&self) -> usize {
        self.owners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owners.is_empty()
    }

    pub fn key_dim(&self) -> usize {
        self.key_dim
    }

    pub fn similarity(&self) -> Similarity {
        self.similarity
    }

    fn check_query(&self, query: &[f32], query_index: usize) -> Result<(), SearchError> {
        if query.len() != self.key_dim {
            return Err(SearchError::BatchDimensionMismatch {
                query_index,
                expected: self.key_dim,
                found: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(SearchError::NonFiniteQuery { query_index });
        }
        Ok(())
    }

    fn scores(&self, query: &[f32]) -> Vec<(f64, usize)> {
        let query_scale = match self.similarity {
            Similarity::InnerProduct => 1.0,
            Similarity::Cosine => {
                let n = norm(query);
                if n > 0.0 {
                    1.0 / n
                } else {
                    0.0
                }
            }
        };
        self.keys
            .chunks_exact(self.key_dim)
            .enumerate()
            .map(|(ordinal, key)| {
                let raw = dot(key, query);
                let score = match self.similarity {
                    Similarity::InnerProduct => raw,
                    Similarity::Cosine => raw * self.inverse_norms[ordinal] * query_scale,
                };
                // +0.0 folds a negative zero into positive zero
                (score + 0.0, ordinal)
            })
            .collect()
    }

    fn search_unchecked(&self, query: &[f32], top_n: usize) -> Vec<SearchHit> {
        let mut scored = self.scores(query);
        let by_rank = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
        };
        let take = top_n.min(scored.len());
        if take < scored.len() {
            scored.select_nth_unstable_by(take - 1, by_rank);
            scored.truncate(take);
        }
        scored.sort_unstable_by(by_rank);
        scored
            .into_iter()
            .map(|(score, ordinal)| SearchHit {
                ordinal,
                embedding_id: self.embedding_ids[self.owners[ordinal] as usize].clone(),
                score,
            })
            .collect()
    }

    /// The `min(top_n, len)` best-scoring entries for one query.
    pub fn search(&self, query: &[f32], top_n: usize) -> Result<Vec<SearchHit>, SearchError> {
        if top_n == 0 {
            return Err(SearchError::ZeroTopN);
        }
        self.check_query(query, 0).map_err(|e| match e {
            SearchError::BatchDimensionMismatch {
                expected, found, ..
            } => SearchError::DimensionMismatch { expected, found },
            other => other,
        })?;
        Ok(self.search_unchecked(query, top_n))
    }

    /// Searches every query in parallel; output order follows input order.
    pub fn batch_search<Q: AsRef<[f32]> + Sync>(
        &self,
        queries: &[Q],
        top_n: usize,
    ) -> Result<Vec<Vec<SearchHit>>, SearchError> {
        if top_n == 0 {
            return Err(SearchError::ZeroTopN);
        }
        for (i, q) in queries.iter().enumerate() {
            self.check_query(q.as_ref(), i)?;
        }
        Ok(queries
            .par_iter()
            .map(|q| self.search_unchecked(q.as_ref(), top_n))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::library::{EmbeddingMetadata, LibraryEntry, PromptEmbedding, PromptMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn library_from_keys(keys: Vec<Vec<f32>>, embeddings: usize) -> SourcePromptLibrary {
        let dim = keys[0].len();
        let embs = (0..embeddings)
            .map(|i| {
                PromptEmbedding::new(
                    format!("e{i:02}"),
                    EmbeddingMetadata::default(),
                    PromptMatrix::zeros(1, 1),
                )
            })
            .collect();
        let entries = keys
            .into_iter()
            .enumerate()
            .map(|(ordinal, key)| LibraryEntry {
                ordinal,
                embedding: ordinal % embeddings,
                key,
            })
            .collect();
        SourcePromptLibrary::from_parts(dim, 1, 1, embs, entries).unwrap()
    }

    /// Full scan, full sort; no partial selection.
    fn scan_oracle(keys: &[Vec<f32>], query: &[f32], n: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| {
                (
                    i,
                    k.iter()
                        .zip(query)
                        .map(|(&a, &b)| a as f64 * b as f64)
                        .sum(),
                )
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(n);
        all
    }

    #[test]
    fn orthonormal_identity() {
        let index =
            MipsIndex::build(&library_from_keys(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 2)).unwrap();
        let hits = index.search(&[1.0, 0.0], 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].ordinal, 0);
        assert_eq!(hits[0].score, 1.0);
        assert_eq!(hits[0].embedding_id, "e00");
    }

    #[test]
    fn zero_query_ties_break_by_ordinal() {
        let index = MipsIndex::build(&library_from_keys(
            vec![vec![3.0, -1.0], vec![-2.0, 5.0], vec![0.5, 0.5]],
            1,
        ))
        .unwrap();
        let hits = index.search(&[0.0, 0.0], 2).unwrap();
        assert_eq!(
            hits.iter().map(|h| h.ordinal).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert!(hits
            .iter()
            .all(|h| h.score == 0.0 && h.score.is_sign_positive()));
    }

    #[test]
    fn matches_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let keys: Vec<Vec<f32>> = (0..50)
            .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let index = MipsIndex::build(&library_from_keys(keys.clone(), 5)).unwrap();
        for _ in 0..10 {
            let q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let hits = index.search(&q, 5).unwrap();
            let expected = scan_oracle(&keys, &q, 5);
            assert_eq!(
                hits.iter()
                    .map(|h| (h.ordinal, h.score))
                    .collect::<Vec<_>>(),
                expected
            );
        }
    }

    #[test]
    fn clamps_and_rejects() {
        let index = MipsIndex::build(&library_from_keys(vec![vec![1.0, 2.0]], 1)).unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(index.search(&[1.0, 1.0], 10).unwrap().len(), 1);
        assert_eq!(
            index.search(&[1.0], 1).unwrap_err(),
            SearchError::DimensionMismatch {
                expected: 2,
                found: 1
            }
        );
        assert_eq!(
            index.search(&[1.0, 1.0], 0).unwrap_err(),
            SearchError::ZeroTopN
        );
        assert_eq!(
            index
                .batch_search(&[vec![1.0, 1.0], vec![1.0, 1.0, 1.0]], 1)
                .unwrap_err(),
            SearchError::BatchDimensionMismatch {
                query_index: 1,
                expected: 2,
                found: 3
            }
        );
        assert!(matches!(
            index.search(&[f32::NAN, 1.0], 1),
            Err(SearchError::NonFiniteQuery { .. })
        ));
        let empty = SourcePromptLibrary::from_parts(2, 1, 1, vec![], vec![]).unwrap();
        assert_eq!(
            MipsIndex::build(&empty).unwrap_err(),
            SearchError::EmptyLibrary
        );
    }

    #[test]
    fn batch_preserves_query_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let keys: Vec<Vec<f32>> = (0..200)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let index = MipsIndex::build(&library_from_keys(keys, 10)).unwrap();
        let queries: Vec<Vec<f32>> = (0..32)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let batch = index.batch_search(&queries, 10).unwrap();
        assert_eq!(batch.len(), 32);
        assert_eq!(batch.iter().map(Vec::len).sum::<usize>(), 320);
        for (q, hits) in queries.iter().zip(&batch) {
            assert_eq!(&index.search(q, 10).unwrap(), hits);
        }
        let reversed: Vec<Vec<f32>> = queries.iter().rev().cloned().collect();
        let mut back = index.batch_search(&reversed, 10).unwrap();
        back.reverse();
        assert_eq!(back, batch);
        assert_eq!(index.batch_search(&queries[..1], 10).unwrap()[0], batch[0]);
    }

    #[test]
    fn rebuilding_gives_identical_results() {
        let lib = library_from_keys(
            (0..30)
                .map(|i| vec![(i as f32).sin(), (i as f32).cos()])
                .collect(),
            3,
        );
        let a = MipsIndex::build(&lib).unwrap();
        let b = MipsIndex::build(&lib).unwrap();
        for q in [[0.3f32, -0.7], [1.0, 1.0], [-2.0, 0.1]] {
            assert_eq!(a.search(&q, 7).unwrap(), b.search(&q, 7).unwrap());
        }
    }

    #[test]
    fn cosine_ignores_key_scale() {
        let lib = library_from_keys(vec![vec![10.0, 0.0], vec![0.6, 0.8], vec![0.0, 0.0]], 1);
        let ip = MipsIndex::build(&lib).unwrap();
        let cos = MipsIndex::build_with(&lib, Similarity::Cosine).unwrap();
        let q = [0.6, 0.8];
        assert_eq!(ip.search(&q, 1).unwrap()[0].ordinal, 0);
        let hits = cos.search(&q, 3).unwrap();
        assert_eq!(hits[0].ordinal, 1);
        assert!((hits[0].score - 1.0).abs() < 1e-7);
        assert_eq!(hits[2].score, 0.0);
    }

    proptest::proptest! {
        #[test]
        fn positive_query_scaling_keeps_order(
            seed in 0u64..1000,
            scale in 1u32..64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let keys: Vec<Vec<f32>> = (0..40)
                .map(|_| (0..5).map(|_| rng.random_range(-4i32..=4) as f32).collect())
                .collect();
            let index = MipsIndex::build(&library_from_keys(keys, 4)).unwrap();
            let q: Vec<f32> = (0..5).map(|_| rng.random_range(-4i32..=4) as f32).collect();
            let scaled: Vec<f32> = q.iter().map(|v| v * scale as f32).collect();
            let ord = |hits: Vec<SearchHit>| hits.into_iter().map(|h| h.ordinal).collect::<Vec<_>>();
            proptest::prop_assert_eq!(ord(index.search(&q, 8).unwrap()), ord(index.search(&scaled, 8).unwrap()));
        }
    }
}
