//! Word vectors for category labels.
//!
//! Vectors are read from the plain-text format pretrained GloVe files ship in:
//! one record per line, a token followed by `d` decimal numbers. Tokens are
//! lowercased on load and on lookup. Labels that are missing from the
//! vocabulary can be routed to a replacement token through a substitution
//! table, preloaded with [`DEFAULT_SUBSTITUTIONS`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dataset labels that have no entry of their own in the GloVe vocabulary,
/// paired with the token used in their place.
pub const DEFAULT_SUBSTITUTIONS: [(&str, &str); 11] = [
    ("baseball bat", "baseball"),
    ("baseball glove", "baseball"),
    ("dining table", "table"),
    ("fire hydrant", "hydrant"),
    ("parking meter", "parking"),
    ("playing field", "field"),
    ("potted plant", "plant"),
    ("tennis racket", "racket"),
    ("traffic light", "stoplight"),
    ("stop sign", "stoplight"),
    ("waterdrops", "droplets"),
];

/// A label token and its embedding. Never empty, never all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVector {
    token: String,
    values: Vec<f64>,
}

impl WordVector {
    pub fn new(token: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let token = token.into().to_lowercase();
        if values.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "vector for {token:?} has no components"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "vector for {token:?} has a non-finite component"
            )));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroVector);
        }
        Ok(WordVector { token, values })
    }

    pub fn token(&self) -> &str {
        &self.token
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Same token, every component multiplied by `factor` (which must be nonzero).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        WordVector::new(
            self.token.clone(),
            self.values.iter().map(|v| v * factor).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    #[default]
    Cosine,
    /// Negated L2 distance, so that larger still means more similar.
    Euclidean,
}

impl std::str::FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SimilarityMetric::Cosine),
            "euclidean" => Ok(SimilarityMetric::Euclidean),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Cosine similarity of two raw component slices.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Negated Euclidean distance of two raw component slices.
pub fn neg_euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(-sq.sqrt())
}

pub fn similarity(metric: SimilarityMetric, a: &WordVector, b: &WordVector) -> Result<f64> {
    match metric {
        SimilarityMetric::Cosine => cosine(&a.values, &b.values),
        SimilarityMetric::Euclidean => neg_euclidean(&a.values, &b.values),
    }
}

/// Multiply-accumulate count for scoring every bank category against every
/// object of one image.
pub fn estimate_similarity_flops(
    bank_categories: u64,
    image_objects: u64,
    dimension: u64,
) -> Result<u64> {
    if bank_categories == 0 || image_objects == 0 || dimension == 0 {
        return Err(Error::InvalidArgument(
            "similarity cost needs positive counts".into(),
        ));
    }
    bank_categories
        .checked_mul(image_objects)
        .and_then(|n| n.checked_mul(dimension))
        .ok_or_else(|| Error::InvalidArgument("similarity cost overflows u64".into()))
}

/// Immutable token → vector dictionary plus the label substitution table.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dimension: usize,
    entries: HashMap<String, WordVector>,
    substitutions: BTreeMap<String, String>,
    dropped_substitutions: Vec<(String, String)>,
}

impl EmbeddingStore {
    /// Parse every record of `source`.
    pub fn load<R: BufRead>(source: R, expected_dim: Option<usize>) -> Result<Self> {
        Self::load_filtered(source, expected_dim, None)
    }

    /// Like [`EmbeddingStore::load`], but only keeps tokens in `vocabulary`
    /// (matched after lowercasing). Every line is still checked for the
    /// right number of fields.
    pub fn load_filtered<R: BufRead>(
        source: R,
        expected_dim: Option<usize>,
        vocabulary: Option<&HashSet<String>>,
    ) -> Result<Self> {
        if expected_dim == Some(0) {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let mut dimension = expected_dim;
        let mut entries = HashMap::new();
        let mut saw_record = false;

        for (i, line) in source.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            saw_record = true;
            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap_or_default().to_lowercase();
            let raw: Vec<&str> = fields.collect();

            let d = *dimension.get_or_insert(raw.len());
            if d == 0 {
                return Err(Error::EmbeddingParse {
                    line: line_no,
                    message: "record has a token but no vector".into(),
                });
            }
            if raw.len() != d {
                return Err(Error::EmbeddingParse {
                    line: line_no,
                    message: format!("expected {d} components, found {}", raw.len()),
                });
            }
            if vocabulary.is_some_and(|v| !v.contains(&token)) {
                continue;
            }
            if entries.contains_key(&token) {
                continue;
            }
            let values = raw
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| Error::EmbeddingParse {
                        line: line_no,
                        message: format!("non-numeric component {s:?}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let vector = WordVector::new(token.clone(), values).map_err(|e| Error::EmbeddingParse {
                line: line_no,
                message: e.to_string(),
            })?;
            entries.insert(token, vector);
        }

        if !saw_record {
            return Err(Error::EmptyEmbeddings);
        }
        let mut store = EmbeddingStore {
            dimension: dimension.unwrap_or(0),
            entries,
            substitutions: BTreeMap::new(),
            dropped_substitutions: Vec::new(),
        };
        store.install_substitutions(
            DEFAULT_SUBSTITUTIONS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        );
        Ok(store)
    }

    pub fn from_path(
        path: &Path,
        expected_dim: Option<usize>,
        vocabulary: Option<&HashSet<String>>,
    ) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        Self::load_filtered(BufReader::new(file), expected_dim, vocabulary)
    }

    /// Build a store directly from vectors, with the default substitutions.
    pub fn from_vectors(vectors: impl IntoIterator<Item = WordVector>) -> Result<Self> {
        let mut entries = HashMap::new();
        let mut dimension = None;
        for v in vectors {
            let d = *dimension.get_or_insert(v.dimension());
            if v.dimension() != d {
                return Err(Error::DimensionMismatch(d, v.dimension()));
            }
            entries.entry(v.token.clone()).or_insert(v);
        }
        let dimension = dimension.ok_or(Error::EmptyEmbeddings)?;
        let mut store = EmbeddingStore {
            dimension,
            entries,
            substitutions: BTreeMap::new(),
            dropped_substitutions: Vec::new(),
        };
        store.install_substitutions(
            DEFAULT_SUBSTITUTIONS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        );
        Ok(store)
    }

    /// Layer extra substitution rows over the current table. Later rows win.
    pub fn with_substitutions(mut self, overrides: &BTreeMap<String, String>) -> Self {
        let mut table: BTreeMap<String, String> = DEFAULT_SUBSTITUTIONS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        table.extend(self.substitutions.clone());
        for (k, v) in overrides {
            table.insert(k.to_lowercase(), v.to_lowercase());
        }
        self.install_substitutions(table);
        self
    }

    // Rows whose replacement token is absent from the vocabulary are kept
    // aside so that every active row resolves.
    fn install_substitutions(&mut self, table: BTreeMap<String, String>) {
        self.substitutions.clear();
        self.dropped_substitutions.clear();
        for (from, to) in table {
            if self.entries.contains_key(&to) {
                self.substitutions.insert(from, to);
            } else {
                log::debug!("substitution {from:?} -> {to:?} inactive: target not loaded");
                self.dropped_substitutions.push((from, to));
            }
        }
    }

    /// Exact match on the lowercased label, then the substitution table.
    pub fn resolve_label(&self, raw_label: &str) -> Result<&WordVector> {
        let key = raw_label.to_lowercase();
        if let Some(v) = self.entries.get(&key) {
            return Ok(v);
        }
        self.substitutions
            .get(&key)
            .and_then(|to| self.entries.get(to))
            .ok_or_else(|| Error::UnresolvedLabel(raw_label.to_string()))
    }

    /// Resolve a batch of labels, reporting every failure at once.
    pub fn resolve_all<'a>(&self, labels: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let mut missing: Vec<String> = labels
            .into_iter()
            .filter(|l| self.resolve_label(l).is_err())
            .map(str::to_string)
            .collect();
        missing.sort();
        missing.dedup();
        match missing.len() {
            0 => Ok(()),
            1 => Err(Error::UnresolvedLabel(missing.remove(0))),
            _ => Err(Error::UnresolvedLabel(missing.join("\", \""))),
        }
    }

    pub fn get(&self, token: &str) -> Option<&WordVector> {
        self.entries.get(&token.to_lowercase())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn substitutions(&self) -> &BTreeMap<String, String> {
        &self.substitutions
    }

    /// Substitution rows that were configured but could not be activated.
    pub fn dropped_substitutions(&self) -> &[(String, String)] {
        &self.dropped_substitutions
    }
}

/// Tokens a store must keep to resolve `labels`: the lowercased labels plus
/// the substitution targets that could apply to them.
pub fn vocabulary_for<'a>(
    labels: impl IntoIterator<Item = &'a str>,
    overrides: &BTreeMap<String, String>,
) -> HashSet<String> {
    let mut table: BTreeMap<String, String> = DEFAULT_SUBSTITUTIONS
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    for (k, v) in overrides {
        table.insert(k.to_lowercase(), v.to_lowercase());
    }
    let mut vocab = HashSet::new();
    for label in labels {
        let key = label.to_lowercase();
        if let Some(to) = table.get(&key) {
            vocab.insert(to.clone());
        }
        vocab.insert(key);
    }
    vocab
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wv(token: &str, values: &[f64]) -> WordVector {
        WordVector::new(token, values.to_vec()).unwrap()
    }

    #[test]
    fn minimal_line_loads() {
        let store = EmbeddingStore::load("cat 1.0 0.0\n".as_bytes(), None).unwrap();
        assert_eq!(store.dimension(), 2);
        assert_eq!(store.len(), 1);
        assert_eq!(store.get("cat").unwrap().values(), &[1.0, 0.0]);
    }

    #[test]
    fn short_line_is_rejected_with_line_number() {
        let err = EmbeddingStore::load("cat 1.0 0.0\ndog 1.0\n".as_bytes(), None).unwrap_err();
        match err {
            Error::EmbeddingParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn expected_dim_is_enforced_on_first_line() {
        let err = EmbeddingStore::load("cat 1.0 0.0\n".as_bytes(), Some(3)).unwrap_err();
        assert!(matches!(err, Error::EmbeddingParse { line: 1, .. }));
    }

    #[test]
    fn empty_and_garbage_inputs() {
        assert!(matches!(
            EmbeddingStore::load("".as_bytes(), None),
            Err(Error::EmptyEmbeddings)
        ));
        assert!(matches!(
            EmbeddingStore::load("cat 1.0 abc\n".as_bytes(), None),
            Err(Error::EmbeddingParse { line: 1, .. })
        ));
        assert!(matches!(
            EmbeddingStore::load("cat 0 0\n".as_bytes(), None),
            Err(Error::EmbeddingParse { line: 1, .. })
        ));
    }

    #[test]
    fn tokens_are_lowercased() {
        let store = EmbeddingStore::load("Cat 1 2\n".as_bytes(), None).unwrap();
        assert!(store.get("cat").is_some());
        assert_eq!(store.resolve_label("CAT").unwrap().token(), "cat");
    }

    #[test]
    fn vocabulary_filter_keeps_only_requested_tokens() {
        let vocab: HashSet<String> = ["dog".to_string()].into();
        let store =
            EmbeddingStore::load_filtered("cat 1 0\ndog 0 1\n".as_bytes(), None, Some(&vocab))
                .unwrap();
        assert_eq!(store.len(), 1);
        assert!(store.get("dog").is_some());
    }

    #[test]
    fn resolution_order() {
        let text = "cat 1 0 0\ntable 0 1 0\nstoplight 0 0 1\n";
        let store = EmbeddingStore::load(text.as_bytes(), None).unwrap();
        assert_eq!(store.resolve_label("cat").unwrap().token(), "cat");
        assert_eq!(store.resolve_label("dining table").unwrap().token(), "table");
        assert_eq!(store.resolve_label("Traffic Light").unwrap().token(), "stoplight");
        match store.resolve_label("tv monitor") {
            Err(Error::UnresolvedLabel(l)) => assert_eq!(l, "tv monitor"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn substitutions_without_targets_are_inactive() {
        let store = EmbeddingStore::load("table 1 0\n".as_bytes(), None).unwrap();
        assert_eq!(store.substitutions().len(), 1);
        assert_eq!(store.dropped_substitutions().len(), 10);
        assert!(store.substitutions().values().all(|t| store.get(t).is_some()));
        assert!(store.resolve_label("fire hydrant").is_err());
    }

    #[test]
    fn overrides_extend_the_table() {
        let store = EmbeddingStore::load("monitor 1 0\n".as_bytes(), None).unwrap();
        let overrides = BTreeMap::from([("tvmonitor".to_string(), "monitor".to_string())]);
        let store = store.with_substitutions(&overrides);
        assert_eq!(store.resolve_label("TVMonitor").unwrap().token(), "monitor");
    }

    #[test]
    fn resolve_all_lists_every_missing_label() {
        let store = EmbeddingStore::load("cat 1 0\n".as_bytes(), None).unwrap();
        assert!(store.resolve_all(["cat", "Cat"]).is_ok());
        let err = store.resolve_all(["cat", "zebra", "yak"]).unwrap_err();
        assert!(err.to_string().contains("yak") && err.to_string().contains("zebra"));
    }

    #[test]
    fn cosine_examples() {
        let a = wv("a", &[1.0, 0.0, 0.0]);
        assert_eq!(similarity(SimilarityMetric::Cosine, &a, &a).unwrap(), 1.0);
        let x = wv("x", &[1.0, 0.0]);
        let y = wv("y", &[0.0, 1.0]);
        assert_eq!(similarity(SimilarityMetric::Cosine, &x, &y).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77)) evaluated independently.
        let p = wv("p", &[1.0, 2.0, 3.0]);
        let q = wv("q", &[4.0, 5.0, 6.0]);
        let got = similarity(SimilarityMetric::Cosine, &p, &q).unwrap();
        assert!((got - 0.974_631_846_197_076_2).abs() < 1e-15);
    }

    #[test]
    fn euclidean_is_negated_distance() {
        let a = wv("a", &[1.0, 1.0]);
        let b = wv("b", &[4.0, 5.0]);
        assert_eq!(similarity(SimilarityMetric::Euclidean, &a, &b).unwrap(), -5.0);
        assert_eq!(similarity(SimilarityMetric::Euclidean, &b, &b).unwrap(), 0.0);
    }

    #[test]
    fn similarity_errors() {
        let a = wv("a", &[1.0, 0.0]);
        let b = wv("b", &[1.0, 0.0, 0.0]);
        assert!(matches!(
            similarity(SimilarityMetric::Cosine, &a, &b),
            Err(Error::DimensionMismatch(2, 3))
        ));
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
        assert!(WordVector::new("z", vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn flop_estimates() {
        assert_eq!(estimate_similarity_flops(80, 20, 300).unwrap(), 480_000);
        assert_eq!(estimate_similarity_flops(1, 1, 1).unwrap(), 1);
        assert_eq!(estimate_similarity_flops(20, 5, 100).unwrap(), 10_000);
        assert!(estimate_similarity_flops(0, 5, 100).is_err());
        assert!(estimate_similarity_flops(u64::MAX, 2, 1).is_err());
    }

    #[test]
    fn vocabulary_covers_substitution_targets() {
        let vocab = vocabulary_for(["Dining Table", "cat"], &BTreeMap::new());
        assert!(vocab.contains("dining table"));
        assert!(vocab.contains("table"));
        assert!(vocab.contains("cat"));
    }
}
