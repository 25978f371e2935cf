//! What to paste and next to which host object.
//!
//! Every host object label is scored against every bank category
//! ([`score_all_pairs`]), the best pair per category is kept
//! ([`top_n_pairs`]), and a [`SelectionStrategy`] picks one candidate.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand::distr::Distribution;
use rand::distr::weighted::WeightedIndex;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotatedImage, ImageRecord};
use crate::bank::ObjectBank;
use crate::embedding::{similarity, EmbeddingStore, SimilarityMetric, WordVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub host_object_index: usize,
    pub host_label: String,
    pub bank_category: String,
    pub score: f64,
}

/// Indices of objects allowed to anchor a paste: original, non-crowd ones.
pub fn anchor_indices(host: &AnnotatedImage) -> Vec<usize> {
    host.objects
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.crowd && !o.synthetic)
        .map(|(i, _)| i)
        .collect()
}

/// Score each host vector against each category vector, host-major.
pub fn score_pairs(
    hosts: &[(usize, &str, &WordVector)],
    categories: &[(&str, &WordVector)],
    metric: SimilarityMetric,
) -> Result<Vec<SimilarityPair>> {
    let mut out = Vec::with_capacity(hosts.len() * categories.len());
    for &(idx, label, hv) in hosts {
        for &(cat, cv) in categories {
            out.push(SimilarityPair {
                host_object_index: idx,
                host_label: label.to_string(),
                bank_category: cat.to_string(),
                score: similarity(metric, hv, cv)?,
            });
        }
    }
    Ok(out)
}

/// All (anchor, category) pairs for `host` against `bank`.
pub fn score_all_pairs(
    host: &AnnotatedImage,
    bank: &ObjectBank,
    store: &EmbeddingStore,
    metric: SimilarityMetric,
) -> Result<Vec<SimilarityPair>> {
    let anchors = anchor_indices(host);
    if anchors.is_empty() {
        return Err(Error::NoHostObjects);
    }
    let hosts = anchors
        .iter()
        .map(|&i| {
            let label = host.objects[i].label.as_str();
            Ok((i, label, store.resolve_label(label)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let categories: Vec<(&str, &WordVector)> = bank.categories().collect();
    score_pairs(&hosts, &categories, metric)
}

/// Descending score, then ascending label.
fn rank(a: &SimilarityPair, b: &SimilarityPair) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.bank_category.cmp(&b.bank_category))
}

/// Best pair per category; within a category, the lowest host index wins ties.
fn best_per_category(pairs: &[SimilarityPair]) -> Vec<SimilarityPair> {
    let mut best: BTreeMap<&str, &SimilarityPair> = BTreeMap::new();
    for p in pairs {
        match best.get(p.bank_category.as_str()) {
            Some(cur)
                if cur.score > p.score
                    || (cur.score == p.score && cur.host_object_index <= p.host_object_index) => {}
            _ => {
                best.insert(&p.bank_category, p);
            }
        }
    }
    let mut out: Vec<SimilarityPair> = best.into_values().cloned().collect();
    out.sort_by(rank);
    out
}

/// The `n` highest-scoring distinct categories, each with its best pair.
pub fn top_n_pairs(pairs: &[SimilarityPair], n: usize) -> Result<Vec<SimilarityPair>> {
    if n == 0 {
        return Err(Error::InvalidArgument("top_n must be at least 1".into()));
    }
    let mut out = best_per_category(pairs);
    out.truncate(n);
    Ok(out)
}

/// Like [`top_n_pairs`] but each category scores the mean over host objects.
/// The returned pair names the host object with the highest individual score.
pub fn average_similarity(pairs: &[SimilarityPair], n: usize) -> Result<Vec<SimilarityPair>> {
    if n == 0 {
        return Err(Error::InvalidArgument("top_n must be at least 1".into()));
    }
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for p in pairs {
        let e = sums.entry(&p.bank_category).or_insert((0.0, 0));
        e.0 += p.score;
        e.1 += 1;
    }
    let mut out: Vec<SimilarityPair> = best_per_category(pairs)
        .into_iter()
        .map(|mut p| {
            let (s, k) = sums[p.bank_category.as_str()];
            p.score = s / k as f64;
            p
        })
        .collect();
    out.sort_by(rank);
    out.truncate(n);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    MostSimilar,
    InstanceBalanced,
    BaselineMap,
    Cooccurrence,
    RandomPaste,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::MostSimilar,
        StrategyKind::InstanceBalanced,
        StrategyKind::BaselineMap,
        StrategyKind::Cooccurrence,
        StrategyKind::RandomPaste,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::MostSimilar => "most_similar",
            StrategyKind::InstanceBalanced => "instance_balanced",
            StrategyKind::BaselineMap => "baseline_map",
            StrategyKind::Cooccurrence => "cooccurrence",
            StrategyKind::RandomPaste => "random_paste",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

/// Number of training images in which both categories appear.
///
/// The diagonal holds the number of images containing the category at all.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceTable {
    counts: BTreeMap<String, BTreeMap<String, u64>>,
}

impl CooccurrenceTable {
    pub fn from_labels<'a, I, L>(images: I) -> Self
    where
        I: IntoIterator<Item = L>,
        L: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
        for labels in images {
            let set: BTreeSet<&str> = labels.into_iter().collect();
            for &a in &set {
                let row = counts.entry(a.to_string()).or_default();
                for &b in &set {
                    *row.entry(b.to_string()).or_insert(0) += 1;
                }
            }
        }
        CooccurrenceTable { counts }
    }

    pub fn from_records(records: &[ImageRecord]) -> Self {
        Self::from_labels(records.iter().map(|r| {
            r.objects
                .iter()
                .filter(|o| !o.crowd)
                .map(|o| o.label.as_str())
                .collect::<Vec<_>>()
        }))
    }

    pub fn get(&self, a: &str, b: &str) -> u64 {
        self.counts
            .get(a)
            .and_then(|row| row.get(b))
            .copied()
            .unwrap_or(0)
    }

    /// Sampling weight of `category` given the host image's labels.
    pub fn weight<'a>(&self, category: &str, host_labels: impl IntoIterator<Item = &'a str>) -> u64 {
        host_labels.into_iter().map(|h| self.get(category, h)).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStrategy {
    pub kind: StrategyKind,
    pub top_n: usize,
    /// Score categories by their mean similarity over host objects.
    pub average_similarity: bool,
    pub per_category_ap: Option<BTreeMap<String, f64>>,
    pub cooccurrence: Option<CooccurrenceTable>,
}

impl SelectionStrategy {
    pub fn new(kind: StrategyKind, top_n: usize) -> Self {
        SelectionStrategy {
            kind,
            top_n,
            average_similarity: false,
            per_category_ap: None,
            cooccurrence: None,
        }
    }

    pub fn averaged(mut self, on: bool) -> Self {
        self.average_similarity = on;
        self
    }

    pub fn with_ap_table(mut self, table: BTreeMap<String, f64>) -> Self {
        self.per_category_ap = Some(table);
        self
    }

    pub fn with_cooccurrence(mut self, table: CooccurrenceTable) -> Self {
        self.cooccurrence = Some(table);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        match self.kind {
            StrategyKind::BaselineMap if self.per_category_ap.is_none() => {
                Err(Error::Config("baseline_map needs a per-category AP table".into()))
            }
            StrategyKind::Cooccurrence if self.cooccurrence.is_none() => {
                Err(Error::Config("cooccurrence needs a co-occurrence table".into()))
            }
            _ => Ok(()),
        }
    }

    /// Check the AP table covers every category that could be selected.
    pub fn check_categories<'a>(&self, categories: impl IntoIterator<Item = &'a str>) -> Result<()> {
        if let (StrategyKind::BaselineMap, Some(ap)) = (self.kind, &self.per_category_ap) {
            let missing: Vec<&str> = categories.into_iter().filter(|c| !ap.contains_key(*c)).collect();
            if !missing.is_empty() {
                return Err(Error::Config(format!("AP table lacks {}", missing.join(", "))));
            }
        }
        Ok(())
    }
}

/// Pastes per category within one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCounter {
    counts: BTreeMap<String, u64>,
    epoch_id: u64,
    baseline: BTreeMap<String, u64>,
}

impl CategoryCounter {
    pub fn new(epoch_id: u64) -> Self {
        Self::seeded(epoch_id, BTreeMap::new())
    }

    /// Start every epoch from `baseline` instead of zero.
    pub fn seeded(epoch_id: u64, baseline: BTreeMap<String, u64>) -> Self {
        CategoryCounter {
            counts: baseline.clone(),
            epoch_id,
            baseline,
        }
    }

    pub fn epoch_id(&self) -> u64 {
        self.epoch_id
    }

    pub fn count(&self, category: &str) -> u64 {
        self.counts.get(category).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn increment(&mut self, category: &str) {
        *self.counts.entry(category.to_string()).or_insert(0) += 1;
    }

    pub fn reset_epoch(&mut self, epoch_id: u64) -> Result<()> {
        if epoch_id <= self.epoch_id {
            return Err(Error::InvalidArgument(format!(
                "epoch {epoch_id} does not follow epoch {}",
                self.epoch_id
            )));
        }
        self.counts = self.baseline.clone();
        self.epoch_id = epoch_id;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub host_object_index: usize,
    pub bank_category: String,
    pub score: f64,
    pub strategy_kind: StrategyKind,
    pub top_n_pairs: Vec<SimilarityPair>,
}

impl MatchDecision {
    fn from_pair(p: &SimilarityPair, kind: StrategyKind, candidates: Vec<SimilarityPair>) -> Self {
        MatchDecision {
            host_object_index: p.host_object_index,
            bank_category: p.bank_category.clone(),
            score: p.score,
            strategy_kind: kind,
            top_n_pairs: candidates,
        }
    }
}

/// Pick a category and anchor, and count the pick in `counter`.
pub fn select<R: Rng + ?Sized>(
    pairs: &[SimilarityPair],
    strategy: &SelectionStrategy,
    counter: &mut CategoryCounter,
    rng: &mut R,
) -> Result<MatchDecision> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no similarity pairs to select from".into()));
    }
    strategy.validate()?;
    let n = match strategy.kind {
        StrategyKind::Cooccurrence | StrategyKind::RandomPaste => usize::MAX,
        _ => strategy.top_n,
    };
    let candidates = if strategy.average_similarity {
        average_similarity(pairs, n)?
    } else {
        top_n_pairs(pairs, n)?
    };

    let decision = match strategy.kind {
        StrategyKind::MostSimilar => {
            MatchDecision::from_pair(&candidates[0], strategy.kind, candidates.clone())
        }
        StrategyKind::InstanceBalanced => {
            let pick = candidates
                .iter()
                .min_by(|a, b| {
                    counter
                        .count(&a.bank_category)
                        .cmp(&counter.count(&b.bank_category))
                        .then_with(|| rank(a, b))
                })
                .expect("candidates non-empty");
            MatchDecision::from_pair(pick, strategy.kind, candidates.clone())
        }
        StrategyKind::BaselineMap => {
            let ap = strategy.per_category_ap.as_ref().expect("validated");
            let ap_of = |c: &str| {
                ap.get(c)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("AP table lacks {c}")))
            };
            let mut best: Option<(&SimilarityPair, f64)> = None;
            for c in &candidates {
                let v = ap_of(&c.bank_category)?;
                let better = match best {
                    None => true,
                    Some((b, bv)) => v.total_cmp(&bv).then_with(|| rank(c, b)) == Ordering::Less,
                };
                if better {
                    best = Some((c, v));
                }
            }
            MatchDecision::from_pair(best.expect("candidates non-empty").0, strategy.kind, candidates.clone())
        }
        StrategyKind::Cooccurrence => {
            let table = strategy.cooccurrence.as_ref().expect("validated");
            let host_labels: BTreeSet<&str> = pairs.iter().map(|p| p.host_label.as_str()).collect();
            let weights: Vec<u64> = candidates
                .iter()
                .map(|c| table.weight(&c.bank_category, host_labels.iter().copied()))
                .collect();
            // no co-occurrence evidence at all: fall back to uniform
            let idx = match WeightedIndex::new(&weights) {
                Ok(dist) => dist.sample(rng),
                Err(_) => rng.random_range(0..candidates.len()),
            };
            MatchDecision::from_pair(&candidates[idx], strategy.kind, candidates.clone())
        }
        StrategyKind::RandomPaste => {
            let cat = &candidates[rng.random_range(0..candidates.len())].bank_category;
            let hosts: BTreeSet<usize> = pairs.iter().map(|p| p.host_object_index).collect();
            let host = *hosts.iter().nth(rng.random_range(0..hosts.len())).expect("in range");
            let pair = pairs
                .iter()
                .find(|p| p.host_object_index == host && &p.bank_category == cat)
                .expect("pairs cover every host and category");
            MatchDecision::from_pair(pair, strategy.kind, Vec::new())
        }
    };
    counter.increment(&decision.bank_category);
    Ok(decision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(host: usize, cat: &str, score: f64) -> SimilarityPair {
        SimilarityPair {
            host_object_index: host,
            host_label: format!("h{host}"),
            bank_category: cat.into(),
            score,
        }
    }

    fn cats(ps: &[SimilarityPair]) -> Vec<&str> {
        ps.iter().map(|p| p.bank_category.as_str()).collect()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn top_n_keeps_distinct_categories() {
        let pairs = vec![
            pair(1, "truck", 0.2),
            pair(1, "bus", 0.15),
            pair(1, "giraffe", 0.3),
            pair(2, "giraffe", 0.9),
            pair(2, "zebra", 0.85),
            pair(2, "truck", 0.1),
        ];
        let top = top_n_pairs(&pairs, 3).unwrap();
        assert_eq!(cats(&top), ["giraffe", "zebra", "truck"]);
        assert_eq!(top[0].host_object_index, 2);
        assert_eq!(top[2].host_object_index, 1);
        assert_eq!(cats(&top_n_pairs(&pairs, 1).unwrap()), ["giraffe"]);
        assert_eq!(top_n_pairs(&pairs, 10).unwrap().len(), 4);
        assert!(top_n_pairs(&pairs, 0).is_err());
    }

    #[test]
    fn ties_order_alphabetically_regardless_of_input_order() {
        let a = vec![pair(0, "b", 0.5), pair(0, "a", 0.5), pair(0, "c", 0.1)];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(cats(&top_n_pairs(&a, 2).unwrap()), ["a", "b"]);
        assert_eq!(top_n_pairs(&a, 3).unwrap(), top_n_pairs(&b, 3).unwrap());
    }

    #[test]
    fn averaging() {
        let pairs = vec![pair(0, "cat", 0.9), pair(1, "cat", 0.1), pair(0, "dog", 0.6), pair(1, "dog", 0.6)];
        let avg = average_similarity(&pairs, 2).unwrap();
        assert_eq!(cats(&avg), ["dog", "cat"]);
        assert!((avg[1].score - 0.5).abs() < 1e-12);
        assert_eq!(avg[1].host_object_index, 0);
        let single = vec![pair(0, "cat", 0.9), pair(0, "dog", 0.6)];
        assert_eq!(average_similarity(&single, 2).unwrap(), top_n_pairs(&single, 2).unwrap());
    }

    #[test]
    fn averaging_three_by_four_matches_means() {
        let scores = [[0.1, 0.5, 0.9, 0.3], [0.2, 0.4, 0.0, 0.8], [0.6, 0.6, 0.3, 0.1]];
        let names = ["a", "b", "c", "d"];
        let pairs: Vec<_> = (0..3)
            .flat_map(|h| (0..4).map(move |c| (h, c)))
            .map(|(h, c)| pair(h, names[c], scores[h][c]))
            .collect();
        let avg = average_similarity(&pairs, 4).unwrap();
        for p in &avg {
            let c = names.iter().position(|n| *n == p.bank_category).unwrap();
            let mean = (scores[0][c] + scores[1][c] + scores[2][c]) / 3.0;
            assert!((p.score - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn instance_balanced_prefers_rarest_then_similarity() {
        let pairs = vec![pair(0, "a", 0.9), pair(0, "b", 0.8), pair(0, "c", 0.7), pair(0, "d", 0.6)];
        let s = SelectionStrategy::new(StrategyKind::InstanceBalanced, 3);
        let mut counter = CategoryCounter::new(0);
        let picks: Vec<String> = (0..6)
            .map(|_| select(&pairs, &s, &mut counter, &mut rng()).unwrap().bank_category)
            .collect();
        assert_eq!(picks, ["a", "b", "c", "a", "b", "c"]);
        assert_eq!(counter.count("d"), 0);
    }

    #[test]
    fn n_one_strategies_agree_with_argmax() {
        let pairs = vec![pair(0, "a", 0.2), pair(1, "b", 0.7), pair(0, "c", 0.5)];
        let ap = BTreeMap::from([("a".into(), 0.1), ("b".into(), 0.9), ("c".into(), 0.2)]);
        for kind in [StrategyKind::MostSimilar, StrategyKind::InstanceBalanced, StrategyKind::BaselineMap] {
            let s = SelectionStrategy::new(kind, 1).with_ap_table(ap.clone());
            let d = select(&pairs, &s, &mut CategoryCounter::new(0), &mut rng()).unwrap();
            assert_eq!((d.bank_category.as_str(), d.host_object_index), ("b", 1), "{kind}");
        }
    }

    #[test]
    fn baseline_map_picks_lowest_ap() {
        let pairs = vec![pair(0, "a", 0.9), pair(0, "b", 0.8), pair(0, "c", 0.7)];
        let ap = BTreeMap::from([("a".into(), 0.5), ("b".into(), 0.2), ("c".into(), 0.3)]);
        let s = SelectionStrategy::new(StrategyKind::BaselineMap, 3).with_ap_table(ap);
        let d = select(&pairs, &s, &mut CategoryCounter::new(0), &mut rng()).unwrap();
        assert_eq!(d.bank_category, "b");
    }

    #[test]
    fn missing_tables_are_config_errors() {
        let pairs = vec![pair(0, "a", 0.9)];
        for kind in [StrategyKind::BaselineMap, StrategyKind::Cooccurrence] {
            let s = SelectionStrategy::new(kind, 3);
            let err = select(&pairs, &s, &mut CategoryCounter::new(0), &mut rng()).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{err}");
        }
    }

    #[test]
    fn cooccurrence_only_samples_supported_categories() {
        let table = CooccurrenceTable::from_labels([vec!["h0", "a"], vec!["h0", "a"], vec!["b"]]);
        assert_eq!(table.get("a", "h0"), 2);
        assert_eq!(table.get("b", "b"), 1);
        let pairs = vec![pair(0, "a", 0.1), pair(0, "b", 0.9)];
        let s = SelectionStrategy::new(StrategyKind::Cooccurrence, 3).with_cooccurrence(table);
        let mut r = rng();
        for _ in 0..50 {
            let d = select(&pairs, &s, &mut CategoryCounter::new(0), &mut r).unwrap();
            assert_eq!(d.bank_category, "a");
        }
    }

    #[test]
    fn random_paste_is_seeded() {
        let pairs: Vec<_> = (0..3)
            .flat_map(|h| ["a", "b", "c"].map(|c| pair(h, c, 0.5)))
            .collect();
        let s = SelectionStrategy::new(StrategyKind::RandomPaste, 3);
        let run = || {
            let mut r = rng();
            (0..20)
                .map(|_| {
                    let d = select(&pairs, &s, &mut CategoryCounter::new(0), &mut r).unwrap();
                    (d.bank_category, d.host_object_index)
                })
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().map(|x| x.1).collect::<BTreeSet<_>>().len() > 1);
    }

    #[test]
    fn counter_epochs() {
        let mut c = CategoryCounter::new(0);
        for _ in 0..7 {
            c.increment("cat");
        }
        assert_eq!(c.count("cat"), 7);
        c.reset_epoch(1).unwrap();
        assert_eq!(c.count("cat"), 0);
        assert!(c.reset_epoch(1).is_err());
        let mut s = CategoryCounter::seeded(0, BTreeMap::from([("dog".into(), 3)]));
        s.increment("dog");
        s.reset_epoch(2).unwrap();
        assert_eq!(s.count("dog"), 3);
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("best".parse::<StrategyKind>().is_err());
    }
}
