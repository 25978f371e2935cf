//! Compare the selection strategies on one host image: which category is
//! pasted, next to which object, over a run of selections.
//!
//! `cargo run --example semantic_matching`

use std::collections::BTreeMap;
use std::io::Cursor;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sempaste::matcher::{score_all_pairs, select, top_n_pairs, CooccurrenceTable};
use sempaste::synthetic::{toy_embeddings, CLUSTERS};
use sempaste::*;

fn toy_bank(store: &EmbeddingStore, categories: &[&str]) -> Result<ObjectBank> {
    let entries = categories
        .iter()
        .enumerate()
        .map(|(i, c)| {
            Ok(BankEntry {
                entry_id: format!("{i:06}"),
                category: c.to_string(),
                embedding: store.resolve_label(c)?.clone(),
                crop_image: RgbImage::new(16, 16),
                crop_mask: BinaryMask::filled(16, 16),
                source_image_id: "toy".into(),
                source_bbox: PixelRect::new(0, 0, 16, 16),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ObjectBank::from_entries(entries)
}

pub fn run_example() -> Result<()> {
    let tokens = CLUSTERS.iter().flat_map(|c| c.iter().copied());
    let store = EmbeddingStore::load(Cursor::new(toy_embeddings(tokens, 50, 3)), Some(50))?;
    let bank = toy_bank(&store, &["dog", "horse", "sheep", "bus", "truck", "chair", "person"])?;
    let host = AnnotatedImage::new(
        "street",
        RgbImage::new(320, 240),
        vec![
            AnnotatedObject::new("cat", BBox::new(20.0, 120.0, 60.0, 50.0)),
            AnnotatedObject::new("car", BBox::new(150.0, 100.0, 120.0, 70.0)),
        ],
    )?;

    let pairs = score_all_pairs(&host, &bank, &store, SimilarityMetric::Cosine)?;
    println!("top 4 candidates:");
    for p in top_n_pairs(&pairs, 4)? {
        println!("  {:<8} next to {:<4} {:.3}", p.bank_category, p.host_label, p.score);
    }

    let cooc = CooccurrenceTable::from_labels([vec!["cat", "dog"], vec!["car", "bus"], vec!["car", "person"]]);
    let ap = ["dog", "horse", "sheep", "bus", "truck", "chair", "person"]
        .iter()
        .enumerate()
        .map(|(i, c)| (c.to_string(), 0.2 + 0.05 * i as f64))
        .collect();
    let strategies = [
        SelectionStrategy::new(StrategyKind::MostSimilar, 1),
        SelectionStrategy::new(StrategyKind::InstanceBalanced, 3),
        SelectionStrategy::new(StrategyKind::BaselineMap, 3).with_ap_table(ap),
        SelectionStrategy::new(StrategyKind::Cooccurrence, 3).with_cooccurrence(cooc),
        SelectionStrategy::new(StrategyKind::RandomPaste, 3),
    ];
    println!("\n12 selections per strategy:");
    for s in &strategies {
        let mut counter = CategoryCounter::new(0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let picks: Vec<String> = (0..12)
            .map(|_| select(&pairs, s, &mut counter, &mut rng).map(|d| d.bank_category))
            .collect::<Result<_>>()?;
        let tally: BTreeMap<&str, usize> = picks.iter().fold(BTreeMap::new(), |mut m, c| {
            *m.entry(c.as_str()).or_default() += 1;
            m
        });
        println!("  {:<17} {tally:?}", s.kind.as_str());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
