//! Build an object bank from a small generated COCO-style dataset, save it,
//! load it back and draw a few instances.
//!
//! `cargo run --example object_bank`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sempaste::bank::build_bank;
use sempaste::synthetic::{write_coco, write_embeddings, ToySpec};
use sempaste::{Dataset, DatasetFormat, EmbeddingStore, MaskSource, ObjectBank, Result};

pub fn run_example() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let spec = ToySpec::new(&["cat", "dog", "bus", "potted plant"], 12, 5);
    let root = write_coco(&dir.path().join("coco"), &spec)?;
    let vectors = dir.path().join("vectors.txt");
    write_embeddings(&vectors, &[], 32, 5)?;

    let dataset = Dataset::open(DatasetFormat::Coco, &root)?;
    let store = EmbeddingStore::from_path(&vectors, Some(32), None)?;
    let bank_dir = dir.path().join("bank");
    let (bank, report) = build_bank(&dataset, &store, &MaskSource::GroundTruth, Some(&bank_dir))?;

    println!("{} images -> {} bank entries", report.images, report.entries);
    for (category, n) in &report.per_category {
        println!("  {category:<14} {n}");
    }
    for s in report.skipped.iter().take(3) {
        println!("  skipped {} #{:?}: {}", s.image_id, s.object_index, s.reason);
    }

    let reloaded = ObjectBank::load(&bank_dir, &store)?;
    assert_eq!(reloaded.len(), bank.len());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..3 {
        let e = reloaded.sample_instance("potted plant", &mut rng)?;
        println!(
            "drew {} from image {}: {}x{} crop, {} mask pixels",
            e.entry_id,
            e.source_image_id,
            e.crop_image.width(),
            e.crop_image.height(),
            e.crop_mask.count_ones()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
