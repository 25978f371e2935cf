//! Category balance before and after one epoch on a skewed dataset.
//!
//! `cargo run --example dataset_stats`

use std::collections::BTreeMap;

use sempaste::pipeline::{cmd_augment, cmd_build_bank, cmd_stats, AugmentArgs, BuildBankArgs, CategoryStats, StatsArgs};
use sempaste::synthetic::{write_coco, write_embeddings, ToySpec};
use sempaste::{AugmentationConfig, DatasetFormat, MaskSource, Result};

fn show(name: &str, s: &CategoryStats) {
    println!(
        "{name:>6}: {} objects, max/min {:.2}, normalized entropy {:.3}",
        s.total, s.max_min_ratio, s.normalized_entropy
    );
    for (c, n) in &s.counts {
        println!("          {c:<8} {n}");
    }
}

pub fn run_example() -> Result<()> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path();
    let spec = ToySpec::new(&["cat", "dog", "sheep", "cow"], 40, 2).with_weights(&[12, 4, 2, 1]);
    let dataset = write_coco(&root.join("coco"), &spec)?;
    let vectors = root.join("vectors.txt");
    write_embeddings(&vectors, &[], 32, 2)?;
    cmd_build_bank(&BuildBankArgs {
        dataset: dataset.clone(),
        format: DatasetFormat::Coco,
        masks: MaskSource::GroundTruth,
        out: root.join("bank"),
        embeddings: vectors.clone(),
        embedding_dim: Some(32),
        substitutions: BTreeMap::new(),
    })?;
    cmd_augment(&AugmentArgs {
        dataset: dataset.clone(),
        format: DatasetFormat::Coco,
        bank: root.join("bank"),
        out: root.join("out"),
        config: AugmentationConfig {
            top_n: 4,
            embedding_path: Some(vectors),
            ..AugmentationConfig::default()
        },
        workers: None,
    })?;

    let stats = cmd_stats(&StatsArgs {
        dataset,
        format: DatasetFormat::Coco,
        augmented: Some(root.join("out")),
        report: None,
    })?;
    show("before", &stats.before);
    if let Some(after) = &stats.after {
        show("after", after);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
