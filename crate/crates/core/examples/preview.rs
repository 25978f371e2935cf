//! Side-by-side original/augmented images for a couple of ids, several
//! variants each (same category, different bank instances).
//!
//! `cargo run --example preview [out_dir]`

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sempaste::pipeline::{cmd_build_bank, cmd_preview, BuildBankArgs, PreviewArgs};
use sempaste::synthetic::{write_coco, write_embeddings, ToySpec};
use sempaste::{AugmentationConfig, DatasetFormat, MaskSource, Result};

pub fn run_example(out: Option<&Path>) -> Result<usize> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path();
    let dataset = write_coco(&root.join("coco"), &ToySpec::new(&["cat", "dog", "bus", "car"], 12, 4))?;
    let vectors = root.join("vectors.txt");
    write_embeddings(&vectors, &[], 32, 4)?;
    cmd_build_bank(&BuildBankArgs {
        dataset: dataset.clone(),
        format: DatasetFormat::Coco,
        masks: MaskSource::GroundTruth,
        out: root.join("bank"),
        embeddings: vectors.clone(),
        embedding_dim: Some(32),
        substitutions: BTreeMap::new(),
    })?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| root.join("preview"));
    let items = cmd_preview(&PreviewArgs {
        dataset,
        format: DatasetFormat::Coco,
        bank: root.join("bank"),
        config: AugmentationConfig {
            embedding_path: Some(vectors),
            ..AugmentationConfig::default()
        },
        image_ids: vec!["1".into(), "2".into()],
        n_variants: 3,
        out,
    })?;
    for it in &items {
        println!("{} v{}: {} (entry {}) -> {}", it.image_id, it.variant, it.category, it.entry_id, it.path.display());
    }
    Ok(items.len())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let arg = std::env::args().nth(1).map(PathBuf::from);
    run_example(arg.as_deref()).map(|_| ())
}
