//! End to end: generate a VOC-style dataset, build the bank, and run two
//! augmentation epochs with instance balancing. A rerun of epoch 0 with a
//! different worker count reproduces it byte for byte.
//!
//! `cargo run --example augment_epoch`

use std::collections::BTreeMap;
use std::path::Path;

use sempaste::pipeline::{cmd_augment, cmd_build_bank, AugmentArgs, BuildBankArgs};
use sempaste::synthetic::{write_embeddings, write_voc, ToySpec};
use sempaste::{AugmentationConfig, DatasetFormat, MaskSource, Result};

fn files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for sub in ["Annotations", "JPEGImages"] {
        for e in std::fs::read_dir(dir.join(sub))? {
            let p = e?.path();
            out.insert(format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p)?);
        }
    }
    out.insert("run_report.json".into(), std::fs::read(dir.join("run_report.json"))?);
    Ok(out)
}

pub fn run_example() -> Result<()> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path();
    let spec = ToySpec::new(&["cat", "dog", "horse", "car", "bus", "pottedplant"], 16, 11);
    let dataset = write_voc(&root.join("voc"), &spec)?;
    let vectors = root.join("vectors.txt");
    write_embeddings(&vectors, &[], 32, 11)?;

    let bank = root.join("bank");
    let built = cmd_build_bank(&BuildBankArgs {
        dataset: dataset.clone(),
        format: DatasetFormat::Voc,
        masks: MaskSource::GroundTruth,
        out: bank.clone(),
        embeddings: vectors.clone(),
        embedding_dim: Some(32),
        substitutions: BTreeMap::new(),
    })?;
    println!("bank: {} entries", built.entries);

    let run = |epoch: u64, workers: usize, out: &str| {
        let config = AugmentationConfig {
            seed: 7,
            epoch,
            objects_per_image: 2,
            embedding_path: Some(vectors.clone()),
            ..AugmentationConfig::default()
        };
        cmd_augment(&AugmentArgs {
            dataset: dataset.clone(),
            format: DatasetFormat::Voc,
            bank: bank.clone(),
            out: root.join(out),
            config,
            workers: Some(workers),
        })
    };

    for epoch in 0..2 {
        let r = run(epoch, 4, &format!("epoch{epoch}"))?;
        println!(
            "epoch {epoch}: {} pastes, {} skips, {} occluded objects removed",
            r.total_pastes,
            r.skips.len(),
            r.removed_objects.len()
        );
        println!("  per category {:?}", r.pastes_per_category);
        for p in r.pastes.iter().take(3) {
            println!("  {} <- {} beside {}", p.image_id, p.category, p.anchor_label);
        }
    }

    run(0, 1, "epoch0_again")?;
    let same = files(&root.join("epoch0"))? == files(&root.join("epoch0_again"))?;
    println!("epoch 0 with 1 worker identical to 4 workers: {same}");
    assert!(same);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
