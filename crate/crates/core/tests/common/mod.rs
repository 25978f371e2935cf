#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sempaste::bank::MaskSource;
use sempaste::config::AugmentationConfig;
use sempaste::pipeline::{cmd_build_bank, BuildBankArgs};
use sempaste::synthetic::{write_coco, write_embeddings, write_voc, ToySpec};
use sempaste::DatasetFormat;

pub const COCO_LABELS: [&str; 6] = ["cat", "dog", "car", "bus", "dining table", "potted plant"];
pub const VOC_LABELS: [&str; 5] = ["cat", "dog", "car", "bus", "pottedplant"];
pub const DIM: usize = 16;

pub struct Fixture {
    pub root: tempfile::TempDir,
    pub dataset: PathBuf,
    pub embeddings: PathBuf,
    pub bank: PathBuf,
    pub format: DatasetFormat,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }

    pub fn config(&self, seed: u64) -> AugmentationConfig {
        AugmentationConfig {
            seed,
            embedding_path: Some(self.embeddings.clone()),
            embedding_dim: Some(DIM),
            ..AugmentationConfig::default()
        }
    }
}

pub fn embeddings(dir: &Path) -> PathBuf {
    let path = dir.join("vectors.txt");
    write_embeddings(&path, &[], DIM, 42).unwrap();
    path
}

pub fn build(root: &Path, dataset: &Path, format: DatasetFormat, embeddings: &Path) -> PathBuf {
    let bank = root.join("bank");
    cmd_build_bank(&BuildBankArgs {
        dataset: dataset.to_path_buf(),
        format,
        masks: MaskSource::GroundTruth,
        out: bank.clone(),
        embeddings: embeddings.to_path_buf(),
        embedding_dim: Some(DIM),
        substitutions: BTreeMap::new(),
    })
    .unwrap();
    bank
}

pub fn coco(spec: ToySpec) -> Fixture {
    let root = tempfile::tempdir().unwrap();
    let dataset = write_coco(&root.path().join("coco"), &spec).unwrap();
    let embeddings = embeddings(root.path());
    let bank = build(root.path(), &dataset, DatasetFormat::Coco, &embeddings);
    Fixture { root, dataset, embeddings, bank, format: DatasetFormat::Coco }
}

pub fn voc(spec: ToySpec) -> Fixture {
    let root = tempfile::tempdir().unwrap();
    let dataset = write_voc(&root.path().join("voc"), &spec).unwrap();
    let embeddings = embeddings(root.path());
    let bank = build(root.path(), &dataset, DatasetFormat::Voc, &embeddings);
    Fixture { root, dataset, embeddings, bank, format: DatasetFormat::Voc }
}

/// Relative path -> bytes for every file under `dir`.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
