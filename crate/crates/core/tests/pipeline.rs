mod common;

use std::collections::BTreeMap;

use common::*;
use sempaste::annotation::Dataset;
use sempaste::bank::MaskSource;
use sempaste::pipeline::*;
use sempaste::synthetic::ToySpec;
use sempaste::{Error, StrategyKind};

fn augment(fx: &Fixture, out: &str, seed: u64, workers: Option<usize>) -> RunReport {
    cmd_augment(&AugmentArgs {
        dataset: fx.dataset.clone(),
        format: fx.format,
        bank: fx.bank.clone(),
        out: fx.path(out),
        config: fx.config(seed),
        workers,
    })
    .unwrap()
}

#[test]
fn coco_epoch_conserves_annotations() {
    let fx = coco(ToySpec::new(&COCO_LABELS, 12, 1));
    let report = augment(&fx, "out", 3, Some(2));
    assert_eq!(report.images_written, 12);
    assert!(report.total_pastes <= 12);
    assert_eq!(report.pastes_per_category.values().sum::<u64>(), report.total_pastes);
    let before = Dataset::open(fx.format, &fx.dataset).unwrap();
    let after = Dataset::open(fx.format, &fx.path("out")).unwrap();
    assert!(after.errors.is_empty(), "{:?}", after.errors);
    for (a, b) in before.images.iter().zip(&after.images) {
        let pasted = report.pastes.iter().filter(|p| p.image_id == a.image_id).count();
        let removed = report.removed_objects.iter().filter(|r| r.image_id == a.image_id).count();
        assert_eq!(b.objects.len(), a.objects.len() + pasted - removed, "{}", a.image_id);
        assert_eq!(b.objects.iter().filter(|o| o.synthetic).count(), pasted);
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let fx = coco(ToySpec::new(&COCO_LABELS, 20, 2));
    augment(&fx, "a", 7, Some(1));
    augment(&fx, "b", 7, Some(4));
    assert_eq!(tree(&fx.path("a")), tree(&fx.path("b")));
    augment(&fx, "c", 8, Some(4));
    assert_ne!(tree(&fx.path("a")), tree(&fx.path("c")));
}

#[test]
fn voc_epoch_round_trips() {
    let fx = voc(ToySpec::new(&VOC_LABELS, 8, 3));
    let report = augment(&fx, "out", 1, None);
    let after = Dataset::open(fx.format, &fx.path("out")).unwrap();
    assert_eq!(after.len(), 8);
    let synthetic = after.images.iter().flat_map(|r| &r.objects).filter(|o| o.synthetic).count();
    assert_eq!(synthetic as u64, report.total_pastes);
}

#[test]
fn bank_rebuild_is_byte_identical() {
    let fx = coco(ToySpec::new(&COCO_LABELS, 6, 4));
    let again = fx.path("bank2");
    cmd_build_bank(&BuildBankArgs {
        dataset: fx.dataset.clone(),
        format: fx.format,
        masks: MaskSource::GroundTruth,
        out: again.clone(),
        embeddings: fx.embeddings.clone(),
        embedding_dim: Some(DIM),
        substitutions: BTreeMap::new(),
    })
    .unwrap();
    assert_eq!(tree(&fx.bank), tree(&again));
}

#[test]
fn missing_instance_mask_skips_that_image_only() {
    let root = tempfile::tempdir().unwrap();
    let spec = ToySpec::new(&VOC_LABELS, 5, 9);
    let ds = sempaste::synthetic::write_voc(&root.path().join("voc"), &spec).unwrap();
    std::fs::remove_file(ds.join("SegmentationObject/toy_000002.png")).unwrap();
    let emb = embeddings(root.path());
    let report = cmd_build_bank(&BuildBankArgs {
        dataset: ds,
        format: sempaste::DatasetFormat::Voc,
        masks: MaskSource::GroundTruth,
        out: root.path().join("bank"),
        embeddings: emb,
        embedding_dim: Some(DIM),
        substitutions: BTreeMap::new(),
    })
    .unwrap();
    assert!(report.entries > 0);
    let missing: Vec<_> = report.skipped.iter().filter(|s| s.reason.starts_with("mask_unavailable")).collect();
    assert!(!missing.is_empty());
    assert!(missing.iter().all(|s| s.image_id == "toy_000002"));
}

#[test]
fn external_class_masks_build_a_bank() {
    let root = tempfile::tempdir().unwrap();
    let spec = ToySpec::new(&VOC_LABELS, 5, 9);
    let ds = sempaste::synthetic::write_voc(&root.path().join("voc"), &spec).unwrap();
    let report = cmd_build_bank(&BuildBankArgs {
        dataset: ds.clone(),
        format: sempaste::DatasetFormat::Voc,
        masks: MaskSource::External(ds.join("SegmentationClass")),
        out: root.path().join("bank"),
        embeddings: embeddings(root.path()),
        embedding_dim: Some(DIM),
        substitutions: BTreeMap::new(),
    })
    .unwrap();
    assert!(report.entries > 0);
    assert!(report.mask_rule.contains("largest"));
}

#[test]
fn empty_dataset_has_no_bank() {
    let root = tempfile::tempdir().unwrap();
    let ds = sempaste::synthetic::write_coco(&root.path().join("coco"), &ToySpec::new(&["cat"], 0, 1)).unwrap();
    let err = cmd_build_bank(&BuildBankArgs {
        dataset: ds,
        format: sempaste::DatasetFormat::Coco,
        masks: MaskSource::GroundTruth,
        out: root.path().join("bank"),
        embeddings: embeddings(root.path()),
        embedding_dim: Some(DIM),
        substitutions: BTreeMap::new(),
    })
    .unwrap_err();
    assert!(matches!(err, Error::EmptyBank), "{err}");
}

#[test]
fn unresolved_label_fails_before_any_output() {
    let fx = coco(ToySpec::new(&COCO_LABELS, 4, 5));
    // vocabulary without "bus"
    let text = std::fs::read_to_string(&fx.embeddings).unwrap();
    let filtered: String = text.lines().filter(|l| !l.starts_with("bus ")).map(|l| format!("{l}\n")).collect();
    let emb = fx.path("no_bus.txt");
    std::fs::write(&emb, filtered).unwrap();
    let mut config = fx.config(1);
    config.embedding_path = Some(emb);
    let out = fx.path("out");
    let err = cmd_augment(&AugmentArgs {
        dataset: fx.dataset.clone(),
        format: fx.format,
        bank: fx.bank.clone(),
        out: out.clone(),
        config,
        workers: None,
    })
    .unwrap_err();
    assert!(matches!(err, Error::UnresolvedLabel(ref l) if l.contains("bus")), "{err}");
    assert!(!out.exists());
}

#[test]
fn most_similar_repeats_across_epochs() {
    let fx = coco(ToySpec::new(&COCO_LABELS, 10, 6));
    let run = |epoch: u64, out: &str| {
        let mut config = fx.config(5);
        config.strategy = StrategyKind::MostSimilar;
        config.top_n = 1;
        config.epoch = epoch;
        cmd_augment(&AugmentArgs {
            dataset: fx.dataset.clone(),
            format: fx.format,
            bank: fx.bank.clone(),
            out: fx.path(out),
            config,
            workers: None,
        })
        .unwrap()
    };
    let cats = |r: &RunReport| r.pastes.iter().map(|p| (p.image_id.clone(), p.category.clone())).collect::<Vec<_>>();
    let (a, b) = (run(0, "e0"), run(1, "e1"));
    let decided = |r: &RunReport| {
        let mut m: BTreeMap<String, String> = cats(r).into_iter().collect();
        for s in &r.skips {
            if let Some(c) = &s.category {
                m.insert(s.image_id.clone(), c.clone());
            }
        }
        m
    };
    assert_eq!(decided(&a), decided(&b));
}

#[test]
fn stats_before_and_after() {
    let spec = ToySpec::new(&["cat", "dog", "car"], 30, 7).with_weights(&[8, 2, 1]);
    let fx = coco(spec);
    let report = augment(&fx, "out", 2, None);
    let stats = cmd_stats(&StatsArgs {
        dataset: fx.dataset.clone(),
        format: fx.format,
        augmented: Some(fx.path("out")),
        report: None,
    })
    .unwrap();
    let after = stats.after.clone().unwrap();
    assert!(after.max_min_ratio < stats.before.max_min_ratio, "{stats:?}");
    assert!(report.total_pastes > 0);
    let from_report = cmd_stats(&StatsArgs {
        dataset: fx.dataset.clone(),
        format: fx.format,
        augmented: None,
        report: Some(fx.path("out").join(RUN_REPORT_FILE)),
    })
    .unwrap();
    assert_eq!(from_report.after.unwrap().counts, after.counts);
}

#[test]
fn preview_variants_use_distinct_instances() {
    let fx = coco(ToySpec::new(&["cat", "dog"], 12, 8));
    let dataset = Dataset::open(fx.format, &fx.dataset).unwrap();
    let id = dataset.images[0].image_id.clone();
    let run = |out: &str| {
        cmd_preview(&PreviewArgs {
            dataset: fx.dataset.clone(),
            format: fx.format,
            bank: fx.bank.clone(),
            config: fx.config(3),
            image_ids: vec![id.clone()],
            n_variants: 4,
            out: fx.path(out),
        })
        .unwrap()
    };
    let items = run("p1");
    assert_eq!(items.len(), 4);
    assert!(items.iter().all(|i| i.category == items[0].category));
    let ids: std::collections::BTreeSet<_> = items.iter().map(|i| i.entry_id.clone()).collect();
    assert_eq!(ids.len(), 4);
    run("p2");
    assert_eq!(tree(&fx.path("p1")), tree(&fx.path("p2")));
    let err = cmd_preview(&PreviewArgs {
        dataset: fx.dataset.clone(),
        format: fx.format,
        bank: fx.bank.clone(),
        config: fx.config(3),
        image_ids: vec!["nope".into()],
        n_variants: 1,
        out: fx.path("p3"),
    })
    .unwrap_err();
    assert!(matches!(err, Error::UnknownImage(_)));
}
