mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use sempaste::synthetic::ToySpec;

fn sempaste(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sempaste"))
        .args(args)
        .env_remove("SEMPASTE_EMBEDDINGS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&sempaste(&["--help"])), 0);
    assert_eq!(code(&sempaste(&[])), 1);
    assert_eq!(code(&sempaste(&["augment", "--format", "coco"])), 1);
    assert_eq!(code(&sempaste(&["stats", "--dataset", "x", "--format", "yolo"])), 1);
    let o = sempaste(&["stats", "--dataset", "/no/such/dir", "--format", "coco"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn full_workflow() {
    let fx = coco(ToySpec::new(&COCO_LABELS, 6, 21));
    let bank = fx.path("bank_cli");
    let o = sempaste(&[
        "build-bank", "--dataset", s(&fx.dataset), "--format", "coco", "--out", s(&bank),
        "--embeddings", s(&fx.embeddings),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(bank.join("manifest.json").exists());

    let config = fx.path("aug.toml");
    std::fs::write(&config, format!("seed = 3\nembedding_path = {:?}\n", s(&fx.embeddings))).unwrap();
    let out = fx.path("out_cli");
    let o = sempaste(&[
        "augment", "--dataset", s(&fx.dataset), "--format", "coco", "--bank", s(&bank), "--out", s(&out),
        "--config", s(&config), "--blending", "gaussian_5x5", "--workers", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("epoch 0: 6 images"));

    let o = sempaste(&["stats", "--dataset", s(&fx.dataset), "--format", "coco", "--augmented", s(&out)]);
    assert_eq!(code(&o), 0);
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(stats["after"]["total"].as_u64().unwrap() >= stats["before"]["total"].as_u64().unwrap());

    let o = sempaste(&[
        "preview", "--dataset", s(&fx.dataset), "--format", "coco", "--bank", s(&bank), "--out", s(&fx.path("pv")),
        "--image-id", "1", "--n-variants", "2", "--embeddings", s(&fx.embeddings),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
}

#[test]
fn config_and_data_errors() {
    let fx = coco(ToySpec::new(&COCO_LABELS, 3, 22));
    let bad = fx.path("bad.toml");
    std::fs::write(&bad, "colour = \"red\"\n").unwrap();
    let args = |config: &Path, out: &str| {
        sempaste(&[
            "augment", "--dataset", s(&fx.dataset), "--format", "coco", "--bank", s(&fx.bank), "--out",
            s(&fx.path(out)), "--config", s(config), "--embeddings", s(&fx.embeddings),
        ])
    };
    assert_eq!(code(&args(&bad, "o1")), 1);
    assert_eq!(code(&args(&fx.path("missing.toml"), "o2")), 3);

    // vocabulary lacking one dataset label
    let text = std::fs::read_to_string(&fx.embeddings).unwrap();
    let cut = fx.path("cut.txt");
    std::fs::write(&cut, text.lines().filter(|l| !l.starts_with("car ")).collect::<Vec<_>>().join("\n")).unwrap();
    let o = sempaste(&[
        "build-bank", "--dataset", s(&fx.dataset), "--format", "coco", "--out", s(&fx.path("b2")),
        "--embeddings", s(&cut),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("car"));
}
