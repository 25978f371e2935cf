//! Load word vectors, resolve dataset labels (including multi-word ones
//! that go through the substitution table) and rank neighbours.
//!
//! `cargo run --example embeddings_similarity [glove.txt]`

use std::io::Cursor;

use sempaste::embedding::{estimate_similarity_flops, similarity};
use sempaste::synthetic::{toy_embeddings, CLUSTERS};
use sempaste::{EmbeddingStore, Result, SimilarityMetric};

pub fn run_example(path: Option<&str>) -> Result<()> {
    let store = match path {
        Some(p) => EmbeddingStore::from_path(p.as_ref(), None, None)?,
        None => {
            let tokens = CLUSTERS.iter().flat_map(|c| c.iter().copied());
            EmbeddingStore::load(Cursor::new(toy_embeddings(tokens, 50, 1)), Some(50))?
        }
    };
    println!("{} vectors of dimension {}", store.len(), store.dimension());

    for label in ["dining table", "potted plant", "traffic light"] {
        match store.resolve_label(label) {
            Ok(v) => println!("{label:>14} -> {}", v.token()),
            Err(e) => println!("{label:>14} -> {e}"),
        }
    }

    let labels = ["cat", "bus", "dining table", "person", "giraffe", "truck", "sofa"];
    let query = store.resolve_label("dog")?;
    for metric in [SimilarityMetric::Cosine, SimilarityMetric::Euclidean] {
        let mut ranked: Vec<(f64, &str)> = labels
            .iter()
            .map(|l| Ok((similarity(metric, query, store.resolve_label(l)?)?, *l)))
            .collect::<Result<_>>()?;
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        println!("\nnearest to dog ({metric:?}):");
        for (s, l) in ranked {
            println!("  {s:>8.4}  {l}");
        }
    }

    // cost of scoring a full COCO bank against a crowded image
    println!("\nsimilarity cost 80 x 20 x 300 = {}", estimate_similarity_flops(80, 20, 300)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let arg = std::env::args().nth(1);
    run_example(arg.as_deref())
}
