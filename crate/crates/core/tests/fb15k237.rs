//! Checks against published FB15k-237 statistics. The dataset is not
//! bundled: set `KGSTRUCTLAB_FB15K237` to a directory holding `train.txt`,
//! `valid.txt` and `test.txt` to run them; otherwise they report a skip.

use std::path::PathBuf;

use kgstructlab::features::{category_distribution, classify_relations, compute_features, DEFAULT_CATEGORY_THRESHOLD};
use kgstructlab::graph::{load_graph_dir, KnowledgeGraph};
use kgstructlab::sampler::{generate_corpus, SamplerParams};

fn dataset() -> Option<KnowledgeGraph> {
    let Some(dir) = std::env::var_os("KGSTRUCTLAB_FB15K237").map(PathBuf::from) else {
        eprintln!("skipped: KGSTRUCTLAB_FB15K237 is not set");
        return None;
    };
    Some(load_graph_dir(&dir).expect("dataset loads").0)
}

#[test]
fn vocabulary_sizes() {
    let Some(g) = dataset() else { return };
    assert_eq!(g.num_entities(), 14_541);
    assert_eq!(g.num_relations(), 237);
}

#[test]
fn many_to_many_triples_dominate_training() {
    let Some(g) = dataset() else { return };
    let cats = classify_relations(&g, DEFAULT_CATEGORY_THRESHOLD).unwrap();
    let counts = category_distribution(&g, &cats);
    let share = counts[3] as f64 / counts.iter().sum::<u64>() as f64;
    assert!(share > 0.70, "n-n share {share}");
    let f = compute_features(&g, DEFAULT_CATEGORY_THRESHOLD).unwrap();
    assert!(f.category_gini > 0.0);
}

#[test]
fn sixty_connected_samples() {
    let Some(g) = dataset() else { return };
    let corpus = generate_corpus(&g, 60, &SamplerParams::default(), 0).unwrap();
    assert_eq!(corpus.len(), 60);
    assert!(corpus.iter().all(|s| s.meta.connected));
}
