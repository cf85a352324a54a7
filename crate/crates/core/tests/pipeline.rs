//! Library-level pipeline: generate, persist, reload, cluster, score.

use avkm_core::avkmeans::{run, AvkmConfig, TwoViews};
use avkm_core::corpus::load_corpus;
use avkm_core::dataprep::{generate_synthetic, synthetic_embeddings, SyntheticSpec};
use avkm_core::encoders::{Architecture, Encoder, EncoderConfig};
use avkm_core::evaluation::evaluate;
use avkm_core::kmeans::{read_assignment_csv, write_assignment_csv};

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n: 200,
        k: 4,
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn synthetic_corpus_survives_a_jsonl_round_trip() {
    let corpus = generate_synthetic(&small_spec(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    corpus.write_jsonl(&path).unwrap();
    let (back, summary) = load_corpus(&path).unwrap();
    assert_eq!(summary.loaded, 200);
    assert_eq!(back.instances.len(), corpus.instances.len());
    assert_eq!(back.gold_cluster_count(), Some(4));
    for (a, b) in corpus.instances.iter().zip(&back.instances) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.gold_label, b.gold_label);
    }
}

#[test]
fn clustering_recovers_planted_labels_and_checkpoints_reload() {
    let corpus = generate_synthetic(&small_spec(1)).unwrap();
    let table = synthetic_embeddings(&corpus.vocabulary, 20, 1).unwrap().into_shared();
    let encoder = |seed| {
        let config = EncoderConfig::new(Architecture::Averaging, 20)
            .with_seed(seed)
            .with_tuned_embeddings(true);
        Encoder::new(config, table.clone()).unwrap()
    };
    let views = TwoViews::from_corpus(&corpus);
    let config = AvkmConfig {
        t: 3,
        seed: 1,
        ..AvkmConfig::new(4)
    };
    let state = run(&views, encoder(3), encoder(4), &config).unwrap();
    assert_eq!(state.semi_iterations, 6);

    let gold: Vec<Option<usize>> = corpus.instances.iter().map(|i| i.gold_label).collect();
    let metrics = evaluate(&gold, &state.z1).unwrap();
    assert!(metrics.acc >= 0.9, "acc {}", metrics.acc);

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("assignment.csv");
    let ids: Vec<&str> = corpus.instances.iter().map(|i| i.id.as_str()).collect();
    write_assignment_csv(&csv, &ids, &state.z1).unwrap();
    let rows = read_assignment_csv(&csv).unwrap();
    let reread: Vec<usize> = rows.iter().map(|(_, c)| *c).collect();
    assert_eq!(reread, state.z1);

    let ckpt = dir.path().join("query.json");
    state.query_encoder.save(&ckpt).unwrap();
    let reloaded = Encoder::load(&ckpt).unwrap();
    let refs = views.get(avkm_core::corpus::ViewKind::Query);
    assert_eq!(
        reloaded.encode(refs).unwrap(),
        state.query_encoder.encode(refs).unwrap()
    );
}
