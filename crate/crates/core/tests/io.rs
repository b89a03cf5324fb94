// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use proptest::prelude::*;
use resid_scope::dataset::{dataset_to_jsonl, load_dataset, parse_dataset, write_dataset};
use resid_scope::io::embeddings::{EmbeddingRow, EmbeddingTable, Meaning};
use resid_scope::io::{
    load_weights, save_weights, sweep_from_csv, sweep_to_csv, sweep_to_svg, weights_from_bytes, weights_to_bytes,
    TensorSchema, Tokenizer,
};
use resid_scope::metrics::{aggregate, AggregateOptions, CellSamples, SweepAxis, SweepResult};
use resid_scope::model::{ModelConfig, Weights};
use resid_scope::synth::{synthetic_instances, tiny_config};
use resid_scope::Error;

#[test]
fn weights_round_trip_through_both_schemas() {
    let cfg = ModelConfig::tiny(2, 8, 2, 1, 12, 30);
    let w = Weights::random(&cfg, 3).unwrap();
    for schema in [TensorSchema::Llama, TensorSchema::Tiny] {
        let bytes = weights_to_bytes(&w, schema).unwrap();
        assert_eq!(weights_from_bytes(&bytes, &cfg).unwrap(), w, "{schema:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    save_weights(&path, &w, TensorSchema::Llama).unwrap();
    assert_eq!(load_weights(&path, &cfg).unwrap(), w);
}

#[test]
fn weights_with_the_wrong_config_are_rejected() {
    let cfg = ModelConfig::tiny(2, 8, 2, 1, 12, 30);
    let w = Weights::random(&cfg, 3).unwrap();
    let bytes = weights_to_bytes(&w, TensorSchema::Llama).unwrap();
    let other = ModelConfig::tiny(2, 8, 2, 2, 12, 30);
    assert!(weights_from_bytes(&bytes, &other).is_err());
    let missing = ModelConfig::tiny(3, 8, 2, 1, 12, 30);
    assert!(weights_from_bytes(&bytes, &missing).is_err());
    assert!(weights_from_bytes(b"not a safetensors file", &cfg).is_err());
    let err = load_weights("/nonexistent/model.safetensors", &cfg).unwrap_err();
    assert!(err.is_io());
}

#[test]
fn hugging_face_config_keys_are_accepted() {
    let cfg = ModelConfig::from_json_str(
        r#"{"num_hidden_layers": 16, "hidden_size": 2048, "num_attention_heads": 32,
            "num_key_value_heads": 8, "intermediate_size": 8192, "vocab_size": 128256,
            "rope_theta": 500000.0, "rms_norm_eps": 1e-5, "max_position_embeddings": 131072,
            "rope_scaling": {"factor": 32.0, "low_freq_factor": 1.0, "high_freq_factor": 4.0,
                             "original_max_position_embeddings": 8192, "rope_type": "llama3"},
            "tie_word_embeddings": true, "model_type": "llama"}"#,
    )
    .unwrap();
    assert_eq!((cfg.num_layers, cfg.hidden_dim, cfg.num_heads, cfg.num_kv_heads), (16, 2048, 32, 8));
    assert_eq!(cfg.head_dim(), 64);
    assert_eq!(cfg.rope_scaling.unwrap().factor, 32.0);
    assert!(ModelConfig::from_json_str(r#"{"num_layers": 1}"#).is_err());
}

#[test]
fn datasets_round_trip_and_name_bad_lines() {
    let rows = synthetic_instances(&tiny_config(), 4, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_dataset(&path, &rows).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), rows);

    let mut text = dataset_to_jsonl(&rows).unwrap();
    text.push_str("{\"id\": \"broken\"}\n");
    match parse_dataset(&text, "d.jsonl") {
        Err(Error::Validation { location, .. }) => assert_eq!(location, "d.jsonl:5"),
        other => panic!("expected a validation error, got {other:?}"),
    }
    let dup = format!("{}{}", dataset_to_jsonl(&rows[..1]).unwrap(), dataset_to_jsonl(&rows[..1]).unwrap());
    assert!(parse_dataset(&dup, "dup").unwrap_err().to_string().contains("duplicate"));

    let mut bad = rows[0].clone();
    bad.c_l[0] = bad.c_f[0];
    let text = dataset_to_jsonl(&[bad]).unwrap();
    assert!(matches!(parse_dataset(&text, "x"), Err(Error::Validation { .. })));
}

#[test]
fn embeddings_round_trip_and_reject_ragged_rows() {
    let mut t = EmbeddingTable::default();
    t.insert(EmbeddingRow { id: "a".into(), variant: Meaning::FigurativeMeaning, vector: vec![1.0, 2.0] }).unwrap();
    t.insert(EmbeddingRow { id: "a".into(), variant: Meaning::LiteralMeaning, vector: vec![0.5, -1.0] }).unwrap();
    let text = t.to_jsonl().unwrap();
    assert_eq!(EmbeddingTable::parse(&text, "e").unwrap(), t);
    assert_eq!(t.get("a", Meaning::LiteralMeaning), Some(&[0.5f32, -1.0][..]));
    let ragged = format!("{text}{{\"id\":\"b\",\"variant\":\"figurative_meaning\",\"vector\":[1.0]}}\n");
    match EmbeddingTable::parse(&ragged, "e.jsonl") {
        Err(Error::Validation { location, .. }) => assert_eq!(location, "e.jsonl:3"),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

fn sweep(seed: u64, axis: SweepAxis, cells: usize, n: usize) -> SweepResult {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..cells)
        .map(|c| CellSamples {
            layer: (axis != SweepAxis::Head).then_some(c),
            head: (axis != SweepAxis::Layer).then_some(c % 3),
            series: vec![
                ("delta_f".into(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()),
                ("delta_l".into(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()),
            ],
        })
        .collect();
    aggregate(axis, samples, &AggregateOptions { resamples: 100, seed, ..AggregateOptions::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sweeps_round_trip_through_csv(seed in any::<u64>(), cells in 1usize..6, n in 1usize..6, a in 0usize..3) {
        let axis = [SweepAxis::Layer, SweepAxis::Head, SweepAxis::LayerHead][a];
        let s = sweep(seed, axis, cells, n);
        let back = sweep_from_csv(&sweep_to_csv(&s).unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn byte_tokenizer_round_trips(text in "\\PC{0,40}") {
        let tok = Tokenizer::from_byte_merges(&[(b"t", b"h"), (b"th", b"e"), (b" ", b"the")]).unwrap();
        let ids = tok.encode(&text);
        prop_assert_eq!(tok.decode(&ids), text);
    }
}

#[test]
fn merges_apply_in_rank_order() {
    let tok = Tokenizer::from_byte_merges(&[(b"t", b"h"), (b"th", b"e"), (b" ", b"the")]).unwrap();
    // 256 = "th", 257 = "the", 258 = " the"
    assert_eq!(tok.encode("the the"), vec![257, 258]);
    assert_eq!(tok.encode("tho"), vec![256, u32::from(b'o')]);
}

#[test]
fn svg_has_a_series_per_metric() {
    let s = sweep(1, SweepAxis::Layer, 4, 5);
    let svg = sweep_to_svg(&s, "MLP knockout");
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("class=\"series\"").count(), 2);
    assert!(svg.contains("MLP knockout"));
}
