//! Tokenizer and transformer parity against checked-in reference fixtures.

use std::path::PathBuf;

use deepfeat::llm::features::{pack_windows, pool_rows, tokenize_series};
use deepfeat::llm::{llm_features, BpeVocab, Gpt2Config, Gpt2Weights, SerializationConfig};
use deepfeat::tsar::TensorArchive;
use proptest::prelude::*;
use serde::Deserialize;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[derive(Deserialize)]
struct TokenCase {
    text: String,
    ids: Vec<u32>,
}

#[derive(Deserialize)]
struct ForwardCase {
    ids: Vec<u32>,
    rows: usize,
    cols: usize,
    blob: String,
}

#[derive(Deserialize)]
struct ForwardFixtures {
    cases: Vec<ForwardCase>,
}

fn read_f32(path: PathBuf) -> Vec<f32> {
    std::fs::read(path).unwrap().chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()
}

fn token_cases() -> Vec<TokenCase> {
    serde_json::from_str(&std::fs::read_to_string(fixture("tokenizer_cases.json")).unwrap()).unwrap()
}

#[test]
fn vocab_is_complete() {
    let v = BpeVocab::gpt2().unwrap();
    assert_eq!(v.len(), 50_257);
    assert_eq!(v.merge_count(), 50_000);
    for id in 0..50_257u32 {
        assert_eq!(v.id(v.token(id).unwrap()), Some(id));
    }
}

#[test]
fn tokenizer_matches_reference_fixtures() {
    let v = BpeVocab::gpt2().unwrap();
    let cases = token_cases();
    assert!(cases.len() >= 50);
    for c in &cases {
        assert_eq!(v.encode(&c.text).unwrap(), c.ids, "text {:?}", c.text);
        assert_eq!(v.decode(&c.ids).unwrap(), c.text);
    }
}

#[test]
fn known_ids() {
    let v = BpeVocab::gpt2().unwrap();
    assert_eq!(v.encode("Hello world").unwrap(), vec![15496, 995]);
    assert_eq!(v.decode(&[15496, 995]).unwrap(), "Hello world");
    assert_eq!(v.decode(&[]).unwrap(), "");
    assert!(v.decode(&[50_257]).is_err());
}

#[test]
fn chunked_tokenization_equals_whole_text() {
    let v = BpeVocab::gpt2().unwrap();
    let cfg = SerializationConfig::default();
    let series = [1.5, 2.0, -0.25, 1234.5678, -0.0004, 7.0];
    let whole = v.encode(&deepfeat::llm::serialize_series(&series, &cfg).unwrap()).unwrap();
    let chunks: Vec<u32> = tokenize_series(&series, &cfg, &v).unwrap().concat();
    assert_eq!(chunks, whole);
}

#[test]
fn forward_matches_reference_fixtures() {
    let w = Gpt2Weights::<f32>::load(fixture("tiny_gpt2.tsar")).unwrap();
    assert_eq!(w.config.n_embd, 128);
    assert_eq!(w.blocks.len(), 2);
    let fx: ForwardFixtures = serde_json::from_str(&std::fs::read_to_string(fixture("forward_cases.json")).unwrap()).unwrap();
    assert_eq!(fx.cases.len(), 3);
    for c in &fx.cases {
        let expect = read_f32(fixture(&c.blob));
        let got = w.forward(&c.ids).unwrap();
        assert_eq!(got.shape(), &[c.rows, c.cols]);
        let diff = got.data().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(diff < 1e-3, "case {:?}: max abs diff {diff}", c.ids.len());
    }
}

#[test]
fn forward_is_causal_and_deterministic() {
    let w = Gpt2Weights::<f32>::load(fixture("tiny_gpt2.tsar")).unwrap();
    let ids: Vec<u32> = (0..40).map(|i| (i * 37 % 1000) as u32).collect();
    let full = w.forward(&ids).unwrap();
    assert_eq!(full, w.forward(&ids).unwrap());
    for t in [1, 5, 17, 39] {
        let part = w.forward(&ids[..t]).unwrap();
        let diff = part.data().iter().zip(&full.data()[..t * 128]).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(diff < 1e-5, "prefix {t}: {diff}");
    }
}

#[test]
fn layer_norm_inputs_are_centred() {
    let w = Gpt2Weights::<f32>::load(fixture("tiny_gpt2.tsar")).unwrap();
    let mut calls = 0;
    let mut worst = 0.0f32;
    w.forward_inspect(&[1, 2, 3, 4, 5, 6], &mut |rows| {
        calls += 1;
        for r in rows.chunks(128) {
            worst = worst.max((r.iter().sum::<f32>() / 128.0).abs());
        }
    })
    .unwrap();
    assert_eq!(calls, 2 * 2 + 1);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn tsar_fixture_round_trips_bitwise() {
    let bytes = std::fs::read(fixture("tiny_gpt2.tsar")).unwrap();
    let a = TensorArchive::from_reader(bytes.as_slice()).unwrap();
    assert_eq!(a.to_bytes(), bytes);
    assert_eq!(a.names().filter(|n| n.ends_with(".ln_1.w")).count(), 2);
}

fn wide_surrogate() -> Gpt2Weights<f64> {
    let cfg = Gpt2Config { vocab_size: 50_257, n_ctx: 1024, n_embd: 64, n_layer: 1, n_head: 1, layer_norm_eps: 1e-5 };
    Gpt2Weights::random(cfg, 5).unwrap()
}

#[test]
fn long_series_pool_over_windows() {
    let v = BpeVocab::gpt2().unwrap();
    let w = wide_surrogate();
    let cfg = SerializationConfig::default();
    let series: Vec<f64> = (0..300).map(|i| ((i * 31) % 97) as f64 * 0.731 - 20.0).collect();
    let chunks = tokenize_series(&series, &cfg, &v).unwrap();
    let total: usize = chunks.iter().map(Vec::len).sum();
    assert!(total > 1024 && total <= 2048, "{total} tokens");
    let windows = pack_windows(&chunks, 1024).unwrap();
    assert_eq!(windows.len(), 2);
    let pooled = llm_features(&series, &cfg, &v, &w).unwrap();
    assert_eq!(pooled.len(), 64);
    let outs: Vec<_> = windows.iter().map(|x| w.forward(x).unwrap()).collect();
    let means: Vec<_> = outs.iter().map(|o| pool_rows(std::slice::from_ref(o)).unwrap()).collect();
    let (n0, n1) = (windows[0].len() as f64, windows[1].len() as f64);
    for k in 0..64 {
        let expect = (n0 * means[0].data()[k] + n1 * means[1].data()[k]) / (n0 + n1);
        assert!((pooled.data()[k] - expect).abs() < 1e-6);
    }
}

#[test]
fn single_token_features_equal_its_hidden_state() {
    let v = BpeVocab::gpt2().unwrap();
    let w = wide_surrogate();
    let cfg = SerializationConfig { fractional_digits: 0, separator: ", ".into() };
    let ids = tokenize_series(&[7.0], &cfg, &v).unwrap().concat();
    assert_eq!(ids, vec![22]);
    let f = llm_features(&[7.0], &cfg, &v, &w).unwrap();
    assert_eq!(f.data(), w.forward(&ids).unwrap().data());
}

fn short_context_surrogate() -> &'static Gpt2Weights<f64> {
    static W: std::sync::OnceLock<Gpt2Weights<f64>> = std::sync::OnceLock::new();
    W.get_or_init(|| {
        let cfg = Gpt2Config { vocab_size: 50_257, n_ctx: 32, n_embd: 64, n_layer: 2, n_head: 1, layer_norm_eps: 1e-5 };
        Gpt2Weights::random(cfg, 11).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ascii_round_trip(s in "[ -~\t\n\r]{0,64}") {
        let v = BpeVocab::gpt2().unwrap();
        prop_assert_eq!(v.decode(&v.encode(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn serialized_values_parse_back(values in prop::collection::vec(-1e4f64..1e4, 1..20), digits in 0usize..6) {
        let cfg = SerializationConfig { fractional_digits: digits, separator: ", ".into() };
        let text = deepfeat::llm::serialize_series(&values, &cfg).unwrap();
        let parsed: Vec<f64> = text.split(", ").map(|t| t.parse().unwrap()).collect();
        prop_assert_eq!(parsed.len(), values.len());
        for (p, v) in parsed.iter().zip(&values) {
            prop_assert!((p - v).abs() <= 0.5 * 10f64.powi(-(digits as i32)) + 1e-9);
        }
    }

    #[test]
    fn features_are_finite_and_pure(values in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let v = BpeVocab::gpt2().unwrap();
        let w = short_context_surrogate();
        let cfg = SerializationConfig::default();
        let a = llm_features(&values, &cfg, &v, w).unwrap();
        prop_assert!(a.all_finite());
        prop_assert_eq!(a.len(), w.config.n_embd);
        prop_assert_eq!(a, llm_features(&values, &cfg, &v, w).unwrap());
    }
}
