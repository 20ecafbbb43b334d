//! Dataset files, validation errors and the synthetic generator.

// Oracles index explicitly on purpose.
#![allow(clippy::needless_range_loop)]

use std::io::Write;

use tfn_core::data::{dataset_stats, load_dataset, parse_dataset, save_dataset, synth_generate, Lexicon, SynthSpec};
use tfn_core::embeddings::mean_pool;
use tfn_core::{DataError, TfnError};

const HEADER: &str = r#"{"format":"tfn-dataset","version":1,"p":2,"q":1,"word_dim":2,"label_range":[-3.0,3.0],"source":"ingested"}"#;

fn small_spec() -> SynthSpec {
    SynthSpec {
        n_utterances: 60,
        n_speakers: 6,
        word_dim: 6,
        visual_dim: 3,
        acoustic_dim: 2,
        ..SynthSpec::default()
    }
}

fn parse_one(record: &str) -> Result<tfn_core::data::Dataset, TfnError> {
    parse_dataset(&format!("{HEADER}\n{record}\n"), None)
}

#[test]
fn valid_record_parses_and_defaults_video() {
    let d = parse_one(r#"{"id":"u","speaker":"s","label":0.5,"words":[[1,2]],"visual":[[1,2]],"acoustic":[[3]]}"#).unwrap();
    assert_eq!(d.utterances[0].video_id, "s");
}

#[test]
fn data_errors_carry_line_numbers() {
    let cases = [
        (r#"{"id":"u","speaker":"s","label":4.0,"words":[[1,2]],"visual":[[1,2]],"acoustic":[[3]]}"#, "label"),
        (r#"{"id":"u","speaker":"s","label":0,"words":[[1,2]],"visual":[[1,2,3]],"acoustic":[[3]]}"#, "dim"),
        (r#"{"id":"u","speaker":"s","label":0,"words":[],"visual":[[1,2]],"acoustic":[[3]]}"#, "empty"),
        (r#"{"id":"u","speaker":"s","label":0,"words":["hi"],"visual":[[1,2]],"acoustic":[[3]]}"#, "lexicon"),
        (r#"{"id":"u","speaker":"s""#, "malformed"),
    ];
    for (record, kind) in cases {
        let err = parse_one(record).unwrap_err();
        let ok = match (&err, kind) {
            (TfnError::Data(DataError::LabelOutOfRange { line: 2, value }), "label") => *value == 4.0,
            (TfnError::Data(DataError::DimMismatch { line: 2, expected: 2, actual: 3, .. }), "dim") => true,
            (TfnError::Data(DataError::EmptyModality { line: 2, .. }), "empty") => true,
            (TfnError::Data(DataError::MissingLexicon { line: 2 }), "lexicon") => true,
            (TfnError::Data(DataError::Malformed { line: 2, .. }), "malformed") => true,
            _ => false,
        };
        assert!(ok, "{kind}: {err}");
    }
}

#[test]
fn unknown_token_and_bad_header() {
    let lex = Lexicon::default();
    let text = format!("{HEADER}\n{}\n", r#"{"id":"u","speaker":"s","label":0,"words":["nope"],"visual":[[1,2]],"acoustic":[[3]]}"#);
    assert!(matches!(
        parse_dataset(&text, Some(&lex)),
        Err(TfnError::Data(DataError::UnknownToken { line: 2, .. }))
    ));
    assert!(matches!(
        parse_dataset("{\"format\":\"other\"}\n", None),
        Err(TfnError::Data(DataError::Header { line: 1, .. }))
    ));
    assert!(matches!(parse_dataset(&format!("{HEADER}\n"), None), Err(TfnError::Data(DataError::NoUtterances))));
}

#[test]
fn save_load_round_trip_is_exact() {
    let d = synth_generate(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    save_dataset(&d, &path).unwrap();
    assert!(dir.path().join("d.lexicon.txt").exists());
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, d);
}

#[test]
fn lexicon_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let header = HEADER.replace("}", r#","lexicon":"lex.txt"}"#);
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "{header}").unwrap();
    writeln!(f, r#"{{"id":"u","speaker":"s","label":0,"words":["a"],"visual":[[1,2]],"acoustic":[[3]]}}"#).unwrap();
    std::fs::write(dir.path().join("lex.txt"), "a 1.0 x\n").unwrap();
    assert!(matches!(load_dataset(&path), Err(TfnError::Data(DataError::Lexicon { line: 1, .. }))));
    std::fs::write(dir.path().join("lex.txt"), "a 1.0 2.0\n").unwrap();
    assert_eq!(&load_dataset(&path).unwrap().utterances[0].words[0].vector[..], &[1.0, 2.0]);
    assert!(matches!(load_dataset(&dir.path().join("missing.jsonl")), Err(TfnError::Io { .. })));
}

#[test]
fn generator_is_deterministic_and_seed_sensitive() {
    let a = synth_generate(&small_spec()).unwrap();
    let b = synth_generate(&small_spec()).unwrap();
    let c = synth_generate(&SynthSpec { seed: 1, ..small_spec() }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

/// Recovers `(s_l, s_v, s_a)` from an utterance's raw features.
fn latents(u: &tfn_core::data::Utterance) -> [f64; 3] {
    let words: Vec<&[f64]> = u.words.iter().map(|w| &w.vector[..]).collect();
    let w = mean_pool(&words).unwrap();
    let v = mean_pool(&u.visual_frames).unwrap();
    let a = mean_pool(&u.acoustic_frames).unwrap();
    [w.data()[0] / w.data()[1], v.data()[0], a.data()[0]]
}

/// Ordinary least squares with intercept via normal equations; returns R².
fn ols_r2(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let k = x[0].len() + 1;
    let row = |r: &Vec<f64>| -> Vec<f64> { std::iter::once(1.0).chain(r.iter().copied()).collect() };
    let mut a = vec![vec![0.0; k + 1]; k];
    for (r, &t) in x.iter().zip(y) {
        let v = row(r);
        for i in 0..k {
            for j in 0..k {
                a[i][j] += v[i] * v[j];
            }
            a[i][k] += v[i] * t;
        }
    }
    for c in 0..k {
        let p = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        for r in 0..k {
            if r != c {
                let f = a[r][c] / a[c][c];
                for j in c..=k {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..k).map(|i| a[i][k] / a[i][i]).collect();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (r, &t) in x.iter().zip(y) {
        let pred: f64 = row(r).iter().zip(&beta).map(|(a, b)| a * b).sum();
        ss_res += (t - pred).powi(2);
        ss_tot += (t - mean).powi(2);
    }
    1.0 - ss_res / ss_tot
}

#[test]
fn noiseless_additive_labels_are_linear_in_pooled_features() {
    let spec = SynthSpec {
        n_utterances: 400,
        beta_lv: 0.0,
        beta_la: 0.0,
        beta_va: 0.0,
        gamma: 0.0,
        alpha_l: 1.0,
        alpha_v: -0.5,
        alpha_a: 0.7,
        noise_std: 0.0,
        ..small_spec()
    };
    let d = synth_generate(&spec).unwrap();
    let x: Vec<Vec<f64>> = d.utterances.iter().map(|u| latents(u).to_vec()).collect();
    let y: Vec<f64> = d.utterances.iter().map(|u| u.label).collect();
    assert!(ols_r2(&x, &y) > 0.99);
    for (u, l) in d.utterances.iter().zip(&x) {
        assert!((spec.signal(l[0], l[1], l[2]) - u.label).abs() < 1e-9);
    }
}

#[test]
fn trimodal_labels_follow_the_product() {
    let spec = SynthSpec {
        noise_std: 0.0,
        ..small_spec()
    };
    let d = synth_generate(&spec).unwrap();
    for u in &d.utterances {
        let [l, v, a] = latents(u);
        assert!((spec.signal(l, v, a) - u.label).abs() < 1e-9);
    }
}

#[test]
fn stats_report_counts() {
    let d = synth_generate(&small_spec()).unwrap();
    let s = dataset_stats(&d).unwrap();
    assert_eq!((s.utterances, s.speakers, s.videos), (60, 6, 24));
    assert_eq!(s.label_histogram.iter().sum::<usize>(), 60);
    assert!(s.words.min >= 4 && s.words.max <= 10);
    let mean = d.utterances.iter().map(|u| u.label).sum::<f64>() / 60.0;
    assert!((s.label_mean - mean).abs() < 1e-12);
}

#[test]
fn invalid_spec_is_a_config_error() {
    let bad = SynthSpec { n_speakers: 2, ..small_spec() };
    assert!(matches!(synth_generate(&bad), Err(TfnError::Config(_))));
}
