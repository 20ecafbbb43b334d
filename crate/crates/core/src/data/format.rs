//! Line-oriented dataset files.
//!
//! A dataset file is JSON Lines. Line 1 is the header record:
//!
//! ```text
//! {"format":"tfn-dataset","version":1,"p":12,"q":12,"word_dim":300,
//!  "label_range":[-3.0,3.0],"source":"synthetic","generator_spec":{...},
//!  "lexicon":"data.lexicon.txt"}
//! ```
//!
//! `generator_spec` and `lexicon` are optional. Every following non-blank
//! line is one utterance:
//!
//! ```text
//! {"id":"utt00000","speaker":"spk00","video":"spk00_v00","label":1.25,
//!  "words":["fill03",[0.1, ...], ...],"visual":[[...], ...],"acoustic":[[...], ...]}
//! ```
//!
//! `video` is optional and defaults to `speaker`. Each entry of `words` is
//! either a token looked up in the lexicon or an inline vector of `word_dim`
//! numbers. The lexicon sidecar uses the GloVe text layout, one
//! `token v1 v2 ... v_d` per line, and is resolved relative to the dataset
//! file. Numbers are written in shortest round-trip decimal form, so a
//! save/load cycle is lossless.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{validate_utterance, Dataset, DatasetHeader, Source, SynthSpec, Utterance, Word};
use crate::error::{DataError, Result, TfnError};

pub const FORMAT_TAG: &str = "tfn-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    format: String,
    version: u32,
    p: usize,
    q: usize,
    word_dim: usize,
    label_range: [f64; 2],
    source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator_spec: Option<SynthSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lexicon: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    id: String,
    speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    video: Option<String>,
    label: f64,
    words: Vec<WordRecord>,
    visual: Vec<Vec<f64>>,
    acoustic: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum WordRecord {
    Token(String),
    Vector(Vec<f64>),
}

/// Token to word-vector table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<Arc<str>, Arc<[f64]>>,
}

impl Lexicon {
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) {
        self.entries.insert(token.into(), vector.into());
    }

    pub fn get(&self, token: &str) -> Option<(Arc<str>, Arc<[f64]>)> {
        self.entries
            .get_key_value(token)
            .map(|(k, v)| (Arc::clone(k), Arc::clone(v)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    let file = File::open(path).map_err(|e| TfnError::io(path, e))?;
    let mut lex = Lexicon::default();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TfnError::io(path, e))?;
        let n = i + 1;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| DataError::Lexicon {
            line: n,
            message: e.to_string(),
        })?;
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Lexicon {
                line: n,
                message: format!("token `{token}` has no finite vector"),
            }
            .into());
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(DataError::Lexicon {
                    line: n,
                    message: format!("vector length {} differs from {d}", values.len()),
                }
                .into())
            }
            _ => {}
        }
        lex.insert(token, values);
    }
    Ok(lex)
}

pub fn write_lexicon(lexicon: &Lexicon, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| TfnError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let sorted: BTreeMap<&str, &Arc<[f64]>> = lexicon.entries.iter().map(|(k, v)| (&**k, v)).collect();
    for (token, vector) in sorted {
        let mut line = String::from(token);
        for v in vector.iter() {
            line.push(' ');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}").map_err(|e| TfnError::io(path, e))?;
    }
    w.flush().map_err(|e| TfnError::io(path, e))
}

/// Reads a dataset file, resolving its lexicon sidecar if the header names one.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| TfnError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| TfnError::io(path, e))?,
        None => return Err(DataError::NoUtterances.into()),
    };
    let (header, lexicon_name) = parse_header(&header_line)?;
    let lexicon = match lexicon_name {
        Some(name) => {
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            Some(load_lexicon(&dir.join(name))?)
        }
        None => None,
    };
    let mut utterances = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| TfnError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        utterances.push(parse_utterance(&line, i + 2, &header, lexicon.as_ref())?);
    }
    if utterances.is_empty() {
        return Err(DataError::NoUtterances.into());
    }
    Ok(Dataset { header, utterances })
}

/// Parses dataset text already in memory. Token words need `lexicon`.
pub fn parse_dataset(text: &str, lexicon: Option<&Lexicon>) -> Result<Dataset> {
    let mut lines = text.lines();
    let Some(first) = lines.next().filter(|l| !l.trim().is_empty()) else {
        return Err(DataError::NoUtterances.into());
    };
    let (header, _) = parse_header(first)?;
    let mut utterances = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        utterances.push(parse_utterance(line, i + 2, &header, lexicon)?);
    }
    if utterances.is_empty() {
        return Err(DataError::NoUtterances.into());
    }
    Ok(Dataset { header, utterances })
}

fn parse_header(line: &str) -> Result<(DatasetHeader, Option<String>)> {
    let bad = |message: String| DataError::Header { line: 1, message };
    let rec: HeaderRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    if rec.format != FORMAT_TAG {
        return Err(bad(format!("format tag `{}`, expected `{FORMAT_TAG}`", rec.format)).into());
    }
    if rec.version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {}", rec.version)).into());
    }
    if rec.p == 0 || rec.q == 0 || rec.word_dim == 0 {
        return Err(bad("feature dimensions must be positive".into()).into());
    }
    if rec.label_range != [super::LABEL_MIN, super::LABEL_MAX] {
        return Err(bad(format!("label_range must be [-3, 3], got {:?}", rec.label_range)).into());
    }
    let header = DatasetHeader {
        p: rec.p,
        q: rec.q,
        word_dim: rec.word_dim,
        label_range: rec.label_range,
        source: rec.source,
        generator_spec: rec.generator_spec,
    };
    Ok((header, rec.lexicon))
}

fn parse_utterance(line: &str, n: usize, header: &DatasetHeader, lexicon: Option<&Lexicon>) -> Result<Utterance> {
    let rec: UtteranceRecord = serde_json::from_str(line).map_err(|e| DataError::Malformed {
        line: n,
        message: e.to_string(),
    })?;
    let mut words = Vec::with_capacity(rec.words.len());
    for w in rec.words {
        words.push(match w {
            WordRecord::Vector(v) => Word::inline(v),
            WordRecord::Token(t) => {
                let lex = lexicon.ok_or(DataError::MissingLexicon { line: n })?;
                let (token, vector) = lex.get(&t).ok_or(DataError::UnknownToken { line: n, token: t })?;
                Word {
                    token: Some(token),
                    vector,
                }
            }
        });
    }
    let u = Utterance {
        video_id: rec.video.unwrap_or_else(|| rec.speaker.clone()),
        id: rec.id,
        speaker_id: rec.speaker,
        words,
        visual_frames: rec.visual,
        acoustic_frames: rec.acoustic,
        label: rec.label,
    };
    validate_utterance(header, &u).map_err(|e| match e {
        TfnError::Data(d) => TfnError::Data(d.at_line(n)),
        other => other,
    })?;
    Ok(u)
}

/// Writes `dataset` to `path`. Words that carry a token are written by token
/// and their vectors go to a `<stem>.lexicon.txt` sidecar in the same
/// directory.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let mut lexicon = Lexicon::default();
    for u in &dataset.utterances {
        for w in &u.words {
            if let Some(t) = &w.token {
                match lexicon.entries.get(t) {
                    Some(v) if v != &w.vector => {
                        return Err(TfnError::Config(format!("token `{t}` maps to two different vectors")));
                    }
                    Some(_) => {}
                    None => {
                        lexicon.entries.insert(Arc::clone(t), Arc::clone(&w.vector));
                    }
                }
            }
        }
    }
    let lexicon_name = if lexicon.is_empty() {
        None
    } else {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
        let name = format!("{stem}.lexicon.txt");
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        write_lexicon(&lexicon, &dir.join(&name))?;
        Some(name)
    };

    let file = File::create(path).map_err(|e| TfnError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let h = &dataset.header;
    let header = HeaderRecord {
        format: FORMAT_TAG.to_string(),
        version: FORMAT_VERSION,
        p: h.p,
        q: h.q,
        word_dim: h.word_dim,
        label_range: h.label_range,
        source: h.source,
        generator_spec: h.generator_spec.clone(),
        lexicon: lexicon_name,
    };
    let io = |e: std::io::Error| TfnError::io(path, e);
    let json = |e: serde_json::Error| TfnError::Config(e.to_string());
    writeln!(w, "{}", serde_json::to_string(&header).map_err(json)?).map_err(io)?;
    for u in &dataset.utterances {
        let rec = UtteranceRecord {
            id: u.id.clone(),
            speaker: u.speaker_id.clone(),
            video: (u.video_id != u.speaker_id).then(|| u.video_id.clone()),
            label: u.label,
            words: u
                .words
                .iter()
                .map(|w| match &w.token {
                    Some(t) => WordRecord::Token(t.to_string()),
                    None => WordRecord::Vector(w.vector.to_vec()),
                })
                .collect(),
            visual: u.visual_frames.clone(),
            acoustic: u.acoustic_frames.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec).map_err(json)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"format":"tfn-dataset","version":1,"p":2,"q":1,"word_dim":3,"label_range":[-3.0,3.0],"source":"ingested"}"#;

    fn record(label: &str) -> String {
        format!(
            r#"{{"id":"a","speaker":"s1","label":{label},"words":[[1,2,3]],"visual":[[1,2],[3,4]],"acoustic":[[0.5]]}}"#
        )
    }

    #[test]
    fn empty_input_has_no_utterances() {
        let err = parse_dataset("", None).unwrap_err();
        assert_eq!(err.to_string(), "no utterances in dataset");
        let err = parse_dataset(HEADER, None).unwrap_err();
        assert!(matches!(err, TfnError::Data(DataError::NoUtterances)));
    }

    #[test]
    fn label_out_of_range_reports_line() {
        let text = format!("{HEADER}\n{}\n{}\n", record("1.0"), record("3.5"));
        match parse_dataset(&text, None).unwrap_err() {
            TfnError::Data(DataError::LabelOutOfRange { line, value }) => {
                assert_eq!(line, 3);
                assert_eq!(value, 3.5);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn distinct_errors() {
        let dim = format!(
            "{HEADER}\n{}",
            r#"{"id":"a","speaker":"s","label":0,"words":[[1,2]],"visual":[[1,2]],"acoustic":[[1]]}"#
        );
        assert!(matches!(
            parse_dataset(&dim, None).unwrap_err(),
            TfnError::Data(DataError::DimMismatch { line: 2, .. })
        ));
        let empty = format!(
            "{HEADER}\n{}",
            r#"{"id":"a","speaker":"s","label":0,"words":[[1,2,3]],"visual":[],"acoustic":[[1]]}"#
        );
        assert!(matches!(
            parse_dataset(&empty, None).unwrap_err(),
            TfnError::Data(DataError::EmptyModality { line: 2, .. })
        ));
        let malformed = format!("{HEADER}\n{{\"id\":");
        assert!(matches!(
            parse_dataset(&malformed, None).unwrap_err(),
            TfnError::Data(DataError::Malformed { line: 2, .. })
        ));
        let token = format!(
            "{HEADER}\n{}",
            r#"{"id":"a","speaker":"s","label":0,"words":["hello"],"visual":[[1,2]],"acoustic":[[1]]}"#
        );
        assert!(matches!(
            parse_dataset(&token, None).unwrap_err(),
            TfnError::Data(DataError::MissingLexicon { line: 2 })
        ));
        let mut lex = Lexicon::default();
        lex.insert("bye", vec![0.0; 3]);
        assert!(matches!(
            parse_dataset(&token, Some(&lex)).unwrap_err(),
            TfnError::Data(DataError::UnknownToken { line: 2, .. })
        ));
        let unknown_key = format!(
            "{HEADER}\n{}",
            r#"{"id":"a","speaker":"s","label":0,"extra":1,"words":[[1,2,3]],"visual":[[1,2]],"acoustic":[[1]]}"#
        );
        assert!(matches!(
            parse_dataset(&unknown_key, None).unwrap_err(),
            TfnError::Data(DataError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn bad_header() {
        let text = format!("{}\n{}", HEADER.replace("tfn-dataset", "other"), record("0"));
        assert!(matches!(
            parse_dataset(&text, None).unwrap_err(),
            TfnError::Data(DataError::Header { line: 1, .. })
        ));
    }

    #[test]
    fn video_defaults_to_speaker() {
        let text = format!("{HEADER}\n{}", record("-3"));
        let d = parse_dataset(&text, None).unwrap();
        assert_eq!(d.utterances[0].video_id, "s1");
        assert_eq!(d.utterances[0].label, -3.0);
    }
}
