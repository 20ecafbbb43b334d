//! Utterance datasets: in-memory types, the line-oriented file format, the
//! synthetic generator, and profiling.

mod format;
mod stats;
mod synth;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use format::{load_dataset, load_lexicon, parse_dataset, save_dataset, write_lexicon, Lexicon};
pub use stats::{dataset_stats, DatasetStats, LengthStats};
pub use synth::{synth_generate, SynthSpec};

use crate::error::{Result, TfnError};

pub const LABEL_MIN: f64 = -3.0;
pub const LABEL_MAX: f64 = 3.0;
pub const DEFAULT_WORD_DIM: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Ingested,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    /// Visual feature dimension.
    pub p: usize,
    /// Acoustic feature dimension.
    pub q: usize,
    pub word_dim: usize,
    pub label_range: [f64; 2],
    pub source: Source,
    pub generator_spec: Option<SynthSpec>,
}

impl DatasetHeader {
    pub fn new(p: usize, q: usize, word_dim: usize, source: Source) -> Self {
        DatasetHeader {
            p,
            q,
            word_dim,
            label_range: [LABEL_MIN, LABEL_MAX],
            source,
            generator_spec: None,
        }
    }
}

/// One word of an utterance. Vectors resolved from a lexicon keep their token
/// so the dataset can be written back in token form.
#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub token: Option<Arc<str>>,
    pub vector: Arc<[f64]>,
}

impl Word {
    pub fn inline(vector: Vec<f64>) -> Self {
        Word {
            token: None,
            vector: vector.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    /// Source video; defaults to the speaker id when a dataset does not
    /// distinguish videos.
    pub video_id: String,
    pub words: Vec<Word>,
    pub visual_frames: Vec<Vec<f64>>,
    pub acoustic_frames: Vec<Vec<f64>>,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub utterances: Vec<Utterance>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Distinct speaker ids in sorted order.
    pub fn speakers(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.utterances.iter().map(|u| u.speaker_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Copy of the dataset restricted to the given utterance indices.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            header: self.header.clone(),
            utterances: indices.iter().map(|&i| self.utterances[i].clone()).collect(),
        }
    }

    /// Checks every utterance against the header.
    pub fn validate(&self) -> Result<()> {
        if self.utterances.is_empty() {
            return Err(crate::DataError::NoUtterances.into());
        }
        for (i, u) in self.utterances.iter().enumerate() {
            validate_utterance(&self.header, u).map_err(|e| match e {
                TfnError::Data(d) => TfnError::Data(d.at_line(i + 2)),
                other => other,
            })?;
        }
        Ok(())
    }
}

/// Validation without line information (line 0); the loader rewrites the line.
pub(crate) fn validate_utterance(header: &DatasetHeader, u: &Utterance) -> Result<()> {
    use crate::DataError as D;
    if !u.label.is_finite() || !(LABEL_MIN..=LABEL_MAX).contains(&u.label) {
        return Err(D::LabelOutOfRange { line: 0, value: u.label }.into());
    }
    let modalities: [(&str, usize, Vec<&[f64]>); 3] = [
        ("words", header.word_dim, u.words.iter().map(|w| &w.vector[..]).collect()),
        ("visual", header.p, u.visual_frames.iter().map(Vec::as_slice).collect()),
        ("acoustic", header.q, u.acoustic_frames.iter().map(Vec::as_slice).collect()),
    ];
    for (name, dim, frames) in modalities {
        if frames.is_empty() {
            return Err(D::EmptyModality {
                line: 0,
                modality: name.to_string(),
            }
            .into());
        }
        for f in frames {
            if f.len() != dim {
                return Err(D::DimMismatch {
                    line: 0,
                    field: name.to_string(),
                    expected: dim,
                    actual: f.len(),
                }
                .into());
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(D::NonFinite {
                    line: 0,
                    field: name.to_string(),
                }
                .into());
            }
        }
    }
    Ok(())
}

impl crate::DataError {
    pub(crate) fn at_line(self, n: usize) -> Self {
        use crate::DataError as D;
        match self {
            D::Malformed { message, .. } => D::Malformed { line: n, message },
            D::Header { message, .. } => D::Header { line: n, message },
            D::DimMismatch {
                field, expected, actual, ..
            } => D::DimMismatch {
                line: n,
                field,
                expected,
                actual,
            },
            D::LabelOutOfRange { value, .. } => D::LabelOutOfRange { line: n, value },
            D::EmptyModality { modality, .. } => D::EmptyModality { line: n, modality },
            D::NonFinite { field, .. } => D::NonFinite { line: n, field },
            D::UnknownToken { token, .. } => D::UnknownToken { line: n, token },
            D::MissingLexicon { .. } => D::MissingLexicon { line: n },
            other => other,
        }
    }
}
