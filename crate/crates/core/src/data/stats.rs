use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::Dataset;
use crate::error::{DataError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl LengthStats {
    fn of(lengths: impl Iterator<Item = usize>) -> Self {
        let (mut min, mut max, mut sum, mut n) = (usize::MAX, 0, 0usize, 0usize);
        for l in lengths {
            min = min.min(l);
            max = max.max(l);
            sum += l;
            n += 1;
        }
        LengthStats {
            min,
            max,
            mean: sum as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub utterances: usize,
    pub speakers: usize,
    pub videos: usize,
    pub word_dim: usize,
    pub visual_dim: usize,
    pub acoustic_dim: usize,
    pub label_mean: f64,
    pub label_std: f64,
    /// Counts per sentiment level -3..=3, each label rounded half away from zero.
    pub label_histogram: [usize; 7],
    pub words: LengthStats,
    pub visual_frames: LengthStats,
    pub acoustic_frames: LengthStats,
}

pub fn dataset_stats(dataset: &Dataset) -> Result<DatasetStats> {
    let us = &dataset.utterances;
    if us.is_empty() {
        return Err(DataError::NoUtterances.into());
    }
    let n = us.len() as f64;
    let mean = us.iter().map(|u| u.label).sum::<f64>() / n;
    let var = us.iter().map(|u| (u.label - mean).powi(2)).sum::<f64>() / n;
    let mut histogram = [0usize; 7];
    for u in us {
        histogram[(u.label.round() as i64 + 3).clamp(0, 6) as usize] += 1;
    }
    let videos: BTreeSet<&str> = us.iter().map(|u| u.video_id.as_str()).collect();
    Ok(DatasetStats {
        utterances: us.len(),
        speakers: dataset.speakers().len(),
        videos: videos.len(),
        word_dim: dataset.header.word_dim,
        visual_dim: dataset.header.p,
        acoustic_dim: dataset.header.q,
        label_mean: mean,
        label_std: var.sqrt(),
        label_histogram: histogram,
        words: LengthStats::of(us.iter().map(|u| u.words.len())),
        visual_frames: LengthStats::of(us.iter().map(|u| u.visual_frames.len())),
        acoustic_frames: LengthStats::of(us.iter().map(|u| u.acoustic_frames.len())),
    })
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "utterances {}  speakers {}  videos {}",
            self.utterances, self.speakers, self.videos
        )?;
        writeln!(
            f,
            "dims: word {}  visual {}  acoustic {}",
            self.word_dim, self.visual_dim, self.acoustic_dim
        )?;
        writeln!(f, "label mean {:.4}  std {:.4}", self.label_mean, self.label_std)?;
        write!(f, "label histogram")?;
        for (i, c) in self.label_histogram.iter().enumerate() {
            write!(f, "  {:+}:{}", i as i64 - 3, c)?;
        }
        writeln!(f)?;
        writeln!(f, "{:<16}{:>6}{:>6}{:>10}", "sequence", "min", "max", "mean")?;
        for (name, s) in [
            ("words", &self.words),
            ("visual frames", &self.visual_frames),
            ("acoustic frames", &self.acoustic_frames),
        ] {
            writeln!(f, "{:<16}{:>6}{:>6}{:>10.2}", name, s.min, s.max, s.mean)?;
        }
        Ok(())
    }
}
