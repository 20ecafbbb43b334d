//! Synthetic multimodal sentiment data with planted interaction effects.
//!
//! Each utterance draws three latent signals `s_l, s_v, s_a` in `[-1, 1]`
//! and gets the label
//!
//! ```text
//! clamp(scale * (a_l s_l + a_v s_v + a_a s_a
//!                + b_lv s_l s_v + b_la s_l s_a + b_va s_v s_a
//!                + g s_l s_v s_a) + noise_std * N(0, 1), -3, 3)
//! ```
//!
//! with `scale = 3 / (sum of absolute coefficients)`, so the noiseless label
//! never leaves `[-3, 3]`.
//!
//! Modalities carry the latents as follows:
//!
//! * Language: a fixed codebook of word vectors. `signal_levels` sentiment
//!   tokens `sentKK` sit on an evenly spaced grid over `[-1, 1]`; token `k`
//!   has coordinate 0 equal to its level and coordinate 1 equal to 1. Filler
//!   tokens `fillKK` have zeros in both. All remaining coordinates are fixed
//!   `N(0, 0.3^2)` draws per token. An utterance holds exactly one sentiment
//!   token at a random position among fillers, and `s_l` is that token's
//!   level, so `s_l` is uniform over the grid rather than the continuum.
//!   The ratio of the mean-pooled coordinates 0 and 1 recovers `s_l`.
//! * Visual / acoustic: frame coordinate 0 is `s + e_f`, where the frame
//!   noise comes in antithetic pairs `(+e, -e)` (an odd frame out gets 0), so
//!   the mean over frames is exactly `s`. Other coordinates are `N(0, 1)`
//!   clutter.
//!
//! Speakers are assigned round-robin (`spkSS`), videos cycle within a speaker
//! (`spkSS_vVV`). All draws come from [`crate::rng::Rng`] streams derived from
//! `seed`, so a spec always produces the same dataset.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetHeader, Source, Utterance, Word, LABEL_MAX, LABEL_MIN};
use crate::error::{Result, TfnError};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_utterances: usize,
    pub n_speakers: usize,
    pub videos_per_speaker: usize,
    pub visual_dim: usize,
    pub acoustic_dim: usize,
    pub word_dim: usize,
    pub alpha_l: f64,
    pub alpha_v: f64,
    pub alpha_a: f64,
    pub beta_lv: f64,
    pub beta_la: f64,
    pub beta_va: f64,
    pub gamma: f64,
    pub noise_std: f64,
    pub frame_noise_std: f64,
    /// Inclusive `[min, max]` sequence lengths.
    pub words_len: [usize; 2],
    pub visual_len: [usize; 2],
    pub acoustic_len: [usize; 2],
    pub signal_levels: usize,
    pub filler_tokens: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_utterances: 2000,
            n_speakers: 10,
            videos_per_speaker: 4,
            visual_dim: 12,
            acoustic_dim: 12,
            word_dim: super::DEFAULT_WORD_DIM,
            alpha_l: 0.2,
            alpha_v: 0.2,
            alpha_a: 0.2,
            beta_lv: 0.2,
            beta_la: 0.2,
            beta_va: 0.2,
            gamma: 1.0,
            noise_std: 0.1,
            frame_noise_std: 0.5,
            words_len: [4, 10],
            visual_len: [8, 24],
            acoustic_len: [16, 48],
            signal_levels: 41,
            filler_tokens: 16,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TfnError::Config(format!("synthetic spec: {m}")));
        if self.n_speakers < 5 {
            return bad("n_speakers must be at least 5");
        }
        if self.n_utterances < self.n_speakers {
            return bad("n_utterances must be at least n_speakers");
        }
        if self.videos_per_speaker == 0 {
            return bad("videos_per_speaker must be positive");
        }
        if self.visual_dim == 0 || self.acoustic_dim == 0 || self.word_dim < 2 {
            return bad("visual_dim and acoustic_dim must be >= 1, word_dim >= 2");
        }
        for (name, [lo, hi]) in [
            ("words_len", self.words_len),
            ("visual_len", self.visual_len),
            ("acoustic_len", self.acoustic_len),
        ] {
            if lo == 0 || lo > hi {
                return bad(&format!("{name} must satisfy 1 <= min <= max"));
            }
        }
        if self.signal_levels < 2 || self.filler_tokens == 0 {
            return bad("signal_levels must be >= 2 and filler_tokens >= 1");
        }
        let coeffs = self.coefficients();
        if coeffs.iter().any(|c| !c.is_finite()) {
            return bad("coefficients must be finite");
        }
        for (name, v) in [("noise_std", self.noise_std), ("frame_noise_std", self.frame_noise_std)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// `[a_l, a_v, a_a, b_lv, b_la, b_va, g]`.
    pub fn coefficients(&self) -> [f64; 7] {
        [
            self.alpha_l,
            self.alpha_v,
            self.alpha_a,
            self.beta_lv,
            self.beta_la,
            self.beta_va,
            self.gamma,
        ]
    }

    /// `3 / sum |coefficient|`, or 0 when every coefficient is 0.
    pub fn scale(&self) -> f64 {
        let total: f64 = self.coefficients().iter().map(|c| c.abs()).sum();
        if total == 0.0 {
            0.0
        } else {
            LABEL_MAX / total
        }
    }

    /// Noiseless label for the given latents.
    pub fn signal(&self, sl: f64, sv: f64, sa: f64) -> f64 {
        let [al, av, aa, blv, bla, bva, g] = self.coefficients();
        self.scale()
            * (al * sl + av * sv + aa * sa + blv * sl * sv + bla * sl * sa + bva * sv * sa + g * sl * sv * sa)
    }

    pub fn level(&self, k: usize) -> f64 {
        -1.0 + 2.0 * k as f64 / (self.signal_levels - 1) as f64
    }
}

struct Codebook {
    signal: Vec<Word>,
    filler: Vec<Word>,
}

fn codebook(spec: &SynthSpec) -> Codebook {
    let mut rng = Rng::derived(spec.seed, "synth/codebook");
    let make = |name: String, c0: f64, c1: f64, rng: &mut Rng| {
        let mut v = vec![0.0; spec.word_dim];
        v[0] = c0;
        v[1] = c1;
        for x in &mut v[2..] {
            *x = 0.3 * rng.normal();
        }
        Word {
            token: Some(Arc::from(name.as_str())),
            vector: v.into(),
        }
    };
    let signal = (0..spec.signal_levels)
        .map(|k| make(format!("sent{k:02}"), spec.level(k), 1.0, &mut rng))
        .collect();
    let filler = (0..spec.filler_tokens)
        .map(|k| make(format!("fill{k:02}"), 0.0, 0.0, &mut rng))
        .collect();
    Codebook { signal, filler }
}

fn frames(signal: f64, len: usize, dim: usize, noise_std: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    let mut pending: Option<f64> = None;
    for f in 0..len {
        let e = match pending.take() {
            Some(e) => -e,
            None if f + 1 < len => {
                let e = noise_std * rng.normal();
                pending = Some(e);
                e
            }
            None => 0.0,
        };
        let mut v = Vec::with_capacity(dim);
        v.push(signal + e);
        v.extend((1..dim).map(|_| rng.normal()));
        out.push(v);
    }
    out
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let book = codebook(spec);
    let mut rng = Rng::derived(spec.seed, "synth/utterances");
    let mut utterances = Vec::with_capacity(spec.n_utterances);
    for i in 0..spec.n_utterances {
        let speaker = i % spec.n_speakers;
        let video = (i / spec.n_speakers) % spec.videos_per_speaker;
        let level = rng.below(spec.signal_levels);
        let sl = spec.level(level);
        let sv = rng.uniform(-1.0, 1.0);
        let sa = rng.uniform(-1.0, 1.0);
        let noise = spec.noise_std * rng.normal();
        let label = (spec.signal(sl, sv, sa) + noise).clamp(LABEL_MIN, LABEL_MAX);

        let t_l = rng.range_inclusive(spec.words_len[0], spec.words_len[1]);
        let at = rng.below(t_l);
        let words = (0..t_l)
            .map(|t| {
                if t == at {
                    book.signal[level].clone()
                } else {
                    book.filler[rng.below(spec.filler_tokens)].clone()
                }
            })
            .collect();
        let t_v = rng.range_inclusive(spec.visual_len[0], spec.visual_len[1]);
        let visual_frames = frames(sv, t_v, spec.visual_dim, spec.frame_noise_std, &mut rng);
        let t_a = rng.range_inclusive(spec.acoustic_len[0], spec.acoustic_len[1]);
        let acoustic_frames = frames(sa, t_a, spec.acoustic_dim, spec.frame_noise_std, &mut rng);

        utterances.push(Utterance {
            id: format!("utt{i:05}"),
            speaker_id: format!("spk{speaker:02}"),
            video_id: format!("spk{speaker:02}_v{video:02}"),
            words,
            visual_frames,
            acoustic_frames,
            label,
        });
    }
    let mut header = DatasetHeader::new(spec.visual_dim, spec.acoustic_dim, spec.word_dim, Source::Synthetic);
    header.generator_spec = Some(spec.clone());
    Ok(Dataset { header, utterances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            n_utterances: 50,
            n_speakers: 5,
            word_dim: 8,
            visual_dim: 3,
            acoustic_dim: 2,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn zero_coefficients_zero_noise_give_zero_labels() {
        let spec = SynthSpec {
            alpha_l: 0.0,
            alpha_v: 0.0,
            alpha_a: 0.0,
            beta_lv: 0.0,
            beta_la: 0.0,
            beta_va: 0.0,
            gamma: 0.0,
            noise_std: 0.0,
            ..small()
        };
        let d = synth_generate(&spec).unwrap();
        assert!(d.utterances.iter().all(|u| u.label == 0.0));
    }

    #[test]
    fn noiseless_labels_reach_but_do_not_exceed_range() {
        let spec = SynthSpec { noise_std: 0.0, ..small() };
        assert_eq!(spec.signal(1.0, 1.0, 1.0), 3.0);
        let d = synth_generate(&spec).unwrap();
        assert!(d.utterances.iter().all(|u| u.label.abs() <= 3.0));
    }

    #[test]
    fn frame_means_are_exact() {
        let mut rng = Rng::new(4);
        for len in 1..8 {
            let f = frames(0.375, len, 2, 0.5, &mut rng);
            let mean = f.iter().map(|v| v[0]).sum::<f64>() / len as f64;
            assert!((mean - 0.375).abs() < 1e-15);
        }
    }

    #[test]
    fn structure_and_ids() {
        let d = synth_generate(&small()).unwrap();
        assert_eq!(d.len(), 50);
        assert_eq!(d.speakers().len(), 5);
        d.validate().unwrap();
        let u = &d.utterances[7];
        assert_eq!(u.speaker_id, "spk02");
        assert_eq!(u.video_id, "spk02_v01");
        let signal_words = u.words.iter().filter(|w| w.vector[1] == 1.0).count();
        assert_eq!(signal_words, 1);
    }

    #[test]
    fn invalid_specs() {
        assert!(synth_generate(&SynthSpec { n_speakers: 4, ..small() }).is_err());
        assert!(synth_generate(&SynthSpec { words_len: [0, 3], ..small() }).is_err());
        assert!(synth_generate(&SynthSpec { noise_std: -1.0, ..small() }).is_err());
    }
}
