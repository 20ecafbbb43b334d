//! Tensor fusion of the three modality embeddings.
//!
//! Each embedding is extended with a constant 1 and the three are combined
//! by a triple outer product into a cube of shape
//! `(d_l + 1) x (d_v + 1) x (d_a + 1)` (129 x 33 x 33 at the default sizes).
//! The constant slot sits at the last index of each axis, so the cube splits
//! into seven regions plus the all-constant corner:
//!
//! | region | cells                         | value            |
//! |--------|-------------------------------|------------------|
//! | L      | `[0..d_l][d_v][d_a]`          | `z_l`            |
//! | V      | `[d_l][0..d_v][d_a]`          | `z_v`            |
//! | A      | `[d_l][d_v][0..d_a]`          | `z_a`            |
//! | LV     | `[0..d_l][0..d_v][d_a]`       | `z_l ⊗ z_v`      |
//! | LA     | `[0..d_l][d_v][0..d_a]`       | `z_l ⊗ z_a`      |
//! | VA     | `[d_l][0..d_v][0..d_a]`       | `z_v ⊗ z_a`      |
//! | LVA    | `[0..d_l][0..d_v][0..d_a]`    | `z_l ⊗ z_v ⊗ z_a`|
//!
//! Cubes and regions are flattened row-major (language index slowest,
//! acoustic fastest). That order is part of the model file format.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::embeddings::ModalityEmbeddings;
use crate::error::{Result, TfnError};
use crate::tensor::{Tensor, Tensor3, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionVariant {
    Full,
    Early,
    Unimodal,
    Bimodal,
    Trimodal,
    NoTrimodal,
    Language,
    Visual,
    Acoustic,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 9] = [
        FusionVariant::Full,
        FusionVariant::Early,
        FusionVariant::Unimodal,
        FusionVariant::Bimodal,
        FusionVariant::Trimodal,
        FusionVariant::NoTrimodal,
        FusionVariant::Language,
        FusionVariant::Visual,
        FusionVariant::Acoustic,
    ];

    /// Row order of the ablation table.
    pub const ABLATION_ORDER: [FusionVariant; 8] = [
        FusionVariant::Language,
        FusionVariant::Visual,
        FusionVariant::Acoustic,
        FusionVariant::Bimodal,
        FusionVariant::Trimodal,
        FusionVariant::NoTrimodal,
        FusionVariant::Full,
        FusionVariant::Early,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionVariant::Full => "full",
            FusionVariant::Early => "early",
            FusionVariant::Unimodal => "unimodal",
            FusionVariant::Bimodal => "bimodal",
            FusionVariant::Trimodal => "trimodal",
            FusionVariant::NoTrimodal => "notrimodal",
            FusionVariant::Language => "language",
            FusionVariant::Visual => "visual",
            FusionVariant::Acoustic => "acoustic",
        }
    }

    /// Label used in report tables.
    pub fn table_label(self) -> String {
        match self {
            FusionVariant::Full => "TFN".to_string(),
            v => format!("TFN_{}", v.name()),
        }
    }

    /// Regions concatenated for the subtensor variants.
    pub fn regions(self) -> Option<&'static [Region]> {
        use Region::*;
        match self {
            FusionVariant::Unimodal => Some(&[L, V, A]),
            FusionVariant::Bimodal => Some(&[LV, LA, VA]),
            FusionVariant::Trimodal => Some(&[LVA]),
            FusionVariant::NoTrimodal => Some(&[L, V, A, LV, LA, VA]),
            _ => None,
        }
    }

    pub fn uses_language(self) -> bool {
        !matches!(self, FusionVariant::Visual | FusionVariant::Acoustic)
    }

    pub fn uses_visual(self) -> bool {
        !matches!(self, FusionVariant::Language | FusionVariant::Acoustic)
    }

    pub fn uses_acoustic(self) -> bool {
        !matches!(self, FusionVariant::Language | FusionVariant::Visual)
    }

    /// Width of the fused vector handed to the inference network.
    pub fn fused_dim(self, dl: usize, dv: usize, da: usize) -> usize {
        match self {
            FusionVariant::Full => (dl + 1) * (dv + 1) * (da + 1),
            FusionVariant::Early => dl + dv + da,
            FusionVariant::Language => dl,
            FusionVariant::Visual => dv,
            FusionVariant::Acoustic => da,
            v => v
                .regions()
                .expect("subtensor variant")
                .iter()
                .map(|r| r.len(dl, dv, da))
                .sum(),
        }
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionVariant {
    type Err = TfnError;

    fn from_str(s: &str) -> Result<Self> {
        FusionVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| TfnError::Config(format!("unknown fusion variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    L,
    V,
    A,
    LV,
    LA,
    VA,
    LVA,
}

impl Region {
    pub const ALL: [Region; 7] = [Region::L, Region::V, Region::A, Region::LV, Region::LA, Region::VA, Region::LVA];

    pub fn len(self, dl: usize, dv: usize, da: usize) -> usize {
        match self {
            Region::L => dl,
            Region::V => dv,
            Region::A => da,
            Region::LV => dl * dv,
            Region::LA => dl * da,
            Region::VA => dv * da,
            Region::LVA => dl * dv * da,
        }
    }

    /// Flat cube indices of the region, row-major over (language, visual, acoustic).
    pub fn indices(self, dl: usize, dv: usize, da: usize) -> Vec<usize> {
        let (nv, na) = (dv + 1, da + 1);
        let at = |i: usize, j: usize, k: usize| (i * nv + j) * na + k;
        let (li, vi, ai): (Vec<usize>, Vec<usize>, Vec<usize>) = match self {
            Region::L => ((0..dl).collect(), vec![dv], vec![da]),
            Region::V => (vec![dl], (0..dv).collect(), vec![da]),
            Region::A => (vec![dl], vec![dv], (0..da).collect()),
            Region::LV => ((0..dl).collect(), (0..dv).collect(), vec![da]),
            Region::LA => ((0..dl).collect(), vec![dv], (0..da).collect()),
            Region::VA => (vec![dl], (0..dv).collect(), (0..da).collect()),
            Region::LVA => ((0..dl).collect(), (0..dv).collect(), (0..da).collect()),
        };
        let mut out = Vec::with_capacity(li.len() * vi.len() * ai.len());
        for &i in &li {
            for &j in &vi {
                for &k in &ai {
                    out.push(at(i, j, k));
                }
            }
        }
        out
    }
}

/// `[z; 1]`.
pub fn augment_one(z: &[f64]) -> Vector {
    let mut v = z.to_vec();
    v.push(1.0);
    Tensor::vector(v)
}

/// The fused cube for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTensor {
    pub t: Tensor3,
}

impl FusedTensor {
    /// Embedding sizes `(d_l, d_v, d_a)`, one less than the cube sides.
    pub fn embedding_dims(&self) -> (usize, usize, usize) {
        let s = self.t.shape();
        (s[0] - 1, s[1] - 1, s[2] - 1)
    }
}

fn check_finite(e: &ModalityEmbeddings) -> Result<()> {
    if e.z_l.is_finite() && e.z_v.is_finite() && e.z_a.is_finite() {
        Ok(())
    } else {
        Err(TfnError::NonFinite("modality embeddings".into()))
    }
}

/// `[z_l; 1] ⊗ [z_v; 1] ⊗ [z_a; 1]`.
pub fn tensor_fuse(e: &ModalityEmbeddings) -> Result<FusedTensor> {
    check_finite(e)?;
    let (dl, dv, da) = (e.z_l.len(), e.z_v.len(), e.z_a.len());
    let flat = fuse_for_variant(e, FusionVariant::Full)?;
    Ok(FusedTensor {
        t: flat.reshape(vec![dl + 1, dv + 1, da + 1])?,
    })
}

pub fn extract_subtensor(f: &FusedTensor, region: Region) -> Vector {
    let (dl, dv, da) = f.embedding_dims();
    let data = f.t.data();
    Tensor::vector(region.indices(dl, dv, da).into_iter().map(|i| data[i]).collect())
}

/// The inference-network input for `variant`, computed on a throwaway tape
/// through the same path used in training.
pub fn fuse_for_variant(e: &ModalityEmbeddings, variant: FusionVariant) -> Result<Vector> {
    check_finite(e)?;
    let mut tape = Tape::new();
    let zl = tape.constant(Tensor::row_vector(e.z_l.data().to_vec()));
    let zv = tape.constant(Tensor::row_vector(e.z_v.data().to_vec()));
    let za = tape.constant(Tensor::row_vector(e.z_a.data().to_vec()));
    let out = fuse_on_tape(&mut tape, variant, Some(zl), Some(zv), Some(za))?;
    Ok(Tensor::vector(tape.value(out).data().to_vec()))
}

/// Batched fusion. Embedding nodes a variant does not use may be `None`.
pub fn fuse_on_tape(
    tape: &mut Tape<'_>,
    variant: FusionVariant,
    zl: Option<NodeId>,
    zv: Option<NodeId>,
    za: Option<NodeId>,
) -> Result<NodeId> {
    let need = |n: Option<NodeId>, what: &str| {
        n.ok_or_else(|| TfnError::Config(format!("variant `{variant}` needs the {what} embedding")))
    };
    match variant {
        FusionVariant::Language => need(zl, "language"),
        FusionVariant::Visual => need(zv, "visual"),
        FusionVariant::Acoustic => need(za, "acoustic"),
        FusionVariant::Early => {
            let parts = [need(zl, "language")?, need(zv, "visual")?, need(za, "acoustic")?];
            tape.concat_cols(&parts)
        }
        FusionVariant::Full => full_cube(tape, need(zl, "language")?, need(zv, "visual")?, need(za, "acoustic")?),
        v => {
            let (zl, zv, za) = (need(zl, "language")?, need(zv, "visual")?, need(za, "acoustic")?);
            let (dl, dv, da) = (tape.value(zl).cols(), tape.value(zv).cols(), tape.value(za).cols());
            let cube = full_cube(tape, zl, zv, za)?;
            let regions = v.regions().expect("subtensor variant");
            let indices: Vec<usize> = regions.iter().flat_map(|r| r.indices(dl, dv, da)).collect();
            tape.gather(cube, Arc::from(indices))
        }
    }
}

fn full_cube(tape: &mut Tape<'_>, zl: NodeId, zv: NodeId, za: NodeId) -> Result<NodeId> {
    let l = tape.augment_one(zl)?;
    let v = tape.augment_one(zv)?;
    let a = tape.augment_one(za)?;
    tape.outer3(l, v, a)
}
