//! Model files.

use tfn_core::data::{synth_generate, SynthSpec};
use tfn_core::fusion::FusionVariant;
use tfn_core::inference::Task;
use tfn_core::model::{ArchConfig, ModelConfig, TfnModel};
use tfn_core::persist::{load_model, model_from_bytes, model_to_bytes, save_model};
use tfn_core::TfnError;

fn model(variant: FusionVariant, task: Task) -> TfnModel {
    let d = synth_generate(&SynthSpec {
        n_utterances: 10,
        n_speakers: 5,
        word_dim: 5,
        visual_dim: 3,
        acoustic_dim: 2,
        ..SynthSpec::default()
    })
    .unwrap();
    let arch = ArchConfig {
        projection_dim: 4,
        lstm_hidden: 3,
        language_dim: 3,
        t_max: 5,
        subnet_width: 2,
        trunk_width: 6,
    };
    TfnModel::new(ModelConfig::for_dataset(&d.header, arch, variant, task), 4).unwrap()
}

#[test]
fn every_variant_and_task_round_trips() {
    for variant in FusionVariant::ALL {
        for task in Task::ALL {
            let m = model(variant, task);
            let back = model_from_bytes(&model_to_bytes(&m)).unwrap();
            assert_eq!(back.config, m.config);
            assert_eq!(model_to_bytes(&back), model_to_bytes(&m));
        }
    }
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = model_to_bytes(&model(FusionVariant::Full, Task::Binary));
    assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 1]), Err(TfnError::ModelFormat(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(model_from_bytes(&extra), Err(TfnError::ModelFormat(_))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(model_from_bytes(&magic), Err(TfnError::ModelFormat(_))));
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tfn");
    let m = model(FusionVariant::NoTrimodal, Task::Regression);
    save_model(&m, &path).unwrap();
    assert_eq!(model_to_bytes(&load_model(&path).unwrap()), model_to_bytes(&m));
    assert!(matches!(load_model(&dir.path().join("none")), Err(TfnError::Io { .. })));
}
