use std::fs;

use dexhand::error::Error;
use dexhand::persist::{self, DatasetFile, Kind, ModelFile};
use dexhand_core::hand::{Preset, Setting};
use dexhand_core::internal::{self, ForwardModel, InverseHyper};
use dexhand_core::nn::{Activation, Architecture};

fn model_for(p: Preset) -> ForwardModel {
    let hand = p.config();
    ForwardModel::new(hand.state_dim(), hand.action_dim(), &Architecture::new(vec![6], Activation::Tanh), 1, 0.9, 4).unwrap()
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let hand = Preset::Allegro.config();
    let data = internal::collect_random(&hand, Setting::Sequential, 3, 4, 2).unwrap();
    let mut fm = model_for(Preset::Allegro);
    fm.fit_normalization(&data).unwrap();

    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let file = ModelFile { hand: hand.name.clone(), model: fm.clone() };
    persist::save(&a, Kind::ForwardModel, &file).unwrap();
    let loaded = persist::load_forward(&a, &hand).unwrap();
    assert_eq!(loaded, fm);
    persist::save(&b, Kind::ForwardModel, &ModelFile { hand: hand.name.clone(), model: loaded }).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let d = dir.path().join("data.json");
    let df = DatasetFile {
        hand: hand.name.clone(),
        setting: Setting::Sequential,
        seed: 2,
        data,
    };
    persist::save(&d, Kind::Dataset, &df).unwrap();
    assert_eq!(persist::load_dataset(&d, &hand).unwrap(), df);

    let (mut inv, _) = internal::train_inverse(
        &df.data,
        &InverseHyper {
            steps: 3,
            batch_size: 4,
            ..InverseHyper::default()
        },
    )
    .unwrap();
    internal::estimate_sigma(&mut inv, &df.data).unwrap();
    let i = dir.path().join("inv.json");
    persist::save(&i, Kind::InverseModel, &ModelFile { hand: hand.name.clone(), model: inv.clone() }).unwrap();
    assert_eq!(persist::load_inverse(&i, &hand).unwrap(), inv);
}

#[test]
fn truncated_file_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    persist::save(&path, Kind::ForwardModel, &ModelFile { hand: "allegro".into(), model: model_for(Preset::Allegro) }).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() / 2]).unwrap();
    let e = persist::load_forward(&path, &Preset::Allegro.config()).unwrap_err();
    assert!(matches!(e, Error::Corrupt { .. }), "{e}");
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn other_version_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let text = persist::to_json(Kind::ForwardModel, &ModelFile { hand: "allegro".into(), model: model_for(Preset::Allegro) }).unwrap();
    fs::write(&path, text.replacen("\"version\": 1", "\"version\": 7", 1)).unwrap();
    match persist::load_forward(&path, &Preset::Allegro.config()).unwrap_err() {
        Error::VersionMismatch { found, expected, .. } => assert_eq!((found, expected), (7, 1)),
        e => panic!("{e}"),
    }
}

#[test]
fn wrong_kind_is_corrupt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    persist::save(&path, Kind::ForwardModel, &ModelFile { hand: "allegro".into(), model: model_for(Preset::Allegro) }).unwrap();
    assert!(matches!(persist::load_inverse(&path, &Preset::Allegro.config()), Err(Error::Corrupt { .. })));
}

#[test]
fn model_for_another_hand_names_both_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    persist::save(&path, Kind::ForwardModel, &ModelFile { hand: "allegro".into(), model: model_for(Preset::Allegro) }).unwrap();
    let e = persist::load_forward(&path, &Preset::Myohand.config()).unwrap_err();
    let msg = e.to_string();
    assert!(matches!(e, Error::DimensionMismatch { .. }));
    assert!(msg.contains("K = 16") && msg.contains("K = 39"), "{msg}");
    assert!(msg.contains("allegro") && msg.contains("myohand"), "{msg}");
}

#[test]
fn missing_file_is_an_io_error() {
    let e = persist::load_forward(std::path::Path::new("/nonexistent/m.json"), &Preset::Allegro.config()).unwrap_err();
    assert!(matches!(e, Error::Io { .. }));
}
