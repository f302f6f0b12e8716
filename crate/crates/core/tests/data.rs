use std::fs;
use std::path::Path;

use mgfn::io::{
    load_checkpoint, load_manifest, read_feature_header, save_checkpoint, Checkpoint, Label,
    FEATURE_MAGIC,
};
use mgfn::losses::LossConfig;
use mgfn::model::{ArchitectureDescriptor, BlockOrder, Model};
use mgfn::synthgen;
use mgfn::Error;

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_writes_identical_files() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    synthgen::generate_preset("micro", 9, a.path()).unwrap();
    synthgen::generate_preset("micro", 9, b.path()).unwrap();
    synthgen::generate_preset("micro", 10, c.path()).unwrap();
    assert_eq!(files_under(a.path()), files_under(b.path()));
    assert_ne!(files_under(a.path()), files_under(c.path()));
}

#[test]
fn fig2_files_reproduce_the_scene_confound() {
    let dir = tempfile::tempdir().unwrap();
    let preset = synthgen::generate_preset("fig2", 0, dir.path()).unwrap();
    assert!(preset.scenes.len() >= 2);
    let train = load_manifest(&dir.path().join("train.json")).unwrap();
    let test = load_manifest(&dir.path().join("test.json")).unwrap();
    assert_eq!((train.len(), test.len()), (40, 20));

    let entry = &train.videos[0];
    let path = train.resolve(&entry.path);
    assert_eq!(&fs::read(&path).unwrap()[..4], FEATURE_MAGIC);
    assert_eq!(read_feature_header(&path).unwrap(), [32, 2, 256]);

    // Mean per-crop feature norm by scene and label.
    let mut scene_a_min = f64::INFINITY;
    let mut scene_b_max: f64 = 0.0;
    for r in test.load_all().unwrap() {
        let c = r.channels();
        let norms: Vec<f64> = r
            .snippets
            .data()
            .chunks(c)
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let (lo, hi) = norms.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &n| {
            (lo.min(n), hi.max(n))
        });
        if r.id.contains("_A_") {
            assert_eq!(r.label, Label::Normal);
            scene_a_min = scene_a_min.min(lo);
        } else {
            scene_b_max = scene_b_max.max(hi);
        }
        let mask = r.frame_mask.as_ref().unwrap();
        assert_eq!(mask.iter().any(|&m| m), r.label == Label::Abnormal);
    }
    assert!(
        scene_a_min > scene_b_max,
        "scene A {scene_a_min} vs scene B {scene_b_max}"
    );
}

#[test]
fn checkpoint_file_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(
        ArchitectureDescriptor::new(BlockOrder::GfFusion, 64, 4, 2),
        3,
    )
    .unwrap();
    let ck = Checkpoint::from_model(&model, LossConfig::default(), 3, 0, vec![]);
    let (first, second) = (dir.path().join("a.mgck"), dir.path().join("b.mgck"));
    save_checkpoint(&first, &ck).unwrap();
    let loaded = load_checkpoint(&first).unwrap();
    save_checkpoint(&second, &loaded).unwrap();
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());

    let restored = loaded.to_model().unwrap();
    for (a, b) in restored
        .params()
        .tensors()
        .iter()
        .zip(model.params().tensors())
    {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
}

#[test]
fn corrupted_checkpoint_leaves_the_model_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.mgck");
    let model = Model::new(ArchitectureDescriptor::new(BlockOrder::Gf, 64, 4, 2), 1).unwrap();
    save_checkpoint(
        &path,
        &Checkpoint::from_model(&model, LossConfig::default(), 1, 0, vec![]),
    )
    .unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));

    let other = Model::new(ArchitectureDescriptor::new(BlockOrder::Ff, 64, 4, 2), 2).unwrap();
    let mut target = Model::new(ArchitectureDescriptor::new(BlockOrder::Gf, 64, 4, 2), 5).unwrap();
    let before = target.params().clone();
    let ck = Checkpoint::from_model(&other, LossConfig::default(), 2, 0, vec![]);
    let err = ck.restore_into(&mut target).unwrap_err();
    assert!(err.to_string().contains("architecture mismatch"));
    assert_eq!(target.params(), &before);
}
