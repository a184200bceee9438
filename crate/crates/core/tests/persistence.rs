use glnet_core::checkpoint::{MAGIC, VERSION};
use glnet_core::data::{load_dataset, save_group, Dihedral};
use glnet_core::synth::{synth_dataset, SynthConfig, PALETTE};
use glnet_core::train::train;
use glnet_core::{Checkpoint, Error, GlNet, ImageGroup, ModelConfig, TrainConfig};

fn toy_config() -> ModelConfig {
    ModelConfig { group_size: 3, side: 16, channels: 8, stride: 4, ..Default::default() }
}

fn bits(net: &GlNet<f32>) -> Vec<(String, Vec<u32>)> {
    net.params()
        .iter()
        .map(|(n, p)| (n.clone(), p.to_vec().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig { shared_projection: true, ..toy_config() };
    let net = GlNet::<f32>::new(&cfg, 12).unwrap();
    let ckpt = Checkpoint::from_model(&net, 77);
    let a = dir.path().join("a.glnc");
    let b = dir.path().join("b.glnc");
    ckpt.save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    assert_eq!(loaded.iteration, 77);
    assert_eq!(loaded.config, cfg);
    let restored = loaded.to_model::<f32>().unwrap();
    assert_eq!(bits(&restored), bits(&net));
    loaded.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let net = GlNet::<f32>::new(&toy_config(), 1).unwrap();
    let bytes = Checkpoint::from_model(&net, 0).to_bytes().unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x40;
    for (what, b) in [
        ("magic", bad_magic),
        ("version", bad_version),
        ("payload", flipped),
        ("truncated", bytes[..bytes.len() - 9].to_vec()),
        ("empty", vec![]),
    ] {
        assert!(matches!(Checkpoint::from_bytes(&b), Err(Error::Checkpoint(_))), "{what}");
    }
}

#[test]
fn checkpoint_rejects_mismatched_model() {
    let net = GlNet::<f32>::new(&toy_config(), 1).unwrap();
    let mut ckpt = Checkpoint::from_model(&net, 0);
    ckpt.config.channels = 16;
    assert!(ckpt.to_model::<f32>().is_err());
}

#[test]
fn synthetic_groups_are_deterministic_and_well_formed() {
    let cfg = SynthConfig { groups: 60, group_size: 5, side: 48, seed: 4 };
    let a = synth_dataset(&cfg);
    assert_eq!(a, synth_dataset(&cfg));
    assert_ne!(a[0].0, synth_dataset(&SynthConfig { seed: 5, ..cfg.clone() })[0].0);
    for (group, meta) in &a {
        assert_eq!(group.len(), 5);
        for (i, im) in meta.images.iter().enumerate() {
            assert!((1..=3).contains(&im.distractors.len()));
            assert_eq!(im.common.category, meta.category);
            for d in &im.distractors {
                assert_ne!(d.category, meta.category, "{}", group.name);
            }
            let s = 48.0;
            assert!(im.common.size >= 0.15 * s && im.common.size <= 0.4 * s);
            // the mask is exactly the common object's footprint
            let mask = &group.masks[i];
            let mut area = 0;
            for y in 0..48 {
                for x in 0..48 {
                    let inside = im.common.covers(x, y);
                    assert_eq!(mask.data[y * 48 + x], if inside { 255 } else { 0 });
                    area += inside as usize;
                }
            }
            assert!(area > 0);
        }
    }
}

#[test]
fn augmentation_keeps_mask_on_the_object() {
    let (group, meta) = synth_dataset(&SynthConfig { groups: 3, group_size: 2, side: 40, seed: 8 })
        .into_iter()
        .last()
        .unwrap();
    let color = PALETTE[meta.category.color].1;
    for d in Dihedral::all() {
        for (i, im) in meta.images.iter().enumerate() {
            let (img, mask) = d.apply_pair(&group.images[i], &group.masks[i]);
            for y in 0..40 {
                for x in 0..40 {
                    let (sx, sy) = d.source_of(x, y, 40);
                    let inside = im.common.covers(sx, sy);
                    assert_eq!(mask.data[y * 40 + x] == 255, inside);
                    if inside {
                        let px = &img.data[(y * 40 + x) * 3..(y * 40 + x) * 3 + 3];
                        for c in 0..3 {
                            assert!((px[c] as f64 - color[c] * 255.0).abs() <= 0.04 * 255.0 + 1.0);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn dataset_survives_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let groups: Vec<ImageGroup> = synth_dataset(&SynthConfig { groups: 3, group_size: 4, side: 24, seed: 2 })
        .into_iter()
        .map(|(g, _)| g)
        .collect();
    for g in &groups {
        save_group(dir.path(), g).unwrap();
    }
    assert_eq!(load_dataset(dir.path(), true).unwrap(), groups);
}

#[test]
fn training_is_reproducible() {
    let data: Vec<ImageGroup> = synth_dataset(&SynthConfig { groups: 3, group_size: 4, side: 16, seed: 3 })
        .into_iter()
        .map(|(g, _)| g)
        .collect();
    let tcfg = TrainConfig { iterations: 6, seed: 9, ..Default::default() };
    let run = || {
        let net = GlNet::<f32>::new(&toy_config(), 2).unwrap();
        let log = train(&net, &data, &tcfg, |_| {}).unwrap();
        (log, Checkpoint::from_model(&net, 6).to_bytes().unwrap())
    };
    let (la, ca) = run();
    let (lb, cb) = run();
    assert_eq!(la, lb);
    assert_eq!(ca, cb);
    assert!(la.iter().all(|r| r.loss.is_finite()));
}
