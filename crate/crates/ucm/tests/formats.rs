use nalgebra::Vector3;
use proptest::prelude::*;
use ucm::formats::{decode_depth, encode_depth, read_image, read_mask, read_poses, write_image, write_mask, write_poses};
use ucm_core::geometry::{CameraPose, DepthMap, Intrinsics, Trajectory};
use ucm_core::image::Image;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn image_round_trip(w in 1usize..20, h in 1usize..20, seed in any::<u8>()) {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..w * h * 3).map(|i| (i as u8).wrapping_mul(37).wrapping_add(seed)).collect();
        let img = Image::from_u8(w, h, &bytes);
        let p = dir.path().join("x.png");
        write_image(&p, &img).unwrap();
        prop_assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn mask_round_trip(w in 1usize..30, h in 1usize..10, bits in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let mask: Vec<bool> = (0..w * h).map(|i| bits.rotate_left(i as u32 % 64) & 1 == 1).collect();
        let p = dir.path().join("m.png");
        write_mask(&p, &mask, w, h).unwrap();
        prop_assert_eq!(read_mask(&p).unwrap(), (mask, w, h));
    }

    #[test]
    fn depth_round_trip_is_f32_exact(vals in prop::collection::vec(0.01f32..100.0, 12)) {
        let d = DepthMap::from_values(4, 3, vals.iter().map(|&v| v as f64).collect());
        let back = decode_depth(std::path::Path::new("d"), &encode_depth(&d)).unwrap();
        prop_assert_eq!(back, d);
    }
}

#[test]
fn truncated_depth_rejected() {
    let bytes = encode_depth(&DepthMap::constant(2, 2, 1.0));
    let err = decode_depth(std::path::Path::new("depth.f32"), &bytes[..bytes.len() - 1]).unwrap_err();
    assert!(err.to_string().contains("depth.f32"));
}

#[test]
fn poses_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let k = Intrinsics::from_fov(64, 48, 75.0).unwrap();
    let traj = Trajectory::new(
        (0..4)
            .map(|i| CameraPose::from_axis_angle(Vector3::new(0.3, 1.0, 0.2).normalize(), 0.4 * i as f64, Vector3::new(i as f64, -0.5, 2.0)))
            .collect(),
    )
    .unwrap();
    let p = dir.path().join("poses.json");
    write_poses(&p, &k, &traj).unwrap();
    let (k2, t2) = read_poses(&p).unwrap();
    assert_eq!(k2, k);
    assert_eq!(t2, traj);
}

#[test]
fn checkpoint_round_trip() {
    use ucm_core::diffusion::{Dit, ModelConfig};
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig { depth: 1, ffn_ratio: 1, ..Default::default() };
    let m: Dit<f32> = Dit::init(cfg, &mut ucm_core::rng::substream(1, ucm_core::rng::INIT)).unwrap();
    let p = dir.path().join("m.ucmc");
    ucm::checkpoint::save(&p, &m).unwrap();
    let back = ucm::checkpoint::load(&p).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.params.data, m.params.data);
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.push(0);
    assert!(ucm::checkpoint::decode(&p, &bytes).is_err());
    assert!(ucm::checkpoint::decode(&p, &bytes[..bytes.len() - 9]).is_err());
}

#[test]
fn dataset_clip_round_trip() {
    use ucm_core::curation::{generate_synthetic_dataset, DatasetConfig};
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig { scenes: 1, clips_per_scene: 1, samples_per_clip: 2, width: 32, height: 32, ..Default::default() };
    let scenes = generate_synthetic_dataset(3, &cfg).unwrap();
    ucm::dataset::write_dataset(dir.path(), 3, &cfg, &scenes).unwrap();
    let back = ucm::dataset::read_clip(&ucm::dataset::clip_dir(dir.path(), 0, 0)).unwrap();
    let orig = &scenes[0].clips[0];
    assert_eq!(back.clip.frames, orig.clip.frames);
    assert_eq!(back.clip.trajectory, orig.clip.trajectory);
    assert_eq!(back.samples.len(), orig.samples.len());
    for (a, b) in back.samples.iter().zip(&orig.samples) {
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.image, b.image);
        assert_eq!((a.source, a.shift), (b.source, b.shift));
    }
}
