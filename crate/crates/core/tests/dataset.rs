use std::f64::consts::PI;

use image::{GrayImage, ImageBuffer as RawImage, Luma, Rgb, Rgba, RgbaImage};
use lightslab_core::dataset::{
    frontal_poses, load_image, load_manifest, load_scene, save_image, synth_lightfield, write_scene, ImageBuffer,
    SynthSpec,
};
use lightslab_core::geometry::{
    generate_ray_bundle, two_plane_parameterize, world_to_ndc, CameraModel, Pose, RaySpace, SlabPlanes,
};
use lightslab_core::Error;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn red_pixel_png() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("red.png");
    RawImage::<Rgb<u8>, _>::from_pixel(1, 1, Rgb([255, 0, 0])).save(&p).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!(img.shape(), [1, 1, 3]);
    assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
}

#[test]
fn grayscale_expands_to_three_equal_channels() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gray.png");
    GrayImage::from_fn(3, 2, |x, y| Luma([(x * 40 + y * 100) as u8])).save(&p).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!(img.shape(), [2, 3, 3]);
    for (r, c) in [(0, 0), (1, 2), (0, 1)] {
        let [a, b, d] = img.pixel(r, c);
        assert_eq!(a, b);
        assert_eq!(b, d);
        assert_eq!(a, (c * 40 + r * 100) as f32 / 255.0);
    }
}

#[test]
fn sixteen_bit_png_uses_full_range() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("deep.png");
    RawImage::<Rgb<u16>, _>::from_pixel(2, 2, Rgb([65535, 32768, 1])).save(&p).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!(img.pixel(1, 1), [1.0, 32768.0 / 65535.0, 1.0 / 65535.0]);
}

#[test]
fn alpha_composites_over_white() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("alpha.png");
    let mut raw = RgbaImage::new(2, 1);
    raw.put_pixel(0, 0, Rgba([0, 0, 0, 0]));
    raw.put_pixel(1, 0, Rgba([0, 255, 0, 255]));
    raw.save(&p).unwrap();
    let img = load_image(&p).unwrap();
    assert_eq!(img.pixel(0, 0), [1.0, 1.0, 1.0]);
    assert_eq!(img.pixel(0, 1), [0.0, 1.0, 0.0]);
}

#[test]
fn quantized_buffer_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nested/dir/img.png");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = (0..5 * 7 * 3).map(|_| rng.random_range(0u8..=255) as f32 / 255.0).collect();
    let img = ImageBuffer::new(5, 7, 3, data).unwrap();
    save_image(&img, &p).unwrap();
    assert_eq!(load_image(&p).unwrap(), img);
}

#[test]
fn missing_and_corrupt_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_image(&dir.path().join("none.png")), Err(Error::Io { .. })));
    let bad = dir.path().join("bad.png");
    std::fs::write(&bad, b"not a png").unwrap();
    assert!(matches!(load_image(&bad), Err(Error::Codec { .. })));
    assert!(matches!(load_scene(dir.path()), Err(Error::Io { .. })));
}

#[test]
fn written_scene_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let cam = CameraModel::centered(12, 12, 12.0, 1.0).unwrap();
    let poses = frontal_poses(5, 0.1, 2);
    let samples = synth_lightfield(&SynthSpec::default(), &cam, &poses, &RaySpace::frontal()).unwrap();
    write_scene(dir.path(), &cam, &samples[..3], &samples[3..]).unwrap();
    let scene = load_scene(dir.path()).unwrap();
    assert_eq!(scene.train.len(), 3);
    assert_eq!(scene.holdout.len(), 2);
    assert_eq!(scene.train_names[0], "images/train_000.png");
    assert!((scene.camera.focal_x - 12.0).abs() < 1e-9);
    for (loaded, original) in scene.train.iter().chain(&scene.holdout).zip(&samples) {
        assert!((loaded.pose.translation - original.pose.translation).norm() < 1e-12);
        // images went through 8-bit quantization
        for (a, b) in loaded.target.data.iter().zip(&original.target.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
    let manifest = load_manifest(&dir.path().join("transforms.json")).unwrap();
    assert_eq!(manifest.frames.len(), 3);
}

#[test]
fn manifest_without_extension_resolves_to_png() {
    let dir = tempfile::tempdir().unwrap();
    save_image(&ImageBuffer::filled(2, 2, [0.0, 1.0, 0.0]), &dir.path().join("frames/a.png")).unwrap();
    let json = r#"{"camera_angle_x": 1.0, "frames": [{"file_path": "frames/a",
        "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#;
    std::fs::write(dir.path().join("transforms.json"), json).unwrap();
    let scene = load_scene(dir.path()).unwrap();
    assert_eq!(scene.train[0].target.pixel(1, 1), [0.0, 1.0, 0.0]);
    assert_eq!(scene.train[0].pose, Pose::identity());
    assert!(scene.holdout.is_empty());
}

#[test]
fn synth_matches_the_formula_through_independent_geometry() {
    let cam = CameraModel::centered(10, 8, 9.0, 1.0).unwrap();
    let poses = frontal_poses(3, 0.1, 4);
    let spec = SynthSpec::default();
    let samples = synth_lightfield(&spec, &cam, &poses, &RaySpace::frontal()).unwrap();
    for s in &samples {
        let bundle = generate_ray_bundle(&cam, &s.pose, 1).unwrap();
        for (i, ray) in bundle.rays.iter().enumerate() {
            let r = two_plane_parameterize(&world_to_ndc(ray, &cam).unwrap(), &SlabPlanes::ndc()).unwrap();
            let expected: Vec<f32> = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0]
                .iter()
                .map(|phi| (0.5 + 0.5 * (3.0 * r.x + 2.0 * r.u + phi).sin()) as f32)
                .collect();
            assert_eq!(&s.target.data[3 * i..3 * i + 3], &expected[..]);
        }
    }
}

#[test]
fn flat_spec_gives_constant_image() {
    let cam = CameraModel::centered(6, 6, 6.0, 1.0).unwrap();
    let spec = SynthSpec { a: 0.0, b: 0.0, ..SynthSpec::default() };
    let img = &synth_lightfield(&spec, &cam, &[Pose::identity()], &RaySpace::frontal()).unwrap()[0].target;
    let expected = spec.phases.map(|p| (0.5 + 0.5 * p.sin()) as f32);
    for r in 0..6 {
        for c in 0..6 {
            assert_eq!(img.pixel(r, c), expected);
        }
    }
}

#[test]
fn coincident_rays_from_two_poses_share_a_color() {
    // odd size puts the center pixel on the optical axis
    let cam = CameraModel::centered(9, 9, 9.0, 1.0).unwrap();
    let poses = [Pose::identity(), Pose::from_translation(Vector3::new(0.0, 0.0, -0.5))];
    let s = synth_lightfield(&SynthSpec::default(), &cam, &poses, &RaySpace::frontal()).unwrap();
    let (a, b) = (s[0].target.pixel(4, 4), s[1].target.pixel(4, 4));
    for c in 0..3 {
        assert!((a[c] - b[c]).abs() < 1e-6, "{a:?} vs {b:?}");
    }
    // off-axis pixels see different rays
    assert_ne!(s[0].target.pixel(0, 0), s[1].target.pixel(0, 0));
}
