use proptest::prelude::*;
use sst_core::hsi::{
    center_crop, extract_patches, load_cube, normalize, pseudo_color, save_cube, synthetic_cube,
    tiles_along, HsiCube, HsiError, PatchParams,
};
use sst_core::SeedStream;

#[test]
fn save_load_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.hsic");
    let cube = synthetic_cube(9, 5, 4, SeedStream::new(7)).with_value_range((-0.5, 2.0));
    save_cube(&cube, &path).unwrap();
    assert_eq!(load_cube(&path).unwrap(), cube);

    let tiny = HsiCube::filled(1, 1, 1, 0.25).unwrap();
    save_cube(&tiny, &path).unwrap();
    assert_eq!(load_cube(&path).unwrap(), tiny);
}

#[test]
fn missing_file_is_io_error() {
    let err = load_cube("/nonexistent/dir/cube.hsic").unwrap_err();
    assert!(matches!(err, HsiError::Io { .. }));
}

#[test]
fn truncated_file_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.hsic");
    save_cube(&HsiCube::filled(4, 4, 2, 0.5).unwrap(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(load_cube(&path), Err(HsiError::Format { .. })));
}

#[test]
fn full_resolution_tiling_of_1024_square() {
    let cube = HsiCube::filled(1024, 1024, 1, 0.5).unwrap();
    let params = PatchParams { patch: 64, scales: vec![1.0], strides: vec![64] };
    assert_eq!(extract_patches(&cube, &params, "big").unwrap().patches.len(), 256);
}

#[test]
fn default_render_of_synthetic_scene() {
    let cube = synthetic_cube(8, 6, 31, SeedStream::new(3));
    let img = pseudo_color(&cube, sst_core::hsi::DEFAULT_RGB_BANDS).unwrap();
    assert_eq!((img.width, img.height, img.pixels.len()), (6, 8, 144));
}

fn cube_strategy() -> impl Strategy<Value = HsiCube> {
    (1usize..8, 1usize..8, 1usize..4).prop_flat_map(|(h, w, b)| {
        prop::collection::vec(-1e3f32..1e3, h * w * b)
            .prop_map(move |data| HsiCube::new(h, w, b, data, (-1e3, 1e3)).unwrap())
    })
}

proptest! {
    #[test]
    fn binary_round_trip_is_identity(cube in cube_strategy()) {
        let bytes = sst_core::hsi::encode_cube(&cube);
        prop_assert_eq!(sst_core::hsi::decode_cube(&bytes).unwrap(), cube);
    }

    #[test]
    fn normalize_lands_in_unit_range_and_is_idempotent(cube in cube_strategy()) {
        let n = normalize(&cube).unwrap();
        prop_assert!(n.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(normalize(&n).unwrap(), n);
    }

    #[test]
    fn center_crop_is_idempotent(cube in cube_strategy(), fh in 0.0f64..1.0, fw in 0.0f64..1.0) {
        let h = 1 + (fh * (cube.height() - 1) as f64) as usize;
        let w = 1 + (fw * (cube.width() - 1) as f64) as usize;
        let once = center_crop(&cube, h, w).unwrap();
        prop_assert_eq!(once.dims(), (h, w, cube.bands()));
        prop_assert_eq!(center_crop(&once, h, w).unwrap(), once);
    }

    #[test]
    fn patch_count_matches_closed_form(
        h in 8usize..80, w in 8usize..80, patch in 2usize..16,
        s1 in 1usize..12, s2 in 1usize..12,
    ) {
        let cube = HsiCube::filled(h, w, 2, 0.0).unwrap();
        let params = PatchParams { patch, scales: vec![1.0, 0.5], strides: vec![s1, s2] };
        let set = extract_patches(&cube, &params, "p").unwrap();
        let mut expected = tiles_along(h, patch, s1) * tiles_along(w, patch, s1);
        expected += tiles_along(h / 2, patch, s2) * tiles_along(w / 2, patch, s2);
        prop_assert_eq!(set.patches.len(), expected);
        prop_assert!(set.patches.iter().all(|p| p.dims() == (patch, patch, 2)));
    }
}
