use helmdd_core::grid::*;
use helmdd_core::raw::*;
use helmdd_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;

#[test]
fn homogeneous_example_spacing() {
    // 7.5 Hz at 1500 m/s and 4 points per wavelength: 200 m / 4.
    let m = build_homogeneous([1000.0, 1000.0, 500.0], 1500.0, 7.5, 4.0).unwrap();
    assert!((m.grid.h - 50.0).abs() < 1e-12);
    assert_eq!(m.grid.dims(), [21, 21, 11]);
    assert!(m.c.iter().all(|c| *c == Complex64::new(1500.0, 0.0)));
}

#[test]
fn extent_not_divisible_rounds_h_down() {
    let g = grid_for_extent([1000.0, 700.0, 300.0], 45.0).unwrap();
    assert!(g.h <= 45.0);
    let e = g.extent();
    assert!((e[0] - 1000.0).abs() < 1e-9 && (e[1] - 700.0).abs() < 1e-9 && (e[2] - 300.0).abs() < 1e-9);
}

#[test]
fn rejects_bad_inputs() {
    assert!(CartesianGrid::new([1, 4, 4], 1.0, [0.0; 3]).is_err());
    assert!(CartesianGrid::new([4, 4, 4], 0.0, [0.0; 3]).is_err());
    assert!(build_homogeneous([100.0; 3], 1500.0, 10.0, 1.5).is_err());
    assert!(FrequencySpec::new(0.0).is_err());
    let g = CartesianGrid::new([3, 3, 3], 1.0, [0.0; 3]).unwrap();
    let mut c = vec![Complex64::new(1500.0, 0.0); 27];
    c[5] = Complex64::new(1500.0, 1.0);
    assert!(VelocityModel::new(g.clone(), c.clone(), "x").is_err(), "gain must be rejected");
    c[5] = Complex64::new(-1.0, 0.0);
    assert!(VelocityModel::new(g, c, "x").is_err());
}

#[test]
fn gradient_is_linear_along_axis() {
    let m = build_gradient([400.0, 400.0, 800.0], 1500.0, 0.5, Axis::Z, 5.0, 4.0).unwrap();
    for idx in [0, 17, m.grid.len() - 1] {
        let p = m.grid.position(m.grid.coords(idx));
        assert!((m.c[idx].re - (1500.0 + 0.5 * p[2])).abs() < 1e-9);
    }
    assert!(build_gradient([400.0; 3], 1500.0, -10.0, Axis::X, 5.0, 4.0).is_err());
}

#[test]
fn attenuation_decays_plane_waves() {
    let m = build_homogeneous([200.0; 3], 2000.0, 10.0, 5.0).unwrap();
    let a = attenuate(&m, &QualityFactor::Uniform(50.0)).unwrap();
    let f = FrequencySpec::new(10.0).unwrap();
    let k = f.wavenumber(a.c[0]);
    assert!(k.im > 0.0, "Im k must be positive for decay under e^(-iwt)");
    assert!((a.c[0] - Complex64::new(2000.0, -20.0)).norm() < 1e-9);
    assert!(attenuate(&m, &QualityFactor::Uniform(0.0)).is_err());
    assert!(attenuate(&m, &QualityFactor::Field(vec![10.0; 3])).is_err());
}

#[test]
fn layered_random_is_seeded_and_bounded() {
    let g = CartesianGrid::new([12, 10, 16], 20.0, [0.0; 3]).unwrap();
    let spec = LayeredRandomSpec::default();
    let a = build_layered_random(g.clone(), &spec).unwrap();
    let b = build_layered_random(g.clone(), &spec).unwrap();
    assert_eq!(a, b);
    let c = build_layered_random(g, &LayeredRandomSpec { seed: 2, ..spec.clone() }).unwrap();
    assert_ne!(a.c, c.c);
    assert!(a.c.iter().all(|v| v.re >= spec.c_min && v.re <= spec.c_max && v.im == 0.0));
}

#[test]
fn nearest_and_contains() {
    let g = CartesianGrid::new([5, 5, 5], 10.0, [100.0, 0.0, -20.0]).unwrap();
    assert_eq!(g.nearest([114.0, 6.0, -20.0]), Some([1, 1, 0]));
    assert_eq!(g.nearest([99.0, 0.0, 0.0]), None);
}

proptest! {
    #[test]
    fn index_coords_round_trip(nx in 2usize..9, ny in 2usize..9, nz in 2usize..9, seed in 0usize..1000) {
        let g = CartesianGrid::new([nx, ny, nz], 1.0, [0.0; 3]).unwrap();
        let idx = seed % g.len();
        prop_assert_eq!(g.index(g.coords(idx)), idx);
    }

    #[test]
    fn ppw_meets_request(ppw in 4.0f64..12.0, f in 2.0f64..20.0) {
        let m = build_homogeneous([1200.0, 900.0, 600.0], 1500.0, f, ppw).unwrap();
        let got = m.points_per_wavelength(&FrequencySpec::new(f).unwrap());
        prop_assert!(got.iter().all(|&g| g >= ppw * (1.0 - 1e-9)));
    }
}

#[test]
fn raw_model_round_trip_all_dtypes() {
    let dir = tempfile::tempdir().unwrap();
    let g = CartesianGrid::new([4, 3, 5], 12.5, [1.0, 2.0, 3.0]).unwrap();
    let m = build_layered_random(g, &LayeredRandomSpec::default()).unwrap();
    let m = attenuate(&m, &QualityFactor::Uniform(80.0)).unwrap();
    for dtype in [RawDtype::Complex64, RawDtype::Complex128] {
        let (h, d) = (dir.path().join("m.json"), dir.path().join("m.bin"));
        save_raw_model(&m, dtype, &h, &d).unwrap();
        let back = load_raw_model(&h, &d).unwrap();
        assert_eq!(back.grid, m.grid);
        let tol = if dtype == RawDtype::Complex64 { 1e-3 } else { 0.0 };
        for (a, b) in back.c.iter().zip(&m.c) {
            assert!((a - b).norm() <= tol);
        }
    }
    // Real dtypes drop the imaginary part, so store the lossless model.
    let lossless = VelocityModel::new(m.grid.clone(), m.c.iter().map(|c| Complex64::new(c.re, 0.0)).collect(), "l").unwrap();
    for dtype in [RawDtype::Float32, RawDtype::Float64] {
        let (h, d) = (dir.path().join("r.json"), dir.path().join("r.bin"));
        save_raw_model(&lossless, dtype, &h, &d).unwrap();
        let back = load_raw_model(&h, &d).unwrap();
        for (a, b) in back.c.iter().zip(&lossless.c) {
            assert!((a - b).norm() <= 1e-3);
        }
    }
}

#[test]
fn raw_rejects_truncated_data() {
    let dir = tempfile::tempdir().unwrap();
    let g = CartesianGrid::new([4, 4, 4], 10.0, [0.0; 3]).unwrap();
    let m = VelocityModel::homogeneous(g, 1500.0).unwrap();
    let (h, d) = (dir.path().join("m.json"), dir.path().join("m.bin"));
    save_raw_model(&m, RawDtype::Float32, &h, &d).unwrap();
    let bytes = std::fs::read(&d).unwrap();
    std::fs::write(&d, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_raw_model(&h, &d), Err(Error::Load(_))));
}

#[test]
fn field_round_trip_and_slice() {
    let dir = tempfile::tempdir().unwrap();
    let g = CartesianGrid::new([3, 4, 2], 5.0, [0.0; 3]).unwrap();
    let vals: Vec<Complex64> = (0..2 * g.len()).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
    let (h, d) = (dir.path().join("f.json"), dir.path().join("f.bin"));
    save_field(&g, &vals, RawDtype::Complex128, &h, &d).unwrap();
    let (g2, cols, back) = load_field(&h, &d).unwrap();
    assert_eq!((g2, cols), (g.clone(), 2));
    assert_eq!(back, vals);
    assert!(save_field(&g, &vals[..5], RawDtype::Complex128, &h, &d).is_err());
    assert!(save_field(&g, &vals, RawDtype::Float64, &h, &d).is_err());

    let csv = dir.path().join("s.csv");
    write_slice_csv(&g, &vals[..g.len()], Axis::Z, 1, &csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().filter(|l| !l.is_empty()).count(), 1 + 3 * 4);
    assert!(write_slice_csv(&g, &vals[..g.len()], Axis::Z, 2, &csv).is_err());
}
