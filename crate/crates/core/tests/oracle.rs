use std::f64::consts::PI;

use helmdd_core::grid::*;
use helmdd_core::oracle::*;
use helmdd_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// u'' + 2u'/r + k²u = 0 away from the origin, by central differences.
    #[test]
    fn green_solves_radial_helmholtz(kr in 0.5f64..3.0, ki in 0.0f64..0.2, r in 0.5f64..5.0) {
        let k = Complex64::new(kr, ki);
        let d = 1e-3;
        let (um, u0, up) = (green(k, r - d), green(k, r), green(k, r + d));
        let lap = (up - 2.0 * u0 + um) / (d * d) + (up - um) / (d * r);
        let res = lap + k * k * u0;
        prop_assert!(res.norm() <= 1e-5 * (k * k * u0).norm(), "{}", res);
    }
}

#[test]
fn green_flux_matches_unit_source() {
    // −4πr²·∂u/∂r → 1 as r → 0 for (Δ+k²)u = δ with u = −e^{ikr}/(4πr).
    let k = Complex64::new(1.3, 0.0);
    let r = 1e-4;
    let d = 1e-7;
    let du = (green(k, r + d) - green(k, r - d)) / (2.0 * d);
    let flux = 4.0 * PI * r * r * du;
    assert!((flux - Complex64::new(1.0, 0.0)).norm() < 1e-3, "{flux}");
}

#[test]
fn ball_average_matches_quadrature() {
    for (k, a) in [(Complex64::new(0.7, 0.0), 1.2), (Complex64::new(2.0, 0.1), 0.4)] {
        // (3/a³)∫₀ᵃ g(r) r² dr by composite Simpson.
        let n = 2000;
        let step = a / n as f64;
        let f = |r: f64| if r == 0.0 { Complex64::new(0.0, 0.0) } else { green(k, r) * r * r };
        let mut s = f(0.0) + f(a);
        for i in 1..n {
            s += f(i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let quad = s * step / 3.0 * 3.0 / a.powi(3);
        assert!((green_ball_average(k, a) - quad).norm() < 1e-8 * quad.norm());
    }
}

#[test]
fn analytic_rejects_bad_inputs() {
    let k = Complex64::new(1.0, 0.0);
    assert!(analytic_homogeneous(k, [0.0; 3], &[[0.0; 3]]).is_err());
    assert!(analytic_homogeneous(Complex64::new(1.0, -0.1), [0.0; 3], &[[1.0, 0.0, 0.0]]).is_err());
    let v = analytic_homogeneous(k, [0.0; 3], &[[0.0, 3.0, 4.0]]).unwrap();
    assert!((v[0] - green(k, 5.0)).norm() < 1e-16);
}

#[test]
fn analytic_on_grid_scales_with_amplitude() {
    let g = CartesianGrid::new([5, 5, 5], 10.0, [0.0; 3]).unwrap();
    let k = Complex64::new(0.1, 0.0);
    let src = PointSource::with_amplitude(g.position([2, 2, 2]), Complex64::new(0.0, 2.0));
    let u = analytic_on_grid(&g, k, &src).unwrap();
    assert!(u.iter().all(|z| z.is_finite()));
    let p = g.index([4, 2, 2]);
    assert!((u[p] - green(k, 20.0) * Complex64::new(0.0, 2.0)).norm() < 1e-16);
}

fn metric_setup() -> (CartesianGrid, Vec<Complex64>, ErrorMetricConfig) {
    let g = CartesianGrid::new([9, 9, 9], 10.0, [0.0; 3]).unwrap();
    let src = g.position([4, 4, 4]);
    let k = Complex64::new(2.0 * PI / 30.0, 0.0);
    let u = analytic_homogeneous(k, src, &(0..g.len()).map(|i| {
        let p = g.position(g.coords(i));
        if p == src { [src[0] + 1.0, src[1], src[2]] } else { p }
    }).collect::<Vec<_>>()).unwrap();
    (g, u, ErrorMetricConfig::new(src, 30.0))
}

#[test]
fn error_metric_reference_values() {
    let (g, u, cfg) = metric_setup();
    assert_eq!(error_metric(&u, &u, &g, &cfg).unwrap(), 0.0);
    let zero = vec![Complex64::new(0.0, 0.0); g.len()];
    assert!((error_metric(&u, &zero, &g, &cfg).unwrap() - 2.0).abs() < 1e-14);
    // Conjugating the field leaves the real part and flips the imaginary one.
    let conj: Vec<Complex64> = u.iter().map(|z| z.conj()).collect();
    assert!((error_metric(&u, &conj, &g, &cfg).unwrap() - 2.0).abs() < 1e-14);
    let real: Vec<Complex64> = u.iter().map(|z| Complex64::new(z.re, 0.0)).collect();
    assert!((error_metric(&u, &real, &g, &cfg).unwrap() - 1.0).abs() < 1e-14);
}

#[test]
fn error_metric_mutes_near_source() {
    let (g, u, cfg) = metric_setup();
    let mut v = u.clone();
    // A node 20 m from the source sits inside the 30 m mute.
    v[g.index([6, 4, 4])] += Complex64::new(5.0, 5.0);
    assert_eq!(error_metric(&u, &v, &g, &cfg).unwrap(), 0.0);
    let wide = ErrorMetricConfig { mute_wavelengths: 0.5, ..cfg };
    assert!(error_metric(&u, &v, &g, &wide).unwrap() > 0.0);
    let all = ErrorMetricConfig { mute_wavelengths: 10.0, ..cfg };
    assert!(matches!(error_metric(&u, &v, &g, &all), Err(Error::UndefinedMetric(_))));
    assert!(error_metric(&u[..5], &v, &g, &cfg).is_err());
}

fn cbs_vs_analytic(model: &VelocityModel, f: FrequencySpec) -> f64 {
    let src = PointSource::new(model.grid.position([10, 10, 10]));
    let (u, rep) = cbs_solve(model, f, &[src], &CbsConfig::default()).unwrap();
    assert_eq!(rep.iterations.len(), 1);
    let k = f.wavenumber(model.c[0]);
    let exact = analytic_on_grid(&model.grid, k, &src).unwrap();
    let lambda = f.wavelength(model.c[0].re);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..model.grid.len() {
        let p = model.grid.position(model.grid.coords(i));
        let r = ((p[0] - src.position[0]).powi(2) + (p[1] - src.position[1]).powi(2) + (p[2] - src.position[2]).powi(2)).sqrt();
        if r >= lambda {
            num += (u.col(0)[i] - exact[i]).norm_sqr();
            den += exact[i].norm_sqr();
        }
    }
    (num / den).sqrt()
}

#[test]
fn cbs_homogeneous_matches_analytic() {
    let g = CartesianGrid::new([21; 3], 25.0, [0.0; 3]).unwrap();
    let m = VelocityModel::homogeneous(g, 1500.0).unwrap();
    let f = FrequencySpec::new(10.0).unwrap();
    assert!(cbs_vs_analytic(&m, f) <= 1e-6);
    let lossy = attenuate(&m, &QualityFactor::Uniform(40.0)).unwrap();
    assert!(cbs_vs_analytic(&lossy, f) <= 1e-6);
}

#[test]
fn cbs_converges_on_heterogeneous_medium() {
    let g = CartesianGrid::new([16, 16, 16], 25.0, [0.0; 3]).unwrap();
    let m = VelocityModel::from_fn(g, "gradient", |p| 1500.0 + 0.8 * p[2]).unwrap();
    let src = PointSource::new(m.grid.position([8, 8, 4]));
    let cfg = CbsConfig { tol: 1e-10, ..Default::default() };
    let (u, rep) = cbs_solve(&m, FrequencySpec::new(8.0).unwrap(), &[src], &cfg).unwrap();
    let hist = &rep.history[0];
    assert!(*hist.last().unwrap() <= 1e-10, "{:?}", hist.last());
    assert!(rep.epsilon > 0.0);
    assert!(u.col(0).iter().all(|z| z.is_finite()));
    assert!(cbs_solve(&m, FrequencySpec::new(8.0).unwrap(), &[src], &CbsConfig { damping_factor: 1.0, ..cfg }).is_err());
}
