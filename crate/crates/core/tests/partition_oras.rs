use helmdd_core::assembly::{BoundarySpec, HelmholtzProblem, PmlProfile};
use helmdd_core::grid::{CartesianGrid, FrequencySpec, PointSource, VelocityModel};
use helmdd_core::krylov::{gmres, KrylovConfig};
use helmdd_core::local::InterfaceCondition;
use helmdd_core::oras::*;
use helmdd_core::partition::*;
use helmdd_core::stencil::WeightTable;
use helmdd_core::{Block64, Error, Operator64};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_block(n: usize, m: usize, seed: u64) -> Block64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Block64::from_vec(n, m, (0..n * m).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
}

fn problem(n: usize, g: f64) -> HelmholtzProblem {
    let h = 20.0;
    let m = VelocityModel::homogeneous(CartesianGrid::new([n; 3], h, [0.0; 3]).unwrap(), 1500.0).unwrap();
    let f = FrequencySpec::new(1500.0 / (g * h)).unwrap();
    HelmholtzProblem::new(&m, f, WeightTable::standard(), BoundarySpec::default(), PmlProfile::with_npml(4)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn partition_of_unity_covers_each_point_once(
        dims in prop::array::uniform3(3usize..14),
        counts in prop::array::uniform3(1usize..4),
        ovl in 0usize..3,
    ) {
        let fits = (0..3).all(|a| counts[a] == 1 || dims[a] / counts[a] >= 2 * ovl + 1);
        let p = match partition_grid(dims, counts, ovl) {
            Ok(p) => p,
            Err(_) => {
                prop_assert!(!fits);
                return Ok(());
            }
        };
        prop_assert!(fits);
        let pou = build_partition_of_unity(&p);
        let mut sum = vec![0u32; p.npoints()];
        for (j, s) in p.subdomains.iter().enumerate() {
            for (l, pt) in s.extended.points().enumerate() {
                sum[pt[0] + dims[0] * (pt[1] + dims[1] * pt[2])] += u32::from(pou.weights[j][l]);
            }
            prop_assert_eq!(s.extended, s.owned.dilate(ovl, dims));
        }
        prop_assert!(sum.iter().all(|&s| s == 1));
        // Owned boxes are balanced to within one point per axis.
        for a in 0..3 {
            let sizes: Vec<usize> = p.subdomains.iter().map(|s| s.owned.dims()[a]).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn scatter_exchange_gather_preserve_values(
        dims in prop::array::uniform3(4usize..16),
        counts in prop::array::uniform3(1usize..4),
        ovl in 1usize..3,
        seed in 0u64..1000,
    ) {
        prop_assume!((0..3).all(|a| counts[a] == 1 || dims[a] / counts[a] >= 2 * ovl + 1));
        let p = partition_grid(dims, counts, ovl).unwrap();
        let pou = build_partition_of_unity(&p);
        let v = random_block(p.npoints(), 2, seed);
        let d = scatter(&p, &v).unwrap();
        prop_assert!(is_consistent(&p, &d));
        let e = halo_exchange(&p, &pou, &d).unwrap();
        prop_assert_eq!(&e.locals, &d.locals);
        prop_assert_eq!(gather(&p, &pou, &d).unwrap(), v.clone());

        // Corrupt every non-owned entry: the exchange restores them.
        let mut bad = d.clone();
        for (j, b) in bad.locals.iter_mut().enumerate() {
            for (l, w) in pou.weights[j].iter().enumerate() {
                if *w == 0 {
                    for c in 0..2 {
                        b.col_mut(c)[l] = Complex64::new(1e3, -7.0);
                    }
                }
            }
        }
        let fixed = halo_exchange(&p, &pou, &bad).unwrap();
        prop_assert_eq!(fixed.locals, d.locals);
    }
}

#[test]
fn exchange_plans_are_sorted_by_sender() {
    let p = partition_grid([15, 10, 10], [3, 2, 2], 2).unwrap();
    for j in 0..p.len() {
        let from: Vec<usize> = p.incoming(j).iter().map(|x| x.from).collect();
        assert!(from.windows(2).all(|w| w[0] < w[1]));
        assert!(!from.contains(&j));
        assert_eq!(p.subdomains[j].neighbors.iter().filter(|&&i| i != j).copied().collect::<Vec<_>>(), from);
    }
}

#[test]
fn invalid_partitions_rejected() {
    assert!(matches!(partition_grid([4, 4, 4], [5, 1, 1], 1), Err(Error::InvalidPartition(_))));
    assert!(partition_grid([4, 4, 4], [0, 1, 1], 1).is_err());
    // Owned boxes must be at least 2·ovl+1 wide.
    assert!(partition_grid([9, 4, 4], [2, 1, 1], 2).is_err());
    assert!(partition_grid([10, 4, 4], [2, 1, 1], 2).is_ok());
    let owned = vec![IndexBox::new([0; 3], [2, 4, 4])];
    assert!(BoxPartition::from_owned([4; 3], [1; 3], 1, owned).is_err());
}

#[test]
fn descriptor_round_trip() {
    let p = partition_grid([14, 21, 14], [2, 3, 2], 3).unwrap();
    let back = BoxPartition::from_json(&p.to_json().unwrap()).unwrap();
    assert_eq!(back, p);
    assert!(BoxPartition::from_json("{\"dims\":[1]}").is_err());
}

#[test]
fn distributed_matvec_matches_monolithic() {
    let pr = problem(10, 6.0);
    let a: Operator64 = pr.assemble().unwrap();
    let dims = pr.grid.dims();
    for counts in [[1, 1, 1], [2, 2, 2], [3, 2, 1]] {
        let p = partition_grid(dims, counts, 2).unwrap();
        let pou = build_partition_of_unity(&p);
        let ops: Vec<Operator64> = (0..p.len()).map(|j| p.extract_local(&a, j).unwrap()).collect();
        let v = random_block(a.n(), 3, 4);
        let d = distributed_matvec(&ops, &p, &pou, &scatter(&p, &v).unwrap()).unwrap();
        assert!(is_consistent(&p, &d));
        let got = gather(&p, &pou, &d).unwrap();
        let want = a.apply(&v).unwrap();
        for (x, y) in got.as_slice().iter().zip(want.as_slice()) {
            assert!((x - y).norm() <= 1e-12 * y.norm().max(1e-12));
        }
    }
}

#[test]
fn single_subdomain_is_an_exact_inverse() {
    let pr = problem(10, 6.0);
    let a: Operator64 = pr.assemble().unwrap();
    let p = partition_grid(pr.grid.dims(), [1, 1, 1], 3).unwrap();
    let prec = setup::<f64>(&pr, WeightTable::standard(), p, &OrasOptions::default()).unwrap();
    let src = PointSource::new(pr.grid.position([13; 3]));
    let f: Block64 = pr.build_rhs(&[src]).unwrap();
    let (_, rep) = gmres(&a, &prec.operator(&a), &f, &KrylovConfig::with_tol(1e-20)).unwrap();
    assert_eq!(rep.iterations, vec![1]);
}

#[test]
fn one_level_converges_for_all_interfaces() {
    let pr = problem(12, 6.0);
    let a: Operator64 = pr.assemble().unwrap();
    let src = PointSource::new(pr.grid.position([14; 3]));
    let f: Block64 = pr.build_rhs(&[src]).unwrap();
    let mut its = Vec::new();
    for interface in [InterfaceCondition::Pml, InterfaceCondition::Robin, InterfaceCondition::Dirichlet] {
        let p = partition_grid(pr.grid.dims(), [2, 2, 2], 3).unwrap();
        let opts = OrasOptions { interface, ..Default::default() };
        let prec = setup::<f64>(&pr, WeightTable::standard(), p, &opts).unwrap();
        let (_, rep) = gmres(&a, &prec.operator(&a), &f, &KrylovConfig::default()).unwrap();
        assert!(rep.all_converged(), "{interface:?}");
        its.push(rep.iterations[0]);
    }
    // Absorbing interfaces do not lose to plain restriction.
    assert!(its[0] <= its[2], "{its:?}");
}

#[test]
fn inconsistent_input_rejected() {
    let pr = problem(8, 6.0);
    let p = partition_grid(pr.grid.dims(), [2, 1, 1], 2).unwrap();
    let prec = setup_one_level::<f64>(&pr, p.clone(), InterfaceCondition::Pml).unwrap();
    let mut d = DistributedBlock::<f64>::zeros(&p, 1);
    d.consistent = false;
    assert!(matches!(prec.apply_one_level(&d), Err(Error::Protocol(_))));
    assert!(prec.apply_two_level(&prec, &Block64::zeros(prec.n(), 1)).is_err());
}

#[test]
fn trilinear_reproduces_linear_functions() {
    let (fine, coarse, s) = ([9, 7, 5], [5, 4, 3], 2);
    let z = trilinear_interpolation(fine, coarse, s).unwrap();
    let lin = |p: [f64; 3]| 1.5 + 0.3 * p[0] - 0.7 * p[1] + 0.2 * p[2];
    let mut xc = vec![0.0; coarse.iter().product()];
    for k in 0..coarse[2] {
        for j in 0..coarse[1] {
            for i in 0..coarse[0] {
                xc[i + coarse[0] * (j + coarse[1] * k)] = lin([(s * i) as f64, (s * j) as f64, (s * k) as f64]);
            }
        }
    }
    for r in 0..z.nrows {
        let row = z.row_ptr[r]..z.row_ptr[r + 1];
        let sum: f64 = z.values[row.clone()].iter().sum();
        assert!((sum - 1.0).abs() < 1e-14);
        let got: f64 = row.map(|q| z.values[q] * xc[z.col_idx[q] as usize]).sum();
        let p = [r % fine[0], (r / fine[0]) % fine[1], r / (fine[0] * fine[1])];
        // Fine points past the last coarse node copy it.
        let clamp = |a: usize| (p[a].min(s * (coarse[a] - 1))) as f64;
        assert!((got - lin([clamp(0), clamp(1), clamp(2)])).abs() < 1e-12);
    }
    assert!(trilinear_interpolation(fine, [6, 4, 3], 2).is_err());
}

#[test]
fn coarse_partition_inherits_ownership() {
    let fine = partition_grid([17, 17, 17], [2, 2, 2], 3).unwrap();
    let cp = coarse_partition(&fine, [9, 9, 9], 2, 1).unwrap();
    assert_eq!(cp.len(), fine.len());
    for (c, f) in cp.subdomains.iter().zip(&fine.subdomains) {
        for pt in c.owned.points() {
            assert!(f.owned.contains(pt.map(|x| 2 * x)));
        }
    }
}

#[test]
fn coarse_grid_below_four_points_rejected() {
    let pr = problem(10, 5.0);
    let p = partition_grid(pr.grid.dims(), [2, 2, 2], 2).unwrap();
    let opts = OrasOptions { level: Level::Two, ..Default::default() };
    assert!(matches!(setup::<f64>(&pr, WeightTable::standard(), p, &opts), Err(Error::InvalidArgument(_))));
}

#[test]
fn two_level_exact_and_inexact_coarse_solves_converge() {
    let pr = problem(14, 10.0);
    let a: Operator64 = pr.assemble().unwrap();
    let f: Block64 = pr.build_rhs(&[PointSource::new(pr.grid.position([15; 3]))]).unwrap();
    for exact in [true, false] {
        let p = partition_grid(pr.grid.dims(), [2, 2, 2], 3).unwrap();
        let opts = OrasOptions {
            level: Level::Two,
            coarse: CoarseOptions { exact, ..Default::default() },
            ..Default::default()
        };
        let prec = setup::<f64>(&pr, WeightTable::standard(), p, &opts).unwrap();
        assert_eq!(prec.coarse.as_ref().unwrap().scale, 0.125);
        let cfg = KrylovConfig { flexible: !exact, ..Default::default() };
        let (_, rep) = gmres(&a, &prec.operator(&a), &f, &cfg).unwrap();
        assert!(rep.all_converged(), "exact={exact}");
    }
}
