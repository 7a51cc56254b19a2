use kasner_lab::asym_data::*;
use kasner_lab::grid::*;
use kasner_lab::Error;
use std::f64::consts::PI;

fn p_of_u(u: f64) -> [f64; 3] {
    let d = 1.0 + u + u * u;
    [-u / d, (1.0 + u) / d, u * (1.0 + u) / d]
}

/// derivative of p_of_u with respect to u
fn dp_du(u: f64) -> [f64; 3] {
    let d = 1.0 + u + u * u;
    let dd = 1.0 + 2.0 * u;
    [
        (-d + u * dd) / (d * d),
        (d - (1.0 + u) * dd) / (d * d),
        ((1.0 + 2.0 * u) * d - u * (1.0 + u) * dd) / (d * d),
    ]
}

/// composite Simpson with many panels, used as the 1D oracle
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let n = 20_000;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn exponents_for_constant_u() {
    let grid = SpatialGrid::periodic(1.0, 8);
    let e = exponents_from_u(&grid, &vec![2.0; grid.len()]).unwrap();
    let expect = [-2.0 / 7.0, 3.0 / 7.0, 6.0 / 7.0];
    for i in 0..3 {
        assert!(e.p[i].iter().all(|v| (v - expect[i]).abs() < 1e-15));
    }
    assert!((e.eps - 1.0 / 7.0).abs() < 1e-15);
    let e3 = exponents_from_u(&grid, &vec![3.0; grid.len()]).unwrap();
    let expect3 = [-3.0 / 13.0, 4.0 / 13.0, 12.0 / 13.0];
    for i in 0..3 {
        assert!((e3.p[i][0] - expect3[i]).abs() < 1e-15);
    }
}

#[test]
fn exponents_for_varying_u_satisfy_both_relations() {
    let grid = SpatialGrid::periodic(1.0, 12);
    let u = grid.sample(|x| 2.0 + 0.1 * (2.0 * PI * x[0]).sin());
    let e = exponents_from_u(&grid, &u).unwrap();
    for x in 0..grid.len() {
        let s: f64 = (0..3).map(|i| e.p[i][x]).sum();
        let q: f64 = (0..3).map(|i| e.p[i][x] * e.p[i][x]).sum();
        assert!((s - 1.0).abs() < 1e-12 && (q - 1.0).abs() < 1e-12);
        assert!(e.p[0][x] < e.p[1][x] && e.p[1][x] < e.p[2][x]);
    }
    assert!(e.quadratic_defect().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn u_at_most_one_is_rejected_with_location() {
    let grid = SpatialGrid::periodic(1.0, 8);
    let mut u = vec![2.0; grid.len()];
    u[grid.index(3, 1, 4)] = 1.0;
    match exponents_from_u(&grid, &u) {
        Err(Error::Exponents { point, .. }) => assert_eq!(point, [3, 1, 4]),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn raw_exponents_are_validated() {
    let grid = SpatialGrid::periodic(1.0, 8);
    let len = grid.len();
    let bad = [vec![0.0; len], vec![0.0; len], vec![1.0; len]];
    assert!(matches!(validate_exponents(&grid, bad), Err(Error::Exponents { .. })));
    let (a, b) = (-1.0 / 3.0, 2.0 / 3.0);
    let degenerate = [vec![a; len], vec![b; len], vec![b; len]];
    assert!(validate_exponents(&grid, degenerate).is_err());
    let ok = p_of_u(2.5);
    assert!(validate_exponents(&grid, [vec![ok[0]; len], vec![ok[1]; len], vec![ok[2]; len]]).is_ok());
}

fn u_along(axis: usize) -> impl Fn([f64; 3]) -> f64 {
    move |x| 2.0 + 0.3 * (2.0 * PI * x[axis]).sin()
}

fn c11_error(n: usize) -> f64 {
    let grid = SpatialGrid::periodic(1.0, n);
    let p = exponents_from_u(&grid, &grid.sample(u_along(2))).unwrap();
    let slice = vec![1.5; n * n];
    let c11 = solve_c11(&grid, &p, &vec![1.0; grid.len()], &slice).unwrap();
    let integrand = |s: f64| {
        let u = u_along(2)([0.0, 0.0, s]);
        let p = p_of_u(u);
        let dp3 = dp_du(u)[2] * 0.3 * 2.0 * PI * (2.0 * PI * s).cos();
        2.0 * dp3 / (p[2] - p[0])
    };
    (0..n)
        .map(|k| {
            let exact = 1.5f64.ln() - simpson(integrand, 0.0, k as f64 / n as f64);
            (c11[grid.index(2, 5, k)].ln() - exact).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn c11_matches_one_dimensional_oracle() {
    let (e16, e32, e64) = (c11_error(16), c11_error(32), c11_error(64));
    assert!((e16 / e32).log2() > 3.5 && (e32 / e64).log2() > 3.5, "{e16} {e32} {e64}");
    assert!(e64 < 1e-6, "{e64}");
}

#[test]
fn c11_is_constant_for_homogeneous_inputs() {
    let grid = SpatialGrid::periodic(1.0, 8);
    let p = exponents_from_u(&grid, &vec![2.0; grid.len()]).unwrap();
    let slice: Vec<f64> = (0..64).map(|c| 1.0 + 0.01 * c as f64).collect();
    let c11 = solve_c11(&grid, &p, &vec![2.0; grid.len()], &slice).unwrap();
    for x in 0..grid.len() {
        assert!((c11[x] - slice[x / 8]).abs() < 1e-14);
    }
    assert!(matches!(
        solve_c11(&grid, &p, &vec![-1.0; grid.len()], &slice),
        Err(Error::NotPositive { .. })
    ));
}

fn kappa23_error(n: usize) -> f64 {
    // p varies in x2 only, c = identity: d3 kappa = d2 p2, so kappa = x3 d2 p2
    let grid = SpatialGrid::periodic(1.0, n);
    let p = exponents_from_u(&grid, &grid.sample(u_along(1))).unwrap();
    let one = vec![1.0; grid.len()];
    let k = solve_kappa23(&grid, &p, &one, &one, &one, &vec![0.0; n * n]).unwrap();
    (0..grid.len())
        .map(|x| {
            let y = grid.coords(x);
            let u = u_along(1)(y);
            let d2p2 = dp_du(u)[1] * 0.3 * 2.0 * PI * (2.0 * PI * y[1]).cos();
            (k[x] - y[2] * d2p2).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn kappa23_matches_one_dimensional_oracle() {
    let (e16, e32) = (kappa23_error(16), kappa23_error(32));
    assert!((e16 / e32).log2() > 3.5, "{e16} {e32}");
    assert!(e32 < 1e-4);
}

fn kappa13_error(n: usize) -> f64 {
    // kappa12 = 0, c = identity, p(x1): d3 kappa13 = d1 p1
    let grid = SpatialGrid::periodic(1.0, n);
    let p = exponents_from_u(&grid, &grid.sample(u_along(0))).unwrap();
    let c = TensorField::projected(
        2,
        (0..9).map(|q| vec![if q % 4 == 0 { 1.0 } else { 0.0 }; grid.len()]).collect(),
        Symmetry::Symmetric2,
    )
    .unwrap();
    let k = solve_kappa13(&grid, &p, &c, &vec![0.0; grid.len()], &vec![0.25; n * n]).unwrap();
    (0..grid.len())
        .map(|x| {
            let y = grid.coords(x);
            let d1p1 = dp_du(u_along(0)(y))[0] * 0.3 * 2.0 * PI * (2.0 * PI * y[0]).cos();
            (k[x] - (0.25 + y[2] * d1p1)).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn kappa13_matches_one_dimensional_oracle() {
    let (e16, e32) = (kappa13_error(16), kappa13_error(32));
    assert!((e16 / e32).log2() > 3.5, "{e16} {e32}");
    assert!(e32 < 1e-4);
}

fn generic_free(grid: &SpatialGrid) -> (KasnerExponents, FreeData) {
    let u = grid.sample(|x| 2.0 + 0.2 * (2.0 * PI * x[0]).sin() + 0.1 * (2.0 * PI * (x[1] + x[2])).cos());
    let p = exponents_from_u(grid, &u).unwrap();
    let n = grid.n;
    let slice = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        (0..n * n).map(|c| f((c / n) as f64 / n as f64, (c % n) as f64 / n as f64)).collect()
    };
    let free = FreeData {
        c22: grid.sample(|x| 1.0 + 0.2 * (2.0 * PI * (x[0] - x[2])).sin()),
        c33: grid.sample(|x| 1.2 + 0.1 * (2.0 * PI * x[1]).cos()),
        kappa12: grid.sample(|x| 0.05 * (2.0 * PI * (x[0] + x[2])).sin()),
        c11_slice: slice(&|a, b| 1.0 + 0.1 * (2.0 * PI * a).cos() * (2.0 * PI * b).sin()),
        kappa23_slice: slice(&|a, _| 0.05 * (2.0 * PI * a).sin()),
        kappa13_slice: slice(&|_, b| 0.02 * (2.0 * PI * b).cos()),
    };
    (p, free)
}

/// Max residual away from the x3 seam; the x3 integration of generic data is
/// not periodic, so the stencils straddling the seam see a jump.
fn interior(d: &AsymptoticDataSet, i: usize) -> f64 {
    let r = momentum_residual(d, i);
    let n = d.grid.n;
    (0..d.grid.len())
        .filter(|x| (3..n - 3).contains(&(x % n)))
        .map(|x| r[x].abs())
        .fold(0.0, f64::max)
}

fn assembled(n: usize) -> AsymptoticDataSet {
    let grid = SpatialGrid::periodic(1.0, n);
    let (p, free) = generic_free(&grid);
    assemble_dataset(grid, p, &free).unwrap()
}

#[test]
fn assembled_data_satisfies_constraints_with_refinement() {
    let (d16, d32) = (assembled(16), assembled(32));
    for i in 0..3 {
        let (a, b) = (interior(&d16, i), interior(&d32, i));
        assert!(b < a / 4.0, "i={i}: {a} -> {b}");
        assert!(b < 1e-3, "i={i}: {b}");
    }
}

#[test]
fn homogeneous_data_has_zero_residuals() {
    let grid = SpatialGrid::periodic(1.0, 8);
    let p = exponents_from_u(&grid, &vec![2.0; grid.len()]).unwrap();
    let d = assemble_dataset(grid, p, &FreeData::trivial(&grid)).unwrap();
    assert_eq!(d.residual_summary(), [0.0; 3]);
    for i in 0..3 {
        assert!(frame_momentum_residual(&d, i).iter().all(|v| *v == 0.0));
    }
    assert!(d.kappa23.iter().chain(&d.kappa13).all(|v| *v == 0.0));
    assert_eq!(d.seam.max(), 0.0);
}

#[test]
fn invariants_of_assembled_data() {
    let d = assembled(12);
    assert!(d.kappa_formula_defect() < 1e-10);
    let back = d.c_from_f();
    for q in 0..9 {
        for x in 0..d.grid.len() {
            let c = d.c.comps[q][x];
            assert!((back.comps[q][x] - c).abs() < 1e-10 * (1.0 + c.abs()));
        }
    }
    // h is the inverse of f
    for x in 0..d.grid.len() {
        for i in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..3).map(|a| d.f.comps[i * 3 + a][x] * d.h.comps[a * 3 + c][x]).sum();
                assert!((v - if i == c { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
    for x in 0..d.grid.len() {
        assert!(d.f.comps[3][x] == 0.0 && d.f.comps[6][x] == 0.0 && d.f.comps[7][x] == 0.0);
    }
}

#[test]
fn perturbing_c12_breaks_the_constraints() {
    let d = assembled(16);
    let tol = (0..3).map(|i| interior(&d, i)).fold(0.0, f64::max);
    let mut c = d.c.clone();
    for x in 0..d.grid.len() {
        let bump = 0.01 * (2.0 * PI * d.grid.coords(x)[1]).sin();
        c.comps[1][x] += bump;
        c.comps[3][x] += bump;
    }
    let bad = AsymptoticDataSet::from_c(d.grid, d.p.clone(), c).unwrap();
    let worst = (0..3).map(|i| interior(&bad, i)).fold(0.0, f64::max);
    assert!(worst > 10.0 * tol, "{worst} vs {tol}");
}

/// frame residual I against -1/2 sum_{j >= I} f_Ij times metric residual j
fn triangular_mismatch(d: &AsymptoticDataSet) -> (f64, f64) {
    let mom: Vec<Scalar> = (0..3).map(|i| momentum_residual(d, i)).collect();
    let mut err = 0.0_f64;
    let mut scale = 0.0_f64;
    for big_i in 0..3 {
        let fr = frame_momentum_residual(d, big_i);
        for x in 0..d.grid.len() {
            let pred: f64 = (big_i..3).map(|j| -0.5 * d.f.comps[big_i * 3 + j][x] * mom[j][x]).sum();
            err = err.max((fr[x] - pred).abs());
            scale = scale.max(fr[x].abs());
        }
    }
    (err, scale)
}

#[test]
fn frame_and_metric_constraints_are_related_by_a_triangular_factor() {
    // directly prescribed c violates the constraints, so both sides are O(1)
    let grid = SpatialGrid::periodic(1.0, 16);
    let spec = DataSpec {
        construction: Construction::Direct,
        u: Profile::constant(2.0).with_mode(0.2, [1, 0, 0]).with_mode(0.1, [0, 1, 1]),
        c11: Profile::constant(1.0).with_mode(0.1, [0, 1, 0]),
        c22: Profile::constant(1.3).with_mode(0.1, [1, 0, 1]),
        c33: Profile::constant(0.9).with_mode(0.05, [1, 1, 0]),
        c12: Profile::constant(0.1).with_mode(0.05, [0, 0, 1]),
        c13: Profile::constant(-0.05).with_mode(0.05, [1, 0, 0]),
        c23: Profile::constant(0.08).with_mode(0.04, [0, 1, 0]),
        ..DataSpec::default()
    };
    let d = spec.build(grid, 0).unwrap();
    let (err, scale) = triangular_mismatch(&d);
    assert!(scale > 0.1);
    assert!(err < 1e-3 * scale, "{err} vs {scale}");
    let (err32, _) = triangular_mismatch(&spec.build(SpatialGrid::periodic(1.0, 32), 0).unwrap());
    assert!(err32 < err / 10.0);
}

#[test]
fn both_residuals_vanish_together() {
    let d = assembled(16);
    let tol_m = d.residual_summary().iter().cloned().fold(0.0, f64::max);
    let tol_f = (0..3).map(|i| max_abs(&frame_momentum_residual(&d, i))).fold(0.0, f64::max);
    assert!(tol_f < 2.0 * tol_m + 1e-12);
}

#[test]
fn balanced_c22_removes_x1_sources() {
    // with u(x1) only and the balanced c22, c11 needs no x3 integration and
    // the i = 1 residual is small without any correction
    let grid = SpatialGrid::periodic(1.0, 32);
    let spec = DataSpec {
        u: Profile::constant(2.0).with_mode(0.1, [1, 0, 0]),
        c22_balanced: true,
        ..DataSpec::default()
    };
    let d = spec.build(grid, 0).unwrap();
    let k13 = max_abs(&d.kappa13);
    assert!(k13 < 1e-5, "kappa13 = {k13}");
    assert!(d.residual_summary().iter().all(|r| *r < 1e-4), "{:?}", d.residual_summary());
}

#[test]
fn randomized_data_is_reproducible() {
    let grid = SpatialGrid::periodic(1.0, 8);
    let spec = DataSpec { random_amplitude: 0.05, ..DataSpec::default() };
    let a = spec.build(grid, 7).unwrap();
    let b = spec.build(grid, 7).unwrap();
    let c = spec.build(grid, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.c, c.c);
}
