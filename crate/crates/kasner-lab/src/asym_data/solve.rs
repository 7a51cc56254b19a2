use super::{deriv, ln, AsymptoticDataSet, KasnerExponents, SeamReport, DEGENERACY_GUARD};
use crate::grid::{Scalar, SpatialGrid, Symmetry, TensorField};
use crate::{Error, Result};

/// The freely prescribed inputs: three functions of all variables and three
/// functions on the face `x3 = 0` (indexed `i * n + j`).
#[derive(Debug, Clone, PartialEq)]
pub struct FreeData {
    pub c22: Scalar,
    pub c33: Scalar,
    pub kappa12: Scalar,
    pub c11_slice: Scalar,
    pub kappa23_slice: Scalar,
    pub kappa13_slice: Scalar,
}

impl FreeData {
    /// Identity metric data with vanishing `kappa` slices.
    pub fn trivial(grid: &SpatialGrid) -> Self {
        let (len, n2) = (grid.len(), grid.n * grid.n);
        FreeData {
            c22: vec![1.0; len],
            c33: vec![1.0; len],
            kappa12: vec![0.0; len],
            c11_slice: vec![1.0; n2],
            kappa23_slice: vec![0.0; n2],
            kappa13_slice: vec![0.0; n2],
        }
    }
}

/// Cumulative `int_0^{x3_k} q` along one column, composite Simpson with a
/// 3/8 panel for odd counts and a cubic first panel.
fn cumulative_simpson(q: &[f64], h: f64, out: &mut [f64]) {
    let n = q.len();
    out[0] = 0.0;
    if n < 4 {
        for k in 1..n {
            out[k] = out[k - 1] + 0.5 * h * (q[k - 1] + q[k]);
        }
        return;
    }
    out[1] = h / 24.0 * (9.0 * q[0] + 19.0 * q[1] - 5.0 * q[2] + q[3]);
    let mut even = 0.0;
    for k in 2..n {
        if k % 2 == 0 {
            even += h / 3.0 * (q[k - 2] + 4.0 * q[k - 1] + q[k]);
            out[k] = even;
        } else {
            out[k] = out[k - 3] + 3.0 * h / 8.0 * (q[k - 3] + 3.0 * q[k - 2] + 3.0 * q[k - 1] + q[k]);
        }
    }
}

/// Integrates `q` along every `x3` column. Returns the cumulative integrals and
/// the per-column full-period integrals (periodic trapezoid).
fn integrate_columns(grid: &SpatialGrid, q: &[f64]) -> (Scalar, Scalar) {
    let n = grid.n;
    let h = grid.h();
    let mut out = vec![0.0; q.len()];
    let mut loops = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for c in 0..n * n {
        let base = c * n;
        cumulative_simpson(&q[base..base + n], h, &mut col);
        out[base..base + n].copy_from_slice(&col);
        loops[c] = h * q[base..base + n].iter().sum::<f64>();
    }
    (out, loops)
}

fn check_positive(grid: &SpatialGrid, f: &[f64]) -> Result<()> {
    match f.iter().position(|v| !(*v > 0.0)) {
        None => Ok(()),
        Some(x) => Err(Error::NotPositive { point: grid.point(x) }),
    }
}

fn check_lengths(grid: &SpatialGrid, full: &[&[f64]], slices: &[&[f64]]) -> Result<()> {
    if full.iter().any(|f| f.len() != grid.len()) || slices.iter().any(|s| s.len() != grid.n * grid.n) {
        return Err(Error::Invalid("input field has the wrong size".into()));
    }
    Ok(())
}

fn guard_p2_p3(grid: &SpatialGrid, p: &KasnerExponents) -> Result<()> {
    for x in 0..grid.len() {
        if (p.p[1][x] - p.p[2][x]).abs() < DEGENERACY_GUARD {
            return Err(Error::Degenerate { point: grid.point(x), reason: "p2 = p3".into() });
        }
    }
    Ok(())
}

fn solve_c11_inner(
    grid: &SpatialGrid,
    p: &KasnerExponents,
    c22: &[f64],
    c11_slice: &[f64],
) -> Result<(Scalar, f64)> {
    check_lengths(grid, &[c22], &[c11_slice])?;
    check_positive(grid, c22)?;
    check_positive(grid, c11_slice)?;
    let [p1, p2, p3] = &p.p;
    let dlc22 = deriv(grid, &ln(c22), 2);
    let dp3 = deriv(grid, p3, 2);
    let q: Scalar = (0..grid.len())
        .map(|x| ((p3[x] - p2[x]) * dlc22[x] + 2.0 * dp3[x]) / (p3[x] - p1[x]))
        .collect();
    let (cum, loops) = integrate_columns(grid, &q);
    let n = grid.n;
    let c11 = (0..grid.len()).map(|x| (c11_slice[x / n].ln() - cum[x]).exp()).collect();
    let seam = loops.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok((c11, seam))
}

/// `c11` from the `i = 3` constraint, integrated along `x3` from the slice.
pub fn solve_c11(grid: &SpatialGrid, p: &KasnerExponents, c22: &[f64], c11_slice: &[f64]) -> Result<Scalar> {
    solve_c11_inner(grid, p, c22, c11_slice).map(|r| r.0)
}

/// Solves `d3 k + (1/2) d3 log(c11 c22 c33) k = b` along `x3` with the exact
/// integrating factor `sqrt(c11 c22 c33)` normalised to 1 on the slice.
fn integrating_factor_solve(
    grid: &SpatialGrid,
    diag: [&[f64]; 3],
    b: &[f64],
    slice: &[f64],
) -> (Scalar, f64) {
    let n = grid.n;
    let len = grid.len();
    let vol: Scalar = (0..len).map(|x| (diag[0][x] * diag[1][x] * diag[2][x]).sqrt()).collect();
    let mu: Scalar = (0..len).map(|x| vol[x] / vol[(x / n) * n]).collect();
    let q: Scalar = (0..len).map(|x| mu[x] * b[x]).collect();
    let (cum, loops) = integrate_columns(grid, &q);
    let out = (0..len).map(|x| (slice[x / n] + cum[x]) / mu[x]).collect();
    // value continued to x3 = delta compared with the slice
    let dlv = deriv(grid, &ln(&vol), 2);
    let mut seam = 0.0_f64;
    for c in 0..n * n {
        let log_mu_end = grid.h() * dlv[c * n..(c + 1) * n].iter().sum::<f64>();
        let end = (slice[c] + loops[c]) / log_mu_end.exp();
        seam = seam.max((end - slice[c]).abs());
    }
    (out, seam)
}

fn solve_kappa23_inner(
    grid: &SpatialGrid,
    p: &KasnerExponents,
    c11: &[f64],
    c22: &[f64],
    c33: &[f64],
    slice: &[f64],
) -> Result<(Scalar, f64)> {
    check_lengths(grid, &[c11, c22, c33], &[slice])?;
    for c in [c11, c22, c33] {
        check_positive(grid, c)?;
    }
    guard_p2_p3(grid, p)?;
    let [p1, p2, p3] = &p.p;
    let d2lc11 = deriv(grid, &ln(c11), 1);
    let d2lc33 = deriv(grid, &ln(c33), 1);
    let d2p2 = deriv(grid, p2, 1);
    let b: Scalar = (0..grid.len())
        .map(|x| 0.5 * (p2[x] - p1[x]) * d2lc11[x] + 0.5 * (p2[x] - p3[x]) * d2lc33[x] + d2p2[x])
        .collect();
    Ok(integrating_factor_solve(grid, [c11, c22, c33], &b, slice))
}

/// `kappa_2^3` from the `i = 2` constraint.
pub fn solve_kappa23(
    grid: &SpatialGrid,
    p: &KasnerExponents,
    c11: &[f64],
    c22: &[f64],
    c33: &[f64],
    slice: &[f64],
) -> Result<Scalar> {
    solve_kappa23_inner(grid, p, c11, c22, c33, slice).map(|r| r.0)
}

fn solve_kappa13_inner(
    grid: &SpatialGrid,
    p: &KasnerExponents,
    diag: [&[f64]; 3],
    kappa12: &[f64],
    slice: &[f64],
) -> Result<(Scalar, f64)> {
    check_lengths(grid, &[diag[0], diag[1], diag[2], kappa12], &[slice])?;
    for c in diag {
        check_positive(grid, c)?;
    }
    let len = grid.len();
    let [p1, p2, p3] = &p.p;
    let d1lc22 = deriv(grid, &ln(diag[1]), 0);
    let d1lc33 = deriv(grid, &ln(diag[2]), 0);
    let d1p1 = deriv(grid, p1, 0);
    let d2k12 = deriv(grid, kappa12, 1);
    let big_l: Scalar = (0..len).map(|x| (diag[0][x] * diag[1][x] * diag[2][x]).ln()).collect();
    let d2l = deriv(grid, &big_l, 1);
    let b: Scalar = (0..len)
        .map(|x| {
            -0.5 * ((p2[x] - p1[x]) * d1lc22[x] + (p3[x] - p1[x]) * d1lc33[x] - 2.0 * d1p1[x]
                + 2.0 * d2k12[x]
                + d2l[x] * kappa12[x])
        })
        .collect();
    Ok(integrating_factor_solve(grid, diag, &b, slice))
}

/// `kappa_1^3` from the `i = 1` constraint; `c` supplies the diagonal entries.
pub fn solve_kappa13(
    grid: &SpatialGrid,
    p: &KasnerExponents,
    c: &TensorField,
    kappa12: &[f64],
    slice: &[f64],
) -> Result<Scalar> {
    let diag = [&c.comps[0][..], &c.comps[4][..], &c.comps[8][..]];
    solve_kappa13_inner(grid, p, diag, kappa12, slice).map(|r| r.0)
}

/// Builds a full data set satisfying all three momentum constraints from the
/// exponents, the three free functions and the three slices.
pub fn assemble_dataset(grid: SpatialGrid, p: KasnerExponents, free: &FreeData) -> Result<AsymptoticDataSet> {
    check_lengths(
        &grid,
        &[&free.c22, &free.c33, &free.kappa12],
        &[&free.c11_slice, &free.kappa23_slice, &free.kappa13_slice],
    )?;
    check_positive(&grid, &free.c33)?;
    let (c11, seam_c11) = solve_c11_inner(&grid, &p, &free.c22, &free.c11_slice)?;
    let (k23, seam23) = solve_kappa23_inner(&grid, &p, &c11, &free.c22, &free.c33, &free.kappa23_slice)?;
    let (k13, seam13) = solve_kappa13_inner(
        &grid,
        &p,
        [&c11, &free.c22, &free.c33],
        &free.kappa12,
        &free.kappa13_slice,
    )?;
    let len = grid.len();
    let [p1, p2, p3] = &p.p;
    let mut c = TensorField::zeros(2, len, Symmetry::Symmetric2);
    for x in 0..len {
        let (c22, c33) = (free.c22[x], free.c33[x]);
        let c12 = free.kappa12[x] * c22 / (p1[x] - p2[x]);
        let c23 = k23[x] * c33 / (p2[x] - p3[x]);
        let c13 = (k13[x] - (p2[x] - p1[x]) * c12 * c23 / (c22 * c33)) * c33 / (p1[x] - p3[x]);
        let v = [[c11[x], c12, c13], [c12, c22, c23], [c13, c23, c33]];
        for i in 0..3 {
            for j in 0..3 {
                c.comps[i * 3 + j][x] = v[i][j];
            }
        }
    }
    let mut data = AsymptoticDataSet::from_c(grid, p, c)?;
    data.seam = SeamReport { log_c11: seam_c11, kappa23: seam23, kappa13: seam13 };
    Ok(data)
}
