//! Asymptotic data on the singularity: Kasner exponents `p_i`, metric
//! coefficients `c_ij`, frame data `f_Ia`, coframe data `h_bC` and the
//! `kappa_i^l` entering the momentum constraint.

mod profile;
mod solve;

pub use profile::{Construction, DataSpec, Mode, Profile};
pub use solve::{assemble_dataset, solve_c11, solve_kappa13, solve_kappa23, FreeData};

use crate::grid::{fd_derivative_unchecked, max_abs, Scalar, SpatialGrid, Symmetry, TensorField};
use crate::{Error, Result};

/// Smallest admissible `1 - p3` and `p3 - p2`.
pub const DEGENERACY_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct KasnerExponents {
    pub p: [Scalar; 3],
    /// `min over the grid of min(1 - p3, p3 - p2)`
    pub eps: f64,
}

impl KasnerExponents {
    /// Pointwise `min(1 - p3, p3 - p2)`.
    pub fn eps_field(&self) -> Scalar {
        self.p[2]
            .iter()
            .zip(&self.p[1])
            .map(|(p3, p2)| (1.0 - p3).min(p3 - p2))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.p[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.p[0].is_empty()
    }

    /// Largest value of `p_i` over the grid.
    pub fn max_p(&self, i: usize) -> f64 {
        self.p[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum p_i^2 - (sum p_i)^2` pointwise; zero for exact Kasner relations.
    pub fn quadratic_defect(&self) -> Scalar {
        (0..self.len())
            .map(|x| {
                let (a, b, c) = (self.p[0][x], self.p[1][x], self.p[2][x]);
                (a * a + b * b + c * c) - (a + b + c) * (a + b + c)
            })
            .collect()
    }
}

/// Kasner exponents from the one-parameter family `u > 1`.
pub fn exponents_from_u(grid: &SpatialGrid, u: &[f64]) -> Result<KasnerExponents> {
    if u.len() != grid.len() {
        return Err(Error::Invalid("u has wrong length".into()));
    }
    let mut p = [vec![0.0; u.len()], vec![0.0; u.len()], vec![0.0; u.len()]];
    for (x, &u) in u.iter().enumerate() {
        if !(u > 1.0) || !u.is_finite() {
            return Err(Error::Exponents {
                point: grid.point(x),
                reason: format!("u = {u} must exceed 1"),
            });
        }
        let d = 1.0 + u + u * u;
        p[0][x] = -u / d;
        p[1][x] = (1.0 + u) / d;
        p[2][x] = u * (1.0 + u) / d;
    }
    validate_exponents(grid, p)
}

/// Accepts raw exponents after checking both Kasner relations, the strict
/// ordering and the degeneracy guard.
pub fn validate_exponents(grid: &SpatialGrid, p: [Scalar; 3]) -> Result<KasnerExponents> {
    let mut eps = f64::INFINITY;
    for x in 0..p[0].len() {
        let (a, b, c) = (p[0][x], p[1][x], p[2][x]);
        let point = grid.point(x);
        let sum = a + b + c;
        let sq = a * a + b * b + c * c;
        if (sum - 1.0).abs() > 1e-12 || (sq - 1.0).abs() > 1e-12 {
            return Err(Error::Exponents {
                point,
                reason: format!("sum = {sum}, sum of squares = {sq}"),
            });
        }
        if !(a < b && b < c) {
            return Err(Error::Exponents { point, reason: "need p1 < p2 < p3".into() });
        }
        if c - b < DEGENERACY_GUARD || 1.0 - c < DEGENERACY_GUARD {
            return Err(Error::Degenerate {
                point,
                reason: format!("p3 - p2 = {:e}, 1 - p3 = {:e}", c - b, 1.0 - c),
            });
        }
        eps = eps.min((1.0 - c).min(c - b));
    }
    Ok(KasnerExponents { p, eps })
}

/// Complete asymptotic data set.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticDataSet {
    pub grid: SpatialGrid,
    pub p: KasnerExponents,
    /// symmetric `c_ij`
    pub c: TensorField,
    /// upper triangular `f_Ia`
    pub f: TensorField,
    /// upper triangular `h_bC`, the inverse of `f`
    pub h: TensorField,
    pub kappa12: Scalar,
    pub kappa23: Scalar,
    pub kappa13: Scalar,
    /// Jump at the `x3` seam of the integrated fields, zero for consistent periodic data.
    pub seam: SeamReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SeamReport {
    pub log_c11: f64,
    pub kappa23: f64,
    pub kappa13: f64,
}

impl SeamReport {
    pub fn max(&self) -> f64 {
        self.log_c11.max(self.kappa23).max(self.kappa13)
    }
}

impl AsymptoticDataSet {
    /// Derives `f`, `h` and the `kappa` fields from exponents and metric coefficients.
    pub fn from_c(grid: SpatialGrid, p: KasnerExponents, c: TensorField) -> Result<Self> {
        let len = grid.len();
        if c.rank != 2 || c.len() != len || p.len() != len {
            return Err(Error::Invalid("c must be a rank-2 field on the grid".into()));
        }
        let c = TensorField::new(2, c.comps, Symmetry::Symmetric2)?;
        let mut f = TensorField::zeros(2, len, Symmetry::None);
        let mut h = TensorField::zeros(2, len, Symmetry::None);
        let mut k12 = vec![0.0; len];
        let mut k23 = vec![0.0; len];
        let mut k13 = vec![0.0; len];
        for x in 0..len {
            let cc = |i: usize, j: usize| c.comps[i * 3 + j][x];
            for i in 0..3 {
                if !(cc(i, i) > 0.0) {
                    return Err(Error::NotPositive { point: grid.point(x) });
                }
            }
            let (c11, c22, c33) = (cc(0, 0), cc(1, 1), cc(2, 2));
            let (c12, c13, c23) = (cc(0, 1), cc(0, 2), cc(1, 2));
            let (p1, p2, p3) = (p.p[0][x], p.p[1][x], p.p[2][x]);
            let f11 = c11.powf(-0.5);
            let f22 = c22.powf(-0.5);
            let f33 = c33.powf(-0.5);
            let f12 = -f11 * c12 / c22;
            let f23 = -(c23 / c33) * f22;
            let f13 = f11 * (c12 * c23 / (c22 * c33) - c13 / c33);
            let fv = [f11, f12, f13, 0.0, f22, f23, 0.0, 0.0, f33];
            let hv = [
                1.0 / f11,
                -f12 / (f11 * f22),
                (f12 * f23 / f22 - f13) / (f11 * f33),
                0.0,
                1.0 / f22,
                -f23 / (f22 * f33),
                0.0,
                0.0,
                1.0 / f33,
            ];
            for q in 0..9 {
                f.comps[q][x] = fv[q];
                h.comps[q][x] = hv[q];
            }
            k12[x] = (p1 - p2) * c12 / c22;
            k23[x] = (p2 - p3) * c23 / c33;
            k13[x] = (p2 - p1) * c12 * c23 / (c22 * c33) + (p1 - p3) * c13 / c33;
        }
        Ok(AsymptoticDataSet {
            grid,
            p,
            c,
            f,
            h,
            kappa12: k12,
            kappa23: k23,
            kappa13: k13,
            seam: SeamReport::default(),
        })
    }

    /// `kappa_i^l` with the diagonal `kappa_i^i = -p_i` and zeros for `l < i`.
    pub fn kappa(&self, i: usize, l: usize, x: usize) -> f64 {
        match (i, l) {
            (i, l) if i == l => -self.p.p[i][x],
            (0, 1) => self.kappa12[x],
            (1, 2) => self.kappa23[x],
            (0, 2) => self.kappa13[x],
            _ => 0.0,
        }
    }

    /// Max norms of the three metric-form momentum residuals.
    pub fn residual_summary(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| max_abs(&momentum_residual(self, i)))
    }

    /// Reconstructs `c_ij` from `f` through the closed-form inverse relations.
    pub fn c_from_f(&self) -> TensorField {
        let len = self.grid.len();
        let mut c = TensorField::zeros(2, len, Symmetry::Symmetric2);
        for x in 0..len {
            let f = |i: usize, j: usize| self.f.comps[i * 3 + j][x];
            let (f11, f12, f13, f22, f23, f33) = (f(0, 0), f(0, 1), f(0, 2), f(1, 1), f(1, 2), f(2, 2));
            let v = [
                [f11.powi(-2), -f12 / (f11 * f22 * f22), (f12 * f23 / f22 - f13) / (f11 * f33 * f33)],
                [0.0, f22.powi(-2), -f23 / (f22 * f33 * f33)],
                [0.0, 0.0, f33.powi(-2)],
            ];
            for i in 0..3 {
                for j in i..3 {
                    c.comps[i * 3 + j][x] = v[i][j];
                    c.comps[j * 3 + i][x] = v[i][j];
                }
            }
        }
        c
    }

    /// Largest deviation of the stored `kappa` fields from their defining formulas.
    pub fn kappa_formula_defect(&self) -> f64 {
        let again = AsymptoticDataSet::from_c(self.grid, self.p.clone(), self.c.clone())
            .expect("stored c is valid");
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        d(&again.kappa12, &self.kappa12)
            .max(d(&again.kappa23, &self.kappa23))
            .max(d(&again.kappa13, &self.kappa13))
    }
}

fn deriv(grid: &SpatialGrid, f: &[f64], axis: usize) -> Scalar {
    fd_derivative_unchecked(grid, f, axis, grid.order)
}

fn ln(f: &[f64]) -> Scalar {
    f.iter().map(|v| v.ln()).collect()
}

/// Left side of the metric-form momentum constraint for index `i` (0-based):
///
/// `sum_l [ d_i log c_ll (p_l - p_i) + 2 d_l kappa_i^l + [l > i] d_l log(c11 c22 c33) kappa_i^l ]`
pub fn momentum_residual(data: &AsymptoticDataSet, i: usize) -> Scalar {
    let grid = &data.grid;
    let len = grid.len();
    let p = &data.p.p;
    let logc: Vec<Scalar> = (0..3).map(|l| ln(&data.c.comps[l * 3 + l])).collect();
    let big_l: Scalar = (0..len).map(|x| logc[0][x] + logc[1][x] + logc[2][x]).collect();
    let mut out = vec![0.0; len];
    for l in 0..3 {
        let dlog = deriv(grid, &logc[l], i);
        for x in 0..len {
            out[x] += dlog[x] * (p[l][x] - p[i][x]);
        }
        if l < i {
            continue;
        }
        let kap: Scalar = (0..len).map(|x| data.kappa(i, l, x)).collect();
        let dk = deriv(grid, &kap, l);
        for x in 0..len {
            out[x] += 2.0 * dk[x];
        }
        if l > i {
            let dl = deriv(grid, &big_l, l);
            for x in 0..len {
                out[x] += dl[x] * kap[x];
            }
        }
    }
    out
}

/// Left side of the frame-form momentum constraint for index `I` (0-based):
///
/// `E_I p_I + sum_J (p_J - p_I) E_I log f_JJ - sum_J sum_{I <= a <= J} (p_J - p_I) h_aJ E_J f_Ia`
/// with `E_I = sum_{a >= I} f_Ia d_a`.
///
/// It equals `-1/2 sum_{j >= I} f_Ij` times the metric-form residual `j`.
pub fn frame_momentum_residual(data: &AsymptoticDataSet, big_i: usize) -> Scalar {
    let grid = &data.grid;
    let len = grid.len();
    let p = &data.p.p;
    let f = |i: usize, a: usize| &data.f.comps[i * 3 + a];
    let h = |a: usize, j: usize| &data.h.comps[a * 3 + j];
    // E_J g for a scalar g
    let e_op = |j: usize, g: &[f64]| -> Scalar {
        let mut out = vec![0.0; len];
        for a in j..3 {
            let d = deriv(grid, g, a);
            let fa = f(j, a);
            for x in 0..len {
                out[x] += fa[x] * d[x];
            }
        }
        out
    };
    let mut out = e_op(big_i, &p[big_i]);
    for j in 0..3 {
        let e_log = e_op(big_i, &ln(f(j, j)));
        for x in 0..len {
            out[x] += (p[j][x] - p[big_i][x]) * e_log[x];
        }
    }
    for j in big_i..3 {
        for a in big_i..=j {
            let ef = e_op(j, f(big_i, a));
            let haj = h(a, j);
            for x in 0..len {
                out[x] -= (p[j][x] - p[big_i][x]) * haj[x] * ef[x];
            }
        }
    }
    out
}
