//! Frame geometry: coframes, metrics, connection coefficients, curvature and
//! the constraint and torsion residuals.
//!
//! Frames are rank-2 fields `e_Ia` (frame index first), coframes `omega_bC`
//! (coordinate index first), connection coefficients `gamma_IJB` with
//! component `(I * 3 + J) * 3 + B`.

use crate::grid::{
    fd_derivative_unchecked, fornberg_weights, stencil_window, Scalar, SpatialGrid, Symmetry,
    TensorField,
};
use crate::{Error, Result};

/// One time slice of the frame variables.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    pub t: f64,
    pub e: TensorField,
    pub omega: TensorField,
    pub k: TensorField,
    pub gamma: TensorField,
}

#[inline]
fn gather<const N: usize>(f: &[Vec<f64>], x: usize) -> [f64; N] {
    std::array::from_fn(|q| f[q][x])
}

/// `omega = adj(e) / det(e)` pointwise.
pub fn coframe_from_frame(grid: &SpatialGrid, e: &TensorField) -> Result<TensorField> {
    let len = e.len();
    let mut w = TensorField::zeros(2, len, Symmetry::None);
    for x in 0..len {
        let m: [f64; 9] = gather(&e.comps, x);
        let inv = invert3(&m).ok_or_else(|| Error::SingularFrame {
            context: "coframe_from_frame".into(),
            point: grid.point(x),
            det: det3(&m),
        })?;
        for q in 0..9 {
            w.comps[q][x] = inv[q];
        }
    }
    Ok(w)
}

#[inline]
pub(crate) fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

/// Cofactor inverse of a row-major 3x3 matrix, `None` when nearly singular
/// relative to the product of its row norms.
#[inline]
pub(crate) fn invert3(m: &[f64; 9]) -> Option<[f64; 9]> {
    let det = det3(m);
    let row = |r: usize| (m[3 * r] * m[3 * r] + m[3 * r + 1] * m[3 * r + 1] + m[3 * r + 2] * m[3 * r + 2]).sqrt();
    let scale = row(0) * row(1) * row(2);
    if !(det.abs() > 1e-14 * scale) || !det.is_finite() {
        return None;
    }
    let d = 1.0 / det;
    Some([
        (m[4] * m[8] - m[5] * m[7]) * d,
        (m[2] * m[7] - m[1] * m[8]) * d,
        (m[1] * m[5] - m[2] * m[4]) * d,
        (m[5] * m[6] - m[3] * m[8]) * d,
        (m[0] * m[8] - m[2] * m[6]) * d,
        (m[2] * m[3] - m[0] * m[5]) * d,
        (m[3] * m[7] - m[4] * m[6]) * d,
        (m[1] * m[6] - m[0] * m[7]) * d,
        (m[0] * m[4] - m[1] * m[3]) * d,
    ])
}

/// `g_ij = omega_iC omega_jC`, checked positive definite.
pub fn metric_from_coframe(grid: &SpatialGrid, omega: &TensorField) -> Result<TensorField> {
    let len = omega.len();
    let mut g = TensorField::zeros(2, len, Symmetry::Symmetric2);
    for x in 0..len {
        let w: [f64; 9] = gather(&omega.comps, x);
        let mut m = [0.0; 9];
        for i in 0..3 {
            for j in i..3 {
                let v = (0..3).map(|c| w[i * 3 + c] * w[j * 3 + c]).sum::<f64>();
                m[i * 3 + j] = v;
                m[j * 3 + i] = v;
            }
        }
        let minor2 = m[0] * m[4] - m[1] * m[3];
        if !(m[0] > 0.0 && minor2 > 0.0 && det3(&m) > 0.0) {
            return Err(Error::NotPositive { point: grid.point(x) });
        }
        for q in 0..9 {
            g.comps[q][x] = m[q];
        }
    }
    Ok(g)
}

/// `volume = sqrt(det g) = 1 / |det e|` pointwise.
pub fn volume_from_frame(e: &TensorField) -> Scalar {
    (0..e.len()).map(|x| 1.0 / det3(&gather(&e.comps, x)).abs()).collect()
}

/// Spatial derivatives of every component: entry `q * 3 + b` is `d_b comp_q`.
fn all_derivatives(grid: &SpatialGrid, comps: &[Vec<f64>]) -> Vec<Scalar> {
    let mut out = Vec::with_capacity(comps.len() * 3);
    for c in comps {
        for b in 0..3 {
            out.push(fd_derivative_unchecked(grid, c, b, grid.order));
        }
    }
    out
}

/// `A_IJB = omega_aB (e_I e_Ja - e_J e_Ia)`, the commutator coefficients
/// `[e_I, e_J] = A_IJB e_B`, at one point.
#[inline]
fn commutator_at(e: &[f64; 9], w: &[f64; 9], de: &[Vec<f64>], x: usize) -> [f64; 27] {
    // ed[I][J][a] = e_I(e_Ja)
    let mut ed = [0.0; 27];
    for i in 0..3 {
        for j in 0..3 {
            for a in 0..3 {
                let q = (j * 3 + a) * 3;
                ed[(i * 3 + j) * 3 + a] =
                    e[i * 3] * de[q][x] + e[i * 3 + 1] * de[q + 1][x] + e[i * 3 + 2] * de[q + 2][x];
            }
        }
    }
    let mut out = [0.0; 27];
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            for b in 0..3 {
                let mut s = 0.0;
                for a in 0..3 {
                    s += w[a * 3 + b] * (ed[(i * 3 + j) * 3 + a] - ed[(j * 3 + i) * 3 + a]);
                }
                out[(i * 3 + j) * 3 + b] = s;
            }
        }
    }
    out
}

#[inline]
fn gamma_from_commutator(a: &[f64; 27]) -> [f64; 27] {
    let at = |i: usize, j: usize, b: usize| a[(i * 3 + j) * 3 + b];
    let mut g = [0.0; 27];
    for i in 0..3 {
        for j in 0..3 {
            for b in j + 1..3 {
                let v = 0.5 * (at(i, j, b) - at(j, b, i) + at(b, i, j));
                g[(i * 3 + j) * 3 + b] = v;
                g[(i * 3 + b) * 3 + j] = -v;
            }
        }
    }
    g
}

/// Levi-Civita connection coefficients of the metric for which `e` is orthonormal:
///
/// `gamma_IJB = 1/2 { omega_aB (e_I e_Ja - e_J e_Ia) - omega_aI (e_J e_Ba - e_B e_Ja)
///              + omega_aJ (e_B e_Ia - e_I e_Ba) }`
pub fn gamma_from_frame(grid: &SpatialGrid, e: &TensorField, omega: &TensorField) -> Result<TensorField> {
    let len = e.len();
    let de = all_derivatives(grid, &e.comps);
    let mut g = TensorField::zeros(3, len, Symmetry::AntisymmetricLast2);
    for x in 0..len {
        let ev: [f64; 9] = gather(&e.comps, x);
        let wv: [f64; 9] = gather(&omega.comps, x);
        let gv = gamma_from_commutator(&commutator_at(&ev, &wv, &de, x));
        for q in 0..27 {
            g.comps[q][x] = gv[q];
        }
    }
    Ok(g)
}

/// `e_D(f_q)` for every component `q` at point `x`: entry `q * 3 + D`.
#[inline]
fn directional<const N: usize>(e: &[f64; 9], d: &[Vec<f64>], x: usize, out: &mut [f64]) {
    for q in 0..N {
        let (d0, d1, d2) = (d[q * 3][x], d[q * 3 + 1][x], d[q * 3 + 2][x]);
        for c in 0..3 {
            out[q * 3 + c] = e[c * 3] * d0 + e[c * 3 + 1] * d1 + e[c * 3 + 2] * d2;
        }
    }
}

/// `R_IJ = e_C gamma_IJC - e_I gamma_CJC - gamma_CID gamma_DJC - gamma_IJD gamma_CCD`.
///
/// Symmetric up to truncation error when `gamma` is Levi-Civita; not otherwise.
pub fn spatial_ricci(grid: &SpatialGrid, e: &TensorField, gamma: &TensorField) -> TensorField {
    let len = e.len();
    let dg = all_derivatives(grid, &gamma.comps);
    let mut r = TensorField::zeros(2, len, Symmetry::None);
    let mut eg = [0.0; 81];
    for x in 0..len {
        let ev: [f64; 9] = gather(&e.comps, x);
        let gv: [f64; 27] = gather(&gamma.comps, x);
        directional::<27>(&ev, &dg, x, &mut eg);
        let g = |i: usize, j: usize, b: usize| gv[(i * 3 + j) * 3 + b];
        // eg[(q) * 3 + D] = e_D(gamma_q)
        let egf = |i: usize, j: usize, b: usize, d: usize| eg[((i * 3 + j) * 3 + b) * 3 + d];
        let trace_d: [f64; 3] = std::array::from_fn(|d| (0..3).map(|c| g(c, c, d)).sum());
        for i in 0..3 {
            for j in 0..3 {
                let mut v = 0.0;
                for c in 0..3 {
                    v += egf(i, j, c, c) - egf(c, j, c, i);
                    for d in 0..3 {
                        v -= g(c, i, d) * g(d, j, c);
                    }
                }
                for d in 0..3 {
                    v -= g(i, j, d) * trace_d[d];
                }
                r.comps[i * 3 + j][x] = v;
            }
        }
    }
    r
}

/// Spatial torsion `C_IJB = A_IJB - gamma_IJB + gamma_JIB` with `A` the
/// commutator coefficients of the frame.
pub fn torsion_residual(grid: &SpatialGrid, e: &TensorField, omega: &TensorField, gamma: &TensorField) -> TensorField {
    let len = e.len();
    let de = all_derivatives(grid, &e.comps);
    let mut c = TensorField::zeros(3, len, Symmetry::None);
    for x in 0..len {
        let ev: [f64; 9] = gather(&e.comps, x);
        let wv: [f64; 9] = gather(&omega.comps, x);
        let a = commutator_at(&ev, &wv, &de, x);
        for i in 0..3 {
            for j in 0..3 {
                for b in 0..3 {
                    let q = (i * 3 + j) * 3 + b;
                    c.comps[q][x] = a[q] - gamma.comps[q][x] + gamma.comps[(j * 3 + i) * 3 + b][x];
                }
            }
        }
    }
    c
}

/// `R - |k|^2 + (tr k)^2` with `R` the trace of [`spatial_ricci`].
pub fn hamiltonian_residual(grid: &SpatialGrid, state: &FrameState) -> Scalar {
    let r = spatial_ricci(grid, &state.e, &state.gamma);
    hamiltonian_from_ricci(&r, &state.k)
}

pub(crate) fn hamiltonian_from_ricci(r: &TensorField, k: &TensorField) -> Scalar {
    (0..k.len())
        .map(|x| {
            let kv: [f64; 9] = gather(&k.comps, x);
            let tr = kv[0] + kv[4] + kv[8];
            let sq: f64 = kv.iter().map(|v| v * v).sum();
            r.comps[0][x] + r.comps[4][x] + r.comps[8][x] - sq + tr * tr
        })
        .collect()
}

/// `e_Ja d_a k_IJ - e_Ia d_a tr k - gamma_JIC k_CJ - gamma_JJC k_IC` for each `I`.
pub fn momentum_residual_evolved(grid: &SpatialGrid, state: &FrameState) -> [Scalar; 3] {
    codazzi(grid, &state.e, &state.gamma, &state.k)
}

fn codazzi(grid: &SpatialGrid, e: &TensorField, gamma: &TensorField, k: &TensorField) -> [Scalar; 3] {
    let len = e.len();
    let dk = all_derivatives(grid, &k.comps);
    let mut out = [vec![0.0; len], vec![0.0; len], vec![0.0; len]];
    let mut ek = [0.0; 27];
    for x in 0..len {
        let ev: [f64; 9] = gather(&e.comps, x);
        let gv: [f64; 27] = gather(&gamma.comps, x);
        let kv: [f64; 9] = gather(&k.comps, x);
        directional::<9>(&ev, &dk, x, &mut ek);
        let g = |i: usize, j: usize, b: usize| gv[(i * 3 + j) * 3 + b];
        for i in 0..3 {
            let mut v = 0.0;
            for j in 0..3 {
                v += ek[(i * 3 + j) * 3 + j];
                v -= ek[(j * 3 + j) * 3 + i];
                for c in 0..3 {
                    v -= g(j, i, c) * kv[c * 3 + j] + g(j, j, c) * kv[i * 3 + c];
                }
            }
            out[i][x] = v;
        }
    }
    out
}

/// How time derivatives of a frame series are taken.
#[derive(Debug, Clone, Copy)]
pub enum TimeFd<'a> {
    /// Differentiate `e` in `t` directly.
    Plain,
    /// Differentiate `t^{p_I} e_Ia` in `s = log t`, which strips the leading
    /// power law and leaves a slowly varying function.
    Kasner(&'a [Scalar; 3]),
}

/// Second fundamental form of a frame series at one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondFundamental {
    /// `k~_IJ = omega_aJ d_t e_Ia`
    pub k: TensorField,
    /// `t k~_IJ + p_I delta_IJ`, present for [`TimeFd::Kasner`].
    pub scaled_delta: Option<TensorField>,
}

/// `k~_IJ = omega_aJ d_t e_Ia` at slice `m`, with the time derivative taken by
/// finite differences over up to five neighbouring slices (one-sided at the
/// ends of the series).
pub fn second_fundamental_from_frame(
    times: &[f64],
    frames: &[&TensorField],
    m: usize,
    omega_m: &TensorField,
    mode: TimeFd,
) -> Result<SecondFundamental> {
    if times.len() != frames.len() || times.len() < 2 || m >= times.len() {
        return Err(Error::Invalid("need at least two slices around the target".into()));
    }
    let win = stencil_window(m, times.len(), 5);
    let coord = |t: f64| match mode {
        TimeFd::Plain => t,
        TimeFd::Kasner(_) => t.ln(),
    };
    let nodes: Vec<f64> = win.clone().map(|j| coord(times[j])).collect();
    for w in nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Invalid("time spacing must be positive".into()));
        }
    }
    let weights = fornberg_weights(coord(times[m]), &nodes, 1);
    let wts = &weights[1];
    let len = omega_m.len();
    let tm = times[m];
    let mut k = TensorField::zeros(2, len, Symmetry::None);
    let mut delta = matches!(mode, TimeFd::Kasner(_)).then(|| TensorField::zeros(2, len, Symmetry::None));
    for x in 0..len {
        // derivative of the (renormalised) frame
        let mut de = [0.0; 9];
        for (q, slot) in de.iter_mut().enumerate() {
            let i = q / 3;
            let mut s = 0.0;
            for (wj, j) in wts.iter().zip(win.clone()) {
                let v = frames[j].comps[q][x];
                s += wj * match mode {
                    TimeFd::Plain => v,
                    TimeFd::Kasner(p) => times[j].powf(p[i][x]) * v,
                };
            }
            *slot = s;
        }
        let w: [f64; 9] = gather(&omega_m.comps, x);
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|a| w[a * 3 + j] * de[i * 3 + a]).sum();
                match mode {
                    TimeFd::Plain => k.comps[i * 3 + j][x] = s,
                    TimeFd::Kasner(p) => {
                        let d = tm.powf(-p[i][x]) * s;
                        if let Some(dl) = delta.as_mut() {
                            dl.comps[i * 3 + j][x] = d;
                        }
                        let lead = if i == j { -p[i][x] } else { 0.0 };
                        k.comps[i * 3 + j][x] = (lead + d) / tm;
                    }
                }
            }
        }
    }
    Ok(SecondFundamental { k, scaled_delta: delta })
}

/// Spacetime Ricci components of `-dt^2 + g(t)` for a frame series.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacetimeRicci {
    pub t: f64,
    /// `R4_IJ = R_IJ - d_t k~_IJ + tr k~ k~_IJ` for a frame propagated by a
    /// symmetric `k~`; see [`spacetime_ricci`] for rotating frames
    pub rij: TensorField,
    /// from the Gauss identity
    pub r00: Scalar,
    /// from the Codazzi identity, `e_I tr k~ - div k~`
    pub r0i: [Scalar; 3],
}

impl SpacetimeRicci {
    /// Max norm over all components.
    pub fn max_norm(&self) -> f64 {
        use crate::grid::max_abs;
        let a = self.rij.max_abs();
        let b = max_abs(&self.r00);
        let c = self.r0i.iter().map(|v| max_abs(v)).fold(0.0, f64::max);
        a.max(b).max(c)
    }

    /// Max norm of the antisymmetric part of `R4_IJ`.
    pub fn antisymmetric_norm(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..3 {
            for j in i + 1..3 {
                for (a, b) in self.rij.comps[i * 3 + j].iter().zip(&self.rij.comps[j * 3 + i]) {
                    worst = worst.max(0.5 * (a - b).abs());
                }
            }
        }
        worst
    }
}

/// Spacetime Ricci at slice `m` of a frame series (at least three slices).
///
/// `d_t k~` is taken from `k~` at neighbouring slices, each obtained by
/// [`second_fundamental_from_frame`], so nothing here consults an evolution
/// equation. When `k~` has an antisymmetric part `A` (the frame rotates), the
/// symmetric part `S` is the second fundamental form and
/// `R4_IJ = R_IJ - d_t S_IJ + [A, S]_IJ + tr S S_IJ`.
pub fn spacetime_ricci(grid: &SpatialGrid, times: &[f64], frames: &[&TensorField], m: usize, mode: TimeFd) -> Result<SpacetimeRicci> {
    if times.len() < 3 {
        return Err(Error::Invalid("spacetime Ricci needs at least three slices".into()));
    }
    let win = stencil_window(m, times.len(), 5);
    let mut kts = Vec::with_capacity(win.len());
    let mut omega_m = None;
    for j in win.clone() {
        let w = coframe_from_frame(grid, frames[j])?;
        kts.push(second_fundamental_from_frame(times, frames, j, &w, mode)?);
        if j == m {
            omega_m = Some(w);
        }
    }
    let omega_m = omega_m.expect("window contains m");
    let gamma = gamma_from_frame(grid, frames[m], &omega_m)?;
    let ric = spatial_ricci(grid, frames[m], &gamma);
    let here = &kts[m - win.start];
    let mut dkt = TensorField::zeros(2, grid.len(), Symmetry::None);
    match mode {
        TimeFd::Plain => {
            let nodes: Vec<f64> = win.clone().map(|j| times[j]).collect();
            let w = fornberg_weights(times[m], &nodes, 1);
            for q in 0..9 {
                for x in 0..grid.len() {
                    dkt.comps[q][x] = w[1].iter().zip(&kts).map(|(wj, kt)| wj * kt.k.comps[q][x]).sum();
                }
            }
        }
        TimeFd::Kasner(_) => {
            // d_t k~ = (d_s K - K) / t^2 with K = t k~; only the scaled delta varies in s
            let nodes: Vec<f64> = win.clone().map(|j| times[j].ln()).collect();
            let w = fornberg_weights(times[m].ln(), &nodes, 1);
            let tm = times[m];
            for q in 0..9 {
                for x in 0..grid.len() {
                    let ds: f64 = w[1]
                        .iter()
                        .zip(&kts)
                        .map(|(wj, kt)| wj * kt.scaled_delta.as_ref().expect("kasner mode").comps[q][x])
                        .sum();
                    dkt.comps[q][x] = (ds - tm * here.k.comps[q][x]) / (tm * tm);
                }
            }
        }
    }
    // A rotating frame has k~ = S + A with A antisymmetric; the ADM identity
    // holds for the symmetric part once d_t S is corrected by [A, S].
    let len = grid.len();
    let mut sym = TensorField::zeros(2, len, Symmetry::Symmetric2);
    let mut rij = TensorField::zeros(2, len, Symmetry::None);
    let mut r00 = vec![0.0; len];
    for x in 0..len {
        let kv: [f64; 9] = gather(&here.k.comps, x);
        let sv: [f64; 9] = std::array::from_fn(|q| 0.5 * (kv[q] + kv[(q % 3) * 3 + q / 3]));
        let av: [f64; 9] = std::array::from_fn(|q| kv[q] - sv[q]);
        let tr = sv[0] + sv[4] + sv[8];
        let mut sum_ii = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let q = i * 3 + j;
                let dts = 0.5 * (dkt.comps[q][x] + dkt.comps[j * 3 + i][x]);
                let comm: f64 = (0..3).map(|c| av[i * 3 + c] * sv[c * 3 + j] - sv[i * 3 + c] * av[c * 3 + j]).sum();
                let v = ric.comps[q][x] - (dts - comm) + tr * sv[q];
                rij.comps[q][x] = v;
                sym.comps[q][x] = sv[q];
                if i == j {
                    sum_ii += v;
                }
            }
        }
        let scalar_r = ric.comps[0][x] + ric.comps[4][x] + ric.comps[8][x];
        let gauss = match (mode, &here.scaled_delta) {
            (TimeFd::Kasner(p), Some(dl)) => {
                // |S|^2 - (tr S)^2 expanded around -p_I delta_IJ / t
                let raw: [f64; 9] = gather(&dl.comps, x);
                let d: [f64; 9] = std::array::from_fn(|q| 0.5 * (raw[q] + raw[(q % 3) * 3 + q / 3]));
                let pv = [p[0][x], p[1][x], p[2][x]];
                let ps = pv[0] + pv[1] + pv[2];
                let p2 = pv[0] * pv[0] + pv[1] * pv[1] + pv[2] * pv[2];
                let trd = d[0] + d[4] + d[8];
                let dd: f64 = d.iter().map(|v| v * v).sum();
                let cross = pv[0] * d[0] + pv[1] * d[4] + pv[2] * d[8];
                let quad = (p2 - ps * ps) - 2.0 * cross + 2.0 * ps * trd + dd - trd * trd;
                scalar_r - quad / (times[m] * times[m])
            }
            _ => {
                let sq: f64 = sv.iter().map(|v| v * v).sum();
                scalar_r - sq + tr * tr
            }
        };
        r00[x] = gauss - sum_ii;
    }
    // R4(e_0, e_I) = e_I tr S - div S
    let mut r0i = codazzi(grid, frames[m], &gamma, &sym);
    for v in r0i.iter_mut().flat_map(|c| c.iter_mut()) {
        *v = -*v;
    }
    Ok(SpacetimeRicci { t: times[m], rij, r00, r0i })
}

/// Right-hand side of the first-order system for `(e, k, gamma)` with all
/// spacetime Ricci terms dropped.
pub fn modified_rhs(
    grid: &SpatialGrid,
    e: &TensorField,
    k: &TensorField,
    gamma: &TensorField,
) -> (TensorField, TensorField, TensorField) {
    let len = e.len();
    let dg = all_derivatives(grid, &gamma.comps);
    let dk = all_derivatives(grid, &k.comps);
    let mut de_out = TensorField::zeros(2, len, Symmetry::None);
    let mut dk_out = TensorField::zeros(2, len, Symmetry::Symmetric2);
    let mut dg_out = TensorField::zeros(3, len, Symmetry::AntisymmetricLast2);
    let mut eg = [0.0; 81];
    let mut ek = [0.0; 27];
    for x in 0..len {
        let ev: [f64; 9] = gather(&e.comps, x);
        let kv: [f64; 9] = gather(&k.comps, x);
        let gv: [f64; 27] = gather(&gamma.comps, x);
        directional::<27>(&ev, &dg, x, &mut eg);
        directional::<9>(&ev, &dk, x, &mut ek);
        let g = |i: usize, j: usize, b: usize| gv[(i * 3 + j) * 3 + b];
        let kk = |i: usize, j: usize| kv[i * 3 + j];
        // e_D(gamma_IJB), e_D(k_IJ)
        let egf = |i: usize, j: usize, b: usize, d: usize| eg[((i * 3 + j) * 3 + b) * 3 + d];
        let ekf = |i: usize, j: usize, d: usize| ek[(i * 3 + j) * 3 + d];
        let tr = kv[0] + kv[4] + kv[8];
        let ksq: f64 = kv.iter().map(|v| v * v).sum();
        let e_tr: [f64; 3] = std::array::from_fn(|d| ekf(0, 0, d) + ekf(1, 1, d) + ekf(2, 2, d));
        let gcc: [f64; 3] = std::array::from_fn(|d| g(0, 0, d) + g(1, 1, d) + g(2, 2, d));

        for i in 0..3 {
            for a in 0..3 {
                de_out.comps[i * 3 + a][x] = (0..3).map(|c| kv[i * 3 + c] * ev[c * 3 + a]).sum();
            }
        }

        let mut scalar_block = ksq - tr * tr;
        for c in 0..3 {
            for d in 0..3 {
                scalar_block += 2.0 * egf(c, d, c, d);
                for ee in 0..3 {
                    scalar_block += g(c, ee, d) * g(d, ee, c);
                }
            }
        }
        for d in 0..3 {
            scalar_block += gcc[d] * gcc[d];
        }
        for i in 0..3 {
            for j in i..3 {
                let mut v = 0.0;
                for c in 0..3 {
                    v += egf(i, j, c, c) - egf(c, j, c, i) + egf(j, i, c, c) - egf(c, i, c, j);
                    for d in 0..3 {
                        v -= g(c, i, d) * g(d, j, c) + g(c, j, d) * g(d, i, c);
                    }
                }
                for d in 0..3 {
                    v -= gcc[d] * (g(i, j, d) + g(j, i, d));
                }
                let mut out = tr * kk(i, j) + 0.5 * v;
                if i == j {
                    out += 0.5 * scalar_block;
                }
                dk_out.comps[i * 3 + j][x] = out;
                dk_out.comps[j * 3 + i][x] = out;
            }
        }

        // div-like contractions reused by the delta blocks
        let e_div: [f64; 3] = std::array::from_fn(|j| (0..3).map(|c| ekf(c, j, c)).sum());
        let gk: [f64; 3] = std::array::from_fn(|j| (0..3).map(|d| gcc[d] * kk(d, j)).sum());
        let gjk: [f64; 3] = std::array::from_fn(|j| {
            let mut s = 0.0;
            for c in 0..3 {
                for d in 0..3 {
                    s += g(c, j, d) * kk(c, d);
                }
            }
            s
        });
        let block: [f64; 3] = std::array::from_fn(|j| e_div[j] - gk[j] - gjk[j] - e_tr[j]);
        for i in 0..3 {
            for j in 0..3 {
                for b in j + 1..3 {
                    let mut v = ekf(j, i, b) - ekf(b, i, j);
                    for c in 0..3 {
                        v += kk(i, c) * g(c, j, b);
                        v += g(j, b, c) * kk(c, i) + g(j, i, c) * kk(b, c)
                            - g(b, j, c) * kk(c, i)
                            - g(b, i, c) * kk(j, c);
                    }
                    if i == b {
                        v -= block[j];
                    }
                    if i == j {
                        v += block[b];
                    }
                    dg_out.comps[(i * 3 + j) * 3 + b][x] = v;
                    dg_out.comps[(i * 3 + b) * 3 + j][x] = -v;
                }
            }
        }
    }
    (de_out, dk_out, dg_out)
}
