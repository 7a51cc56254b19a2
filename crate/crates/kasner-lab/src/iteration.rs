//! The iteration scheme for approximate solutions near the singularity.
//!
//! Each level is stored through its renormalised differences from the zeroth
//! iterate,
//!
//! `X_IJ = t (k_IJ - k0_IJ)`, `Y_Ia = t^{p_I} (e_Ia - e0_Ia)`,
//!
//! which stay bounded (they vanish like powers of `t`) while `e` and `k`
//! themselves blow up. Both satisfy linear ODEs with trivial data at `t = 0`
//! and are obtained by integrating factors in `s = log t`.

use crate::asym_data::AsymptoticDataSet;
use crate::frame::{
    coframe_from_frame, gamma_from_frame, modified_rhs, spacetime_ricci, spatial_ricci, FrameState,
    SpacetimeRicci, TimeFd,
};
use crate::grid::{
    cumulative_log_time_integral_with, fornberg_weights, max_abs, stencil_window, LogTimeGrid, Quadrature, Scalar,
    SpatialGrid, Symmetry, TailRule, TensorField,
};
use crate::{Error, Result};

/// Numerical choices for building a tower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TowerOptions {
    pub quadrature: Quadrature,
    /// Tails whose first sample is below this fraction of the series maximum are dropped.
    pub tail_floor: f64,
    /// Lower bound on the power-law exponent of a tail, as a fraction of `eps`.
    /// Every source decays at least like `t^eps`; smaller local fits come from
    /// `log t` factors.
    pub tail_min_fraction: f64,
    /// Local exponents down to `-tail_slack` are read as log-dominated rather
    /// than as growth.
    pub tail_slack: f64,
}

impl Default for TowerOptions {
    fn default() -> Self {
        TowerOptions { quadrature: Quadrature::Cubic, tail_floor: 1e-13, tail_min_fraction: 0.5, tail_slack: 0.1 }
    }
}

/// One level `n` of the tower on a log-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateSet {
    pub n: usize,
    pub grid: SpatialGrid,
    pub times: LogTimeGrid,
    pub p: [Scalar; 3],
    /// upper triangular asymptotic frame data
    pub f: TensorField,
    pub eps: f64,
    /// `t (k - k0)` per node, empty at level 0
    x: Vec<TensorField>,
    /// `t^{p_I} (e - e0)` per node, empty at level 0
    y: Vec<TensorField>,
    /// max |X_IJ - X_JI| / 2 per node before symmetrisation
    pub asymmetry: Vec<f64>,
}

impl IterateSet {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `t (k - k0)` at node `m`.
    pub fn x_at(&self, m: usize) -> TensorField {
        match self.x.get(m) {
            Some(x) => x.clone(),
            None => TensorField::zeros(2, self.grid.len(), Symmetry::Symmetric2),
        }
    }

    /// `t^{p_I} (e - e0)` at node `m`.
    pub fn y_at(&self, m: usize) -> TensorField {
        match self.y.get(m) {
            Some(y) => y.clone(),
            None => TensorField::zeros(2, self.grid.len(), Symmetry::None),
        }
    }

    /// Raw stored differences, for serialisation.
    pub fn differences(&self) -> (&[TensorField], &[TensorField]) {
        (&self.x, &self.y)
    }

    /// Rebuilds a level from stored differences.
    pub fn from_differences(
        level0: &IterateSet,
        n: usize,
        x: Vec<TensorField>,
        y: Vec<TensorField>,
        asymmetry: Vec<f64>,
    ) -> Result<Self> {
        if n > 0 && (x.len() != level0.len() || y.len() != level0.len()) {
            return Err(Error::Format(format!("level {n} needs {} slices", level0.len())));
        }
        Ok(IterateSet { n, x, y, asymmetry, ..level0.clone() })
    }

    /// `t^{p_I} e_Ia = f_Ia + Y_Ia` at node `m`.
    pub fn scaled_frame_at(&self, m: usize) -> TensorField {
        let mut out = self.f.clone();
        if let Some(y) = self.y.get(m) {
            for (o, v) in out.comps.iter_mut().zip(&y.comps) {
                for (a, b) in o.iter_mut().zip(v) {
                    *a += b;
                }
            }
        }
        out
    }

    /// Frame `e_Ia` at node `m`.
    pub fn e_at(&self, m: usize) -> TensorField {
        let t = self.times.nodes[m];
        unscale_frame(&self.scaled_frame_at(m), &self.p, t)
    }

    /// Second fundamental form at node `m`.
    pub fn k_at(&self, m: usize) -> TensorField {
        let t = self.times.nodes[m];
        let mut k = self.x_at(m);
        for i in 0..3 {
            for (v, p) in k.comps[i * 4].iter_mut().zip(&self.p[i]) {
                *v -= p;
            }
        }
        for c in k.comps.iter_mut() {
            for v in c.iter_mut() {
                *v /= t;
            }
        }
        k
    }

    /// Full frame state at node `m` with coframe and Levi-Civita `gamma`.
    pub fn state_at(&self, m: usize) -> Result<FrameState> {
        let e = self.e_at(m);
        let omega = coframe_from_frame(&self.grid, &e).map_err(|err| self.locate(err, m))?;
        let gamma = gamma_from_frame(&self.grid, &e, &omega)?;
        Ok(FrameState { t: self.times.nodes[m], e, omega, k: self.k_at(m), gamma })
    }

    fn locate(&self, err: Error, m: usize) -> Error {
        match err {
            Error::SingularFrame { context, point, det } => Error::SingularFrame {
                context: format!("{context}, level {}, t = {:e}", self.n, self.times.nodes[m]),
                point,
                det,
            },
            other => other,
        }
    }

    /// Spatial Ricci `R_IJ` of the level's metric at node `m`.
    pub fn ricci_at(&self, m: usize) -> Result<TensorField> {
        let st = self.state_at(m)?;
        Ok(spatial_ricci(&self.grid, &st.e, &st.gamma))
    }

    /// Spacetime Ricci of `-dt^2 + g^[n]` at node `m`, with time derivatives by
    /// finite differences of the stored frames in `s = log t`.
    pub fn spacetime_ricci_at(&self, m: usize) -> Result<SpacetimeRicci> {
        let lo = m.saturating_sub(4);
        let hi = (m + 5).min(self.len());
        let times = &self.times.nodes[lo..hi];
        let frames: Vec<TensorField> = (lo..hi).map(|j| self.e_at(j)).collect();
        let refs: Vec<&TensorField> = frames.iter().collect();
        spacetime_ricci(&self.grid, times, &refs, m - lo, TimeFd::Kasner(&self.p)).map_err(|e| self.locate(e, m))
    }

    /// Frame and second fundamental form at an arbitrary `t` inside the grid,
    /// by cubic Lagrange interpolation of `X` and `Y` in `s = log t`.
    pub fn interpolate(&self, t: f64) -> Result<(TensorField, TensorField)> {
        if !(t >= self.times.t_min * (1.0 - 1e-12) && t <= self.times.t_max * (1.0 + 1e-12)) {
            return Err(Error::Invalid(format!("t = {t} outside the tower's time grid")));
        }
        let len = self.grid.len();
        let (xs, ys) = if self.n == 0 {
            (
                TensorField::zeros(2, len, Symmetry::Symmetric2),
                TensorField::zeros(2, len, Symmetry::None),
            )
        } else if let Some(m) = self.times.node_index(t) {
            (self.x[m].clone(), self.y[m].clone())
        } else {
            let k = self.times.floor_index(t);
            // nodes k-1 ..= k+2 bracket the interval [t_k, t_k+1]
            let lo = k.saturating_sub(1).min(self.len() - 4);
            let win = lo..lo + 4;
            let nodes: Vec<f64> = win.clone().map(|j| self.times.s(j)).collect();
            let w = fornberg_weights(t.ln(), &nodes, 0);
            let mix = |fields: &[TensorField], sym| {
                let mut out = TensorField::zeros(2, len, sym);
                for (wj, j) in w[0].iter().zip(win.clone()) {
                    for (o, c) in out.comps.iter_mut().zip(&fields[j].comps) {
                        for (a, b) in o.iter_mut().zip(c) {
                            *a += wj * b;
                        }
                    }
                }
                out
            };
            (mix(&self.x, Symmetry::Symmetric2), mix(&self.y, Symmetry::None))
        };
        let mut scaled = self.f.clone();
        for (o, v) in scaled.comps.iter_mut().zip(&ys.comps) {
            for (a, b) in o.iter_mut().zip(v) {
                *a += b;
            }
        }
        let e = unscale_frame(&scaled, &self.p, t);
        let mut k = xs;
        for i in 0..3 {
            for (v, p) in k.comps[i * 4].iter_mut().zip(&self.p[i]) {
                *v -= p;
            }
        }
        for c in k.comps.iter_mut() {
            for v in c.iter_mut() {
                *v /= t;
            }
        }
        Ok((e, k))
    }
}

fn unscale_frame(scaled: &TensorField, p: &[Scalar; 3], t: f64) -> TensorField {
    let mut e = scaled.clone();
    for i in 0..3 {
        for a in 0..3 {
            for (v, pi) in e.comps[i * 3 + a].iter_mut().zip(&p[i]) {
                *v *= t.powf(-pi);
            }
        }
    }
    e
}

/// Level 0: `e0_Ia = f_Ia t^{-p_I}`, `k0_IJ = -delta_IJ p_I / t`.
pub fn zeroth_iterate(data: &AsymptoticDataSet, times: &LogTimeGrid) -> IterateSet {
    IterateSet {
        n: 0,
        grid: data.grid,
        times: times.clone(),
        p: data.p.p.clone(),
        f: data.f.clone(),
        eps: data.p.eps,
        x: Vec::new(),
        y: Vec::new(),
        asymmetry: vec![0.0; times.len()],
    }
}

/// Solves `dZ/ds = a(s) Z + t b(s)` pointwise with `Z -> 0` as `t -> 0`:
/// `Z = e^A int_0^t e^{-A} b dtau`, `A = int_0^t a dtau / tau`.
///
/// `a[m]` and `b[m]` are per-node fields; `a = None` means no integrating factor.
fn integrating_factor(
    times: &LogTimeGrid,
    a: Option<&[Scalar]>,
    b: &[Scalar],
    opts: &TowerOptions,
    eps: f64,
    name: &str,
) -> Result<Vec<Scalar>> {
    let rule = |floor| TailRule { floor, min_exponent: opts.tail_min_fraction * eps, slack: opts.tail_slack };
    let nodes = times.len();
    let len = b[0].len();
    let mut out = vec![vec![0.0; len]; nodes];
    let mut big_a = vec![0.0; nodes];
    let mut g = vec![0.0; nodes];
    let mut series = vec![0.0; nodes];
    for x in 0..len {
        if let Some(a) = a {
            for m in 0..nodes {
                series[m] = a[m][x] / times.nodes[m];
            }
            let floor = opts.tail_floor * max_abs(&scaled_by_t(times, &series));
            big_a = cumulative_log_time_integral_with(times, &series, opts.quadrature, rule(floor), name)?;
        }
        for m in 0..nodes {
            g[m] = (-big_a[m]).exp() * b[m][x];
        }
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        let floor = opts.tail_floor * max_abs(&scaled_by_t(times, &g));
        let cum = cumulative_log_time_integral_with(times, &g, opts.quadrature, rule(floor), name).map_err(|e| match e {
            Error::NonIntegrable { component, exponent } => Error::NonIntegrable {
                component: format!("{component} at point {x}"),
                exponent,
            },
            other => other,
        })?;
        for m in 0..nodes {
            out[m][x] = big_a[m].exp() * cum[m];
        }
    }
    Ok(out)
}

fn scaled_by_t(times: &LogTimeGrid, g: &[f64]) -> Vec<f64> {
    g.iter().zip(&times.nodes).map(|(g, t)| g * t).collect()
}

/// `X^[n] = t (k^[n] - k0)` for every node, symmetrised, with the discarded
/// antisymmetric part per node.
///
/// From `d_t k^[n] - tr k^[n-1] k^[n] = R^[n-1]`:
/// `d_t X - w X = t R^[n-1] - w p_I delta_IJ` with `w = tr X^[n-1] / t`.
pub fn advance_k(prev: &IterateSet, opts: &TowerOptions) -> Result<(Vec<TensorField>, Vec<f64>)> {
    let nodes = prev.len();
    let len = prev.grid.len();
    let mut sources: Vec<Vec<Scalar>> = vec![Vec::with_capacity(nodes); 9];
    let mut trace: Vec<Scalar> = Vec::with_capacity(nodes);
    for m in 0..nodes {
        let t = prev.times.nodes[m];
        let ric = prev.ricci_at(m)?;
        let xp = prev.x_at(m);
        let tr: Scalar = (0..len).map(|x| xp.comps[0][x] + xp.comps[4][x] + xp.comps[8][x]).collect();
        for q in 0..9 {
            let (i, j) = (q / 3, q % 3);
            let s: Scalar = (0..len)
                .map(|x| {
                    let diag = if i == j { tr[x] / t * prev.p[i][x] } else { 0.0 };
                    t * ric.comps[q][x] - diag
                })
                .collect();
            sources[q].push(s);
        }
        trace.push(tr);
    }
    let a = (prev.n > 0).then_some(&trace[..]);
    let mut comps_by_node = vec![vec![Vec::new(); 9]; nodes];
    for (q, b) in sources.iter().enumerate() {
        let name = format!("k_{}{} level {}", q / 3 + 1, q % 3 + 1, prev.n + 1);
        let sol = integrating_factor(&prev.times, a, b, opts, prev.eps, &name)?;
        for (m, v) in sol.into_iter().enumerate() {
            comps_by_node[m][q] = v;
        }
    }
    let mut out = Vec::with_capacity(nodes);
    let mut asym = Vec::with_capacity(nodes);
    for comps in comps_by_node {
        let mut x = TensorField { rank: 2, comps, symmetry: Symmetry::Symmetric2 };
        asym.push(x.enforce_symmetry());
        out.push(x);
    }
    Ok((out, asym))
}

/// `Y^[n] = t^{p_I} (e^[n] - e0)` for every node.
///
/// From `d_t e_Ia - k^[n]_II e_Ia = sum_{C != I} k^[n-1]_IC e^[n-1]_Ca`:
/// `d_t Y_Ia - w_I Y_Ia = w_I f_Ia + sum_{C != I} X^[n-1]_IC t^{p_I - p_C - 1} (f_Ca + Y^[n-1]_Ca)`
/// with `w_I = X^[n]_II / t`.
pub fn advance_e(prev: &IterateSet, x_new: &[TensorField], opts: &TowerOptions) -> Result<Vec<TensorField>> {
    let nodes = prev.len();
    let len = prev.grid.len();
    let mut comps_by_node = vec![vec![Vec::new(); 9]; nodes];
    for i in 0..3 {
        let a: Vec<Scalar> = (0..nodes).map(|m| x_new[m].comps[i * 4].clone()).collect();
        for col in 0..3 {
            let mut b = Vec::with_capacity(nodes);
            for m in 0..nodes {
                let t = prev.times.nodes[m];
                let xn = &x_new[m];
                let mut v: Scalar = (0..len).map(|x| xn.comps[i * 4][x] / t * prev.f.comps[i * 3 + col][x]).collect();
                if prev.n > 0 {
                    let xp = &prev.x[m];
                    let yp = &prev.y[m];
                    for c in (0..3).filter(|c| *c != i) {
                        for x in 0..len {
                            let coupling = xp.comps[i * 3 + c][x];
                            if coupling == 0.0 {
                                continue;
                            }
                            let power = t.powf(prev.p[i][x] - prev.p[c][x] - 1.0);
                            v[x] += coupling * power * (prev.f.comps[c * 3 + col][x] + yp.comps[c * 3 + col][x]);
                        }
                    }
                }
                b.push(v);
            }
            let name = format!("e_{}{} level {}", i + 1, col + 1, prev.n + 1);
            let sol = integrating_factor(&prev.times, Some(&a), &b, opts, prev.eps, &name)?;
            for (m, v) in sol.into_iter().enumerate() {
                comps_by_node[m][i * 3 + col] = v;
            }
        }
    }
    Ok(comps_by_node
        .into_iter()
        .map(|comps| TensorField { rank: 2, comps, symmetry: Symmetry::None })
        .collect())
}

/// Level `n + 1` from level `n`: `k` first, then `e`.
pub fn next_level(prev: &IterateSet, opts: &TowerOptions) -> Result<IterateSet> {
    let (x, asym) = advance_k(prev, opts)?;
    let y = advance_e(prev, &x, opts)?;
    let next = IterateSet { n: prev.n + 1, x, y, asymmetry: asym, ..prev.clone_header() };
    // every frame of the new level must stay invertible
    for m in 0..next.len() {
        coframe_from_frame(&next.grid, &next.e_at(m)).map_err(|e| next.locate(e, m))?;
    }
    Ok(next)
}

impl IterateSet {
    fn clone_header(&self) -> IterateSet {
        IterateSet {
            n: self.n,
            grid: self.grid,
            times: self.times.clone(),
            p: self.p.clone(),
            f: self.f.clone(),
            eps: self.eps,
            x: Vec::new(),
            y: Vec::new(),
            asymmetry: Vec::new(),
        }
    }
}

/// Levels `0..=n_max`.
pub fn build_tower(data: &AsymptoticDataSet, times: &LogTimeGrid, n_max: usize, opts: &TowerOptions) -> Result<Vec<IterateSet>> {
    let mut levels = vec![zeroth_iterate(data, times)];
    for _ in 0..n_max {
        let next = next_level(levels.last().expect("non-empty"), opts)?;
        levels.push(next);
    }
    Ok(levels)
}

/// Least-squares power law `norm ~ C t^slope`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits `log norm = intercept + slope log t`; needs at least six samples over
/// at least 1.5 decades and strictly positive norms.
pub fn fit_decay_rate(series: &[(f64, f64)]) -> Result<DecayFit> {
    if series.len() < 6 {
        return Err(Error::Invalid(format!("need at least 6 samples, got {}", series.len())));
    }
    if let Some((t, v)) = series.iter().find(|(t, v)| !(*v > 0.0 && v.is_finite() && *t > 0.0)) {
        return Err(Error::Invalid(format!("nonpositive sample {v} at t = {t}")));
    }
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (t, _)| (lo.min(*t), hi.max(*t)));
    if (hi / lo).log10() < 1.5 {
        return Err(Error::Invalid(format!("samples span only {:.2} decades", (hi / lo).log10())));
    }
    let n = series.len() as f64;
    let xs: Vec<f64> = series.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = series.iter().map(|(_, v)| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(DecayFit { slope, intercept, r2 })
}

/// Residuals of the modified first-order system on level `n` at node `m`:
/// time derivatives of the stored iterate (finite differences in `log t`)
/// minus the system's right-hand side. Returned as `(e, k, gamma)`.
pub fn iterate_modified_residual(level: &IterateSet, m: usize) -> Result<[TensorField; 3]> {
    if level.len() < 3 {
        return Err(Error::Invalid("need at least three slices".into()));
    }
    let grid = &level.grid;
    let len = grid.len();
    let win = stencil_window(m, level.len(), 5);
    let nodes: Vec<f64> = win.clone().map(|j| level.times.s(j)).collect();
    let w = fornberg_weights(level.times.s(m), &nodes, 1);
    let t = level.times.nodes[m];
    let here = level.state_at(m)?;
    let mut d_scaled = TensorField::zeros(2, len, Symmetry::None);
    let mut d_x = TensorField::zeros(2, len, Symmetry::None);
    let mut d_gamma = TensorField::zeros(3, len, Symmetry::None);
    for (wj, j) in w[1].iter().zip(win) {
        let sc = level.scaled_frame_at(j);
        let xj = level.x_at(j);
        let gj = if j == m { here.gamma.clone() } else { level.state_at(j)?.gamma };
        for q in 0..9 {
            for x in 0..len {
                d_scaled.comps[q][x] += wj * sc.comps[q][x];
                d_x.comps[q][x] += wj * xj.comps[q][x];
            }
        }
        for q in 0..27 {
            for x in 0..len {
                d_gamma.comps[q][x] += wj * gj.comps[q][x];
            }
        }
    }
    let (re, rk, rg) = modified_rhs(grid, &here.e, &here.k, &here.gamma);
    let mut out_e = TensorField::zeros(2, len, Symmetry::None);
    let mut out_k = TensorField::zeros(2, len, Symmetry::None);
    let mut out_g = TensorField::zeros(3, len, Symmetry::None);
    let xm = level.x_at(m);
    for q in 0..9 {
        let i = q / 3;
        for x in 0..len {
            let p = level.p[i][x];
            // e = t^{-p} E: d_t e = t^{-p-1} (d_s E - p E)
            let sc = level.f.comps[q][x] + level.y.get(m).map_or(0.0, |y| y.comps[q][x]);
            let dte = t.powf(-p - 1.0) * (d_scaled.comps[q][x] - p * sc);
            out_e.comps[q][x] = dte - re.comps[q][x];
            // k = (X - p) / t: d_t k = (d_s X - X + p delta) / t^2
            let diag = if q % 4 == 0 { p } else { 0.0 };
            let dtk = (d_x.comps[q][x] - xm.comps[q][x] + diag) / (t * t);
            out_k.comps[q][x] = dtk - rk.comps[q][x];
        }
    }
    for q in 0..27 {
        for x in 0..len {
            out_g.comps[q][x] = d_gamma.comps[q][x] / t - rg.comps[q][x];
        }
    }
    Ok([out_e, out_k, out_g])
}
