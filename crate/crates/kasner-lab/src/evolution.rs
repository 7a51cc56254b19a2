//! Forward evolution of the full first-order system for `(e, k, gamma)` from
//! iterate data at `t = eta`, with remainder norms and constraint monitors.

use crate::frame::{
    coframe_from_frame, gamma_from_frame, hamiltonian_residual, momentum_residual_evolved, modified_rhs,
    spacetime_ricci, spatial_ricci, torsion_residual, volume_from_frame, FrameState, TimeFd,
};
use crate::grid::{check_finite, hs_norm, GridMode, SpatialGrid, Symmetry, TensorField};
use crate::iteration::{fit_decay_rate, IterateSet};
use crate::{Error, Result};

/// Knobs of a forward run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOptions {
    /// Weight exponent `N0` of the energy `t^{-2 N0} E(t)`.
    pub n0: f64,
    /// Sobolev order of the remainder norms used in the energy.
    pub s: usize,
    /// Ingoing speed factor for the inset margin.
    pub sigma: f64,
    /// Courant number against `h / max |e_Ia|`.
    pub cfl: f64,
    /// Upper bound on `dt / t`; keeps the `1/t` terms resolved.
    pub dt_fraction: f64,
    /// Output rows per decade of `t`.
    pub cadence: usize,
    /// Halt when a remainder exceeds `ceiling * t^{N0}`; `None` disables.
    pub ceiling: Option<f64>,
    /// Additional output times inside `(eta, t_end)`.
    pub extra_times: Vec<f64>,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions { n0: 8.0, s: 2, sigma: 4.0, cfl: 0.25, dt_fraction: 0.01, cadence: 10, ceiling: None, extra_times: Vec::new() }
    }
}

/// Evolved variables at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub t: f64,
    pub eta: f64,
    pub e: TensorField,
    pub k: TensorField,
    pub gamma: TensorField,
}

impl StateField {
    /// The iterate at `eta`, with `gamma` the Levi-Civita connection of its frame.
    pub fn from_iterate(background: &IterateSet, eta: f64) -> Result<Self> {
        let (e, k) = background.interpolate(eta)?;
        let omega = coframe_from_frame(&background.grid, &e)?;
        let gamma = gamma_from_frame(&background.grid, &e, &omega)?;
        Ok(StateField { t: eta, eta, e, k, gamma })
    }

    /// The state with its coframe, keeping the evolved `gamma`.
    pub fn frame_state(&self, grid: &SpatialGrid) -> Result<FrameState> {
        let omega = coframe_from_frame(grid, &self.e)?;
        Ok(FrameState { t: self.t, e: self.e.clone(), omega, k: self.k.clone(), gamma: self.gamma.clone() })
    }

    fn check(&self, grid: &SpatialGrid) -> Result<()> {
        for (what, f) in [("e", &self.e), ("k", &self.k), ("gamma", &self.gamma)] {
            for c in &f.comps {
                check_finite(grid, what, c)?;
            }
        }
        Ok(())
    }
}

/// Time derivatives `(d_t e, d_t k, d_t gamma)` of the modified system.
pub fn rhs(grid: &SpatialGrid, state: &StateField) -> Result<(TensorField, TensorField, TensorField)> {
    state.check(grid)?;
    coframe_from_frame(grid, &state.e).map_err(|err| match err {
        Error::SingularFrame { context, point, det } => Error::SingularFrame {
            context: format!("{context}, evolution at t = {:e}", state.t),
            point,
            det,
        },
        other => other,
    })?;
    Ok(modified_rhs(grid, &state.e, &state.k, &state.gamma))
}

/// Largest characteristic speed, `max |e_Ia|`.
pub fn max_speed(e: &TensorField) -> f64 {
    e.max_abs()
}

/// Largest step allowed by the Courant condition.
pub fn cfl_limit(grid: &SpatialGrid, state: &StateField, cfl: f64) -> f64 {
    cfl * grid.h() / max_speed(&state.e)
}

/// Symmetry defects removed by the projection after a step, relative to the
/// field size.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub sym_k: f64,
    pub antisym_gamma: f64,
}

fn axpy(out: &mut TensorField, a: f64, x: &TensorField) {
    for (o, c) in out.comps.iter_mut().zip(&x.comps) {
        for (u, v) in o.iter_mut().zip(c) {
            *u += a * v;
        }
    }
}

fn shifted(s: &StateField, dt: f64, d: &(TensorField, TensorField, TensorField)) -> StateField {
    let mut out = s.clone();
    out.t += dt;
    axpy(&mut out.e, dt, &d.0);
    axpy(&mut out.k, dt, &d.1);
    axpy(&mut out.gamma, dt, &d.2);
    out
}

fn relative(viol: f64, field: &TensorField) -> f64 {
    let m = field.max_abs();
    if m > 0.0 {
        viol / m
    } else {
        viol
    }
}

/// One classical Runge-Kutta step, followed by projection of `k` and `gamma`
/// onto their symmetry classes.
pub fn step_rk4(grid: &SpatialGrid, state: &StateField, dt: f64, cfl: f64) -> Result<(StateField, StepReport)> {
    let dt_max = cfl_limit(grid, state, cfl);
    if dt > dt_max * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, dt_max });
    }
    let k1 = rhs(grid, state)?;
    let k2 = rhs(grid, &shifted(state, 0.5 * dt, &k1))?;
    let k3 = rhs(grid, &shifted(state, 0.5 * dt, &k2))?;
    let k4 = rhs(grid, &shifted(state, dt, &k3))?;
    let mut out = state.clone();
    out.t += dt;
    for (w, d) in [(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)] {
        axpy(&mut out.e, dt * w / 6.0, &d.0);
        axpy(&mut out.k, dt * w / 6.0, &d.1);
        axpy(&mut out.gamma, dt * w / 6.0, &d.2);
    }
    out.k.symmetry = Symmetry::Symmetric2;
    out.gamma.symmetry = Symmetry::AntisymmetricLast2;
    let sym_k = relative(out.k.enforce_symmetry(), &out.k);
    let antisym_gamma = relative(out.gamma.enforce_symmetry(), &out.gamma);
    out.check(grid)?;
    Ok((out, StepReport { sym_k, antisym_gamma }))
}

/// Constraint quantities of one slice.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SliceMonitors {
    pub torsion: f64,
    pub ham: f64,
    pub mom: [f64; 3],
    pub r4_00: f64,
    pub r4_0i: [f64; 3],
    /// `max |R4_IJ - R4_JI|`; zero by construction for this route.
    pub r4_antisym: f64,
    pub r4_ij: f64,
}

/// Torsion, Hamiltonian and momentum residuals of the evolved variables, and
/// the spacetime Ricci of the metric `-dt^2 + g(t)` built from the evolved frame.
///
/// `d_t k` comes from the right-hand side, so no time differencing is needed:
/// `R4_IJ = R_IJ - d_t k_IJ + tr k k_IJ` with `R_IJ` from the Levi-Civita
/// connection of `e`, `R4_00` from the Gauss identity and `R4_0I = e_I tr k - div k`.
pub fn slice_monitors(grid: &SpatialGrid, state: &StateField) -> Result<SliceMonitors> {
    let fs = state.frame_state(grid)?;
    let torsion = torsion_residual(grid, &fs.e, &fs.omega, &fs.gamma).max_abs();
    let ham = crate::grid::max_abs(&hamiltonian_residual(grid, &fs));
    let mom_f = momentum_residual_evolved(grid, &fs);
    let mom = std::array::from_fn(|i| crate::grid::max_abs(&mom_f[i]));
    let lc = gamma_from_frame(grid, &fs.e, &fs.omega)?;
    let r = spatial_ricci(grid, &fs.e, &lc);
    let (_, dk, _) = modified_rhs(grid, &fs.e, &fs.k, &state.gamma);
    let len = grid.len();
    let (mut r4_ij, mut r4_antisym) = (0.0_f64, 0.0_f64);
    let mut r00 = 0.0_f64;
    for x in 0..len {
        let kv: [f64; 9] = std::array::from_fn(|q| fs.k.comps[q][x]);
        let tr = kv[0] + kv[4] + kv[8];
        let ksq: f64 = kv.iter().map(|v| v * v).sum();
        let mut sum_ii = 0.0;
        let mut r4 = [0.0; 9];
        for q in 0..9 {
            r4[q] = r.comps[q][x] - dk.comps[q][x] + tr * kv[q];
        }
        for i in 0..3 {
            sum_ii += r4[i * 4];
            for j in i + 1..3 {
                r4_antisym = r4_antisym.max((r4[i * 3 + j] - r4[j * 3 + i]).abs());
            }
        }
        r4_ij = r4.iter().fold(r4_ij, |m, v| m.max(v.abs()));
        let gauss = r.comps[0][x] + r.comps[4][x] + r.comps[8][x] - ksq + tr * tr;
        r00 = r00.max((gauss - sum_ii).abs());
    }
    let lc_state = FrameState { gamma: lc, ..fs };
    let codazzi = momentum_residual_evolved(grid, &lc_state);
    let r4_0i = std::array::from_fn(|i| crate::grid::max_abs(&codazzi[i]));
    Ok(SliceMonitors { torsion, ham, mom, r4_00: r00, r4_0i, r4_antisym, r4_ij })
}

/// One output row of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// `H^s` norms of the remainders for `s = 0..=4`.
    pub e_d: [f64; 5],
    pub k_d: [f64; 5],
    pub g_d: [f64; 5],
    pub weighted_energy: f64,
    /// Sup norms of the remainders.
    pub w_sup: [f64; 3],
    pub sym_k: f64,
    pub antisym_gamma: f64,
    pub monitors: SliceMonitors,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyTrace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_COLUMNS: &str = "t,e_d_h0,e_d_h1,e_d_h2,e_d_h3,e_d_h4,k_d_h0,k_d_h1,k_d_h2,k_d_h3,k_d_h4,\
g_d_h0,g_d_h1,g_d_h2,g_d_h3,g_d_h4,weighted_energy,sym_k,antisym_gamma,torsion,ham,mom1,mom2,mom3,\
r4_00,r4_01,r4_02,r4_03";

impl EnergyTrace {
    /// CSV with a header line; floats in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_COLUMNS);
        out.push('\n');
        for r in &self.rows {
            let m = &r.monitors;
            let mut vals = vec![r.t];
            vals.extend(r.e_d);
            vals.extend(r.k_d);
            vals.extend(r.g_d);
            vals.extend([r.weighted_energy, r.sym_k, r.antisym_gamma, m.torsion, m.ham]);
            vals.extend(m.mom);
            vals.push(m.r4_00);
            vals.extend(m.r4_0i);
            let line: Vec<String> = vals.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Remainder size used for ceilings and comparisons: the `H^0` norm of all
    /// three remainders together.
    pub fn remainder_at(&self, row: usize) -> f64 {
        let r = &self.rows[row];
        (r.e_d[0].powi(2) + r.k_d[0].powi(2) + r.g_d[0].powi(2)).sqrt()
    }
}

/// Remainders against the background at the state's time.
fn remainders(background: &IterateSet, state: &StateField) -> Result<[TensorField; 3]> {
    let grid = &background.grid;
    let (e_bg, k_bg) = background.interpolate(state.t)?;
    let omega = coframe_from_frame(grid, &e_bg)?;
    let g_bg = gamma_from_frame(grid, &e_bg, &omega)?;
    let diff = |a: &TensorField, b: &TensorField| {
        let mut out = a.clone();
        out.symmetry = Symmetry::None;
        axpy(&mut out, -1.0, b);
        out
    };
    Ok([diff(&state.e, &e_bg), diff(&state.k, &k_bg), diff(&state.gamma, &g_bg)])
}

fn trace_row(background: &IterateSet, state: &StateField, step: StepReport, opts: &EvolveOptions) -> Result<TraceRow> {
    let grid = &background.grid;
    let vol = volume_from_frame(&state.e);
    let [ed, kd, gd] = remainders(background, state)?;
    let norms = |f: &TensorField| -> Result<[f64; 5]> {
        let mut out = [0.0; 5];
        for (s, o) in out.iter_mut().enumerate() {
            *o = hs_norm(grid, &[f], s, &vol)?;
        }
        Ok(out)
    };
    let (e_d, k_d, g_d) = (norms(&ed)?, norms(&kd)?, norms(&gd)?);
    let s = opts.s.min(4);
    let energy = e_d[s].powi(2) + k_d[s].powi(2) + g_d[s].powi(2);
    Ok(TraceRow {
        t: state.t,
        e_d,
        k_d,
        g_d,
        weighted_energy: state.t.powf(-2.0 * opts.n0) * energy,
        w_sup: [ed.max_abs(), kd.max_abs(), gd.max_abs()],
        sym_k: step.sym_k,
        antisym_gamma: step.antisym_gamma,
        monitors: slice_monitors(grid, state)?,
    })
}

/// Output times: `cadence` per decade from `eta` to `t_end`, both included,
/// merged with any extra times strictly inside.
fn output_times(eta: f64, t_end: f64, cadence: usize, extra: &[f64]) -> Vec<f64> {
    let decades = (t_end / eta).log10();
    let count = ((decades * cadence as f64).ceil() as usize).max(1);
    let mut out: Vec<f64> =
        (0..=count).map(|j| if j == count { t_end } else { eta * (t_end / eta).powf(j as f64 / count as f64) }).collect();
    out.extend(extra.iter().copied().filter(|&t| t > eta && t < t_end));
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * *b);
    out
}

/// Result of a forward run.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub trace: EnergyTrace,
    /// States at the output times, first one the initial data.
    pub snapshots: Vec<StateField>,
    pub steps: usize,
}

impl Evolution {
    pub fn last(&self) -> &StateField {
        self.snapshots.last().expect("at least the initial state")
    }
}

/// Integrates from iterate data at `eta` to `t_end`.
pub fn evolve(background: &IterateSet, eta: f64, t_end: f64, opts: &EvolveOptions) -> Result<Evolution> {
    let grid = background.grid;
    let times = &background.times;
    if !(eta >= times.t_min * (1.0 - 1e-12) && t_end <= times.t_max * (1.0 + 1e-12) && eta < t_end) {
        return Err(Error::Invalid(format!(
            "need t_min <= eta < t_end <= t_max, got eta = {eta:e}, t_end = {t_end:e} on [{:e}, {:e}]",
            times.t_min, times.t_max
        )));
    }
    if opts.cadence == 0 || !(opts.cfl > 0.0) || !(opts.dt_fraction > 0.0) {
        return Err(Error::Invalid("cadence, cfl and dt_fraction must be positive".into()));
    }
    let mut state = StateField::from_iterate(background, eta)?;
    let mut trace = EnergyTrace::default();
    trace.rows.push(trace_row(background, &state, StepReport::default(), opts)?);
    let mut snapshots = vec![state.clone()];
    let mut worst = StepReport::default();
    let mut steps = 0;
    for &target in &output_times(eta, t_end, opts.cadence, &opts.extra_times)[1..] {
        while state.t < target * (1.0 - 1e-14) {
            let dt = cfl_limit(&grid, &state, opts.cfl).min(opts.dt_fraction * state.t).min(target - state.t);
            let (next, rep) = step_rk4(&grid, &state, dt, opts.cfl)?;
            worst.sym_k = worst.sym_k.max(rep.sym_k);
            worst.antisym_gamma = worst.antisym_gamma.max(rep.antisym_gamma);
            state = next;
            steps += 1;
        }
        state.t = target;
        let row = trace_row(background, &state, worst, opts)?;
        worst = StepReport::default();
        trace.rows.push(row);
        if let Some(c) = opts.ceiling {
            let norm = trace.remainder_at(trace.rows.len() - 1);
            let ceiling = c * target.powf(opts.n0);
            if norm > ceiling {
                return Err(Error::EnergyBreach { t: target, norm, ceiling, growth: growth_exponent(&trace) });
            }
        }
        snapshots.push(state.clone());
    }
    Ok(Evolution { trace, snapshots, steps })
}

/// Fitted power of `t` of the remainder over the rows so far (NaN if too few).
fn growth_exponent(trace: &EnergyTrace) -> f64 {
    let series: Vec<(f64, f64)> = (0..trace.rows.len())
        .map(|r| (trace.rows[r].t, trace.remainder_at(r)))
        .filter(|(_, v)| *v > 0.0)
        .collect();
    fit_decay_rate(&series).map(|f| f.slope).unwrap_or(f64::NAN)
}

/// Monitored quantities on a stored slice history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorRow {
    pub t: f64,
    pub torsion: f64,
    pub r4_00: f64,
    pub r4_0i: [f64; 3],
    pub r4_antisym: f64,
    /// `t^{-2 N1 - 2}` times the squared torsion and `R4_0mu` norms.
    pub weighted_high: f64,
    /// `t^{-2 N1}` times the same sum.
    pub weighted_low: f64,
}

/// Torsion and spacetime Ricci monitors over a slice history; time derivatives
/// by finite differences across the stored slices.
pub fn constraint_recovery_monitor(grid: &SpatialGrid, history: &[StateField], n1: f64) -> Result<Vec<MonitorRow>> {
    if history.len() < 3 {
        return Err(Error::Invalid(format!("need at least 3 slices, got {}", history.len())));
    }
    let times: Vec<f64> = history.iter().map(|s| s.t).collect();
    let frames: Vec<&TensorField> = history.iter().map(|s| &s.e).collect();
    let mut out = Vec::with_capacity(history.len());
    for (m, s) in history.iter().enumerate() {
        let fs = s.frame_state(grid)?;
        let torsion = torsion_residual(grid, &fs.e, &fs.omega, &fs.gamma).max_abs();
        let r4 = spacetime_ricci(grid, &times, &frames, m, TimeFd::Plain)?;
        let r4_00 = crate::grid::max_abs(&r4.r00);
        let r4_0i = std::array::from_fn(|i| crate::grid::max_abs(&r4.r0i[i]));
        let sum = torsion.powi(2) + r4_00.powi(2) + r4_0i.iter().map(|v: &f64| v * v).sum::<f64>();
        out.push(MonitorRow {
            t: s.t,
            torsion,
            r4_00,
            r4_0i,
            r4_antisym: r4.antisymmetric_norm(),
            weighted_high: s.t.powf(-2.0 * n1 - 2.0) * sum,
            weighted_low: s.t.powf(-2.0 * n1) * sum,
        });
    }
    Ok(out)
}

/// How far boundary influence can have travelled inward by time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsetMargin {
    /// `int_eta^t sigma max |e_Ia| dtau` in coordinate units.
    pub coordinate: f64,
    pub cells: f64,
    /// Set when the margin exceeds half the box: nothing is trustworthy.
    pub exceeds_half_box: bool,
}

/// Inset margin in localized mode; `None` on periodic grids.
pub fn inset_margin(background: &IterateSet, eta: f64, t: f64, sigma: f64) -> Result<Option<InsetMargin>> {
    let grid = background.grid;
    if grid.mode == GridMode::Periodic {
        return Ok(None);
    }
    if !(t >= eta) {
        return Err(Error::Invalid(format!("inset margin needs t >= eta, got {t:e} < {eta:e}")));
    }
    // composite Simpson in s = log tau, integrand tau * sigma * max |e|
    let panels = 64;
    let (s0, s1) = (eta.ln(), t.ln());
    let hs = (s1 - s0) / panels as f64;
    let mut sum = 0.0;
    for j in 0..=panels {
        let tau = (s0 + j as f64 * hs).exp().clamp(eta, t);
        let (e, _) = background.interpolate(tau)?;
        let w = if j == 0 || j == panels { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * tau * max_speed(&e);
    }
    let coordinate = sigma * sum * hs / 3.0;
    let cells = coordinate / grid.h();
    Ok(Some(InsetMargin { coordinate, cells, exceeds_half_box: coordinate > 0.5 * grid.delta }))
}

/// Two runs from different `eta` compared at a common end time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauchyReport {
    pub t: f64,
    /// `H^0` distance between the two final states.
    pub difference: f64,
    /// Remainder of the run started at the larger `eta`.
    pub remainder: f64,
    pub pass: bool,
}

/// The remainder norm reached from `eta_hi` bounds, with factor 2 slack, the
/// distance to the run from `eta_lo < eta_hi`.
pub fn eta_cauchy_check(
    background: &IterateSet,
    eta_hi: f64,
    eta_lo: f64,
    t_end: f64,
    opts: &EvolveOptions,
) -> Result<CauchyReport> {
    if !(eta_lo < eta_hi) {
        return Err(Error::Invalid("eta_lo must be below eta_hi".into()));
    }
    let hi = evolve(background, eta_hi, t_end, opts)?;
    let lo = evolve(background, eta_lo, t_end, opts)?;
    let grid = &background.grid;
    let (a, b) = (hi.last(), lo.last());
    let vol = volume_from_frame(&a.e);
    let mut d2 = 0.0;
    for (x, y) in [(&a.e, &b.e), (&a.k, &b.k), (&a.gamma, &b.gamma)] {
        let mut d = x.clone();
        d.symmetry = Symmetry::None;
        axpy(&mut d, -1.0, y);
        d2 += hs_norm(grid, &[&d], 0, &vol)?.powi(2);
    }
    let difference = d2.sqrt();
    let remainder = hi.trace.remainder_at(hi.trace.rows.len() - 1);
    Ok(CauchyReport { t: t_end, difference, remainder, pass: difference < 2.0 * remainder })
}
