use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Nodes uniform in `s = log t` from `t_min` to `t_max` with `n_steps` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub n_steps: usize,
    pub nodes: Vec<f64>,
}

impl LogTimeGrid {
    pub fn new(t_min: f64, t_max: f64, n_steps: usize) -> Result<Self> {
        if !(t_min > 0.0) || !(t_max > t_min) || !t_max.is_finite() {
            return Err(Error::Invalid(format!(
                "need 0 < t_min < t_max, got t_min = {t_min}, t_max = {t_max}"
            )));
        }
        if n_steps < 4 {
            return Err(Error::Invalid(format!("need at least 4 log-time steps, got {n_steps}")));
        }
        let (s0, s1) = (t_min.ln(), t_max.ln());
        let ds = (s1 - s0) / n_steps as f64;
        let mut nodes: Vec<f64> = (0..=n_steps).map(|k| (s0 + k as f64 * ds).exp()).collect();
        nodes[0] = t_min;
        nodes[n_steps] = t_max;
        Ok(LogTimeGrid { t_min, t_max, n_steps, nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ds(&self) -> f64 {
        (self.t_max.ln() - self.t_min.ln()) / self.n_steps as f64
    }

    pub fn s(&self, k: usize) -> f64 {
        self.nodes[k].ln()
    }

    /// Index of the node equal to `t` up to relative rounding, if any.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = (t.ln() - self.t_min.ln()) / self.ds();
        let k = x.round();
        if k < 0.0 || k > self.n_steps as f64 {
            return None;
        }
        let k = k as usize;
        ((self.nodes[k] - t).abs() <= 1e-12 * t).then_some(k)
    }

    /// Largest node index with `nodes[k] <= t`.
    pub fn floor_index(&self, t: f64) -> usize {
        if let Some(k) = self.node_index(t) {
            return k;
        }
        let x = ((t.ln() - self.t_min.ln()) / self.ds()).floor();
        (x.max(0.0) as usize).min(self.n_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    /// Trapezoid rule in `s = log t`.
    Trapezoid,
    /// Trapezoid with cubic end corrections: exact for cubics in `s`.
    Cubic,
}

/// Cumulative `int_0^{t_k} g dtau` for all nodes, with `g` sampled at the nodes.
///
/// The substitution `s = log tau` turns the integrand into `F = tau * g`. Below
/// `t_min` the tail is closed by the power law `F ~ F0 (tau/t_min)^beta` fitted
/// from the first two nodes, giving `F0 / beta`. Tails whose first sample is at
/// most `floor` in magnitude are dropped.
pub fn cumulative_log_time_integral(
    grid: &LogTimeGrid,
    g: &[f64],
    rule: Quadrature,
    floor: f64,
    component: &str,
) -> Result<Vec<f64>> {
    if g.len() > grid.len() {
        return Err(Error::Invalid("more samples than time nodes".into()));
    }
    let f: Vec<f64> = g.iter().zip(&grid.nodes).map(|(g, t)| g * t).collect();
    let mut out = vec![0.0; f.len()];
    cumulative_in_s(grid.ds(), &f, rule, floor, component, &mut out)?;
    Ok(out)
}

/// [`cumulative_log_time_integral`] with an explicit tail closure.
pub fn cumulative_log_time_integral_with(
    grid: &LogTimeGrid,
    g: &[f64],
    rule: Quadrature,
    tail_rule: TailRule,
    component: &str,
) -> Result<Vec<f64>> {
    if g.len() > grid.len() {
        return Err(Error::Invalid("more samples than time nodes".into()));
    }
    let f: Vec<f64> = g.iter().zip(&grid.nodes).map(|(g, t)| g * t).collect();
    let mut out = vec![0.0; f.len()];
    out[0] = tail(grid.ds(), &f, tail_rule, component)?;
    quadrature_from(grid.ds(), &f, rule, &mut out);
    Ok(out)
}

/// Core of [`cumulative_log_time_integral`] acting on `F = tau * g` directly.
pub(crate) fn cumulative_in_s(
    ds: f64,
    f: &[f64],
    rule: Quadrature,
    floor: f64,
    component: &str,
    out: &mut [f64],
) -> Result<()> {
    let n = f.len();
    if n == 0 {
        return Ok(());
    }
    out[0] = tail(ds, f, TailRule::power_law(floor), component)?;
    quadrature_from(ds, f, rule, out);
    Ok(())
}

/// Adds the cumulative quadrature of `f` on top of `out[0]`.
fn quadrature_from(ds: f64, f: &[f64], rule: Quadrature, out: &mut [f64]) {
    let n = f.len();
    let mut acc = out[0];
    let cubic = matches!(rule, Quadrature::Cubic) && n >= 4;
    let c = ds / 24.0;
    for k in 0..n - 1 {
        let piece = if !cubic {
            0.5 * ds * (f[k] + f[k + 1])
        } else if k == 0 {
            c * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
        } else if k == n - 2 {
            c * (f[n - 4] - 5.0 * f[n - 3] + 19.0 * f[n - 2] + 9.0 * f[n - 1])
        } else {
            c * (-f[k - 1] + 13.0 * f[k] + 13.0 * f[k + 1] - f[k + 2])
        };
        acc += piece;
        out[k + 1] = acc;
    }
}

/// Number of leading nodes consulted by the tail fit.
const TAIL_SPAN: usize = 6;

/// How the part of an integral below the first node is closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailRule {
    /// Tails whose first sample is at most this in magnitude are dropped.
    pub floor: f64,
    /// Smallest exponent used for the power law; fits below it are treated as
    /// log-polluted and clamped.
    pub min_exponent: f64,
    /// Fitted exponents in `(-slack, min_exponent)` count as marginal rather
    /// than as growth toward `t = 0`.
    pub slack: f64,
}

impl TailRule {
    /// Plain two-node power-law closure.
    pub fn power_law(floor: f64) -> Self {
        TailRule { floor, min_exponent: 0.0, slack: 0.0 }
    }
}

pub(crate) fn tail(ds: f64, f: &[f64], rule: TailRule, component: &str) -> Result<f64> {
    let f0 = f[0];
    if f0.abs() <= rule.floor || f0 == 0.0 {
        return Ok(0.0);
    }
    if f.len() < 2 {
        return Err(Error::Invalid("tail fit needs two samples".into()));
    }
    let close = |beta: f64| f0 / beta.max(rule.min_exponent);
    let ratio = f[1] / f0;
    if ratio <= 0.0 {
        // sign change between the first two nodes: no power law to fit
        return Ok(0.0);
    }
    let beta = ratio.ln() / ds;
    if beta > 0.0 {
        return Ok(close(beta));
    }
    // Log factors (t^b P(log t)) can look like growth next to a root of P.
    // Only a decay that persists over the leading nodes counts as genuine.
    let span = TAIL_SPAN.min(f.len() - 1);
    let mut widest = None;
    for j in 2..=span {
        let r = f[j] / f0;
        if r > 0.0 && r.ln() > 0.0 {
            widest = Some(r.ln() / (j as f64 * ds));
        }
    }
    match widest {
        Some(b) => Ok(close(b)),
        None if (2..=span).any(|j| f[j] / f0 <= 0.0) => Ok(0.0),
        None if beta > -rule.slack && rule.min_exponent > 0.0 => Ok(close(rule.min_exponent)),
        None => Err(Error::NonIntegrable {
            component: component.to_string(),
            exponent: beta - 1.0,
        }),
    }
}

/// `int_0^{t_target} g dtau` for a field sampled at the nodes `<= t_target`.
///
/// `g[k]` holds the field at node `k`. Past the last sample the integrand in
/// `s` is continued linearly.
pub fn log_time_integral(
    grid: &LogTimeGrid,
    g: &[Vec<f64>],
    t_target: f64,
    rule: Quadrature,
) -> Result<Vec<f64>> {
    if g.is_empty() {
        return Err(Error::Invalid("no samples".into()));
    }
    if t_target < grid.t_min {
        return Err(Error::Invalid(format!("t_target {t_target} below t_min")));
    }
    let n = g.len().min(grid.len());
    let last = grid.floor_index(t_target).min(n - 1);
    let len = g[0].len();
    let ds = grid.ds();
    let s_extra = t_target.ln() - grid.s(last);
    let mut out = vec![0.0; len];
    let mut fl = vec![0.0; last + 1];
    let mut cum = vec![0.0; last + 1];
    for pt in 0..len {
        for k in 0..=last {
            fl[k] = grid.nodes[k] * g[k][pt];
        }
        if let Some(idx) = fl.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite integrand at node {idx}, point {pt}")));
        }
        cumulative_in_s(ds, &fl, rule, 0.0, &format!("point {pt}"), &mut cum)?;
        let mut v = cum[last];
        if s_extra > 0.0 {
            let slope = if last > 0 { (fl[last] - fl[last - 1]) / ds } else { 0.0 };
            v += s_extra * (fl[last] + 0.5 * slope * s_extra);
        }
        out[pt] = v;
    }
    Ok(out)
}

/// Finite-difference weights on arbitrary nodes (Fornberg's algorithm).
///
/// Returns `w[d][j]`, the weight of node `j` in the `d`-th derivative at `x0`,
/// for `d = 0..=m`.
pub fn fornberg_weights(x0: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = x[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - x0;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Window of `width` consecutive indices around `m` inside `0..count`.
pub fn stencil_window(m: usize, count: usize, width: usize) -> std::ops::Range<usize> {
    let width = width.min(count);
    let half = width / 2;
    let lo = m.saturating_sub(half).min(count - width);
    lo..lo + width
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_matches_centered_five_point() {
        let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let w = fornberg_weights(0.0, &x, 1);
        let want = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w[1].iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn window_clamps_at_ends() {
        assert_eq!(stencil_window(0, 10, 5), 0..5);
        assert_eq!(stencil_window(5, 10, 5), 3..8);
        assert_eq!(stencil_window(9, 10, 5), 5..10);
    }

    #[test]
    fn cubic_rule_exact_on_cubics_in_s() {
        let grid = LogTimeGrid::new(1.0, 1.0f64.exp().powi(2), 10).unwrap();
        let f: Vec<f64> = (0..=10).map(|k| grid.s(k).powi(3)).collect();
        let mut out = vec![0.0; 11];
        cumulative_in_s(grid.ds(), &f, Quadrature::Cubic, f64::INFINITY, "x", &mut out).unwrap();
        for k in 0..=10 {
            let s = grid.s(k);
            assert!((out[k] - s.powi(4) / 4.0).abs() < 1e-12);
        }
    }
}
