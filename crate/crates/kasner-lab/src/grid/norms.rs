use super::{fd_derivative_unchecked, SpatialGrid, TensorField};
use crate::{Error, Result};

/// Highest derivative order supported by the norm routines.
pub const MAX_SOBOLEV_ORDER: usize = 4;

/// Visits `d^alpha f` for every multi-index with `|alpha| <= s`, each once.
fn for_each_derivative(grid: &SpatialGrid, f: &[f64], s: usize, visit: &mut impl FnMut(&[f64])) {
    fn rec(
        grid: &SpatialGrid,
        g: &[f64],
        from_axis: usize,
        left: usize,
        visit: &mut impl FnMut(&[f64]),
    ) {
        visit(g);
        if left == 0 {
            return;
        }
        for axis in from_axis..3 {
            let d = fd_derivative_unchecked(grid, g, axis, grid.order);
            rec(grid, &d, axis, left - 1, visit);
        }
    }
    rec(grid, f, 0, s, visit);
}

fn check(grid: &SpatialGrid, fields: &[&TensorField], s: usize, weight: &[f64]) -> Result<()> {
    if s > MAX_SOBOLEV_ORDER {
        return Err(Error::SobolevOrder { s, max: MAX_SOBOLEV_ORDER });
    }
    if weight.len() != grid.len() || fields.iter().any(|t| t.len() != grid.len()) {
        return Err(Error::Invalid("field size does not match grid".into()));
    }
    if let Some(idx) = weight.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::Invalid(format!(
            "volume weight must be positive, fails at {:?}",
            grid.point(idx)
        )));
    }
    Ok(())
}

/// `( sum_{|alpha| <= s} int (d^alpha f)^2 vol )^(1/2)` over all components.
pub fn hs_norm(grid: &SpatialGrid, fields: &[&TensorField], s: usize, weight: &[f64]) -> Result<f64> {
    check(grid, fields, s, weight)?;
    let dv = grid.cell_volume();
    let mut total = 0.0;
    for t in fields {
        for c in &t.comps {
            for_each_derivative(grid, c, s, &mut |g| {
                total += g.iter().zip(weight).map(|(v, w)| v * v * w).sum::<f64>() * dv;
            });
        }
    }
    Ok(total.sqrt())
}

/// `sum_{|alpha| <= s} sup |d^alpha f|` over all components.
pub fn ws_norm(grid: &SpatialGrid, fields: &[&TensorField], s: usize) -> Result<f64> {
    let ones = vec![1.0; grid.len()];
    check(grid, fields, s, &ones)?;
    let mut total = 0.0;
    for t in fields {
        for c in &t.comps {
            for_each_derivative(grid, c, s, &mut |g| total += super::max_abs(g));
        }
    }
    Ok(total)
}
