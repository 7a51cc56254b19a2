use super::{check_finite, FdOrder, GridMode, SpatialGrid};
use crate::{Error, Result};

/// Derivative along `axis` (0 for x¹, 1 for x², 2 for x³).
///
/// Centered stencils of the requested order in the interior. Periodic grids
/// wrap; localized grids switch to one-sided stencils of the same order at the
/// faces. A non-periodic function on a periodic grid is treated as its periodic
/// extension, so a sawtooth jump shows up near the seam.
pub fn fd_derivative(grid: &SpatialGrid, f: &[f64], axis: usize, order: FdOrder) -> Result<Vec<f64>> {
    if f.len() != grid.len() {
        return Err(Error::Invalid(format!(
            "field has {} values, grid has {}",
            f.len(),
            grid.len()
        )));
    }
    if axis > 2 {
        return Err(Error::Invalid(format!("axis must be 0, 1 or 2, got {axis}")));
    }
    if grid.n < order.as_int() + 1 {
        return Err(Error::Invalid(format!(
            "order {} stencil needs at least {} points per axis",
            order.as_int(),
            order.as_int() + 1
        )));
    }
    check_finite(grid, "fd_derivative input", f)?;
    Ok(fd_derivative_unchecked(grid, f, axis, order))
}

/// Same as [`fd_derivative`] without the input checks. Used in inner loops.
pub fn fd_derivative_unchecked(grid: &SpatialGrid, f: &[f64], axis: usize, order: FdOrder) -> Vec<f64> {
    let n = grid.n;
    let stride = match axis {
        0 => n * n,
        1 => n,
        _ => 1,
    };
    let inv_h = 1.0 / grid.h();
    let mut out = vec![0.0; f.len()];
    let mut line = vec![0.0; n];
    let mut dline = vec![0.0; n];
    for base in line_bases(n, axis) {
        for (q, v) in line.iter_mut().enumerate() {
            *v = f[base + q * stride];
        }
        match grid.mode {
            GridMode::Periodic => periodic_line(&line, &mut dline, order, inv_h),
            GridMode::Localized => localized_line(&line, &mut dline, order, inv_h),
        }
        for (q, v) in dline.iter().enumerate() {
            out[base + q * stride] = *v;
        }
    }
    out
}

fn line_bases(n: usize, axis: usize) -> impl Iterator<Item = usize> {
    (0..n * n).map(move |r| {
        let (a, b) = (r / n, r % n);
        match axis {
            0 => a * n + b,
            1 => a * n * n + b,
            _ => (a * n + b) * n,
        }
    })
}

fn periodic_line(f: &[f64], d: &mut [f64], order: FdOrder, inv_h: f64) {
    let n = f.len();
    match order {
        FdOrder::Two => {
            for q in 0..n {
                let fp = f[(q + 1) % n];
                let fm = f[(q + n - 1) % n];
                d[q] = 0.5 * (fp - fm) * inv_h;
            }
        }
        FdOrder::Four => {
            for q in 0..n {
                let fp1 = f[(q + 1) % n];
                let fm1 = f[(q + n - 1) % n];
                let fp2 = f[(q + 2) % n];
                let fm2 = f[(q + n - 2) % n];
                d[q] = (8.0 * (fp1 - fm1) - (fp2 - fm2)) * inv_h / 12.0;
            }
        }
    }
}

fn localized_line(f: &[f64], d: &mut [f64], order: FdOrder, inv_h: f64) {
    let n = f.len();
    match order {
        FdOrder::Two => {
            d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) * 0.5 * inv_h;
            for q in 1..n - 1 {
                d[q] = 0.5 * (f[q + 1] - f[q - 1]) * inv_h;
            }
            d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) * 0.5 * inv_h;
        }
        FdOrder::Four => {
            let c = inv_h / 12.0;
            d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) * c;
            d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) * c;
            for q in 2..n - 2 {
                d[q] = (8.0 * (f[q + 1] - f[q - 1]) - (f[q + 2] - f[q - 2])) * c;
            }
            d[n - 2] = (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4]
                - f[n - 5])
                * c;
            d[n - 1] = (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4]
                + 3.0 * f[n - 5])
                * c;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sided_stencils_exact_on_quartics() {
        let grid = SpatialGrid::new(1.0, 10, GridMode::Localized, FdOrder::Four).unwrap();
        let f = grid.sample(|x| x[1].powi(4) - 2.0 * x[1].powi(3) + x[1]);
        let d = fd_derivative(&grid, &f, 1, FdOrder::Four).unwrap();
        for idx in 0..grid.len() {
            let y = grid.coords(idx)[1];
            let exact = 4.0 * y.powi(3) - 6.0 * y * y + 1.0;
            assert!((d[idx] - exact).abs() < 1e-11, "{} vs {}", d[idx], exact);
        }
    }
}
