//! Acceptance checks, one PASS/FAIL line each. Exits 1 if any fails.

use kasner_lab::asym_data::{frame_momentum_residual, momentum_residual, AsymptoticDataSet, Construction, DataSpec, Profile};
use kasner_lab::diagnostics::{kasner_remainder, residual_report, Family, ReportConfig, ResidualReport, RunConfig};
use kasner_lab::evolution::{eta_cauchy_check, evolve, step_rk4, EvolveOptions, StateField};
use kasner_lab::grid::{fd_derivative, FdOrder, GridMode, Scalar, SpatialGrid, Symmetry, TensorField};
use kasner_lab::iteration::build_tower;
use std::cell::OnceCell;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

type Check = Result<(bool, String), String>;

fn max_diff(a: &TensorField, b: &TensorField) -> f64 {
    a.comps
        .iter()
        .zip(&b.comps)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

fn x1_spec() -> DataSpec {
    DataSpec { u: Profile::constant(2.0).with_mode(0.1, [1, 0, 0]), c22_balanced: true, ..DataSpec::default() }
}

fn x1_config(n_pts: usize, n_max: usize, families: Vec<Family>) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.grid.n_pts = n_pts;
    cfg.time.n_steps = 64;
    cfg.tower.n_max = n_max;
    cfg.data = x1_spec();
    cfg.report = ReportConfig { families, ..ReportConfig::default() };
    cfg
}

fn e<T: std::fmt::Display>(err: T) -> String {
    err.to_string()
}

fn kasner_fixed_point() -> Check {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.grid.n_pts = 16;
    cfg.tower.n_max = 3;
    let data = cfg.build_data().map_err(e)?;
    let times = cfg.times().map_err(e)?;
    let tower = build_tower(&data, &times, 3, &cfg.tower_options()).map_err(e)?;
    let h = data.grid.h();
    let mut fixed = 0.0_f64;
    let mut worst = 0.0_f64;
    for level in &tower {
        for m in 0..times.len() {
            let t = times.nodes[m];
            fixed = fixed.max(max_diff(&level.k_at(m), &tower[0].k_at(m)) * t);
            fixed = fixed.max(max_diff(&level.scaled_frame_at(m), &tower[0].scaled_frame_at(m)));
            let k = level.k_at(m).max_abs();
            let trunc = k * k * (h.powi(4) + times.ds().powi(4));
            worst = worst.max(level.spacetime_ricci_at(m).map_err(e)?.max_norm() / trunc);
        }
    }
    let run = evolve(&tower[3], 1e-2, 1e-1, &EvolveOptions::default()).map_err(e)?;
    let rem = kasner_remainder(&run.trace, &run.snapshots);
    let secs = start.elapsed().as_secs_f64();
    let ok = fixed <= 1e-10 && worst <= 10.0 && rem <= 1e-9 && secs <= 60.0;
    Ok((ok, format!("iterate drift {fixed:.1e}, |R4|/truncation {worst:.1e}, remainder {rem:.1e}, {secs:.0} s")))
}

/// The 24^3 tower with its R4 and k difference fits, and the seconds it took.
fn ricci_report() -> Result<(ResidualReport, f64), String> {
    let start = Instant::now();
    let cfg = x1_config(24, 3, vec![Family::R4, Family::Dk]);
    let data = cfg.build_data().map_err(e)?;
    let tower = build_tower(&data, &cfg.times().map_err(e)?, cfg.tower.n_max, &cfg.tower_options()).map_err(e)?;
    let report = residual_report(&tower, &cfg.report).map_err(e)?;
    Ok((report, start.elapsed().as_secs_f64()))
}

fn slopes(family: &str, levels: std::ops::RangeInclusive<usize>, offset: f64, fit: &Result<(ResidualReport, f64), String>) -> Check {
    let (report, secs) = fit.as_ref().map_err(|err| err.clone())?;
    let eps = report.eps;
    let mut ok = true;
    let mut parts = vec![format!("eps {eps:.4}")];
    for n in levels {
        let r = report.get(family, n, "all").ok_or("missing series")?;
        let want = offset + n as f64 * eps;
        ok &= (r.fitted - want).abs() <= 0.15;
        parts.push(format!("n={n} {:.3} vs {want:.3}", r.fitted));
    }
    ok &= *secs <= 600.0;
    parts.push(format!("{secs:.0} s"));
    Ok((ok, parts.join(", ")))
}

/// frame residual I against -1/2 sum_{j >= I} f_Ij times metric residual j
fn triangular_relative_error(d: &AsymptoticDataSet) -> f64 {
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
    err / scale
}

fn constraint_equivalence() -> Check {
    let grid = SpatialGrid::periodic(1.0, 16);
    let tol = 1e-6 + 10.0 * grid.h().powi(4);
    let direct = DataSpec { construction: Construction::Direct, ..DataSpec::default() };
    let sets = [
        DataSpec {
            u: Profile::constant(2.0).with_mode(0.2, [1, 0, 0]).with_mode(0.1, [0, 1, 1]),
            c22: Profile::constant(1.3).with_mode(0.1, [1, 0, 1]),
            c12: Profile::constant(0.1).with_mode(0.05, [0, 0, 1]),
            ..direct.clone()
        },
        DataSpec {
            u: Profile::constant(3.0).with_mode(0.3, [0, 1, 0]),
            c11: Profile::constant(1.0).with_mode(0.1, [0, 0, 1]),
            c23: Profile::constant(0.0).with_mode(0.1, [1, 0, 0]),
            c13: Profile::constant(-0.05).with_mode(0.05, [0, 1, 0]),
            ..direct.clone()
        },
        DataSpec { random_amplitude: 0.05, ..direct },
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, spec) in sets.iter().enumerate() {
        let d = spec.build(grid, 11).map_err(e)?;
        let rel = triangular_relative_error(&d);
        ok &= rel <= tol;
        parts.push(format!("set {} {rel:.1e}", i + 1));
    }
    parts.push(format!("tolerance {tol:.1e}"));
    Ok((ok, parts.join(", ")))
}

fn satisfying_vs_violating() -> Check {
    let families = vec![Family::Ham, Family::Mom];
    let sat = x1_config(32, 2, families.clone());
    let mut vio = sat.clone();
    vio.data.construction = Construction::Direct;
    vio.data.c22_balanced = false;
    let report = |cfg: &RunConfig| {
        let data = cfg.build_data().map_err(e)?;
        let tower = build_tower(&data, &cfg.times().map_err(e)?, 2, &cfg.tower_options()).map_err(e)?;
        residual_report(&tower, &cfg.report).map_err(e)
    };
    let (a, b) = (report(&sat)?, report(&vio)?);
    let need = a.eps - 0.05;
    let mut ok = true;
    let mut parts = Vec::new();
    for n in 1..=2 {
        for (family, comp) in [("ham", "all"), ("mom", "1")] {
            let fa = a.get(family, n, comp).ok_or("missing series")?;
            let fb = b.get(family, n, comp).ok_or("missing series")?;
            // a residual at the noise floor counts as fully improved
            let gain = if fa.below_floor { f64::INFINITY } else { fa.fitted - fb.fitted };
            ok &= gain >= need;
            parts.push(format!("n={n} {family}{} {gain:.3}", if comp == "all" { String::new() } else { format!("_{comp}") }));
        }
    }
    parts.push(format!("need {need:.3}"));
    Ok((ok, parts.join(", ")))
}

fn evolution_health() -> Check {
    let cfg = x1_config(16, 3, vec![Family::R4]);
    let data = cfg.build_data().map_err(e)?;
    let tower = build_tower(&data, &cfg.times().map_err(e)?, 3, &cfg.tower_options()).map_err(e)?;
    let (eta, t_end) = (1e-3, 1e-2);
    let opts = EvolveOptions { extra_times: vec![2.0 * eta], ..EvolveOptions::default() };
    let run = evolve(&tower[3], eta, t_end, &opts).map_err(e)?;
    let sym = run
        .trace
        .rows
        .iter()
        .zip(&run.snapshots)
        .map(|(r, s)| (r.sym_k / s.k.max_abs()).max(r.antisym_gamma / s.gamma.max_abs().max(f64::MIN_POSITIVE)))
        .fold(0.0, f64::max);
    let at = |t: f64| run.trace.rows.iter().find(|r| (r.t - t).abs() <= 1e-12 * t).map(|r| r.monitors.torsion);
    let early = at(2.0 * eta).ok_or("no output row at 2 eta")?;
    let late = at(t_end).ok_or("no output row at t_end")?;
    let cauchy = eta_cauchy_check(&tower[3], eta, eta / 2.0, t_end, &EvolveOptions::default()).map_err(e)?;
    let ok = sym <= 1e-8 && early < late && cauchy.pass;
    Ok((
        ok,
        format!(
            "symmetry {sym:.1e}, torsion {early:.2e} at 2 eta vs {late:.2e} at t_end, cauchy {:.2e} < 2 x {:.2e}",
            cauchy.difference, cauchy.remainder
        ),
    ))
}

fn sine_error(n: usize) -> Result<f64, String> {
    let grid = SpatialGrid::new(1.3, n, GridMode::Periodic, FdOrder::Four).map_err(e)?;
    let w = grid.k0();
    let f = grid.sample(|x| (w * x[0]).sin() + 0.5 * (2.0 * w * x[2]).cos());
    let d = fd_derivative(&grid, &f, 0, FdOrder::Four).map_err(e)?;
    Ok((0..grid.len()).map(|idx| (d[idx] - w * (w * grid.coords(idx)[0]).cos()).abs()).fold(0.0, f64::max))
}

fn kasner_state(grid: &SpatialGrid, t: f64) -> StateField {
    const P: [f64; 3] = [-2.0 / 7.0, 3.0 / 7.0, 6.0 / 7.0];
    let len = grid.len();
    let mut e = TensorField::zeros(2, len, Symmetry::None);
    let mut k = TensorField::zeros(2, len, Symmetry::Symmetric2);
    for i in 0..3 {
        e.comps[i * 4] = vec![t.powf(-P[i]); len];
        k.comps[i * 4] = vec![-P[i] / t; len];
    }
    StateField { t, eta: t, e, k, gamma: TensorField::zeros(3, len, Symmetry::AntisymmetricLast2) }
}

fn kasner_drift(steps: usize) -> Result<f64, String> {
    let grid = SpatialGrid::periodic(1.0, 8);
    let (t0, t1) = (0.1, 0.2);
    let dt = (t1 - t0) / steps as f64;
    let mut s = kasner_state(&grid, t0);
    for _ in 0..steps {
        s = step_rk4(&grid, &s, dt, 100.0).map_err(e)?.0;
    }
    let exact = kasner_state(&grid, t1);
    Ok(max_diff(&s.e, &exact.e).max(max_diff(&s.k, &exact.k) * t1))
}

fn convergence_orders() -> Check {
    let fd = (sine_error(16)? / sine_error(32)?).log2();
    let d = [kasner_drift(10)?, kasner_drift(20)?, kasner_drift(40)?];
    let rk = d.windows(2).map(|w| (w[0] / w[1]).log2()).fold(f64::INFINITY, f64::min);
    Ok((fd >= 3.8 && rk >= 3.6, format!("fd {fd:.2}, rk4 {rk:.2}")))
}

fn run_all(bin: &str, demo: &Path, out: &Path) -> Result<Vec<u8>, String> {
    let o = out.to_str().unwrap();
    let c = demo.to_str().unwrap();
    let (data, tower, trace) = (out.join("data.txt"), out.join("tower.txt"), out.join("trace.csv"));
    let cmds: Vec<Vec<&str>> = vec![
        vec!["gen-data", "--config", c, "--out", o],
        vec!["tower", "--config", c, "--out", o, "--data", data.to_str().unwrap()],
        vec!["evolve", "--config", c, "--out", o, "--tower", tower.to_str().unwrap()],
        vec!["report", "--out", o, tower.to_str().unwrap(), trace.to_str().unwrap()],
        vec!["selftest"],
    ];
    let mut log = Vec::new();
    for args in cmds {
        let r = Command::new(bin).args(&args).output().map_err(e)?;
        log.extend_from_slice(format!("{} exit {:?}\n", args[0], r.status.code()).as_bytes());
        log.extend_from_slice(&r.stdout);
        log.extend_from_slice(&r.stderr);
    }
    Ok(log)
}

fn determinism() -> Check {
    let bin = env!("CARGO_BIN_EXE_kasnerlab");
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("demo/demo.toml");
    let (a, b) = (tempfile::tempdir().map_err(e)?, tempfile::tempdir().map_err(e)?);
    let (la, lb) = (run_all(bin, &demo, a.path())?, run_all(bin, &demo, b.path())?);
    if la != lb {
        return Ok((false, "terminal output differs".into()));
    }
    let mut names: Vec<_> = std::fs::read_dir(a.path()).map_err(e)?.map(|d| d.unwrap().file_name()).collect();
    names.sort();
    for n in &names {
        let x = std::fs::read(a.path().join(n)).map_err(e)?;
        let y = std::fs::read(b.path().join(n)).map_err(e)?;
        if x != y {
            return Ok((false, format!("{} differs", n.to_string_lossy())));
        }
    }
    Ok((names.len() >= 10, format!("{} files and 5 command outputs identical", names.len())))
}

fn main() {
    let fit = OnceCell::new();
    let r4 = || slopes("r4", 0..=3, -2.0, fit.get_or_init(ricci_report));
    let dk = || slopes("dk", 1..=3, -1.0, fit.get_or_init(ricci_report));
    let checks: [(&str, &dyn Fn() -> Check); 8] = [
        ("1 Kasner fixed point", &kasner_fixed_point),
        ("2 Ricci decay slopes", &r4),
        ("3 iterate difference slopes", &dk),
        ("4 frame and metric momentum constraints", &constraint_equivalence),
        ("5 satisfying vs violating data", &satisfying_vs_violating),
        ("6 evolution health", &evolution_health),
        ("7 convergence orders", &convergence_orders),
        ("8 determinism", &determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let (ok, detail) = check().unwrap_or_else(|err| (false, format!("error: {err}")));
        if !ok {
            failed += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("{} of 8 criteria pass", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
