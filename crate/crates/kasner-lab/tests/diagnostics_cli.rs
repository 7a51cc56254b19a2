use kasner_lab::asym_data::{DataSpec, Profile};
use kasner_lab::diagnostics::*;
use kasner_lab::evolution::{evolve, EvolveOptions};
use kasner_lab::grid::{LogTimeGrid, Symmetry, TensorField};
use kasner_lab::iteration::{build_tower, TowerOptions};
use kasner_lab::Error;

fn x1_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.grid.n_pts = 8;
    cfg.time.n_steps = 32;
    cfg.tower.n_max = 2;
    cfg.data = DataSpec { u: Profile::constant(2.0).with_mode(0.1, [1, 0, 0]), c22_balanced: true, ..DataSpec::default() };
    cfg
}

#[test]
fn defaults_validate_and_round_trip() {
    let cfg = RunConfig::from_toml("", &[]).unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.t_min(), 1e-6);
    let again = RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
    assert_eq!(again, cfg);
    let x1 = x1_config();
    assert_eq!(RunConfig::from_toml(&x1.to_toml(), &[]).unwrap(), x1);
}

#[test]
fn hash_is_stable_and_tracks_every_field() {
    let a = RunConfig::default();
    assert_eq!(a.hash(), RunConfig::default().hash());
    assert_eq!(a.hash().len(), 64);
    let b = RunConfig::from_toml("", &["evolve.cadence=11".into()]).unwrap();
    assert_ne!(a.hash(), b.hash());
    // evolve settings do not touch the tower
    assert_eq!(a.tower_key(), b.tower_key());
    let c = RunConfig::from_toml("", &["seed=3".into()]).unwrap();
    assert_ne!(a.tower_key(), c.tower_key());
}

#[test]
fn overrides_reach_nested_keys() {
    let cfg = RunConfig::from_toml(
        "[grid]\nn_pts = 12\n",
        &[
            "grid.n_pts=20".into(),
            "grid.mode=localized".into(),
            "data.u.base=2.5".into(),
            "report.window=[1e-3, 1.0]".into(),
            "evolve.N0=6".into(),
        ],
    )
    .unwrap();
    assert_eq!(cfg.grid.n_pts, 20);
    assert_eq!(cfg.grid.mode, kasner_lab::grid::GridMode::Localized);
    assert_eq!(cfg.data.u.base, 2.5);
    assert_eq!(cfg.report.window, [1e-3, 1.0]);
    assert_eq!(cfg.evolve.n0, 6.0);
}

fn config_message(text: &str, overrides: &[&str]) -> String {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    match RunConfig::from_toml(text, &o) {
        Err(Error::Config(m)) => m,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn invalid_configs_name_the_offending_key() {
    assert!(config_message("[grid]\nsize = 3\n", &[]).contains("size"));
    assert!(config_message("", &["grid.n_pts=4"]).contains("grid.n_pts"));
    assert!(config_message("", &["grid.fd_order=3"]).contains("grid.fd_order"));
    assert!(config_message("", &["time.t_min=2.0"]).contains("time.t_min"));
    assert!(config_message("", &["tower.n_max=5"]).contains("tower.n_max"));
    assert!(config_message("", &["evolve.t_end=2.0"]).contains("evolve.eta"));
    assert!(config_message("", &["report.window=[0.01, 0.1]"]).contains("1.5 decades"));
    assert!(config_message("", &["report.families=[]"]).contains("report.families"));
    assert!(config_message("", &["evolve.cauchy_factor=1.5"]).contains("cauchy_factor"));
    assert!(config_message("", &["nonsense"]).contains("key.path=value"));
    assert!(!config_message("[grid\n", &[]).is_empty());
}

#[test]
fn container_round_trips_floats_exactly() {
    let vals = vec![0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0, -0.0, 123456789.123456789, f64::MIN_POSITIVE];
    let mut c = Container::new("test", "abc");
    let mut s = Section::new("numbers");
    s.put_list("v", &vals).put_f64("nan", f64::NAN).put("word", "hello world");
    c.push(s);
    let field = TensorField::new(1, vec![vals.clone(), vals.clone(), vals.clone()], Symmetry::None).unwrap();
    c.push_field("w", &field);
    let back = Container::parse(&c.to_text()).unwrap();
    assert_eq!(back.kind, "test");
    assert_eq!(back.config_hash, "abc");
    let s = back.section("numbers").unwrap();
    let got = s.get_list("v").unwrap();
    for (a, b) in got.iter().zip(&vals) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert!(s.get_f64("nan").unwrap().is_nan());
    assert_eq!(s.get("word").unwrap(), "hello world");
    assert_eq!(back.field("w").unwrap(), field);
    assert!(matches!(back.section("missing"), Err(Error::Format(_))));
    assert!(Container::parse("something else").is_err());
}

#[test]
fn data_file_reproduces_the_data_set() {
    let cfg = x1_config();
    let data = cfg.build_data().unwrap();
    let c = data_to_container(&data, &cfg.hash());
    let back = data_from_container(&Container::parse(&c.to_text()).unwrap()).unwrap();
    assert_eq!(back.grid, data.grid);
    assert_eq!(back.c, data.c);
    assert_eq!(back.p.p, data.p.p);
    assert_eq!(back.seam, data.seam);
    let d = |a: &TensorField, b: &TensorField| {
        a.comps.iter().zip(&b.comps).flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs())).fold(0.0, f64::max)
    };
    assert!(d(&back.f, &data.f) <= 1e-15);
    let (r0, r1) = (data.residual_summary(), back.residual_summary());
    for i in 0..3 {
        assert!((r0[i] - r1[i]).abs() <= 1e-12 * (1.0 + r0[i]));
    }
}

#[test]
fn predicted_slopes_come_from_eps_and_exponents() {
    let cfg = x1_config();
    let data = cfg.build_data().unwrap();
    let tower = build_tower(&data, &cfg.times().unwrap(), 2, &TowerOptions::default()).unwrap();
    let report = residual_report(&tower, &cfg.report).unwrap();
    let eps = data.p.eps;
    assert_eq!(report.eps, eps);
    for n in 0..=2 {
        let r4 = report.get("r4", n, "all").unwrap();
        assert!((r4.predicted - (-2.0 + n as f64 * eps)).abs() < 1e-15);
        assert_eq!(r4.bound, Bound::Sharp);
        let ham = report.get("ham", n, "all").unwrap();
        assert!((ham.predicted - (-2.0 + eps)).abs() < 1e-15);
        for i in 0..3 {
            let max_p = data.p.p[i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mom = report.get("mom", n, &(i + 1).to_string()).unwrap();
            assert!((mom.predicted - (-1.0 - max_p + eps)).abs() < 1e-15);
            assert_eq!(mom.bound, Bound::Envelope);
        }
    }
    assert!(report.get("dk", 0, "all").is_none());
    let dk = report.get("dk", 2, "all").unwrap();
    assert!((dk.predicted - (-1.0 + 2.0 * eps)).abs() < 1e-15);
    assert!(dk.times.len() >= 6 && dk.times.iter().all(|t| *t >= 1e-4 * 0.999 && *t <= 0.1 * 1.001));

    let table = report.table();
    assert!(table.contains("predicted") && table.contains("fitted"));
    assert_eq!(table.lines().count(), 2 + report.results.len());

    // the tower command stores the same report in tower.txt
    let dir = tempfile::tempdir().unwrap();
    cmd_tower(&cfg, None, dir.path()).unwrap();
    let c = Container::read(&dir.path().join("tower.txt")).unwrap();
    let back = ResidualReport::from_container(&c).unwrap();
    assert_eq!(back.results.len(), report.results.len());
    for (a, b) in back.results.iter().zip(&report.results) {
        assert_eq!((&a.family, a.level, &a.component), (&b.family, b.level, &b.component));
        assert_eq!(a.norms, b.norms);
        assert_eq!(a.pass, b.pass);
        assert!(a.fitted == b.fitted || (a.fitted.is_nan() && b.fitted.is_nan()));
    }
}

#[test]
fn homogeneous_report_is_below_the_noise_floor() {
    let mut cfg = RunConfig::default();
    cfg.grid.n_pts = 8;
    cfg.time.n_steps = 32;
    cfg.tower.n_max = 2;
    let data = cfg.build_data().unwrap();
    let tower = build_tower(&data, &cfg.times().unwrap(), 2, &TowerOptions::default()).unwrap();
    let report = residual_report(&tower, &cfg.report).unwrap();
    assert!(report.pass());
    assert!(report.results.iter().all(|r| r.below_floor && r.fitted.is_nan()));
    assert!(report.table().contains("zero"));
}

#[test]
fn trace_csv_parses_back() {
    let cfg = RunConfig::default();
    let data = cfg.build_data().unwrap();
    let times = LogTimeGrid::new(1e-3, 1.0, 16).unwrap();
    let tower = build_tower(&data, &times, 0, &TowerOptions::default()).unwrap();
    let run = evolve(&tower[0], 1e-2, 3e-2, &EvolveOptions { cadence: 4, ..EvolveOptions::default() }).unwrap();
    let text = format!("# kasnerlab 0.1.0 config_hash=xyz\n{}", run.trace.to_csv());
    let tf = TraceFile::parse(&text).unwrap();
    assert_eq!(tf.config_hash, "xyz");
    assert_eq!(tf.rows.len(), run.trace.rows.len());
    let t = tf.column("t").unwrap();
    for (a, r) in t.iter().zip(&run.trace.rows) {
        assert_eq!(a.to_bits(), r.t.to_bits());
    }
    assert!(TraceFile::parse("t,x\n1,2\n").is_err());
}

#[test]
fn window_selects_nodes_by_fraction_of_t_max() {
    let times = LogTimeGrid::new(1e-6, 10.0, 70).unwrap();
    let nodes = window_nodes(&times, [1e-4, 1e-1]);
    assert_eq!(nodes.len(), 31);
    assert!((times.nodes[nodes[0]] - 1e-3).abs() < 1e-15);
    assert!((times.nodes[*nodes.last().unwrap()] - 1.0).abs() < 1e-12);
}

#[test]
fn gen_data_flags_violating_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let ok = cmd_gen_data(&cfg, dir.path()).unwrap();
    assert!(ok.pass);
    assert!(ok.text.contains("momentum residuals = 0e0 0e0 0e0"));
    let bad = RunConfig::from_toml(
        "[data]\nconstruction = \"direct\"\n[data.c23]\nbase = 0.0\nmodes = [{ amp = 0.2, k = [0, 0, 1] }]\n",
        &[],
    )
    .unwrap();
    let out = cmd_gen_data(&bad, dir.path()).unwrap();
    assert!(!out.pass);
    assert_eq!(out.exit_code(), 2);
}

#[test]
fn report_needs_inputs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(cmd_report(&[], dir.path()), Err(Error::Config(_))));
    let junk = dir.path().join("junk.csv");
    std::fs::write(&junk, "a,b\n").unwrap();
    assert!(matches!(cmd_report(&[junk], dir.path()), Err(Error::Format(_))));
}
