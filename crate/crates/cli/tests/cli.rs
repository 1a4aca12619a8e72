use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use viscoadjoint::config::{ModelConfig, RunConfig};
use viscoadjoint::rheology::ParameterPoint;
use viscoadjoint::verify::{smooth_direction, Scenario};
use viscoadjoint::wave2d::io;
use viscoadjoint::wave2d::Field5;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_viscoadjoint"));
    c.env_remove("VISCOADJOINT_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn small() -> RunConfig {
    RunConfig::square(16, 1.0, 0.1, 6.0)
}

fn write_config(dir: &TempDir, name: &str, c: &RunConfig) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, serde_json::to_string(c).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Observed data from the same configuration, so the residual is zero.
fn simulate_into(dir: &TempDir, cfg: &Path, sub: &str) -> PathBuf {
    let out = dir.path().join(sub);
    let o = run(&["simulate", s(cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join("seismogram.csv")
}

#[test]
fn zero_amplitude_source_records_zeros() {
    let dir = TempDir::new().unwrap();
    let mut c = small();
    c.source.amplitude = 0.0;
    let cfg = write_config(&dir, "c.json", &c);
    let csv = simulate_into(&dir, &cfg, "run");
    let (_, rows) = io::read_seismogram_csv(csv).unwrap();
    assert_eq!(rows.len(), c.nt() + 1);
    assert!(rows.iter().flatten().all(|x| *x == 0.0));
}

#[test]
fn simulate_output_matches_the_library_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let c = small();
    let cfg = write_config(&dir, "c.json", &c);
    let csv = simulate_into(&dir, &cfg, "run");
    let sc = Scenario::new(c).unwrap();
    let rec = sc.forward().unwrap();
    let lib = dir.path().join("lib.csv");
    io::write_seismogram_csv(&lib, sc.dt(), &rec.seismogram(&sc.nodes)).unwrap();
    assert_eq!(std::fs::read(csv).unwrap(), std::fs::read(lib).unwrap());
}

#[test]
fn wavefield_snapshots_are_written_with_stride() {
    let dir = TempDir::new().unwrap();
    let c = small();
    let cfg = write_config(&dir, "c.json", &c);
    let out = dir.path().join("run");
    let o = run(&["simulate", s(&cfg), "--out", s(&out), "--stride", "10"]);
    assert_eq!(code(&o), 0);
    let v = io::read_vaf(out.join("wavefield.vaf")).unwrap();
    assert_eq!((v.header.nx, v.header.nz, v.header.ncomp), (17, 17, 2));
    assert_eq!(v.header.nt as usize, c.nt() / 10 + 1);
}

#[test]
fn missing_field_file_exits_2_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let mut c = small();
    c.model = ModelConfig::File {
        path: dir.path().join("nowhere.vaf"),
    };
    let cfg = write_config(&dir, "c.json", &c);
    let o = run(&["simulate", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.vaf"));
}

#[test]
fn inadmissible_model_exits_3() {
    let dir = TempDir::new().unwrap();
    let mut c = small();
    c.model = ModelConfig::Homogeneous {
        point: ParameterPoint::new(1.0, 2.0, 0.35, 3.1, 0.35),
    };
    let cfg = write_config(&dir, "c.json", &c);
    assert_eq!(code(&run(&["simulate", s(&cfg), "--out", s(dir.path())])), 3);
}

#[test]
fn time_step_above_the_stability_limit_exits_4() {
    let dir = TempDir::new().unwrap();
    let mut c = small();
    c.dt = 0.3;
    c.source.f0 = 0.03;
    let cfg = write_config(&dir, "c.json", &c);
    assert_eq!(code(&run(&["simulate", s(&cfg), "--out", s(dir.path())])), 4);
}

#[test]
fn zero_residual_gives_zero_gradient_and_passing_selfcheck() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &small());
    let data = simulate_into(&dir, &cfg, "obs");
    let g = dir.path().join("g.vaf");
    let o = run(&["gradient", s(&cfg), "--data", s(&data), "--out", s(&g), "--selfcheck"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS gradient-selfcheck"));
    assert_eq!(io::read_parameters(&g).unwrap().max_abs(), 0.0);
}

#[test]
fn gradient_selfcheck_passes_for_a_different_model() {
    let dir = TempDir::new().unwrap();
    let c = small();
    let mut truth = c.clone();
    truth.model = ModelConfig::Smooth {
        seed: 99,
        amplitude: 0.6,
    };
    let cfg = write_config(&dir, "c.json", &c);
    let data = simulate_into(&dir, &write_config(&dir, "t.json", &truth), "obs");
    let g = dir.path().join("g.vaf");
    for mode in ["continuous", "discrete"] {
        let o = run(&["gradient", s(&cfg), "--data", s(&data), "--out", s(&g), "--mode", mode, "--selfcheck"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
        assert!(io::read_parameters(&g).unwrap().max_abs() > 0.0);
    }
}

#[test]
fn data_with_wrong_geometry_exits_2() {
    let dir = TempDir::new().unwrap();
    let c = small();
    let cfg = write_config(&dir, "c.json", &c);
    let data = dir.path().join("d.csv");
    io::write_seismogram_csv(&data, c.dt, &vec![vec![0.0; 4]; c.nt() + 1]).unwrap();
    assert_eq!(code(&run(&["gradient", s(&cfg), "--data", s(&data)])), 2);
}

fn write_direction(dir: &TempDir, name: &str, f: &Field5) -> PathBuf {
    let p = dir.path().join(name);
    io::write_parameters(&p, f, 1.0).unwrap();
    p
}

#[test]
fn corrupt_direction_header_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &small());
    let p = write_direction(&dir, "d.vaf", &Field5::zeros(16, 16));
    let mut bytes = std::fs::read(&p).unwrap();
    bytes[1] = 0;
    std::fs::write(&p, bytes).unwrap();
    assert_eq!(code(&run(&["hessian", s(&cfg), "--direction", s(&p)])), 2);
}

#[test]
fn zero_direction_gives_zero_second_derivative() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &small());
    let p = write_direction(&dir, "d.vaf", &Field5::zeros(16, 16));
    let out = dir.path().join("h.csv");
    assert_eq!(code(&run(&["hessian", s(&cfg), "--direction", s(&p), "--out", s(&out)])), 0);
    let (_, rows) = io::read_seismogram_csv(out).unwrap();
    assert!(rows.iter().flatten().all(|x| *x == 0.0));
}

#[test]
fn swapping_directions_changes_nothing() {
    let dir = TempDir::new().unwrap();
    let c = small();
    let cfg = write_config(&dir, "c.json", &c);
    let ops = c.operators().unwrap();
    let a = write_direction(&dir, "a.vaf", &smooth_direction(&ops, 1));
    let b = write_direction(&dir, "b.vaf", &smooth_direction(&ops, 2));
    let (ab, ba) = (dir.path().join("ab.csv"), dir.path().join("ba.csv"));
    for (x, y, out) in [(&a, &b, &ab), (&b, &a, &ba)] {
        let o = run(&["hessian", s(&cfg), "--direction", s(x), "--direction2", s(y), "--out", s(out)]);
        assert_eq!(code(&o), 0);
    }
    let (_, r1) = io::read_seismogram_csv(ab).unwrap();
    let (_, r2) = io::read_seismogram_csv(ba).unwrap();
    let scale = r1.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = r1.iter().flatten().zip(r2.iter().flatten()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(scale > 0.0 && diff <= 1e-11 * scale, "{diff:e} vs {scale:e}");
}

#[test]
fn hessian_adjoint_selfcheck_passes() {
    let dir = TempDir::new().unwrap();
    let c = small();
    let mut truth = c.clone();
    truth.model = ModelConfig::Smooth {
        seed: 99,
        amplitude: 0.6,
    };
    let cfg = write_config(&dir, "c.json", &c);
    let data = simulate_into(&dir, &write_config(&dir, "t.json", &truth), "obs");
    let d = write_direction(&dir, "d.vaf", &smooth_direction(&c.operators().unwrap(), 5));
    let out = dir.path().join("h.vaf");
    let o = run(&[
        "hessian", s(&cfg), "--direction", s(&d), "--data", s(&data), "--adjoint", "--out", s(&out), "--selfcheck",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS hessian-selfcheck"));
    assert_eq!(io::read_vaf(&out).unwrap().header.ncomp, 5);
}

#[test]
fn adjoint_hessian_without_data_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.json", &small());
    let p = write_direction(&dir, "d.vaf", &Field5::zeros(16, 16));
    assert_eq!(code(&run(&["hessian", s(&cfg), "--direction", s(&p), "--adjoint"])), 2);
}

#[test]
fn check_rheology_passes_and_writes_evidence() {
    let dir = TempDir::new().unwrap();
    let o = run(&["check", "rheology", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
    assert!(dir.path().join("rheology-identities.csv").exists());
}

#[test]
fn unknown_suite_exits_2() {
    assert_eq!(code(&run(&["check", "everything"])), 2);
}

#[test]
fn thread_count_from_flag_and_environment() {
    assert_eq!(code(&run(&["--threads", "1", "check", "rheology"])), 0);
    let o = bin().env("VISCOADJOINT_THREADS", "2").args(["check", "rheology"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let o = bin().env("VISCOADJOINT_THREADS", "many").args(["check", "rheology"]).output().unwrap();
    assert_eq!(code(&o), 2);
}
