use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn scprop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scprop")).args(args).output().expect("run scprop")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// CSV text without the wall_time column (always last).
fn without_wall_time(text: &str) -> String {
    text.lines()
        .map(|l| if l.starts_with('#') { l } else { l.rsplit_once(',').map_or(l, |(a, _)| a) })
        .collect::<Vec<_>>()
        .join("\n")
}

const SWEEP: &str = "id = \"quartic\"\nmodel = \"anharmonic_quartic\"\ncenter_q = [0.5]\nhbar_list = [1e-2, 5e-3, 2.5e-3]\nt = 0.5\nmethods = [\"order0\", \"orderN\"]\n";

#[test]
fn validate_passes_and_reports_residuals() {
    let o = scprop(&["validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("metaplectic,trace_identity,")).expect("trace identity row");
    let measured: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
    assert!(measured < 1e-8);
    assert!(!text.contains("FAIL"));
}

#[test]
fn siegel_sign_flip_fails_the_group_law() {
    let o = scprop(&["validate", "--inject-siegel-sign-flip"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("metaplectic,siegel_group_law,") && l.contains(",FAIL,")));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "a.toml", &format!("{SWEEP}colour = 1\n"));
    assert_eq!(scprop(&["sweep-h", "--config", &unknown]).status.code(), Some(2));
    let increasing = write(dir.path(), "b.toml", "model = \"harmonic\"\nhbar_list = [1e-3, 1e-2, 1e-1]\nt = 1.0\n");
    assert_eq!(scprop(&["sweep-h", "--config", &increasing]).status.code(), Some(2));
    let big = write(dir.path(), "c.toml", "model = \"harmonic\"\nhbar_list = [2.0]\nt = 1.0\n");
    assert_eq!(scprop(&["propagate", "--config", &big]).status.code(), Some(2));
    assert_eq!(scprop(&["lyapunov"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // the cubic saddle packet runs off to infinity well before t = 10
    let cfg = write(dir.path(), "e.toml", "model = \"saddle_cubic\"\nhbar_list = [1e-2]\nt = 10.0\n");
    assert_eq!(scprop(&["propagate", "--config", &cfg]).status.code(), Some(3));
}

#[test]
fn sweep_is_deterministic_and_hashed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SWEEP);
    let out1 = dir.path().join("one.csv");
    let out2 = dir.path().join("two.csv");
    assert_eq!(scprop(&["sweep-h", "--config", &cfg, "--out", out1.to_str().unwrap(), "--workers", "1"]).status.code(), Some(0));
    assert_eq!(scprop(&["sweep-h", "--config", &cfg, "--out", out2.to_str().unwrap(), "--workers", "3"]).status.code(), Some(0));
    let (a, b) = (std::fs::read_to_string(out1).unwrap(), std::fs::read_to_string(out2).unwrap());
    assert_eq!(without_wall_time(&a), without_wall_time(&b));
    let hash = hex::encode(Sha256::digest(SWEEP.as_bytes()));
    assert!(a.contains(&format!("# config_sha256={hash}")));
    let rows: Vec<&str> = a.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.contains(&hash)));
    // rows follow config order: hbar decreasing, order0 before orderN
    assert!(rows[0].contains(",order0,0,1.000000000000e-2,"));
    assert!(rows[5].contains(",orderN,1,2.500000000000e-3,"));
    assert_eq!(a.lines().filter(|l| l.starts_with("# slope")).count(), 2);
}

#[test]
fn quadratic_sweep_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "h.toml", "model = \"harmonic\"\ncenter_q = [0.5]\nhbar_list = [1e-2, 1e-3, 1e-4]\nt = 1.0\n");
    let o = scprop(&["sweep-h", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("degenerate"));
}

#[test]
fn quadratic_saddle_never_breaks_down() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "q.toml", "model = \"saddle_cubic\"\nparams = { beta = 0.0 }\nhbar_list = [1e-2, 1e-3]\nwindow = 0.6\nobservations = 20\n");
    let o = scprop(&["breakdown", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("never reached"));
}

#[test]
fn propagate_writes_readable_states() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "p.toml", "model = \"anharmonic_quartic\"\ncenter_q = [0.5]\nhbar_list = [1e-2]\nt = 0.5\norder = 2\nmethods = [\"orderN\", \"oracle\"]\n");
    let out = dir.path().join("p.csv");
    assert_eq!(scprop(&["propagate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let e = semiclassical::propagator::read_expansion(&std::fs::read_to_string(dir.path().join("p.csv.orderN.h0.t0.expansion")).unwrap()).unwrap();
    assert_eq!(e.order, 2);
    let u = semiclassical::states::io::read_grid(&std::fs::read_to_string(dir.path().join("p.csv.oracle.h0.t0.grid")).unwrap()).unwrap();
    assert!((u.norm() - 1.0).abs() < 1e-8);
}

#[test]
fn hybrid_demo_dumps_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "h.toml",
        "model = \"nh2d\"\nparams = { epsilon = 0.0 }\nhbar_list = [1e-2]\nswitch_fraction = 0.16666666666666666\nfinal_fraction = 0.5\nsteps = 4\n",
    );
    let out = dir.path().join("h.csv");
    let o = scprop(&["hybrid-demo", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let overlap: f64 = text.lines().find_map(|l| l.strip_prefix("# final hybrid overlap_mag=")).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(overlap >= 0.99);
    for k in 0..=4 {
        let s = semiclassical::propagator::read_hybrid(&std::fs::read_to_string(dir.path().join(format!("h.csv.step{k:03}.hybrid"))).unwrap()).unwrap();
        assert_eq!(s.graph.step, k);
    }
}

#[test]
fn lyapunov_reports_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "l.toml", "model = \"dilation\"\nhbar_list = [1e-2, 1e-3]\n");
    let o = scprop(&["lyapunov", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let row = text.lines().filter(|l| !l.starts_with('#')).nth(1).unwrap();
    let lambda: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((lambda - 1.0).abs() < 0.01);
}
