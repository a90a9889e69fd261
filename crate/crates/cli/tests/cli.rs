use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const HEADER: &str = "t,energy_physical,energy_augmented,diss_Dv,diss_dzv,bd_grad,bd_grad4,bd_diss_hv,bd_diss_dzw,bd_pressure,mv,mass,mass_residual";

fn cpelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpelab")).args(args).output().expect("spawn cpelab")
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.cfg");
    fs::write(&p, "[grid]\nnx = 16\nny = 16\nnz = 5\n[run]\nt_end = 0.02\noutput_every = 2\n[sweep]\nepsilons = 0.1, 0.03, 0.01\nframes = 2\n").unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_csv_and_diagnose_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let o = cpelab(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(HEADER));
    assert!(csv.lines().count() > 3);

    let again = dir.path().join("again.csv");
    let o = cpelab(&["diagnose", "--snapshots", s(&out.join("snapshots")), "--config", s(&cfg), "--out", s(&again)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("diagnostics.csv")).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        assert_eq!(cpelab(&["run", "-c", s(&cfg), "-o", s(o)]).status.code(), Some(0));
    }
    assert_eq!(fs::read(a.join("diagnostics.csv")).unwrap(), fs::read(b.join("diagnostics.csv")).unwrap());
    let snaps = |d: &Path| {
        let mut v: Vec<_> = fs::read_dir(d.join("snapshots")).unwrap().map(|e| e.unwrap().path()).collect();
        v.sort();
        v.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(snaps(&a), snaps(&b));
}

#[test]
fn sweep_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        let r = cpelab(&["sweep", "-c", s(&cfg), "-o", s(o)]);
        assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["sweep_report.txt", "sweep_maxima.csv", "sweep_distances.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn degiorgi_certifies_cutoff_profile() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.csv");
    // A (K - k)_+^2 with K = 3, a valid family for C = 1, alpha = 1/2, beta = 1
    let amp = (4.0f64 / 27.0).powi(2);
    let mut text = String::from("k,a_k\n");
    for i in 0..30 {
        let k = 0.5 + 0.1 * i as f64;
        text.push_str(&format!("{k},{}\n", amp * (3.0 - k).max(0.0).powi(2)));
    }
    fs::write(&p, text).unwrap();
    let o = cpelab(&["degiorgi", s(&p), "--c", "1", "--alpha", "0.5", "--beta", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    let l: f64 = out
        .lines()
        .find_map(|l| l.split("L = ").nth(1))
        .expect("certificate line")
        .trim()
        .parse()
        .unwrap();
    assert!(l >= 3.0, "{out}");
    assert_eq!(cpelab(&["degiorgi", s(&p)]).status.code(), Some(0));
}

#[test]
fn init_check_prints_e0() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpelab(&["init-check", "-c", s(&small_config(dir.path()))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8(o.stdout).unwrap().contains("E0 = "));
}

#[test]
fn shipped_default_config_is_valid() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.cfg");
    let o = cpelab(&["init-check", "-c", s(&cfg)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cpelab(&[]).status.code(), Some(1));
    assert_eq!(cpelab(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(cpelab(&["--help"]).status.code(), Some(0));

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "[init]\np0 = 20\n").unwrap();
    let o = cpelab(&["init-check", "-c", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("p0 > max(24"));

    let typo = dir.path().join("typo.cfg");
    fs::write(&typo, "[run]\nt_ned = 1\n").unwrap();
    assert_eq!(cpelab(&["init-check", "-c", s(&typo)]).status.code(), Some(1));

    assert_eq!(cpelab(&["init-check", "-c", s(&dir.path().join("missing.cfg"))]).status.code(), Some(3));

    let trunc = dir.path().join("snaps");
    fs::create_dir(&trunc).unwrap();
    fs::write(trunc.join("snap_000000.bin"), b"CPE1\x01\0\0\0").unwrap();
    let o = cpelab(&["diagnose", "-s", s(&trunc), "-o", s(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte offset"));

    // every level set stays fully occupied, so no decay law fits
    let flat = dir.path().join("flat.csv");
    fs::write(&flat, "0.5,1\n1,0.9\n1.5,0.9\n2,0.9\n").unwrap();
    let o = cpelab(&["degiorgi", s(&flat), "--c", "0.01", "--alpha", "1", "--beta", "1"]);
    assert_eq!(o.status.code(), Some(2));

    // three Picard sweeps never reach tol on any window
    let hot = dir.path().join("hot.cfg");
    fs::write(&hot, "[grid]\nnx = 16\nny = 16\nnz = 5\n[galerkin]\nt_n = 0.5\nt_end = 0.5\nmax_iter = 3\n").unwrap();
    let o = cpelab(&["galerkin-demo", "-c", s(&hot), "-o", s(&dir.path().join("g"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
