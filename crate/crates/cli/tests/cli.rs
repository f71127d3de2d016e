use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn canonvo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canonvo")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = canonvo(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    canonvo(args).status.code().expect("exit code")
}

/// A small rendered dataset shared by the tests of this binary.
fn dataset() -> &'static Path {
    static DATA: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    &DATA
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let root = dir.path().join("desk");
            ok(&["render-synthetic", "--out", s(&root), "--frames", "24", "--conditions", "static,bright"]);
            (dir, root)
        })
        .1
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Column `name` of the single data row of a summary CSV.
fn summary_field(dir: &Path, name: &str) -> String {
    let text = fs::read_to_string(dir.join("summary.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 9);
    assert_eq!(row.len(), 9);
    row[header.iter().position(|h| *h == name).unwrap()].to_string()
}

#[test]
fn odometry_relocalization_and_evaluation_workflow() {
    let data = dataset();
    let tmp = tempfile::tempdir().unwrap();
    let vo = tmp.path().join("vo");
    let stdout = ok(&["vo", "--dataset", s(data), "--condition", "static", "--out", s(&vo)]);
    assert!(stdout.contains("tracked 24/24"), "{stdout}");
    for f in ["summary.csv", "frames.csv", "trajectory.txt", "map/manifest.txt"] {
        assert!(vo.join(f).is_file(), "missing {f}");
    }

    let map = vo.join("map");
    let raw = tmp.path().join("raw");
    ok(&["reloc", "--dataset", s(data), "--condition", "bright", "--map", s(&map), "--out", s(&raw)]);
    let fixed = tmp.path().join("fixed");
    ok(&[
        "reloc", "--dataset", s(data), "--condition", "bright", "--map", s(&map), "--transform", "affine:meta", "--out",
        s(&fixed),
    ]);
    let pct = |d: &Path| summary_field(d, "frames_tracked_pct").parse::<f64>().unwrap();
    assert!(pct(&raw) < 50.0, "identity tracked {}%", pct(&raw));
    assert!(pct(&fixed) > 90.0, "corrected tracked {}%", pct(&fixed));
    assert_eq!(summary_field(&fixed, "transform"), "affine:per-frame(24)");

    // Re-evaluating the exported frames reproduces the run's numbers.
    let again = tmp.path().join("again");
    ok(&[
        "eval", "--dataset", s(data), "--condition", "static", "--estimate", s(&vo.join("frames.csv")), "--out",
        s(&again),
    ]);
    assert_eq!(summary_field(&vo, "frames_tracked"), summary_field(&again, "frames_tracked"));
    // frames.csv keeps 12 significant digits, so the re-evaluation agrees to
    // about that precision.
    for col in ["avg_trans_err_pct_dist", "avg_rot_err_deg_per_m"] {
        let (x, y): (f64, f64) = (summary_field(&vo, col).parse().unwrap(), summary_field(&again, col).parse().unwrap());
        assert!((x - y).abs() <= 1e-8 * x.abs().max(1e-3), "{col}: {x} vs {y}");
    }
    // A plain trajectory file counts every pose as tracked.
    let traj = tmp.path().join("traj");
    ok(&[
        "eval", "--dataset", s(data), "--condition", "static", "--estimate", s(&vo.join("trajectory.txt")), "--out",
        s(&traj),
    ]);
    assert_eq!(summary_field(&traj, "frames_tracked"), "24");

    let plot = tmp.path().join("plots/static.csv");
    ok(&[
        "export-plot-data", "--dataset", s(data), "--condition", "static", "--estimate", s(&vo.join("frames.csv")),
        "--out", s(&plot),
    ]);
    let text = fs::read_to_string(&plot).unwrap();
    assert!(text.starts_with("timestamp,distance_m,trans_err_m,rot_err_deg,tracked"));
    assert_eq!(text.lines().count(), 25);
}

#[test]
fn repeated_runs_write_identical_reports() {
    let data = dataset();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(&["vo", "--dataset", s(data), "--condition", "static", "--out", s(out)]);
    }
    for f in ["summary.csv", "frames.csv", "trajectory.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn make_affine_writes_the_three_presets() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("copy");
    fs::create_dir_all(root.join("static")).unwrap();
    let src = dataset();
    for entry in fs::read_dir(src).unwrap().flatten() {
        let p = entry.path();
        if p.is_file() {
            fs::copy(&p, root.join(entry.file_name())).unwrap();
        }
    }
    for sub in ["rgb", "depth"] {
        fs::create_dir_all(root.join("static").join(sub)).unwrap();
        for entry in fs::read_dir(src.join("static").join(sub)).unwrap().flatten() {
            fs::copy(entry.path(), root.join("static").join(sub).join(entry.file_name())).unwrap();
        }
    }
    fs::copy(src.join("static/associations.txt"), root.join("static/associations.txt")).unwrap();

    ok(&["make-affine", "--dataset", s(&root)]);
    for name in ["clone", "light", "dark"] {
        assert!(root.join(name).join("affine.txt").is_file(), "{name}");
        assert_eq!(
            fs::read_dir(root.join(name).join("rgb")).unwrap().count(),
            fs::read_dir(root.join("static/rgb")).unwrap().count()
        );
    }
    ok(&["make-affine", "--dataset", s(&root), "--affine", "dim=0.6,-0.05"]);
    let affine = fs::read_to_string(root.join("dim/affine.txt")).unwrap();
    assert!(affine.contains("0.6") && affine.contains("-0.05"), "{affine}");
    assert_eq!(code(&["make-affine", "--dataset", s(&root), "--affine", "static=1,0"]), 1);
}

#[test]
fn exit_codes_separate_bad_inputs_from_internal_failures() {
    let data = dataset();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let missing = tmp.path().join("nowhere");
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["vo", "--bogus"]), 1);
    assert_eq!(code(&["vo", "--dataset", s(&missing), "--out", s(&out)]), 1);
    assert_eq!(code(&["vo", "--dataset", s(data), "--condition", "night", "--out", s(&out)]), 1);
    assert_eq!(code(&["vo", "--dataset", s(data), "--transform", "sepia", "--out", s(&out)]), 1);
    assert_eq!(code(&["vo", "--dataset", s(data), "--transform", "affine:meta", "--out", s(&out)]), 1);
    assert_eq!(code(&["reloc", "--dataset", s(data), "--map", s(&missing), "--out", s(&out)]), 1);

    let bad_cfg = tmp.path().join("bad.toml");
    fs::write(&bad_cfg, "[tracker]\npyramid_levels = 0\n").unwrap();
    assert_eq!(code(&["vo", "--dataset", s(data), "--config", s(&bad_cfg), "--out", s(&out)]), 1);

    // Output under a regular file cannot be created.
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(code(&["vo", "--dataset", s(data), "--out", s(&blocker.join("out"))]), 2);
}
