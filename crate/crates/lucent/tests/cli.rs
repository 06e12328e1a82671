use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lucent::config::builtin_mesh;
use lucent::container::{load_basis, mesh_hash, Container};
use lucent::imageio::load_png;
use lucent::obj::{load_obj, obj_string, write_obj};
use lucent_core::shapes;

fn lucent(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lucent")).args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_GRID: &str = r#"
[basis]
k = 8
error_counts = [1, 4, 8]
sigma_s_prime_count = 8
sigma_a_count = 8
r_count = 128
"#;

/// Small sphere mesh plus a config with a coarse basis grid.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    write_obj(&shapes::icosphere(2, 6.0), &dir.path().join("ball.obj")).unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("mesh = \"ball.obj\"\n{SMALL_GRID}")).unwrap();
    (dir, cfg)
}

#[test]
fn bundled_assets_match_generators() {
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    for name in ["icosphere", "slab", "bust"] {
        let text = std::fs::read_to_string(assets.join(format!("{name}.obj"))).unwrap();
        assert_eq!(text, obj_string(&builtin_mesh(name).unwrap()), "{name}");
    }
}

#[test]
fn export_mesh_writes_loadable_obj() {
    let dir = tempfile::tempdir().unwrap();
    let o = lucent(&["export-mesh", "slab", "--out", "slab.obj"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (a, b) = (load_obj(&dir.path().join("slab.obj")).unwrap(), builtin_mesh("slab").unwrap());
    assert!(a == b);
    assert_eq!(mesh_hash(&a), mesh_hash(&b));
    assert_eq!(code(&lucent(&["export-mesh", "teapot", "--out", "t.obj"], dir.path())), 1);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lucent(&["render"], dir.path())), 1);
    assert_eq!(code(&lucent(&["render", "--out", "a.png", "--light", "laser:1"], dir.path())), 1);
    // negative absorption is rejected before any work
    let o = lucent(&["render", "--container", "x.prts", "--sigma-a", "-1", "--out", "a.png"], dir.path());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(!dir.path().join("a.png").exists());
}

#[test]
fn missing_or_corrupt_container_exits_three() {
    let (dir, cfg) = workspace();
    let cfg = cfg.to_str().unwrap();
    let o = lucent(&["--config", cfg, "render", "--container", "none.prts", "--out", "a.png"], dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    std::fs::write(dir.path().join("junk.prts"), b"PRTS1\0\0\0garbage").unwrap();
    let o = lucent(&["--config", cfg, "render", "--container", "junk.prts", "--out", "a.png"], dir.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn basis_writes_table_and_file() {
    let (dir, cfg) = workspace();
    let o = lucent(&["--config", cfg.to_str().unwrap(), "basis", "--out", "b.prtb"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "K,l2rel,linfabs,linfrel");
    assert_eq!(lines.len(), 4);
    let err = |l: &str| l.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!(err(lines[3]) < err(lines[1]));
    assert_eq!(load_basis(&dir.path().join("b.prtb")).unwrap().count, 8);
}

#[test]
fn precompute_render_validate_round_trip() {
    let (dir, cfg) = workspace();
    let cfg = cfg.to_str().unwrap();
    let d = dir.path();
    let o = lucent(&["--config", cfg, "--threads", "1", "precompute", "--out", "ball.prts", "--lossless"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = Container::load(&d.join("ball.prts")).unwrap();
    assert!(c.is_lossless());
    assert_eq!(c.basis.count, 8);
    assert!(c.meta.contains("ball.obj"));

    let o = lucent(
        &[
            "--config", cfg, "render", "--container", "ball.prts", "--out", "ball.png",
            "--width", "64", "--height", "48", "--light", "point:20,20,20:2000",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let img = load_png(&d.join("ball.png")).unwrap();
    assert_eq!((img.width, img.height), (64, 48));
    let centre = &img.rgb[(24 * 64 + 32) * 3..][..3];
    assert!(centre.iter().any(|&v| v > 30), "{centre:?}");

    let o = lucent(
        &["--config", cfg, "render", "--container", "ball.prts", "--out", "dark.png", "--width", "16", "--height", "16", "--no-lights"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dark = load_png(&d.join("dark.png")).unwrap();
    assert!(dark.rgb.chunks(3).all(|p| p == [0, 0, 0] || p == lucent_core::runtime::BACKGROUND));

    let o = lucent(
        &["--config", cfg, "validate", "--container", "ball.prts", "--lossless", "--wavelet-side", "32", "--json"],
        d,
    );
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(code(&o), 0, "{report}");
    assert!(report["compression"]["relative_rms"].as_f64().unwrap() < 1e-6);

    // another mesh under the same container is refused
    write_obj(&shapes::icosphere(1, 6.0), &d.join("other.obj")).unwrap();
    let o = lucent(&["--config", cfg, "render", "--container", "ball.prts", "--mesh", "other.obj", "--out", "x.png"], d);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn failed_validation_exits_two() {
    let (dir, cfg) = workspace();
    // keeping a single coefficient per row cannot meet the bounds
    let o = lucent(
        &["--config", cfg.to_str().unwrap(), "validate", "--step1", "0.001", "--step2", "0.3", "--wavelet-side", "8"],
        dir.path(),
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn bench_reports_both_paths() {
    let (dir, cfg) = workspace();
    let cfg = cfg.to_str().unwrap();
    let d = dir.path();
    assert_eq!(code(&lucent(&["--config", cfg, "precompute", "--out", "b.prts"], d)), 0);
    let o = lucent(
        &["--config", cfg, "bench", "--container", "b.prts", "--iterations", "4", "--width", "32", "--height", "32", "--json"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["edit"]["stages"]["irradiance"]["median_ms"].as_f64(), Some(0.0));
    assert_eq!(v["edit"]["stages"]["transfer"]["median_ms"].as_f64(), Some(0.0));
    assert!(v["relight"]["total"]["median_ms"].as_f64().unwrap() > 0.0);
}
