use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tacsim::optical::PolyTable;
use tacsim::tactile_render::{save_map, Grid, SensorConfig};

fn tacsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tacsim")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn calibrated(dir: &Path) -> PathBuf {
    let o = tacsim(dir, &["calibrate", "--out", "cal/table.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join("cal/table.json")
}

fn pixels(path: &Path) -> image::RgbImage {
    image::open(path).unwrap().to_rgb8()
}

/// Sphere of radius `r` pressed `d` into the gel, as camera depths.
fn sphere_map(cfg: &SensorConfig, r: f64, d: f64) -> Grid {
    let (h, w) = cfg.image_size;
    let t = cfg.gelpad_thickness;
    let data = (0..h * w)
        .map(|k| {
            let (x, y) = cfg.pixel_center(k / w, k % w);
            let rho2 = x * x + y * y;
            let ind = if rho2 < r * r { (d - (r - (r * r - rho2).sqrt())).max(0.0) } else { 0.0 };
            t - ind
        })
        .collect();
    Grid::from_vec(h, w, data).unwrap()
}

#[test]
fn calibrate_prints_rmse_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = tacsim(dir.path(), &["calibrate", "--out", "table.json"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    let rmse: f64 = out.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(rmse < 0.05, "{out}");
    let t = PolyTable::load(dir.path().join("table.json")).unwrap();
    assert_eq!((t.background.height(), t.background.width()), (480, 640));
    assert!(dir.path().join("table_background.png").is_file());
}

#[test]
fn ambient_only_table_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let o = tacsim(dir.path(), &["calibrate", "--set", "lighting.lights=[]", "--set", "lighting.vignette=0", "--out", "amb.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t: Value = serde_json::from_slice(&std::fs::read(dir.path().join("amb.json")).unwrap()).unwrap();
    for channel in t["coeffs"].as_array().unwrap() {
        let c: Vec<f64> = channel.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9), "{c:?}");
    }
}

#[test]
fn render_empty_map_gives_background() {
    let dir = tempfile::tempdir().unwrap();
    let table = calibrated(dir.path());
    let cfg = SensorConfig::default();
    save_map(&Grid::filled(480, 640, cfg.gelpad_thickness), dir.path().join("empty.map")).unwrap();
    let o = tacsim(dir.path(), &["render", "empty.map", "--table", table.to_str().unwrap(), "--out", "r"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let expected = PolyTable::load(&table).unwrap().background.to_png8().unwrap();
    let expected = image::load_from_memory(&expected).unwrap().to_rgb8();
    assert_eq!(pixels(&dir.path().join("r/empty.png")), expected);
    let csv = std::fs::read_to_string(dir.path().join("r/empty_markers.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",0e0,0e0")));
}

#[test]
fn render_sphere_sequence_grows_contact_disk() {
    let dir = tempfile::tempdir().unwrap();
    let table = calibrated(dir.path());
    let cfg = SensorConfig::default();
    let names: Vec<String> = (1..=4).map(|i| format!("press{i}.map")).collect();
    for (i, n) in names.iter().enumerate() {
        save_map(&sphere_map(&cfg, 5e-3, 2.5e-4 * (i + 1) as f64), dir.path().join(n)).unwrap();
    }
    let mut args = vec!["render"];
    args.extend(names.iter().map(String::as_str));
    args.extend(["--table", table.to_str().unwrap(), "--out", "r"]);
    let o = tacsim(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let bg = PolyTable::load(&table).unwrap().background.to_png8().unwrap();
    let bg = image::load_from_memory(&bg).unwrap().to_rgb8();
    let counts: Vec<usize> = (1..=4)
        .map(|i| {
            let img = pixels(&dir.path().join(format!("r/press{i}.png")));
            img.pixels().zip(bg.pixels()).filter(|(p, q)| p.0.iter().zip(q.0).any(|(a, b)| a.abs_diff(b) > 4)).count()
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
}

#[test]
fn render_without_table_needs_calibration() {
    let dir = tempfile::tempdir().unwrap();
    save_map(&Grid::filled(480, 640, 4e-3), dir.path().join("a.map")).unwrap();
    let o = tacsim(dir.path(), &["render", "a.map", "--table", "missing.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("calibration required"));
}

#[test]
fn render_reports_bad_map_files() {
    let dir = tempfile::tempdir().unwrap();
    let table = calibrated(dir.path());
    std::fs::write(dir.path().join("bad.map"), b"not a height map").unwrap();
    let o = tacsim(dir.path(), &["render", "bad.map", "--table", table.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.map"), "{}", stderr(&o));
}

#[test]
fn demo_writes_frames_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = tacsim(dir.path(), &["demo", "ball_rolling", "--mode", "rigid", "--steps", "12", "--out", "d"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let d = dir.path().join("d");
    assert_eq!(std::fs::read_dir(d.join("tactile")).unwrap().count(), 12);
    assert_eq!(std::fs::read_dir(d.join("markers")).unwrap().count(), 12);
    let timings = std::fs::read_to_string(d.join("timings.csv")).unwrap();
    assert_eq!(timings.lines().next().unwrap(), "step,physics_ms,heightmap_ms,optical_ms,marker_ms");
    assert_eq!(timings.lines().count(), 13);
    let s: Value = serde_json::from_slice(&std::fs::read(d.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["steps"], 12);
    assert_eq!(s["invariant_violations"], 0);
    assert_eq!(s["mode"], "rigid");
}

#[test]
fn demo_is_deterministic_and_reads_partial_configs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("scene.json"), r#"{"seed": 5, "render": {"rgb": false}}"#).unwrap();
    let run = |out: &str| {
        let o = tacsim(dir.path(), &["demo", "object_pushing", "--config", "scene.json", "--steps", "15", "--out", out]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read_to_string(dir.path().join(out).join("poses.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
    assert_eq!(std::fs::read_dir(dir.path().join("a/tactile")).unwrap().count(), 0);
    let s: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a/summary.json")).unwrap()).unwrap();
    assert_eq!(s["seed"], 5);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["demo", "pole_balancing"],
        vec!["demo", "beam_twisting", "--mode", "rigid"],
        vec!["demo", "ball_rolling", "--set", "no_such_key=1"],
        vec!["demo", "ball_rolling", "--mode", "fluid"],
        vec!["bench", "--envs", "500"],
    ] {
        let o = tacsim(dir.path(), &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
    let o = tacsim(dir.path(), &["demo", "ball_rolling", "--config", "nowhere.json"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn bench_writes_table_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let o = tacsim(dir.path(), &["bench", "--mode", "rigid", "--envs", "1,2", "--steps", "10", "--set", "render.rgb=false", "--out", "b"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let read = |n: &str| std::fs::read_to_string(dir.path().join("b").join(n)).unwrap();
    let t1 = read("table1.csv");
    assert_eq!(t1.lines().next().unwrap(), "num_envs,height_map_gen_ms,optical_sim_ms,marker_sim_ms");
    assert_eq!(t1.lines().count(), 3);
    assert!(read("table2.csv").starts_with("num_envs,1,2\nrigid,"));
    let t3 = read("table3.csv");
    assert_eq!(t3.lines().next().unwrap(), "num_vert,num_tetra,ipc_ms");
    assert_eq!(t3.lines().count(), 4);
    assert!(read("stages.csv").lines().count() > 1);
}
