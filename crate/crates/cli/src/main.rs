//! `tacsim`: scripted demos, benchmarks, offline tactile rendering and optical calibration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use tacsim::envs::{
    ball_presets, bench, make_env, script_length, scripted_action, table1_csv, table2_csv, table3_csv, write_tables,
    BenchReport, PhysicsMode, SceneConfig, StageTimings, TaskName,
};
use tacsim::geometry::{write_atomic, Pose};
use tacsim::marker::{contact_center, marker_displacements, marker_grid, track_load, LoadState};
use tacsim::optical::{calibrate, tactile_image, PolyTable};
use tacsim::tactile_render::{indentation_from, load_map, HeightMap};

/// Largest environment count `bench` accepts.
const MAX_ENVS: usize = 64;

#[derive(Parser)]
#[command(name = "tacsim", version, about = "Visuotactile sensor simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Scene config (JSON); fields not given fall back to the task preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (`calibrate`: table path).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// rigid | soft
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Environment counts, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    envs: Vec<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted-path config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a task's scripted trajectory and record every frame.
    Demo { task: String },
    /// Time the pipeline stages and write CSV tables.
    Bench {
        #[arg(default_value = "ball_rolling")]
        task: String,
    },
    /// Convert recorded height maps into tactile images and marker fields.
    Render {
        #[arg(required = true)]
        maps: Vec<PathBuf>,
        /// Lookup table written by `calibrate`.
        #[arg(long)]
        table: PathBuf,
    },
    /// Fit the color lookup table for the configured lighting.
    Calibrate,
}

enum Failure {
    Config(String),
    Solver(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Solver(m) | Failure::Io(m) => m,
        }
    }
}

impl From<tacsim::Error> for Failure {
    fn from(e: tacsim::Error) -> Self {
        use tacsim::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::InvalidArgument(_) | E::Format { .. } | E::Json(_) => Failure::Config(msg),
            E::Io(_) | E::Image(_) => Failure::Io(msg),
            _ => Failure::Solver(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Res<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Demo { task } => demo(&cli.common, task),
        Command::Bench { task } => run_bench(&cli.common, task),
        Command::Render { maps, table } => render(&cli.common, maps, table),
        Command::Calibrate => run_calibrate(&cli.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn parse_mode(s: &str) -> Res<PhysicsMode> {
    s.parse().map_err(|e: tacsim::Error| Failure::Config(e.to_string()))
}

fn parse_task(s: &str) -> Res<TaskName> {
    s.parse().map_err(|e: tacsim::Error| Failure::Config(e.to_string()))
}

fn config_file(common: &Common) -> Res<Option<Value>> {
    let Some(path) = &common.config else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let v = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(Some(v))
}

/// Preset (or default scene) with the config file merged on top, then `--mode`, `--set` and `--seed`.
fn scene(common: &Common, task: Option<TaskName>, mode: Option<PhysicsMode>) -> Res<SceneConfig> {
    let file = config_file(common)?;
    let file_mode = file.as_ref().and_then(|f| f.get("physics_mode")).and_then(|m| m.as_str()).map(parse_mode).transpose()?;
    let cli_mode = common.mode.as_deref().map(parse_mode).transpose()?;
    let default_mode = match task {
        Some(TaskName::BeamTwisting) => PhysicsMode::Soft,
        _ => PhysicsMode::Rigid,
    };
    let mode = mode.or(cli_mode).or(file_mode).unwrap_or(default_mode);
    let base = match task {
        Some(t) => SceneConfig::preset(t, mode),
        None => SceneConfig::default(),
    };
    let mut value = serde_json::to_value(&base).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(f) = file {
        merge(&mut value, f);
    }
    let mut cfg: SceneConfig = serde_json::from_value(value).map_err(|e| Failure::Config(format!("config: {e}")))?;
    cfg.physics_mode = mode;
    let mut cfg = cfg.with_overrides(&common.set)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, default: &str) -> Res<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn json_num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn pose_row(out: &mut String, step: usize, kind: &str, i: usize, p: &Pose) {
    let (t, q) = (p.translation, p.rotation);
    let _ = writeln!(out, "{step},{kind},{i},{:e},{:e},{:e},{:e},{:e},{:e},{:e}", t.x, t.y, t.z, q.w, q.i, q.j, q.k);
}

fn demo(common: &Common, name: &str) -> Res<()> {
    let task = parse_task(name)?;
    let cfg = scene(common, Some(task), None)?;
    let steps = common.steps.unwrap_or_else(|| script_length(task));
    let dir = out_dir(common, &format!("demo_{name}"))?;
    let mut env = make_env(name, cfg.clone())?;
    std::fs::create_dir_all(dir.join("tactile"))?;
    std::fs::create_dir_all(dir.join("markers"))?;

    let mut timings = format!("step,{}\n", StageTimings::CSV_HEADER);
    let mut poses = String::from("step,kind,index,x,y,z,qw,qx,qy,qz\n");
    let mut sums = [0.0; 4];
    let mut done = 0;
    let mut error = None;
    for k in 0..steps {
        let (obs, t) = match env.step(&scripted_action(task, &cfg, k)) {
            Ok(r) => r,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        for (i, s) in obs.sensors.iter().enumerate() {
            if let Some(rgb) = &s.rgb {
                rgb.save_png(dir.join("tactile").join(format!("sensor{i}_{k:04}.png")))?;
            }
            s.markers.save_csv(dir.join("markers").join(format!("sensor{i}_{k:04}.csv")))?;
            pose_row(&mut poses, k, "case", i, &s.case_pose);
        }
        for (i, o) in obs.objects.iter().enumerate() {
            pose_row(&mut poses, k, "object", i, &o.pose);
        }
        let _ = writeln!(timings, "{k},{}", t.csv_row());
        for (s, v) in sums.iter_mut().zip(t.as_array()) {
            *s += v;
        }
        done += 1;
    }
    write_atomic(&dir.join("timings.csv"), timings)?;
    write_atomic(&dir.join("poses.csv"), poses)?;

    let st = *env.stats();
    let mean = |i: usize| if done > 0 { sums[i] / done as f64 } else { 0.0 };
    let summary = json!({
        "task": task.as_str(),
        "mode": cfg.physics_mode.to_string(),
        "seed": cfg.seed,
        "steps": done,
        "lift_success": env.lift_success().ok(),
        "reward": env.reward(),
        "inverted_tets": st.inverted_tets,
        "intersections": st.intersections,
        "invariant_violations": st.violations(),
        "unconverged_steps": st.unconverged_steps,
        "min_tet_volume": json_num(st.min_tet_volume),
        "min_pair_distance": st.min_pair_distance.map(json_num),
        "mean_ms": {
            "physics": mean(0),
            "height_map_gen": mean(1),
            "optical_sim": mean(2),
            "marker_sim": mean(3),
        },
        "error": error.as_ref().map(|e| e.to_string()),
    });
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Io(e.to_string()))?;
    write_atomic(&dir.join("summary.json"), text + "\n")?;
    println!("{name}: {done} steps, {} invariant violations, output in {}", st.violations(), dir.display());

    if let Some(e) = error {
        return Err(e.into());
    }
    if st.violations() > 0 {
        return Err(Failure::Solver(format!("{} inverted tets, {} intersecting steps", st.inverted_tets, st.intersections)));
    }
    Ok(())
}

fn run_bench(common: &Common, name: &str) -> Res<()> {
    let task = parse_task(name)?;
    let counts = if common.envs.is_empty() { vec![1, 2, 4, 8, 16] } else { common.envs.clone() };
    if let Some(&n) = counts.iter().find(|&&n| n == 0 || n > MAX_ENVS) {
        return Err(Failure::Config(format!(
            "refusing {n} environments: counts must be in 1..={MAX_ENVS} (each environment holds its own meshes and images)"
        )));
    }
    let n_steps = common.steps.unwrap_or(20);
    let modes = match &common.mode {
        Some(m) => vec![parse_mode(m)?],
        None if task == TaskName::BeamTwisting => vec![PhysicsMode::Soft],
        None => vec![PhysicsMode::Rigid, PhysicsMode::Soft],
    };
    let dir = out_dir(common, "bench")?;

    let mut sweep: Vec<BenchReport> = Vec::new();
    for &mode in &modes {
        let cfg = scene(common, Some(task), Some(mode))?;
        for &n in &counts {
            eprintln!("bench {name} {mode} x{n}");
            sweep.push(bench(task, &cfg, n_steps, n)?);
        }
    }
    let mut presets = Vec::new();
    for cfg in ball_presets(&scene(common, Some(TaskName::BallRolling), Some(PhysicsMode::Soft))?) {
        eprintln!("bench ball_rolling soft preset");
        presets.push(bench(TaskName::BallRolling, &cfg, n_steps, 1)?);
    }
    write_tables(&dir, &sweep, &presets)?;
    let rigid: Vec<BenchReport> = sweep.iter().filter(|r| r.mode == PhysicsMode::Rigid).cloned().collect();
    println!("{}\n{}\n{}", table1_csv(&rigid), table2_csv(&sweep), table3_csv(&presets));
    Ok(())
}

fn render(common: &Common, maps: &[PathBuf], table_path: &Path) -> Res<()> {
    if !table_path.is_file() {
        return Err(Failure::Config(format!(
            "calibration required: lookup table {} not found (run `tacsim calibrate --out {}`)",
            table_path.display(),
            table_path.display()
        )));
    }
    let cfg = scene(common, None, None)?;
    let sensor = &cfg.sensors[0];
    let table = PolyTable::load(table_path)?;
    if (table.background.height(), table.background.width()) != sensor.image_size {
        return Err(Failure::Config(format!(
            "table background is {}x{}, sensor image is {}x{}",
            table.background.height(),
            table.background.width(),
            sensor.image_size.0,
            sensor.image_size.1
        )));
    }
    let dir = out_dir(common, "render")?;
    let rest = marker_grid(sensor);
    let (rows, cols) = sensor.marker_grid;
    let shadows = cfg.render.shadows.then_some(&cfg.shadow);
    let mut load = LoadState::default();
    for path in maps {
        let values = load_map(path)?;
        if (values.height(), values.width()) != sensor.image_size {
            return Err(Failure::Config(format!(
                "{}: map is {}x{}, sensor image is {}x{}",
                path.display(),
                values.height(),
                values.width(),
                sensor.image_size.0,
                sensor.image_size.1
            )));
        }
        let ind = indentation_from(&HeightMap { values, pixel_pitch: sensor.pixel_pitch() }, sensor);
        let rgb = tactile_image(&ind, sensor, &table, &cfg.lighting, shadows)?;
        let contact = contact_center(&ind, cfg.marker.contact_threshold);
        load = track_load(&load, &Pose::identity(), &contact);
        let field = marker_displacements(&load, &rest, rows, cols, &cfg.marker)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "frame".into());
        rgb.save_png(dir.join(format!("{stem}.png")))?;
        field.save_csv(dir.join(format!("{stem}_markers.csv")))?;
        let touching = ind.values.data().iter().filter(|&&v| v > cfg.marker.contact_threshold).count();
        println!("{stem}: {touching} contact pixels, max indentation {:.4e} m", ind.values.max());
    }
    Ok(())
}

fn run_calibrate(common: &Common) -> Res<()> {
    let cfg = scene(common, None, None)?;
    let mut path = common.out.clone().unwrap_or_else(|| PathBuf::from("table.json"));
    if path.is_dir() {
        path = path.join("table.json");
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let cal = calibrate(&cfg.lighting, &cfg.sensors[0])?;
    cal.table.save(&path)?;
    println!("rmse {:.5} over {} samples, table written to {}", cal.rmse, cal.samples, path.display());
    Ok(())
}
