//! Per-frame timing harness and CSV tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::io::write_atomic;

use super::config::{PhysicsMode, SceneConfig, Shape, TaskName};
use super::env::{Action, StageTimings};
use super::tasks::scripted_action;
use super::vec_env::VecEnv;

/// Frames stepped before timing starts.
pub const WARMUP_STEPS: usize = 2;
pub const STAGE_NAMES: [&str; 4] = ["physics", "height_map_gen", "optical_sim", "marker_sim"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StageStats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl StageStats {
    pub fn from_samples(samples: &[f64]) -> StageStats {
        if samples.is_empty() {
            return StageStats::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;
        StageStats { mean: s.iter().sum::<f64>() / n as f64, median, p95: s[rank] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub task: TaskName,
    pub mode: PhysicsMode,
    pub num_envs: usize,
    pub n_steps: usize,
    pub threads: usize,
    /// Soft object mesh size (zero in rigid mode).
    pub num_vert: usize,
    pub num_tetra: usize,
    /// Batch wall-clock per frame, by stage.
    pub stages: [StageStats; 4],
    /// Batch total per frame.
    pub total: StageStats,
}

impl BenchReport {
    /// Mean frame time divided by the number of environments (ms).
    pub fn per_env_ms(&self) -> f64 {
        self.total.mean / self.num_envs as f64
    }

    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        STAGE_NAMES.iter().position(|s| *s == name).map(|i| &self.stages[i])
    }
}

/// Steps `n_envs` copies of a task with its scripted actions and times each stage.
pub fn bench(task: TaskName, cfg: &SceneConfig, n_steps: usize, n_envs: usize) -> Result<BenchReport> {
    if n_steps < 10 {
        return Err(Error::config(format!("bench needs at least 10 timed steps, got {n_steps}")));
    }
    let mut venv = VecEnv::new(task, cfg, n_envs)?;
    let mut samples: Vec<StageTimings> = Vec::with_capacity(n_steps);
    for k in 0..WARMUP_STEPS + n_steps {
        let actions: Vec<Action> = vec![scripted_action(task, cfg, k); n_envs];
        let (_, t) = venv.step(&actions)?;
        if k >= WARMUP_STEPS {
            samples.push(t);
        }
    }
    let column = |i: usize| samples.iter().map(|t| t.as_array()[i]).collect::<Vec<_>>();
    let totals: Vec<f64> = samples.iter().map(|t| t.total_ms()).collect();
    let (num_vert, num_tetra) = venv.envs()[0].object_mesh_counts();
    Ok(BenchReport {
        task,
        mode: cfg.physics_mode,
        num_envs: n_envs,
        n_steps,
        threads: venv.threads(),
        num_vert,
        num_tetra,
        stages: [0, 1, 2, 3].map(|i| StageStats::from_samples(&column(i))),
        total: StageStats::from_samples(&totals),
    })
}

/// Soft ball-rolling scenes at three ball resolutions, ordered by tet count.
pub fn ball_presets(base: &SceneConfig) -> Vec<SceneConfig> {
    [1, 2, 3]
        .into_iter()
        .map(|subdivisions| {
            let mut cfg = SceneConfig { physics_mode: PhysicsMode::Soft, ..base.clone() };
            if cfg.objects.is_empty() {
                cfg.objects = SceneConfig::preset(TaskName::BallRolling, PhysicsMode::Soft).objects;
            }
            if let Shape::Sphere { subdivisions: s, .. } = &mut cfg.objects[0].shape {
                *s = subdivisions;
            }
            cfg
        })
        .collect()
}

/// Sensing stage times by environment count.
pub fn table1_csv(reports: &[BenchReport]) -> String {
    let mut s = String::from("num_envs,height_map_gen_ms,optical_sim_ms,marker_sim_ms\n");
    for r in reports {
        let _ = writeln!(s, "{},{:.4},{:.4},{:.4}", r.num_envs, r.stages[1].mean, r.stages[2].mean, r.stages[3].mean);
    }
    s
}

/// Per-environment frame time, one row per physics mode, one column per environment count.
pub fn table2_csv(reports: &[BenchReport]) -> String {
    let counts: BTreeSet<usize> = reports.iter().map(|r| r.num_envs).collect();
    let mut s = String::from("num_envs");
    for c in &counts {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for mode in [PhysicsMode::Rigid, PhysicsMode::Soft] {
        if !reports.iter().any(|r| r.mode == mode) {
            continue;
        }
        s.push_str(&mode.to_string());
        for c in &counts {
            match reports.iter().find(|r| r.mode == mode && r.num_envs == *c) {
                Some(r) => {
                    let _ = write!(s, ",{:.4}", r.per_env_ms());
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

/// Soft-body solve time against mesh size.
pub fn table3_csv(reports: &[BenchReport]) -> String {
    let mut s = String::from("num_vert,num_tetra,ipc_ms\n");
    for r in reports {
        let _ = writeln!(s, "{},{},{:.4}", r.num_vert, r.num_tetra, r.stages[0].mean);
    }
    s
}

/// Long-form statistics for every report and stage.
pub fn stages_csv(reports: &[BenchReport]) -> String {
    let mut s = String::from("task,mode,num_envs,threads,num_vert,num_tetra,stage,mean_ms,median_ms,p95_ms\n");
    for r in reports {
        let rows = STAGE_NAMES.iter().zip(&r.stages).chain(std::iter::once((&"total", &r.total)));
        for (name, st) in rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{:.4},{:.4},{:.4}",
                r.task, r.mode, r.num_envs, r.threads, r.num_vert, r.num_tetra, name, st.mean, st.median, st.p95
            );
        }
    }
    s
}

/// Writes `table1.csv`, `table2.csv`, `table3.csv` and `stages.csv` into `dir`.
pub fn write_tables(dir: &Path, sweep: &[BenchReport], presets: &[BenchReport]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let rigid: Vec<BenchReport> = sweep.iter().filter(|r| r.mode == PhysicsMode::Rigid).cloned().collect();
    write_atomic(&dir.join("table1.csv"), table1_csv(&rigid))?;
    write_atomic(&dir.join("table2.csv"), table2_csv(sweep))?;
    write_atomic(&dir.join("table3.csv"), table3_csv(presets))?;
    let all: Vec<BenchReport> = sweep.iter().chain(presets).cloned().collect();
    write_atomic(&dir.join("stages.csv"), stages_csv(&all))
}
