use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::config::{SceneConfig, TaskName};
use super::env::{Action, Environment, Observation, StageTimings};

/// Worker threads: `TACSIM_THREADS` if set to a positive integer, else all cores.
pub fn thread_count() -> usize {
    std::env::var("TACSIM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// N independent environments stepped stage by stage in parallel.
///
/// Environment `i` is seeded with `cfg.seed + i`; results are identical to
/// stepping each instance on its own.
pub struct VecEnv {
    envs: Vec<Environment>,
    pool: rayon::ThreadPool,
}

impl VecEnv {
    pub fn new(task: TaskName, cfg: &SceneConfig, n: usize) -> Result<VecEnv> {
        if n == 0 {
            return Err(Error::config("need at least one environment"));
        }
        let pool = pool()?;
        let envs = pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| Environment::new(task, SceneConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() }))
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(VecEnv { envs, pool })
    }

    pub fn from_envs(envs: Vec<Environment>) -> Result<VecEnv> {
        Ok(VecEnv { envs, pool: pool()? })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[Environment] {
        &self.envs
    }

    pub fn envs_mut(&mut self) -> &mut [Environment] {
        &mut self.envs
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Steps all environments; timings are batch wall-clock per stage.
    pub fn step(&mut self, actions: &[Action]) -> Result<(Vec<Observation>, StageTimings)> {
        if actions.len() != self.envs.len() {
            return Err(Error::invalid(format!("{} actions for {} environments", actions.len(), self.envs.len())));
        }
        let envs = &mut self.envs;
        self.pool.install(|| {
            let t = Instant::now();
            envs.par_iter_mut().zip(actions).map(|(e, a)| e.advance(a)).collect::<Result<Vec<_>>>()?;
            let physics_ms = ms(t);
            let t = Instant::now();
            envs.par_iter_mut().for_each(|e| e.render_stage());
            let heightmap_ms = ms(t);
            let t = Instant::now();
            envs.par_iter_mut().map(|e| e.optical_stage()).collect::<Result<Vec<_>>>()?;
            let optical_ms = ms(t);
            let t = Instant::now();
            envs.par_iter_mut().map(|e| e.marker_stage()).collect::<Result<Vec<_>>>()?;
            let marker_ms = ms(t);
            let obs = envs.par_iter().map(|e| e.observation()).collect();
            Ok((obs, StageTimings { physics_ms, heightmap_ms, optical_ms, marker_ms }))
        })
    }

    /// Resets environment `i` with `seeds[i]`.
    pub fn reset(&mut self, seeds: &[u64]) -> Result<Vec<Observation>> {
        if seeds.len() != self.envs.len() {
            return Err(Error::invalid(format!("{} seeds for {} environments", seeds.len(), self.envs.len())));
        }
        let envs = &mut self.envs;
        self.pool.install(|| envs.par_iter_mut().zip(seeds).map(|(e, &s)| e.reset(s)).collect())
    }
}

fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}
