//! `bench-model`: latency model against the simulator, and analytical
//! top-k ranking against simulated ground truth.

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use loadpipe::perf::{is_compute_bound, pipeline_latency, HardwareSpec};
use loadpipe::sim::{simulate_stats, SimConfig};
use loadpipe::tuner::{DesignSpace, MeasureConfig, Study, TuneConfig};

/// Idle fraction above which the simulator counts a run as load-bound.
pub const IDLE_THRESHOLD: f64 = 0.02;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub n_loop: Vec<u64>,
    pub t_use: f64,
    /// t_load / t_use ratios.
    pub ratios: Vec<f64>,
    pub n_pipe: Vec<u64>,
    pub n_mplx: Vec<u64>,
    pub top_k: Vec<usize>,
    /// Space for the top-k evaluation; the built-in 2048³ space when absent.
    pub space: Option<DesignSpace>,
    pub contention_factor: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            n_loop: vec![32, 64, 128],
            t_use: 10.0,
            ratios: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            n_pipe: vec![1, 2, 3, 4],
            n_mplx: vec![1, 2, 3, 4],
            top_k: vec![1, 5, 10, 20, 50, 100],
            space: None,
            contention_factor: 0.1,
        }
    }
}

impl Grid {
    pub fn check(&self) -> Result<()> {
        if self.n_loop.is_empty() || self.ratios.is_empty() || self.n_pipe.is_empty() || self.n_mplx.is_empty() {
            bail!("grid is empty");
        }
        if !(self.t_use > 0.0 && self.t_use.is_finite()) || self.ratios.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            bail!("times must be finite, t_use positive and ratios nonnegative");
        }
        if self.n_loop.contains(&0) || self.n_pipe.contains(&0) || self.n_mplx.contains(&0) || self.top_k.contains(&0) {
            bail!("counts must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AgreementRow {
    pub t_load: f64,
    pub t_use: f64,
    pub n_loop: u64,
    pub n_pipe: u64,
    pub n_mplx: u64,
    pub predicted: f64,
    pub simulated: f64,
    pub rel_err: f64,
    pub predicted_compute_bound: bool,
    pub simulated_compute_bound: bool,
}

pub fn agreement(g: &Grid) -> Vec<AgreementRow> {
    let mut rows = Vec::new();
    for &n_loop in &g.n_loop {
        for &r in &g.ratios {
            for &n_pipe in &g.n_pipe {
                for &n_mplx in &g.n_mplx {
                    let c = SimConfig { t_load: r * g.t_use, t_use: g.t_use, n_loop, n_pipe, n_mplx };
                    let sim = simulate_stats(&c);
                    let predicted = pipeline_latency(c.t_load, c.t_use, n_loop, n_pipe, n_mplx);
                    rows.push(AgreementRow {
                        t_load: c.t_load,
                        t_use: c.t_use,
                        n_loop,
                        n_pipe,
                        n_mplx,
                        predicted,
                        simulated: sim.makespan,
                        rel_err: (predicted - sim.makespan).abs() / sim.makespan,
                        predicted_compute_bound: is_compute_bound(c.t_load, c.t_use, n_pipe, n_mplx),
                        simulated_compute_bound: sim.idle_fraction() <= IDLE_THRESHOLD,
                    });
                }
            }
        }
    }
    rows
}

#[derive(Clone, Debug, Serialize)]
pub struct TopKRow {
    pub k: usize,
    pub best_in_top_k: f64,
    pub exhaustive_best: f64,
    pub normalized: f64,
}

/// Best noiseless ground truth among the latency model's top-k points.
pub fn top_k(g: &Grid, hw: &HardwareSpec) -> Result<Vec<TopKRow>> {
    let space = g.space.clone().unwrap_or_else(DesignSpace::example);
    let measure = MeasureConfig { contention_factor: g.contention_factor, noise_sigma: 0.0 };
    let study = Study::new(space, hw.clone(), measure, TuneConfig::default())?;
    let truth: Vec<f64> = study.ranked.iter().map(|p| study.noiseless_cost(p).expect("ranked points come from the space")).collect();
    let mut rows = Vec::new();
    for &k in &g.top_k {
        let k = k.min(truth.len());
        let best = truth[..k].iter().copied().fold(f64::INFINITY, f64::min);
        rows.push(TopKRow { k, best_in_top_k: best, exhaustive_best: study.exhaustive_best, normalized: study.exhaustive_best / best });
    }
    Ok(rows)
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
