//! Discrete-event simulation of load-and-use pipelines.
//!
//! `n_mplx` workers share one compute unit. Loads only have latency (any
//! number may be in flight). A worker with `n_pipe` stages starts loads for
//! its first `n_pipe` iterations at time 0, and the load of iteration
//! `i + n_pipe` is issued when compute `i` finishes and frees its slot. The
//! unit serves ready computes in order of readiness, ties by worker id.

mod truth;

use serde::{Deserialize, Serialize};

pub use truth::{measure_ground_truth, sim_configs, GroundTruthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_load: f64,
    pub t_use: f64,
    pub n_loop: u64,
    pub n_pipe: u64,
    pub n_mplx: u64,
}

impl SimConfig {
    pub fn is_valid(&self) -> bool {
        self.t_load >= 0.0
            && self.t_use >= 0.0
            && self.t_load.is_finite()
            && self.t_use.is_finite()
            && self.n_loop >= 1
            && self.n_pipe >= 1
            && self.n_mplx >= 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LoadIssue,
    LoadDone,
    ComputeStart,
    ComputeEnd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: f64,
    pub worker: u64,
    pub kind: EventKind,
    pub iteration: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    /// Sorted by time, then worker, kind and iteration.
    pub events: Vec<SimEvent>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub makespan: f64,
    pub first_compute_start: f64,
    /// Total compute time on the unit.
    pub busy: f64,
}

impl SimResult {
    /// Fraction of time the unit sits idle between the first compute and
    /// the end.
    pub fn idle_fraction(&self) -> f64 {
        let span = self.makespan - self.first_compute_start;
        if span <= 0.0 {
            0.0
        } else {
            (1.0 - self.busy / span).max(0.0)
        }
    }
}

/// Runs `workers` step sequences of `steps` computes on one shared unit.
/// `load` gives the issue time of step `g`'s load from the compute end
/// times of that worker so far; it is only asked once steps before `g` are
/// done.
fn run_unit(
    workers: u64,
    steps: u64,
    t_use: f64,
    t_load: f64,
    load: &dyn Fn(u64, &[f64]) -> f64,
    mut trace: Option<&mut SimTrace>,
) -> SimResult {
    let n = workers as usize;
    let mut ends: Vec<Vec<f64>> = vec![Vec::with_capacity(steps as usize); n];
    let mut ready = vec![0.0f64; n];
    let emit = |trace: &mut Option<&mut SimTrace>, time, worker: usize, kind, iteration| {
        if let Some(t) = trace.as_deref_mut() {
            t.events.push(SimEvent { time, worker: worker as u64, kind, iteration });
        }
    };
    for w in 0..n {
        let issue = load(0, &ends[w]);
        emit(&mut trace, issue, w, EventKind::LoadIssue, 0);
        emit(&mut trace, issue + t_load, w, EventKind::LoadDone, 0);
        ready[w] = issue + t_load;
    }
    let mut unit_free = 0.0f64;
    let mut first = f64::INFINITY;
    for _ in 0..steps * workers {
        let w = (0..n)
            .filter(|&w| (ends[w].len() as u64) < steps)
            .min_by(|&a, &b| ready[a].total_cmp(&ready[b]).then(a.cmp(&b)))
            .expect("a worker has work left");
        let g = ends[w].len() as u64;
        let start = unit_free.max(ready[w]);
        let end = start + t_use;
        first = first.min(start);
        emit(&mut trace, start, w, EventKind::ComputeStart, g);
        emit(&mut trace, end, w, EventKind::ComputeEnd, g);
        ends[w].push(end);
        unit_free = end;
        if g + 1 < steps {
            let issue = load(g + 1, &ends[w]);
            emit(&mut trace, issue, w, EventKind::LoadIssue, g + 1);
            emit(&mut trace, issue + t_load, w, EventKind::LoadDone, g + 1);
            ready[w] = end.max(issue + t_load);
        }
    }
    if let Some(t) = trace {
        t.events.sort_by(|a, b| {
            a.time.total_cmp(&b.time).then(a.worker.cmp(&b.worker)).then(a.kind.cmp(&b.kind)).then(a.iteration.cmp(&b.iteration))
        });
    }
    SimResult {
        makespan: ends.iter().filter_map(|e| e.last().copied()).fold(0.0, f64::max),
        first_compute_start: if first.is_finite() { first } else { 0.0 },
        busy: t_use * (steps * workers) as f64,
    }
}

fn single_load(cfg: &SimConfig) -> impl Fn(u64, &[f64]) -> f64 + '_ {
    move |g, ends| if g < cfg.n_pipe { 0.0 } else { ends[(g - cfg.n_pipe) as usize] }
}

/// Makespan and summary of one single-level configuration.
pub fn simulate_stats(cfg: &SimConfig) -> SimResult {
    run_unit(cfg.n_mplx, cfg.n_loop, cfg.t_use, cfg.t_load, &single_load(cfg), None)
}

/// Makespan and full event trace.
pub fn simulate_pipeline(cfg: &SimConfig) -> (f64, SimTrace) {
    let mut trace = SimTrace::default();
    let r = run_unit(cfg.n_mplx, cfg.n_loop, cfg.t_use, cfg.t_load, &single_load(cfg), Some(&mut trace));
    (r.makespan, trace)
}

/// Checks per-worker precedence (load done before compute, computes in
/// order) and exclusive use of the compute unit.
pub fn validate_trace(trace: &SimTrace, cfg: &SimConfig) -> Result<(), String> {
    let key = |e: &SimEvent| (e.worker, e.iteration);
    let find = |k: EventKind| {
        let mut m = std::collections::BTreeMap::new();
        for e in trace.events.iter().filter(|e| e.kind == k) {
            if m.insert(key(e), e.time).is_some() {
                return Err(format!("duplicate {k:?} for worker {} iteration {}", e.worker, e.iteration));
            }
        }
        Ok(m)
    };
    let (done, start, end) = (find(EventKind::LoadDone)?, find(EventKind::ComputeStart)?, find(EventKind::ComputeEnd)?);
    if start.len() as u64 != cfg.n_loop * cfg.n_mplx || end.len() != start.len() {
        return Err("missing compute events".into());
    }
    for (k, s) in &start {
        let d = done.get(k).ok_or_else(|| format!("no load for {k:?}"))?;
        if s < d {
            return Err(format!("compute {k:?} starts at {s} before its load is done at {d}"));
        }
        if k.1 > 0 && *s < end[&(k.0, k.1 - 1)] {
            return Err(format!("compute {k:?} starts before the previous one ends"));
        }
    }
    let mut intervals: Vec<(f64, f64)> = start.iter().map(|(k, s)| (*s, end[k])).collect();
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in intervals.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(format!("compute intervals overlap at {}", w[1].0));
        }
    }
    Ok(())
}

/// How the register-level pipeline behaves at outer-iteration boundaries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerPipelining {
    /// Inner loads run ahead into the next outer chunk.
    Fused,
    /// The inner pipeline drains and re-primes in every outer iteration.
    Restart,
}

/// Two nested pipelines. The outer level supplies chunks (`outer.t_use` is
/// ignored; its use is the inner loop); the inner level runs `inner.n_loop`
/// steps of `inner.t_use` per chunk. `outer.n_mplx` workers share the unit.
pub fn simulate_two_level_with(outer: &SimConfig, inner: &SimConfig, mode: InnerPipelining) -> SimResult {
    let f = inner.n_loop;
    let (s, t) = (outer.n_pipe, inner.n_pipe);
    let load = move |g: u64, ends: &[f64]| {
        let o = g / f;
        // Chunk o reuses the slot of chunk o - s, freed after its last step.
        let chunk_ready = if o < s { 0.0 } else { ends[((o - s + 1) * f - 1) as usize] } + outer.t_load;
        let u = g % f;
        let slot_free = match mode {
            InnerPipelining::Fused if g >= t => ends[(g - t) as usize],
            InnerPipelining::Restart if u >= t => ends[(g - t) as usize],
            InnerPipelining::Restart if o > 0 => ends[(o * f - 1) as usize],
            _ => 0.0,
        };
        chunk_ready.max(slot_free)
    };
    run_unit(outer.n_mplx, outer.n_loop * f, inner.t_use, inner.t_load, &load, None)
}

/// Fused two-level makespan.
pub fn simulate_two_level(outer: &SimConfig, inner: &SimConfig) -> f64 {
    simulate_two_level_with(outer, inner, InnerPipelining::Fused).makespan
}

#[cfg(test)]
mod tests;
