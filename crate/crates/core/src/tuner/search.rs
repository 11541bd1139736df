//! Simulated annealing over the design space, guided by a cost model.

use std::collections::HashMap;

use rand::Rng;

use super::{params_from, params_to, DesignSpace, Study, Surrogate, TuneConfig};
use crate::perf::ScheduleParams;

/// Metropolis acceptance for a move from `current` to `candidate` log cost.
pub fn accept_probability(current: f64, candidate: f64, temperature: f64) -> f64 {
    if candidate <= current {
        1.0
    } else if temperature <= 0.0 {
        0.0
    } else {
        (-(candidate - current) / temperature).exp()
    }
}

/// Moves one randomly chosen field to an adjacent candidate value.
/// Returns `p` itself when that field has only one candidate.
pub fn neighbor(d: &DesignSpace, p: &ScheduleParams, rng: &mut impl Rng) -> ScheduleParams {
    let axes = d.axes();
    let mut v = params_to(p);
    let f = rng.random_range(0..9);
    let axis = axes[f];
    let Some(i) = axis.iter().position(|&x| x == v[f]) else {
        return *p;
    };
    let j = match (i > 0, i + 1 < axis.len()) {
        (true, true) => {
            if rng.random_bool(0.5) {
                i - 1
            } else {
                i + 1
            }
        }
        (true, false) => i - 1,
        (false, true) => i + 1,
        (false, false) => i,
    };
    v[f] = axis[j];
    params_from(v)
}

/// Temperature at `step` of `steps`, geometric from `t_start` to `t_end`.
pub(crate) fn temperature(cfg: &TuneConfig, step: usize) -> f64 {
    if cfg.steps <= 1 {
        return cfg.t_start;
    }
    let frac = step as f64 / (cfg.steps - 1) as f64;
    cfg.t_start * (cfg.t_end / cfg.t_start).powf(frac)
}

/// One annealing step from `current`: perturb one field to an adjacent
/// candidate and accept by the Metropolis rule on predicted log cost.
/// Neighbors outside the valid space are rejected.
pub fn sa_propose(
    model: &Surrogate,
    current: &ScheduleParams,
    study: &Study,
    temperature: f64,
    rng: &mut impl Rng,
) -> ScheduleParams {
    let cand = neighbor(&study.space, current, rng);
    if !study.contains(&cand) {
        return *current;
    }
    let (a, b) = (model.predict_log(&model.features(current)), model.predict_log(&model.features(&cand)));
    if rng.random::<f64>() < accept_probability(a, b, temperature) {
        cand
    } else {
        *current
    }
}

/// Runs one chain per start point (cycling through `starts` if there are
/// fewer than `cfg.chains`) and returns every visited point with its
/// predicted cost, cheapest first.
pub(crate) fn anneal(
    study: &Study,
    model: &Surrogate,
    starts: &[ScheduleParams],
    cfg: &TuneConfig,
    rng: &mut impl Rng,
) -> Vec<(ScheduleParams, f64)> {
    let mut seen: HashMap<ScheduleParams, f64> = HashMap::new();
    let mut order: Vec<ScheduleParams> = Vec::new();
    let mut cost = |p: ScheduleParams, seen: &mut HashMap<ScheduleParams, f64>| {
        *seen.entry(p).or_insert_with(|| {
            order.push(p);
            model.predict_log(&model.features(&p))
        })
    };
    if starts.is_empty() {
        return Vec::new();
    }
    for c in 0..cfg.chains {
        let mut cur = starts[c % starts.len()];
        let mut cur_cost = cost(cur, &mut seen);
        for step in 0..cfg.steps {
            let cand = neighbor(&study.space, &cur, rng);
            if !study.contains(&cand) {
                continue;
            }
            let cand_cost = cost(cand, &mut seen);
            if rng.random::<f64>() < accept_probability(cur_cost, cand_cost, temperature(cfg, step)) {
                cur = cand;
                cur_cost = cand_cost;
            }
        }
    }
    let mut out: Vec<(ScheduleParams, f64)> = order.into_iter().map(|p| (p, seen[&p])).collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out.into_iter().map(|(p, c)| (p, c.exp())).collect()
}

/// Up to `n` unmeasured proposals from annealing chains started at the
/// best measured points. Points
/// whose prediction ties one already taken are skipped: the stump model is
/// piecewise constant, so a tie usually means the model cannot tell them
/// apart and measuring both teaches it nothing new.
pub(crate) fn propose_batch(
    study: &Study,
    model: &Surrogate,
    measured: &[(ScheduleParams, f64)],
    n: usize,
    rng: &mut impl Rng,
) -> Vec<(ScheduleParams, f64)> {
    let mut best: Vec<&(ScheduleParams, f64)> = measured.iter().collect();
    best.sort_by(|a, b| a.1.total_cmp(&b.1));
    let starts: Vec<ScheduleParams> = best.iter().map(|(p, _)| *p).collect();
    let mut out: Vec<(ScheduleParams, f64)> = Vec::with_capacity(n);
    for (p, c) in anneal(study, model, &starts, &study.config, rng) {
        if out.len() == n {
            break;
        }
        if measured.iter().any(|(q, _)| *q == p) || out.iter().any(|(_, d)| *d == c) {
            continue;
        }
        out.push((p, c));
    }
    out
}
