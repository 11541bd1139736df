//! Gradient-boosted regression stumps over log-scaled schedule features.
//!
//! The model predicts log cost. It is the sum of an optional frozen prior
//! (fit to analytical predictions) and a residual ensemble refit on every
//! measurement seen so far.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::perf::{occupancy, predict, reg_need, smem_need, HardwareSpec, ScheduleParams};
use crate::workload::WorkloadDesc;

pub const N_FEATURES: usize = 16;
pub type Features = [f64; N_FEATURES];

pub fn features(p: &ScheduleParams, w: &WorkloadDesc, hw: &HardwareSpec) -> Features {
    let l = |x: u64| (x.max(1) as f64).log2();
    let (per_sm, waves) = occupancy(p, w, hw).map_or((0, 0), |o| (o.n_threadblk_per_sm, o.n_threadblk_batch));
    let active_warps = (per_sm * p.n_warp_per_threadblk).min(hw.util_knee_warps);
    [
        l(p.tile_m),
        l(p.tile_n),
        l(p.tile_k),
        l(p.reg_tile_m),
        l(p.reg_tile_n),
        l(p.reg_tile_k),
        l(p.n_smem_pipe_stage),
        l(p.n_reg_pipe_stage),
        l(p.n_warp_per_threadblk),
        l(smem_need(p, w.elem_bytes)),
        l(reg_need(p, w.elem_bytes)),
        l(p.tiles_per_warp()),
        l(per_sm),
        l(waves),
        l(active_warps),
        // Output elements one SM computes, per active warp.
        l(waves * per_sm * p.tile_m * p.tile_n / active_warps.max(1)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub left: f64,
    pub right: f64,
}

impl Stump {
    fn eval(&self, x: &Features) -> f64 {
        if x[self.feature] <= self.threshold {
            self.left
        } else {
            self.right
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boosted {
    pub base: f64,
    pub learning_rate: f64,
    pub stumps: Vec<Stump>,
}

/// Least-squares stump on residuals `r`; `None` when no feature splits.
fn best_stump(xs: &[Features], r: &[f64]) -> Option<Stump> {
    let n = xs.len();
    let total: f64 = r.iter().sum();
    let mut best: Option<(f64, Stump)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for f in 0..N_FEATURES {
        order.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]).then(a.cmp(&b)));
        let mut left = 0.0;
        for i in 0..n - 1 {
            left += r[order[i]];
            let (a, b) = (xs[order[i]][f], xs[order[i + 1]][f]);
            if a == b {
                continue;
            }
            let (nl, nr) = ((i + 1) as f64, (n - i - 1) as f64);
            let right = total - left;
            let gain = left * left / nl + right * right / nr - total * total / n as f64;
            if best.as_ref().is_none_or(|(g, _)| gain > *g) {
                let stump = Stump { feature: f, threshold: (a + b) / 2.0, left: left / nl, right: right / nr };
                best = Some((gain, stump));
            }
        }
    }
    best.map(|(_, s)| s)
}

impl Boosted {
    pub fn predict(&self, x: &Features) -> f64 {
        self.base + self.learning_rate * self.stumps.iter().map(|s| s.eval(x)).sum::<f64>()
    }

    /// Fits `rounds` stumps; also returns the training MSE after each round.
    pub fn fit(xs: &[Features], ys: &[f64], rounds: usize, learning_rate: f64) -> (Boosted, Vec<f64>) {
        assert_eq!(xs.len(), ys.len());
        assert!(!xs.is_empty(), "fit needs at least one sample");
        let base = ys.iter().sum::<f64>() / ys.len() as f64;
        let mut r: Vec<f64> = ys.iter().map(|y| y - base).collect();
        let mut model = Boosted { base, learning_rate, stumps: Vec::new() };
        let mut history = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            let Some(s) = best_stump(xs, &r) else { break };
            for (ri, x) in r.iter_mut().zip(xs) {
                *ri -= learning_rate * s.eval(x);
            }
            model.stumps.push(s);
            history.push(r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64);
        }
        (model, history)
    }
}

/// Something that predicts a cost for a schedule and learns from
/// measurements.
pub trait CostModel {
    fn predict(&self, p: &ScheduleParams) -> f64;
    fn update(&mut self, batch: &[(ScheduleParams, f64)]);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub workload: WorkloadDesc,
    pub hw: HardwareSpec,
    pub rounds: usize,
    pub learning_rate: f64,
    pub prior: Option<Boosted>,
    pub residual: Option<Boosted>,
    /// Measurements seen so far as (features, log cost), in arrival order.
    pub data: Vec<(Features, f64)>,
}

impl Surrogate {
    pub fn new(workload: WorkloadDesc, hw: HardwareSpec) -> Self {
        Surrogate { workload, hw, rounds: 200, learning_rate: 0.1, prior: None, residual: None, data: Vec::new() }
    }

    /// Whether the model knows anything yet.
    pub fn is_trained(&self) -> bool {
        self.prior.is_some() || self.residual.is_some()
    }

    pub fn features(&self, p: &ScheduleParams) -> Features {
        features(p, &self.workload, &self.hw)
    }

    /// Predicted log cost.
    pub fn predict_log(&self, x: &Features) -> f64 {
        self.prior.as_ref().map_or(0.0, |m| m.predict(x)) + self.residual.as_ref().map_or(0.0, |m| m.predict(x))
    }
}

impl CostModel for Surrogate {
    fn predict(&self, p: &ScheduleParams) -> f64 {
        self.predict_log(&self.features(p)).exp()
    }

    fn update(&mut self, batch: &[(ScheduleParams, f64)]) {
        *self = train_surrogate(self.clone(), batch);
    }
}

/// Adds `data` (params, cost) to the model and refits the residual
/// ensemble on everything seen so far.
pub fn train_surrogate(mut model: Surrogate, data: &[(ScheduleParams, f64)]) -> Surrogate {
    for (p, cost) in data {
        let x = model.features(p);
        model.data.push((x, cost.ln()));
    }
    if model.data.is_empty() {
        return model;
    }
    let xs: Vec<Features> = model.data.iter().map(|(x, _)| *x).collect();
    let ys: Vec<f64> = model
        .data
        .iter()
        .map(|(x, y)| y - model.prior.as_ref().map_or(0.0, |m| m.predict(x)))
        .collect();
    model.residual = Some(Boosted::fit(&xs, &ys, model.rounds, model.learning_rate).0);
    model
}

/// Fits the frozen prior to analytical predictions on `n_samples` points of
/// `space` drawn without replacement.
pub fn pretrain_from_analytical(mut model: Surrogate, space: &[ScheduleParams], n_samples: usize, seed: u64) -> Surrogate {
    if n_samples == 0 || space.is_empty() {
        return model;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, space.len(), n_samples.min(space.len()));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in picks.iter() {
        if let Ok(b) = predict(&model.workload, &space[i], &model.hw) {
            xs.push(model.features(&space[i]));
            ys.push(b.t_kernel.ln());
        }
    }
    if !xs.is_empty() {
        model.prior = Some(Boosted::fit(&xs, &ys, model.rounds, model.learning_rate).0);
    }
    model
}
