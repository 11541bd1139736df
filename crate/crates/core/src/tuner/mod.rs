//! Design-space search for GEMM schedules.
//!
//! Four strategies are compared on the same space and the same simulated
//! measurements:
//!
//! * `Grid`: measure points in enumeration order.
//! * `AnalyticalOnly`: measure points in the order the latency model ranks them.
//! * `Surrogate`: a boosted-stump cost model, refit after every batch, steers
//!   simulated-annealing proposals; the first batch is random.
//! * `ModelAssisted`: the same loop, with the cost model first pretrained on
//!   latency-model predictions.

mod search;
mod surrogate;

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf::{occupancy, predict, HardwareSpec, ScheduleParams};
use crate::sim::{measure_ground_truth, GroundTruthConfig};
use crate::workload::WorkloadDesc;

pub use search::{accept_probability, neighbor, sa_propose};
pub use surrogate::{
    features, pretrain_from_analytical, train_surrogate, Boosted, CostModel, Features, Stump, Surrogate, N_FEATURES,
};

/// Candidate values per schedule parameter; the space is their product
/// minus invalid or unschedulable points.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub workload: WorkloadDesc,
    pub tile_m: Vec<u64>,
    pub tile_n: Vec<u64>,
    pub tile_k: Vec<u64>,
    pub reg_tile_m: Vec<u64>,
    pub reg_tile_n: Vec<u64>,
    pub reg_tile_k: Vec<u64>,
    pub n_smem_pipe_stage: Vec<u64>,
    pub n_reg_pipe_stage: Vec<u64>,
    pub n_warp_per_threadblk: Vec<u64>,
}

impl DesignSpace {
    /// 2048³ half-precision GEMM with the usual power-of-two tilings.
    pub fn example() -> Self {
        DesignSpace {
            workload: WorkloadDesc::gemm(2048, 2048, 2048),
            tile_m: vec![32, 64, 128, 256],
            tile_n: vec![32, 64, 128, 256],
            tile_k: vec![16, 32, 64],
            reg_tile_m: vec![16, 32, 64],
            reg_tile_n: vec![16, 32, 64],
            reg_tile_k: vec![8, 16],
            n_smem_pipe_stage: vec![2, 3, 4, 5],
            n_reg_pipe_stage: vec![2, 3],
            n_warp_per_threadblk: vec![1, 2, 4, 8],
        }
    }

    pub(crate) fn axes(&self) -> [&Vec<u64>; 9] {
        [
            &self.tile_m,
            &self.tile_n,
            &self.tile_k,
            &self.reg_tile_m,
            &self.reg_tile_n,
            &self.reg_tile_k,
            &self.n_smem_pipe_stage,
            &self.n_reg_pipe_stage,
            &self.n_warp_per_threadblk,
        ]
    }
}

pub(crate) fn params_from(v: [u64; 9]) -> ScheduleParams {
    ScheduleParams {
        tile_m: v[0],
        tile_n: v[1],
        tile_k: v[2],
        reg_tile_m: v[3],
        reg_tile_n: v[4],
        reg_tile_k: v[5],
        n_smem_pipe_stage: v[6],
        n_reg_pipe_stage: v[7],
        n_warp_per_threadblk: v[8],
    }
}

pub(crate) fn params_to(p: &ScheduleParams) -> [u64; 9] {
    [
        p.tile_m,
        p.tile_n,
        p.tile_k,
        p.reg_tile_m,
        p.reg_tile_n,
        p.reg_tile_k,
        p.n_smem_pipe_stage,
        p.n_reg_pipe_stage,
        p.n_warp_per_threadblk,
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TuneError {
    #[error("design space is empty after filtering invalid and unschedulable points")]
    EmptySpace,
    #[error("budget must be at least 1")]
    ZeroBudget,
}

/// Valid points in lexicographic order of candidate positions (first field
/// outermost).
pub fn enumerate_space(d: &DesignSpace, hw: &HardwareSpec) -> Result<Vec<ScheduleParams>, TuneError> {
    let axes = d.axes();
    let mut out = Vec::new();
    if axes.iter().any(|a| a.is_empty()) {
        return Err(TuneError::EmptySpace);
    }
    let mut pos = [0usize; 9];
    loop {
        let mut v = [0u64; 9];
        for i in 0..9 {
            v[i] = axes[i][pos[i]];
        }
        let p = params_from(v);
        if occupancy(&p, &d.workload, hw).is_ok() {
            out.push(p);
        }
        let mut i = 9;
        loop {
            if i == 0 {
                return if out.is_empty() { Err(TuneError::EmptySpace) } else { Ok(out) };
            }
            i -= 1;
            pos[i] += 1;
            if pos[i] < axes[i].len() {
                break;
            }
            pos[i] = 0;
        }
    }
}

/// `space` sorted by predicted kernel latency, ties in input order.
pub fn analytical_rank(space: &[ScheduleParams], w: &WorkloadDesc, hw: &HardwareSpec) -> Vec<ScheduleParams> {
    let mut keyed: Vec<(f64, usize)> = space
        .iter()
        .enumerate()
        .map(|(i, p)| (predict(w, p, hw).map_or(f64::INFINITY, |b| b.t_kernel), i))
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, i)| space[i]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "grid")]
    Grid,
    #[serde(rename = "surrogate")]
    Surrogate,
    #[serde(rename = "analytical")]
    AnalyticalOnly,
    #[serde(rename = "assisted")]
    ModelAssisted,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Grid, Method::Surrogate, Method::AnalyticalOnly, Method::ModelAssisted];

    pub fn name(self) -> &'static str {
        match self {
            Method::Grid => "grid",
            Method::Surrogate => "surrogate",
            Method::AnalyticalOnly => "analytical",
            Method::ModelAssisted => "assisted",
        }
    }

    pub fn from_name(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Measurement settings shared by all trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    pub contention_factor: f64,
    pub noise_sigma: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig { contention_factor: 0.1, noise_sigma: 0.05 }
    }
}

/// Search hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub batch_size: usize,
    pub chains: usize,
    pub steps: usize,
    /// Annealing temperature in log-cost units, decayed geometrically.
    pub t_start: f64,
    pub t_end: f64,
    pub pretrain_samples: usize,
    pub rounds: usize,
    pub learning_rate: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            batch_size: 8,
            chains: 8,
            steps: 100,
            t_start: 0.5,
            t_end: 0.01,
            pretrain_samples: 512,
            rounds: 200,
            learning_rate: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: ScheduleParams,
    pub predicted_cost: Option<f64>,
    pub measured_cost: f64,
    pub trial_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub method: Method,
    pub seed: u64,
    pub trials: Vec<Trial>,
    /// (k, best measured cost among the first k trials) for k = 1..=budget.
    pub best_in_k: Vec<(usize, f64)>,
    /// Exhaustive noiseless best divided by the noiseless cost of the
    /// best-measured point among the first k trials.
    pub normalized_to_exhaustive: Vec<f64>,
}

impl TuningReport {
    pub fn normalized_at(&self, k: usize) -> f64 {
        self.normalized_to_exhaustive[k.min(self.normalized_to_exhaustive.len()) - 1]
    }
}

/// A design space with everything that does not depend on the tuning seed
/// precomputed: enumeration, analytical ranking, noiseless ground truth.
pub struct Study {
    pub space: DesignSpace,
    pub hw: HardwareSpec,
    pub measure: MeasureConfig,
    pub config: TuneConfig,
    pub points: Vec<ScheduleParams>,
    pub ranked: Vec<ScheduleParams>,
    index: HashMap<ScheduleParams, usize>,
    noiseless: Vec<f64>,
    pub exhaustive_best: f64,
}

impl Study {
    pub fn new(space: DesignSpace, hw: HardwareSpec, measure: MeasureConfig, config: TuneConfig) -> Result<Study, TuneError> {
        let points = enumerate_space(&space, &hw)?;
        let ranked = analytical_rank(&points, &space.workload, &hw);
        let index = points.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let noiseless: Vec<f64> = points
            .iter()
            .map(|p| {
                measure_ground_truth(&GroundTruthConfig {
                    workload: space.workload,
                    params: *p,
                    hw: hw.clone(),
                    contention_factor: measure.contention_factor,
                    noise_sigma: 0.0,
                    seed: 0,
                })
            })
            .collect();
        let exhaustive_best = noiseless.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Study { space, hw, measure, config, points, ranked, index, noiseless, exhaustive_best })
    }

    pub fn noiseless_cost(&self, p: &ScheduleParams) -> Option<f64> {
        self.index.get(p).map(|&i| self.noiseless[i])
    }

    pub fn contains(&self, p: &ScheduleParams) -> bool {
        self.index.contains_key(p)
    }

    fn measure(&self, p: &ScheduleParams, seed: u64) -> f64 {
        measure_ground_truth(&GroundTruthConfig {
            workload: self.space.workload,
            params: *p,
            hw: self.hw.clone(),
            contention_factor: self.measure.contention_factor,
            noise_sigma: self.measure.noise_sigma,
            seed,
        })
    }

    fn new_surrogate(&self) -> Surrogate {
        Surrogate {
            rounds: self.config.rounds,
            learning_rate: self.config.learning_rate,
            ..Surrogate::new(self.space.workload, self.hw.clone())
        }
    }

    pub fn tune(&self, method: Method, budget: usize, seed: u64) -> Result<TuningReport, TuneError> {
        if budget == 0 {
            return Err(TuneError::ZeroBudget);
        }
        let budget = if budget > self.points.len() {
            log::warn!("budget {budget} exceeds the {} points in the space; clamping", self.points.len());
            self.points.len()
        } else {
            budget
        };
        let mut trials = Vec::with_capacity(budget);
        let mut record = |p: ScheduleParams, predicted: Option<f64>, trials: &mut Vec<Trial>| {
            let measured_cost = self.measure(&p, seed);
            trials.push(Trial { params: p, predicted_cost: predicted, measured_cost, trial_index: trials.len() });
        };
        match method {
            Method::Grid => {
                for p in &self.points[..budget] {
                    record(*p, None, &mut trials);
                }
            }
            Method::AnalyticalOnly => {
                for p in &self.ranked[..budget] {
                    let predicted = predict(&self.space.workload, p, &self.hw).ok().map(|b| b.t_kernel);
                    record(*p, predicted, &mut trials);
                }
            }
            Method::Surrogate | Method::ModelAssisted => {
                let mut model = self.new_surrogate();
                if method == Method::ModelAssisted {
                    model = pretrain_from_analytical(model, &self.points, self.config.pretrain_samples, seed);
                }
                self.model_loop(model, budget, seed, &mut trials, &mut record);
            }
        }
        Ok(self.report(method, seed, trials))
    }

    fn model_loop(
        &self,
        mut model: Surrogate,
        budget: usize,
        seed: u64,
        trials: &mut Vec<Trial>,
        record: &mut dyn FnMut(ScheduleParams, Option<f64>, &mut Vec<Trial>),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f5a);
        let mut measured: HashSet<ScheduleParams> = HashSet::new();
        while trials.len() < budget {
            let want = self.config.batch_size.min(budget - trials.len());
            let mut batch: Vec<(ScheduleParams, Option<f64>)> = Vec::new();
            if model.is_trained() {
                let seen: Vec<(ScheduleParams, f64)> = trials.iter().map(|t| (t.params, t.measured_cost)).collect();
                batch = search::propose_batch(self, &model, &seen, want, &mut rng).into_iter().map(|(p, c)| (p, Some(c))).collect();
            }
            let left: Vec<ScheduleParams> = self.points.iter().filter(|p| !measured.contains(p)).copied().collect();
            let fill = want.saturating_sub(batch.len());
            if fill > 0 {
                let remaining: Vec<ScheduleParams> =
                    left.into_iter().filter(|p| !batch.iter().any(|(q, _)| q == p)).collect();
                for i in sample(&mut rng, remaining.len(), fill.min(remaining.len())).iter() {
                    let p = remaining[i];
                    let predicted = model.is_trained().then(|| model.predict(&p));
                    batch.push((p, predicted));
                }
            }
            let start = trials.len();
            for (p, predicted) in &batch {
                measured.insert(*p);
                record(*p, *predicted, trials);
            }
            let data: Vec<(ScheduleParams, f64)> =
                trials[start..].iter().map(|t| (t.params, t.measured_cost)).collect();
            model.update(&data);
        }
    }

    fn report(&self, method: Method, seed: u64, trials: Vec<Trial>) -> TuningReport {
        let mut best_in_k = Vec::with_capacity(trials.len());
        let mut normalized = Vec::with_capacity(trials.len());
        let mut best: Option<&Trial> = None;
        for (k, t) in trials.iter().enumerate() {
            if best.is_none_or(|b| t.measured_cost < b.measured_cost) {
                best = Some(t);
            }
            let b = best.expect("at least one trial");
            best_in_k.push((k + 1, b.measured_cost));
            let truth = self.noiseless_cost(&b.params).expect("trial comes from the space");
            normalized.push(self.exhaustive_best / truth);
        }
        TuningReport { method, seed, trials, best_in_k, normalized_to_exhaustive: normalized }
    }
}

/// One-shot convenience around [`Study`].
pub fn tune(
    method: Method,
    budget: usize,
    d: &DesignSpace,
    hw: &HardwareSpec,
    measure: MeasureConfig,
    seed: u64,
) -> Result<TuningReport, TuneError> {
    Study::new(d.clone(), hw.clone(), measure, TuneConfig::default())?.tune(method, budget, seed)
}
