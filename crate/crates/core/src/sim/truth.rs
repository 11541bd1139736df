//! Simulated "measurement" of a schedule: the analytical model's inputs
//! replayed through the two-level event simulation, with load contention
//! and multiplicative noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{simulate_two_level_with, InnerPipelining, SimConfig};
use crate::perf::{predict, HardwareSpec, LatencyBreakdown, ScheduleParams};
use crate::workload::WorkloadDesc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthConfig {
    pub workload: WorkloadDesc,
    pub params: ScheduleParams,
    pub hw: HardwareSpec,
    /// Extra load time per additional concurrent loader on an SM.
    pub contention_factor: f64,
    /// Standard deviation of the log of the noise factor.
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Outer and inner simulator inputs derived from a model breakdown.
pub fn sim_configs(b: &LatencyBreakdown, p: &ScheduleParams, contention_factor: f64) -> (SimConfig, SimConfig) {
    let n = b.n_threadblk_per_sm;
    let outer = SimConfig {
        t_load: b.t_smem_load * (1.0 + contention_factor * (n - 1) as f64),
        t_use: b.t_smem_use,
        n_loop: b.n_smem_loop,
        n_pipe: p.n_smem_pipe_stage,
        n_mplx: n,
    };
    let inner = SimConfig {
        t_load: b.t_reg_load,
        t_use: b.t_compute,
        n_loop: b.n_reg_loop,
        n_pipe: p.n_reg_pipe_stage,
        n_mplx: p.n_warp_per_threadblk,
    };
    (outer, inner)
}

fn mix(mut h: u64, x: u64) -> u64 {
    // splitmix64 finalizer over the running state.
    h ^= x.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn noise_seed(seed: u64, w: &WorkloadDesc, p: &ScheduleParams) -> u64 {
    [
        w.m,
        w.n,
        w.k,
        w.batch,
        w.elem_bytes,
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
    .into_iter()
    .fold(seed, mix)
}

/// Kernel cycles for one schedule; `+inf` when it cannot be scheduled.
pub fn measure_ground_truth(g: &GroundTruthConfig) -> f64 {
    let Ok(b) = predict(&g.workload, &g.params, &g.hw) else {
        return f64::INFINITY;
    };
    let (outer, inner) = sim_configs(&b, &g.params, g.contention_factor);
    let main = simulate_two_level_with(&outer, &inner, InnerPipelining::Fused).makespan;
    let cost = (outer.t_load + b.t_reg_load + main + b.t_epilogue) * b.n_threadblk_batch as f64;
    if g.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(g.seed, &g.workload, &g.params));
        let noise = LogNormal::new(0.0, g.noise_sigma).expect("sigma is finite and positive");
        cost * noise.sample(&mut rng)
    } else {
        cost
    }
}
