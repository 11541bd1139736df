use super::*;
use crate::perf::{predict, HardwareSpec, ScheduleParams};
use crate::workload::WorkloadDesc;

fn cfg(t_load: f64, t_use: f64, n_loop: u64, n_pipe: u64, n_mplx: u64) -> SimConfig {
    SimConfig { t_load, t_use, n_loop, n_pipe, n_mplx }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() / target <= tol
}

#[test]
fn no_load_latency() {
    assert_eq!(simulate_pipeline(&cfg(0.0, 10.0, 8, 1, 1)).0, 80.0);
}

#[test]
fn load_bound_double_buffer() {
    let (m, trace) = simulate_pipeline(&cfg(30.0, 10.0, 64, 2, 1));
    assert!(within(m, 1280.0, 0.10), "{m}");
    // Prime 30, then two iterations per 40 cycles, last compute 10.
    assert_eq!(m, 30.0 + 31.0 * 40.0 + 20.0);
    validate_trace(&trace, &cfg(30.0, 10.0, 64, 2, 1)).unwrap();
}

#[test]
fn compute_bound_four_stages() {
    let (m, _) = simulate_pipeline(&cfg(10.0, 10.0, 64, 4, 1));
    assert!(within(m, 640.0, 0.10), "{m}");
    let r = simulate_stats(&cfg(10.0, 10.0, 64, 4, 1));
    assert_eq!(r.idle_fraction(), 0.0);
}

#[test]
fn shared_unit_serializes_workers() {
    let c = cfg(5.0, 10.0, 16, 2, 3);
    let (m, trace) = simulate_pipeline(&c);
    validate_trace(&trace, &c).unwrap();
    assert!(m >= 3.0 * 16.0 * 10.0);
    let first: Vec<u64> = trace.events.iter().filter(|e| e.kind == EventKind::ComputeStart).take(3).map(|e| e.worker).collect();
    assert_eq!(first, [0, 1, 2]);
}

#[test]
fn validator_rejects_overlap() {
    let c = cfg(0.0, 10.0, 2, 1, 1);
    let (_, mut trace) = simulate_pipeline(&c);
    for e in &mut trace.events {
        if e.kind == EventKind::ComputeStart && e.iteration == 1 {
            e.time = 5.0;
        }
    }
    assert!(validate_trace(&trace, &c).is_err());
}

#[test]
fn two_level_degenerates_to_single_level() {
    let outer = cfg(40.0, 0.0, 16, 3, 1);
    let inner = cfg(0.0, 5.0, 4, 2, 1);
    let single = simulate_pipeline(&cfg(40.0, 20.0, 16, 3, 1)).0;
    assert_eq!(simulate_two_level(&outer, &inner), single);
}

#[test]
fn fused_not_slower_than_restart() {
    let outer = cfg(100.0, 0.0, 32, 2, 1);
    let inner = cfg(20.0, 5.0, 4, 2, 1);
    let fused = simulate_two_level_with(&outer, &inner, InnerPipelining::Fused).makespan;
    let restart = simulate_two_level_with(&outer, &inner, InnerPipelining::Restart).makespan;
    assert!(fused < restart, "{fused} vs {restart}");
}

#[test]
fn two_level_compute_bound_is_total_compute() {
    let outer = cfg(10.0, 0.0, 64, 4, 1);
    let inner = cfg(2.0, 10.0, 8, 3, 1);
    let m = simulate_two_level(&outer, &inner);
    assert!(within(m, 64.0 * 8.0 * 10.0, 0.10), "{m}");
}

fn gt(p: ScheduleParams, hw: HardwareSpec, cf: f64, sigma: f64, seed: u64) -> GroundTruthConfig {
    GroundTruthConfig { workload: WorkloadDesc::gemm(2048, 2048, 2048), params: p, hw, contention_factor: cf, noise_sigma: sigma, seed }
}

fn point(s: u64) -> ScheduleParams {
    ScheduleParams {
        tile_m: 128,
        tile_n: 128,
        tile_k: 32,
        reg_tile_m: 32,
        reg_tile_n: 32,
        reg_tile_k: 16,
        n_smem_pipe_stage: s,
        n_reg_pipe_stage: 2,
        n_warp_per_threadblk: 4,
    }
}

#[test]
fn ground_truth_tracks_model_when_noiseless() {
    let hw = HardwareSpec { max_threadblk_per_sm: 1, ..HardwareSpec::desk() };
    for s in 2..=4 {
        let cost = measure_ground_truth(&gt(point(s), hw.clone(), 0.0, 0.0, 0));
        let model = predict(&WorkloadDesc::gemm(2048, 2048, 2048), &point(s), &hw).unwrap().t_kernel;
        assert!(cost != model && within(cost, model, 0.25), "{s}: {cost} vs {model}");
    }
}

#[test]
fn ground_truth_determinism_noise_and_infinity() {
    let hw = HardwareSpec::desk();
    let a = measure_ground_truth(&gt(point(3), hw.clone(), 0.1, 0.05, 7));
    assert_eq!(a, measure_ground_truth(&gt(point(3), hw.clone(), 0.1, 0.05, 7)));
    assert_ne!(a, measure_ground_truth(&gt(point(3), hw.clone(), 0.1, 0.05, 8)));
    let clean = measure_ground_truth(&gt(point(3), hw.clone(), 0.1, 0.0, 7));
    assert!(within(a, clean, 0.3));
    let more = measure_ground_truth(&gt(point(3), hw.clone(), 0.5, 0.0, 7));
    assert!(more >= clean);
    assert_eq!(measure_ground_truth(&gt(point(64), hw, 0.0, 0.0, 0)), f64::INFINITY);
}
