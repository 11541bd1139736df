//! Closed-form latency model for a tiled, two-level pipelined GEMM kernel.
//!
//! All times are abstract cycles. A kernel runs in batches of threadblocks;
//! each threadblock runs an initial load, a shared-memory main loop whose
//! "use" part is itself a register-level pipeline, and an epilogue.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::WorkloadDesc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub num_sm: u64,
    /// FLOPs per cycle per SM.
    pub throughput_sm: f64,
    /// Bytes per cycle, device-wide.
    pub bw_llc: f64,
    pub bw_dram: f64,
    pub bw_dram_write: f64,
    pub lat_llc_read: f64,
    pub lat_dram_read: f64,
    pub lat_dram_write: f64,
    /// Bytes per SM.
    pub smem_per_sm: u64,
    pub regs_per_sm: u64,
    pub max_threadblk_per_sm: u64,
    pub max_warps_per_sm: u64,
    /// Resident warps at which compute utilization saturates.
    pub util_knee_warps: u64,
    /// Shared-memory bandwidth per SM (bytes per cycle) and latency, used
    /// for shared-to-register loads.
    pub bw_smem: f64,
    pub lat_smem: f64,
}

impl HardwareSpec {
    /// A mid-size datacenter GPU in round numbers.
    pub fn desk() -> Self {
        HardwareSpec {
            num_sm: 108,
            throughput_sm: 1024.0,
            bw_llc: 2048.0,
            bw_dram: 1024.0,
            bw_dram_write: 1024.0,
            lat_llc_read: 200.0,
            lat_dram_read: 400.0,
            lat_dram_write: 500.0,
            smem_per_sm: 164 * 1024,
            regs_per_sm: 256 * 1024,
            max_threadblk_per_sm: 16,
            max_warps_per_sm: 64,
            util_knee_warps: 8,
            bw_smem: 128.0,
            lat_smem: 30.0,
        }
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        let floats = [
            self.throughput_sm,
            self.bw_llc,
            self.bw_dram,
            self.bw_dram_write,
            self.lat_llc_read,
            self.lat_dram_read,
            self.lat_dram_write,
            self.bw_smem,
            self.lat_smem,
        ];
        let ints = [
            self.num_sm,
            self.smem_per_sm,
            self.regs_per_sm,
            self.max_threadblk_per_sm,
            self.max_warps_per_sm,
            self.util_knee_warps,
        ];
        if floats.iter().all(|x| x.is_finite() && *x > 0.0) && ints.iter().all(|x| *x > 0) {
            Ok(())
        } else {
            Err(PerfError::InvalidHardware)
        }
    }
}

impl Default for HardwareSpec {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub tile_m: u64,
    pub tile_n: u64,
    pub tile_k: u64,
    pub reg_tile_m: u64,
    pub reg_tile_n: u64,
    pub reg_tile_k: u64,
    pub n_smem_pipe_stage: u64,
    pub n_reg_pipe_stage: u64,
    pub n_warp_per_threadblk: u64,
}

impl ScheduleParams {
    /// Register tiles each warp owns in one threadblock tile.
    pub fn tiles_per_warp(&self) -> u64 {
        self.tile_m * self.tile_n / (self.n_warp_per_threadblk * self.reg_tile_m * self.reg_tile_n)
    }

    /// Structural checks that do not depend on the workload or hardware.
    pub fn validate(&self) -> Result<(), PerfError> {
        let bad = |m: &str| Err(PerfError::InvalidParams(m.to_string()));
        let all = [
            self.tile_m,
            self.tile_n,
            self.tile_k,
            self.reg_tile_m,
            self.reg_tile_n,
            self.reg_tile_k,
            self.n_warp_per_threadblk,
        ];
        if all.contains(&0) {
            return bad("sizes and warp count must be positive");
        }
        if self.n_smem_pipe_stage < 2 || self.n_reg_pipe_stage < 2 {
            return bad("stage counts must be at least 2");
        }
        if !self.tile_m.is_multiple_of(self.reg_tile_m) || !self.tile_n.is_multiple_of(self.reg_tile_n) || !self.tile_k.is_multiple_of(self.reg_tile_k) {
            return bad("register tiles must divide threadblock tiles");
        }
        let reg_tiles = (self.tile_m / self.reg_tile_m) * (self.tile_n / self.reg_tile_n);
        if !reg_tiles.is_multiple_of(self.n_warp_per_threadblk) {
            return bad("register tiles do not split evenly among warps");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub t_kernel: f64,
    pub t_threadblk: f64,
    pub t_init: f64,
    pub t_main_loop: f64,
    pub t_epilogue: f64,
    pub t_smem_load: f64,
    pub t_reg_load: f64,
    pub t_smem_use: f64,
    pub t_compute: f64,
    pub n_threadblk_batch: u64,
    pub n_threadblk_per_sm: u64,
    pub n_threadblk_per_batch: u64,
    pub n_smem_loop: u64,
    pub n_reg_loop: u64,
    pub bytes_one_smem_loop: u64,
    pub bytes_workset: u64,
    pub bytes_output_tile: u64,
    pub flops_one_reg_loop: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occupancy {
    pub n_threadblk_per_sm: u64,
    pub n_threadblk_batch: u64,
    pub n_threadblk_per_batch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PerfError {
    #[error("invalid schedule parameters: {0}")]
    InvalidParams(String),
    #[error("tile {tile} does not divide {dim} = {extent}")]
    NotDivisible { dim: &'static str, tile: u64, extent: u64 },
    #[error("unschedulable: one threadblock needs {need_smem} B shared memory and {need_reg} B registers ({warps} warps)")]
    Unschedulable { need_smem: u64, need_reg: u64, warps: u64 },
    #[error("hardware parameters must all be positive")]
    InvalidHardware,
}

/// Latency of a load-and-use loop of `n_loop` iterations with `n_pipe`
/// stages and `n_mplx` workers sharing the compute unit. When the load is
/// fully hidden the loop costs its compute; otherwise each iteration costs
/// a whole load-plus-use divided among the stages.
pub fn pipeline_latency(t_load: f64, t_use: f64, n_loop: u64, n_pipe: u64, n_mplx: u64) -> f64 {
    if is_compute_bound(t_load, t_use, n_pipe, n_mplx) {
        t_use * n_loop as f64
    } else {
        (t_load + t_use) * n_loop as f64 / n_pipe as f64
    }
}

/// The case selector of [`pipeline_latency`] (inclusive at the boundary).
pub fn is_compute_bound(t_load: f64, t_use: f64, n_pipe: u64, n_mplx: u64) -> bool {
    t_load <= (n_pipe * n_mplx - 1) as f64 * t_use
}

/// Saturating-linear compute utilization.
pub fn util(n_warp_per_threadblk: u64, n_threadblk_per_sm: u64, hw: &HardwareSpec) -> f64 {
    ((n_warp_per_threadblk * n_threadblk_per_sm) as f64 / hw.util_knee_warps as f64).min(1.0)
}

pub fn compute_latency(flops: u64, hw: &HardwareSpec, n_warp: u64, n_tb_per_sm: u64) -> f64 {
    flops as f64 / (hw.throughput_sm * util(n_warp, n_tb_per_sm, hw))
}

/// Global-to-shared load: the slower of the LLC path (every threadblock in
/// the batch fetches its chunk) and the DRAM path (unique bytes only).
pub fn smem_load_latency(bytes_one_smem_loop: u64, bytes_workset: u64, n_tb_per_batch: u64, hw: &HardwareSpec) -> f64 {
    let llc = hw.lat_llc_read + (bytes_one_smem_loop * n_tb_per_batch) as f64 / hw.bw_llc;
    let dram = hw.lat_dram_read + bytes_workset as f64 / hw.bw_dram;
    llc.max(dram)
}

pub fn epilogue_latency(bytes_output_tile: u64, n_tb_per_batch: u64, hw: &HardwareSpec) -> f64 {
    hw.lat_dram_write + (bytes_output_tile * n_tb_per_batch) as f64 / hw.bw_dram_write
}

/// Shared-memory bytes one threadblock reserves.
pub fn smem_need(p: &ScheduleParams, elem_bytes: u64) -> u64 {
    (p.tile_m * p.tile_k + p.tile_k * p.tile_n) * elem_bytes * p.n_smem_pipe_stage
}

/// Register bytes one threadblock reserves for staged operand tiles.
pub fn reg_need(p: &ScheduleParams, elem_bytes: u64) -> u64 {
    (p.reg_tile_m + p.reg_tile_n) * p.reg_tile_k * elem_bytes * p.n_reg_pipe_stage * p.n_warp_per_threadblk
}

fn check_divides(p: &ScheduleParams, w: &WorkloadDesc) -> Result<(), PerfError> {
    for (dim, tile, extent) in [("M", p.tile_m, w.m), ("N", p.tile_n, w.n), ("K", p.tile_k, w.k)] {
        if extent % tile != 0 {
            return Err(PerfError::NotDivisible { dim, tile, extent });
        }
    }
    Ok(())
}

/// Threadblocks resident per SM (limited by shared memory, registers, warp
/// slots and the hardware cap) and the resulting batching of the grid.
pub fn occupancy(p: &ScheduleParams, w: &WorkloadDesc, hw: &HardwareSpec) -> Result<Occupancy, PerfError> {
    p.validate()?;
    check_divides(p, w)?;
    let need_smem = smem_need(p, w.elem_bytes);
    let need_reg = reg_need(p, w.elem_bytes);
    let per_sm = hw
        .max_threadblk_per_sm
        .min(hw.smem_per_sm / need_smem)
        .min(hw.regs_per_sm / need_reg)
        .min(hw.max_warps_per_sm / p.n_warp_per_threadblk);
    if per_sm == 0 {
        return Err(PerfError::Unschedulable { need_smem, need_reg, warps: p.n_warp_per_threadblk });
    }
    let total = (w.m / p.tile_m) * (w.n / p.tile_n) * w.batch;
    let per_batch = per_sm * hw.num_sm;
    Ok(Occupancy {
        n_threadblk_per_sm: per_sm,
        n_threadblk_batch: total.div_ceil(per_batch),
        n_threadblk_per_batch: per_batch,
    })
}

/// Unique A and B bytes one K-chunk of a threadblock batch touches, with
/// threadblocks issued in row-major raster order over the output tiles.
pub fn workset_bytes(p: &ScheduleParams, w: &WorkloadDesc, n_tb_per_batch: u64) -> u64 {
    let (gm, gn) = (w.m / p.tile_m, w.n / p.tile_n);
    let per_matrix = gm * gn;
    let live = n_tb_per_batch.min(per_matrix * w.batch);
    let rows = live.div_ceil(gn);
    let cols = (live / per_matrix) * gn + (live % per_matrix).min(gn);
    (rows * p.tile_m * p.tile_k + cols * p.tile_k * p.tile_n) * w.elem_bytes
}

/// Register-level pipeline inputs: (tRegLoad, flops per register step).
fn reg_step(p: &ScheduleParams, w: &WorkloadDesc, hw: &HardwareSpec) -> (f64, u64) {
    let tiles = p.tiles_per_warp();
    let bytes = tiles * (p.reg_tile_m + p.reg_tile_n) * p.reg_tile_k * w.elem_bytes;
    (hw.lat_smem + bytes as f64 / hw.bw_smem, 2 * p.reg_tile_m * p.reg_tile_n * p.reg_tile_k * tiles)
}

pub fn predict(w: &WorkloadDesc, p: &ScheduleParams, hw: &HardwareSpec) -> Result<LatencyBreakdown, PerfError> {
    let occ = occupancy(p, w, hw)?;
    let n_smem_loop = w.k / p.tile_k;
    let n_reg_loop = p.tile_k / p.reg_tile_k;
    let bytes_one_smem_loop = (p.tile_m * p.tile_k + p.tile_k * p.tile_n) * w.elem_bytes;
    let bytes_workset = workset_bytes(p, w, occ.n_threadblk_per_batch);
    let bytes_output_tile = p.tile_m * p.tile_n * w.elem_bytes;

    let (t_reg_load, flops) = reg_step(p, w, hw);
    let t_compute = compute_latency(flops, hw, p.n_warp_per_threadblk, occ.n_threadblk_per_sm);
    let t_smem_use = pipeline_latency(t_reg_load, t_compute, n_reg_loop, p.n_reg_pipe_stage, p.n_warp_per_threadblk);
    let t_smem_load = smem_load_latency(bytes_one_smem_loop, bytes_workset, occ.n_threadblk_per_batch, hw);
    let t_main_loop = pipeline_latency(t_smem_load, t_smem_use, n_smem_loop, p.n_smem_pipe_stage, occ.n_threadblk_per_sm);
    let t_init = t_smem_load + t_reg_load;
    let t_epilogue = epilogue_latency(bytes_output_tile, occ.n_threadblk_per_batch, hw);
    let t_threadblk = t_init + t_main_loop + t_epilogue;
    Ok(LatencyBreakdown {
        t_kernel: t_threadblk * occ.n_threadblk_batch as f64,
        t_threadblk,
        t_init,
        t_main_loop,
        t_epilogue,
        t_smem_load,
        t_reg_load,
        t_smem_use,
        t_compute,
        n_threadblk_batch: occ.n_threadblk_batch,
        n_threadblk_per_sm: occ.n_threadblk_per_sm,
        n_threadblk_per_batch: occ.n_threadblk_per_batch,
        n_smem_loop,
        n_reg_loop,
        bytes_one_smem_loop,
        bytes_workset,
        bytes_output_tile,
        flops_one_reg_loop: flops,
    })
}

impl LatencyBreakdown {
    /// Two-column text table.
    pub fn table(&self) -> String {
        let v = serde_json::to_value(self).expect("breakdown serializes");
        let mut out = String::new();
        for (k, x) in v.as_object().expect("struct serializes to an object") {
            out += &format!("{k:<24}{x}\n");
        }
        out
    }
}
