//! Workload descriptions shared by the scheduler, the latency model and the
//! simulator.

use serde::{Deserialize, Serialize};

/// A (batched) GEMM: `C[b] = A[b] * B[b]` with `A: M x K`, `B: K x N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorkloadDesc {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    #[serde(default = "one")]
    pub batch: u64,
    #[serde(default = "two")]
    pub elem_bytes: u64,
}

fn one() -> u64 {
    1
}

fn two() -> u64 {
    2
}

impl WorkloadDesc {
    pub fn gemm(m: u64, n: u64, k: u64) -> Self {
        WorkloadDesc { m, n, k, batch: 1, elem_bytes: 2 }
    }

    pub fn batched(mut self, batch: u64) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_elem_bytes(mut self, elem_bytes: u64) -> Self {
        self.elem_bytes = elem_bytes;
        self
    }

    pub fn flops(&self) -> u64 {
        2 * self.m * self.n * self.k * self.batch
    }

    pub fn is_valid(&self) -> bool {
        self.m > 0 && self.n > 0 && self.k > 0 && self.batch > 0 && self.elem_bytes > 0
    }
}
