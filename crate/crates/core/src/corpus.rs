//! Generated GEMM programs used to check the pipelining pass end to end.

use crate::ir::Program;
use crate::schedule::{parse_script, ScheduleError, ScheduleState};
use crate::workload::WorkloadDesc;

pub const SIZES: [u64; 3] = [4, 8, 16];
pub const OUTER_STAGES: [u32; 3] = [2, 3, 4];
pub const INNER_STAGES: [u32; 2] = [2, 3];

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub name: String,
    pub workload: WorkloadDesc,
    pub outer_stages: u32,
    /// Register-level stages; `None` for single-level entries.
    pub inner_stages: Option<u32>,
    /// Has an elementwise pre-op on `A` that gets inlined.
    pub inlined: bool,
    pub script: String,
    pub program: Program,
}

fn split(n: u64) -> (u64, u64) {
    let inner = (n / 2).min(4);
    (n / inner, inner)
}

/// Schedule script for one configuration.
pub fn script(w: &WorkloadDesc, outer: u32, inner: Option<u32>, inlined: bool) -> String {
    let (mo, mi) = split(w.m);
    let (no, ni) = split(w.n);
    let (ko, ki) = split(w.k);
    let a = if inlined { "A_pre" } else { "A" };
    let mut s = format!("cache_read {a} shared A_shared\ncache_read B shared B_shared\n");
    if inner.is_some() {
        s += "cache_read A_shared register A_reg\ncache_read B_shared register B_reg\n";
    }
    s += &format!("tile C mo={mo} mi={mi} no={no} ni={ni} ko={ko} ki={ki}\n");
    s += &format!("pipeline A_shared {outer}\npipeline B_shared {outer}\n");
    if let Some(t) = inner {
        s += &format!("pipeline A_reg {t}\npipeline B_reg {t}\n");
    }
    if inlined {
        s += "inline A_pre\n";
    }
    s
}

pub fn build(w: &WorkloadDesc, outer: u32, inner: Option<u32>, inlined: bool) -> Result<CorpusEntry, ScheduleError> {
    let script = script(w, outer, inner, inlined);
    let prims = parse_script(&script).expect("generated scripts parse");
    let state = ScheduleState::gemm(w, inlined.then_some("inc")).apply_all(&prims)?;
    let program = state.lower(w)?;
    let name = format!(
        "gemm{}x{}x{}_s{}{}{}",
        w.m,
        w.n,
        w.k,
        outer,
        inner.map(|t| format!("_r{t}")).unwrap_or_default(),
        if inlined { "_inline" } else { "" }
    );
    Ok(CorpusEntry { name, workload: *w, outer_stages: outer, inner_stages: inner, inlined, script, program })
}

/// Every size in `SIZES` cubed, with single-level pipelines for each outer
/// stage count, two-level pipelines for each (outer, inner) pair and the
/// inlined pre-op variant (single-level).
pub fn corpus() -> Vec<CorpusEntry> {
    let mut out = Vec::new();
    for &m in &SIZES {
        for &n in &SIZES {
            for &k in &SIZES {
                let w = WorkloadDesc::gemm(m, n, k);
                for &s in &OUTER_STAGES {
                    out.push(build(&w, s, None, false).expect("corpus schedule applies"));
                    for &t in &INNER_STAGES {
                        out.push(build(&w, s, Some(t), false).expect("corpus schedule applies"));
                    }
                    out.push(build(&w, s, None, true).expect("corpus schedule applies"));
                }
            }
        }
    }
    out
}
