//! The pipelining pass: analysis of hinted buffers followed by the program
//! rewrite that turns load-and-use loops into multi-stage pipelines.
//!
//! For a buffer with `s` stages rotating along loop `v` (extent `E`) the
//! rewrite gives the buffer a leading slot dimension of size `s`, makes the
//! copy at iteration `v` fetch chunk `(v + s - 1) % E` into slot
//! `(v + s - 1) % s`, lets consumers read slot `v % s`, primes the first
//! `s - 1` chunks before the loop and guards loads and uses with the four
//! synchronization primitives.
//!
//! A buffer whose producer is itself pipelined (shared -> register) runs a
//! nested pipeline that is fused across iterations of the outer loop: its
//! step counter is `g = v * F + u`, so the look-ahead of the last inner
//! iterations reaches into the next outer chunk.

mod analysis;
mod rewrite;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::visit::Path;
use crate::ir::{validate, Diagnostic, Program, Scope};
use crate::schedule::Rule;

pub use analysis::{
    analyze, collect_hints, decide_prologue_sites, find_pipelined_loop, reconstruct_producers,
    record_regions,
};
pub use rewrite::{expand_buffers, inject_prologues, inject_sync, shift_and_wrap_indices};

/// Where a buffer's prologue goes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "path", rename_all = "snake_case")]
pub enum PrologueSite {
    /// Immediately before the loop at this path.
    BeforeLoop(Path),
    /// At the head of the body of the loop at this path, guarded by the
    /// loop variable being 0.
    LoopHead(Path),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferPipelineInfo {
    pub buffer: String,
    pub scope: Scope,
    pub stages: u32,
    pub producer_tensor: String,
    /// The `copy_async` that fills the buffer.
    pub producer_copy: Path,
    /// Statements that read the buffer.
    pub consumers: Vec<Path>,
    pub loop_var: String,
    pub loop_extent: i64,
    pub loop_path: Path,
    /// Child of the pipelined loop body that contains the copy.
    pub load_region: Path,
    /// First and last child of the pipelined loop body that read the buffer.
    pub use_region: (Path, Path),
    pub prologue_site: PrologueSite,
    /// Buffer this one copies from, when that buffer is pipelined too.
    pub parent: Option<String>,
}

impl BufferPipelineInfo {
    fn paths_mut(&mut self) -> Vec<&mut Path> {
        let mut v = vec![
            &mut self.producer_copy,
            &mut self.loop_path,
            &mut self.load_region,
            &mut self.use_region.0,
            &mut self.use_region.1,
        ];
        v.extend(self.consumers.iter_mut());
        match &mut self.prologue_site {
            PrologueSite::BeforeLoop(p) | PrologueSite::LoopHead(p) => v.push(p),
        }
        v
    }
}

/// Analysis result, outermost pipelines first.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelinePlan {
    pub buffers: Vec<BufferPipelineInfo>,
}

impl PipelinePlan {
    pub fn get(&self, buffer: &str) -> Option<&BufferPipelineInfo> {
        self.buffers.iter().find(|b| b.buffer == buffer)
    }

    pub fn children<'a>(&'a self, buffer: &'a str) -> impl Iterator<Item = &'a BufferPipelineInfo> + 'a {
        self.buffers.iter().filter(move |b| b.parent.as_deref() == Some(buffer))
    }

    /// Number of chunks a root pipeline must have visible ahead of its
    /// current iteration so that fused inner pipelines can read ahead:
    /// `ceil((t - 1) / F)` maximised over children.
    pub fn lookahead(&self, buffer: &str) -> u32 {
        self.children(buffer)
            .map(|c| (c.stages as i64 - 1 + c.loop_extent - 1) / c.loop_extent)
            .max()
            .unwrap_or(0) as u32
    }

    /// Re-targets every stored path after the statement list at `list` was
    /// rebuilt; `map[i]` is the new index of old child `i`.
    fn remap(&mut self, list: &[usize], map: &[usize]) {
        let depth = list.len();
        for info in &mut self.buffers {
            for p in info.paths_mut() {
                if p.len() > depth && p.starts_with(list) {
                    p[depth] = map[p[depth]];
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("input program is invalid:\n{}", join(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("`{0}` is not written by any copy")]
    NoProducer(String),
    #[error("`{0}` is written by a compute statement, not an asynchronous copy")]
    ComputeProducer(String),
    #[error("ambiguous producer: `{0}` is written by more than one copy")]
    AmbiguousProducer(String),
    #[error("no sequential loop to pipeline `{0}` along")]
    NoSequentialLoop(String),
    #[error("consumer escapes pipelined loop: `{buffer}` is read outside loop `{var}`")]
    ConsumerEscapes { buffer: String, var: String },
    #[error("`{0}` is never read inside its pipelined loop")]
    NoConsumer(String),
    #[error("load of `{0}` does not precede its use inside the pipelined loop")]
    LoadAfterUse(String),
    #[error("loop `{child_var}` of `{child}` must sit directly in the body of loop `{parent_var}` of `{parent}`")]
    NotNested { child: String, child_var: String, parent: String, parent_var: String },
    #[error("`{child}` looks {ahead} steps ahead but `{parent}` only keeps {room} steps in flight")]
    LookaheadTooDeep { child: String, parent: String, ahead: i64, room: i64 },
    #[error("transformed program is invalid (internal error):\n{}", join(.0))]
    Internal(Vec<Diagnostic>),
}

fn join(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

impl PipelineError {
    /// The eligibility rule a failure corresponds to, when there is one.
    pub fn rule(&self) -> Option<Rule> {
        match self {
            PipelineError::ComputeProducer(_) | PipelineError::NoProducer(_) => Some(Rule::NotAsyncProducer),
            PipelineError::NoSequentialLoop(_) => Some(Rule::NoSequentialLoop),
            _ => None,
        }
    }
}

/// Runs the full pass. Programs without hints come back unchanged.
pub fn transform(p: &Program) -> Result<Program, PipelineError> {
    transform_with_plan(p).map(|(p, _)| p)
}

/// Like [`transform`], also returning the analysis result (with paths into
/// the input program).
pub fn transform_with_plan(p: &Program) -> Result<(Program, PipelinePlan), PipelineError> {
    let diags = validate(p);
    if !diags.is_empty() {
        return Err(PipelineError::Invalid(diags));
    }
    let plan = analyze(p)?;
    if plan.buffers.is_empty() {
        return Ok((p.clone(), plan));
    }
    let out = expand_buffers(p, &plan);
    let out = shift_and_wrap_indices(&out, &plan);
    let (out, working) = inject_prologues(&out, &plan);
    let (out, _) = inject_sync(&out, &working);
    let diags = validate(&out);
    if !diags.is_empty() {
        return Err(PipelineError::Internal(diags));
    }
    Ok((out, plan))
}
