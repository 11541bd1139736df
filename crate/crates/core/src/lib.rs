//! Automatic multi-stage, multi-level load/compute pipelining for a small
//! loop-nest tensor IR.
//!
//! The crate is organised as a compiler pipeline plus the tooling needed to
//! check and tune it:
//!
//! * [`ir`]: expressions, statements, textual format, validation.
//! * [`schedule`]: schedule primitives, eligibility rules, lowering to IR.
//! * [`pipeline`]: the pipelining analysis and rewrite.
//! * [`interp`]: reference interpreter used as the equivalence oracle.
//! * [`perf`]: closed-form latency model.
//! * [`sim`]: discrete-event pipeline simulator and ground-truth cost.
//! * [`tuner`]: design-space search strategies and reporting.

pub mod corpus;
pub mod interp;
pub mod ir;
pub mod perf;
pub mod pipeline;
pub mod schedule;
pub mod sim;
pub mod tuner;
pub mod workload;

pub use interp::{check_equivalence, ExecMode};
pub use ir::{
    parse_program, print_program, simplify, validate, Access, BufferDecl, Diagnostic, ElemType,
    Expr, LoopKind, Operand, ParseError, PipelineGroup, Program, Scope, Stmt, SyncKind,
};
pub use perf::{predict, HardwareSpec, LatencyBreakdown, ScheduleParams};
pub use pipeline::{transform, PipelineError, PipelinePlan};
pub use schedule::{EligibilityReport, Primitive, Rule, ScheduleError, ScheduleState};
pub use sim::{simulate_pipeline, SimConfig};
pub use tuner::{DesignSpace, Method, TuningReport};
pub use workload::WorkloadDesc;
