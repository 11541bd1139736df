//! Loop-nest tensor IR: buffers, loops, asynchronous copies, pipeline
//! synchronization and pipelining hints.

mod expr;
mod parse;
pub(crate) mod print;
mod validate;
pub mod visit;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use expr::{simplify, EvalError, Expr, SimplifyError};
pub use parse::{parse_program, parse_program_unchecked, ParseError};
pub use print::print_program;
pub use validate::{validate, Diagnostic};

/// Memory-hierarchy level. `Global > Shared > Register`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Register,
    Shared,
    Global,
}

impl Scope {
    pub fn keyword(self) -> &'static str {
        match self {
            Scope::Global => "global",
            Scope::Shared => "shared",
            Scope::Register => "register",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Scope> {
        match s {
            "global" => Some(Scope::Global),
            "shared" => Some(Scope::Shared),
            "register" => Some(Scope::Register),
            _ => None,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopKind {
    Sequential,
    Parallel,
    Unrolled,
}

impl LoopKind {
    pub fn keyword(self) -> &'static str {
        match self {
            LoopKind::Sequential => "seq",
            LoopKind::Parallel => "par",
            LoopKind::Unrolled => "unroll",
        }
    }

    pub fn from_keyword(s: &str) -> Option<LoopKind> {
        match s {
            "seq" => Some(LoopKind::Sequential),
            "par" => Some(LoopKind::Parallel),
            "unroll" => Some(LoopKind::Unrolled),
            _ => None,
        }
    }
}

/// Element type of a buffer. Values are interpreted as integers; the type
/// only determines the byte width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    I8,
    F16,
    Bf16,
    F32,
    I32,
    F64,
    I64,
}

impl ElemType {
    pub fn bytes(self) -> u64 {
        match self {
            ElemType::I8 => 1,
            ElemType::F16 | ElemType::Bf16 => 2,
            ElemType::F32 | ElemType::I32 => 4,
            ElemType::F64 | ElemType::I64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemType::I8 => "i8",
            ElemType::F16 => "f16",
            ElemType::Bf16 => "bf16",
            ElemType::F32 => "f32",
            ElemType::I32 => "i32",
            ElemType::F64 => "f64",
            ElemType::I64 => "i64",
        }
    }

    pub fn from_name(s: &str) -> Option<ElemType> {
        [
            ElemType::I8,
            ElemType::F16,
            ElemType::Bf16,
            ElemType::F32,
            ElemType::I32,
            ElemType::F64,
            ElemType::I64,
        ]
        .into_iter()
        .find(|t| t.name() == s)
    }

    /// Floating-point type of the given width, used when lowering workloads.
    pub fn float_of_width(bytes: u64) -> Option<ElemType> {
        match bytes {
            1 => Some(ElemType::I8),
            2 => Some(ElemType::F16),
            4 => Some(ElemType::F32),
            8 => Some(ElemType::F64),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferDecl {
    pub name: String,
    pub scope: Scope,
    pub elem: ElemType,
    pub shape: Vec<i64>,
    /// Pipelining hint: number of stages requested for this buffer.
    pub stages: Option<u32>,
}

impl BufferDecl {
    pub fn new(name: impl Into<String>, scope: Scope, elem: ElemType, shape: Vec<i64>) -> Self {
        BufferDecl { name: name.into(), scope, elem, shape, stages: None }
    }

    pub fn with_stages(mut self, stages: u32) -> Self {
        self.stages = Some(stages);
        self
    }

    pub fn num_elements(&self) -> i64 {
        self.shape.iter().product()
    }

    pub fn bytes(&self) -> u64 {
        self.num_elements() as u64 * self.elem.bytes()
    }
}

/// A pipeline synchronization group: one FIFO of commit groups with a fixed
/// number of slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineGroup {
    pub name: String,
    pub scope: Scope,
    pub capacity: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Access {
    pub buffer: String,
    pub indices: Vec<Expr>,
}

impl Access {
    pub fn new(buffer: impl Into<String>, indices: Vec<Expr>) -> Self {
        Access { buffer: buffer.into(), indices }
    }
}

/// A compute operand, optionally wrapped in a unary elementwise op
/// (the result of fusing an inlined producer into its consumer).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operand {
    pub access: Access,
    pub wrap: Option<String>,
}

impl From<Access> for Operand {
    fn from(access: Access) -> Self {
        Operand { access, wrap: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncKind {
    ProducerAcquire,
    ProducerCommit,
    ConsumerWait,
    ConsumerRelease,
}

impl SyncKind {
    pub fn keyword(self) -> &'static str {
        match self {
            SyncKind::ProducerAcquire => "producer_acquire",
            SyncKind::ProducerCommit => "producer_commit",
            SyncKind::ConsumerWait => "consumer_wait",
            SyncKind::ConsumerRelease => "consumer_release",
        }
    }

    pub fn from_keyword(s: &str) -> Option<SyncKind> {
        [
            SyncKind::ProducerAcquire,
            SyncKind::ProducerCommit,
            SyncKind::ConsumerWait,
            SyncKind::ConsumerRelease,
        ]
        .into_iter()
        .find(|k| k.keyword() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stmt {
    For { var: String, extent: i64, kind: LoopKind, body: Vec<Stmt> },
    Block(Vec<Stmt>),
    AsyncCopy { dst: Access, src: Access },
    Compute { dst: Access, op: String, operands: Vec<Operand>, flops: u64 },
    Sync { kind: SyncKind, group: String },
    Predicated { cond: Expr, body: Vec<Stmt> },
}

impl Stmt {
    pub fn for_loop(var: impl Into<String>, extent: i64, kind: LoopKind, body: Vec<Stmt>) -> Stmt {
        Stmt::For { var: var.into(), extent, kind, body }
    }

    pub fn sync(kind: SyncKind, group: impl Into<String>) -> Stmt {
        Stmt::Sync { kind, group: group.into() }
    }

    /// The nested statement list, for container statements.
    pub fn body(&self) -> Option<&Vec<Stmt>> {
        match self {
            Stmt::For { body, .. } | Stmt::Predicated { body, .. } | Stmt::Block(body) => Some(body),
            _ => None,
        }
    }

    pub fn body_mut(&mut self) -> Option<&mut Vec<Stmt>> {
        match self {
            Stmt::For { body, .. } | Stmt::Predicated { body, .. } | Stmt::Block(body) => Some(body),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub buffers: Vec<BufferDecl>,
    pub groups: Vec<PipelineGroup>,
    pub body: Vec<Stmt>,
}

impl Program {
    pub fn buffer(&self, name: &str) -> Option<&BufferDecl> {
        self.buffers.iter().find(|b| b.name == name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut BufferDecl> {
        self.buffers.iter_mut().find(|b| b.name == name)
    }

    pub fn group(&self, name: &str) -> Option<&PipelineGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Global buffers that no statement writes.
    pub fn inputs(&self) -> Vec<&BufferDecl> {
        let written = visit::written_buffers(&self.body);
        self.buffers
            .iter()
            .filter(|b| b.scope == Scope::Global && !written.contains(b.name.as_str()))
            .collect()
    }

    /// Global buffers written by the program.
    pub fn outputs(&self) -> Vec<&BufferDecl> {
        let written = visit::written_buffers(&self.body);
        self.buffers
            .iter()
            .filter(|b| b.scope == Scope::Global && written.contains(b.name.as_str()))
            .collect()
    }

    /// Shared and register buffers.
    pub fn locals(&self) -> Vec<&BufferDecl> {
        self.buffers.iter().filter(|b| b.scope != Scope::Global).collect()
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_program(self))
    }
}
