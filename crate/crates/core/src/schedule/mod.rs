//! Schedule primitives over a tensor dataflow graph, the buffer eligibility
//! rules for pipelining, primitive ordering, and lowering to the IR.

mod lower;
mod script;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{LoopKind, Scope};
use crate::workload::WorkloadDesc;

pub use script::{parse_script, ScriptError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProducerKind {
    ExternalInput,
    AsyncCopyFrom(String),
    /// `fused[i]` is an elementwise op applied to `inputs[i]` on read,
    /// left behind by inlining.
    ComputeFrom { inputs: Vec<String>, op: String, fused: Vec<Option<String>> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorNode {
    pub name: String,
    pub producer: ProducerKind,
    pub scope: Scope,
    /// Iteration axes indexing this tensor, outermost dimension first.
    pub axes: Vec<String>,
    /// Loop the buffer is placed inside; `None` picks the default position.
    pub attach: Option<String>,
    pub stages: Option<u32>,
    /// Set when pipelining was refused because of a sync-position conflict.
    pub refused: bool,
}

impl TensorNode {
    fn new(name: &str, producer: ProducerKind, scope: Scope, axes: &[&str]) -> Self {
        TensorNode {
            name: name.to_string(),
            producer,
            scope,
            axes: axes.iter().map(|a| a.to_string()).collect(),
            attach: None,
            stages: None,
            refused: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub extent: i64,
    pub reduction: bool,
    /// Batch axes stay outermost regardless of tiling.
    pub batch: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchLoop {
    pub var: String,
    pub extent: i64,
    pub kind: LoopKind,
    pub axis: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Primitive {
    CacheRead { tensor: String, scope: Scope, name: Option<String>, at: Option<String> },
    Tile { tensor: String, parts: Vec<(String, i64)> },
    Pipeline { buffer: String, stages: u32 },
    Inline { tensor: String },
}

impl Primitive {
    /// Position in the required order cache_read/tile, pipeline, inline.
    fn phase(&self) -> u8 {
        match self {
            Primitive::CacheRead { .. } | Primitive::Tile { .. } => 0,
            Primitive::Pipeline { .. } => 1,
            Primitive::Inline { .. } => 2,
        }
    }

    fn verb(&self) -> &'static str {
        match self {
            Primitive::CacheRead { .. } => "cache_read",
            Primitive::Tile { .. } => "tile",
            Primitive::Pipeline { .. } => "pipeline",
            Primitive::Inline { .. } => "inline",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Primitive::CacheRead { tensor, scope, name, at } => {
                write!(f, "cache_read {tensor} {scope}")?;
                if let Some(n) = name {
                    write!(f, " {n}")?;
                }
                if let Some(a) = at {
                    write!(f, " at {a}")?;
                }
                Ok(())
            }
            Primitive::Tile { tensor, parts } => {
                write!(f, "tile {tensor}")?;
                for (p, e) in parts {
                    write!(f, " {p}={e}")?;
                }
                Ok(())
            }
            Primitive::Pipeline { buffer, stages } => write!(f, "pipeline {buffer} {stages}"),
            Primitive::Inline { tensor } => write!(f, "inline {tensor}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    NotAsyncProducer,
    NoSequentialLoop,
    SyncPositionConflict,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::NotAsyncProducer => "NotAsyncProducer",
            Rule::NoSequentialLoop => "NoSequentialLoop",
            Rule::SyncPositionConflict => "SyncPositionConflict",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityReport {
    pub buffer: String,
    pub eligible: bool,
    pub failed_rule: Option<Rule>,
    pub explanation: String,
}

impl EligibilityReport {
    fn ok(buffer: &str, explanation: String) -> Self {
        EligibilityReport { buffer: buffer.into(), eligible: true, failed_rule: None, explanation }
    }

    fn fail(buffer: &str, rule: Rule, explanation: String) -> Self {
        EligibilityReport {
            buffer: buffer.into(),
            eligible: false,
            failed_rule: Some(rule),
            explanation,
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum ScheduleError {
    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),
    #[error("tensor name `{0}` already exists")]
    DuplicateName(String),
    #[error("cannot cache `{tensor}` ({from}) into {to}: target scope must be below the source")]
    ScopeNotBelow { tensor: String, from: Scope, to: Scope },
    #[error("`{0}` is not the output tensor; only the output nest can be tiled")]
    NotOutput(String),
    #[error("loop part `{0}` does not name an axis")]
    UnknownAxis(String),
    #[error("loop name `{0}` used twice")]
    DuplicateLoop(String),
    #[error("split of axis `{axis}` multiplies to {product}, extent is {extent}")]
    NonDivisible { axis: String, product: i64, extent: i64 },
    #[error("no loop named `{0}` in the loop sketch")]
    UnknownLoop(String),
    #[error("buffer `{buffer}` must be placed inside its source `{parent}`")]
    AttachOrder { buffer: String, parent: String },
    #[error("pipelining needs at least 2 stages, got {0}")]
    BadStages(u32),
    #[error("ordering violation: {0}")]
    Ordering(String),
    #[error("cannot pipeline `{}`: {} ({})", .report.buffer, .report.failed_rule.map(|r| r.to_string()).unwrap_or_default(), .report.explanation)]
    Ineligible { report: EligibilityReport, state: Box<ScheduleState> },
    #[error("`{0}` is not a unary elementwise computation")]
    NotElementwise(String),
    #[error("cannot fuse into `{0}`: operand already carries a fused op")]
    FusionConflict(String),
    #[error("unsupported workload: {0}")]
    Unsupported(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub graph: Vec<TensorNode>,
    pub applied: Vec<Primitive>,
    pub axes: Vec<Axis>,
    /// Loop parts per axis (parallel to `axes`), outer to inner. `None`
    /// until the first `tile`.
    pub splits: Option<Vec<Vec<(String, i64)>>>,
    pub output: String,
    /// Set for the GEMM family; `lower` refuses anything else.
    pub workload: Option<WorkloadDesc>,
}

impl ScheduleState {
    /// `C = A * B`, optionally with an elementwise pre-op producing `A_pre`
    /// from `A`.
    pub fn gemm(w: &WorkloadDesc, pre_op: Option<&str>) -> Self {
        let batched = w.batch > 1;
        let with_b = |axes: &[&'static str]| -> Vec<&'static str> {
            let mut v = if batched { vec!["b"] } else { vec![] };
            v.extend_from_slice(axes);
            v
        };
        let mut graph = vec![
            TensorNode::new("A", ProducerKind::ExternalInput, Scope::Global, &with_b(&["m", "k"])),
            TensorNode::new("B", ProducerKind::ExternalInput, Scope::Global, &with_b(&["k", "n"])),
        ];
        let mut lhs = "A";
        if let Some(op) = pre_op {
            graph.push(TensorNode::new(
                "A_pre",
                ProducerKind::ComputeFrom {
                    inputs: vec!["A".into()],
                    op: op.into(),
                    fused: vec![None],
                },
                Scope::Global,
                &with_b(&["m", "k"]),
            ));
            lhs = "A_pre";
        }
        graph.push(TensorNode::new(
            "C",
            ProducerKind::ComputeFrom {
                inputs: vec![lhs.into(), "B".into()],
                op: "mma".into(),
                fused: vec![None, None],
            },
            Scope::Global,
            &with_b(&["m", "n"]),
        ));
        let mut axes = Vec::new();
        if batched {
            axes.push(Axis { name: "b".into(), extent: w.batch as i64, reduction: false, batch: true });
        }
        for (name, extent, reduction) in [("m", w.m, false), ("n", w.n, false), ("k", w.k, true)] {
            axes.push(Axis { name: name.into(), extent: extent as i64, reduction, batch: false });
        }
        ScheduleState {
            graph,
            applied: Vec::new(),
            axes,
            splits: None,
            output: "C".into(),
            workload: Some(*w),
        }
    }

    /// A 2-D elementwise stencil `Y[i, j] = add(X[i, j], X[i, j])` whose
    /// loops are all parallel.
    pub fn stencil(h: i64, w: i64) -> Self {
        ScheduleState {
            graph: vec![
                TensorNode::new("X", ProducerKind::ExternalInput, Scope::Global, &["i", "j"]),
                TensorNode::new(
                    "Y",
                    ProducerKind::ComputeFrom {
                        inputs: vec!["X".into(), "X".into()],
                        op: "add".into(),
                        fused: vec![None, None],
                    },
                    Scope::Global,
                    &["i", "j"],
                ),
            ],
            applied: Vec::new(),
            axes: vec![
                Axis { name: "i".into(), extent: h, reduction: false, batch: false },
                Axis { name: "j".into(), extent: w, reduction: false, batch: false },
            ],
            splits: None,
            output: "Y".into(),
            workload: None,
        }
    }

    pub fn node(&self, name: &str) -> Option<&TensorNode> {
        self.graph.iter().find(|n| n.name == name)
    }

    fn node_mut(&mut self, name: &str) -> Option<&mut TensorNode> {
        self.graph.iter_mut().find(|n| n.name == name)
    }

    fn require(&self, name: &str) -> Result<&TensorNode, ScheduleError> {
        self.node(name).ok_or_else(|| ScheduleError::UnknownTensor(name.into()))
    }

    fn consumers(&self, name: &str) -> Vec<String> {
        self.graph
            .iter()
            .filter(|n| match &n.producer {
                ProducerKind::AsyncCopyFrom(s) => s == name,
                ProducerKind::ComputeFrom { inputs, .. } => inputs.iter().any(|i| i == name),
                ProducerKind::ExternalInput => false,
            })
            .map(|n| n.name.clone())
            .collect()
    }

    fn source_of(&self, node: &TensorNode) -> Option<&TensorNode> {
        match &node.producer {
            ProducerKind::AsyncCopyFrom(s) => self.node(s),
            ProducerKind::ComputeFrom { inputs, .. } if node.scope != Scope::Global => {
                self.node(&inputs[0])
            }
            _ => None,
        }
    }

    /// True for shared/register buffers created by `cache_read`.
    pub fn is_buffer(&self, name: &str) -> bool {
        self.node(name).is_some_and(|n| n.scope != Scope::Global)
    }

    fn axis_parts(&self) -> Vec<Vec<(String, i64)>> {
        match &self.splits {
            Some(s) => s.clone(),
            None => self.axes.iter().map(|a| vec![(a.name.clone(), a.extent)]).collect(),
        }
    }

    /// The loop nest of the output computation: batch axes, outer parts of
    /// spatial axes, all reduction parts, then the innermost spatial parts.
    /// Falls back to one loop per axis when untiled.
    pub fn loop_sketch(&self) -> Vec<SketchLoop> {
        let parts = self.axis_parts();
        let mut out = Vec::new();
        let mk = |ax: &Axis, (var, extent): &(String, i64)| SketchLoop {
            var: var.clone(),
            extent: *extent,
            kind: if ax.reduction { LoopKind::Sequential } else { LoopKind::Parallel },
            axis: ax.name.clone(),
        };
        for (ax, ps) in self.axes.iter().zip(&parts) {
            if ax.batch {
                out.extend(ps.iter().map(|p| mk(ax, p)));
            }
        }
        for (ax, ps) in self.axes.iter().zip(&parts) {
            if !ax.batch && !ax.reduction {
                out.extend(ps[..ps.len() - 1].iter().map(|p| mk(ax, p)));
            }
        }
        for (ax, ps) in self.axes.iter().zip(&parts) {
            if ax.reduction {
                out.extend(ps.iter().map(|p| mk(ax, p)));
            }
        }
        for (ax, ps) in self.axes.iter().zip(&parts) {
            if !ax.batch && !ax.reduction {
                out.push(mk(ax, ps.last().unwrap()));
            }
        }
        out
    }

    /// Number of sketch loops enclosing the buffer's copy (0 = at the root).
    pub fn attach_depth(&self, name: &str) -> Result<usize, ScheduleError> {
        let node = self.require(name)?;
        if node.scope == Scope::Global {
            return Ok(0);
        }
        let sketch = self.loop_sketch();
        let depth = match &node.attach {
            Some(var) => {
                1 + sketch
                    .iter()
                    .position(|l| &l.var == var)
                    .ok_or_else(|| ScheduleError::UnknownLoop(var.clone()))?
            }
            None => {
                let seq = sketch.iter().enumerate().filter(|(_, l)| l.kind == LoopKind::Sequential);
                let pick = match node.scope {
                    Scope::Shared => seq.map(|(i, _)| i).next(),
                    _ => seq.map(|(i, _)| i).next_back(),
                };
                pick.map_or(0, |i| i + 1)
            }
        };
        if let Some(src) = self.source_of(node) {
            if src.scope != Scope::Global && self.attach_depth(&src.name)? > depth {
                return Err(ScheduleError::AttachOrder {
                    buffer: name.into(),
                    parent: src.name.clone(),
                });
            }
        }
        Ok(depth)
    }

    /// Sketch loops that enclose the buffer's copy, outermost first.
    pub fn enclosing_loops(&self, name: &str) -> Result<Vec<SketchLoop>, ScheduleError> {
        let depth = self.attach_depth(name)?;
        let mut sketch = self.loop_sketch();
        sketch.truncate(depth);
        Ok(sketch)
    }

    /// The loop along which the buffer's chunks would rotate: the innermost
    /// sequential loop enclosing its copy.
    pub fn pipelined_loop(&self, name: &str) -> Result<Option<SketchLoop>, ScheduleError> {
        Ok(self
            .enclosing_loops(name)?
            .into_iter()
            .rev()
            .find(|l| l.kind == LoopKind::Sequential))
    }

    fn with_applied(mut self, p: Primitive) -> Self {
        self.applied.push(p);
        self
    }

    fn check_order(&self, p: &Primitive) -> Result<(), ScheduleError> {
        if let Some(later) = self.applied.iter().find(|a| a.phase() > p.phase()) {
            return Err(ScheduleError::Ordering(format!(
                "{} must come before {}",
                p.verb(),
                later.verb()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Primitive) -> Result<ScheduleState, ScheduleError> {
        match p {
            Primitive::CacheRead { tensor, scope, name, at } => {
                self.cache_read_as(tensor, *scope, name.as_deref(), at.as_deref())
            }
            Primitive::Tile { tensor, parts } => {
                let parts: Vec<(&str, i64)> = parts.iter().map(|(n, e)| (n.as_str(), *e)).collect();
                self.tile(tensor, &parts)
            }
            Primitive::Pipeline { buffer, stages } => self.mark_pipeline(buffer, *stages),
            Primitive::Inline { tensor } => self.inline(tensor),
        }
    }

    pub fn cache_read(&self, tensor: &str, scope: Scope) -> Result<ScheduleState, ScheduleError> {
        self.cache_read_as(tensor, scope, None, None)
    }

    /// Inserts a read buffer `name` (default `<tensor>_buf`) between
    /// `tensor` and its consumers, optionally placed inside loop `at`.
    pub fn cache_read_as(
        &self,
        tensor: &str,
        scope: Scope,
        name: Option<&str>,
        at: Option<&str>,
    ) -> Result<ScheduleState, ScheduleError> {
        let prim = Primitive::CacheRead {
            tensor: tensor.into(),
            scope,
            name: name.map(String::from),
            at: at.map(String::from),
        };
        self.check_order(&prim)?;
        let src = self.require(tensor)?;
        if scope >= src.scope {
            return Err(ScheduleError::ScopeNotBelow {
                tensor: tensor.into(),
                from: src.scope,
                to: scope,
            });
        }
        let buf = name.map_or_else(|| format!("{tensor}_buf"), String::from);
        if self.node(&buf).is_some() {
            return Err(ScheduleError::DuplicateName(buf));
        }
        if let Some(var) = at {
            if self.splits.is_some() && !self.loop_sketch().iter().any(|l| l.var == var) {
                return Err(ScheduleError::UnknownLoop(var.into()));
            }
        }
        let mut s = self.clone();
        for n in &mut s.graph {
            match &mut n.producer {
                ProducerKind::AsyncCopyFrom(x) if x == tensor => *x = buf.clone(),
                ProducerKind::ComputeFrom { inputs, .. } => {
                    for i in inputs.iter_mut().filter(|i| *i == tensor) {
                        *i = buf.clone();
                    }
                }
                _ => {}
            }
        }
        let axes = src.axes.clone();
        s.graph.push(TensorNode {
            name: buf,
            producer: ProducerKind::AsyncCopyFrom(tensor.into()),
            scope,
            axes,
            attach: at.map(String::from),
            stages: None,
            refused: false,
        });
        Ok(s.with_applied(prim))
    }

    /// Splits axes of the output nest. Each part is `(loop name, extent)`;
    /// a part belongs to the axis whose name is its longest prefix, and the
    /// extents of an axis's parts must multiply to the axis extent.
    pub fn tile(&self, tensor: &str, parts: &[(&str, i64)]) -> Result<ScheduleState, ScheduleError> {
        let prim = Primitive::Tile {
            tensor: tensor.into(),
            parts: parts.iter().map(|(n, e)| (n.to_string(), *e)).collect(),
        };
        self.check_order(&prim)?;
        self.require(tensor)?;
        if tensor != self.output {
            return Err(ScheduleError::NotOutput(tensor.into()));
        }
        let mut grouped: Vec<Vec<(String, i64)>> = vec![Vec::new(); self.axes.len()];
        for (name, extent) in parts {
            let axis = self
                .axes
                .iter()
                .enumerate()
                .filter(|(_, a)| name.starts_with(a.name.as_str()))
                .max_by_key(|(_, a)| a.name.len())
                .map(|(i, _)| i)
                .ok_or_else(|| ScheduleError::UnknownAxis(name.to_string()))?;
            grouped[axis].push((name.to_string(), *extent));
        }
        let mut splits = self.axis_parts();
        for (i, g) in grouped.into_iter().enumerate() {
            if g.is_empty() {
                continue;
            }
            let product = g.iter().map(|(_, e)| *e).product::<i64>();
            let ax = &self.axes[i];
            if product != ax.extent || g.iter().any(|(_, e)| *e < 1) {
                return Err(ScheduleError::NonDivisible {
                    axis: ax.name.clone(),
                    product,
                    extent: ax.extent,
                });
            }
            splits[i] = g;
        }
        let mut seen = std::collections::HashSet::new();
        for (n, _) in splits.iter().flatten() {
            if !seen.insert(n.as_str()) {
                return Err(ScheduleError::DuplicateLoop(n.clone()));
            }
        }
        let mut s = self.clone();
        s.splits = Some(splits);
        Ok(s.with_applied(prim))
    }

    /// Applies the three eligibility rules in order and reports the first
    /// failure.
    pub fn check_eligibility(&self, buffer: &str) -> EligibilityReport {
        let Some(node) = self.node(buffer) else {
            return EligibilityReport::fail(
                buffer,
                Rule::NotAsyncProducer,
                format!("`{buffer}` does not exist"),
            );
        };
        let source = match &node.producer {
            ProducerKind::AsyncCopyFrom(src) => src,
            ProducerKind::ComputeFrom { op, .. } => {
                return EligibilityReport::fail(
                    buffer,
                    Rule::NotAsyncProducer,
                    format!("`{buffer}` is produced by compute op `{op}`, not by an asynchronous copy"),
                )
            }
            ProducerKind::ExternalInput => {
                return EligibilityReport::fail(
                    buffer,
                    Rule::NotAsyncProducer,
                    format!("`{buffer}` is an external input"),
                )
            }
        };
        let lp = match self.pipelined_loop(buffer) {
            Ok(Some(lp)) => lp,
            Ok(None) => {
                return EligibilityReport::fail(
                    buffer,
                    Rule::NoSequentialLoop,
                    format!("`{buffer}` is loaded outside of any sequential loop"),
                )
            }
            Err(e) => return EligibilityReport::fail(buffer, Rule::NoSequentialLoop, e.to_string()),
        };
        if node.refused {
            return EligibilityReport::fail(
                buffer,
                Rule::SyncPositionConflict,
                format!("`{buffer}` was refused after a sync-position conflict"),
            );
        }
        if node.scope == Scope::Shared {
            for other in &self.graph {
                if other.name == buffer || other.scope != Scope::Shared || other.stages.is_none() {
                    continue;
                }
                if let Ok(Some(olp)) = self.pipelined_loop(&other.name) {
                    if olp.var != lp.var {
                        return EligibilityReport::fail(
                            buffer,
                            Rule::SyncPositionConflict,
                            format!(
                                "`{buffer}` would synchronize in loop `{}` but `{}` already does in loop `{}`",
                                lp.var, other.name, olp.var
                            ),
                        );
                    }
                }
            }
        }
        EligibilityReport::ok(
            buffer,
            format!("copied asynchronously from `{source}`, pipelined along `{}`", lp.var),
        )
    }

    pub fn mark_pipeline(&self, buffer: &str, stages: u32) -> Result<ScheduleState, ScheduleError> {
        let prim = Primitive::Pipeline { buffer: buffer.into(), stages };
        if stages < 2 {
            return Err(ScheduleError::BadStages(stages));
        }
        self.require(buffer)?;
        if self.splits.is_none() {
            return Err(ScheduleError::Ordering("pipeline requires loop sketch".into()));
        }
        let report = self.check_eligibility(buffer);
        if !report.eligible {
            let mut state = self.clone();
            if report.failed_rule == Some(Rule::SyncPositionConflict) {
                let lp = self.pipelined_loop(buffer).ok().flatten().map(|l| l.var);
                for n in &mut state.graph {
                    let conflicting = n.scope == Scope::Shared
                        && n.stages.is_some()
                        && self.pipelined_loop(&n.name).ok().flatten().map(|l| l.var) != lp;
                    if n.name == buffer || conflicting {
                        n.stages = None;
                        n.refused = true;
                    }
                }
            }
            return Err(ScheduleError::Ineligible { report, state: Box::new(state) });
        }
        self.check_order(&prim)?;
        let mut s = self.clone();
        s.node_mut(buffer).unwrap().stages = Some(stages);
        Ok(s.with_applied(prim))
    }

    /// Inlines a unary elementwise computation into its consumers. A
    /// consumer that is an already-pipelined buffer keeps its asynchronous
    /// copy (now from the computation's input) and the op is fused into the
    /// compute that reads the buffer.
    pub fn inline(&self, tensor: &str) -> Result<ScheduleState, ScheduleError> {
        let prim = Primitive::Inline { tensor: tensor.into() };
        self.check_order(&prim)?;
        let node = self.require(tensor)?;
        let (src, f) = match &node.producer {
            ProducerKind::ComputeFrom { inputs, op, fused }
                if inputs.len() == 1 && fused[0].is_none() && tensor != self.output =>
            {
                (inputs[0].clone(), op.clone())
            }
            _ => return Err(ScheduleError::NotElementwise(tensor.into())),
        };
        let mut s = self.clone();
        for consumer in self.consumers(tensor) {
            let c = self.node(&consumer).unwrap();
            match &c.producer {
                ProducerKind::AsyncCopyFrom(_) if c.stages.is_some() => {
                    s.node_mut(&consumer).unwrap().producer = ProducerKind::AsyncCopyFrom(src.clone());
                    s.fuse_downstream(&consumer, &f)?;
                }
                ProducerKind::AsyncCopyFrom(_) => {
                    s.node_mut(&consumer).unwrap().producer = ProducerKind::ComputeFrom {
                        inputs: vec![src.clone()],
                        op: f.clone(),
                        fused: vec![None],
                    };
                }
                ProducerKind::ComputeFrom { .. } => s.fuse_operand(&consumer, tensor, &src, &f)?,
                ProducerKind::ExternalInput => unreachable!(),
            }
        }
        s.graph.retain(|n| n.name != tensor);
        Ok(s.with_applied(prim))
    }

    /// Fuses `f` into the computation reached from `buffer` through a chain
    /// of copies.
    fn fuse_downstream(&mut self, buffer: &str, f: &str) -> Result<(), ScheduleError> {
        for consumer in self.consumers(buffer) {
            let c = self.node(&consumer).unwrap();
            match &c.producer {
                ProducerKind::AsyncCopyFrom(_) => self.fuse_downstream(&consumer, f)?,
                ProducerKind::ComputeFrom { .. } => self.fuse_operand(&consumer, buffer, buffer, f)?,
                ProducerKind::ExternalInput => unreachable!(),
            }
        }
        Ok(())
    }

    fn fuse_operand(&mut self, consumer: &str, old: &str, new: &str, f: &str) -> Result<(), ScheduleError> {
        let node = self.node_mut(consumer).unwrap();
        let ProducerKind::ComputeFrom { inputs, fused, .. } = &mut node.producer else {
            unreachable!()
        };
        for (inp, fz) in inputs.iter_mut().zip(fused.iter_mut()) {
            if inp == old {
                if fz.is_some() {
                    return Err(ScheduleError::FusionConflict(consumer.into()));
                }
                *inp = new.into();
                *fz = Some(f.into());
            }
        }
        Ok(())
    }

    /// Applies primitives in order.
    pub fn apply_all(&self, prims: &[Primitive]) -> Result<ScheduleState, ScheduleError> {
        prims.iter().try_fold(self.clone(), |s, p| s.apply(p))
    }
}
