//! Lowering a scheduled GEMM into an IR program.

use super::{ProducerKind, ScheduleError, ScheduleState, SketchLoop, TensorNode};
use crate::ir::{simplify, Access, BufferDecl, ElemType, Expr, LoopKind, Operand, Program, Scope, Stmt};
use crate::workload::WorkloadDesc;

/// Index of `node` in terms of the loops of `level`: each axis becomes the
/// mixed-radix combination of its loop parts. Axes with no part in `level`
/// are dropped.
fn index(node: &TensorNode, level: &[SketchLoop]) -> (Vec<i64>, Vec<Expr>) {
    let mut shape = Vec::new();
    let mut idx = Vec::new();
    for axis in &node.axes {
        let parts: Vec<&SketchLoop> = level.iter().filter(|l| &l.axis == axis).collect();
        if parts.is_empty() {
            continue;
        }
        let mut e: Option<Expr> = None;
        let mut stride = 1;
        for p in parts.iter().rev() {
            let term = if stride == 1 { Expr::var(&p.var) } else { Expr::var(&p.var) * stride };
            e = Some(match e {
                None => term,
                Some(rest) => term + rest,
            });
            stride *= p.extent;
        }
        shape.push(stride);
        idx.push(simplify(&e.unwrap()).expect("strides are positive"));
    }
    if shape.is_empty() {
        (vec![1], vec![Expr::int(0)])
    } else {
        (shape, idx)
    }
}

struct Lowering<'a> {
    s: &'a ScheduleState,
    sketch: Vec<SketchLoop>,
    depths: Vec<(String, usize)>,
}

impl Lowering<'_> {
    fn depth(&self, name: &str) -> usize {
        self.depths.iter().find(|(n, _)| n == name).map_or(0, |(_, d)| *d)
    }

    fn access(&self, name: &str) -> Access {
        let node = self.s.node(name).unwrap();
        let d = self.depth(name);
        Access::new(name, index(node, &self.sketch[d..]).1)
    }

    fn copy_nest(&self, node: &TensorNode, d: usize) -> Stmt {
        let dst = self.access(&node.name);
        let inner = match &node.producer {
            ProducerKind::AsyncCopyFrom(src) => Stmt::AsyncCopy { dst, src: self.access(src) },
            ProducerKind::ComputeFrom { inputs, op, .. } => Stmt::Compute {
                dst,
                op: op.clone(),
                operands: vec![self.access(&inputs[0]).into()],
                flops: 1,
            },
            ProducerKind::ExternalInput => unreachable!(),
        };
        let mut loops: Vec<&SketchLoop> = Vec::new();
        for axis in &node.axes {
            loops.extend(self.sketch[d..].iter().filter(|l| &l.axis == axis));
        }
        loops.iter().rev().fold(inner, |body, l| {
            Stmt::for_loop(&l.var, l.extent, LoopKind::Parallel, vec![body])
        })
    }

    fn compute(&self) -> Stmt {
        let out = self.s.node(&self.s.output).unwrap();
        let ProducerKind::ComputeFrom { inputs, op, fused } = &out.producer else { unreachable!() };
        let dst = self.access(&out.name);
        let mut operands: Vec<Operand> = vec![dst.clone().into()];
        for (inp, f) in inputs.iter().zip(fused) {
            operands.push(Operand { access: self.access(inp), wrap: f.clone() });
        }
        Stmt::Compute { dst, op: op.clone(), operands, flops: 2 }
    }

    fn nest(&self, d: usize) -> Vec<Stmt> {
        let mut body: Vec<Stmt> = self
            .s
            .graph
            .iter()
            .filter(|n| n.scope != Scope::Global && self.depth(&n.name) == d)
            .map(|n| self.copy_nest(n, d))
            .collect();
        match self.sketch.get(d) {
            Some(l) => body.push(Stmt::for_loop(&l.var, l.extent, l.kind, self.nest(d + 1))),
            None => body.push(self.compute()),
        }
        body
    }

    /// Whole-tensor nest for a global elementwise producer.
    fn pre_nest(&self, node: &TensorNode) -> Stmt {
        let ProducerKind::ComputeFrom { inputs, op, .. } = &node.producer else { unreachable!() };
        let vars: Vec<Expr> = node.axes.iter().map(Expr::var).collect();
        let inner = Stmt::Compute {
            dst: Access::new(&node.name, vars.clone()),
            op: op.clone(),
            operands: vec![Access::new(&inputs[0], vars).into()],
            flops: 1,
        };
        node.axes.iter().rev().fold(inner, |body, axis| {
            let extent = self.s.axes.iter().find(|a| &a.name == axis).unwrap().extent;
            Stmt::for_loop(axis, extent, LoopKind::Parallel, vec![body])
        })
    }
}

impl ScheduleState {
    /// Emits the loop nest: parallel output-tile loops, sequential reduction
    /// loops, one copy nest per cache-read buffer at its attach point and an
    /// `mma` at the innermost level. Pipeline stages travel on the buffer
    /// declarations; no synchronization is emitted.
    pub fn lower(&self, w: &WorkloadDesc) -> Result<Program, ScheduleError> {
        match self.workload {
            Some(own) if own == *w => {}
            Some(own) => {
                return Err(ScheduleError::Unsupported(format!(
                    "schedule was built for {own:?}, asked to lower {w:?}"
                )))
            }
            None => return Err(ScheduleError::Unsupported("only the GEMM family can be lowered".into())),
        }
        let elem = ElemType::float_of_width(w.elem_bytes)
            .ok_or_else(|| ScheduleError::Unsupported(format!("{}-byte elements", w.elem_bytes)))?;
        let sketch = self.loop_sketch();
        let mut depths = Vec::new();
        for n in &self.graph {
            if n.scope != Scope::Global {
                depths.push((n.name.clone(), self.attach_depth(&n.name)?));
            }
        }
        let lw = Lowering { s: self, sketch, depths };

        let mut buffers = Vec::new();
        for scope in [Scope::Global, Scope::Shared, Scope::Register] {
            for n in self.graph.iter().filter(|n| n.scope == scope) {
                let shape = if scope == Scope::Global {
                    n.axes
                        .iter()
                        .map(|a| self.axes.iter().find(|x| &x.name == a).unwrap().extent)
                        .collect()
                } else {
                    index(n, &lw.sketch[lw.depth(&n.name)..]).0
                };
                let mut decl = BufferDecl::new(&n.name, scope, elem, shape);
                decl.stages = n.stages;
                buffers.push(decl);
            }
        }
        let mut body: Vec<Stmt> = self
            .graph
            .iter()
            .filter(|n| n.scope == Scope::Global && n.name != self.output)
            .filter(|n| matches!(n.producer, ProducerKind::ComputeFrom { .. }))
            .map(|n| lw.pre_nest(n))
            .collect();
        body.extend(lw.nest(0));
        Ok(Program { buffers, groups: Vec::new(), body })
    }
}
