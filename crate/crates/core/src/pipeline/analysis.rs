//! Analysis steps: hints, producers, pipelined loop, regions, prologue sites.

use super::{BufferPipelineInfo, PipelineError, PipelinePlan, PrologueSite};
use crate::ir::visit::{self, Path};
use crate::ir::{LoopKind, Program, Stmt};

/// Buffers carrying a stage count, in declaration order.
pub fn collect_hints(p: &Program) -> Vec<(String, u32)> {
    p.buffers
        .iter()
        .filter_map(|b| b.stages.map(|s| (b.name.clone(), s)))
        .collect()
}

/// Locates the single copy writing each hinted buffer and every statement
/// reading it. Loop and region fields are left empty for the later steps.
pub fn reconstruct_producers(
    p: &Program,
    hints: &[(String, u32)],
) -> Result<Vec<BufferPipelineInfo>, PipelineError> {
    let mut out = Vec::new();
    for (name, stages) in hints {
        let mut copies: Vec<(Path, String)> = Vec::new();
        let mut computed = false;
        let mut consumers = Vec::new();
        visit::walk(&p.body, &mut |path, s| {
            match s {
                Stmt::AsyncCopy { dst, src } if &dst.buffer == name => {
                    copies.push((path.to_vec(), src.buffer.clone()))
                }
                Stmt::Compute { dst, .. } if &dst.buffer == name => computed = true,
                _ => {}
            }
            if visit::reads(s).iter().any(|a| &a.buffer == name) {
                consumers.push(path.to_vec());
            }
        });
        if computed {
            return Err(PipelineError::ComputeProducer(name.clone()));
        }
        let (producer_copy, producer_tensor) = match copies.len() {
            0 => return Err(PipelineError::NoProducer(name.clone())),
            1 => copies.pop().unwrap(),
            _ => return Err(PipelineError::AmbiguousProducer(name.clone())),
        };
        let parent = hints.iter().any(|(h, _)| *h == producer_tensor).then(|| producer_tensor.clone());
        out.push(BufferPipelineInfo {
            buffer: name.clone(),
            scope: p.buffer(name).expect("hint on a declared buffer").scope,
            stages: *stages,
            producer_tensor,
            producer_copy,
            consumers,
            loop_var: String::new(),
            loop_extent: 0,
            loop_path: Vec::new(),
            load_region: Vec::new(),
            use_region: (Vec::new(), Vec::new()),
            prologue_site: PrologueSite::BeforeLoop(Vec::new()),
            parent,
        });
    }
    Ok(out)
}

/// Walks the loops around the producer copy from the inside out and picks
/// the first sequential one whose variable does not index the destination.
pub fn find_pipelined_loop(
    p: &Program,
    info: &BufferPipelineInfo,
) -> Result<(String, i64, Path), PipelineError> {
    let Some(Stmt::AsyncCopy { dst, .. }) = visit::get(&p.body, &info.producer_copy) else {
        return Err(PipelineError::NoProducer(info.buffer.clone()));
    };
    for depth in (1..info.producer_copy.len()).rev() {
        let prefix = &info.producer_copy[..depth];
        if let Some(Stmt::For { var, extent, kind: LoopKind::Sequential, .. }) = visit::get(&p.body, prefix) {
            if !dst.indices.iter().any(|e| e.uses_var(var)) {
                return Ok((var.clone(), *extent, prefix.to_vec()));
            }
        }
    }
    Err(PipelineError::NoSequentialLoop(info.buffer.clone()))
}

/// Load region: the loop-body child holding the copy. Use region: the
/// smallest run of loop-body children holding every read.
pub fn record_regions(info: &BufferPipelineInfo) -> Result<BufferPipelineInfo, PipelineError> {
    let lp = &info.loop_path;
    let d = lp.len();
    let mut info = info.clone();
    let mut lo = usize::MAX;
    let mut hi = 0;
    for c in &info.consumers {
        if !visit::is_ancestor(lp, c) {
            return Err(PipelineError::ConsumerEscapes {
                buffer: info.buffer.clone(),
                var: info.loop_var.clone(),
            });
        }
        lo = lo.min(c[d]);
        hi = hi.max(c[d]);
    }
    if info.consumers.is_empty() {
        return Err(PipelineError::NoConsumer(info.buffer.clone()));
    }
    let load = info.producer_copy[d];
    if load >= lo {
        return Err(PipelineError::LoadAfterUse(info.buffer.clone()));
    }
    let child = |i: usize| {
        let mut v = lp.clone();
        v.push(i);
        v
    };
    info.load_region = child(load);
    info.use_region = (child(lo), child(hi));
    Ok(info)
}

/// Root pipelines prime right before their loop; nested ones at the head
/// of the outermost ancestor's loop body, on its first iteration.
pub fn decide_prologue_sites(plan: &PipelinePlan) -> PipelinePlan {
    let mut out = plan.clone();
    for info in &mut out.buffers {
        let mut root = info.clone();
        while let Some(parent) = root.parent.as_ref().and_then(|n| plan.get(n)) {
            root = parent.clone();
        }
        info.prologue_site = if root.buffer == info.buffer {
            PrologueSite::BeforeLoop(info.loop_path.clone())
        } else {
            PrologueSite::LoopHead(root.loop_path.clone())
        };
    }
    out
}

/// Every analysis step in order, plus the structural checks a nested
/// pipeline must pass.
pub fn analyze(p: &Program) -> Result<PipelinePlan, PipelineError> {
    let hints = collect_hints(p);
    let mut infos = reconstruct_producers(p, &hints)?;
    for info in &mut infos {
        let (var, extent, path) = find_pipelined_loop(p, info)?;
        info.loop_var = var;
        info.loop_extent = extent;
        info.loop_path = path;
        *info = record_regions(info)?;
    }
    let depth = |i: &BufferPipelineInfo| {
        let mut d = 0;
        let mut cur = i.parent.clone();
        while let Some(n) = cur {
            d += 1;
            cur = infos.iter().find(|x| x.buffer == n).and_then(|x| x.parent.clone());
        }
        d
    };
    let mut order: Vec<(usize, usize)> = infos.iter().enumerate().map(|(i, x)| (depth(x), i)).collect();
    order.sort();
    let plan = PipelinePlan { buffers: order.into_iter().map(|(_, i)| infos[i].clone()).collect() };

    for child in &plan.buffers {
        let Some(parent) = child.parent.as_ref().and_then(|n| plan.get(n)) else { continue };
        let direct = child.loop_path.len() == parent.loop_path.len() + 1
            && child.loop_path.starts_with(&parent.loop_path);
        if !direct {
            return Err(PipelineError::NotNested {
                child: child.buffer.clone(),
                child_var: child.loop_var.clone(),
                parent: parent.buffer.clone(),
                parent_var: parent.loop_var.clone(),
            });
        }
        let ahead = child.stages as i64 - 1;
        let room = (parent.stages as i64 - 1) * child.loop_extent;
        if ahead > room {
            return Err(PipelineError::LookaheadTooDeep {
                child: child.buffer.clone(),
                parent: parent.buffer.clone(),
                ahead,
                room,
            });
        }
    }
    Ok(decide_prologue_sites(&plan))
}
