//! Rewrite steps: buffer expansion, index shifting and wrapping, prologue
//! and synchronization injection.

use super::{BufferPipelineInfo, PipelinePlan, PrologueSite};
use crate::ir::visit::{self, Path};
use crate::ir::{simplify, Access, Expr, PipelineGroup, Program, Stmt, SyncKind};

/// Adds a leading slot dimension of size `stages` to every pipelined buffer
/// and a placeholder slot index to every access; declares one pipeline
/// group per buffer and drops the hints.
pub fn expand_buffers(p: &Program, plan: &PipelinePlan) -> Program {
    let mut out = p.clone();
    for b in &mut out.buffers {
        if let Some(info) = plan.get(&b.name) {
            b.shape.insert(0, info.stages as i64);
            out.groups.push(PipelineGroup {
                name: b.name.clone(),
                scope: b.scope,
                capacity: info.stages,
            });
        }
        b.stages = None;
    }
    visit::for_each_access_mut(&mut out.body, &mut |a| {
        if plan.get(&a.buffer).is_some() {
            a.indices.insert(0, Expr::int(0));
        }
    });
    out
}

fn simp(e: Expr) -> Expr {
    simplify(&e).expect("pipeline index divisors are positive constants")
}

fn subst(e: &Expr, map: &[(&str, Expr)]) -> Expr {
    simp(e.substitute(&|v| map.iter().find(|(k, _)| *k == v).map(|(_, e)| e.clone())))
}

/// Sets the slot of `buffer`'s access and substitutes the other indices.
fn rewrite_access(a: &mut Access, slot: &Expr, map: &[(&str, Expr)]) {
    a.indices[0] = simp(slot.clone());
    for e in &mut a.indices[1..] {
        *e = subst(e, map);
    }
}

fn rewrite_reads(s: &mut Stmt, buffer: &str, slot: &Expr, map: &[(&str, Expr)]) {
    match s {
        Stmt::AsyncCopy { src, .. } if src.buffer == buffer => rewrite_access(src, slot, map),
        Stmt::Compute { operands, .. } => {
            for o in operands.iter_mut().filter(|o| o.access.buffer == buffer) {
                rewrite_access(&mut o.access, slot, map);
            }
        }
        _ => {}
    }
}

struct Steps {
    /// Copy slot and source substitution for the producer.
    load_slot: Expr,
    load_map: Vec<(String, Expr)>,
    /// Slot read by consumers.
    use_slot: Expr,
}

fn root_steps(info: &BufferPipelineInfo) -> Steps {
    let v = Expr::var(&info.loop_var);
    let s = info.stages as i64;
    let shifted = v.clone() + (s - 1);
    Steps {
        load_slot: shifted.clone().modulo(s),
        load_map: vec![(info.loop_var.clone(), shifted.modulo(info.loop_extent))],
        use_slot: v.modulo(s),
    }
}

/// Global step of a fused inner pipeline: `v * F + u + lookahead`.
fn global_step(child: &BufferPipelineInfo, parent: &BufferPipelineInfo, lookahead: i64) -> Expr {
    Expr::var(&parent.loop_var) * child.loop_extent + Expr::var(&child.loop_var) + lookahead
}

fn child_steps(child: &BufferPipelineInfo, parent: &BufferPipelineInfo) -> Steps {
    let t = child.stages as i64;
    let g = global_step(child, parent, t - 1);
    Steps {
        load_slot: g.modulo(t),
        load_map: Vec::new(),
        use_slot: global_step(child, parent, 0).modulo(t),
    }
}

/// Slot of `parent` and index substitution for the copy of a fused child.
fn carried_read(child: &BufferPipelineInfo, parent: &BufferPipelineInfo) -> (Expr, Vec<(String, Expr)>) {
    let g = global_step(child, parent, child.stages as i64 - 1);
    let f = child.loop_extent;
    let outer = g.clone().floor_div(f);
    (
        outer.clone().modulo(parent.stages as i64),
        vec![
            (child.loop_var.clone(), g.modulo(f)),
            (parent.loop_var.clone(), outer.modulo(parent.loop_extent)),
        ],
    )
}

fn borrow(map: &[(String, Expr)]) -> Vec<(&str, Expr)> {
    map.iter().map(|(k, e)| (k.as_str(), e.clone())).collect()
}

/// Producer copies fetch `stages - 1` iterations ahead into the slot that
/// iteration will read, with the source index wrapped by the loop extent;
/// consumers read the slot of the current iteration.
pub fn shift_and_wrap_indices(p: &Program, plan: &PipelinePlan) -> Program {
    let mut out = p.clone();
    for info in &plan.buffers {
        let parent = info.parent.as_ref().and_then(|n| plan.get(n));
        let steps = match parent {
            Some(parent) => child_steps(info, parent),
            None => root_steps(info),
        };
        if let Some(Stmt::AsyncCopy { dst, src }) = visit::get_mut(&mut out.body, &info.producer_copy) {
            dst.indices[0] = simp(steps.load_slot.clone());
            if parent.is_none() {
                let map = borrow(&steps.load_map);
                for e in &mut src.indices {
                    *e = subst(e, &map);
                }
            }
        }
        for c in &info.consumers {
            let stmt = visit::get_mut(&mut out.body, c).expect("consumer path is valid");
            match plan.children(&info.buffer).find(|ch| &ch.producer_copy == c) {
                Some(child) => {
                    let (slot, map) = carried_read(child, info);
                    rewrite_reads(stmt, &info.buffer, &slot, &borrow(&map));
                }
                None => rewrite_reads(stmt, &info.buffer, &steps.use_slot, &[]),
            }
        }
    }
    out
}

enum Item {
    Old(usize),
    New(Stmt),
}

/// Rebuilds the statement list at `list` (empty = top level) from `items`
/// and keeps the plan's paths pointing at the same statements.
fn splice(p: &mut Program, plan: &mut PipelinePlan, list: &[usize], items: Vec<Item>) {
    let body = if list.is_empty() {
        &mut p.body
    } else {
        visit::get_mut(&mut p.body, list).and_then(Stmt::body_mut).expect("list path names a container")
    };
    let mut old: Vec<Option<Stmt>> = std::mem::take(body).into_iter().map(Some).collect();
    let mut map = vec![usize::MAX; old.len()];
    for item in items {
        match item {
            Item::Old(i) => {
                map[i] = body.len();
                body.push(old[i].take().expect("each old statement is used once"));
            }
            Item::New(s) => body.push(s),
        }
    }
    debug_assert!(old.iter().all(Option::is_none));
    plan.remap(list, &map);
}

fn around(index: usize, len: usize, before: Vec<Stmt>, after: Vec<Stmt>) -> Vec<Item> {
    let mut items: Vec<Item> = (0..index).map(Item::Old).collect();
    items.extend(before.into_iter().map(Item::New));
    items.push(Item::Old(index));
    items.extend(after.into_iter().map(Item::New));
    items.extend((index + 1..len).map(Item::Old));
    items
}

fn list_len(p: &Program, list: &[usize]) -> usize {
    if list.is_empty() {
        p.body.len()
    } else {
        visit::get(&p.body, list).and_then(Stmt::body).map_or(0, Vec::len)
    }
}

fn sync(kind: SyncKind, buffer: &str) -> Stmt {
    Stmt::sync(kind, buffer)
}

/// One primed chunk: acquire, the shifted load region evaluated at an
/// iteration `stages - 1` before the chunk, commit.
fn prologue_chunk(p: &Program, info: &BufferPipelineInfo, map: &[(&str, Expr)]) -> Vec<Stmt> {
    let mut region = vec![visit::get(&p.body, &info.load_region).expect("load region exists").clone()];
    visit::map_exprs(&mut region, &mut |e| subst(e, map));
    let mut out = vec![sync(SyncKind::ProducerAcquire, &info.buffer)];
    out.extend(region);
    out.push(sync(SyncKind::ProducerCommit, &info.buffer));
    out
}

/// Copies the first `stages - 1` chunks, one commit group each.
pub fn inject_prologues(p: &Program, plan: &PipelinePlan) -> (Program, PipelinePlan) {
    let mut out = p.clone();
    let mut plan = plan.clone();
    for i in 0..plan.buffers.len() {
        let info = plan.buffers[i].clone();
        let PrologueSite::BeforeLoop(loop_path) = &info.prologue_site else { continue };
        let back = info.stages as i64 - 1;
        let mut stmts = Vec::new();
        for c in 0..back {
            stmts.extend(prologue_chunk(&out, &info, &[(&info.loop_var, Expr::int(c - back))]));
        }
        let (index, list) = loop_path.split_last().unwrap();
        let items = around(*index, list_len(&out, list), stmts, Vec::new());
        splice(&mut out, &mut plan, list, items);
    }

    let mut heads: Vec<Path> = Vec::new();
    for info in &plan.buffers {
        if let PrologueSite::LoopHead(h) = &info.prologue_site {
            if !heads.contains(h) {
                heads.push(h.clone());
            }
        }
    }
    for head in heads {
        let children: Vec<BufferPipelineInfo> = plan
            .buffers
            .iter()
            .filter(|b| b.prologue_site == PrologueSite::LoopHead(head.clone()))
            .cloned()
            .collect();
        let Some(Stmt::For { var, .. }) = visit::get(&out.body, &head) else { unreachable!() };
        let var = var.clone();
        let mut stmts = Vec::new();
        for child in &children {
            let back = child.stages as i64 - 1;
            for c in 0..back {
                let map = [(var.as_str(), Expr::int(0)), (child.loop_var.as_str(), Expr::int(c - back))];
                stmts.extend(prologue_chunk(&out, child, &map));
            }
        }
        let guard = Stmt::Predicated { cond: Expr::var(&var).equals(0), body: stmts };
        let n = list_len(&out, &head);
        let mut items = vec![Item::New(guard)];
        items.extend((0..n).map(Item::Old));
        splice(&mut out, &mut plan, &head, items);
    }
    (out, plan)
}

/// Guards loads with acquire/commit and uses with wait/release inside each
/// pipelined loop, primes the look-ahead waits of outer pipelines before
/// their loop and drains every group after the outermost loop.
pub fn inject_sync(p: &Program, plan: &PipelinePlan) -> (Program, PipelinePlan) {
    let mut out = p.clone();
    let mut plan = plan.clone();

    let mut loops: Vec<String> = Vec::new();
    for b in &plan.buffers {
        if !loops.contains(&b.loop_var) {
            loops.push(b.loop_var.clone());
        }
    }

    for var in &loops {
        let members: Vec<BufferPipelineInfo> =
            plan.buffers.iter().filter(|b| &b.loop_var == var).cloned().collect();
        let loop_path = members[0].loop_path.clone();
        let d = loop_path.len();
        let n = list_len(&out, &loop_path);
        let mut items = Vec::new();
        for i in 0..n {
            for m in members.iter().filter(|m| m.use_region.0[d] == i) {
                items.push(Item::New(sync(SyncKind::ConsumerWait, &m.buffer)));
            }
            for m in members.iter().filter(|m| m.load_region[d] == i) {
                items.push(Item::New(sync(SyncKind::ProducerAcquire, &m.buffer)));
            }
            items.push(Item::Old(i));
            for m in members.iter().filter(|m| m.load_region[d] == i) {
                items.push(Item::New(sync(SyncKind::ProducerCommit, &m.buffer)));
            }
            for m in members.iter().filter(|m| m.use_region.1[d] == i) {
                items.push(Item::New(sync(SyncKind::ConsumerRelease, &m.buffer)));
            }
        }
        splice(&mut out, &mut plan, &loop_path, items);
    }

    for var in &loops {
        let roots: Vec<BufferPipelineInfo> = plan
            .buffers
            .iter()
            .filter(|b| &b.loop_var == var && b.parent.is_none())
            .cloned()
            .collect();
        if roots.is_empty() {
            continue;
        }
        let mut before = Vec::new();
        let mut drains = Vec::new();
        for r in &roots {
            for _ in 0..plan.lookahead(&r.buffer) {
                before.push(sync(SyncKind::ConsumerWait, &r.buffer));
            }
        }
        for r in &roots {
            for c in plan.children(&r.buffer) {
                for _ in 1..c.stages {
                    drains.push(sync(SyncKind::ConsumerWait, &c.buffer));
                    drains.push(sync(SyncKind::ConsumerRelease, &c.buffer));
                }
            }
        }
        for r in &roots {
            let ahead = plan.lookahead(&r.buffer);
            for _ in 0..ahead {
                drains.push(sync(SyncKind::ConsumerRelease, &r.buffer));
            }
            for _ in ahead + 1..r.stages {
                drains.push(sync(SyncKind::ConsumerWait, &r.buffer));
                drains.push(sync(SyncKind::ConsumerRelease, &r.buffer));
            }
        }
        let (index, list) = roots[0].loop_path.split_last().unwrap();
        let items = around(*index, list_len(&out, list), before, drains);
        splice(&mut out, &mut plan, list, items);
    }
    (out, plan)
}
