//! Statement traversal helpers and statement paths.
//!
//! A path is a list of child indices: `[i]` is the `i`-th top-level
//! statement, `[i, j]` the `j`-th statement in the body of `[i]`, and so on.

use std::collections::BTreeSet;

use super::{Access, Expr, Stmt};

pub type Path = Vec<usize>;

/// Pre-order walk over every statement together with its path.
pub fn walk<'a>(body: &'a [Stmt], f: &mut dyn FnMut(&[usize], &'a Stmt)) {
    fn go<'a>(body: &'a [Stmt], path: &mut Path, f: &mut dyn FnMut(&[usize], &'a Stmt)) {
        for (i, s) in body.iter().enumerate() {
            path.push(i);
            f(path, s);
            if let Some(inner) = s.body() {
                go(inner, path, f);
            }
            path.pop();
        }
    }
    go(body, &mut Vec::new(), f)
}

pub fn get<'a>(body: &'a [Stmt], path: &[usize]) -> Option<&'a Stmt> {
    let (&first, rest) = path.split_first()?;
    let s = body.get(first)?;
    if rest.is_empty() {
        Some(s)
    } else {
        get(s.body()?, rest)
    }
}

pub fn get_mut<'a>(body: &'a mut [Stmt], path: &[usize]) -> Option<&'a mut Stmt> {
    let (&first, rest) = path.split_first()?;
    let s = body.get_mut(first)?;
    if rest.is_empty() {
        Some(s)
    } else {
        get_mut(s.body_mut()?, rest)
    }
}

/// The statement list that contains the statement at `path`.
pub fn parent_list_mut<'a>(body: &'a mut Vec<Stmt>, path: &[usize]) -> Option<&'a mut Vec<Stmt>> {
    match path.split_last()? {
        (_, []) => Some(body),
        (_, parent) => get_mut(body, parent)?.body_mut(),
    }
}

/// Accesses read by a statement (not its children).
pub fn reads(s: &Stmt) -> Vec<&Access> {
    match s {
        Stmt::AsyncCopy { src, .. } => vec![src],
        Stmt::Compute { operands, .. } => operands.iter().map(|o| &o.access).collect(),
        _ => Vec::new(),
    }
}

/// Access written by a statement (not its children).
pub fn write(s: &Stmt) -> Option<&Access> {
    match s {
        Stmt::AsyncCopy { dst, .. } | Stmt::Compute { dst, .. } => Some(dst),
        _ => None,
    }
}

pub fn written_buffers(body: &[Stmt]) -> BTreeSet<&str> {
    let mut out = BTreeSet::new();
    walk(body, &mut |_, s| {
        if let Some(a) = write(s) {
            out.insert(a.buffer.as_str());
        }
    });
    out
}

/// Applies `f` to every access in the tree, reads and writes alike.
pub fn for_each_access_mut(body: &mut [Stmt], f: &mut dyn FnMut(&mut Access)) {
    for s in body {
        match s {
            Stmt::AsyncCopy { dst, src } => {
                f(dst);
                f(src);
            }
            Stmt::Compute { dst, operands, .. } => {
                f(dst);
                for o in operands {
                    f(&mut o.access);
                }
            }
            Stmt::For { body, .. } | Stmt::Predicated { body, .. } | Stmt::Block(body) => {
                for_each_access_mut(body, f)
            }
            Stmt::Sync { .. } => {}
        }
    }
}

/// Rewrites every expression in a statement tree: indices, predicates.
pub fn map_exprs(body: &mut [Stmt], f: &mut dyn FnMut(&Expr) -> Expr) {
    fn conds(body: &mut [Stmt], f: &mut dyn FnMut(&Expr) -> Expr) {
        for s in body {
            if let Stmt::Predicated { cond, .. } = s {
                *cond = f(cond);
            }
            if let Some(inner) = s.body_mut() {
                conds(inner, f);
            }
        }
    }
    conds(body, f);
    for_each_access_mut(body, &mut |a| {
        for e in &mut a.indices {
            *e = f(e);
        }
    });
}

/// True when `prefix` is a proper ancestor of `path`.
pub fn is_ancestor(prefix: &[usize], path: &[usize]) -> bool {
    prefix.len() < path.len() && path.starts_with(prefix)
}
