//! Structural validation.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::visit::Path;
use super::{simplify, Access, Expr, Program, Scope, Stmt};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Statement path; empty for declaration-level problems.
    pub path: Path,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            let p: Vec<String> = self.path.iter().map(|i| i.to_string()).collect();
            write!(f, "stmt {}: {}", p.join("."), self.message)
        }
    }
}

/// Number of operands a built-in op tag requires; `None` for opaque tags.
pub fn builtin_arity(op: &str) -> Option<usize> {
    match op {
        "mma" => Some(3),
        "add" | "mul" => Some(2),
        "id" | "neg" | "inc" | "relu" | "sq" => Some(1),
        _ => None,
    }
}

struct Checker<'a> {
    scopes: HashMap<&'a str, (Scope, usize)>,
    groups: HashSet<&'a str>,
    bound: Vec<&'a str>,
    written: HashSet<&'a str>,
    reported_unwritten: HashSet<&'a str>,
    out: Vec<Diagnostic>,
    path: Path,
}

impl<'a> Checker<'a> {
    fn report(&mut self, message: String) {
        self.out.push(Diagnostic { path: self.path.clone(), message });
    }

    fn expr(&mut self, e: &Expr) {
        let mut unbound = BTreeSet::new();
        e.for_each_var(&mut |v| {
            if !self.bound.contains(&v) {
                unbound.insert(v.to_string());
            }
        });
        for v in unbound {
            self.report(format!("unbound variable `{v}`"));
        }
        self.divisors(e);
    }

    fn divisors(&mut self, e: &Expr) {
        if let Expr::FloorDiv(_, d) | Expr::Mod(_, d) = e {
            match simplify(d).ok().and_then(|d| d.as_int()) {
                Some(c) if c > 0 => {}
                _ => self.report(format!("divisor `{d}` is not a positive constant")),
            }
        }
        if let Some((l, r)) = e.operands() {
            self.divisors(l);
            self.divisors(r);
        }
    }

    fn access(&mut self, a: &'a Access, is_write: bool) -> Option<Scope> {
        for e in &a.indices {
            self.expr(e);
        }
        let Some(&(scope, rank)) = self.scopes.get(a.buffer.as_str()) else {
            self.report(format!("undeclared buffer `{}`", a.buffer));
            return None;
        };
        if rank != a.indices.len() {
            self.report(format!(
                "buffer `{}` has rank {rank} but is indexed with {} indices",
                a.buffer,
                a.indices.len()
            ));
        }
        let name = a.buffer.as_str();
        if is_write {
            self.written.insert(name);
        } else if scope != Scope::Global
            && !self.written.contains(name)
            && self.reported_unwritten.insert(name)
        {
            self.report(format!("local buffer `{name}` is read before it is written"));
        }
        Some(scope)
    }

    fn body(&mut self, body: &'a [Stmt]) {
        for (i, s) in body.iter().enumerate() {
            self.path.push(i);
            self.stmt(s);
            self.path.pop();
        }
    }

    fn stmt(&mut self, s: &'a Stmt) {
        match s {
            Stmt::For { var, extent, body, .. } => {
                if *extent == 0 {
                    self.report(format!("zero-extent loop `{var}`"));
                } else if *extent < 0 {
                    self.report(format!("negative extent {extent} on loop `{var}`"));
                }
                if self.bound.contains(&var.as_str()) {
                    self.report(format!("loop variable `{var}` shadows an enclosing loop"));
                }
                self.bound.push(var);
                self.body(body);
                self.bound.pop();
            }
            Stmt::Block(body) => self.body(body),
            Stmt::Predicated { cond, body } => {
                self.expr(cond);
                self.body(body);
            }
            Stmt::AsyncCopy { dst, src } => {
                let from = self.access(src, false);
                let to = self.access(dst, true);
                if let (Some(from), Some(to)) = (from, to) {
                    if to >= from {
                        self.report(format!(
                            "copy direction violates hierarchy: {} `{}` <- {} `{}`",
                            to, dst.buffer, from, src.buffer
                        ));
                    }
                }
            }
            Stmt::Compute { dst, op, operands, .. } => {
                for o in operands {
                    self.access(&o.access, false);
                }
                self.access(dst, true);
                if let Some(n) = builtin_arity(op) {
                    if n != operands.len() {
                        self.report(format!(
                            "`{op}` takes {n} operands, found {}",
                            operands.len()
                        ));
                    }
                }
            }
            Stmt::Sync { kind, group } => {
                if !self.groups.contains(group.as_str()) {
                    self.report(format!(
                        "{} names undeclared pipeline group `{group}`",
                        kind.keyword()
                    ));
                }
            }
        }
    }
}

/// Checks every structural invariant of `p`. An empty result means the
/// program is well formed.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut decl = |message: String| out.push(Diagnostic { path: Vec::new(), message });

    let mut scopes = HashMap::new();
    for b in &p.buffers {
        if scopes.insert(b.name.as_str(), (b.scope, b.shape.len())).is_some() {
            decl(format!("duplicate buffer name `{}`", b.name));
        }
        if b.shape.is_empty() {
            decl(format!("buffer `{}` has no dimensions", b.name));
        }
        if let Some(d) = b.shape.iter().find(|&&d| d < 1) {
            decl(format!("buffer `{}` has non-positive dimension {d}", b.name));
        }
        match b.stages {
            Some(_) if b.scope == Scope::Global => {
                decl(format!("global buffer `{}` cannot carry pipeline stages", b.name))
            }
            Some(s) if s < 2 => decl(format!("buffer `{}` needs at least 2 stages, got {s}", b.name)),
            _ => {}
        }
    }
    let mut groups = HashSet::new();
    for g in &p.groups {
        if !groups.insert(g.name.as_str()) {
            decl(format!("duplicate pipeline group `{}`", g.name));
        }
        if g.capacity < 1 {
            decl(format!("pipeline group `{}` has zero capacity", g.name));
        }
        if let Some(b) = p.buffer(&g.name) {
            if b.scope != g.scope {
                decl(format!(
                    "pipeline group `{}` is {} but its buffer is {}",
                    g.name, g.scope, b.scope
                ));
            }
        }
    }

    let mut c = Checker {
        scopes,
        groups,
        bound: Vec::new(),
        written: HashSet::new(),
        reported_unwritten: HashSet::new(),
        out,
        path: Vec::new(),
    };
    c.body(&p.body);
    c.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_program_unchecked;

    fn diags(text: &str) -> Vec<Diagnostic> {
        validate(&parse_program_unchecked(text).unwrap())
    }

    #[test]
    fn tiled_matmul_is_clean() {
        let text = "\
buffer A global f32[4, 4];
buffer B global f32[4, 4];
buffer C global f32[4, 4];
buffer A_shared shared f32[2, 2] stages 2;
for i par 0..2 {
  for j par 0..2 {
    for ko seq 0..2 {
      for ai seq 0..2 {
        for ak seq 0..2 {
          copy_async A_shared[ai, ak] <- A[i * 2 + ai, ko * 2 + ak];
        }
      }
      for mi seq 0..2 {
        for ni seq 0..2 {
          for ki seq 0..2 {
            C[i * 2 + mi, j * 2 + ni] = mma(C[i * 2 + mi, j * 2 + ni], A_shared[mi, ki], B[ko * 2 + ki, j * 2 + ni]) flops 2;
          }
        }
      }
    }
  }
}
";
        assert_eq!(diags(text), vec![]);
    }

    #[test]
    fn upward_copy_is_flagged() {
        let d = diags(
            "buffer G global f32[4];\nbuffer S shared f32[4];\n\
             for i seq 0..4 { copy_async S[i] <- G[i]; copy_async G[i] <- S[i]; }",
        );
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("copy direction violates hierarchy"));
        assert_eq!(d[0].path, vec![0, 1]);
    }

    #[test]
    fn unbound_variable_is_named() {
        let d = diags("buffer G global f32[4];\nbuffer S shared f32[4];\nfor i seq 0..4 { copy_async S[kz] <- G[i]; }");
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("`kz`"), "{}", d[0]);
    }

    #[test]
    fn declaration_rules() {
        let d = diags(
            "buffer A global f32[4] stages 2;\nbuffer A shared f32[0];\nbuffer R register f32[2] stages 1;\n\
             pipeline R shared capacity 2;",
        );
        let msgs: Vec<&str> = d.iter().map(|d| d.message.as_str()).collect();
        assert_eq!(msgs.len(), 5, "{msgs:?}");
        assert!(msgs.iter().any(|m| m.contains("duplicate buffer")));
        assert!(msgs.iter().any(|m| m.contains("cannot carry pipeline stages")));
        assert!(msgs.iter().any(|m| m.contains("non-positive dimension")));
        assert!(msgs.iter().any(|m| m.contains("at least 2 stages")));
        assert!(msgs.iter().any(|m| m.contains("is shared but its buffer is register")));
    }

    #[test]
    fn local_read_before_write() {
        let d = diags(
            "buffer G global f32[4];\nbuffer S shared f32[4];\nbuffer O global f32[4];\n\
             for i seq 0..4 { O[i] = id(S[i]) flops 0; copy_async S[i] <- G[i]; }",
        );
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("read before it is written"));
    }

    #[test]
    fn sync_group_and_arity() {
        let d = diags(
            "buffer O global f32[4];\nfor i seq 0..4 { consumer_wait X; O[i] = mma(O[i], O[i]) flops 2; }",
        );
        assert_eq!(d.len(), 2);
        assert!(d[0].message.contains("undeclared pipeline group `X`"));
        assert!(d[1].message.contains("takes 3 operands"));
    }

    #[test]
    fn shadowing_rank_and_divisor() {
        let d = diags(
            "buffer O global f32[4];\nfor i seq 0..4 { for i seq 0..2 { O[i % 0] = id(O[i, i]) flops 0; } }",
        );
        let msgs: Vec<&str> = d.iter().map(|d| d.message.as_str()).collect();
        assert_eq!(msgs.len(), 3, "{msgs:?}");
        assert!(msgs[0].contains("shadows"));
        assert!(msgs.iter().any(|m| m.contains("rank 1")));
        assert!(msgs.iter().any(|m| m.contains("positive constant")));
    }
}
