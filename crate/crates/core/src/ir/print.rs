//! Canonical textual form.

use std::fmt::{self, Write};

use super::{Access, Expr, Operand, Program, Stmt};

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Eq(..) => 0,
        Expr::Lt(..) => 1,
        Expr::Add(..) => 2,
        Expr::Mul(..) | Expr::FloorDiv(..) | Expr::Mod(..) => 3,
        Expr::Var(_) | Expr::Int(_) | Expr::Min(..) => 4,
    }
}

fn symbol(e: &Expr) -> &'static str {
    match e {
        Expr::Eq(..) => "==",
        Expr::Lt(..) => "<",
        Expr::Add(..) => "+",
        Expr::Mul(..) => "*",
        Expr::FloorDiv(..) => "/",
        Expr::Mod(..) => "%",
        _ => unreachable!(),
    }
}

pub(crate) fn write_expr<W: Write>(w: &mut W, e: &Expr) -> fmt::Result {
    match e {
        Expr::Var(name) => w.write_str(name),
        Expr::Int(v) => write!(w, "{v}"),
        Expr::Min(a, b) => {
            w.write_str("min(")?;
            write_expr(w, a)?;
            w.write_str(", ")?;
            write_expr(w, b)?;
            w.write_str(")")
        }
        _ => {
            let (l, r) = e.operands().unwrap();
            let p = precedence(e);
            write_child(w, l, precedence(l) < p)?;
            write!(w, " {} ", symbol(e))?;
            write_child(w, r, precedence(r) <= p)
        }
    }
}

fn write_child<W: Write>(w: &mut W, e: &Expr, paren: bool) -> fmt::Result {
    if paren {
        w.write_char('(')?;
        write_expr(w, e)?;
        w.write_char(')')
    } else {
        write_expr(w, e)
    }
}

fn write_access<W: Write>(w: &mut W, a: &Access) -> fmt::Result {
    w.write_str(&a.buffer)?;
    w.write_char('[')?;
    for (i, e) in a.indices.iter().enumerate() {
        if i > 0 {
            w.write_str(", ")?;
        }
        write_expr(w, e)?;
    }
    w.write_char(']')
}

fn write_operand<W: Write>(w: &mut W, o: &Operand) -> fmt::Result {
    match &o.wrap {
        Some(f) => {
            write!(w, "{f}(")?;
            write_access(w, &o.access)?;
            w.write_char(')')
        }
        None => write_access(w, &o.access),
    }
}

fn write_stmt(out: &mut String, s: &Stmt, depth: usize) -> fmt::Result {
    let pad = "  ".repeat(depth);
    out.push_str(&pad);
    match s {
        Stmt::For { var, extent, kind, body } => {
            write!(out, "for {var} {} 0..{extent} ", kind.keyword())?;
            write_body(out, body, depth)
        }
        Stmt::Block(body) => write_body(out, body, depth),
        Stmt::Predicated { cond, body } => {
            out.push_str("if ");
            write_expr(out, cond)?;
            out.push(' ');
            write_body(out, body, depth)
        }
        Stmt::AsyncCopy { dst, src } => {
            out.push_str("copy_async ");
            write_access(out, dst)?;
            out.push_str(" <- ");
            write_access(out, src)?;
            out.push_str(";\n");
            Ok(())
        }
        Stmt::Compute { dst, op, operands, flops } => {
            write_access(out, dst)?;
            write!(out, " = {op}(")?;
            for (i, o) in operands.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_operand(out, o)?;
            }
            writeln!(out, ") flops {flops};")
        }
        Stmt::Sync { kind, group } => writeln!(out, "{} {group};", kind.keyword()),
    }
}

fn write_body(out: &mut String, body: &[Stmt], depth: usize) -> fmt::Result {
    if body.is_empty() {
        out.push_str("{ }\n");
        return Ok(());
    }
    out.push_str("{\n");
    for s in body {
        write_stmt(out, s, depth + 1)?;
    }
    out.push_str(&"  ".repeat(depth));
    out.push_str("}\n");
    Ok(())
}

/// Renders `p` in the canonical textual format accepted by
/// [`parse_program`](super::parse_program).
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for b in &p.buffers {
        let dims: Vec<String> = b.shape.iter().map(|d| d.to_string()).collect();
        out.push_str(&format!(
            "buffer {} {} {}[{}]",
            b.name,
            b.scope,
            b.elem.name(),
            dims.join(", ")
        ));
        if let Some(s) = b.stages {
            out.push_str(&format!(" stages {s}"));
        }
        out.push_str(";\n");
    }
    for g in &p.groups {
        out.push_str(&format!("pipeline {} {} capacity {};\n", g.name, g.scope, g.capacity));
    }
    if !p.body.is_empty() && !(p.buffers.is_empty() && p.groups.is_empty()) {
        out.push('\n');
    }
    for s in &p.body {
        write_stmt(&mut out, s, 0).expect("writing to a String cannot fail");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{BufferDecl, ElemType, LoopKind, Scope};

    #[test]
    fn mod_of_sum_is_parenthesized() {
        let e = (Expr::var("ko") + 2).modulo(3);
        assert_eq!(e.to_string(), "(ko + 2) % 3");
    }

    #[test]
    fn right_operand_of_same_precedence_keeps_parens() {
        let e = Expr::var("a") * Expr::var("b").floor_div(2);
        assert_eq!(e.to_string(), "a * (b / 2)");
        let e = Expr::var("a").floor_div(2) * Expr::var("b");
        assert_eq!(e.to_string(), "a / 2 * b");
    }

    #[test]
    fn predicate_and_min() {
        let e = Expr::var("ko").equals(0);
        assert_eq!(e.to_string(), "ko == 0");
        let e = Expr::var("x").min(Expr::var("y") + 1);
        assert_eq!(e.to_string(), "min(x, y + 1)");
    }

    #[test]
    fn empty_loop_prints_on_one_line() {
        let p = Program {
            buffers: vec![BufferDecl::new("A", Scope::Global, ElemType::F32, vec![8, 8])],
            groups: vec![],
            body: vec![Stmt::for_loop("i", 8, LoopKind::Sequential, vec![])],
        };
        assert_eq!(
            print_program(&p),
            "buffer A global f32[8, 8];\n\nfor i seq 0..8 { }\n"
        );
    }
}
