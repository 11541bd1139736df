//! Integer index expressions.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pure integer expression used for buffer indices and predicates.
///
/// `FloorDiv` and `Mod` use floor semantics; comparisons evaluate to 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Var(String),
    Int(i64),
    Add(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    FloorDiv(Box<Expr>, Box<Expr>),
    Mod(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Eq(Box<Expr>, Box<Expr>),
    Lt(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("division or modulo by non-positive value {0}")]
    BadDivisor(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("division or modulo by non-positive constant {0}")]
pub struct SimplifyError(pub i64);

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn int(v: i64) -> Expr {
        Expr::Int(v)
    }

    pub fn floor_div(self, rhs: impl Into<Expr>) -> Expr {
        Expr::FloorDiv(Box::new(self), Box::new(rhs.into()))
    }

    pub fn modulo(self, rhs: impl Into<Expr>) -> Expr {
        Expr::Mod(Box::new(self), Box::new(rhs.into()))
    }

    pub fn min(self, rhs: impl Into<Expr>) -> Expr {
        Expr::Min(Box::new(self), Box::new(rhs.into()))
    }

    pub fn equals(self, rhs: impl Into<Expr>) -> Expr {
        Expr::Eq(Box::new(self), Box::new(rhs.into()))
    }

    pub fn less_than(self, rhs: impl Into<Expr>) -> Expr {
        Expr::Lt(Box::new(self), Box::new(rhs.into()))
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Expr::Int(v) => Some(*v),
            _ => None,
        }
    }

    /// Left/right children of a binary node.
    pub fn operands(&self) -> Option<(&Expr, &Expr)> {
        match self {
            Expr::Add(l, r)
            | Expr::Mul(l, r)
            | Expr::FloorDiv(l, r)
            | Expr::Mod(l, r)
            | Expr::Min(l, r)
            | Expr::Eq(l, r)
            | Expr::Lt(l, r) => Some((l, r)),
            Expr::Var(_) | Expr::Int(_) => None,
        }
    }

    fn rebuild(&self, l: Expr, r: Expr) -> Expr {
        let (l, r) = (Box::new(l), Box::new(r));
        match self {
            Expr::Add(..) => Expr::Add(l, r),
            Expr::Mul(..) => Expr::Mul(l, r),
            Expr::FloorDiv(..) => Expr::FloorDiv(l, r),
            Expr::Mod(..) => Expr::Mod(l, r),
            Expr::Min(..) => Expr::Min(l, r),
            Expr::Eq(..) => Expr::Eq(l, r),
            Expr::Lt(..) => Expr::Lt(l, r),
            Expr::Var(_) | Expr::Int(_) => unreachable!("rebuild on a leaf"),
        }
    }

    pub fn eval(&self, env: &dyn Fn(&str) -> Option<i64>) -> Result<i64, EvalError> {
        match self {
            Expr::Var(name) => env(name).ok_or_else(|| EvalError::Unbound(name.clone())),
            Expr::Int(v) => Ok(*v),
            _ => {
                let (l, r) = self.operands().unwrap();
                let (a, b) = (l.eval(env)?, r.eval(env)?);
                apply(self, a, b).map_err(EvalError::BadDivisor)
            }
        }
    }

    /// Visits every variable name, in left-to-right order.
    pub fn for_each_var(&self, f: &mut dyn FnMut(&str)) {
        match self {
            Expr::Var(name) => f(name),
            Expr::Int(_) => {}
            _ => {
                let (l, r) = self.operands().unwrap();
                l.for_each_var(f);
                r.for_each_var(f);
            }
        }
    }

    pub fn uses_var(&self, name: &str) -> bool {
        let mut found = false;
        self.for_each_var(&mut |v| found |= v == name);
        found
    }

    /// Replaces variables for which `f` returns a value.
    pub fn substitute(&self, f: &dyn Fn(&str) -> Option<Expr>) -> Expr {
        match self {
            Expr::Var(name) => f(name).unwrap_or_else(|| self.clone()),
            Expr::Int(_) => self.clone(),
            _ => {
                let (l, r) = self.operands().unwrap();
                self.rebuild(l.substitute(f), r.substitute(f))
            }
        }
    }
}

/// Applies a binary node's operator to evaluated operands.
/// `Err` carries the offending divisor.
fn apply(op: &Expr, a: i64, b: i64) -> Result<i64, i64> {
    Ok(match op {
        Expr::Add(..) => a.wrapping_add(b),
        Expr::Mul(..) => a.wrapping_mul(b),
        Expr::FloorDiv(..) => {
            if b <= 0 {
                return Err(b);
            }
            a.div_euclid(b)
        }
        Expr::Mod(..) => {
            if b <= 0 {
                return Err(b);
            }
            a.rem_euclid(b)
        }
        Expr::Min(..) => a.min(b),
        Expr::Eq(..) => (a == b) as i64,
        Expr::Lt(..) => (a < b) as i64,
        Expr::Var(_) | Expr::Int(_) => unreachable!(),
    })
}

impl From<i64> for Expr {
    fn from(v: i64) -> Self {
        Expr::Int(v)
    }
}

impl From<&str> for Expr {
    fn from(v: &str) -> Self {
        Expr::Var(v.to_string())
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Add<i64> for Expr {
    type Output = Expr;
    fn add(self, rhs: i64) -> Expr {
        self + Expr::Int(rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Mul<i64> for Expr {
    type Output = Expr;
    fn mul(self, rhs: i64) -> Expr {
        self * Expr::Int(rhs)
    }
}

/// Algebraic simplification: constant folding plus a handful of identities.
///
/// The result evaluates identically to the input under every assignment for
/// which the input is defined.
pub fn simplify(e: &Expr) -> Result<Expr, SimplifyError> {
    let (l, r) = match e.operands() {
        None => return Ok(e.clone()),
        Some((l, r)) => (simplify(l)?, simplify(r)?),
    };
    if let (Expr::FloorDiv(..) | Expr::Mod(..), Some(d)) = (e, r.as_int()) {
        if d <= 0 {
            return Err(SimplifyError(d));
        }
    }
    if let (Some(a), Some(b)) = (l.as_int(), r.as_int()) {
        return Ok(Expr::Int(apply(e, a, b).map_err(SimplifyError)?));
    }
    Ok(match e {
        Expr::Add(..) => simplify_add(l, r),
        Expr::Mul(..) => match (l.as_int(), r.as_int()) {
            (Some(0), _) | (_, Some(0)) => Expr::Int(0),
            (Some(1), _) => r,
            (_, Some(1)) => l,
            (Some(_), None) => r * l,
            _ => l * r,
        },
        Expr::FloorDiv(..) if r.as_int() == Some(1) => l,
        Expr::Mod(..) => match r.as_int() {
            Some(1) => Expr::Int(0),
            Some(c) => match &l {
                Expr::Mod(_, inner) if inner.as_int() == Some(c) => l,
                _ => l.modulo(r),
            },
            None => l.modulo(r),
        },
        _ => e.rebuild(l, r),
    })
}

fn simplify_add(l: Expr, r: Expr) -> Expr {
    match (l.as_int(), r.as_int()) {
        (Some(0), _) => r,
        (_, Some(0)) => l,
        // keep constants on the right so they can merge
        (Some(_), None) => simplify_add(r, l),
        (None, Some(c)) => match l {
            Expr::Add(inner, k) if k.as_int().is_some() => {
                let sum = k.as_int().unwrap().wrapping_add(c);
                simplify_add(*inner, Expr::Int(sum))
            }
            _ => l + r,
        },
        _ => l + r,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        crate::ir::print::write_expr(f, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_with(e: &Expr, vars: &[(&str, i64)]) -> i64 {
        e.eval(&|n| vars.iter().find(|(k, _)| *k == n).map(|(_, v)| *v))
            .unwrap()
    }

    #[test]
    fn folds_constant_mod() {
        let e = Expr::int(7).modulo(3);
        assert_eq!(simplify(&e).unwrap(), Expr::Int(1));
    }

    #[test]
    fn collapses_repeated_mod() {
        let e = Expr::var("ko").modulo(3).modulo(3);
        let s = simplify(&e).unwrap();
        assert_eq!(s, Expr::var("ko").modulo(3));
        for ko in 0..100 {
            assert_eq!(eval_with(&e, &[("ko", ko)]), eval_with(&s, &[("ko", ko)]));
        }
    }

    #[test]
    fn drops_additive_identity() {
        let e = Expr::var("ko") + 0;
        assert_eq!(simplify(&e).unwrap(), Expr::var("ko"));
    }

    #[test]
    fn merges_constant_chains() {
        let e = (Expr::var("x") + 2) + (Expr::int(1) + Expr::int(-3));
        assert_eq!(simplify(&e).unwrap(), Expr::var("x"));
        let e = Expr::int(4) + Expr::var("x");
        assert_eq!(simplify(&e).unwrap(), Expr::var("x") + 4);
    }

    #[test]
    fn rejects_non_positive_divisor() {
        assert_eq!(simplify(&Expr::var("x").modulo(0)), Err(SimplifyError(0)));
        assert_eq!(
            simplify(&Expr::var("x").floor_div(Expr::int(1) + Expr::int(-3))),
            Err(SimplifyError(-2))
        );
    }

    #[test]
    fn floor_semantics_for_negatives() {
        assert_eq!(simplify(&Expr::int(-1).floor_div(4)).unwrap(), Expr::Int(-1));
        assert_eq!(simplify(&Expr::int(-1).modulo(4)).unwrap(), Expr::Int(3));
    }

    #[test]
    fn comparisons_fold_to_bool() {
        assert_eq!(simplify(&Expr::int(0).equals(0)).unwrap(), Expr::Int(1));
        assert_eq!(simplify(&Expr::int(3).less_than(2)).unwrap(), Expr::Int(0));
    }
}
