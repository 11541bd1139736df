//! Tokenizer and recursive-descent parser for the textual IR.

use std::fmt;

use thiserror::Error;

use super::{
    validate, Access, BufferDecl, Diagnostic, ElemType, Expr, LoopKind, Operand, PipelineGroup,
    Program, Scope, Stmt, SyncKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{}", DiagList(.0))]
    Invalid(Vec<Diagnostic>),
}

struct DiagList<'a>(&'a [Diagnostic]);

impl fmt::Display for DiagList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Punct(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(v) => write!(f, "`{v}`"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

// Longest first so `..` wins over a lone `.`.
const PUNCTS: [&str; 16] =
    ["<-", "..", "==", "[", "]", "{", "}", "(", ")", ",", ";", "=", "+", "*", "/", "%"];

fn tokenize(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut toks = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let bytes = line.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            let col = i + 1;
            let at = |tok| Spanned { tok, line: lineno + 1, col };
            if c.is_ascii_whitespace() {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == b'_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push(at(Tok::Ident(line[start..i].to_string())));
            } else if c.is_ascii_digit() || (c == b'-' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
                let start = i;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let v = line[start..i].parse::<i64>().map_err(|_| ParseError::Syntax {
                    line: lineno + 1,
                    col,
                    msg: format!("integer literal `{}` out of range", &line[start..i]),
                })?;
                toks.push(at(Tok::Int(v)));
            } else if c == b'<' && bytes.get(i + 1) != Some(&b'-') {
                toks.push(at(Tok::Punct("<")));
                i += 1;
            } else if let Some(p) = PUNCTS.iter().find(|p| line[i..].starts_with(**p)) {
                toks.push(at(Tok::Punct(p)));
                i += p.len();
            } else {
                return Err(ParseError::Syntax {
                    line: lineno + 1,
                    col,
                    msg: format!("unexpected character `{}`", line[i..].chars().next().unwrap()),
                });
            }
        }
    }
    let line = text.lines().count().max(1);
    toks.push(Spanned { tok: Tok::Eof, line, col: 1 });
    Ok(toks)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let s = &self.toks[self.pos];
        Err(ParseError::Syntax { line: s.line, col: s.col, msg: msg.into() })
    }

    fn expected<T>(&self, what: &str) -> PResult<T> {
        self.error(format!("expected {what}, found {}", self.peek()))
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_keyword(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == k)
    }

    fn punct(&mut self, p: &str) -> PResult<()> {
        if self.is_punct(p) {
            self.next();
            Ok(())
        } else {
            self.expected(&format!("`{p}`"))
        }
    }

    fn keyword(&mut self, k: &str) -> PResult<()> {
        if self.is_keyword(k) {
            self.next();
            Ok(())
        } else {
            self.expected(&format!("`{k}`"))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek() {
            Tok::Ident(s) => {
                let s = s.clone();
                self.next();
                Ok(s)
            }
            _ => self.expected("a name"),
        }
    }

    fn int(&mut self) -> PResult<i64> {
        match self.peek() {
            Tok::Int(v) => {
                let v = *v;
                self.next();
                Ok(v)
            }
            _ => self.expected("an integer"),
        }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut p = Program::default();
        loop {
            if self.is_keyword("buffer") {
                p.buffers.push(self.buffer_decl()?);
            } else if self.is_keyword("pipeline") {
                p.groups.push(self.group_decl()?);
            } else {
                break;
            }
        }
        while *self.peek() != Tok::Eof {
            p.body.push(self.stmt()?);
        }
        Ok(p)
    }

    fn buffer_decl(&mut self) -> PResult<BufferDecl> {
        self.keyword("buffer")?;
        let name = self.ident()?;
        let scope_word = self.ident()?;
        let Some(scope) = Scope::from_keyword(&scope_word) else {
            self.pos -= 1;
            return self.expected("a scope (global, shared, register)");
        };
        let ty = self.ident()?;
        let Some(elem) = ElemType::from_name(&ty) else {
            self.pos -= 1;
            return self.expected("an element type");
        };
        self.punct("[")?;
        let mut shape = vec![self.int()?];
        while self.is_punct(",") {
            self.next();
            shape.push(self.int()?);
        }
        self.punct("]")?;
        let mut stages = None;
        if self.is_keyword("stages") {
            self.next();
            let v = self.int()?;
            stages = Some(u32::try_from(v).or_else(|_| self.error("stage count out of range"))?);
        }
        self.punct(";")?;
        Ok(BufferDecl { name, scope, elem, shape, stages })
    }

    fn group_decl(&mut self) -> PResult<PipelineGroup> {
        self.keyword("pipeline")?;
        let name = self.ident()?;
        let scope = match Scope::from_keyword(&self.ident()?) {
            Some(s @ (Scope::Shared | Scope::Register)) => s,
            _ => {
                self.pos -= 1;
                return self.expected("`shared` or `register`");
            }
        };
        self.keyword("capacity")?;
        let cap = self.int()?;
        let capacity = u32::try_from(cap).or_else(|_| self.error("capacity out of range"))?;
        self.punct(";")?;
        Ok(PipelineGroup { name, scope, capacity })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.punct("{")?;
        let mut body = Vec::new();
        while !self.is_punct("}") {
            if *self.peek() == Tok::Eof {
                return self.expected("`}`");
            }
            body.push(self.stmt()?);
        }
        self.next();
        Ok(body)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        if self.is_punct("{") {
            return Ok(Stmt::Block(self.block()?));
        }
        let word = match self.peek() {
            Tok::Ident(s) => s.clone(),
            _ => return self.expected("a statement"),
        };
        if let Some(kind) = SyncKind::from_keyword(&word) {
            self.next();
            let group = self.ident()?;
            self.punct(";")?;
            return Ok(Stmt::Sync { kind, group });
        }
        match word.as_str() {
            "for" => {
                self.next();
                let var = self.ident()?;
                let kind = match LoopKind::from_keyword(&self.ident()?) {
                    Some(k) => k,
                    None => {
                        self.pos -= 1;
                        return self.expected("a loop kind (seq, par, unroll)");
                    }
                };
                if self.int()? != 0 {
                    self.pos -= 1;
                    return self.error("loop lower bound must be 0");
                }
                self.punct("..")?;
                let extent = self.int()?;
                let body = self.block()?;
                Ok(Stmt::For { var, extent, kind, body })
            }
            "if" => {
                self.next();
                let cond = self.expr()?;
                let body = self.block()?;
                Ok(Stmt::Predicated { cond, body })
            }
            "copy_async" => {
                self.next();
                let dst = self.access()?;
                self.punct("<-")?;
                let src = self.access()?;
                self.punct(";")?;
                Ok(Stmt::AsyncCopy { dst, src })
            }
            _ => self.compute(),
        }
    }

    fn compute(&mut self) -> PResult<Stmt> {
        let dst = self.access()?;
        self.punct("=")?;
        let op = self.ident()?;
        self.punct("(")?;
        let mut operands = vec![self.operand()?];
        while self.is_punct(",") {
            self.next();
            operands.push(self.operand()?);
        }
        self.punct(")")?;
        self.keyword("flops")?;
        let f = self.int()?;
        let flops = u64::try_from(f).or_else(|_| self.error("flop count must be nonnegative"))?;
        self.punct(";")?;
        Ok(Stmt::Compute { dst, op, operands, flops })
    }

    fn operand(&mut self) -> PResult<Operand> {
        if matches!(self.peek_at(1), Tok::Punct("(")) {
            let wrap = self.ident()?;
            self.punct("(")?;
            let access = self.access()?;
            self.punct(")")?;
            Ok(Operand { access, wrap: Some(wrap) })
        } else {
            Ok(Operand { access: self.access()?, wrap: None })
        }
    }

    fn access(&mut self) -> PResult<Access> {
        let buffer = self.ident()?;
        self.punct("[")?;
        let mut indices = vec![self.expr()?];
        while self.is_punct(",") {
            self.next();
            indices.push(self.expr()?);
        }
        self.punct("]")?;
        Ok(Access { buffer, indices })
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut l = self.relational()?;
        while self.is_punct("==") {
            self.next();
            l = l.equals(self.relational()?);
        }
        Ok(l)
    }

    fn relational(&mut self) -> PResult<Expr> {
        let mut l = self.additive()?;
        while self.is_punct("<") {
            self.next();
            l = l.less_than(self.additive()?);
        }
        Ok(l)
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut l = self.term()?;
        while self.is_punct("+") {
            self.next();
            l = l + self.term()?;
        }
        Ok(l)
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut l = self.atom()?;
        loop {
            l = match self.peek() {
                Tok::Punct("*") => {
                    self.next();
                    l * self.atom()?
                }
                Tok::Punct("/") => {
                    self.next();
                    l.floor_div(self.atom()?)
                }
                Tok::Punct("%") => {
                    self.next();
                    l.modulo(self.atom()?)
                }
                _ => return Ok(l),
            };
        }
    }

    fn atom(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.next();
                Ok(Expr::Int(v))
            }
            Tok::Ident(name) if name == "min" => {
                self.next();
                self.punct("(")?;
                let a = self.expr()?;
                self.punct(",")?;
                let b = self.expr()?;
                self.punct(")")?;
                Ok(a.min(b))
            }
            Tok::Ident(name) => {
                self.next();
                Ok(Expr::Var(name))
            }
            Tok::Punct("(") => {
                self.next();
                let e = self.expr()?;
                self.punct(")")?;
                Ok(e)
            }
            _ => self.expected("an expression"),
        }
    }
}

/// Parses without structural validation. Useful for tools that want to
/// report diagnostics themselves.
pub fn parse_program_unchecked(text: &str) -> Result<Program, ParseError> {
    let mut p = Parser { toks: tokenize(text)?, pos: 0 };
    p.program()
}

/// Parses and validates a program.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let p = parse_program_unchecked(text)?;
    let diags = validate(&p);
    if diags.is_empty() {
        Ok(p)
    } else {
        Err(ParseError::Invalid(diags))
    }
}
