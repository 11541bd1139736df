//! Reference interpreter.
//!
//! Values are `i64` with wrapping arithmetic. Parallel loops run
//! sequentially. A copy into a buffer that has a pipeline group of the same
//! name is staged in the group's open commit group and only becomes visible
//! when a `consumer_wait` flushes that group; copies into other buffers take
//! effect immediately.
//!
//! Outputs start at zero. Local buffers start filled with seeded noise, so a
//! program that reads a slot before loading it produces a different result
//! instead of an accidental match.

mod equiv;

use std::collections::{BTreeMap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{validate, Access, Diagnostic, EvalError, Expr, Program, Stmt, SyncKind};

pub use equiv::{check_equivalence, random_inputs, Divergence, EquivError, Equivalence};

pub type Tensors = BTreeMap<String, Vec<i64>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// Protocol violations and reads of staged, not yet visible data fault.
    #[default]
    Strict,
    /// Such reads return whatever is visible; protocol violations that can
    /// be ignored are ignored.
    StaleRead,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub acquired: u64,
    pub committed: u64,
    pub waited: u64,
    pub released: u64,
}

impl Counters {
    /// Committed groups not yet released.
    pub fn in_flight(&self) -> u64 {
        self.committed - self.released
    }
}

/// One executed synchronization statement and the counters after it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: u64,
    pub group: String,
    pub kind: SyncKind,
    pub counters: Counters,
    pub capacity: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    /// Statements executed, sync and copies included.
    pub steps: u64,
}

impl Trace {
    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpError {
    #[error("program is invalid:\n{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error("no value given for input `{0}`")]
    UnboundInput(String),
    #[error("`{0}` is not an input of the program")]
    UnknownInput(String),
    #[error("input `{buffer}` has {got} elements, expected {expected}")]
    ShapeMismatch { buffer: String, expected: usize, got: usize },
    #[error("out-of-bounds access {buffer}{index:?}")]
    OutOfBounds { buffer: String, index: Vec<i64> },
    #[error("stale read of {buffer}{index:?}: a staged copy to it is not visible yet")]
    StaleRead { buffer: String, index: Vec<i64> },
    #[error("pipeline `{group}` overflow: {in_flight} groups in flight, capacity {capacity}")]
    Overflow { group: String, in_flight: u64, capacity: u32 },
    #[error("pipeline `{group}`: {msg}")]
    Protocol { group: String, msg: &'static str },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Applies an op tag. Opaque tags fold their arguments into a hash-like
/// value so that distinct tags and argument orders stay distinguishable.
pub fn apply_op(op: &str, args: &[i64]) -> i64 {
    match (op, args) {
        ("mma", [acc, a, b]) => acc.wrapping_add(a.wrapping_mul(*b)),
        ("add", [a, b]) => a.wrapping_add(*b),
        ("mul", [a, b]) => a.wrapping_mul(*b),
        ("id", [a]) => *a,
        ("neg", [a]) => a.wrapping_neg(),
        ("inc", [a]) => a.wrapping_add(1),
        ("relu", [a]) => (*a).max(0),
        ("sq", [a]) => a.wrapping_mul(*a),
        _ => {
            let mut h: i64 = 17;
            for b in op.bytes() {
                h = h.wrapping_mul(31).wrapping_add(b as i64);
            }
            for x in args {
                h = h.wrapping_mul(31).wrapping_add(*x);
            }
            h
        }
    }
}

struct Storage {
    shape: Vec<i64>,
    data: Vec<i64>,
    /// Staged writes not yet flushed, per element.
    pending: Vec<u32>,
    group: Option<usize>,
}

struct Pipe {
    name: String,
    capacity: u32,
    counters: Counters,
    open: Vec<(usize, usize, i64)>,
    sealed: VecDeque<Vec<(usize, usize, i64)>>,
}

struct Machine<'a> {
    mode: ExecMode,
    ids: HashMap<&'a str, usize>,
    bufs: Vec<Storage>,
    pipes: Vec<Pipe>,
    env: Vec<(&'a str, i64)>,
    trace: Trace,
}

impl<'a> Machine<'a> {
    fn lookup(&self, v: &str) -> Option<i64> {
        self.env.iter().rev().find(|(k, _)| *k == v).map(|(_, x)| *x)
    }

    fn eval(&self, e: &Expr) -> Result<i64, InterpError> {
        Ok(e.eval(&|v| self.lookup(v))?)
    }

    fn locate(&self, a: &Access) -> Result<(usize, usize), InterpError> {
        let id = self.ids[a.buffer.as_str()];
        let shape = &self.bufs[id].shape;
        let index = a.indices.iter().map(|e| self.eval(e)).collect::<Result<Vec<_>, _>>()?;
        let mut flat = 0i64;
        for (i, d) in index.iter().zip(shape) {
            if *i < 0 || i >= d {
                return Err(InterpError::OutOfBounds { buffer: a.buffer.clone(), index });
            }
            flat = flat * d + i;
        }
        Ok((id, flat as usize))
    }

    fn read(&self, a: &Access) -> Result<i64, InterpError> {
        let (id, flat) = self.locate(a)?;
        let b = &self.bufs[id];
        if b.pending[flat] > 0 && self.mode == ExecMode::Strict {
            let index = a.indices.iter().map(|e| self.eval(e)).collect::<Result<_, _>>()?;
            return Err(InterpError::StaleRead { buffer: a.buffer.clone(), index });
        }
        Ok(b.data[flat])
    }

    fn protocol(&self, g: usize, msg: &'static str) -> Result<(), InterpError> {
        match self.mode {
            ExecMode::Strict => Err(InterpError::Protocol { group: self.pipes[g].name.clone(), msg }),
            ExecMode::StaleRead => Ok(()),
        }
    }

    fn exec(&mut self, body: &'a [Stmt]) -> Result<(), InterpError> {
        for s in body {
            self.trace.steps += 1;
            match s {
                Stmt::For { var, extent, body, .. } => {
                    for i in 0..*extent {
                        self.env.push((var, i));
                        let r = self.exec(body);
                        self.env.pop();
                        r?;
                    }
                }
                Stmt::Block(body) => self.exec(body)?,
                Stmt::Predicated { cond, body } => {
                    if self.eval(cond)? != 0 {
                        self.exec(body)?;
                    }
                }
                Stmt::Compute { dst, op, operands, .. } => {
                    let mut args = Vec::with_capacity(operands.len());
                    for o in operands {
                        let x = self.read(&o.access)?;
                        args.push(match &o.wrap {
                            Some(w) => apply_op(w, &[x]),
                            None => x,
                        });
                    }
                    let (id, flat) = self.locate(dst)?;
                    self.bufs[id].data[flat] = apply_op(op, &args);
                }
                Stmt::AsyncCopy { dst, src } => {
                    let x = self.read(src)?;
                    let (id, flat) = self.locate(dst)?;
                    match self.bufs[id].group {
                        Some(g) => {
                            let c = self.pipes[g].counters;
                            if c.acquired == c.committed {
                                self.protocol(g, "copy outside an acquired stage")?;
                            }
                            self.bufs[id].pending[flat] += 1;
                            self.pipes[g].open.push((id, flat, x));
                        }
                        None => self.bufs[id].data[flat] = x,
                    }
                }
                Stmt::Sync { kind, group } => self.sync(*kind, group)?,
            }
        }
        Ok(())
    }

    fn sync(&mut self, kind: SyncKind, group: &str) -> Result<(), InterpError> {
        let g = self.pipes.iter().position(|p| p.name == group).expect("validated group");
        let c = self.pipes[g].counters;
        let cap = self.pipes[g].capacity;
        match kind {
            SyncKind::ProducerAcquire => {
                if c.acquired - c.released >= cap as u64 && self.mode == ExecMode::Strict {
                    return Err(InterpError::Overflow { group: group.into(), in_flight: c.acquired - c.released, capacity: cap });
                }
                self.pipes[g].counters.acquired += 1;
            }
            SyncKind::ProducerCommit => {
                if c.committed >= c.acquired {
                    self.protocol(g, "commit without acquire")?;
                    self.pipes[g].counters.acquired += 1;
                }
                let staged = std::mem::take(&mut self.pipes[g].open);
                self.pipes[g].sealed.push_back(staged);
                self.pipes[g].counters.committed += 1;
            }
            SyncKind::ConsumerWait => match self.pipes[g].sealed.pop_front() {
                Some(staged) => {
                    for (id, flat, x) in staged {
                        let b = &mut self.bufs[id];
                        b.data[flat] = x;
                        b.pending[flat] -= 1;
                    }
                    self.pipes[g].counters.waited += 1;
                }
                None => self.protocol(g, "wait with no committed stage")?,
            },
            SyncKind::ConsumerRelease => {
                if c.released < c.waited {
                    self.pipes[g].counters.released += 1;
                } else {
                    self.protocol(g, "release without a waited stage")?;
                }
            }
        }
        self.trace.events.push(TraceEvent {
            step: self.trace.steps,
            group: group.to_string(),
            kind,
            counters: self.pipes[g].counters,
            capacity: cap,
        });
        Ok(())
    }
}

/// Runs `p` on `inputs`. `seed` fills local buffers with noise.
pub fn run(p: &Program, inputs: &Tensors, mode: ExecMode, seed: u64) -> Result<(Tensors, Trace), InterpError> {
    let diags = validate(p);
    if !diags.is_empty() {
        return Err(InterpError::Invalid(diags));
    }
    let input_names: Vec<&str> = p.inputs().iter().map(|b| b.name.as_str()).collect();
    if let Some(extra) = inputs.keys().find(|k| !input_names.contains(&k.as_str())) {
        return Err(InterpError::UnknownInput(extra.clone()));
    }
    let output_names: Vec<&str> = p.outputs().iter().map(|b| b.name.as_str()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Machine {
        mode,
        ids: HashMap::new(),
        bufs: Vec::new(),
        pipes: p
            .groups
            .iter()
            .map(|g| Pipe {
                name: g.name.clone(),
                capacity: g.capacity,
                counters: Counters::default(),
                open: Vec::new(),
                sealed: VecDeque::new(),
            })
            .collect(),
        env: Vec::new(),
        trace: Trace::default(),
    };
    for b in &p.buffers {
        let n = b.num_elements() as usize;
        let data = if input_names.contains(&b.name.as_str()) {
            let v = inputs.get(&b.name).ok_or_else(|| InterpError::UnboundInput(b.name.clone()))?;
            if v.len() != n {
                return Err(InterpError::ShapeMismatch { buffer: b.name.clone(), expected: n, got: v.len() });
            }
            v.clone()
        } else if output_names.contains(&b.name.as_str()) {
            vec![0; n]
        } else {
            (0..n).map(|_| rng.random_range(-1000..1000)).collect()
        };
        m.ids.insert(&b.name, m.bufs.len());
        m.bufs.push(Storage {
            shape: b.shape.clone(),
            data,
            pending: vec![0; n],
            group: p.groups.iter().position(|g| g.name == b.name),
        });
    }
    m.exec(&p.body)?;
    let outputs = output_names
        .iter()
        .map(|n| (n.to_string(), std::mem::take(&mut m.bufs[m.ids[n]].data)))
        .collect();
    Ok((outputs, m.trace))
}

#[cfg(test)]
mod tests;
