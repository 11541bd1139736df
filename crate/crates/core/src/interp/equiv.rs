//! Output equivalence between two programs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{run, ExecMode, InterpError, Tensors};
use crate::ir::Program;

/// First output element where two runs disagree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub buffer: String,
    pub index: Vec<i64>,
    pub left: i64,
    pub right: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Equivalence {
    pub equal: bool,
    pub divergence: Option<Divergence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EquivError {
    #[error("signature mismatch: {0}")]
    Signature(String),
    #[error("first program: {0}")]
    Left(InterpError),
    #[error("second program: {0}")]
    Right(InterpError),
}

fn signature(p: &Program) -> (Vec<(String, Vec<i64>)>, Vec<(String, Vec<i64>)>) {
    let f = |bs: Vec<&crate::ir::BufferDecl>| bs.iter().map(|b| (b.name.clone(), b.shape.clone())).collect();
    (f(p.inputs()), f(p.outputs()))
}

fn unflatten(mut flat: usize, shape: &[i64]) -> Vec<i64> {
    let mut out = vec![0; shape.len()];
    for (o, d) in out.iter_mut().zip(shape).rev() {
        *o = (flat % *d as usize) as i64;
        flat /= *d as usize;
    }
    out
}

/// Runs both programs in strict mode, with different noise in their local
/// buffers, and compares every output element.
pub fn check_equivalence(p1: &Program, p2: &Program, inputs: &Tensors) -> Result<Equivalence, EquivError> {
    let (s1, s2) = (signature(p1), signature(p2));
    if s1 != s2 {
        return Err(EquivError::Signature(format!("inputs/outputs {s1:?} vs {s2:?}")));
    }
    let (a, _) = run(p1, inputs, ExecMode::Strict, 1).map_err(EquivError::Left)?;
    let (b, _) = run(p2, inputs, ExecMode::Strict, 2).map_err(EquivError::Right)?;
    for (name, shape) in &s1.1 {
        let (x, y) = (&a[name], &b[name]);
        if let Some(i) = (0..x.len()).find(|&i| x[i] != y[i]) {
            return Ok(Equivalence {
                equal: false,
                divergence: Some(Divergence { buffer: name.clone(), index: unflatten(i, shape), left: x[i], right: y[i] }),
            });
        }
    }
    Ok(Equivalence { equal: true, divergence: None })
}

/// Small random integers for every input of `p`, in declaration order.
pub fn random_inputs(p: &Program, seed: u64) -> Tensors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    p.inputs()
        .iter()
        .map(|b| (b.name.clone(), (0..b.num_elements()).map(|_| rng.random_range(-8..=8)).collect()))
        .collect()
}
