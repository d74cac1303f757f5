//! `[Stack-GS-J-Else]` sampling plans.
//!
//! `Stack` lists the blocks solved with Gauss-Seidel-Jacobi, `GS` the number
//! of equal modules per stacked block, `J` the per-module Jacobi budget, and
//! `Else` the Jacobi budget for every other block. The first three fields are
//! `/`-separated lists; a single value applies to every stacked block, so
//! `[0/6-1024-1-10]` segments both blocks 0 and 6 into 1024 modules.
//!
//! `Jacobi-N` is accepted as a plan with no stacked blocks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::Segmentation;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub stack: Vec<usize>,
    pub gs: Vec<usize>,
    pub j: Vec<usize>,
    pub else_j: usize,
}

/// How one block is inverted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockPlan {
    Jacobi {
        max_iters: usize,
    },
    GsJacobi {
        segmentation: Segmentation,
        j_budget: usize,
    },
}

impl Strategy {
    /// Plain Jacobi on every block.
    pub fn jacobi(max_iters: usize) -> Self {
        Self {
            stack: Vec::new(),
            gs: Vec::new(),
            j: Vec::new(),
            else_j: max_iters,
        }
    }

    pub fn new(stack: Vec<usize>, gs: Vec<usize>, j: Vec<usize>, else_j: usize) -> Result<Self> {
        let label = format!("{stack:?}-{gs:?}-{j:?}-{else_j}");
        let err = |reason: &str| Error::Strategy {
            input: label.clone(),
            reason: reason.to_string(),
        };
        let n = stack.len();
        let broadcast = |v: Vec<usize>, what: &str| -> Result<Vec<usize>> {
            match v.len() {
                1 => Ok(vec![v[0]; n]),
                len if len == n => Ok(v),
                len => Err(err(&format!(
                    "{what} has {len} entries for {n} stacked blocks"
                ))),
            }
        };
        if n == 0 && (!gs.is_empty() || !j.is_empty()) {
            return Err(err("GS/J lists given without stacked blocks"));
        }
        let (gs, j) = if n == 0 {
            (gs, j)
        } else {
            (broadcast(gs, "GS")?, broadcast(j, "J")?)
        };
        let mut seen = stack.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(err("duplicate stacked block"));
        }
        if gs.iter().chain(&j).any(|&v| v == 0) || else_j == 0 {
            return Err(err("counts must be >= 1"));
        }
        Ok(Self {
            stack,
            gs,
            j,
            else_j,
        })
    }

    /// The plan for `block` at sequence length `seq`.
    pub fn plan_for(&self, block: usize, seq: usize) -> Result<BlockPlan> {
        match self.stack.iter().position(|&b| b == block) {
            Some(i) => Ok(BlockPlan::GsJacobi {
                segmentation: Segmentation::equal(seq, self.gs[i])?,
                j_budget: self.j[i],
            }),
            None => Ok(BlockPlan::Jacobi {
                max_iters: self.else_j,
            }),
        }
    }

    /// Checks block indices against a model with `blocks` blocks and module
    /// counts against sequence length `seq`.
    pub fn check(&self, blocks: usize, seq: usize) -> Result<()> {
        if let Some(&b) = self.stack.iter().find(|&&b| b >= blocks) {
            return Err(Error::InvalidArgument(format!(
                "strategy {self} stacks block {b}, model has {blocks}"
            )));
        }
        if let Some(&g) = self.gs.iter().find(|&&g| g > seq) {
            return Err(Error::InvalidArgument(format!(
                "strategy {self} asks for {g} modules but T = {seq}"
            )));
        }
        Ok(())
    }
}

fn parse_list(field: &str, what: &str, input: &str) -> Result<Vec<usize>> {
    let err = |reason: String| Error::Strategy {
        input: input.to_string(),
        reason,
    };
    field
        .split('/')
        .map(|tok| {
            if tok.is_empty() || !tok.bytes().all(|b| b.is_ascii_digit()) {
                return Err(err(format!(
                    "{what} entry {tok:?} is not an unsigned integer"
                )));
            }
            tok.parse::<usize>()
                .map_err(|_| err(format!("{what} entry {tok:?} is out of range")))
        })
        .collect()
}

pub fn parse_strategy(s: &str) -> Result<Strategy> {
    let err = |reason: &str| Error::Strategy {
        input: s.to_string(),
        reason: reason.to_string(),
    };
    if let Some(rest) = s.strip_prefix("Jacobi-") {
        let n = parse_list(rest, "Jacobi budget", s)?;
        if n.len() != 1 {
            return Err(err("Jacobi budget must be a single integer"));
        }
        return Strategy::new(vec![], vec![], vec![], n[0]).map_err(|_| err("counts must be >= 1"));
    }
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| err("expected [Stack-GS-J-Else]"))?;
    let fields: Vec<&str> = inner.split('-').collect();
    if fields.len() != 4 {
        return Err(err(&format!(
            "expected 4 '-'-separated fields, found {}",
            fields.len()
        )));
    }
    let stack = parse_list(fields[0], "Stack", s)?;
    let gs = parse_list(fields[1], "GS", s)?;
    let j = parse_list(fields[2], "J", s)?;
    let else_j = parse_list(fields[3], "Else", s)?;
    if else_j.len() != 1 {
        return Err(err("Else must be a single integer"));
    }
    Strategy::new(stack, gs, j, else_j[0]).map_err(|e| match e {
        Error::Strategy { reason, .. } => err(&reason),
        other => other,
    })
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_strategy(s)
    }
}

fn join(v: &[usize]) -> String {
    let all_same = v.windows(2).all(|w| w[0] == w[1]);
    if all_same && !v.is_empty() {
        v[0].to_string()
    } else {
        v.iter().map(usize::to_string).collect::<Vec<_>>().join("/")
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.stack.is_empty() {
            return write!(f, "Jacobi-{}", self.else_j);
        }
        let stack = self
            .stack
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("/");
        write!(
            f,
            "[{stack}-{}-{}-{}]",
            join(&self.gs),
            join(&self.j),
            self.else_j
        )
    }
}
