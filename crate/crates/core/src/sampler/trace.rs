use std::fmt::Write as _;
use std::io::{self, Write};

use serde::Serialize;

pub const TRACE_CSV_HEADER: &str = "block,module,iter,distance,residual,wall_ns,su_evals";

/// One sweep of one module.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub block: usize,
    pub module: usize,
    /// 1-based sweep index within the module.
    pub iter: usize,
    /// Spectral norm of the batch-meaned error against the exact inverse,
    /// when one was supplied.
    pub distance: Option<f64>,
    /// Mean-square change of the module's positions in this sweep.
    pub residual: f64,
    pub wall_ns: u64,
    /// Cumulative s/u evaluations in this block after the sweep.
    pub su_evals: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConvergenceTrace {
    pub block: usize,
    pub records: Vec<TraceRecord>,
    pub su_evals: usize,
    pub clamp_events: usize,
}

impl ConvergenceTrace {
    pub fn new(block: usize) -> Self {
        Self {
            block,
            ..Self::default()
        }
    }

    pub fn set_block(&mut self, block: usize) {
        self.block = block;
        self.records.iter_mut().for_each(|r| r.block = block);
    }

    /// Sweeps run in `module`.
    pub fn module_sweeps(&self, module: usize) -> usize {
        self.records.iter().filter(|r| r.module == module).count()
    }

    /// Cost to bring every module within `threshold` of the target, counted
    /// in s/u evaluations: per module, the first sweep whose distance is at
    /// or below `threshold` (or all of the module's sweeps if none is).
    /// `None` when the trace carries no distances.
    pub fn evals_to_distance(&self, threshold: f64) -> Option<usize> {
        if self.records.iter().any(|r| r.distance.is_none()) {
            return None;
        }
        let mut modules: Vec<usize> = self.records.iter().map(|r| r.module).collect();
        modules.dedup();
        Some(
            modules
                .into_iter()
                .map(|g| {
                    let recs = self.records.iter().filter(|r| r.module == g);
                    let mut last = 0;
                    for r in recs {
                        last = r.iter;
                        if r.distance.is_some_and(|d| d <= threshold) {
                            return r.iter;
                        }
                    }
                    last
                })
                .sum(),
        )
    }

    pub fn write_csv_rows<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for r in &self.records {
            let dist = r
                .distance
                .map_or_else(|| "\"\"".to_string(), |d| format!("{d:e}"));
            writeln!(
                w,
                "{},{},{},{},{:e},{},{}",
                r.block, r.module, r.iter, dist, r.residual, r.wall_ns, r.su_evals
            )?;
        }
        Ok(())
    }
}

/// Writes the header and every record of `traces`.
pub fn write_traces_csv<W: Write>(traces: &[ConvergenceTrace], mut w: W) -> io::Result<()> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for t in traces {
        t.write_csv_rows(&mut w)?;
    }
    Ok(())
}

pub fn traces_to_csv(traces: &[ConvergenceTrace]) -> String {
    let mut buf = Vec::new();
    write_traces_csv(traces, &mut buf).expect("writing to a Vec cannot fail");
    let mut s = String::from_utf8(buf).expect("ascii");
    if s.is_empty() {
        let _ = writeln!(s, "{TRACE_CSV_HEADER}");
    }
    s
}
