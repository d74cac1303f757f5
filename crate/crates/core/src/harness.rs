//! Strategy benchmarks against the serial baseline.
//!
//! Timings are CPU wall-clock at toy scale. They show relative cost on this
//! machine and are not comparable with accelerator numbers.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::flow::FlowModel;
use crate::sampler::{
    sample_model, serial_sample_model, write_traces_csv, ConvergenceTrace, InitMode, ModelSample,
    SampleOptions, SweepOptions,
};
use crate::strategy::Strategy;
use crate::tensor::Tensor3;

pub const SERIAL_LABEL: &str = "serial";
pub const BENCH_CSV_HEADER: &str =
    "strategy,wall_ns,su_evals,max_abs_dev,speedup,clamp_events,trace_files";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub repeats: usize,
    pub sweep: SweepOptions,
    /// Record per-sweep distances to each block's exact inverse.
    pub verify: bool,
    /// Run strategies concurrently. Timings are then not isolated.
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repeats: 5,
            sweep: SweepOptions::default(),
            verify: true,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub strategy: String,
    /// Median over repeats.
    pub wall_ns: u64,
    pub su_evals: usize,
    /// Against the serial output from the same noise.
    pub max_abs_dev: Option<f64>,
    /// Serial wall time over this row's wall time.
    pub speedup: f64,
    pub clamp_events: usize,
    pub trace_files: Vec<PathBuf>,
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

fn timed<T>(repeats: usize, mut run: impl FnMut() -> Result<T>) -> Result<(T, u64)> {
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let started = Instant::now();
        last = Some(run()?);
        times.push(started.elapsed().as_nanos() as u64);
    }
    Ok((last.expect("at least one repeat"), median(times)))
}

fn file_stem(row: usize, label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '_' })
        .collect();
    format!("{row:02}_{}", clean.trim_matches('_'))
}

fn write_block_traces(
    dir: &Path,
    row: usize,
    label: &str,
    traces: &[ConvergenceTrace],
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let stem = file_stem(row, label);
    let mut paths = Vec::with_capacity(traces.len());
    for trace in traces {
        let path = dir.join(format!("{stem}_block{}.csv", trace.block));
        write_traces_csv(
            std::slice::from_ref(trace),
            BufWriter::new(File::create(&path)?),
        )?;
        paths.push(path);
    }
    Ok(paths)
}

/// Benchmarks `strategies` on noise `z`. Row 0 is always the serial baseline.
pub fn run_bench(
    model: &FlowModel,
    z: &Tensor3,
    strategies: &[Strategy],
    inits: &[InitMode],
    opts: &BenchOptions,
    trace_dir: Option<&Path>,
) -> Result<Vec<BenchRecord>> {
    let (serial, serial_ns) = timed(opts.repeats, || serial_sample_model(model, z, &opts.sweep))?;
    let timed_opts = SampleOptions {
        sweep: opts.sweep,
        verify: false,
    };
    // the per-block oracles behind the distance columns run outside the timer
    let run = |s: &Strategy| -> Result<(ModelSample, u64)> {
        let (sample, ns) = timed(opts.repeats, || {
            sample_model(model, z, s, inits, &timed_opts)
        })?;
        if !opts.verify {
            return Ok((sample, ns));
        }
        let verified = SampleOptions {
            verify: true,
            ..timed_opts
        };
        Ok((sample_model(model, z, s, inits, &verified)?, ns))
    };
    let results: Vec<(ModelSample, u64)> = if opts.parallel {
        strategies.par_iter().map(run).collect::<Result<_>>()?
    } else {
        strategies.iter().map(run).collect::<Result<_>>()?
    };

    let mut rows = Vec::with_capacity(strategies.len() + 1);
    let serial_files = match trace_dir {
        Some(dir) => write_block_traces(dir, 0, SERIAL_LABEL, &serial.traces)?,
        None => Vec::new(),
    };
    rows.push(BenchRecord {
        strategy: SERIAL_LABEL.to_string(),
        wall_ns: serial_ns,
        su_evals: serial.su_evals(),
        max_abs_dev: Some(0.0),
        speedup: 1.0,
        clamp_events: serial.clamp_events(),
        trace_files: serial_files,
    });
    for (i, (s, (sample, ns))) in strategies.iter().zip(results).enumerate() {
        let label = s.to_string();
        let trace_files = match trace_dir {
            Some(dir) => write_block_traces(dir, i + 1, &label, &sample.traces)?,
            None => Vec::new(),
        };
        rows.push(BenchRecord {
            strategy: label,
            wall_ns: ns,
            su_evals: sample.su_evals(),
            max_abs_dev: Some(sample.x.max_abs_diff(&serial.x)),
            speedup: serial_ns as f64 / ns.max(1) as f64,
            clamp_events: sample.clamp_events(),
            trace_files,
        });
    }
    Ok(rows)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{BENCH_CSV_HEADER}")?;
    for r in rows {
        let dev = r.max_abs_dev.map(|d| format!("{d:e}")).unwrap_or_default();
        let files = r
            .trace_files
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            w,
            "{},{},{},{},{:.4},{},{}",
            csv_field(&r.strategy),
            r.wall_ns,
            r.su_evals,
            dev,
            r.speedup,
            r.clamp_events,
            csv_field(&files)
        )?;
    }
    Ok(())
}
