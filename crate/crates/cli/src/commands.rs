use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use gsjf_core::flow::io::to_json_17;
use gsjf_core::flow::{
    default_weight_scale, gen_synthetic_model_scaled, load_model, save_model, standard_normal,
};
use gsjf_core::harness::{run_bench, write_bench_csv, BenchOptions, BenchRecord};
use gsjf_core::metrics::{metric_pass, synthetic_x_star, MetricOptions};
use gsjf_core::sampler::{sample_model, write_traces_csv, ConvergenceTrace, SampleOptions};
use gsjf_core::{FlowModel, InitMode, MetricReport, ModelConfig, SweepOptions, Tensor3};
use serde_json::json;

use crate::{BenchArgs, CliError, Format, GenModelArgs, Global, InitArgs, MetricsArgs, SampleArgs};

type CliResult = Result<(), CliError>;

fn sweep_options(g: &Global, clamp: Option<f64>) -> SweepOptions {
    SweepOptions {
        ebound: g.ebound,
        clamp,
    }
}

pub fn gen_model(g: &Global, a: &GenModelArgs) -> CliResult {
    let config = ModelConfig {
        patch_size: a.patch_size,
        channels: a.channels,
        blocks: a.blocks,
        depth: a.depth,
        mlp_hidden: a.mlp_hidden,
        noise_std: a.noise_std,
    };
    let scales = match (&a.block_scales, a.scale) {
        (Some(s), _) => s.clone(),
        (None, Some(s)) => vec![s; a.blocks],
        (None, None) => vec![default_weight_scale(a.depth); a.blocks],
    };
    let model = gen_synthetic_model_scaled(g.seed, &config, &scales)?;
    save_model(&model, &a.out).map_err(CliError::at(&a.out))?;
    match g.format() {
        Format::Json => println!(
            "{}",
            json!({"path": a.out, "config": model.config, "block_scales": scales})
        ),
        _ => println!(
            "wrote {} {} to {}",
            config,
            scale_list(&scales),
            a.out.display()
        ),
    }
    Ok(())
}

fn scale_list(scales: &[f64]) -> String {
    let s: Vec<String> = scales.iter().map(|v| format!("{v}")).collect();
    format!("scales [{}]", s.join(","))
}

fn report_csv(r: &MetricReport) -> String {
    let mut out = String::from("block,igm_z,igm_z0,init,crm,nvp,ws,wu,percent,stacked\n");
    for (l, b) in r.blocks.iter().enumerate() {
        out.push_str(&format!(
            "{l},{:e},{:e},{},{:e},{:e},{:e},{:e},{:.4},{}\n",
            b.igm_z,
            b.igm_z0,
            b.init.label(),
            b.crm,
            b.nvp,
            b.ws,
            b.wu,
            b.percent,
            r.stack.contains(&l)
        ));
    }
    out
}

fn report_text(r: &MetricReport) -> String {
    let mut out = format!(
        "{:>5} {:>12} {:>12} {:>4} {:>12} {:>8}\n",
        "block", "IGM(Z)", "IGM(Z0)", "init", "CRM", "percent"
    );
    for (l, b) in r.blocks.iter().enumerate() {
        let mark = if r.stack.contains(&l) { " *" } else { "" };
        out.push_str(&format!(
            "{l:>5} {:>12.4e} {:>12.4e} {:>4} {:>12.4} {:>8.2}{mark}\n",
            b.igm_z,
            b.igm_z0,
            b.init.label(),
            b.crm,
            b.percent
        ));
    }
    out.push_str(&format!(
        "norm {}, stack {:?} (ratio {}), norms agree on ranking: {}\n",
        r.norm, r.stack, r.dominance_ratio, r.variant_ranks_agree
    ));
    out
}

fn run_metrics(
    g: &Global,
    model: &FlowModel,
    batch: usize,
    seq: usize,
    ratio: f64,
) -> Result<MetricReport, CliError> {
    if batch == 0 || seq == 0 {
        return Err(CliError::Usage("--batch and --seq must be >= 1".into()));
    }
    let x = synthetic_x_star(model, g.seed, batch, seq)?;
    let opts = MetricOptions {
        norm: g.norm,
        dominance_ratio: ratio,
    };
    Ok(metric_pass(model, &x, &opts)?)
}

pub fn metrics(g: &Global, a: &MetricsArgs) -> CliResult {
    let model = load_model(&a.model).map_err(CliError::at(&a.model))?;
    let report = run_metrics(g, &model, a.batch, a.seq, a.ratio)?;
    let json = report.to_json()?;
    if let Some(path) = &a.out {
        fs::write(path, &json).map_err(|e| CliError::at(path)(e.into()))?;
    }
    match g.format() {
        Format::Json => println!("{json}"),
        Format::Csv => print!("{}", report_csv(&report)),
        Format::Text => print!("{}", report_text(&report)),
    }
    Ok(())
}

fn parse_init(s: &str) -> Result<InitMode, CliError> {
    match s.trim() {
        "Z" | "z" => Ok(InitMode::FromZ),
        "Z0" | "z0" => Ok(InitMode::FromZ0),
        other => Err(CliError::Usage(format!(
            "unknown init {other:?} (expected Z or Z0)"
        ))),
    }
}

/// Per-block init modes: explicit, or chosen by an IGM pass.
fn resolve_inits(
    g: &Global,
    model: &FlowModel,
    seq: usize,
    a: &InitArgs,
) -> Result<Vec<InitMode>, CliError> {
    let n = model.num_blocks();
    if a.init == "auto" {
        let report = run_metrics(
            g,
            model,
            a.metric_batch,
            seq,
            gsjf_core::metrics::DEFAULT_DOMINANCE_RATIO,
        )?;
        return Ok(report.inits());
    }
    let modes = a
        .init
        .split(',')
        .map(parse_init)
        .collect::<Result<Vec<_>, _>>()?;
    match modes.len() {
        1 => Ok(vec![modes[0]; n]),
        len if len == n => Ok(modes),
        len => Err(CliError::Usage(format!("{len} init modes for {n} blocks"))),
    }
}

fn tensor_json(x: &Tensor3) -> Result<String, CliError> {
    let (b, t, c) = x.dims();
    Ok(to_json_17(&json!({
        "batch": b,
        "seq": t,
        "channels": c,
        "data": x.as_slice(),
    }))?)
}

fn check_shape(count: usize, seq: usize) -> CliResult {
    if count == 0 || seq == 0 {
        return Err(CliError::Usage("--count and --seq must be >= 1".into()));
    }
    Ok(())
}

pub fn sample(g: &Global, a: &SampleArgs) -> CliResult {
    check_shape(a.count, a.seq)?;
    let model = load_model(&a.model).map_err(CliError::at(&a.model))?;
    a.strategy.check(model.num_blocks(), a.seq)?;
    let inits = resolve_inits(g, &model, a.seq, &a.init)?;
    let z = standard_normal(g.seed, a.count, a.seq, model.channels());
    let opts = SampleOptions {
        sweep: sweep_options(g, a.init.clamp),
        verify: a.verify,
    };
    let s = sample_model(&model, &z, &a.strategy, &inits, &opts)?;
    if let Some(path) = &a.out {
        fs::write(path, tensor_json(&s.x)?).map_err(|e| CliError::at(path)(e.into()))?;
    }
    if let Some(dir) = &a.trace_dir {
        write_trace_dir(dir, &s.traces).map_err(|e| CliError::at(dir)(e.into()))?;
    }
    // traces are in sampling order; report by block index
    let mut per_block: Vec<_> = s
        .traces
        .iter()
        .map(|t| (t.block, t.su_evals, t.clamp_events))
        .collect();
    per_block.sort_unstable();
    let serial = model.num_blocks() * (a.seq - 1);
    match g.format() {
        Format::Json => {
            let blocks: Vec<_> = per_block
                .iter()
                .map(|&(b, e, c)| json!({"block": b, "init": inits[b].label(), "su_evals": e, "clamp_events": c}))
                .collect();
            println!(
                "{}",
                json!({
                    "strategy": a.strategy.to_string(),
                    "su_evals": s.su_evals(),
                    "serial_su_evals": serial,
                    "clamp_events": s.clamp_events(),
                    "blocks": blocks,
                })
            );
        }
        Format::Csv => {
            let stdout = io::stdout();
            write_traces_csv(&s.traces, stdout.lock())?;
        }
        Format::Text => {
            println!(
                "{}: {} s/u evaluations (serial {serial}), {} clamp events",
                a.strategy,
                s.su_evals(),
                s.clamp_events()
            );
            for (b, e, _) in per_block {
                println!("  block {b} init {:>2} s/u evals {e}", inits[b].label());
            }
        }
    }
    Ok(())
}

fn write_trace_dir(dir: &Path, traces: &[ConvergenceTrace]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for t in traces {
        let f = File::create(dir.join(format!("block{}.csv", t.block)))?;
        write_traces_csv(std::slice::from_ref(t), BufWriter::new(f))?;
    }
    Ok(())
}

fn bench_text(rows: &[BenchRecord]) -> String {
    let mut out = format!(
        "{:<24} {:>14} {:>9} {:>12} {:>8}\n",
        "strategy", "wall", "s/u evals", "max |dev|", "speedup"
    );
    for r in rows {
        let dev = r
            .max_abs_dev
            .map_or_else(|| "-".to_string(), |d| format!("{d:.3e}"));
        out.push_str(&format!(
            "{:<24} {:>11.3} ms {:>9} {:>12} {:>7.2}x\n",
            r.strategy,
            r.wall_ns as f64 / 1e6,
            r.su_evals,
            dev,
            r.speedup
        ));
    }
    out
}

pub fn bench(g: &Global, a: &BenchArgs) -> CliResult {
    check_shape(a.count, a.seq)?;
    if a.repeats == 0 {
        return Err(CliError::Usage("--repeats must be >= 1".into()));
    }
    let model = load_model(&a.model).map_err(CliError::at(&a.model))?;
    for s in &a.strategies {
        s.check(model.num_blocks(), a.seq)?;
    }
    let inits = resolve_inits(g, &model, a.seq, &a.init)?;
    let z = standard_normal(g.seed, a.count, a.seq, model.channels());
    let opts = BenchOptions {
        repeats: a.repeats,
        sweep: sweep_options(g, a.init.clamp),
        verify: !a.no_verify,
        parallel: a.parallel,
    };
    let rows = run_bench(
        &model,
        &z,
        &a.strategies,
        &inits,
        &opts,
        a.trace_dir.as_deref(),
    )?;
    if let Some(path) = &a.out {
        write_csv_file(path, &rows).map_err(|e| CliError::at(path)(e.into()))?;
    }
    eprintln!("note: CPU wall-clock on toy models; not comparable with accelerator timings");
    match g.format() {
        Format::Json => println!(
            "{}",
            serde_json::to_string(&rows).map_err(gsjf_core::Error::from)?
        ),
        Format::Csv => write_bench_csv(&rows, io::stdout().lock())?,
        Format::Text => print!("{}", bench_text(&rows)),
    }
    Ok(())
}

fn write_csv_file(path: &Path, rows: &[BenchRecord]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_bench_csv(rows, &mut w)?;
    w.flush()
}
