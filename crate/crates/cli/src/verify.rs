//! Invariant checks run against a model file.

use gsjf_core::analysis::{gamma_matrix, verify_error_recursion, DEFAULT_FD_STEP, MAX_GAMMA_DIM};
use gsjf_core::flow::{model_from_json, model_to_json, orient, standard_normal};
use gsjf_core::metrics::{
    compute_crm, igm_from_initial, metric_pass, synthetic_x_star, MetricOptions,
};
use gsjf_core::sampler::{
    gs_jacobi_sample, jacobi_sample, sample_model, serial_sample_model, SampleOptions,
};
use gsjf_core::{FlowModel, InitMode, Norm, Result, Segmentation, Strategy, SweepOptions, Tensor3};
use serde::Serialize;

use crate::{CliError, Format, Global, Suite, VerifyArgs};

type CliResult = std::result::Result<(), CliError>;
type SuiteFn = fn(&mut Ctx) -> Result<()>;

#[derive(Debug, Serialize)]
struct CheckResult {
    suite: &'static str,
    name: &'static str,
    pass: bool,
    detail: String,
}

struct Ctx<'a> {
    model: &'a FlowModel,
    seed: u64,
    seq: usize,
    out: Vec<CheckResult>,
}

impl Ctx<'_> {
    fn record(&mut self, suite: &'static str, name: &'static str, pass: bool, detail: String) {
        self.out.push(CheckResult {
            suite,
            name,
            pass,
            detail,
        });
    }

    fn noise(&self, salt: u64, batch: usize, seq: usize) -> Tensor3 {
        standard_normal(
            self.seed.wrapping_add(salt),
            batch,
            seq,
            self.model.channels(),
        )
    }

    /// Per-block `(X*, Z)` pairs in block orientation from seeded noise.
    fn pairs(&self, batch: usize, seq: usize) -> Result<Vec<(Tensor3, Tensor3)>> {
        let x = self.model.inverse_serial(&self.noise(1, batch, seq))?;
        self.model.forward_pairs(&x)
    }
}

fn flow_suite(cx: &mut Ctx) -> Result<()> {
    let x = cx.noise(10, 2, cx.seq);
    let back = cx.model.inverse_serial(&cx.model.forward(&x)?)?;
    let dev = back.max_abs_diff(&x);
    cx.record(
        "flow",
        "roundtrip",
        dev <= 1e-9,
        format!("max |dev| {dev:.2e} (≤ 1e-9)"),
    );

    let mut moved = 0usize;
    for (l, block) in cx.model.blocks.iter().enumerate() {
        let xin = orient(block, &x);
        let (s0, u0) = block.eval_su(&xin)?;
        for t in 0..cx.seq {
            let mut p = xin.clone();
            for b in 0..p.batch() {
                p.row_mut(b, t).iter_mut().for_each(|v| *v += 0.5);
            }
            let (s1, u1) = block.eval_su(&p)?;
            for b in 0..p.batch() {
                for k in 0..=t {
                    if s0.row(b, k) != s1.row(b, k) || u0.row(b, k) != u1.row(b, k) {
                        moved += 1;
                        eprintln!("block {l}: s/u at {k} moved when x_{t} changed");
                    }
                }
            }
        }
    }
    cx.record(
        "flow",
        "causality",
        moved == 0,
        format!("{moved} non-causal rows"),
    );

    let text = model_to_json(cx.model)?;
    let same = model_from_json(&text)? == *cx.model;
    cx.record(
        "flow",
        "serialization",
        same,
        "save/load is bit-exact".into(),
    );
    Ok(())
}

fn samplers_suite(cx: &mut Ctx) -> Result<()> {
    let t = cx.seq;
    let exact = SweepOptions::with_ebound(0.0);
    let pairs = cx.pairs(2, t)?;
    let mut jac = 0.0f64;
    let mut gs = 0.0f64;
    for ((_, z), block) in pairs.iter().zip(&cx.model.blocks) {
        let oracle = block.inverse_serial(z)?;
        let (x, _) = jacobi_sample(block, z, InitMode::FromZ, t - 1, &exact, None)?;
        jac = jac.max(x.max_abs_diff(&oracle));
        for g in [1, 2, 4, t].into_iter().filter(|&g| g <= t) {
            let seg = Segmentation::equal(t, g)?;
            let (x, _) = gs_jacobi_sample(
                block,
                z,
                &seg,
                seg.max_group(),
                InitMode::FromZ,
                &exact,
                None,
            )?;
            gs = gs.max(x.max_abs_diff(&oracle));
        }
    }
    cx.record(
        "samplers",
        "jacobi exact after T-1 sweeps",
        jac <= 1e-10,
        format!("max |dev| {jac:.2e} (≤ 1e-10)"),
    );
    cx.record(
        "samplers",
        "gs-jacobi matches serial",
        gs <= 1e-10,
        format!("max |dev| {gs:.2e} (≤ 1e-10)"),
    );

    let z = cx.noise(20, 2, t);
    let serial = serial_sample_model(cx.model, &z, &exact)?;
    let all: Vec<usize> = (0..cx.model.num_blocks()).collect();
    let strategy = Strategy::new(all, vec![t], vec![1], t - 1)?;
    let inits = vec![InitMode::FromZ; cx.model.num_blocks()];
    let s = sample_model(
        cx.model,
        &z,
        &strategy,
        &inits,
        &SampleOptions {
            sweep: exact,
            verify: false,
        },
    )?;
    let dev = s.x.max_abs_diff(&serial.x);
    cx.record(
        "samplers",
        "stack-all at G=T",
        dev <= 1e-9 && s.su_evals() == serial.su_evals(),
        format!(
            "{strategy}: max |dev| {dev:.2e}, {} vs {} s/u evals",
            s.su_evals(),
            serial.su_evals()
        ),
    );
    Ok(())
}

fn metrics_suite(cx: &mut Ctx) -> Result<()> {
    let pairs = cx.pairs(4, cx.seq)?;
    let mut igm = 0.0f64;
    let mut crm_err = 0.0f64;
    for ((x_star, z), block) in pairs.iter().zip(&cx.model.blocks) {
        let fixed = block.inverse_serial(z)?;
        for norm in Norm::ALL {
            igm = igm.max(igm_from_initial(block, &fixed, z, &fixed, norm)?.value);
            let c = compute_crm(block, x_star, norm)?;
            crm_err = crm_err.max((c.crm - (c.nvp * c.ws + c.wu)).abs());
        }
    }
    cx.record(
        "metrics",
        "IGM zero at fixed point",
        igm == 0.0,
        format!("max IGM {igm:e}"),
    );
    cx.record(
        "metrics",
        "CRM = nvp*ws + wu",
        crm_err <= 1e-12,
        format!("max error {crm_err:.2e} (≤ 1e-12)"),
    );

    let x = synthetic_x_star(cx.model, cx.seed, 16, cx.seq)?;
    let r = metric_pass(cx.model, &x, &MetricOptions::default())?;
    let total: f64 = r.blocks.iter().map(|b| b.percent).sum();
    cx.record(
        "metrics",
        "CRM percent sums to 100",
        (total - 100.0).abs() <= 1e-6,
        format!("sum {total:.9}"),
    );
    Ok(())
}

fn analysis_suite(cx: &mut Ctx) -> Result<()> {
    let c = cx.model.channels();
    let t = cx.seq.min(MAX_GAMMA_DIM / c).min(8);
    if t < 2 {
        cx.record(
            "analysis",
            "gamma",
            true,
            format!("skipped: C = {c} leaves no room for T ≥ 2"),
        );
        return Ok(());
    }
    let pairs = cx.pairs(1, t)?;
    let mut power = 0.0f64;
    let mut spread = 0.0f64;
    let mut causal = Ok(());
    for (l, ((_, z), block)) in pairs.iter().zip(&cx.model.blocks).enumerate() {
        let x = block.inverse_serial(z)?;
        match gamma_matrix(block, &x, z, DEFAULT_FD_STEP) {
            Ok(g) => power = power.max(g.power(t).max_abs()),
            Err(e @ gsjf_core::Error::Causality { .. }) => {
                causal = Err(format!("block {l}: {e}"));
                continue;
            }
            Err(e) => return Err(e),
        }
        let r = verify_error_recursion(block, z, &[1e-2, 1e-3, 1e-4], cx.seed, DEFAULT_FD_STEP)?;
        spread = spread.max(r.spread);
    }
    match causal {
        Ok(()) => cx.record(
            "analysis",
            "gamma block lower triangular",
            true,
            format!("T = {t}"),
        ),
        Err(m) => cx.record("analysis", "gamma block lower triangular", false, m),
    }
    cx.record(
        "analysis",
        "gamma nilpotent",
        power <= 1e-10,
        format!("max |Γ^T| {power:.2e} (≤ 1e-10)"),
    );
    cx.record(
        "analysis",
        "first-order error map",
        spread < 10.0,
        format!("ratio spread {spread:.2} (< 10)"),
    );
    Ok(())
}

pub fn run(g: &Global, a: &VerifyArgs) -> CliResult {
    if a.seq < 2 {
        return Err(CliError::Usage("--seq must be >= 2".into()));
    }
    let model = gsjf_core::flow::load_model(&a.model).map_err(CliError::at(&a.model))?;
    let mut cx = Ctx {
        model: &model,
        seed: g.seed,
        seq: a.seq,
        out: Vec::new(),
    };
    let suites: &[(Suite, SuiteFn)] = &[
        (Suite::Flow, flow_suite),
        (Suite::Samplers, samplers_suite),
        (Suite::Metrics, metrics_suite),
        (Suite::Analysis, analysis_suite),
    ];
    for (suite, f) in suites {
        if a.suite == Suite::All || a.suite == *suite {
            f(&mut cx)?;
        }
    }
    let failed = cx.out.iter().filter(|c| !c.pass).count();
    match g.format() {
        Format::Json => println!(
            "{}",
            serde_json::to_string(&cx.out).map_err(gsjf_core::Error::from)?
        ),
        Format::Csv => {
            println!("suite,check,pass,detail");
            for c in &cx.out {
                println!(
                    "{},{},{},\"{}\"",
                    c.suite,
                    c.name,
                    c.pass,
                    c.detail.replace('"', "\"\"")
                );
            }
        }
        Format::Text => {
            for c in &cx.out {
                let tag = if c.pass { "PASS" } else { "FAIL" };
                println!("{tag} {}/{}: {}", c.suite, c.name, c.detail);
            }
        }
    }
    if failed > 0 {
        return Err(CliError::VerifyFailed(failed));
    }
    Ok(())
}
