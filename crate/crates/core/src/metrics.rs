//! Per-block Initial Guessing Metric (IGM) and Convergence Ranking Metric
//! (CRM), and the tough-block selection that turns them into a strategy.
//!
//! IGM scores a starting point by the size of the first Jacobi update's
//! error: `|| mean_B(Σ(X⁽⁰⁾) Z + μ(X⁽⁰⁾) - X*) ||`. CRM ranks blocks by
//! `|| mean_B(Σ⁻¹(X*) X*) || · ||W_s|| + ||W_u||`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{sigma, standard_normal, FlowBlock, FlowModel};
use crate::sampler::{initial_guess, InitMode};
use crate::tensor::{batch_mean, Norm, Tensor3};

/// IGM values above this mark the init as unusable regardless of comparison.
pub const IGM_PATHOLOGICAL: f64 = 1e4;
pub const DEFAULT_DOMINANCE_RATIO: f64 = 3.0;
pub const DEFAULT_METRIC_BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgmValue {
    /// The norm, or the largest finite entry seen when evaluation overflowed.
    pub value: f64,
    pub overflow: bool,
    pub pathological: bool,
}

impl IgmValue {
    fn finite(value: f64) -> Self {
        Self {
            value,
            overflow: false,
            pathological: value > IGM_PATHOLOGICAL,
        }
    }

    fn overflowed(partial_max: f64) -> Self {
        Self {
            value: partial_max,
            overflow: true,
            pathological: true,
        }
    }
}

fn largest_finite(values: &[f64]) -> f64 {
    values
        .iter()
        .filter(|v| v.is_finite())
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// IGM of an explicit starting point `x0`.
///
/// Evaluates `Σ(x0) z + μ(x0) - x_star` without any clamping; a non-finite
/// `exp(s)` or residual is reported as an overflowed, pathological value.
pub fn igm_from_initial(
    block: &FlowBlock,
    x0: &Tensor3,
    z: &Tensor3,
    x_star: &Tensor3,
    norm: Norm,
) -> Result<IgmValue> {
    z.same_dims(x0)?;
    z.same_dims(x_star)?;
    let (b, t, c) = z.dims();
    let mut s = Tensor3::zeros(b, t, c);
    let mut u = Tensor3::zeros(b, t, c);
    if x0.channels() != block.channels() {
        return Err(Error::Dimension(format!(
            "input has {} channels, block expects {}",
            c,
            block.channels()
        )));
    }
    if let Err(e) = block.su_window(&block.new_state(b), x0, t, &mut s, &mut u) {
        return match e {
            Error::Overflow { .. } => {
                let partial = largest_finite(s.as_slice()).max(largest_finite(u.as_slice()));
                Ok(IgmValue::overflowed(partial))
            }
            other => Err(other),
        };
    }
    let mut unused = 0;
    let mut resid = Tensor3::zeros(b, t, c);
    for (i, r) in resid.as_mut_slice().iter_mut().enumerate() {
        let sig = sigma(s.as_slice()[i], None, &mut unused);
        *r = sig * z.as_slice()[i] + u.as_slice()[i] - x_star.as_slice()[i];
    }
    if !resid.is_finite() {
        return Ok(IgmValue::overflowed(largest_finite(resid.as_slice())));
    }
    Ok(IgmValue::finite(norm.apply(&batch_mean(&resid))))
}

/// IGM for one of the two standard starting points built from `z`.
///
/// `z` should be `block.forward(x_star)`.
pub fn compute_igm(
    block: &FlowBlock,
    x_star: &Tensor3,
    z: &Tensor3,
    init: InitMode,
    norm: Norm,
) -> Result<IgmValue> {
    igm_from_initial(block, &initial_guess(z, init), z, x_star, norm)
}

/// The three CRM factors and their combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrmValue {
    pub crm: f64,
    /// `|| mean_B(Σ⁻¹(X*) X*) ||`
    pub nvp: f64,
    pub ws: f64,
    pub wu: f64,
}

pub fn compute_crm(block: &FlowBlock, x_star: &Tensor3, norm: Norm) -> Result<CrmValue> {
    let (s, _) = block.eval_su(x_star)?;
    let scaled = s.zip_map(x_star, |sv, xv| (-sv).exp() * xv)?;
    if !scaled.is_finite() {
        return Err(Error::Overflow {
            site: Default::default(),
            max_abs: scaled.max_abs(),
        });
    }
    Ok(crm_from_parts(
        norm.apply(&batch_mean(&scaled)),
        norm.apply(&block.w_s),
        norm.apply(&block.w_u),
    ))
}

fn crm_from_parts(nvp: f64, ws: f64, wu: f64) -> CrmValue {
    CrmValue {
        crm: nvp * ws + wu,
        nvp,
        ws,
        wu,
    }
}

/// Picks the start with the smaller IGM, avoiding pathological ones when
/// the other is usable.
pub fn choose_init(igm_z: &IgmValue, igm_z0: &IgmValue) -> InitMode {
    match (igm_z.pathological, igm_z0.pathological) {
        (true, false) => InitMode::FromZ0,
        (false, true) => InitMode::FromZ,
        _ if igm_z.value <= igm_z0.value => InitMode::FromZ,
        _ => InitMode::FromZ0,
    }
}

/// Share of the total, in percent. Equal shares when everything is zero.
pub fn crm_percent(crms: &[f64]) -> Vec<f64> {
    let total: f64 = crms.iter().sum();
    if total > 0.0 {
        crms.iter().map(|c| 100.0 * c / total).collect()
    } else {
        vec![100.0 / crms.len().max(1) as f64; crms.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSelection {
    /// Blocks in the order they were picked.
    pub blocks: Vec<usize>,
    pub dominance_ratio: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Greedy tough-block selection: while the largest remaining CRM is at least
/// `ratio` times the median of the remaining CRMs (and strictly above it),
/// move it to the stack. Ties go to the lower block index.
pub fn select_stack(crms: &[f64], ratio: f64) -> Result<StackSelection> {
    if ratio.is_nan() || ratio <= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "dominance ratio {ratio} must be > 1"
        )));
    }
    if let Some(bad) = crms.iter().find(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "CRM value {bad} is not finite"
        )));
    }
    let mut remaining: Vec<usize> = (0..crms.len()).collect();
    let mut blocks = Vec::new();
    while remaining.len() > 1 {
        let (pos, &top) = remaining
            .iter()
            .enumerate()
            .max_by(|(_, &a), (_, &b)| crms[a].total_cmp(&crms[b]).then(b.cmp(&a)))
            .expect("non-empty");
        let mut vals: Vec<f64> = remaining.iter().map(|&i| crms[i]).collect();
        let med = median(&mut vals);
        if crms[top] > med && crms[top] >= ratio * med {
            blocks.push(top);
            remaining.remove(pos);
        } else {
            break;
        }
    }
    Ok(StackSelection {
        blocks,
        dominance_ratio: ratio,
    })
}

/// One norm's view of a block's metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormVariant {
    pub igm_z: f64,
    pub igm_z0: f64,
    pub crm: f64,
    pub nvp: f64,
    pub ws: f64,
    pub wu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMetrics {
    pub igm_z: f64,
    pub igm_z0: f64,
    pub igm_z_pathological: bool,
    pub igm_z0_pathological: bool,
    pub init: InitMode,
    pub crm: f64,
    pub nvp: f64,
    pub ws: f64,
    pub wu: f64,
    pub percent: f64,
    /// Keyed by norm name.
    pub variants: BTreeMap<String, NormVariant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// The norm behind the top-level values and the stack.
    pub norm: Norm,
    pub blocks: Vec<BlockMetrics>,
    pub stack: Vec<usize>,
    pub dominance_ratio: f64,
    /// Whether every norm variant orders the blocks by CRM the same way.
    pub variant_ranks_agree: bool,
}

impl MetricReport {
    pub fn inits(&self) -> Vec<InitMode> {
        self.blocks.iter().map(|b| b.init).collect()
    }

    pub fn crms(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.crm).collect()
    }

    pub fn crms_for(&self, norm: Norm) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| b.variants[norm.name()].crm)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions {
    pub norm: Norm,
    pub dominance_ratio: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            norm: Norm::Spectral,
            dominance_ratio: DEFAULT_DOMINANCE_RATIO,
        }
    }
}

/// Indices sorted by descending value, ties by index.
pub fn rank_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Data-space batch for a synthetic model: serial inversion of seeded
/// standard-normal noise.
pub fn synthetic_x_star(model: &FlowModel, seed: u64, batch: usize, seq: usize) -> Result<Tensor3> {
    let z = standard_normal(seed, batch, seq, model.channels());
    model.inverse_serial(&z)
}

/// One forward pass of `x_star` through the model, then IGM for both inits
/// and CRM for every block under every norm, init choices and the stack.
pub fn metric_pass(
    model: &FlowModel,
    x_star: &Tensor3,
    opts: &MetricOptions,
) -> Result<MetricReport> {
    let pairs = model.forward_pairs(x_star)?;
    let mut blocks = Vec::with_capacity(pairs.len());
    for (l, ((xin, z), block)) in pairs.iter().zip(&model.blocks).enumerate() {
        let at = |e: Error| e.in_block(l);
        let mut variants = BTreeMap::new();
        let mut primary = None;
        for norm in Norm::ALL {
            let igm_z = compute_igm(block, xin, z, InitMode::FromZ, norm).map_err(at)?;
            let igm_z0 = compute_igm(block, xin, z, InitMode::FromZ0, norm).map_err(at)?;
            let crm = compute_crm(block, xin, norm).map_err(at)?;
            variants.insert(
                norm.name().to_string(),
                NormVariant {
                    igm_z: igm_z.value,
                    igm_z0: igm_z0.value,
                    crm: crm.crm,
                    nvp: crm.nvp,
                    ws: crm.ws,
                    wu: crm.wu,
                },
            );
            if norm == opts.norm {
                primary = Some((igm_z, igm_z0, crm));
            }
        }
        let (igm_z, igm_z0, crm) = primary.expect("Norm::ALL covers every norm");
        blocks.push(BlockMetrics {
            igm_z: igm_z.value,
            igm_z0: igm_z0.value,
            igm_z_pathological: igm_z.pathological,
            igm_z0_pathological: igm_z0.pathological,
            init: choose_init(&igm_z, &igm_z0),
            crm: crm.crm,
            nvp: crm.nvp,
            ws: crm.ws,
            wu: crm.wu,
            percent: 0.0,
            variants,
        });
    }
    let crms: Vec<f64> = blocks.iter().map(|b| b.crm).collect();
    for (b, p) in blocks.iter_mut().zip(crm_percent(&crms)) {
        b.percent = p;
    }
    let stack = select_stack(&crms, opts.dominance_ratio)?;
    let mut report = MetricReport {
        norm: opts.norm,
        blocks,
        stack: stack.blocks,
        dominance_ratio: opts.dominance_ratio,
        variant_ranks_agree: true,
    };
    let reference = rank_order(&crms);
    report.variant_ranks_agree = Norm::ALL
        .iter()
        .all(|&n| rank_order(&report.crms_for(n)) == reference);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const IMG128_COND: [f64; 8] = [6.52, 7.03, 3.08, 13.63, 9.66, 9.17, 70.54, 5.05];
    const IMG64_COND: [f64; 8] = [141.22, 9.25, 1.36, 1.82, 7.68, 5.08, 3.08, 19.81];

    #[test]
    fn stack_examples() {
        assert_eq!(
            select_stack(&[2.0; 5], 3.0).unwrap().blocks,
            Vec::<usize>::new()
        );
        assert_eq!(
            select_stack(&[0.0; 4], 3.0).unwrap().blocks,
            Vec::<usize>::new()
        );
        assert_eq!(
            select_stack(&[1.0, 1.0, 1.0, 100.0], 3.0).unwrap().blocks,
            vec![3]
        );
        assert_eq!(select_stack(&IMG128_COND, 3.0).unwrap().blocks, vec![6]);
        assert_eq!(select_stack(&IMG64_COND, 3.0).unwrap().blocks, vec![0, 7]);
        assert!(select_stack(&[1.0], 1.0).is_err());
        assert!(select_stack(&[1.0, f64::NAN], 3.0).is_err());
    }

    #[test]
    fn stack_ties_prefer_lower_index() {
        let sel = select_stack(&[50.0, 1.0, 50.0, 1.0, 1.0], 3.0).unwrap();
        assert_eq!(sel.blocks, vec![0, 2]);
    }

    #[test]
    fn percent_sums_to_hundred() {
        let p = crm_percent(&IMG128_COND);
        assert!((p.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        assert!((p[6] - 56.57).abs() < 0.01);
        assert_eq!(crm_percent(&[0.0, 0.0]), vec![50.0, 50.0]);
    }

    #[test]
    fn init_choice() {
        let a = IgmValue::finite(1.0);
        let b = IgmValue::finite(2.0);
        assert_eq!(choose_init(&a, &b), InitMode::FromZ);
        assert_eq!(choose_init(&b, &a), InitMode::FromZ0);
        assert_eq!(choose_init(&a, &a), InitMode::FromZ);
        let bad = IgmValue::overflowed(0.5);
        assert_eq!(choose_init(&bad, &b), InitMode::FromZ0);
    }

    #[test]
    fn rank_order_breaks_ties_by_index() {
        assert_eq!(rank_order(&[1.0, 3.0, 3.0, 0.0]), vec![1, 2, 0, 3]);
    }
}
