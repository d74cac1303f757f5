mod common;

use common::*;
use gsjf_core::flow::{gen_synthetic_model, gen_synthetic_model_scaled};
use gsjf_core::metrics::{
    compute_crm, compute_igm, igm_from_initial, metric_pass, select_stack, synthetic_x_star,
    MetricOptions, IGM_PATHOLOGICAL,
};
use gsjf_core::sampler::jacobi_sample;
use gsjf_core::{FlowModel, InitMode, Matrix, ModelConfig, Norm, SweepOptions};
use proptest::prelude::*;

fn config(blocks: usize) -> ModelConfig {
    ModelConfig {
        blocks,
        ..ModelConfig::default()
    }
}

fn model(seed: u64, blocks: usize, scale: f64) -> FlowModel {
    gen_synthetic_model(seed, &config(blocks), scale).unwrap()
}

#[test]
fn igm_is_zero_at_the_fixed_point() {
    let m = model(1, 1, 0.2);
    let b = &m.blocks[0];
    let z = random_tensor(2, 4, 8, 4);
    let x_star = b.inverse_serial(&z).unwrap();
    // x* was produced by the same update from z, so one more update is a no-op
    let v = igm_from_initial(b, &x_star, &z, &x_star, Norm::Spectral).unwrap();
    assert_eq!(v.value, 0.0);
    assert!(!v.pathological);
}

#[test]
fn igm_is_zero_for_zero_weights_from_z() {
    let m = model(3, 1, 0.0);
    let x = random_tensor(4, 3, 6, 4);
    let z = m.blocks[0].forward(&x).unwrap();
    let v = compute_igm(&m.blocks[0], &x, &z, InitMode::FromZ, Norm::Spectral).unwrap();
    assert_eq!(v.value, 0.0);
}

#[test]
fn igm_matches_direct_evaluation() {
    let m = model(5, 1, 0.2);
    let b = &m.blocks[0];
    let x_star = random_tensor(6, 5, 8, 4);
    let z = b.forward(&x_star).unwrap();
    for init in [InitMode::FromZ, InitMode::FromZ0] {
        let got = compute_igm(b, &x_star, &z, init, Norm::Spectral)
            .unwrap()
            .value;
        let x0 = gsjf_core::sampler::initial_guess(&z, init);
        let want = direct_igm(b, &x0, &z, &x_star);
        assert!((got - want).abs() <= 1e-10, "{init:?}: {got} vs {want}");
    }
}

#[test]
fn igm_overflow_is_flagged_not_raised() {
    let mut m = model(7, 1, 0.0);
    m.blocks[0].b_s = vec![900.0; 4];
    let x_star = random_tensor(8, 2, 5, 4);
    let z = random_tensor(9, 2, 5, 4);
    let v = compute_igm(&m.blocks[0], &x_star, &z, InitMode::FromZ, Norm::Spectral).unwrap();
    assert!(v.overflow && v.pathological);
    assert!(v.value.is_finite());
}

#[test]
fn large_igm_is_pathological() {
    let m = model(10, 1, 0.0);
    let x_star = random_tensor(11, 2, 5, 4).map(|v| v + 2.0 * IGM_PATHOLOGICAL);
    let z = random_tensor(12, 2, 5, 4);
    let v = compute_igm(&m.blocks[0], &x_star, &z, InitMode::FromZ0, Norm::Spectral).unwrap();
    assert!(v.pathological && !v.overflow);
}

#[test]
fn crm_zero_and_identity_cases() {
    let mut m = model(12, 1, 0.2);
    let x = random_tensor(13, 3, 6, 4);
    m.blocks[0].w_s = Matrix::zeros(4, 4);
    m.blocks[0].w_u = Matrix::zeros(4, 4);
    assert_eq!(
        compute_crm(&m.blocks[0], &x, Norm::Spectral).unwrap().crm,
        0.0
    );
    m.blocks[0].w_u = Matrix::identity(4);
    for seed in 0..3 {
        let x = random_tensor(20 + seed, 3, 6, 4);
        let crm = compute_crm(&m.blocks[0], &x, Norm::Spectral).unwrap();
        assert!((crm.crm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn crm_components_match_oracles() {
    let m = model(14, 1, 0.3);
    let b = &m.blocks[0];
    let x = random_tensor(15, 4, 7, 4);
    let crm = compute_crm(b, &x, Norm::Spectral).unwrap();
    assert!((crm.crm - (crm.nvp * crm.ws + crm.wu)).abs() <= 1e-12);
    assert!((crm.ws - svd_spectral(&b.w_s)).abs() <= 1e-9);
    assert!((crm.wu - svd_spectral(&b.w_u)).abs() <= 1e-9);
    let (s, _) = b.eval_su(&x).unwrap();
    let scaled = s.zip_map(&x, |sv, xv| (-sv).exp() * xv).unwrap();
    assert!((crm.nvp - svd_spectral(&naive_batch_mean(&scaled))).abs() <= 1e-9);
}

#[test]
fn crm_scale_covariance() {
    let m = model(16, 1, 0.3);
    let x = random_tensor(17, 3, 6, 4);
    let base = compute_crm(&m.blocks[0], &x, Norm::Spectral).unwrap();
    for alpha in [0.5, 2.0, 7.0] {
        let mut scaled = m.blocks[0].clone();
        scaled.w_u = scaled.w_u.scale(alpha);
        let c = compute_crm(&scaled, &x, Norm::Spectral).unwrap();
        assert!((c.crm - base.crm - (alpha - 1.0) * base.wu).abs() <= 1e-12 * (1.0 + c.crm));
    }
}

#[test]
fn select_stack_examples() {
    assert!(select_stack(&[4.0; 8], 3.0).unwrap().blocks.is_empty());
    let img64cond = [141.22, 9.25, 1.36, 1.82, 7.68, 5.08, 3.08, 19.81];
    assert_eq!(select_stack(&img64cond, 3.0).unwrap().blocks, vec![0, 7]);
    assert_eq!(
        select_stack(&[1.0, 1.0, 1.0, 100.0], 3.0).unwrap().blocks,
        vec![3]
    );
}

proptest! {
    #[test]
    fn select_stack_is_scale_invariant(
        crms in proptest::collection::vec(0.01f64..1000.0, 1..12),
        k in 0.001f64..1000.0,
    ) {
        let a = select_stack(&crms, 3.0).unwrap();
        let scaled: Vec<f64> = crms.iter().map(|c| c * k).collect();
        let b = select_stack(&scaled, 3.0).unwrap();
        prop_assert_eq!(a.blocks, b.blocks);
    }

    #[test]
    fn selected_blocks_dominate_the_rest(crms in proptest::collection::vec(0.0f64..100.0, 1..12)) {
        let sel = select_stack(&crms, 3.0).unwrap();
        for &s in &sel.blocks {
            for i in (0..crms.len()).filter(|i| !sel.blocks.contains(i)) {
                prop_assert!(crms[s] > crms[i]);
            }
        }
    }
}

#[test]
fn zero_weight_single_block_report() {
    let m = model(18, 1, 0.0);
    let x = synthetic_x_star(&m, 19, 16, 8).unwrap();
    let r = metric_pass(&m, &x, &MetricOptions::default()).unwrap();
    assert_eq!(r.blocks[0].igm_z, 0.0);
    assert_eq!(r.blocks[0].crm, 0.0);
    assert_eq!(r.blocks[0].init, InitMode::FromZ);
    assert!(r.stack.is_empty());
}

#[test]
fn report_invariants_hold() {
    let m = gen_synthetic_model_scaled(20, &config(4), &[0.1, 0.02, 0.03, 0.02]).unwrap();
    let x = synthetic_x_star(&m, 21, 32, 16).unwrap();
    let r = metric_pass(&m, &x, &MetricOptions::default()).unwrap();
    let total: f64 = r.blocks.iter().map(|b| b.percent).sum();
    assert!((total - 100.0).abs() <= 0.01);
    for b in &r.blocks {
        assert!((b.crm - (b.nvp * b.ws + b.wu)).abs() <= 1e-12);
        if !b.igm_z_pathological && !b.igm_z0_pathological {
            assert_eq!(b.init == InitMode::FromZ, b.igm_z <= b.igm_z0);
        }
        assert_eq!(b.variants.len(), 3);
        for (name, v) in &b.variants {
            assert!((v.crm - (v.nvp * v.ws + v.wu)).abs() <= 1e-12, "{name}");
        }
        assert_eq!(b.variants["spectral"].crm, b.crm);
    }
    assert_eq!(r.stack, vec![0]);
    let json = r.to_json().unwrap();
    let back: gsjf_core::MetricReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["blocks"][0]["init"].is_string());
    assert!(v["blocks"][0]["variants"]["frobenius"]["crm"].is_number());
    assert_eq!(v["dominance_ratio"], 3.0);
}

#[test]
fn top_crm_block_needs_the_most_sweeps() {
    let t = 32;
    let m = gen_synthetic_model_scaled(22, &config(4), &[0.02, 0.03, 0.12, 0.02]).unwrap();
    let x = synthetic_x_star(&m, 23, 32, t).unwrap();
    let r = metric_pass(&m, &x, &MetricOptions::default()).unwrap();
    let pairs = m.forward_pairs(&x).unwrap();
    let sweeps: Vec<usize> = pairs
        .iter()
        .zip(&m.blocks)
        .map(|((x_star, z), b)| {
            let (_, tr) = jacobi_sample(
                b,
                z,
                InitMode::FromZ,
                t - 1,
                &SweepOptions::with_ebound(0.0),
                Some(x_star),
            )
            .unwrap();
            tr.records
                .iter()
                .position(|rec| rec.distance.unwrap() <= 1e-6)
                .map_or(t, |k| k + 1)
        })
        .collect();
    let top = gsjf_core::metrics::rank_order(&r.crms())[0];
    let most = (0..4)
        .max_by_key(|&l| (sweeps[l], std::cmp::Reverse(l)))
        .unwrap();
    assert_eq!(top, 2);
    assert_eq!(top, most, "crms {:?} sweeps {sweeps:?}", r.crms());
}
