use cstr::gradcheck::{grad_check, FamilyKind, GradCheckOptions, SuiteOptions, FAMILIES};
use cstr::nn::{Mode, Scope};
use cstr::{Cstr, LossKind, ModelConfig, ParameterStore, Tensor};

const TOL: f64 = 1e-4;

fn check_kind(kind: FamilyKind) {
    let opts = SuiteOptions::default();
    assert!(opts.primitive_cases >= 20);
    let mut seen = 0;
    for f in FAMILIES.iter().filter(|f| f.kind == kind) {
        let r = f.check(&opts).unwrap();
        assert!(r.entries_checked > 0, "{} checked nothing", r.family);
        assert!(r.max_rel_error < TOL, "{}: {:.3e} ({:?})", r.family, r.max_rel_error, r.worst);
        seen += 1;
    }
    assert!(seen > 0);
}

#[test]
fn primitive_ops_match_finite_differences() {
    check_kind(FamilyKind::Primitive);
}

#[test]
fn blocks_match_finite_differences() {
    check_kind(FamilyKind::Block);
}

#[test]
fn heads_match_finite_differences() {
    check_kind(FamilyKind::Head);
}

#[test]
fn losses_match_finite_differences() {
    check_kind(FamilyKind::Loss);
}

#[test]
fn every_required_family_is_covered() {
    let names: Vec<&str> = FAMILIES.iter().map(|f| f.name).collect();
    for want in [
        "conv2d", "maxpool2d", "global_avg_pool", "matmul", "relu", "sigmoid", "add_sub_mul", "softmax",
        "log_softmax", "batch_norm", "upsample_nearest", "concat", "sum_mean_max", "reshape_permute",
        "residual", "cbam", "non_local", "sadm", "fpn", "shpn", "sepn", "sppn", "ce_loss", "ctc_loss",
    ] {
        assert!(names.contains(&want), "{want} missing");
    }
}

fn full_model_check(loss: LossKind) {
    let model = Cstr::new(ModelConfig {
        loss,
        ..ModelConfig::toy()
    })
    .unwrap();
    let params: ParameterStore<f64> = model.init_params(5).unwrap();
    let (h, w) = model.input_size();
    let images = Tensor::from_fn(&[2, 1, h, w], |i| ((i * 7919 % 113) as f64) / 113.0).unwrap();
    let words = ["cat", "b52"];
    let m = model.clone();
    let report = grad_check(
        move |g, p| {
            let x = g.constant(images.clone());
            let logits = {
                let mut scope = Scope::new(g, p, Mode::Train);
                m.forward(&mut scope, x)?
            };
            m.loss(g, logits, &words, 0.1)
        },
        &params,
        GradCheckOptions {
            // 1e-5 steps cross relu kinks somewhere in the deep stack
            eps: 1e-6,
            max_entries_per_param: Some(1),
            seed: 9,
            floor: 1e-5,
        },
    )
    .unwrap();
    assert!(report.entries_checked > 50);
    assert!(report.max_rel_error < TOL, "{report:?}");
}

#[test]
fn full_toy_model_ce_gradient_subsample() {
    full_model_check(LossKind::Ce);
}

#[test]
fn full_toy_model_ctc_gradient_subsample() {
    full_model_check(LossKind::Ctc);
}
