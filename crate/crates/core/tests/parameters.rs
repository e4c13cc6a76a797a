use cstr::backbone::parameter_count;
use cstr::{AblationToggles, Backbone, BackboneConfig, BackboneProfile, Cstr, HeadKind, ModelConfig, ProfileKind};

const PAPER_PARAMETERS: usize = 190_405_829;

fn conv_bn(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k + 2 * cout
}

fn cbam(c: usize, r: usize) -> usize {
    let h = c / r;
    (c * h + h) + (h * c + c) + (2 * 7 * 7 + 1)
}

fn block(cin: usize, cout: usize, r: usize) -> usize {
    let shortcut = if cin != cout { conv_bn(cin, cout, 1) } else { 0 };
    conv_bn(cin, cout, 3) + conv_bn(cout, cout, 3) + cbam(cout, r) + shortcut
}

fn blocks(n: usize, cin: usize, cout: usize, r: usize) -> usize {
    (0..n).map(|i| block(if i == 0 { cin } else { cout }, cout, r)).sum()
}

fn non_local(c: usize) -> usize {
    let h = c / 2;
    3 * (c * h + h) + (h * c + c)
}

fn down(c: usize) -> usize {
    non_local(c) + conv_bn(c, c, 3)
}

/// Layer-by-layer count of the full-size network, written out independently
/// of the declaration code.
fn paper_walk() -> usize {
    let r = 16;
    let stage1 = conv_bn(1, 48, 3) + conv_bn(48, 96, 3);
    let stage2 = blocks(1, 96, 192, r) + conv_bn(192, 192, 3);
    let stage3 = down(192) + blocks(4, 192, 384, r) + conv_bn(384, 384, 3);
    let stage4 = down(384) + blocks(7, 384, 768, r) + conv_bn(768, 768, 3) + blocks(5, 768, 768, r);
    let stage5 = down(768) + blocks(3, 768, 768, r) + conv_bn(768, 768, 2);
    let fpn = [384, 768, 768].iter().map(|c| c * 512 + 512).sum::<usize>() + 512 * 512 * 9 + 512;
    let head = 25 * 512 * 37 + 25 * 37;
    stage1 + stage2 + stage3 + stage4 + stage5 + fpn + head
}

#[test]
fn paper_model_parameter_count_is_frozen() {
    let model = Cstr::new(ModelConfig::paper()).unwrap();
    assert_eq!(model.parameter_count(), PAPER_PARAMETERS);
    assert_eq!(paper_walk(), PAPER_PARAMETERS);
}

#[test]
fn toy_count_is_the_sum_of_declared_shapes() {
    let model = Cstr::new(ModelConfig::toy()).unwrap();
    let decl = model.declarations();
    let sum: usize = decl
        .specs()
        .iter()
        .filter(|s| s.trainable)
        .map(|s| s.shape.iter().product::<usize>())
        .sum();
    assert_eq!(model.parameter_count(), sum);
    let store = model.init_params::<f32>(0).unwrap();
    assert_eq!(store.trainable_numel(), sum);
    assert!(sum > 0);
}

#[test]
fn running_statistics_are_not_trainable() {
    let model = Cstr::new(ModelConfig::toy()).unwrap();
    for s in model.declarations().specs() {
        let stat = s.name.ends_with("running_mean") || s.name.ends_with("running_var");
        assert_eq!(s.trainable, !stat, "{}", s.name);
    }
}

#[test]
fn enhanced_module_adds_parameters() {
    for kind in [ProfileKind::Paper, ProfileKind::Toy] {
        for sadm in [false, true] {
            let base = parameter_count(kind, AblationToggles { em: false, sadm }).unwrap();
            let em = parameter_count(kind, AblationToggles { em: true, sadm }).unwrap();
            assert!(base < em, "{kind} sadm={sadm}: {base} !< {em}");
        }
    }
}

#[test]
fn semantic_downsampling_adds_parameters() {
    let plain = parameter_count(ProfileKind::Toy, AblationToggles { em: true, sadm: false }).unwrap();
    let sadm = parameter_count(ProfileKind::Toy, AblationToggles::FULL).unwrap();
    assert!(plain < sadm);
}

#[test]
fn degenerate_profile_has_no_parameters() {
    let b = Backbone::new(BackboneConfig {
        profile: BackboneProfile::degenerate(),
        sadm: false,
        cbam: false,
        fpn: false,
    })
    .unwrap();
    assert_eq!(b.parameter_count(), 0);
}

#[test]
fn head_parameters_follow_positions() {
    let count = |head| {
        Cstr::new(ModelConfig { head, ..ModelConfig::toy() })
            .unwrap()
            .head()
            .parameter_count()
    };
    // toy feature map is 64 channels × 16 columns, k = 8
    assert_eq!(count(HeadKind::Shpn), 64 * 37 + 37);
    assert_eq!(count(HeadKind::Sepn), 16 * (64 * 37 + 37));
    assert_eq!(count(HeadKind::Sppn), 8 * (64 * 37 + 37));
}
