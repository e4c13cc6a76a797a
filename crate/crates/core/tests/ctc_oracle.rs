use cstr::autodiff::Graph;
use cstr::text::ctc::{ctc_brute_force, ctc_loss, min_frames};
use cstr::Tensor;
use proptest::prelude::*;

const TOL: f64 = 1e-9;

/// Random `T×V` distribution, label over non-blank symbols, and blank index.
fn instance() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<usize>, usize)> {
    (1usize..=6, 2usize..=4).prop_flat_map(|(t, v)| {
        (
            Just(t),
            Just(v),
            prop::collection::vec(0.05f64..1.0, t * v),
            prop::collection::vec(0usize..v - 1, 0..=3),
            0..v,
        )
    })
}

fn normalise(t: usize, v: usize, raw: &[f64]) -> Vec<f64> {
    let mut p = raw.to_vec();
    for row in p.chunks_mut(v) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    assert_eq!(p.len(), t * v);
    p
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    #[test]
    fn dynamic_programme_matches_enumeration((t, v, raw, sym, blank) in instance()) {
        // symbols skip the blank index
        let label: Vec<usize> = sym.iter().map(|&s| if s >= blank { s + 1 } else { s }).collect();
        let p = normalise(t, v, &raw);
        let probs = Tensor::new(&[t, v], p.clone()).unwrap();
        let log_probs = Tensor::new(&[t, v], p.iter().map(|x| x.ln()).collect()).unwrap();
        let dp = ctc_loss(&log_probs, &label, blank).unwrap();
        let bf = ctc_brute_force(&probs, &label, blank).unwrap();
        prop_assert_eq!(dp.feasible, min_frames(&label) <= t);
        if dp.feasible {
            prop_assert!((dp.value - bf).abs() < TOL, "dp {} vs brute force {}", dp.value, bf);
        } else {
            prop_assert_eq!(bf, f64::INFINITY);
        }
    }
}

fn uniform_loss(frames: usize, label: &[usize]) -> f64 {
    let lp = Tensor::full(&[frames, 2], 0.5f64.ln()).unwrap();
    ctc_loss(&lp, label, 1).unwrap().value
}

#[test]
fn fixed_single_path_case() {
    let lp = Tensor::new(&[1, 2], vec![0.6f64.ln(), 0.4f64.ln()]).unwrap();
    let loss = ctc_loss(&lp, &[0], 1).unwrap().value;
    assert!((loss + 0.6f64.ln()).abs() < TOL);
}

#[test]
fn fixed_two_frame_case() {
    assert!((uniform_loss(2, &[0]) + 0.75f64.ln()).abs() < TOL);
}

#[test]
fn fixed_repeated_label_case() {
    assert!((uniform_loss(3, &[0, 0]) + (1.0f64 / 8.0).ln()).abs() < TOL);
}

#[test]
fn graph_op_averages_per_sample_losses() {
    let labels = vec![vec![0], vec![0, 0]];
    let data: Vec<f64> = vec![0.5f64.ln(); 2 * 3 * 2];
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[2, 3, 2], data).unwrap());
    let loss = g.ctc_loss(x, &labels, 1).unwrap();
    let a = uniform_loss(3, &[0]);
    let b = uniform_loss(3, &[0, 0]);
    assert!((g.value(loss).data()[0] - (a + b) / 2.0).abs() < 1e-12);
}
