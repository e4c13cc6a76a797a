use cstr::text::{ce_loss, decode_ce, decode_ctc, metrics, Alphabet, LabelBatch};
use cstr::{Graph, Tensor};
use proptest::prelude::*;

/// One-hot-ish logit rows picking the given classes.
fn rows(picks: &[usize], v: usize) -> Vec<f64> {
    let mut out = vec![0.0; picks.len() * v];
    for (i, &c) in picks.iter().enumerate() {
        out[i * v + c] = 5.0;
    }
    out
}

fn ce(picks: &[usize]) -> String {
    let a = Alphabet::default();
    let v = a.num_classes();
    let t = Tensor::new(&[1, picks.len(), v], rows(picks, v)).unwrap();
    decode_ce(&t, &a).unwrap().remove(0)
}

fn ctc(picks: &[usize]) -> String {
    let a = Alphabet::default();
    let v = a.num_classes();
    let t = Tensor::new(&[picks.len(), v], rows(picks, v)).unwrap();
    decode_ctc(&t, &a).unwrap()
}

fn idx(c: char) -> usize {
    Alphabet::default().index_of(c).unwrap()
}

#[test]
fn ce_decoding_table() {
    let phi = Alphabet::default().special();
    let (c, a, t) = (idx('c'), idx('a'), idx('t'));
    assert_eq!(ce(&[c, a, t, phi, phi, phi, phi, phi]), "cat");
    assert_eq!(ce(&[c, phi, t]), "c");
    assert_eq!(ce(&[phi; 5]), "");
    assert_eq!(ce(&[c, a, t]), "cat");
}

#[test]
fn ctc_decoding_table() {
    let blank = Alphabet::default().special();
    let (a, b) = (idx('a'), idx('b'));
    assert_eq!(ctc(&[a, a, blank, b]), "ab");
    assert_eq!(ctc(&[blank, blank]), "");
    assert_eq!(ctc(&[a, blank, a]), "aa");
    assert_eq!(ctc(&[a, a, a]), "a");
}

#[test]
fn argmax_ties_take_the_lowest_class() {
    let a = Alphabet::default();
    let v = a.num_classes();
    let t = Tensor::new(&[1, 1, v], vec![1.0; v]).unwrap();
    assert_eq!(decode_ce(&t, &a).unwrap(), vec!["a".to_string()]);
}

fn logits() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..=8).prop_flat_map(|p| (Just(p), prop::collection::vec(-4.0f64..4.0, p * 37)))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn decoding_is_invariant_to_monotone_maps((p, data) in logits(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let a = Alphabet::default();
        let maps: [&dyn Fn(f64) -> f64; 3] = [&|x| scale * x + shift, &|x| x.exp(), &|x| x * x * x];
        let base_ce = decode_ce(&Tensor::new(&[1, p, 37], data.clone()).unwrap(), &a).unwrap();
        let base_ctc = decode_ctc(&Tensor::new(&[p, 37], data.clone()).unwrap(), &a).unwrap();
        for f in maps {
            let mapped: Vec<f64> = data.iter().map(|&x| f(x)).collect();
            prop_assert_eq!(&decode_ce(&Tensor::new(&[1, p, 37], mapped.clone()).unwrap(), &a).unwrap(), &base_ce);
            prop_assert_eq!(&decode_ctc(&Tensor::new(&[p, 37], mapped).unwrap(), &a).unwrap(), &base_ctc);
        }
    }

    #[test]
    fn ce_loss_ignores_per_position_shifts((p, data) in logits(), shifts in prop::collection::vec(-20.0f64..20.0, 8), smoothing in 0.0f64..0.3) {
        let a = Alphabet::default();
        let words = ["ab".chars().take(p).collect::<String>()];
        let labels = LabelBatch::from_words(&a, &words, p).unwrap();
        let loss = |d: Vec<f64>| {
            let mut g = Graph::new();
            let x = g.constant(Tensor::new(&[1, p, 37], d).unwrap());
            let l = ce_loss(&mut g, x, &labels, smoothing).unwrap();
            g.value(l).data()[0]
        };
        let shifted: Vec<f64> = data.iter().enumerate().map(|(i, &x)| x + shifts[i / 37]).collect();
        let (l0, l1) = (loss(data), loss(shifted));
        prop_assert!((l0 - l1).abs() < 1e-9, "{} vs {}", l0, l1);
    }
}

#[test]
fn metric_examples() {
    let m = metrics(&["cat", "dog"], &["cat", "cat"]);
    assert_eq!(m.word_accuracy, 0.5);
    assert!((m.mean_normalized_edit_distance - 0.5).abs() < 1e-12);

    let m = metrics(&["CAT"], &["cat"]);
    assert_eq!(m.word_accuracy, 1.0);

    let m = metrics(&["ct"], &["cat"]);
    assert!((m.mean_normalized_edit_distance - 1.0 / 3.0).abs() < 1e-12);

    let m = metrics(&[""], &["abcd"]);
    assert_eq!(m.word_accuracy, 0.0);
    assert_eq!(m.mean_normalized_edit_distance, 1.0);

    let m = metrics::<&str, &str>(&[], &[]);
    assert_eq!(m.word_accuracy, 0.0);
}
