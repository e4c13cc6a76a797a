//! Connectionist temporal classification: forward-backward loss and a
//! brute-force alignment enumerator used as its oracle.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Outcome of a single-sequence CTC evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtcLoss {
    /// Negative log-likelihood; `+∞` when no alignment exists.
    pub value: f64,
    pub feasible: bool,
}

/// Fewest frames that can emit `label`: one per symbol plus a blank between
/// each pair of equal neighbours.
pub fn min_frames(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

fn log_add<T: Element>(a: T, b: T) -> T {
    if a == T::neg_infinity() {
        return b;
    }
    if b == T::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check_label(label: &[usize], classes: usize, blank: usize) -> Result<()> {
    if blank >= classes {
        return Err(Error::shape("ctc", format!("blank {blank} outside {classes} classes")));
    }
    if let Some(&bad) = label.iter().find(|&&c| c >= classes || c == blank) {
        return Err(Error::shape(
            "ctc",
            format!("label symbol {bad} is the blank or outside {classes} classes"),
        ));
    }
    Ok(())
}

/// Loss and gradient with respect to the `frames × classes` log-probabilities.
///
/// Returns `Ok(None)` when the label cannot be aligned in `frames` steps.
pub(crate) fn ctc_forward_backward<T: Element>(
    log_probs: &[T],
    frames: usize,
    classes: usize,
    label: &[usize],
    blank: usize,
) -> Result<Option<(T, Vec<T>)>> {
    check_label(label, classes, blank)?;
    if log_probs.len() != frames * classes {
        return Err(Error::shape("ctc", "log-prob buffer does not match frames × classes"));
    }
    if min_frames(label) > frames {
        return Ok(None);
    }
    let ninf = T::neg_infinity();
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(label.iter().flat_map(|&c| [c, blank]))
        .collect();
    let s_len = ext.len();
    let lp = |t: usize, c: usize| log_probs[t * classes + c];
    // Skip transition s-2 → s is allowed onto a non-blank differing from l'[s-2].
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];

    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[t * s_len + s] = if acc == ninf { ninf } else { acc + lp(t, ext[s]) };
        }
    }
    let last = (frames - 1) * s_len;
    let mut log_p = alpha[last + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last + s_len - 2]);
    }
    if log_p == ninf {
        return Ok(None);
    }

    let mut beta = vec![ninf; frames * s_len];
    beta[last + s_len - 1] = lp(frames - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(frames - 1, ext[s_len - 2]);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                acc = log_add(acc, next[s + 2]);
            }
            beta[t * s_len + s] = if acc == ninf { ninf } else { acc + lp(t, ext[s]) };
        }
    }

    let mut grad = vec![T::zero(); frames * classes];
    let mut occupancy = vec![ninf; classes];
    for t in 0..frames {
        occupancy.iter_mut().for_each(|v| *v = ninf);
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            occupancy[ext[s]] = log_add(occupancy[ext[s]], v);
        }
        for c in 0..classes {
            if occupancy[c] != ninf {
                // α and β both include the emission at t, so divide it out once.
                grad[t * classes + c] = -(occupancy[c] - lp(t, c) - log_p).exp();
            }
        }
    }
    Ok(Some((-log_p, grad)))
}

/// CTC negative log-likelihood of `label` under `frames × classes`
/// log-probabilities. Infeasible alignments yield `+∞` with `feasible = false`.
pub fn ctc_loss<T: Element>(log_probs: &Tensor<T>, label: &[usize], blank: usize) -> Result<CtcLoss> {
    let [frames, classes] = log_probs.shape() else {
        return Err(Error::shape("ctc_loss", format!("expected T×V, got {:?}", log_probs.shape())));
    };
    Ok(
        match ctc_forward_backward(log_probs.data(), *frames, *classes, label, blank)? {
            Some((loss, _)) => CtcLoss {
                value: loss.to_f64_lossy(),
                feasible: true,
            },
            None => CtcLoss {
                value: f64::INFINITY,
                feasible: false,
            },
        },
    )
}

/// Collapses a frame path: merge consecutive repeats, then drop blanks.
pub fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != blank {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

/// Largest search space [`ctc_brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// −log of the summed probability of every length-`frames` path that
/// collapses to `label`, by exhaustive enumeration of `classes^frames` paths.
pub fn ctc_brute_force(probs: &Tensor<f64>, label: &[usize], blank: usize) -> Result<f64> {
    let [frames, classes] = *probs.shape() else {
        return Err(Error::shape("ctc_brute_force", format!("expected T×V, got {:?}", probs.shape())));
    };
    check_label(label, classes, blank)?;
    let space = (classes as u128).checked_pow(frames as u32).unwrap_or(u128::MAX);
    if space > BRUTE_FORCE_LIMIT {
        return Err(Error::SearchSpaceTooLarge(space));
    }
    let p = probs.data();
    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    for _ in 0..space {
        if collapse_path(&path, blank) == label {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &c)| p[t * classes + c])
                .product::<f64>();
        }
        for slot in path.iter_mut().rev() {
            *slot += 1;
            if *slot < classes {
                break;
            }
            *slot = 0;
        }
    }
    Ok(-total.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_tensor(frames: usize, probs: &[f64]) -> Tensor<f64> {
        let classes = probs.len() / frames;
        Tensor::new(&[frames, classes], probs.iter().map(|p| p.ln()).collect()).unwrap()
    }

    const A: usize = 0;
    const BLANK: usize = 1;

    #[test]
    fn single_frame_single_path() {
        let lp = log_tensor(1, &[0.6, 0.4]);
        let loss = ctc_loss(&lp, &[A], BLANK).unwrap();
        assert!((loss.value - (-(0.6f64).ln())).abs() < 1e-12);
        assert!((loss.value - 0.5108).abs() < 1e-4);
    }

    #[test]
    fn two_frames_uniform() {
        let lp = log_tensor(2, &[0.5; 4]);
        let loss = ctc_loss(&lp, &[A], BLANK).unwrap();
        assert!((loss.value - (-(0.75f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_blank() {
        let lp = log_tensor(3, &[0.5; 6]);
        let loss = ctc_loss(&lp, &[A, A], BLANK).unwrap();
        assert!((loss.value - (8.0f64).ln()).abs() < 1e-12);
        assert!((loss.value - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn infeasible_is_flagged_not_fatal() {
        let lp = log_tensor(2, &[0.5; 4]);
        let loss = ctc_loss(&lp, &[A, A], BLANK).unwrap();
        assert!(!loss.feasible);
        assert_eq!(loss.value, f64::INFINITY);
        let bf = ctc_brute_force(&Tensor::full(&[2, 2], 0.5).unwrap(), &[A, A], BLANK).unwrap();
        assert_eq!(bf, f64::INFINITY);
    }

    #[test]
    fn empty_label_is_all_blank_path() {
        let probs = [0.3, 0.7, 0.2, 0.8, 0.9, 0.1];
        let lp = log_tensor(3, &probs);
        let loss = ctc_loss(&lp, &[], BLANK).unwrap();
        let want = -(0.7f64 * 0.8 * 0.1).ln();
        assert!((loss.value - want).abs() < 1e-12);
        let bf = ctc_brute_force(&Tensor::new(&[3, 2], probs.to_vec()).unwrap(), &[], BLANK).unwrap();
        assert!((bf - want).abs() < 1e-12);
    }

    #[test]
    fn brute_force_refuses_huge_spaces() {
        let p = Tensor::full(&[11, 4], 0.25).unwrap();
        assert!(matches!(
            ctc_brute_force(&p, &[0], 3),
            Err(Error::SearchSpaceTooLarge(_))
        ));
    }

    #[test]
    fn blank_in_label_is_rejected() {
        let lp = log_tensor(2, &[0.5; 4]);
        assert!(ctc_loss(&lp, &[BLANK], BLANK).is_err());
    }

    #[test]
    fn min_frames_counts_repeats() {
        assert_eq!(min_frames(&[]), 0);
        assert_eq!(min_frames(&[1, 2, 3]), 3);
        assert_eq!(min_frames(&[1, 1, 1]), 5);
        assert_eq!(min_frames(&[1, 2, 2, 1]), 5);
    }

    #[test]
    fn collapse_rules() {
        assert_eq!(collapse_path(&[0, 0, 9, 1], 9), vec![0, 1]);
        assert_eq!(collapse_path(&[9, 9], 9), Vec::<usize>::new());
        assert_eq!(collapse_path(&[0, 9, 0], 9), vec![0, 0]);
    }
}
