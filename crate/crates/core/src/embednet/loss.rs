use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits, `(softmax - onehot) / batch`.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, k) = logits.dim();
    if labels.len() != n {
        return Err(Error::Argument(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Argument(format!("label {bad} outside {k} classes")));
    }
    let mut total = 0.0;
    for (row, &y) in logits.axis_iter(Axis(0)).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += log_sum - row[y];
    }
    let mut grad = softmax_rows(logits);
    for (mut row, &y) in grad.axis_iter_mut(Axis(0)).zip(labels) {
        row[y] -= 1.0;
    }
    grad /= n as f64;
    Ok((total / n as f64, grad))
}

#[derive(Debug, Clone)]
pub struct LossTerms {
    pub loss: f64,
    pub primary_ce: f64,
    pub speaker_ce: Option<f64>,
    pub d_primary: Array2<f64>,
    pub d_speaker: Option<Array2<f64>>,
}

/// `(1 - w) * CE_primary + w * CE_speaker` with logit gradients.
pub fn mtl_loss_and_grad(
    primary_logits: &Array2<f64>,
    speaker_logits: Option<&Array2<f64>>,
    primary_labels: &[usize],
    speaker_labels: Option<&[usize]>,
    weight: f64,
) -> Result<LossTerms> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::Config(format!("mtl weight {weight} outside [0, 1]")));
    }
    let (primary_ce, mut d_primary) = cross_entropy(primary_logits, primary_labels)?;
    d_primary *= 1.0 - weight;

    let speaker = match (speaker_logits, speaker_labels) {
        (Some(logits), Some(labels)) => {
            let (ce, mut d) = cross_entropy(logits, labels)?;
            d *= weight;
            Some((ce, d))
        }
        _ if weight > 0.0 => {
            return Err(Error::Config(
                "speaker task weight is positive but no speaker head or labels were given".into(),
            ))
        }
        _ => None,
    };
    let loss = match &speaker {
        Some((ce, _)) if weight > 0.0 => (1.0 - weight) * primary_ce + weight * ce,
        _ => primary_ce,
    };
    let (speaker_ce, d_speaker) = match speaker {
        Some((ce, d)) => (Some(ce), Some(d)),
        None => (None, None),
    };
    Ok(LossTerms {
        loss,
        primary_ce,
        speaker_ce,
        d_primary,
        d_speaker,
    })
}

pub fn mtl_loss(
    primary_logits: &Array2<f64>,
    speaker_logits: Option<&Array2<f64>>,
    primary_labels: &[usize],
    speaker_labels: Option<&[usize]>,
    weight: f64,
) -> Result<f64> {
    mtl_loss_and_grad(primary_logits, speaker_logits, primary_labels, speaker_labels, weight).map(|t| t.loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 3, 7, 40] {
            let logits = Array2::from_elem((5, k), 1.25);
            let (ce, _) = cross_entropy(&logits, &[0, 1, 0, 1, 1]).unwrap();
            assert!((ce - (k as f64).ln()).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_weight_ignores_speaker_head() {
        let p = array![[1.0, -2.0], [0.5, 0.25]];
        let s = array![[9.0, -9.0, 0.0], [3.0, 1.0, -1.0]];
        let only = mtl_loss(&p, None, &[0, 1], None, 0.0).unwrap();
        let with = mtl_loss_and_grad(&p, Some(&s), &[0, 1], Some(&[2, 0]), 0.0).unwrap();
        assert_eq!(only, with.loss);
        assert!(with.d_speaker.unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn positive_weight_without_speaker_head_is_a_config_error() {
        let p = array![[1.0, 0.0]];
        assert!(matches!(mtl_loss(&p, None, &[0], None, 0.5), Err(Error::Config(_))));
    }

    #[test]
    fn half_weight_matches_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Array2::from_shape_fn((6, 4), |_| rng.random_range(-5.0..5.0));
        let s = Array2::from_shape_fn((6, 3), |_| rng.random_range(-5.0..5.0));
        let yp = [0, 3, 2, 1, 1, 0];
        let ys = [2, 2, 0, 1, 0, 1];
        // Scalar oracle, no max subtraction needed at this scale.
        let ce = |m: &Array2<f64>, y: &[usize]| {
            let mut t = 0.0;
            for i in 0..m.nrows() {
                let z: f64 = (0..m.ncols()).map(|j| m[[i, j]].exp()).sum();
                t += -(m[[i, y[i]]].exp() / z).ln();
            }
            t / m.nrows() as f64
        };
        let want = 0.5 * (ce(&p, &yp) + ce(&s, &ys));
        let got = mtl_loss(&p, Some(&s), &yp, Some(&ys), 0.5).unwrap();
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn softmax_is_normalised_and_stable() {
        let m = array![[1000.0, 999.0, -1000.0], [0.0, 0.0, 0.0]];
        let s = softmax_rows(&m);
        for row in s.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|v| v.is_finite()));
        }
    }
}
