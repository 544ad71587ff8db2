//! Gradient, forward-pass and training checks for the bottleneck classifier.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spectro_embed::embednet::{
    softmax_rows, train, EmbeddingNetwork, Mode, NetworkConfig, RunningStats, EMBEDDING_DIM,
};

mod common;
use common::*;

// ---------------------------------------------------------------------------
// Naive per-example evaluator, written against the architecture description
// only (plain loops, no ndarray arithmetic).
// ---------------------------------------------------------------------------

struct NaiveOut {
    primary: Vec<Vec<f64>>,
    speaker: Option<Vec<Vec<f64>>>,
    bottleneck: Vec<Vec<f64>>,
}

fn matvec_rows(x: &[Vec<f64>], w: &Array2<f64>, b: Option<&Array1<f64>>) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..w.ncols())
                .map(|j| {
                    let mut acc = b.map_or(0.0, |b| b[j]);
                    for (i, xi) in row.iter().enumerate() {
                        acc += xi * w[[i, j]];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn naive_forward(net: &EmbeddingNetwork, x: &Array2<f64>, train_stats: bool) -> NaiveOut {
    let eps = net.config.bn_epsilon;
    let mut h: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut first = Vec::new();
    for (l, layer) in net.params.hidden.iter().enumerate() {
        let input = match &layer.projection {
            Some(p) => matvec_rows(&h, p, None),
            None => h.clone(),
        };
        let a: Vec<Vec<f64>> = matvec_rows(&input, &layer.affine.weight, Some(&layer.affine.bias))
            .into_iter()
            .map(|r| r.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect())
            .collect();
        let width = a[0].len();
        let n = a.len() as f64;
        let mut out = a.clone();
        for j in 0..width {
            let (mean, var) = if train_stats {
                let m = a.iter().map(|r| r[j]).sum::<f64>() / n;
                let v = a.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n;
                (m, v)
            } else {
                (net.running[l].mean[j], net.running[l].var[j])
            };
            for (i, row) in out.iter_mut().enumerate() {
                row[j] = layer.gamma[j] * (a[i][j] - mean) / (var + eps).sqrt() + layer.beta[j];
            }
        }
        if l == 2 {
            for (row, skip) in out.iter_mut().zip(&first) {
                for (v, s) in row.iter_mut().zip(skip) {
                    *v += s;
                }
            }
        }
        if l == 0 {
            first = out.clone();
        }
        h = out;
    }
    NaiveOut {
        primary: matvec_rows(&h, &net.params.primary_head.weight, Some(&net.params.primary_head.bias)),
        speaker: net
            .params
            .speaker_head
            .as_ref()
            .map(|s| matvec_rows(&h, &s.weight, Some(&s.bias))),
        bottleneck: h,
    }
}

fn assert_close(a: &Array2<f64>, b: &[Vec<f64>], tol: f64) {
    for (row, want) in a.rows().into_iter().zip(b) {
        for (x, y) in row.iter().zip(want) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }
}

#[test]
fn forward_matches_naive_evaluator() {
    let cfg = small_config(8, 3, 4);
    let net = randomized(&cfg, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_batch(&mut rng, 10, 8);

    for (mode, train_stats) in [(Mode::Infer, false), (Mode::Train { dropout_seed: None }, true)] {
        let fast = net.forward(x.view(), mode).unwrap();
        let slow = naive_forward(&net, &x, train_stats);
        assert_close(&fast.primary_logits, &slow.primary, 1e-10);
        assert_close(
            fast.speaker_logits.as_ref().unwrap(),
            slow.speaker.as_ref().unwrap(),
            1e-10,
        );
        assert_close(&fast.bottleneck, &slow.bottleneck, 1e-10);
    }

    // The extracted embedding is the bottleneck row of the oracle.
    let single = x.row(3).to_owned().insert_axis(ndarray::Axis(0));
    let slow = naive_forward(&net, &single, false);
    let emb = net.extract_embedding(&feature(x.row(3).to_vec())).unwrap();
    assert_eq!(emb.len(), EMBEDDING_DIM);
    for (a, b) in emb.iter().zip(&slow.bottleneck[0]) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn gradients_match_central_differences() {
    let report = gradient_check(21);
    for group in [
        "hidden1.weight",
        "hidden2.projection",
        "hidden3.projection",
        "hidden3.bn_scale",
        "hidden4.bn_shift",
        "primary.weight",
        "speaker.bias",
    ] {
        assert!(report.iter().any(|(n, _)| n == group), "missing {group}");
    }
    for (name, err) in &report {
        assert!(*err <= 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn zero_speaker_weight_gives_zero_speaker_head_gradient() {
    let cfg = small_config(5, 2, 3);
    let net = randomized(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_batch(&mut rng, 6, 5);
    let out = net.forward(x.view(), Mode::Train { dropout_seed: None }).unwrap();
    let (_, g) = net
        .backward(&out, &[0, 1, 0, 1, 0, 1], Some(&[0, 1, 2, 0, 1, 2]), 0.0)
        .unwrap();
    let head = g.speaker_head.unwrap();
    assert!(head.weight.iter().chain(head.bias.iter()).all(|&v| v == 0.0));
}

#[test]
fn speaker_head_gradient_scales_linearly_with_weight() {
    let cfg = small_config(5, 2, 3);
    let net = randomized(&cfg, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_batch(&mut rng, 6, 5);
    let out = net.forward(x.view(), Mode::Train { dropout_seed: None }).unwrap();
    let norm = |w: f64| {
        let (_, g) = net
            .backward(&out, &[0, 1, 0, 1, 0, 1], Some(&[0, 1, 2, 0, 1, 2]), w)
            .unwrap();
        let h = g.speaker_head.unwrap();
        h.weight.iter().chain(h.bias.iter()).map(|v| v * v).sum::<f64>().sqrt()
    };
    let ratio = norm(0.5) / norm(0.25);
    assert!((ratio - 2.0).abs() <= 1e-9, "ratio {ratio}");
}

#[test]
fn duplicated_example_gradient_equals_single() {
    let cfg = small_config(5, 2, 0);
    let net = randomized(&cfg, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let one = random_batch(&mut rng, 1, 5);
    let two = ndarray::concatenate![ndarray::Axis(0), one, one];
    let grad = |x: &Array2<f64>, y: &[usize]| {
        let out = net.forward(x.view(), Mode::Train { dropout_seed: None }).unwrap();
        net.backward(&out, y, None, 0.0).unwrap().1
    };
    let g1 = grad(&one, &[1]);
    let g2 = grad(&two, &[1, 1]);
    for ((name, a), (_, b)) in g1.tensors().into_iter().zip(g2.tensors()) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{name}: {x} vs {y}");
        }
    }
}

#[test]
fn batch_norm_normalises_in_train_mode_and_heads_sum_to_one() {
    let cfg = small_config(8, 4, 3);
    let net = randomized(&cfg, 30);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x = random_batch(&mut rng, 12, 8);
    let out = net.forward(x.view(), Mode::Train { dropout_seed: None }).unwrap();
    for l in 0..4 {
        let (_, var) = out.batch_stats(l);
        let z = out.normalized(l);
        for j in 0..z.ncols() {
            // Units that are constant over the batch (dead ReLU) normalise to 0.
            if var[j] < 1e-3 {
                continue;
            }
            let col = z.column(j);
            let mean = col.mean().unwrap();
            let v = col.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() <= 1e-6);
            assert!((v - 1.0).abs() <= 1e-5, "layer {l} unit {j}: var {v}");
        }
    }
    for logits in [&out.primary_logits, out.speaker_logits.as_ref().unwrap()] {
        for row in softmax_rows(logits).rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn running_variance_stays_non_negative() {
    let (records, _) = separable_set(3, 60);
    let (net, _) = train(&records, &toy_config(3)).unwrap();
    for RunningStats { var, .. } in &net.running {
        assert!(var.iter().all(|&v| v >= 0.0));
    }
    assert!(net.params.is_finite());
}

// ---------------------------------------------------------------------------
// Training behaviour on a linearly separable toy set.
// ---------------------------------------------------------------------------

#[test]
fn separable_set_is_learned() {
    let (train_set, _) = separable_set(1, 100);
    let (held_out, _) = separable_set(2, 200);
    let (net, log) = train(&train_set, &toy_config(7)).unwrap();
    assert_eq!(log.epochs.len(), 20);
    assert_eq!(accuracy(&net, &train_set), 1.0);
    assert!(accuracy(&net, &held_out) >= 0.95);
    let (_, post) = net.classify(&train_set[0].feature).unwrap();
    assert!((post.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
}

#[test]
fn loss_falls_on_average_across_seeds() {
    let (train_set, _) = separable_set(1, 100);
    let mut first = 0.0;
    let mut last = 0.0;
    for seed in 0..5 {
        let (_, log) = train(&train_set, &toy_config(seed)).unwrap();
        first += log.epochs.first().unwrap().loss;
        last += log.epochs.last().unwrap().loss;
    }
    assert!(last / 5.0 < first / 5.0, "{} !< {}", last / 5.0, first / 5.0);
}

#[test]
fn training_is_bitwise_deterministic() {
    let (train_set, _) = separable_set(1, 50);
    let (a, la) = train(&train_set, &toy_config(3)).unwrap();
    let (b, lb) = train(&train_set, &toy_config(3)).unwrap();
    assert_eq!(la, lb);
    for ((_, x), (_, y)) in a.params.tensors().into_iter().zip(b.params.tensors()) {
        assert_eq!(
            x.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            y.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn single_speaker_full_weight_leaves_primary_head_untrained() {
    let (mut records, _) = separable_set(4, 40);
    for r in &mut records {
        r.speaker_label = Some(0);
    }
    let cfg = NetworkConfig {
        mtl_weight: 1.0,
        ..NetworkConfig::new(8, 2, 1)
    };
    let cfg = NetworkConfig {
        hidden_dims: vec![16, 16, 16, EMBEDDING_DIM],
        projection_dim: 8,
        ..cfg
    };
    let (net, log) = train(&records, &cfg).unwrap();
    assert!(log.epochs.iter().all(|e| e.loss.abs() <= 1e-12));
    let (_, post) = net.classify(&records[0].feature).unwrap();
    assert_eq!(post, vec![0.5, 0.5]);
}
