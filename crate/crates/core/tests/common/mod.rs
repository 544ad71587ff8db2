//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use spectro_embed::embednet::{mtl_loss, EmbeddingNetwork, Mode, NetworkConfig, Params, TrainingRecord, EMBEDDING_DIM};
use spectro_embed::subspace::{BasisFeature, FeatureKind};

pub fn small_config(input: usize, classes: usize, speakers: usize) -> NetworkConfig {
    NetworkConfig {
        hidden_dims: vec![16, 16, 16, EMBEDDING_DIM],
        projection_dim: 8,
        ..NetworkConfig::new(input, classes, speakers)
    }
}

/// Every parameter (heads, batch-norm scale/shift included) drawn at random.
pub fn randomized(cfg: &NetworkConfig, seed: u64) -> EmbeddingNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::zeros(cfg);
    for (name, t) in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = if name.ends_with("bn_scale") {
                rng.random_range(0.5..1.5)
            } else {
                rng.random_range(-0.6..0.6)
            };
        }
    }
    let mut net = EmbeddingNetwork::with_params(cfg.clone(), params);
    for s in &mut net.running {
        s.mean.mapv_inplace(|_| rng.random_range(0.0..0.5));
        s.var.mapv_inplace(|_| rng.random_range(0.2..2.0));
    }
    net
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| StandardNormal.sample(rng))
}

pub fn feature(v: Vec<f64>) -> BasisFeature {
    BasisFeature {
        vector: v,
        kind: FeatureKind::Spectral,
        utterance_id: "u".into(),
        speaker_id: "s".into(),
    }
}

pub fn loss_at(net: &EmbeddingNetwork, x: &Array2<f64>, yp: &[usize], ys: &[usize], w: f64) -> f64 {
    let out = net.forward(x.view(), Mode::Train { dropout_seed: None }).unwrap();
    mtl_loss(&out.primary_logits, out.speaker_logits.as_ref(), yp, Some(ys), w).unwrap()
}

/// Largest relative error between analytic and central-difference gradients
/// per parameter group. Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(seed: u64) -> Vec<(String, f64)> {
    let mut cfg = small_config(6, 3, 4);
    cfg.hidden_dims = vec![7, 5, 7, EMBEDDING_DIM];
    cfg.projection_dim = 4;
    cfg.dropout = 0.0;
    cfg.mtl_weight = 0.3;
    let net = randomized(&cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let x = random_batch(&mut rng, 8, 6);
    let yp: Vec<usize> = (0..8).map(|i| i % 3).collect();
    let ys: Vec<usize> = (0..8).map(|i| (i * 3) % 4).collect();

    let out = net.forward(x.view(), Mode::Train { dropout_seed: None }).unwrap();
    let (_, grad) = net.backward(&out, &yp, Some(&ys), cfg.mtl_weight).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = grad.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();

    let mut report = Vec::new();
    for (group, (name, g)) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (i, &a) in g.iter().enumerate() {
            let mut probe = net.clone();
            let orig = probe.params.tensors()[group].1[i];
            let h = 1e-4 * orig.abs().max(1.0);
            probe.params.tensors_mut()[group].1[i] = orig + h;
            let up = loss_at(&probe, &x, &yp, &ys, cfg.mtl_weight);
            probe.params.tensors_mut()[group].1[i] = orig - h;
            let down = loss_at(&probe, &x, &yp, &ys, cfg.mtl_weight);
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        report.push((name.clone(), worst));
    }
    report
}

/// Points in 8-D labelled by the side of a fixed hyperplane, with a margin.
pub fn separable_set(seed: u64, n: usize) -> (Vec<TrainingRecord>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = [1.0, -1.0, 0.5, 0.0, 2.0, -0.5, 1.0, 0.25];
    let mut records = Vec::new();
    while records.len() < n {
        let x: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s: f64 = x.iter().zip(&normal).map(|(a, b)| a * b).sum();
        if s.abs() < 0.5 {
            continue;
        }
        records.push(TrainingRecord {
            feature: feature(x),
            primary_label: usize::from(s > 0.0),
            speaker_label: None,
        });
    }
    (records, normal.to_vec())
}

pub fn toy_config(seed: u64) -> NetworkConfig {
    NetworkConfig {
        hidden_dims: vec![32, 32, 32, EMBEDDING_DIM],
        projection_dim: 16,
        learning_rate: 0.02,
        batch_size: 16,
        epochs: 20,
        seed,
        ..NetworkConfig::new(8, 2, 0)
    }
}

pub fn accuracy(net: &EmbeddingNetwork, records: &[TrainingRecord]) -> f64 {
    let hits = records
        .iter()
        .filter(|r| net.classify(&r.feature).unwrap().0 == r.primary_label)
        .count();
    hits as f64 / records.len() as f64
}

pub fn random_matrix(rng: &mut ChaCha8Rng, c: usize, t: usize) -> Array2<f64> {
    Array2::from_shape_fn((c, t), |_| rng.random_range(-3.0..3.0))
}

/// Singular values from the eigenvalues of the smaller Gram matrix.
pub fn eigen_oracle(a: &Array2<f64>) -> Vec<f64> {
    let (c, t) = a.dim();
    let m = DMatrix::from_fn(c, t, |i, j| a[[i, j]]);
    let gram = if c <= t { &m * m.transpose() } else { m.transpose() * &m };
    let mut ev: Vec<f64> = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Two Gaussian blobs in `d` dimensions with unit spread and centres
/// `separation` standard deviations apart. Labels alternate 0, 1.
pub fn blobs(n: usize, d: usize, separation: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut direction: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v *= separation / norm);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let points = Array2::from_shape_fn((n, d), |(i, j)| {
        labels[i] as f64 * direction[j] + normal.sample(&mut rng)
    });
    (points, labels)
}

/// Mean silhouette score of `labels` over the rows of `points`, Euclidean.
pub fn silhouette(points: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = points.nrows();
    let dist = |i: usize, j: usize| {
        points
            .row(i)
            .iter()
            .zip(points.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..n {
        let mean_to = |c: usize| {
            let members: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == c).collect();
            members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len().max(1) as f64
        };
        let a = mean_to(labels[i]);
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| mean_to(c))
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

/// Harmonic "speech" with leading and trailing silence. Each speaker has
/// its own pitch and spectral slope.
pub fn synthetic_utterance(speaker: usize, utterance: usize, sample_rate: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 * speaker as u64 + utterance as u64);
    let sr = sample_rate as f64;
    let f0 = 110.0 + 70.0 * speaker as f64 + 5.0 * utterance as f64;
    let slope = 0.6 + 0.25 * speaker as f64;
    let (pad, voiced) = ((0.15 * sr) as usize, (0.8 * sr) as usize);
    let mut samples = vec![0.0; 2 * pad + voiced];
    for (i, s) in samples.iter_mut().enumerate() {
        let noise: f64 = Normal::new(0.0, 1e-4).unwrap().sample(&mut rng);
        *s = noise;
        if (pad..pad + voiced).contains(&i) {
            let t = (i - pad) as f64 / sr;
            let envelope = (std::f64::consts::PI * (i - pad) as f64 / voiced as f64).sin();
            let mut v = 0.0;
            for h in 1..=12 {
                let f = f0 * h as f64 * (1.0 + 0.05 * (3.0 * t).sin());
                v += (2.0 * std::f64::consts::PI * f * t).sin() / (h as f64).powf(slope);
            }
            *s += 0.15 * envelope * v;
        }
    }
    samples
}

/// Writes `speakers × per_speaker` WAV files and a manifest into `dir`.
/// Even speakers are labelled `low`/`nonaged`, odd ones `high`/`aged`.
pub fn synthetic_corpus(dir: &std::path::Path, speakers: usize, per_speaker: usize) -> std::path::PathBuf {
    let mut manifest = String::new();
    for s in 0..speakers {
        let (severity, age) = if s % 2 == 0 {
            ("low", "nonaged")
        } else {
            ("high", "aged")
        };
        for u in 0..per_speaker {
            let name = format!("spk{s}_utt{u}.wav");
            spectro_embed::frontend::write_wav_i16(&dir.join(&name), &synthetic_utterance(s, u, 16000), 16000).unwrap();
            manifest.push_str(&format!("spk{s}_utt{u}\tspk{s}\t{name}\t{severity}\t{age}\n"));
        }
    }
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest).unwrap();
    path
}

/// Small, fast pipeline settings pointing at `manifest`.
pub fn small_pipeline_config(dir: &std::path::Path, manifest: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    let text = format!(
        "manifest = {}\nd_s = 2\nhidden_width = 32\nprojection_dim = 16\nepochs = 3\nbatch_size = 4\nseed = 7\n",
        manifest.display()
    );
    std::fs::write(&path, text).unwrap();
    path
}
