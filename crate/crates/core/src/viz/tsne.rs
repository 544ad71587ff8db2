use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

const ENTROPY_TOLERANCE: f64 = 1e-5;
const MAX_BISECTION_STEPS: usize = 50;
const MIN_PROBABILITY: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;
const INIT_SCALE: f64 = 1e-4;
/// KL divergence is recorded every this many iterations, and at the end.
pub const KL_INTERVAL: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointLabel {
    pub id: String,
    pub group: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// `N x 2`.
    pub coords: Array2<f64>,
    pub labels: Vec<PointLabel>,
    pub kl: f64,
    pub iterations: usize,
    /// `(iteration, KL)` pairs, unexaggerated.
    pub kl_history: Vec<(usize, f64)>,
}

impl ProjectionResult {
    /// Replaces the default `p{i}` / `all` labels.
    pub fn with_labels(mut self, ids: Vec<String>, groups: Vec<String>) -> Result<Self> {
        let n = self.coords.nrows();
        if ids.len() != n || groups.len() != n {
            return Err(Error::Argument(format!(
                "{} ids and {} groups for {n} projected points",
                ids.len(),
                groups.len()
            )));
        }
        self.labels = ids
            .into_iter()
            .zip(groups)
            .map(|(id, group)| PointLabel { id, group })
            .collect();
        Ok(self)
    }

    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_history.iter().find(|(i, _)| *i == iteration).map(|(_, kl)| *kl)
    }
}

fn squared_distances(points: &Array2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = points
                .row(i)
                .iter()
                .zip(points.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[[i, j]] = s;
            d[[j, i]] = s;
        }
    }
    d
}

/// Conditional distribution of row `i` at precision `beta`, with its
/// entropy in nats.
fn conditional_row(dist: &Array2<f64>, i: usize, beta: f64) -> (Vec<f64>, f64) {
    let n = dist.nrows();
    let min = (0..n)
        .filter(|&j| j != i)
        .map(|j| dist[[i, j]])
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = (0..n)
        .map(|j| {
            if j == i {
                0.0
            } else {
                (-beta * (dist[[i, j]] - min)).exp()
            }
        })
        .collect();
    let sum: f64 = p.iter().sum();
    let mut weighted = 0.0;
    for (j, pj) in p.iter_mut().enumerate() {
        *pj /= sum;
        if j != i {
            weighted += *pj * (dist[[i, j]] - min);
        }
    }
    // H = log(sum) + beta * E[d - min]
    (p, sum.ln() + beta * weighted)
}

/// Row-conditional affinities calibrated to `perplexity` by bisection on
/// each point's precision.
pub fn conditional_affinities(points: &Array2<f64>, perplexity: f64) -> Result<Array2<f64>> {
    check_inputs(points, perplexity)?;
    let dist = squared_distances(points);
    if dist.iter().all(|&d| d == 0.0) {
        return Err(Error::Degenerate(
            "all points coincide; t-SNE distances are zero".into(),
        ));
    }
    let n = points.nrows();
    let target = perplexity.ln();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let mean: f64 = (0..n).map(|j| dist[[i, j]]).sum::<f64>() / (n - 1) as f64;
        let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let (mut row, mut entropy) = conditional_row(&dist, i, beta);
        for _ in 0..MAX_BISECTION_STEPS {
            let diff = entropy - target;
            if diff.abs() <= ENTROPY_TOLERANCE {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { 2.0 * beta };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            (row, entropy) = conditional_row(&dist, i, beta);
        }
        if row.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("affinity row {i} is not finite")));
        }
        out.row_mut(i).assign(&Array1::from(row));
    }
    Ok(out)
}

/// Symmetrized joint affinities `(P + P^T) / 2N`, floored at `1e-12`.
pub fn joint_affinities(points: &Array2<f64>, perplexity: f64) -> Result<Array2<f64>> {
    let cond = conditional_affinities(points, perplexity)?;
    let n = cond.nrows() as f64;
    let mut p = (&cond + &cond.t()) / (2.0 * n);
    p.mapv_inplace(|v| v.max(MIN_PROBABILITY));
    for i in 0..p.nrows() {
        p[[i, i]] = 0.0;
    }
    Ok(p)
}

fn check_inputs(points: &Array2<f64>, perplexity: f64) -> Result<()> {
    let n = points.nrows();
    if n < 5 {
        return Err(Error::Argument(format!("t-SNE needs at least 5 points, got {n}")));
    }
    if !(perplexity > 0.0 && perplexity < (n - 1) as f64 / 3.0) {
        return Err(Error::Argument(format!(
            "perplexity {perplexity} infeasible for {n} points (must be below {:.3})",
            (n - 1) as f64 / 3.0
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("t-SNE input contains non-finite values".into()));
    }
    Ok(())
}

/// Student-t numerators `1 / (1 + |y_i - y_j|^2)` and their sum.
fn low_dim_kernel(y: &Array2<f64>) -> (Array2<f64>, f64) {
    let n = y.nrows();
    let mut num = Array2::zeros((n, n));
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[[i, 0]] - y[[j, 0]];
            let dy = y[[i, 1]] - y[[j, 1]];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[[i, j]] = v;
            num[[j, i]] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

fn kl_divergence(p: &Array2<f64>, num: &Array2<f64>, sum: f64) -> f64 {
    let mut kl = 0.0;
    for ((i, j), &pij) in p.indexed_iter() {
        if i != j {
            let q = (num[[i, j]] / sum).max(MIN_PROBABILITY);
            kl += pij * (pij / q).ln();
        }
    }
    kl.max(0.0)
}

/// Exact t-SNE to two dimensions.
pub fn tsne_project(points: &Array2<f64>, config: &TsneConfig) -> Result<ProjectionResult> {
    if config.iterations == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Argument(
            "t-SNE needs a positive iteration count and learning rate".into(),
        ));
    }
    let p = joint_affinities(points, config.perplexity)?;
    let n = points.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_SCALE).expect("positive scale");
    let mut y = Array2::from_shape_fn((n, 2), |_| normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut history = Vec::new();

    for iter in 1..=config.iterations {
        let exaggeration = if iter <= config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter <= config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        let (num, sum) = low_dim_kernel(&y);
        let mut grad = Array2::<f64>::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[[i, j]] / sum).max(MIN_PROBABILITY);
                let coeff = 4.0 * (exaggeration * p[[i, j]] - q) * num[[i, j]];
                grad[[i, 0]] += coeff * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        if iter % KL_INTERVAL == 0 || iter == config.iterations {
            history.push((iter, kl_divergence(&p, &num, sum)));
        }
        for ((g, u), gain) in grad.iter().zip(update.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*u > 0.0) {
                *gain + 0.2
            } else {
                (*gain * 0.8).max(MIN_GAIN)
            };
            *u = momentum * *u - config.learning_rate * *gain * g;
        }
        y += &update;
        let centre = y.mean_axis(ndarray::Axis(0)).unwrap();
        y -= &centre;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("t-SNE diverged at iteration {iter}")));
        }
    }
    // The recorded KL describes the layout before the final step; report the
    // divergence of the returned layout instead.
    let (num, sum) = low_dim_kernel(&y);
    let kl = kl_divergence(&p, &num, sum);
    if let Some(last) = history.last_mut() {
        if last.0 == config.iterations {
            last.1 = kl;
        }
    }
    Ok(ProjectionResult {
        coords: y,
        labels: (0..n)
            .map(|i| PointLabel {
                id: format!("p{i}"),
                group: "all".into(),
            })
            .collect(),
        kl,
        iterations: config.iterations,
        kl_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rows_hit_target_perplexity() {
        let pts = random_points(40, 6, 1);
        let p = conditional_affinities(&pts, 10.0).unwrap();
        for row in p.rows() {
            let h: f64 = -row.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
            assert!((h.exp() - 10.0).abs() <= 1e-3, "perplexity {}", h.exp());
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn joint_affinities_are_symmetric_and_normalised() {
        let p = joint_affinities(&random_points(20, 3, 2), 5.0).unwrap();
        assert!((p.sum() - 1.0).abs() <= 1e-9);
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(p[[i, j]], p[[j, i]]);
            }
        }
    }

    #[test]
    fn infeasible_perplexity_and_tiny_inputs() {
        let pts = random_points(10, 2, 3);
        assert!(matches!(
            tsne_project(&pts, &TsneConfig::default()),
            Err(Error::Argument(_))
        ));
        let few = random_points(4, 2, 3);
        let cfg = TsneConfig {
            perplexity: 0.5,
            ..TsneConfig::default()
        };
        assert!(matches!(tsne_project(&few, &cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn identical_points_are_degenerate() {
        let pts = Array2::from_elem((12, 4), 0.7);
        let cfg = TsneConfig {
            perplexity: 3.0,
            ..TsneConfig::default()
        };
        assert!(matches!(tsne_project(&pts, &cfg), Err(Error::Degenerate(_))));
    }

    #[test]
    fn kl_falls_after_exaggeration() {
        let pts = random_points(50, 5, 4);
        let cfg = TsneConfig {
            perplexity: 10.0,
            seed: 9,
            ..TsneConfig::default()
        };
        let r = tsne_project(&pts, &cfg).unwrap();
        assert!(r.kl >= 0.0);
        assert!(r.coords.iter().all(|v| v.is_finite()));
        assert!(r.kl_at(1000).unwrap() <= r.kl_at(300).unwrap());
        assert_eq!(r.kl_at(1000).unwrap(), r.kl);
    }
}
