//! Diagonal-covariance Gaussian mixture fitted by EM from a k-means++ start.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const MAX_EM_ITERATIONS: usize = 200;
pub const EM_TOLERANCE: f64 = 1e-6;
const GMM_FORMAT: &str = "spectro-embed/gmm";
const GMM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `M x D`.
    pub means: Array2<f64>,
    /// `M x D`, each at least [`VARIANCE_FLOOR`].
    pub variances: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Total log-likelihood of the k-means++ starting model followed by the
    /// value after every EM iteration.
    pub log_likelihoods: Vec<f64>,
}

impl GmmFit {
    pub fn initial_log_likelihood(&self) -> f64 {
        self.log_likelihoods[0]
    }

    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihoods.last().unwrap()
    }

    pub fn iterations(&self) -> usize {
        self.log_likelihoods.len() - 1
    }
}

#[derive(Serialize, Deserialize)]
struct GmmFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: GmmModel,
}

impl GmmModel {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// `log(w_k) + log N(x | mu_k, diag(var_k))` for every component.
    pub fn component_log_densities(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let d = self.dim() as f64;
        (0..self.components())
            .map(|k| {
                let mut quad = 0.0;
                let mut log_det = 0.0;
                for ((xi, mu), var) in x.iter().zip(self.means.row(k)).zip(self.variances.row(k)) {
                    quad += (xi - mu) * (xi - mu) / var;
                    log_det += var.ln();
                }
                self.weights[k].ln() - 0.5 * (d * (2.0 * PI).ln() + log_det + quad)
            })
            .collect()
    }

    pub fn log_likelihood(&self, data: &Array2<f64>) -> f64 {
        data.rows()
            .into_iter()
            .map(|x| log_sum_exp(&self.component_log_densities(x)))
            .sum()
    }

    /// Hard assignment to the most probable component, lowest index on ties.
    pub fn quantize(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::Argument(format!(
                "vector of length {} for a {}-dimensional GMM",
                x.len(),
                self.dim()
            )));
        }
        let scores = self.component_log_densities(ArrayView1::from(x));
        Ok(crate::embednet::argmax(&scores))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&GmmFile {
            format: GMM_FORMAT.into(),
            version: GMM_VERSION,
            model: self.clone(),
        })
        .map_err(|e| Error::Data(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let err = |reason: String| Error::Parse {
            path: origin.to_path_buf(),
            reason,
        };
        let file: GmmFile = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
        if file.format != GMM_FORMAT || file.version != GMM_VERSION {
            return Err(err(format!("expected {GMM_FORMAT} v{GMM_VERSION}")));
        }
        let m = file.model;
        if m.means.dim() != m.variances.dim() || m.means.nrows() != m.weights.len() {
            return Err(err("inconsistent GMM shapes".into()));
        }
        Ok(m)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: indices of the chosen centres.
fn kmeans_pp(data: &Array2<f64>, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.nrows();
    let mut centres = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = data
        .rows()
        .into_iter()
        .map(|x| squared_distance(x, data.row(centres[0])))
        .collect();
    while centres.len() < m {
        let next = WeightedIndex::new(&dist)
            .expect("at least m distinct points leave positive mass")
            .sample(rng);
        centres.push(next);
        for (d, x) in dist.iter_mut().zip(data.rows()) {
            *d = d.min(squared_distance(x, data.row(next)));
        }
    }
    centres
}

fn population_variance(rows: &[ArrayView1<f64>], mean: &Array1<f64>) -> Array1<f64> {
    let mut var = Array1::zeros(mean.len());
    for r in rows {
        var += &(r - mean).mapv(|d| d * d);
    }
    var / rows.len() as f64
}

/// Fits an `m`-component diagonal GMM. Starts from hard k-means++
/// clusters (singleton clusters borrow the global variance), then runs EM
/// until the relative log-likelihood gain drops below `1e-6` or 200
/// iterations pass.
pub fn fit_gmm(data: &Array2<f64>, m: usize, seed: u64) -> Result<GmmFit> {
    let (n, d) = data.dim();
    if m == 0 || d == 0 {
        return Err(Error::Argument("GMM needs at least one component and dimension".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("GMM training data contains non-finite values".into()));
    }
    let distinct: BTreeSet<Vec<u64>> = data
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    if distinct.len() < m {
        return Err(Error::Data(format!(
            "{} distinct vectors ({n} total) cannot support {m} components",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = kmeans_pp(data, m, &mut rng);
    let global_mean = data.mean_axis(Axis(0)).unwrap();
    let all_rows: Vec<ArrayView1<f64>> = data.rows().into_iter().collect();
    let global_var = population_variance(&all_rows, &global_mean).mapv(|v| v.max(VARIANCE_FLOOR));

    let mut members: Vec<Vec<ArrayView1<f64>>> = vec![Vec::new(); m];
    for x in data.rows() {
        let nearest = (0..m)
            .map(|k| squared_distance(x, data.row(centres[k])))
            .enumerate()
            .fold((0, f64::INFINITY), |b, (k, dk)| if dk < b.1 { (k, dk) } else { b })
            .0;
        members[nearest].push(x);
    }
    let mut model = GmmModel {
        weights: vec![0.0; m],
        means: Array2::zeros((m, d)),
        variances: Array2::zeros((m, d)),
    };
    for (k, rows) in members.iter().enumerate() {
        let mean = if rows.is_empty() {
            data.row(centres[k]).to_owned()
        } else {
            rows.iter().fold(Array1::zeros(d), |acc, r| acc + r) / rows.len() as f64
        };
        let var = if rows.len() < 2 {
            global_var.clone()
        } else {
            population_variance(rows, &mean).mapv(|v| v.max(VARIANCE_FLOOR))
        };
        model.weights[k] = rows.len().max(1) as f64;
        model.means.row_mut(k).assign(&mean);
        model.variances.row_mut(k).assign(&var);
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);

    let (mut resp, mut ll) = e_step(&model, data);
    let mut history = vec![ll];
    for _ in 0..MAX_EM_ITERATIONS {
        m_step(&mut model, data, &resp);
        let (r, new_ll) = e_step(&model, data);
        resp = r;
        history.push(new_ll);
        let gain = (new_ll - ll) / ll.abs().max(f64::MIN_POSITIVE);
        ll = new_ll;
        if gain < EM_TOLERANCE {
            break;
        }
    }
    Ok(GmmFit {
        model,
        log_likelihoods: history,
    })
}

fn e_step(model: &GmmModel, data: &Array2<f64>) -> (Array2<f64>, f64) {
    let mut resp = Array2::zeros((data.nrows(), model.components()));
    let mut total = 0.0;
    for (i, x) in data.rows().into_iter().enumerate() {
        let logs = model.component_log_densities(x);
        let norm = log_sum_exp(&logs);
        total += norm;
        for (k, l) in logs.iter().enumerate() {
            resp[[i, k]] = (l - norm).exp();
        }
    }
    (resp, total)
}

fn m_step(model: &mut GmmModel, data: &Array2<f64>, resp: &Array2<f64>) {
    let n = data.nrows() as f64;
    for k in 0..model.components() {
        let r = resp.column(k);
        let nk: f64 = r.sum();
        if nk <= f64::MIN_POSITIVE {
            model.weights[k] = 0.0;
            continue;
        }
        model.weights[k] = nk / n;
        let mean = data
            .rows()
            .into_iter()
            .zip(r)
            .fold(Array1::zeros(data.ncols()), |acc, (x, &w)| acc + &(&x * w))
            / nk;
        let var = data
            .rows()
            .into_iter()
            .zip(r)
            .fold(Array1::zeros(data.ncols()), |acc, (x, &w)| {
                acc + &((&x - &mean).mapv(|v| v * v) * w)
            })
            / nk;
        model.means.row_mut(k).assign(&mean);
        model
            .variances
            .row_mut(k)
            .assign(&var.mapv(|v: f64| v.max(VARIANCE_FLOOR)));
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Normal, StandardNormal};

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = Array2::from_shape_fn((50, 4), |_| StandardNormal.sample(&mut rng));
        let fit = fit_gmm(&data, 1, 0).unwrap();
        let mean = data.mean_axis(Axis(0)).unwrap();
        let var = data.var_axis(Axis(0), 0.0);
        for j in 0..4 {
            assert!((fit.model.means[[0, j]] - mean[j]).abs() <= 1e-9);
            assert!((fit.model.variances[[0, j]] - var[j]).abs() <= 1e-9);
        }
        assert!((fit.model.weights[0] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn two_tight_clusters_are_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let centres = [[1.0, -2.0, 0.5], [-3.0, 4.0, 2.0]];
        let data = Array2::from_shape_fn((80, 3), |(i, j)| centres[i % 2][j] + noise.sample(&mut rng));
        let fit = fit_gmm(&data, 2, 5).unwrap();
        for c in centres {
            let best = (0..2)
                .map(|k| {
                    (0..3)
                        .map(|j| (fit.model.means[[k, j]] - c[j]).abs())
                        .fold(0.0, f64::max)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best <= 0.05, "centre {c:?} off by {best}");
        }
        assert!((fit.model.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn too_few_distinct_points() {
        let data = array![[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(fit_gmm(&data, 3, 0), Err(Error::Data(_))));
        assert!(fit_gmm(&data, 2, 0).is_ok());
    }

    #[test]
    fn quantize_ties_and_exact_means() {
        let model = GmmModel {
            weights: vec![0.5, 0.5],
            means: array![[-1.0, 0.0], [1.0, 0.0]],
            variances: array![[1e-4, 1e-4], [1e-4, 1e-4]],
        };
        assert_eq!(model.quantize(&[0.0, 0.0]).unwrap(), 0);
        assert_eq!(model.quantize(&[1.0, 0.0]).unwrap(), 1);
        assert_eq!(model.quantize(&[-1.0, 0.0]).unwrap(), 0);
        assert!(model.quantize(&[0.0]).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array2::from_shape_fn((30, 2), |_| StandardNormal.sample(&mut rng));
        let model = fit_gmm(&data, 3, 1).unwrap().model;
        let text = model.to_json().unwrap();
        let back = GmmModel::from_json(&text, Path::new("g.json")).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json().unwrap(), text);
    }
}
