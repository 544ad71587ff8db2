//! One-sided (Hestenes) Jacobi SVD.
//!
//! The shorter dimension is orthogonalised: for a wide matrix the rows are
//! rotated, so the accumulated rotation *is* the left singular basis and
//! stays orthonormal to machine precision even for rank-deficient input.

use ndarray::Array2;

const MAX_SWEEPS: usize = 80;
const ORTHO_TOL: f64 = 1e-15;
/// Relative size below which a left singular vector is rebuilt by
/// Gram-Schmidt instead of normalising a near-zero column.
const NULL_TOL: f64 = 1e-10;

/// Thin SVD `a = u * diag(s) * vt` with `r = min(m, n)` components, sorted
/// by descending singular value. `scaled_vt` holds `diag(s) * vt`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub singular_values: Vec<f64>,
    pub scaled_vt: Array2<f64>,
}

/// Orthogonalises `cols` in place and returns the accumulated `n x n`
/// rotation, stored as columns.
fn hestenes(cols: &mut [Vec<f64>]) -> Vec<Vec<f64>> {
    let n = cols.len();
    let mut rot: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (a, b) = (&cols[p], &cols[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in a.iter().zip(b) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= ORTHO_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(cols, p, q, c, s);
                rotate_pair(&mut rot, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    rot
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    for (x, y) in head[p].iter_mut().zip(tail[0].iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Replaces `target` by a unit vector orthogonal to every vector in `basis`.
fn complete_orthonormal(basis: &[Vec<f64>], dim: usize) -> Vec<f64> {
    for e in 0..dim {
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        // Two passes of classical Gram-Schmidt.
        for _ in 0..2 {
            for b in basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let n = norm(&v);
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
    unreachable!("fewer than dim orthonormal vectors always leave a free direction")
}

/// Thin SVD of a finite `m x n` matrix. Singular vector pairs are signed so
/// the largest-magnitude entry of each left vector is positive (first such
/// entry on ties).
pub fn thin_svd(a: &Array2<f64>) -> ThinSvd {
    let (m, n) = a.dim();
    let r = m.min(n);

    // (left vectors, sigma, scaled right vectors) in discovery order.
    let (mut left, sigma, mut right): (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) = if m <= n {
        // Rows of `a` are the columns of a^T; a^T J = W  =>  a = J W^T.
        let mut cols: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
        let rot = hestenes(&mut cols);
        let sigma = cols.iter().map(|c| norm(c)).collect();
        (rot, sigma, cols)
    } else {
        // a J = W  =>  a = W J^T; scaled right vector i is sigma_i * J[:, i].
        let mut cols: Vec<Vec<f64>> = a.columns().into_iter().map(|c| c.to_vec()).collect();
        let rot = hestenes(&mut cols);
        let sigma: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
        let right = rot
            .iter()
            .zip(&sigma)
            .map(|(j, s)| j.iter().map(|x| x * s).collect())
            .collect();
        (cols, sigma, right)
    };

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let sigma_max = order.first().map(|&i| sigma[i]).unwrap_or(0.0);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut singular_values = Vec::with_capacity(r);
    let mut vt_rows: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut pending_null = Vec::new();

    for &i in &order {
        let s = sigma[i];
        let mut u = std::mem::take(&mut left[i]);
        if m > n {
            if s > NULL_TOL * sigma_max && s > 0.0 {
                u.iter_mut().for_each(|x| *x /= s);
            } else {
                pending_null.push(u_cols.len());
            }
        }
        u_cols.push(u);
        singular_values.push(s);
        vt_rows.push(std::mem::take(&mut right[i]));
    }
    for &k in &pending_null {
        let basis: Vec<Vec<f64>> = u_cols
            .iter()
            .enumerate()
            .filter(|(j, _)| !pending_null.contains(j) || *j < k)
            .map(|(_, v)| v.clone())
            .collect();
        u_cols[k] = complete_orthonormal(&basis, m);
    }

    for (u, v) in u_cols.iter_mut().zip(vt_rows.iter_mut()) {
        let lead = u
            .iter()
            .enumerate()
            .fold(
                (0, -1.0),
                |best, (i, &x)| if x.abs() > best.1 { (i, x.abs()) } else { best },
            )
            .0;
        if u[lead] < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }

    ThinSvd {
        u: Array2::from_shape_fn((m, r), |(i, k)| u_cols[k][i]),
        singular_values,
        scaled_vt: Array2::from_shape_fn((r, n), |(k, j)| vt_rows[k][j]),
    }
}
