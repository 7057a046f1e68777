//! Small dense regression kernels: weighted least squares and logistic
//! regression by iteratively reweighted least squares.
//!
//! Designs are row-major `n × k` slices; only the `k × k` systems go through
//! nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n: usize,
    pub k: usize,
    pub data: Vec<f64>,
}

impl Design {
    pub fn new(k: usize) -> Self {
        Self { n: 0, k, data: Vec::new() }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.k);
        self.data.extend_from_slice(row);
        self.n += 1;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn dot(&self, i: usize, coef: &[f64]) -> f64 {
        self.row(i).iter().zip(coef).map(|(a, b)| a * b).sum()
    }

    /// `Σ w_i x_i x_iᵀ` over rows where `w_i != 0`.
    pub fn weighted_gram(&self, weights: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let k = self.k;
        let mut g = DMatrix::zeros(k, k);
        for i in 0..self.n {
            let w = weights(i);
            if w == 0.0 {
                continue;
            }
            let x = self.row(i);
            for a in 0..k {
                let wa = w * x[a];
                for b in 0..=a {
                    g[(a, b)] += wa * x[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                g[(b, a)] = g[(a, b)];
            }
        }
        g
    }

    /// `Σ w_i v_i x_i`.
    pub fn weighted_cross(&self, weights: impl Fn(usize) -> f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.k);
        for i in 0..self.n {
            let w = weights(i);
            if w == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += w * x;
            }
        }
        out
    }
}

/// Cholesky of a symmetric positive definite matrix, rejecting near-singular
/// input after diagonal scaling.
pub fn spd_factor(a: &DMatrix<f64>, what: &str) -> Result<SpdFactor> {
    let k = a.nrows();
    let mut scale = DVector::zeros(k);
    for i in 0..k {
        let d = a[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Singular(format!("{what}: zero or invalid diagonal at column {i}")));
        }
        scale[i] = 1.0 / d.sqrt();
    }
    let scaled = DMatrix::from_fn(k, k, |i, j| a[(i, j)] * scale[i] * scale[j]);
    let chol = Cholesky::new(scaled)
        .ok_or_else(|| Error::Singular(format!("{what}: matrix is not positive definite")))?;
    let min_pivot = (0..k).map(|i| chol.l_dirty()[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot * min_pivot < 1e-12 {
        return Err(Error::Singular(format!("{what}: collinear columns")));
    }
    Ok(SpdFactor { chol, scale })
}

pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    scale: DVector<f64>,
}

impl SpdFactor {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let scaled = b.component_mul(&self.scale);
        self.chol.solve(&scaled).component_mul(&self.scale)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.chol.inverse();
        let k = inv.nrows();
        DMatrix::from_fn(k, k, |i, j| inv[(i, j)] * self.scale[i] * self.scale[j])
    }
}

/// Weighted least squares `min Σ w_i (y_i − x_iᵀβ)²`.
pub fn weighted_ols(x: &Design, y: &[f64], weights: impl Fn(usize) -> f64 + Copy) -> Result<Vec<f64>> {
    let gram = x.weighted_gram(weights);
    let cross = x.weighted_cross(|i| weights(i) * y[i]);
    let factor = spd_factor(&gram, "least squares")?;
    Ok(factor.solve(&cross).iter().copied().collect())
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub fitted: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

pub const LOGISTIC_TOLERANCE: f64 = 1e-8;
pub const LOGISTIC_MAX_ITER: usize = 100;

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn log1p_exp(eta: f64) -> f64 {
    if eta > 35.0 {
        eta
    } else if eta < -35.0 {
        eta.exp()
    } else {
        eta.exp().ln_1p()
    }
}

fn logistic_loglik(x: &Design, y: &[f64], coef: &[f64]) -> f64 {
    (0..x.n)
        .map(|i| {
            let eta = x.dot(i, coef);
            y[i] * eta - log1p_exp(eta)
        })
        .sum()
}

/// Maximum-likelihood logistic regression by Newton–Raphson (IRLS).
///
/// Stops once the relative log-likelihood change drops below `tol` and the
/// largest coefficient step is below `tol`; step-halving guards against
/// overshooting.
pub fn logistic_irls(x: &Design, y: &[f64], tol: f64, max_iter: usize) -> Result<LogisticFit> {
    let k = x.k;
    let mut coef = vec![0.0; k];
    let mut ll = logistic_loglik(x, y, &coef);
    for iter in 1..=max_iter {
        let p: Vec<f64> = (0..x.n).map(|i| sigmoid(x.dot(i, &coef))).collect();
        let hess = x.weighted_gram(|i| p[i] * (1.0 - p[i]));
        let grad = x.weighted_cross(|i| y[i] - p[i]);
        let factor = spd_factor(&hess, "logistic information")?;
        let step = factor.solve(&grad);

        let mut scale = 1.0;
        let (new_coef, new_ll) = loop {
            let cand: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c + scale * s).collect();
            let cand_ll = logistic_loglik(x, y, &cand);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) || scale < 1e-6 {
                break (cand, cand_ll);
            }
            scale *= 0.5;
        };
        let max_step = step.iter().fold(0.0f64, |m, s| m.max((scale * s).abs()));
        let rel_change = (new_ll - ll).abs() / (new_ll.abs() + 0.1);
        coef = new_coef;
        ll = new_ll;
        if !ll.is_finite() {
            break;
        }
        if rel_change < tol && max_step < tol {
            let fitted = (0..x.n).map(|i| sigmoid(x.dot(i, &coef))).collect();
            return Ok(LogisticFit {
                coef,
                fitted,
                log_likelihood: ll,
                iterations: iter,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "logistic propensity model".into(),
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn design(rows: &[&[f64]]) -> Design {
        let mut d = Design::new(rows[0].len());
        for r in rows {
            d.push_row(r);
        }
        d
    }

    #[test]
    fn ols_recovers_exact_line() {
        let x = design(&[&[1.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], &[1.0, 3.0]]);
        let y = [1.0, 3.0, 5.0, 7.0];
        let b = weighted_ols(&x, &y, |_| 1.0).unwrap();
        assert_relative_eq!(b[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(b[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn collinear_columns_are_singular() {
        let x = design(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        assert!(matches!(weighted_ols(&x, &[1.0, 2.0, 3.0], |_| 1.0), Err(Error::Singular(_))));
    }

    #[test]
    fn intercept_only_logit_matches_share() {
        let x = design(&[&[1.0], &[1.0], &[1.0], &[1.0], &[1.0]]);
        let y = [1.0, 0.0, 0.0, 1.0, 0.0];
        let fit = logistic_irls(&x, &y, LOGISTIC_TOLERANCE, LOGISTIC_MAX_ITER).unwrap();
        for p in &fit.fitted {
            assert_relative_eq!(*p, 0.4, epsilon = 1e-12);
        }
    }

    #[test]
    fn logit_score_vanishes_at_optimum() {
        let xs = [-2.0, -1.0, -0.5, 0.0, 0.3, 0.8, 1.5, 2.0];
        let ys = [0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut x = Design::new(2);
        for v in xs {
            x.push_row(&[1.0, v]);
        }
        let fit = logistic_irls(&x, &ys, LOGISTIC_TOLERANCE, LOGISTIC_MAX_ITER).unwrap();
        let score = x.weighted_cross(|i| ys[i] - fit.fitted[i]);
        assert!(score.amax() < 1e-10);
    }

    #[test]
    fn separated_data_fails_loudly() {
        let mut x = Design::new(2);
        for v in [-2.0, -1.0, 1.0, 2.0] {
            x.push_row(&[1.0, v]);
        }
        let y = [0.0, 0.0, 1.0, 1.0];
        assert!(logistic_irls(&x, &y, LOGISTIC_TOLERANCE, LOGISTIC_MAX_ITER).is_err());
    }
}
