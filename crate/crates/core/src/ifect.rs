//! Interactive fixed effects counterfactual estimator.
//!
//! Untreated potential outcomes follow
//! `Y_it(0) = X_it'β + μ + α_i + ξ_t + λ_i'f_t + ε_it`. The model is fitted on
//! untreated cells only (never-treated rows and pre-treatment rows of treated
//! units); missing cells of the unit-by-year matrix are filled by EM. Treated
//! post-treatment outcomes are then compared with their imputed
//! counterfactuals.

use std::collections::BTreeMap;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventstudy::{EventStudyResult, Uncertainty};
use crate::inference::{cluster_bootstrap, replicate_rng, BootstrapSpec, ClusterScheme};
use crate::panel::{CohortPanel, Covariate, UnitIx, Year};
use crate::regression::{spd_factor, SpdFactor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IfectConfig {
    pub max_rank: usize,
    /// Fixed rank; cross-validation is skipped when set.
    pub rank: Option<usize>,
    /// Time-varying covariates entering `β`.
    pub covariates: Vec<String>,
    pub cv_rounds: usize,
    /// Share of untreated cells held out per cross-validation round.
    pub cv_holdout: f64,
    /// A larger rank must lower the prediction error by more than this
    /// relative margin to be preferred.
    pub cv_tolerance: f64,
    pub em_tolerance: f64,
    pub max_iterations: usize,
    /// Iteration cap for the fits inside cross-validation. Ranks above the
    /// truth drift along flat directions of the unbalanced problem and rarely
    /// meet `em_tolerance`; their hold-out error is settled well before.
    pub cv_max_iterations: usize,
    pub bootstrap_reps: usize,
    pub seed: u64,
    pub window: (i32, i32),
}

impl Default for IfectConfig {
    fn default() -> Self {
        Self {
            max_rank: 5,
            rank: None,
            covariates: Vec::new(),
            cv_rounds: 5,
            cv_holdout: 0.1,
            cv_tolerance: 0.01,
            em_tolerance: 1e-7,
            max_iterations: 2000,
            cv_max_iterations: 200,
            bootstrap_reps: 200,
            seed: 1,
            window: (-10, 5),
        }
    }
}

impl IfectConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.bootstrap_reps == 0 {
            return bad("bootstrap_reps must be at least 1".into());
        }
        if !(self.cv_holdout > 0.0 && self.cv_holdout < 1.0) {
            return bad(format!("cv_holdout must lie in (0, 1), got {}", self.cv_holdout));
        }
        if self.cv_rounds == 0 {
            return bad("cv_rounds must be at least 1".into());
        }
        if !(self.em_tolerance > 0.0) || self.max_iterations == 0 || self.cv_max_iterations == 0 {
            return bad("em_tolerance and the iteration caps must be positive".into());
        }
        if self.cv_tolerance < 0.0 {
            return bad("cv_tolerance must be non-negative".into());
        }
        if self.window.0 > self.window.1 {
            return bad(format!("empty event window {:?}", self.window));
        }
        if let Some(r) = self.rank {
            if r > self.max_rank {
                return bad(format!("rank {r} exceeds max_rank {}", self.max_rank));
            }
        }
        Ok(())
    }
}

/// Fitted untreated-outcome model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub rank: usize,
    pub mu: f64,
    pub covariates: Vec<String>,
    /// Covariates removed because unit and year effects explain them exactly.
    pub dropped_covariates: Vec<String>,
    pub beta: Vec<f64>,
    /// Panel units in the fit, ascending.
    pub units: Vec<UnitIx>,
    pub alpha: Vec<f64>,
    /// `units.len() × rank`, row-major.
    pub lambda: Vec<f64>,
    /// Years with at least one untreated observation, ascending.
    pub years: Vec<Year>,
    pub xi: Vec<f64>,
    /// `years.len() × rank`, row-major; `fᵀf / T = I`.
    pub factors: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub tolerance_achieved: f64,
    /// Sum of squared residuals on the fitted cells, per iteration.
    pub objective_trace: Vec<f64>,
    /// Treated units left out for having too few pre-treatment observations.
    pub insufficient_pretreatment: Vec<UnitIx>,
}

impl FactorModel {
    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn unit_position(&self, unit: UnitIx) -> Option<usize> {
        self.units.binary_search(&unit).ok()
    }

    pub fn year_position(&self, year: Year) -> Option<usize> {
        self.years.binary_search(&year).ok()
    }

    pub fn factor(&self, year_pos: usize) -> &[f64] {
        &self.factors[year_pos * self.rank..(year_pos + 1) * self.rank]
    }

    pub fn loading(&self, unit_pos: usize) -> &[f64] {
        &self.lambda[unit_pos * self.rank..(unit_pos + 1) * self.rank]
    }

    /// `μ + α_i + ξ_t + λ_i'f_t` for a fitted unit and year.
    pub fn latent(&self, unit_pos: usize, year_pos: usize) -> f64 {
        let lf: f64 = self.loading(unit_pos).iter().zip(self.factor(year_pos)).map(|(a, b)| a * b).sum();
        self.mu + self.alpha[unit_pos] + self.xi[year_pos] + lf
    }
}

/// Dense unit-by-year matrix of the cells entering the fit.
#[derive(Clone)]
struct FitData {
    units: Vec<UnitIx>,
    years: Vec<Year>,
    n: usize,
    t: usize,
    k: usize,
    y: Vec<f64>,
    obs: Vec<bool>,
    /// `n × t × k`; zero on unobserved cells.
    x: Vec<f64>,
}

impl FitData {
    fn xb(&self, cell: usize, beta: &[f64]) -> f64 {
        self.x[cell * self.k..(cell + 1) * self.k]
            .iter()
            .zip(beta)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn n_obs(&self) -> usize {
        self.obs.iter().filter(|o| **o).count()
    }
}

fn is_untreated_cell(panel: &CohortPanel, unit: UnitIx, row: usize) -> bool {
    panel.outcome(row).is_some() && panel.first_treated(unit).is_none_or(|g| panel.year(row) < g)
}

/// Collects the fit cells. Treated units with fewer than `min_pre` untreated
/// observations are left out and returned separately.
fn build_fit_data(panel: &CohortPanel, covariates: &[Covariate], min_pre: usize) -> Result<(FitData, Vec<UnitIx>)> {
    let (t_min, t_max) = panel.year_range();
    let span = (t_max - t_min + 1) as usize;
    let mut year_used = vec![false; span];
    let mut units = Vec::new();
    let mut insufficient = Vec::new();
    for u in 0..panel.n_units() {
        let count = panel.rows(u).filter(|&r| is_untreated_cell(panel, u, r)).count();
        if panel.first_treated(u).is_some() && count < min_pre {
            insufficient.push(u);
            continue;
        }
        if count == 0 {
            continue;
        }
        units.push(u);
        for r in panel.rows(u).filter(|&r| is_untreated_cell(panel, u, r)) {
            year_used[(panel.year(r) - t_min) as usize] = true;
        }
    }
    if units.is_empty() {
        return Err(Error::RankDeficient("no untreated observations".into()));
    }
    let mut col_of = vec![usize::MAX; span];
    let mut years = Vec::new();
    for (j, used) in year_used.iter().enumerate() {
        if *used {
            col_of[j] = years.len();
            years.push(t_min + j as Year);
        }
    }
    let (n, t, k) = (units.len(), years.len(), covariates.len());
    let mut data = FitData {
        units,
        years,
        n,
        t,
        k,
        y: vec![0.0; n * t],
        obs: vec![false; n * t],
        x: vec![0.0; n * t * k],
    };
    for i in 0..n {
        let u = data.units[i];
        for r in panel.rows(u).filter(|&r| is_untreated_cell(panel, u, r)) {
            let cell = i * t + col_of[(panel.year(r) - t_min) as usize];
            data.y[cell] = panel.outcome(r).expect("untreated cells have outcomes");
            data.obs[cell] = true;
            for (j, c) in covariates.iter().enumerate() {
                data.x[cell * k + j] = panel.value(r, *c);
            }
        }
    }
    Ok((data, insufficient))
}

/// Two-way fixed effects part of a fit.
struct TwoWay {
    mu: f64,
    alpha: Vec<f64>,
    xi: Vec<f64>,
    beta: Vec<f64>,
}

/// Exact least squares for `y = Xβ + α_i + ξ_t` on observed cells; unit
/// effects are eliminated and the first year effect pinned to zero, then
/// effects are re-centred so that `Σ ξ = 0` and `Σ α = 0`.
fn two_way_exact(d: &FitData) -> Result<TwoWay> {
    let (t, k) = (d.t, d.k);
    let p = t - 1 + k;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut b = DVector::<f64>::zeros(p);
    let mut s = vec![0.0; p];
    for i in 0..d.n {
        s.iter_mut().for_each(|v| *v = 0.0);
        let mut sy = 0.0;
        let mut n_i = 0.0;
        for c in 0..t {
            let cell = i * t + c;
            if !d.obs[cell] {
                continue;
            }
            let y = d.y[cell];
            let x = &d.x[cell * k..(cell + 1) * k];
            n_i += 1.0;
            sy += y;
            if c > 0 {
                a[(c - 1, c - 1)] += 1.0;
                b[c - 1] += y;
                s[c - 1] += 1.0;
                for j in 0..k {
                    a[(c - 1, t - 1 + j)] += x[j];
                }
            }
            for j in 0..k {
                b[t - 1 + j] += x[j] * y;
                s[t - 1 + j] += x[j];
                for l in j..k {
                    a[(t - 1 + j, t - 1 + l)] += x[j] * x[l];
                }
            }
        }
        if n_i == 0.0 {
            continue;
        }
        let nz: Vec<usize> = (0..p).filter(|&q| s[q] != 0.0).collect();
        for (ia, &qa) in nz.iter().enumerate() {
            let sa = s[qa] / n_i;
            b[qa] -= sa * sy;
            for &qb in &nz[ia..] {
                a[(qa, qb)] -= sa * s[qb];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            a[(r, c)] = a[(c, r)];
        }
    }
    let theta = if p == 0 {
        DVector::zeros(0)
    } else {
        spd_factor(&a, "two-way fixed effects")
            .map_err(|e| Error::RankDeficient(e.to_string()))?
            .solve(&b)
    };
    let mut xi = vec![0.0; t];
    xi[1..].copy_from_slice(&theta.as_slice()[..t - 1]);
    let beta = theta.as_slice()[t - 1..].to_vec();
    let mut alpha = vec![0.0; d.n];
    for (i, al) in alpha.iter_mut().enumerate() {
        let (mut sum, mut n_i) = (0.0, 0.0);
        for c in 0..t {
            let cell = i * t + c;
            if d.obs[cell] {
                sum += d.y[cell] - xi[c] - d.xb(cell, &beta);
                n_i += 1.0;
            }
        }
        *al = sum / n_i;
    }
    let xi_bar = xi.iter().sum::<f64>() / t as f64;
    xi.iter_mut().for_each(|v| *v -= xi_bar);
    let mu = alpha.iter().sum::<f64>() / d.n as f64 + xi_bar;
    alpha.iter_mut().for_each(|v| *v += xi_bar - mu);
    Ok(TwoWay { mu, alpha, xi, beta })
}

/// Rank-`r` projection of an `n × t` matrix through the eigenvectors of its
/// `t × t` Gram matrix. Returns loadings (`n × r`) and factors (`t × r`,
/// `fᵀf = t·I`).
fn low_rank(m: &[f64], n: usize, t: usize, r: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gram = vec![0.0; t * t];
    for row in m.chunks_exact(t) {
        for a in 0..t {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            let g = &mut gram[a * t..(a + 1) * t];
            for b in a..t {
                g[b] += ra * row[b];
            }
        }
    }
    let g = DMatrix::from_fn(t, t, |a, b| if a <= b { gram[a * t + b] } else { gram[b * t + a] });
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let sqrt_t = (t as f64).sqrt();
    let mut factors = vec![0.0; t * r];
    for (q, &col) in order.iter().take(r).enumerate() {
        let v = eig.eigenvectors.column(col);
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for a in 0..t {
            factors[a * r + q] = sign * v[a] * sqrt_t;
        }
    }
    let mut loadings = vec![0.0; n * r];
    for (row, lam) in m.chunks_exact(t).zip(loadings.chunks_exact_mut(r.max(1))) {
        for (a, &ra) in row.iter().enumerate() {
            if ra == 0.0 {
                continue;
            }
            for q in 0..r {
                lam[q] += ra * factors[a * r + q];
            }
        }
        lam.iter_mut().for_each(|l| *l /= t as f64);
    }
    (loadings, factors)
}

struct EmFit {
    two_way: TwoWay,
    lambda: Vec<f64>,
    factors: Vec<f64>,
    converged: bool,
    iterations: usize,
    tolerance_achieved: f64,
    trace: Vec<f64>,
}

fn latent_matrix(d: &FitData, tw: &TwoWay, lambda: &[f64], factors: &[f64], r: usize, out: &mut [f64]) {
    for i in 0..d.n {
        let lam = &lambda[i * r..(i + 1) * r];
        for c in 0..d.t {
            let f = &factors[c * r..(c + 1) * r];
            let lf: f64 = lam.iter().zip(f).map(|(a, b)| a * b).sum();
            out[i * d.t + c] = tw.mu + tw.alpha[i] + tw.xi[c] + lf;
        }
    }
}

fn observed_ssr(d: &FitData, beta: &[f64], latent: &[f64]) -> f64 {
    (0..d.n * d.t)
        .filter(|&c| d.obs[c])
        .map(|c| (d.y[c] - d.xb(c, beta) - latent[c]).powi(2))
        .sum()
}

fn fit_em(d: &FitData, r: usize, tol: f64, max_iter: usize) -> Result<EmFit> {
    let init = two_way_exact(d)?;
    let cells = d.n * d.t;
    if r == 0 {
        let mut latent = vec![0.0; cells];
        latent_matrix(d, &init, &[], &[], 0, &mut latent);
        let ssr = observed_ssr(d, &init.beta, &latent);
        return Ok(EmFit {
            two_way: init,
            lambda: Vec::new(),
            factors: Vec::new(),
            converged: true,
            iterations: 0,
            tolerance_achieved: 0.0,
            trace: vec![ssr],
        });
    }
    if r >= d.t {
        return Err(Error::RankDeficient(format!("rank {r} needs more than {} years", d.t)));
    }
    let (n, t, k) = (d.n, d.t, d.k);
    let xtx = if k > 0 {
        let mut m = DMatrix::<f64>::zeros(k, k);
        for c in (0..cells).filter(|&c| d.obs[c]) {
            let x = &d.x[c * k..(c + 1) * k];
            for a in 0..k {
                for b in 0..k {
                    m[(a, b)] += x[a] * x[b];
                }
            }
        }
        Some(spd_factor(&m, "covariate block").map_err(|e| Error::RankDeficient(e.to_string()))?)
    } else {
        None
    };

    let mut work = vec![0.0; cells];
    for c in 0..cells {
        if d.obs[c] {
            let (i, col) = (c / t, c % t);
            work[c] = d.y[c] - d.xb(c, &init.beta) - init.mu - init.alpha[i] - init.xi[col];
        }
    }
    let (lambda, factors) = low_rank(&work, n, t, r);
    let mut latent = vec![0.0; cells];
    latent_matrix(d, &init, &lambda, &factors, r, &mut latent);
    let ssr = observed_ssr(d, &init.beta, &latent);
    let mut current = EmState {
        tw: init,
        lambda,
        factors,
        latent,
        ssr,
    };
    let mut trace = vec![current.ssr];
    let step = |from: &EmState, work: &mut Vec<f64>| em_step(d, &from.latent, &from.tw.beta, r, xtx.as_ref(), work);
    let change = |a: &EmState, b: &EmState| {
        let (mut num, mut den) = (0.0, 0.0);
        for c in 0..cells {
            num += (b.latent[c] - a.latent[c]).powi(2);
            den += a.latent[c].powi(2);
        }
        (num / den.max(f64::MIN_POSITIVE)).sqrt()
    };

    // SQUAREM: two EM steps define a secant extrapolation, which is kept only
    // when one further EM step from it lowers the observed-cell objective
    // below the plain second step.
    let mut evals = 0;
    let mut diff = f64::INFINITY;
    while evals < max_iter {
        let first = step(&current, &mut work);
        evals += 1;
        diff = change(&current, &first);
        if diff < tol || evals >= max_iter {
            trace.push(first.ssr);
            current = first;
            if diff < tol {
                return Ok(current.into_fit(true, evals, diff, trace));
            }
            break;
        }
        let second = step(&first, &mut work);
        evals += 1;
        let mut accepted = second;
        if evals < max_iter {
            let (mut rr, mut vv) = (0.0, 0.0);
            for c in (0..cells).filter(|&c| !d.obs[c]) {
                let rc = first.latent[c] - current.latent[c];
                let vc = accepted.latent[c] - 2.0 * first.latent[c] + current.latent[c];
                rr += rc * rc;
                vv += vc * vc;
            }
            for j in 0..k {
                let rc = first.tw.beta[j] - current.tw.beta[j];
                let vc = accepted.tw.beta[j] - 2.0 * first.tw.beta[j] + current.tw.beta[j];
                rr += rc * rc;
                vv += vc * vc;
            }
            let alpha = if vv > 0.0 { -(rr / vv).sqrt() } else { -1.0 };
            if alpha < -1.0 {
                let (a1, a2) = (-2.0 * alpha, alpha * alpha);
                let mut jump = EmState {
                    tw: TwoWay {
                        mu: 0.0,
                        alpha: Vec::new(),
                        xi: Vec::new(),
                        beta: (0..k)
                            .map(|j| {
                                let (b0, b1, b2) = (current.tw.beta[j], first.tw.beta[j], accepted.tw.beta[j]);
                                b0 + a1 * (b1 - b0) + a2 * (b2 - 2.0 * b1 + b0)
                            })
                            .collect(),
                    },
                    lambda: Vec::new(),
                    factors: Vec::new(),
                    latent: current.latent.clone(),
                    ssr: f64::NAN,
                };
                for c in (0..cells).filter(|&c| !d.obs[c]) {
                    let (l0, l1, l2) = (current.latent[c], first.latent[c], accepted.latent[c]);
                    jump.latent[c] = l0 + a1 * (l1 - l0) + a2 * (l2 - 2.0 * l1 + l0);
                }
                let stabilized = step(&jump, &mut work);
                evals += 1;
                if stabilized.ssr.is_finite() && stabilized.ssr <= accepted.ssr {
                    accepted = stabilized;
                }
            }
        }
        trace.push(accepted.ssr);
        current = accepted;
    }
    Ok(current.into_fit(false, evals, diff, trace))
}

struct EmState {
    tw: TwoWay,
    lambda: Vec<f64>,
    factors: Vec<f64>,
    latent: Vec<f64>,
    ssr: f64,
}

impl EmState {
    fn into_fit(self, converged: bool, iterations: usize, tolerance_achieved: f64, trace: Vec<f64>) -> EmFit {
        EmFit {
            two_way: self.tw,
            lambda: self.lambda,
            factors: self.factors,
            converged,
            iterations,
            tolerance_achieved,
            trace,
        }
    }
}

/// One EM step: fill unobserved cells from `latent`, refit the two-way
/// effects and the rank-`r` component on the completed matrix, then update
/// `β` on observed cells.
fn em_step(
    d: &FitData,
    latent: &[f64],
    beta: &[f64],
    r: usize,
    xtx: Option<&SpdFactor>,
    work: &mut [f64],
) -> EmState {
    let (n, t, k) = (d.n, d.t, d.k);
    let cells = n * t;
    for c in 0..cells {
        work[c] = if d.obs[c] { d.y[c] - d.xb(c, beta) } else { latent[c] };
    }
    let mut row_sum = vec![0.0; n];
    let mut col_sum = vec![0.0; t];
    for (i, row) in work.chunks_exact(t).enumerate() {
        for (c, v) in row.iter().enumerate() {
            row_sum[i] += v;
            col_sum[c] += v;
        }
    }
    let mu = row_sum.iter().sum::<f64>() / cells as f64;
    let mut tw = TwoWay {
        mu,
        alpha: row_sum.iter().map(|s| s / t as f64 - mu).collect(),
        xi: col_sum.iter().map(|s| s / n as f64 - mu).collect(),
        beta: beta.to_vec(),
    };
    for (i, row) in work.chunks_exact_mut(t).enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v -= mu + tw.alpha[i] + tw.xi[c];
        }
    }
    let (lambda, factors) = low_rank(work, n, t, r);
    let mut next = vec![0.0; cells];
    latent_matrix(d, &tw, &lambda, &factors, r, &mut next);
    if let Some(f) = xtx {
        let mut cross = DVector::<f64>::zeros(k);
        for c in (0..cells).filter(|&c| d.obs[c]) {
            let z = d.y[c] - next[c];
            for (j, x) in d.x[c * k..(c + 1) * k].iter().enumerate() {
                cross[j] += x * z;
            }
        }
        tw.beta = f.solve(&cross).as_slice().to_vec();
    }
    let ssr = observed_ssr(d, &tw.beta, &next);
    EmState {
        tw,
        lambda,
        factors,
        latent: next,
        ssr,
    }
}

/// Resolves covariates, dropping any that unit and year effects reproduce
/// exactly (time-invariant traits, age).
fn resolve_covariates(panel: &CohortPanel, names: &[String]) -> Result<(Vec<String>, Vec<Covariate>, Vec<String>)> {
    let mut kept_names = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for name in names {
        let cov = panel.covariate(name)?;
        let (mut d, _) = build_fit_data(panel, &[], 1)?;
        let mut sum = 0.0;
        for u in 0..d.n {
            let unit = d.units[u];
            for r in panel.rows(unit).filter(|&r| is_untreated_cell(panel, unit, r)) {
                let c = u * d.t + d.years.binary_search(&panel.year(r)).expect("fit year");
                d.y[c] = panel.value(r, cov);
                sum += d.y[c];
            }
        }
        let n_obs = d.n_obs() as f64;
        let mean = sum / n_obs;
        let tw = two_way_exact(&d)?;
        let (mut ss_tot, mut ss_res) = (0.0, 0.0);
        for c in (0..d.n * d.t).filter(|&c| d.obs[c]) {
            let (i, col) = (c / d.t, c % d.t);
            ss_tot += (d.y[c] - mean).powi(2);
            ss_res += (d.y[c] - tw.mu - tw.alpha[i] - tw.xi[col]).powi(2);
        }
        if ss_res <= 1e-10 * ss_tot.max(1e-300) || ss_tot == 0.0 {
            warn!("covariate {name} is absorbed by unit and year effects and is dropped");
            dropped.push(name.clone());
        } else {
            kept_names.push(name.clone());
            kept.push(cov);
        }
    }
    Ok((kept_names, kept, dropped))
}

/// Fits the rank-`rank` model on the untreated cells of `panel`.
///
/// An exhausted iteration budget is not an error: the model is returned with
/// `converged = false` and a warning is logged.
pub fn fit_factor_model(panel: &CohortPanel, rank: usize, config: &IfectConfig) -> Result<FactorModel> {
    let (names, covs, dropped) = resolve_covariates(panel, &config.covariates)?;
    let (data, insufficient) = build_fit_data(panel, &covs, rank.max(1))?;
    if !insufficient.is_empty() {
        warn!(
            "{} treated units have fewer than {} pre-treatment observations and are excluded",
            insufficient.len(),
            rank.max(1)
        );
    }
    let em = fit_em(&data, rank, config.em_tolerance, config.max_iterations)?;
    if !em.converged {
        warn!(
            "factor model (rank {rank}) stopped after {} iterations at relative change {:.3e}",
            em.iterations, em.tolerance_achieved
        );
    }
    Ok(FactorModel {
        rank,
        mu: em.two_way.mu,
        covariates: names,
        dropped_covariates: dropped,
        beta: em.two_way.beta,
        units: data.units,
        alpha: em.two_way.alpha,
        lambda: em.lambda,
        years: data.years,
        xi: em.two_way.xi,
        factors: em.factors,
        converged: em.converged,
        iterations: em.iterations,
        tolerance_achieved: em.tolerance_achieved,
        objective_trace: em.trace,
        insufficient_pretreatment: insufficient,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSelection {
    pub rank: usize,
    /// Mean squared prediction error per candidate rank `0..=max_rank`.
    pub mspe: Vec<f64>,
}

/// Random hold-out set: about `share` of the observed cells, never taking a
/// unit below `min_per_unit` remaining cells or a year below one.
fn holdout_cells(d: &FitData, share: f64, min_per_unit: usize, seed: u64, round: u64) -> Vec<usize> {
    let mut cells: Vec<usize> = (0..d.n * d.t).filter(|&c| d.obs[c]).collect();
    let target = (share * cells.len() as f64).round() as usize;
    let mut rng = replicate_rng(seed, round);
    cells.shuffle(&mut rng);
    let mut per_unit = vec![0usize; d.n];
    let mut per_year = vec![0usize; d.t];
    for &c in &cells {
        per_unit[c / d.t] += 1;
        per_year[c % d.t] += 1;
    }
    let mut out = Vec::with_capacity(target);
    for c in cells {
        if out.len() >= target {
            break;
        }
        let (i, col) = (c / d.t, c % d.t);
        if per_unit[i] > min_per_unit && per_year[col] > 1 {
            per_unit[i] -= 1;
            per_year[col] -= 1;
            out.push(c);
        }
    }
    out.sort_unstable();
    out
}

/// Picks the rank by repeated random hold-out of untreated cells.
pub fn select_rank(panel: &CohortPanel, config: &IfectConfig) -> Result<RankSelection> {
    config.validate()?;
    if config.max_rank == 0 {
        return Ok(RankSelection {
            rank: 0,
            mspe: Vec::new(),
        });
    }
    let (_, covs, _) = resolve_covariates(panel, &config.covariates)?;
    let (data, _) = build_fit_data(panel, &covs, config.max_rank + 1)?;
    let jobs: Vec<(usize, usize)> = (0..config.cv_rounds)
        .flat_map(|round| (0..=config.max_rank).map(move |r| (round, r)))
        .collect();
    let held: Vec<Vec<usize>> = (0..config.cv_rounds)
        .map(|round| holdout_cells(&data, config.cv_holdout, config.max_rank + 1, config.seed, round as u64))
        .collect();
    let errors: Vec<(f64, usize)> = jobs
        .par_iter()
        .map(|&(round, r)| {
            let mut train = data.clone();
            for &c in &held[round] {
                train.obs[c] = false;
            }
            let fit = fit_em(&train, r, config.em_tolerance, config.cv_max_iterations)?;
            let mut latent = vec![0.0; train.n * train.t];
            latent_matrix(&train, &fit.two_way, &fit.lambda, &fit.factors, r, &mut latent);
            let sse: f64 = held[round]
                .iter()
                .map(|&c| (data.y[c] - data.xb(c, &fit.two_way.beta) - latent[c]).powi(2))
                .sum();
            Ok((sse, held[round].len()))
        })
        .collect::<Result<_>>()?;
    let mut mspe = vec![0.0; config.max_rank + 1];
    let mut counts = vec![0usize; config.max_rank + 1];
    for (&(_, r), (sse, n)) in jobs.iter().zip(errors) {
        mspe[r] += sse;
        counts[r] += n;
    }
    for (m, n) in mspe.iter_mut().zip(&counts) {
        *m /= (*n).max(1) as f64;
    }
    let mut best = 0;
    for r in 1..mspe.len() {
        if mspe[r] < mspe[best] * (1.0 - config.cv_tolerance) {
            best = r;
        }
    }
    debug!("cross-validated prediction errors {mspe:?}; rank {best}");
    Ok(RankSelection { rank: best, mspe })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventPoint {
    pub event_time: i32,
    pub estimate: f64,
    pub n_treated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputation {
    /// Post-treatment points are mean `Y − Ŷ(0)`; pre-treatment points are
    /// mean in-sample residuals of treated units.
    pub points: Vec<EventPoint>,
    /// Treated units left out (too few pre-treatment observations or
    /// loadings not identified).
    pub excluded_units: usize,
    /// Treated post-treatment observations with an imputed counterfactual.
    pub n_imputed: usize,
}

/// Imputes untreated outcomes for treated units and averages by event time.
pub fn impute_and_average(panel: &CohortPanel, model: &FactorModel, window: (i32, i32)) -> Result<Imputation> {
    let covs: Vec<Covariate> = model
        .covariates
        .iter()
        .map(|n| panel.covariate(n))
        .collect::<Result<_>>()?;
    let r = model.rank;
    let xb = |row: usize| -> f64 { covs.iter().zip(&model.beta).map(|(c, b)| panel.value(row, *c) * b).sum() };
    let mut sums: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    let mut excluded = model.insufficient_pretreatment.len();
    let mut n_imputed = 0;
    let mut lam = vec![0.0; r];
    for u in 0..panel.n_units() {
        let Some(g) = panel.first_treated(u) else {
            continue;
        };
        if model.insufficient_pretreatment.binary_search(&u).is_ok() {
            continue;
        }
        let Some(pos) = model.unit_position(u) else {
            excluded += 1;
            continue;
        };
        let base = |row: usize, year_pos: usize| xb(row) + model.mu + model.alpha[pos] + model.xi[year_pos];
        if r > 0 {
            let mut ftf = DMatrix::<f64>::zeros(r, r);
            let mut fty = DVector::<f64>::zeros(r);
            for row in panel.rows(u).filter(|&row| is_untreated_cell(panel, u, row)) {
                let yp = model.year_position(panel.year(row)).expect("fitted year");
                let f = model.factor(yp);
                let resid = panel.outcome(row).expect("observed") - base(row, yp);
                for a in 0..r {
                    fty[a] += f[a] * resid;
                    for b in 0..r {
                        ftf[(a, b)] += f[a] * f[b];
                    }
                }
            }
            match spd_factor(&ftf, "treated loadings") {
                Ok(fac) => lam.copy_from_slice(fac.solve(&fty).as_slice()),
                Err(_) => {
                    excluded += 1;
                    continue;
                }
            }
        }
        for row in panel.rows(u) {
            let Some(y) = panel.outcome(row) else {
                continue;
            };
            let year = panel.year(row);
            let e = year - g;
            if e < window.0 || e > window.1 {
                continue;
            }
            let yp = match model.year_position(year) {
                Some(p) => p,
                None => return Err(Error::MissingFactorYear(year)),
            };
            let lf: f64 = lam.iter().zip(model.factor(yp)).map(|(a, b)| a * b).sum();
            let delta = y - base(row, yp) - lf;
            let entry = sums.entry(e).or_insert((0.0, 0));
            entry.0 += delta;
            entry.1 += 1;
            if e >= 0 {
                n_imputed += 1;
            }
        }
    }
    if excluded > 0 {
        warn!("{excluded} treated units excluded from the imputation");
    }
    let points = sums
        .into_iter()
        .map(|(e, (s, n))| EventPoint {
            event_time: e,
            estimate: s / n as f64,
            n_treated: n,
        })
        .collect();
    Ok(Imputation {
        points,
        excluded_units: excluded,
        n_imputed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfectResult {
    pub selection: Option<RankSelection>,
    pub model: FactorModel,
    pub imputation: Imputation,
    pub event_study: EventStudyResult,
    pub bootstrap_failed: usize,
}

/// Rank selection (unless fixed), fit, imputation and, when `bootstrap` is
/// given, cluster-bootstrap inference holding the rank fixed.
pub fn estimate_ifect(
    panel: &CohortPanel,
    config: &IfectConfig,
    scheme: &ClusterScheme,
    bootstrap: Option<&BootstrapSpec>,
) -> Result<IfectResult> {
    config.validate()?;
    let selection = match config.rank {
        Some(_) => None,
        None => Some(select_rank(panel, config)?),
    };
    let rank = config.rank.unwrap_or_else(|| selection.as_ref().map_or(0, |s| s.rank));
    let model = fit_factor_model(panel, rank, config)?;
    let imputation = impute_and_average(panel, &model, config.window)?;
    let points: Vec<(i32, f64, usize)> = imputation
        .points
        .iter()
        .map(|p| (p.event_time, p.estimate, p.n_treated))
        .collect();
    let (uncertainty, bootstrap_failed) = match bootstrap {
        None => (Uncertainty::None, 0),
        Some(spec) => {
            let (w0, w1) = config.window;
            let width = (w1 - w0 + 1) as usize;
            let estimator = |p: &CohortPanel| -> Result<Vec<f64>> {
                let m = fit_factor_model(p, rank, config)?;
                let imp = impute_and_average(p, &m, config.window)?;
                let mut out = vec![f64::NAN; width];
                for pt in imp.points {
                    out[(pt.event_time - w0) as usize] = pt.estimate;
                }
                Ok(out)
            };
            let boot = cluster_bootstrap(estimator, panel, scheme, spec)?;
            let rows = boot
                .replicates
                .iter()
                .map(|rep| points.iter().map(|p| rep[(p.0 - w0) as usize]).collect())
                .collect();
            (Uncertainty::Replicates(rows), boot.n_failed)
        }
    };
    let event_study = EventStudyResult::from_points(points, uncertainty)?;
    Ok(IfectResult {
        selection,
        model,
        imputation,
        event_study,
        bootstrap_failed,
    })
}
