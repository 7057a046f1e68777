//! Cluster-aware uncertainty: influence-function standard errors and the
//! nonparametric cluster bootstrap.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::panel::{CohortPanel, UnitIx};

pub const Z_975: f64 = 1.959_963_984_540_054;

/// Maximum share of failed bootstrap replicates before a run is aborted.
pub const MAX_FAILED_SHARE: f64 = 0.05;

/// Assignment of panel units to clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterScheme {
    cluster_of: Vec<u32>,
    n_clusters: usize,
}

impl ClusterScheme {
    /// Every unit is its own cluster.
    pub fn by_unit(n_units: usize) -> Self {
        Self {
            cluster_of: (0..n_units as u32).collect(),
            n_clusters: n_units,
        }
    }

    /// Clusters from a unit id → cluster label map covering every unit.
    pub fn from_labels(panel: &CohortPanel, labels: &HashMap<String, String>) -> Result<Self> {
        let mut ids: HashMap<&str, u32> = HashMap::new();
        let mut sorted: Vec<&str> = labels.values().map(String::as_str).collect();
        sorted.sort_unstable();
        sorted.dedup();
        for (i, l) in sorted.iter().enumerate() {
            ids.insert(l, i as u32);
        }
        let cluster_of = panel
            .unit_ids()
            .iter()
            .map(|u| {
                labels
                    .get(u)
                    .map(|l| ids[l.as_str()])
                    .ok_or_else(|| Error::InvalidConfig(format!("unit {u} has no cluster")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut used = cluster_of.clone();
        used.sort_unstable();
        used.dedup();
        if used.len() != sorted.len() {
            // drop labels that name no unit so cluster ids stay dense
            let remap: HashMap<u32, u32> =
                used.iter().enumerate().map(|(i, &c)| (c, i as u32)).collect();
            let cluster_of = cluster_of.iter().map(|c| remap[c]).collect();
            return Ok(Self {
                cluster_of,
                n_clusters: used.len(),
            });
        }
        Ok(Self {
            cluster_of,
            n_clusters: sorted.len(),
        })
    }

    pub fn n_units(&self) -> usize {
        self.cluster_of.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn cluster_of(&self, unit: UnitIx) -> usize {
        self.cluster_of[unit] as usize
    }

    /// Units of each cluster, in unit order.
    pub fn members(&self) -> Vec<Vec<UnitIx>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (u, &c) in self.cluster_of.iter().enumerate() {
            out[c as usize].push(u);
        }
        out
    }
}

/// Point estimate with its normal-approximation inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceSummary {
    pub estimate: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub fn two_sided_p(estimate: f64, std_error: f64) -> f64 {
    if std_error > 0.0 && std_error.is_finite() {
        let z = (estimate / std_error).abs();
        2.0 * (1.0 - Normal::standard().cdf(z))
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn normal_summary(estimate: f64, std_error: f64) -> InferenceSummary {
    InferenceSummary {
        estimate,
        std_error,
        p_value: two_sided_p(estimate, std_error),
        ci_lo: estimate - Z_975 * std_error,
        ci_hi: estimate + Z_975 * std_error,
    }
}

/// Clustered standard error from per-unit influence values.
///
/// `influence[u]` is unit `u`'s contribution on the scale where
/// `estimate − θ ≈ (1/N) Σ_u influence[u]`, `N = influence.len()`. The
/// variance is `C/(C−1) · Σ_c S_c² / N²` with `S_c` the cluster sums.
pub fn influence_se(estimate: f64, influence: &[f64], scheme: &ClusterScheme) -> Result<InferenceSummary> {
    assert_eq!(influence.len(), scheme.n_units(), "influence vector does not match clusters");
    let c = scheme.n_clusters();
    if c < 2 {
        return Err(Error::SingleCluster);
    }
    let mut sums = vec![0.0; c];
    for (u, v) in influence.iter().enumerate() {
        sums[scheme.cluster_of(u)] += v;
    }
    let n = influence.len() as f64;
    let ss: f64 = sums.iter().map(|s| s * s).sum();
    let var = ss * (c as f64 / (c as f64 - 1.0)) / (n * n);
    Ok(normal_summary(estimate, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSpec {
    pub reps: usize,
    pub seed: u64,
    pub stratify_by_treatment: bool,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            reps: 200,
            seed: 1,
            stratify_by_treatment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Statistics on the original panel.
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Percentile interval bounds (2.5% / 97.5%).
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    /// Successful replicates, each a statistic vector; `NaN` marks a statistic
    /// the replicate could not produce.
    pub replicates: Vec<Vec<f64>>,
    pub n_failed: usize,
}

impl BootstrapResult {
    pub fn summary(&self, j: usize) -> InferenceSummary {
        InferenceSummary {
            estimate: self.estimates[j],
            std_error: self.std_errors[j],
            p_value: self.p_values[j],
            ci_lo: self.ci_lo[j],
            ci_hi: self.ci_hi[j],
        }
    }
}

/// Cluster strata: treated-ever clusters first, never-treated second. With
/// `stratify` false a single stratum holds every cluster.
pub fn cluster_strata(panel: &CohortPanel, scheme: &ClusterScheme, stratify: bool) -> Result<Vec<Vec<usize>>> {
    if scheme.n_clusters() == 0 {
        return Err(Error::EmptyStratum("all".into()));
    }
    if !stratify {
        return Ok(vec![(0..scheme.n_clusters()).collect()]);
    }
    let mut treated = vec![false; scheme.n_clusters()];
    for u in 0..panel.n_units() {
        if panel.first_treated(u).is_some() {
            treated[scheme.cluster_of(u)] = true;
        }
    }
    let (t, c): (Vec<usize>, Vec<usize>) = (0..scheme.n_clusters()).partition(|&k| treated[k]);
    if t.is_empty() {
        return Err(Error::EmptyStratum("treated".into()));
    }
    Ok(if c.is_empty() { vec![t] } else { vec![t, c] })
}

/// One stratified draw of clusters with replacement; each stratum keeps its size.
pub fn draw_clusters<R: Rng>(strata: &[Vec<usize>], rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(strata.iter().map(Vec::len).sum());
    for s in strata {
        for _ in 0..s.len() {
            out.push(s[rng.random_range(0..s.len())]);
        }
    }
    out
}

/// Independent random stream for replicate `rep` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Nonparametric cluster bootstrap of a vector-valued estimator.
pub fn cluster_bootstrap<F>(
    estimator: F,
    panel: &CohortPanel,
    scheme: &ClusterScheme,
    spec: &BootstrapSpec,
) -> Result<BootstrapResult>
where
    F: Fn(&CohortPanel) -> Result<Vec<f64>> + Sync,
{
    if spec.reps == 0 {
        return Err(Error::InvalidConfig("bootstrap needs at least one replicate".into()));
    }
    let estimates = estimator(panel)?;
    let strata = cluster_strata(panel, scheme, spec.stratify_by_treatment)?;
    let members = scheme.members();

    let outcomes: Vec<Option<Vec<f64>>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(spec.seed, rep as u64);
            let clusters = draw_clusters(&strata, &mut rng);
            let units: Vec<UnitIx> = clusters.iter().flat_map(|&c| members[c].iter().copied()).collect();
            let boot = panel.resample_units(&units).ok()?;
            match estimator(&boot) {
                Ok(v) if v.len() == estimates.len() => Some(v),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("bootstrap replicate {rep} failed: {e}");
                    None
                }
            }
        })
        .collect();

    let n_failed = outcomes.iter().filter(|o| o.is_none()).count();
    if n_failed as f64 > MAX_FAILED_SHARE * spec.reps as f64 {
        return Err(Error::TooManyFailedReplicates {
            failed: n_failed,
            reps: spec.reps,
        });
    }
    if n_failed > 0 {
        log::warn!("{n_failed} of {} bootstrap replicates failed", spec.reps);
    }
    let replicates: Vec<Vec<f64>> = outcomes.into_iter().flatten().collect();
    Ok(summarize_replicates(estimates, replicates, n_failed))
}

/// Bootstrap standard errors, percentile intervals and normal p-values.
pub fn summarize_replicates(estimates: Vec<f64>, replicates: Vec<Vec<f64>>, n_failed: usize) -> BootstrapResult {
    let m = estimates.len();
    let mut std_errors = vec![f64::NAN; m];
    let mut p_values = vec![f64::NAN; m];
    let mut ci_lo = vec![f64::NAN; m];
    let mut ci_hi = vec![f64::NAN; m];
    for j in 0..m {
        let mut draws: Vec<f64> = replicates.iter().map(|r| r[j]).filter(|v| v.is_finite()).collect();
        if draws.len() < 2 {
            continue;
        }
        let sd = sample_sd(&draws);
        std_errors[j] = sd;
        p_values[j] = two_sided_p(estimates[j], sd);
        draws.sort_by(f64::total_cmp);
        ci_lo[j] = quantile_sorted(&draws, 0.025);
        ci_hi[j] = quantile_sorted(&draws, 0.975);
    }
    BootstrapResult {
        estimates,
        std_errors,
        p_values,
        ci_lo,
        ci_hi,
        replicates,
        n_failed,
    }
}

pub fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
