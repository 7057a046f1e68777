//! Run configuration file. Defaults, then the file, then command-line flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use causal_panel::did::DidConfig;
use causal_panel::eventstudy::{default_windows, MissingCellPolicy, Window};
use causal_panel::ifect::IfectConfig;
use causal_panel::inference::BootstrapSpec;
use causal_panel::policy::DateRule;
use causal_panel::reconstruct::ReconstructionConfig;
use causal_panel::simulate::{BenchEstimator, DgpSpec};
use causal_panel::Year;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Did,
    Ifect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClusterBy {
    #[default]
    Unit,
    Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DidInference {
    #[default]
    Influence,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub survey: Option<PathBuf>,
    pub policies: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Paths {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for p in [&self.survey, &self.policies, &self.panel, &self.spec, &self.out].into_iter().flatten() {
            if !seen.insert(p) {
                bail!("path {} is used for more than one role", p.display());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub date_rule: DateRule,
    /// Years to code; defaults to the reconstruction window.
    pub years: Option<(Year, Year)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub method: Method,
    pub continuous_outcome: bool,
    /// Row predicates such as `gender=1` or `age>=25`, all of which must hold.
    pub filters: Vec<String>,
    pub cluster_by: ClusterBy,
    /// DiD standard errors from influence functions or the cluster bootstrap.
    pub did_inference: DidInference,
    /// IFEct point estimates only, skipping the bootstrap.
    pub skip_ifect_bootstrap: bool,
    pub on_missing: MissingCellPolicy,
    pub windows: Vec<Window>,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            method: Method::Did,
            continuous_outcome: false,
            filters: Vec::new(),
            cluster_by: ClusterBy::Unit,
            did_inference: DidInference::Influence,
            skip_ifect_bootstrap: false,
            on_missing: MissingCellPolicy::DropEventTime,
            windows: default_windows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedSpec {
    pub label: String,
    #[serde(default)]
    pub spec: DgpSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkPlan {
    pub reps: usize,
    pub specs: Vec<NamedSpec>,
    pub estimators: Vec<BenchEstimator>,
}

impl Default for BenchmarkPlan {
    fn default() -> Self {
        Self {
            reps: 200,
            specs: vec![NamedSpec {
                label: "default".into(),
                spec: DgpSpec::default(),
            }],
            estimators: vec![BenchEstimator::Did {
                config: DidConfig::default(),
            }],
        }
    }
}

/// One specification of a sweep. `overrides` is merged over the base
/// configuration table by table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepColumn {
    pub label: String,
    #[serde(default)]
    pub overrides: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; when set it replaces the bootstrap, IFEct and simulation seeds.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub reconstruct: ReconstructionConfig,
    pub composition: bool,
    pub policy: PolicySection,
    pub estimate: EstimateSection,
    pub did: DidConfig,
    pub ifect: IfectConfig,
    pub bootstrap: BootstrapSpec,
    pub simulate: DgpSpec,
    pub benchmark: BenchmarkPlan,
    pub sweep: Vec<SweepColumn>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Pushes the master seed into every seeded section.
    pub fn resolve_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.bootstrap.seed = seed;
            self.ifect.seed = seed;
            self.simulate.seed = seed;
            for s in &mut self.benchmark.specs {
                s.spec.seed = seed;
            }
        }
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.bootstrap.seed)
    }

    /// This configuration with `overrides` merged in.
    pub fn with_overrides(&self, overrides: &toml::Table) -> Result<Self> {
        // via text: integer map keys (cohort years) only serialize as strings there
        let mut base: toml::Table = toml::from_str(&self.to_toml()?)?;
        merge(&mut base, overrides);
        Self::from_toml(&toml::to_string(&base)?)
    }
}

fn merge(base: &mut toml::Table, overrides: &toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// DGP spec from a TOML or JSON file, chosen by extension.
pub fn load_spec(path: &Path) -> Result<DgpSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use causal_panel::simulate::{Attrition, TrueEffect};

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig {
            seed: Some(7),
            ..Default::default()
        };
        cfg.did.covariates = vec!["age".into(), "sales_ban".into()];
        cfg.simulate.true_effect = TrueEffect::Table {
            values: [(0, -0.1), (3, 0.2)].into_iter().collect(),
        };
        cfg.simulate.attrition = Attrition::RetrospectiveWaves {
            waves: vec![1997, 2017],
            min_age: 15,
            max_age: 80,
            history_cap: Some(10),
        };
        cfg.sweep.push(SweepColumn {
            label: "never".into(),
            overrides: toml::from_str("did = { control_group = \"never_treated\" }").unwrap(),
        });
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides_merge_tables() {
        let mut base = RunConfig::default();
        base.simulate.cohort_shares = [(2000, 0.5), (2005, 0.3)].into_iter().collect();
        base.did.covariates = vec!["age".into()];
        let o: toml::Table = toml::from_str("[did]\ncontrol_group = \"never_treated\"").unwrap();
        let merged = base.with_overrides(&o).unwrap();
        assert_eq!(merged.did.covariates, vec!["age".to_string()]);
        assert_eq!(merged.did.control_group, causal_panel::did::ControlGroup::NeverTreated);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
    }

    #[test]
    fn duplicate_paths_are_rejected() {
        let p = Paths {
            survey: Some("a.csv".into()),
            panel: Some("a.csv".into()),
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
