//! JSON run configuration. Physical quantities carry unit suffixes in their keys.

use std::path::Path;

use anyhow::{bail, Context, Result};
use qpv_core::geometry::TimingGeometry;
use qpv_core::simulator::{AdversaryModel, HonestProverModel};
use qpv_core::trialdata::JointSettingsDistribution;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Source model for `simulate`. Exactly one of the two must be set.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub honest: Option<HonestProverModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversaryModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<JointSettingsDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minutes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials_per_file: Option<usize>,
    #[serde(default)]
    pub detector_error_files: Vec<usize>,
}

pub enum Source {
    Honest(HonestProverModel),
    Adversary(AdversaryModel),
}

impl SimulateConfig {
    pub fn source(&self) -> Result<Source> {
        match (&self.honest, &self.adversary) {
            (Some(_), Some(_)) => bail!("config sets both `honest` and `adversary`"),
            (Some(h), None) => Ok(Source::Honest(h.clone())),
            (None, Some(a)) => Ok(Source::Adversary(a.clone())),
            (None, None) => Ok(Source::Honest(HonestProverModel::reference())),
        }
    }
}

/// Analysis settings shared by `analyze`, `build-tf` and `plan`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisFileConfig {
    #[serde(default = "JointSettingsDistribution::uniform")]
    pub nu: JointSettingsDistribution,
    #[serde(default = "default_d")]
    pub mismatch_d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trials: Option<u64>,
    #[serde(default = "default_rate")]
    pub trial_rate_hz: f64,
}

fn default_d() -> f64 {
    qpv_core::estimation::DEFAULT_MISMATCH
}

fn default_rate() -> f64 {
    qpv_core::protocol::DEFAULT_TRIAL_RATE
}

impl Default for AnalysisFileConfig {
    fn default() -> Self {
        Self {
            nu: JointSettingsDistribution::uniform(),
            mismatch_d: default_d(),
            n_trials: None,
            trial_rate_hz: default_rate(),
        }
    }
}

pub fn timing_or_reference(path: Option<&Path>) -> Result<TimingGeometry> {
    let tg = match path {
        Some(p) => load_json(p)?,
        None => TimingGeometry::reference(),
    };
    tg.validate()?;
    Ok(tg)
}
