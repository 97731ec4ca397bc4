//! JSON run configuration: `network`, `hardware` and `experiment` sections.

use super::HarnessError;
use crate::combining::CombinerVariant;
use crate::geometry::NetworkConfig;
use crate::impairments::{HardwareComponents, HardwareProfile};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Fig1PowerSweep,
    Fig2ChannelUseProfile,
    Fig3KappaSweep,
    Fig4ApSweepPn,
    Fig5ApSweepAdditive,
    Validate,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::Fig1PowerSweep,
        ExperimentId::Fig2ChannelUseProfile,
        ExperimentId::Fig3KappaSweep,
        ExperimentId::Fig4ApSweepPn,
        ExperimentId::Fig5ApSweepAdditive,
        ExperimentId::Validate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Fig1PowerSweep => "fig1_power_sweep",
            ExperimentId::Fig2ChannelUseProfile => "fig2_channel_use_profile",
            ExperimentId::Fig3KappaSweep => "fig3_kappa_sweep",
            ExperimentId::Fig4ApSweepPn => "fig4_ap_sweep_pn",
            ExperimentId::Fig5ApSweepAdditive => "fig5_ap_sweep_additive",
            ExperimentId::Validate => "validate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }

    /// Sweep used when the config leaves `sweep` empty.
    pub fn default_sweep(self) -> Vec<f64> {
        match self {
            ExperimentId::Fig1PowerSweep => vec![-10.0, 0.0, 10.0, 20.0, 30.0],
            ExperimentId::Fig3KappaSweep => vec![0.0, 0.03, 0.06, 0.09, 0.12, 0.15],
            ExperimentId::Fig4ApSweepPn | ExperimentId::Fig5ApSweepAdditive => vec![100.0, 200.0, 300.0, 400.0],
            ExperimentId::Fig2ChannelUseProfile | ExperimentId::Validate => Vec::new(),
        }
    }

    pub fn default_variants(self) -> Vec<CombinerVariant> {
        use CombinerVariant::*;
        match self {
            ExperimentId::Fig1PowerSweep => vec![HaMmse, HaPmmse, HuMmse, HuPmmse, GenieMmse, GeniePmmse],
            ExperimentId::Fig2ChannelUseProfile | ExperimentId::Fig4ApSweepPn => vec![HaMmse, HaPmmse, HuMmse, HuPmmse],
            ExperimentId::Fig3KappaSweep => vec![HaMmse, HaPmmse, HuMmse, HuPmmse, Mrc, GenieMmse],
            ExperimentId::Fig5ApSweepAdditive => vec![HaPmmse],
            ExperimentId::Validate => Vec::new(),
        }
    }
}

/// Hardware either as raw profile values or derived from component specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HardwareSpec {
    Ideal,
    Profile(HardwareProfile),
    Components(HardwareComponents),
}

impl Default for HardwareSpec {
    fn default() -> Self {
        HardwareSpec::Components(HardwareComponents::default())
    }
}

impl HardwareSpec {
    pub fn resolve(&self, sigma2: f64) -> HardwareProfile {
        match self {
            HardwareSpec::Ideal => HardwareProfile::ideal(sigma2),
            HardwareSpec::Profile(p) => *p,
            HardwareSpec::Components(c) => HardwareProfile::from_components(c, sigma2),
        }
    }
}

fn default_trials() -> usize {
    1000
}
fn default_seed() -> u64 {
    1
}
fn default_stride() -> usize {
    10
}
fn default_cap() -> f64 {
    8192.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    /// ρ in dBm (fig1), κ̄ (fig3) or M (fig4, fig5). Empty picks the default.
    #[serde(default)]
    pub sweep: Vec<f64>,
    #[serde(default)]
    pub variants: Vec<CombinerVariant>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    /// Evaluate every `grid_stride`-th data channel use plus the anchors.
    #[serde(default = "default_stride")]
    pub grid_stride: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_cap")]
    pub memory_cap_mb: f64,
}

impl ExperimentSpec {
    pub fn new(id: ExperimentId) -> Self {
        ExperimentSpec {
            id,
            sweep: Vec::new(),
            variants: Vec::new(),
            trials: default_trials(),
            master_seed: default_seed(),
            grid_stride: default_stride(),
            output: None,
            memory_cap_mb: default_cap(),
        }
    }

    pub fn sweep_or_default(&self) -> Vec<f64> {
        if self.sweep.is_empty() {
            self.id.default_sweep()
        } else {
            self.sweep.clone()
        }
    }

    pub fn variants_or_default(&self) -> Vec<CombinerVariant> {
        if self.variants.is_empty() {
            self.id.default_variants()
        } else {
            self.variants.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub hardware: HardwareSpec,
    pub experiment: ExperimentSpec,
}

impl RunConfig {
    pub fn new(network: NetworkConfig, hardware: HardwareSpec, experiment: ExperimentSpec) -> Self {
        RunConfig { network, hardware, experiment }
    }

    /// Desk-scale preset for an experiment: L = 2, K = 10, τ = τ_c / 10 and
    /// an M sweep of {20, 40, 80} where M is swept.
    pub fn desk(id: ExperimentId) -> Self {
        let mut exp = ExperimentSpec::new(id);
        if matches!(id, ExperimentId::Fig4ApSweepPn | ExperimentId::Fig5ApSweepAdditive) {
            exp.sweep = vec![20.0, 40.0, 80.0];
        }
        RunConfig::new(NetworkConfig::desk(40, 10), HardwareSpec::default(), exp)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        self.network.validate().map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        let profile = self.hardware.resolve(self.network.noise_variance);
        profile.validate(self.network.noise_variance).map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
        let e = &self.experiment;
        if e.id != ExperimentId::Validate && e.trials == 0 {
            return bad("experiment.trials must be >= 1".into());
        }
        if e.grid_stride == 0 {
            return bad("experiment.grid_stride must be >= 1".into());
        }
        if !(e.memory_cap_mb > 0.0) {
            return bad("experiment.memory_cap_mb must be positive".into());
        }
        let sweep = e.sweep_or_default();
        if e.id != ExperimentId::Fig2ChannelUseProfile && e.id != ExperimentId::Validate && sweep.is_empty() {
            return bad("experiment.sweep is empty".into());
        }
        if sweep.iter().any(|x| !x.is_finite()) {
            return bad("experiment.sweep has a non-finite entry".into());
        }
        match e.id {
            ExperimentId::Fig4ApSweepPn | ExperimentId::Fig5ApSweepAdditive => {
                if sweep.iter().any(|&m| m < 1.0 || m.fract() != 0.0) {
                    return bad("experiment.sweep must list positive integer AP counts".into());
                }
            }
            ExperimentId::Fig3KappaSweep => {
                if sweep.iter().any(|&k| !(0.0..0.97).contains(&k)) {
                    return bad("experiment.sweep must hold kappa values in [0, 0.97)".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses a config document; errors carry the offending key path.
pub fn parse_config(text: &str) -> Result<RunConfig, HarnessError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| HarnessError::ConfigKey {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_paper_defaults() {
        let cfg = parse_config(r#"{"experiment": {"id": "fig3_kappa_sweep"}}"#).unwrap();
        assert_eq!(cfg.network.num_aps, 200);
        assert_eq!(cfg.network.pilot_length, 20);
        assert_eq!(cfg.experiment.trials, 1000);
        assert_eq!(cfg.experiment.sweep_or_default().len(), 6);
        assert_eq!(cfg.hardware, HardwareSpec::default());
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = parse_config(r#"{"network": {"num_aps": 4, "num_uez": 3}, "experiment": {"id": "validate"}}"#).unwrap_err();
        match err {
            HarnessError::ConfigKey { path, .. } => assert_eq!(path, "network.num_uez"),
            e => panic!("unexpected {e:?}"),
        }
        let err = parse_config(r#"{"experiment": {"id": "fig1_power_sweep", "trials": "many"}}"#).unwrap_err();
        match err {
            HarnessError::ConfigKey { path, .. } => assert_eq!(path, "experiment.trials"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn hardware_forms() {
        let raw = r#"{"hardware": {"profile": {"sigma2_phi": 0.0, "sigma2_varphi": 0.0, "kappa_t": 0.1,
            "kappa_r": 0.1, "xi": 1e-13, "lo_mode": "CLO"}}, "experiment": {"id": "validate"}}"#;
        let cfg = parse_config(raw).unwrap();
        let p = cfg.hardware.resolve(cfg.network.noise_variance);
        assert_eq!(p.kappa_t, 0.1);
        let comp = r#"{"hardware": {"components": {"bits": 4, "noise_figure_db": 2.0, "carrier_freq": 2e9,
            "symbol_time": 1e-7, "oscillator_constant": 1e-17, "lo_mode": "SLO"}}, "experiment": {"id": "validate"}}"#;
        assert!(parse_config(comp).is_ok());
        assert!(parse_config(r#"{"hardware": "ideal", "experiment": {"id": "validate"}}"#).is_ok());
    }

    #[test]
    fn semantic_errors() {
        assert!(matches!(
            parse_config(r#"{"experiment": {"id": "fig4_ap_sweep_pn", "sweep": [10.5]}}"#),
            Err(HarnessError::InvalidConfig(_))
        ));
        assert!(matches!(
            parse_config(r#"{"experiment": {"id": "fig1_power_sweep", "trials": 0}}"#),
            Err(HarnessError::InvalidConfig(_))
        ));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::desk(ExperimentId::Fig1PowerSweep);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.experiment.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn experiment_names_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(ExperimentId::parse(id.as_str()), Some(id));
            let js = serde_json::to_string(&id).unwrap();
            assert_eq!(js, format!("\"{}\"", id.as_str()));
        }
    }
}
