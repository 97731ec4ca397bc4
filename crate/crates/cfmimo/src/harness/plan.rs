//! Expands an experiment into the concrete (network, hardware) cases it runs.
//! All cases of one experiment share the master seed, so layouts, fading and
//! noise are paired across cases wherever the dimensions agree.

use super::config::{ExperimentId, RunConfig};
use crate::combining::CombinerVariant;
use crate::geometry::{dbm_to_w, NetworkConfig};
use crate::impairments::{HardwareProfile, LoMode};

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    /// Short tag such as `SLO`, `tx_only` or `rho=10`.
    pub label: String,
    /// Swept quantity at this case, if the experiment sweeps one.
    pub sweep_value: Option<f64>,
    pub network: NetworkConfig,
    pub profile: HardwareProfile,
    pub variants: Vec<CombinerVariant>,
}

fn no_pn(p: HardwareProfile) -> HardwareProfile {
    HardwareProfile { sigma2_phi: 0.0, sigma2_varphi: 0.0, ..p }
}

fn no_additive(p: HardwareProfile) -> HardwareProfile {
    HardwareProfile { kappa_t: 0.0, kappa_r: 0.0, ..p }
}

fn fmt_value(x: f64) -> String {
    format!("{x}")
}

pub fn plan(cfg: &RunConfig) -> Vec<Case> {
    let net = &cfg.network;
    let base = cfg.hardware.resolve(net.noise_variance);
    let exp = &cfg.experiment;
    let variants = exp.variants_or_default();
    let sweep = exp.sweep_or_default();
    let case = |label: String, value: Option<f64>, network: NetworkConfig, profile: HardwareProfile| Case {
        label,
        sweep_value: value,
        network,
        profile,
        variants: variants.clone(),
    };
    let with_m = |m: f64| NetworkConfig { num_aps: m as usize, ..net.clone() };
    match exp.id {
        ExperimentId::Fig1PowerSweep => sweep
            .iter()
            .map(|&dbm| {
                let w = dbm_to_w(dbm);
                let n = NetworkConfig { ue_power: w, pilot_power: w, ..net.clone() };
                case(format!("rho={}", fmt_value(dbm)), Some(dbm), n, base)
            })
            .collect(),
        ExperimentId::Fig2ChannelUseProfile => {
            let pn = no_additive(base);
            vec![
                case("SLO".into(), None, net.clone(), HardwareProfile { lo_mode: LoMode::Slo, ..pn }),
                case("CLO".into(), None, net.clone(), HardwareProfile { lo_mode: LoMode::Clo, ..pn }),
                case("no_pn".into(), None, net.clone(), no_pn(pn)),
            ]
        }
        ExperimentId::Fig3KappaSweep => sweep
            .iter()
            .map(|&k| {
                let p = HardwareProfile { kappa_t: k, kappa_r: k + 0.03, ..no_pn(base) };
                case(format!("kappa={}", fmt_value(k)), Some(k), net.clone(), p)
            })
            .collect(),
        ExperimentId::Fig4ApSweepPn => sweep
            .iter()
            .flat_map(|&m| {
                let pn = no_additive(base);
                [LoMode::Slo, LoMode::Clo].map(|lo| {
                    case(format!("M={}/{}", fmt_value(m), lo.as_str()), Some(m), with_m(m), HardwareProfile { lo_mode: lo, ..pn })
                })
            })
            .collect(),
        ExperimentId::Fig5ApSweepAdditive => sweep
            .iter()
            .flat_map(|&m| {
                let p = no_pn(base);
                [
                    ("no_distortion", 0.0, 0.0),
                    ("tx_only", p.kappa_t, 0.0),
                    ("rx_only", 0.0, p.kappa_r),
                    ("tx_rx", p.kappa_t, p.kappa_r),
                ]
                .map(|(tag, kt, kr)| {
                    case(format!("M={}/{tag}", fmt_value(m)), Some(m), with_m(m), HardwareProfile { kappa_t: kt, kappa_r: kr, ..p })
                })
            })
            .collect(),
        ExperimentId::Validate => Vec::new(),
    }
}

/// Rough peak memory of one case in MiB: covariances, per-n statistics,
/// estimator inverses and one coherence block per worker.
pub fn estimate_memory_mb(case: &Case, grid_len: usize, workers: usize) -> f64 {
    let n = &case.network;
    let (m, k, l) = (n.num_aps as f64, n.num_ues as f64, n.antennas_per_ap as f64);
    let (tau, tau_c) = (n.pilot_length as f64, n.coherence_length as f64);
    let c = 16.0;
    let stats = m * k * l * l * (4.0 + 3.0 * grid_len as f64);
    let estimator = m * (tau * l).powi(2) * 2.0;
    let per_worker = tau_c * m * k * l + (m * l).powi(2) * 2.0 + grid_len as f64 * m * k * l;
    c * (stats + estimator + workers as f64 * per_worker) / (1024.0 * 1024.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::HardwareSpec;

    #[test]
    fn fig3_offsets_receive_kappa() {
        let cfg = RunConfig::desk(ExperimentId::Fig3KappaSweep);
        let cases = plan(&cfg);
        assert_eq!(cases.len(), 6);
        for c in &cases {
            let k = c.sweep_value.unwrap();
            assert_eq!(c.profile.kappa_t, k);
            assert!((c.profile.kappa_r - k - 0.03).abs() < 1e-15);
            assert_eq!(c.profile.sigma2_phi, 0.0);
        }
    }

    #[test]
    fn fig4_pairs_lo_modes_and_drops_distortion() {
        let cfg = RunConfig::desk(ExperimentId::Fig4ApSweepPn);
        let cases = plan(&cfg);
        assert_eq!(cases.len(), 6);
        assert_eq!(cases[0].label, "M=20/SLO");
        assert_eq!(cases[1].label, "M=20/CLO");
        assert!(cases.iter().all(|c| c.profile.kappa_t == 0.0 && c.profile.sigma2_phi > 0.0));
        assert_eq!(cases[5].network.num_aps, 80);
    }

    #[test]
    fn fig5_isolates_each_distortion() {
        let cfg = RunConfig::desk(ExperimentId::Fig5ApSweepAdditive);
        let cases = plan(&cfg);
        assert_eq!(cases.len(), 12);
        let tx = &cases[1];
        let rx = &cases[2];
        assert!(tx.profile.kappa_t > 0.0 && tx.profile.kappa_r == 0.0);
        assert!(rx.profile.kappa_t == 0.0 && rx.profile.kappa_r > 0.0);
        assert!(cases.iter().all(|c| c.profile.sigma2_varphi == 0.0));
    }

    #[test]
    fn fig1_sets_both_powers() {
        let mut cfg = RunConfig::desk(ExperimentId::Fig1PowerSweep);
        cfg.hardware = HardwareSpec::Ideal;
        let cases = plan(&cfg);
        assert_eq!(cases[0].label, "rho=-10");
        assert!((cases[3].network.ue_power - 0.1).abs() < 1e-15);
        assert_eq!(cases[3].network.pilot_power, cases[3].network.ue_power);
    }

    #[test]
    fn memory_grows_with_scale() {
        let cfg = RunConfig::desk(ExperimentId::Fig4ApSweepPn);
        let cases = plan(&cfg);
        let small = estimate_memory_mb(&cases[0], 3, 1);
        let big = estimate_memory_mb(&cases[5], 3, 1);
        assert!(small > 0.0 && big > 3.0 * small);
    }
}
