//! Fast invariant suite behind the `validate` experiment.

use crate::channel::{sample_block_for_trial, synthesize_pilot_observation, PilotBook};
use crate::combining::{CombinerVariant, CombiningInputs};
use crate::deterministic::{ue_de, DeSettings};
use crate::estimation::{EstimationModel, EstimationScope};
use crate::evaluation::{evaluate, EvalSettings, Scenario};
use crate::geometry::{NetworkConfig, NetworkRealization};
use crate::impairments::{
    atn_variance, kappa_from_bits, pn_increment_variance, sample_phase_trajectories, HardwareComponents,
    HardwareProfile, LoMode,
};
use crate::linalg::min_eigenvalue;
use crate::rng::{stream_rng, Stream};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.to_string(), passed, detail }
}

/// True when `x` rounds or truncates to `printed` at `decimals` places.
fn matches_printed(x: f64, printed: f64, decimals: i32) -> bool {
    let s = 10f64.powi(decimals);
    (x * s).round() == (printed * s).round() || (x * s).floor() == (printed * s).round()
}

fn small_net(seed: u64) -> NetworkRealization {
    let cfg = NetworkConfig { pilot_length: 3, coherence_length: 30, area_side: 300.0, ..NetworkConfig::desk(6, 5) };
    NetworkRealization::generate(&cfg, seed).expect("small instance")
}

fn impaired(s2: f64) -> HardwareProfile {
    HardwareProfile { sigma2_phi: 1e-3, sigma2_varphi: 1e-3, kappa_t: 0.126, kappa_r: 0.126, xi: 1.6 * s2, lo_mode: LoMode::Slo }
}

fn parameters() -> Vec<Check> {
    let mut out = Vec::new();
    let worst = (1..=8)
        .map(|b| {
            let e = 2f64.powi(-(b as i32));
            (kappa_from_bits(b) - e / (1.0 - e * e).sqrt()).abs()
        })
        .fold(0.0, f64::max);
    let printed = [(2, 0.258), (3, 0.126), (4, 0.062)].iter().all(|&(b, v)| matches_printed(kappa_from_bits(b), v, 3));
    out.push(check("quantizer_kappa", worst < 1e-15 && printed, format!("max formula gap {worst:e}")));
    let pn = pn_increment_variance(2e9, 1e-7, 1e-17);
    let pn_ref = 4.0 * PI * PI * 2e9 * 2e9 * 1e-17 * 1e-7;
    out.push(check(
        "phase_noise_variance",
        (pn - pn_ref).abs() < 1e-12 * pn_ref && matches_printed(pn * 1e4, 1.58, 2),
        format!("{pn:e}"),
    ));
    let ratio = atn_variance(2.0, 3, 1.0);
    let ratio_ref = 10f64.powf(0.2) / (1.0 - 2f64.powi(-6));
    out.push(check(
        "atn_ratio",
        (ratio - ratio_ref).abs() < 1e-12 && matches_printed(ratio, 1.6, 1),
        format!("xi/sigma2 = {ratio}"),
    ));
    out
}

fn wiener(seed: u64) -> Check {
    let p = HardwareProfile::from_components(&HardwareComponents::default(), 1.0);
    let chains = 20_000;
    let lags = [1usize, 50, 180];
    let mut acc = [Complex64::new(0.0, 0.0); 3];
    let mut rng = stream_rng(seed, Stream::Aux(0));
    for _ in 0..chains {
        let t = sample_phase_trajectories(&p, 1, 1, 1, 181, &mut rng);
        for (a, &d) in acc.iter_mut().zip(&lags) {
            *a += Complex64::from_polar(1.0, -(t.theta(0, 0, 0, 1 + d) - t.theta(0, 0, 0, 1)));
        }
    }
    let worst = acc
        .iter()
        .zip(&lags)
        .map(|(a, &d)| (a / chains as f64 - p.drift_attenuation(d)).norm())
        .fold(0.0, f64::max);
    check("wiener_attenuation", worst < 0.02, format!("max deviation {worst:.4} over {chains} chains"))
}

fn estimator(seed: u64) -> Check {
    let net = small_net(seed);
    let s2 = net.config.noise_variance;
    let p = impaired(s2);
    let pb = PilotBook::new(net.config.pilot_length, net.config.pilot_power);
    let model = EstimationModel::build(&net, &p, &pb);
    let mut worst = f64::INFINITY;
    for n in [1, net.config.pilot_length + 1, net.config.coherence_length] {
        let cov = model.covariances(n);
        for m in 0..net.config.num_aps {
            for k in 0..net.config.num_ues {
                let r = &cov.r_eff[m][k];
                let gap = min_eigenvalue(&(r - &cov.phi[m][k])) / r.norm().max(f64::MIN_POSITIVE);
                worst = worst.min(gap);
            }
        }
    }
    check("estimate_below_channel", worst > -1e-12, format!("min scaled eigenvalue of R - Phi {worst:e}"))
}

fn collapse(seed: u64) -> Check {
    let base = small_net(seed);
    let s2 = base.config.noise_variance;
    let p = HardwareProfile::ideal(s2);
    let mut worst: f64 = 0.0;
    for (net, pairs) in [
        (base.clone(), vec![(CombinerVariant::HaPmmse, CombinerVariant::HuPmmse)]),
        (base.with_full_service(), vec![(CombinerVariant::HuPmmse, CombinerVariant::HuMmse)]),
    ] {
        let pb = PilotBook::new(net.config.pilot_length, net.config.pilot_power);
        let model = EstimationModel::build(&net, &p, &pb);
        let block = sample_block_for_trial(&net, &p, seed, 0);
        let mut rng = stream_rng(seed, Stream::PilotNoise(0));
        let psi = synthesize_pilot_observation(&net, &block, &pb, &p, &mut rng);
        let n = net.config.pilot_length + 2;
        let cov = model.covariances(n);
        let est = model.estimate_all(&model.whiten(&psi), n, EstimationScope::Full);
        let truth = block.snapshot(n);
        let inputs = CombiningInputs { net: &net, profile: &p, cov: &cov, est: &est, truth: Some(&truth) };
        for (a, b) in pairs {
            for k in 0..net.config.num_ues {
                let va = inputs.build(a, k).v;
                let vb = inputs.build(b, k).v;
                worst = worst.max((&va - &vb).norm() / va.norm().max(f64::MIN_POSITIVE));
            }
        }
    }
    check("ideal_hardware_collapse", worst < 1e-10, format!("max relative gap {worst:e}"))
}

fn monte_carlo(seed: u64) -> Vec<Check> {
    let net = small_net(seed);
    let s2 = net.config.noise_variance;
    let scn = Scenario::new(net, impaired(s2));
    let variants = vec![CombinerVariant::HaPmmse, CombinerVariant::HuPmmse, CombinerVariant::GenieMmse];
    let set = EvalSettings::new(&scn, 40, seed, 9, variants);
    let (a, b) = match (evaluate(&scn, &set), evaluate(&scn, &set)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return vec![check("evaluation_runs", false, e.to_string())],
    };
    let mut out = Vec::new();
    let same = a.points == b.points && a.ue_se == b.ue_se;
    out.push(check("reproducible_evaluation", same, format!("{} points", a.points.len())));
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    for p in a.points.iter().filter(|p| !p.variant.is_genie()) {
        let d = p.decompose();
        let sum = d.channel_variance + d.multiuser + d.transmit_distortion + d.receive_distortion + d.amplified_noise;
        worst = worst.max((sum - p.interference()).abs() / p.interference().max(f64::MIN_POSITIVE));
        if [d.channel_variance, d.multiuser, d.transmit_distortion, d.receive_distortion, d.amplified_noise]
            .iter()
            .any(|&x| x < 0.0)
        {
            negative += 1;
        }
    }
    out.push(check("interference_budget", worst < 1e-12 && negative == 0, format!("sum gap {worst:e}, {negative} negative")));
    let violations = (0..scn.net.config.num_ues)
        .filter(|&k| {
            let up = a.se(CombinerVariant::GenieMmse, k).map_or(0.0, |s| s.se);
            [CombinerVariant::HaPmmse, CombinerVariant::HuPmmse]
                .iter()
                .any(|&v| a.se(v, k).map_or(0.0, |s| s.se) > up)
        })
        .count();
    out.push(check("bound_ordering", violations == 0, format!("{violations} UEs with lower > upper")));
    out
}

fn deterministic(seed: u64) -> Check {
    let net = small_net(seed);
    let s2 = net.config.noise_variance;
    let scn = Scenario::new(net, impaired(s2));
    let cov = scn.model.covariances(scn.net.config.pilot_length + 5);
    let mut worst: f64 = 0.0;
    let mut radius: f64 = 0.0;
    for k in 0..scn.net.config.num_ues {
        match ue_de(&scn, &cov, k, &DeSettings::default()) {
            Ok(sol) => {
                let t = &sol.traces;
                worst = worst.max((t.e_prime - t.e_prime_check).abs() / t.e_prime.abs().max(f64::MIN_POSITIVE));
                radius = radius.max(sol.tp.spectral_radius);
            }
            Err(e) => return check("deterministic_equivalent", false, format!("UE {k}: {e}")),
        }
    }
    check(
        "deterministic_equivalent",
        worst < 1e-6 && radius < 1.0,
        format!("noise-trace identity gap {worst:e}, spectral radius {radius:.3}"),
    )
}

/// Runs every check; none of them takes more than a few seconds.
pub fn validation_suite(seed: u64) -> Vec<Check> {
    let mut out = parameters();
    out.push(wiener(seed));
    out.push(estimator(seed));
    out.push(collapse(seed));
    out.extend(monte_carlo(seed));
    out.push(deterministic(seed));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_precision() {
        assert!(matches_printed(0.062622, 0.062, 3));
        assert!(matches_printed(0.12599, 0.126, 3));
        assert!(!matches_printed(0.0641, 0.062, 3));
    }

    #[test]
    fn suite_passes() {
        let checks = validation_suite(3);
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        assert!(checks.len() >= 10);
    }
}
