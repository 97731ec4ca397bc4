//! Hardware impairments: Wiener phase noise, additive transmit/receive
//! distortion and amplified thermal noise.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HardwareError {
    #[error("invalid hardware profile: {0}")]
    Invalid(String),
}

/// Local-oscillator layout at the APs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoMode {
    /// One oscillator per antenna.
    #[serde(rename = "SLO")]
    Slo,
    /// One oscillator shared by all antennas of an AP.
    #[serde(rename = "CLO")]
    Clo,
}

impl LoMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LoMode::Slo => "SLO",
            LoMode::Clo => "CLO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    /// AP phase-noise increment variance per channel use (rad²).
    pub sigma2_phi: f64,
    /// UE phase-noise increment variance per channel use (rad²).
    pub sigma2_varphi: f64,
    pub kappa_t: f64,
    pub kappa_r: f64,
    /// Amplified thermal-noise variance (W).
    pub xi: f64,
    pub lo_mode: LoMode,
}

impl HardwareProfile {
    /// Ideal hardware at noise level `sigma2`.
    pub fn ideal(sigma2: f64) -> Self {
        HardwareProfile {
            sigma2_phi: 0.0,
            sigma2_varphi: 0.0,
            kappa_t: 0.0,
            kappa_r: 0.0,
            xi: sigma2,
            lo_mode: LoMode::Slo,
        }
    }

    /// Profile derived from ADC resolution, noise figure and oscillator quality.
    /// The same quantizer resolution sets both κ_t and κ_r.
    pub fn from_components(c: &HardwareComponents, sigma2: f64) -> Self {
        let pn = pn_increment_variance(c.carrier_freq, c.symbol_time, c.oscillator_constant);
        let kappa = kappa_from_bits(c.bits);
        HardwareProfile {
            sigma2_phi: pn,
            sigma2_varphi: pn,
            kappa_t: kappa,
            kappa_r: kappa,
            xi: atn_variance(c.noise_figure_db, c.bits, sigma2),
            lo_mode: c.lo_mode,
        }
    }

    /// Total drift variance σ_φ² + σ_ϕ² of one AP-UE phase process.
    pub fn total_pn_variance(&self) -> f64 {
        self.sigma2_phi + self.sigma2_varphi
    }

    /// `e^{-(σ_φ²+σ_ϕ²)|Δn|/2}`.
    pub fn drift_attenuation(&self, delta_n: usize) -> f64 {
        (-0.5 * self.total_pn_variance() * delta_n as f64).exp()
    }

    pub fn validate(&self, sigma2: f64) -> Result<(), HardwareError> {
        let bad = |m: String| Err(HardwareError::Invalid(m));
        if !(self.sigma2_phi >= 0.0 && self.sigma2_varphi >= 0.0) {
            return bad("phase-noise variances must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.kappa_t) || !(0.0..1.0).contains(&self.kappa_r) {
            return bad("kappa_t and kappa_r must lie in [0, 1)".into());
        }
        if !(self.xi >= sigma2 * (1.0 - 1e-12)) {
            return bad(format!("xi = {} is below the noise floor {}", self.xi, sigma2));
        }
        Ok(())
    }

    pub fn is_ideal(&self, sigma2: f64) -> bool {
        self.sigma2_phi == 0.0
            && self.sigma2_varphi == 0.0
            && self.kappa_t == 0.0
            && self.kappa_r == 0.0
            && self.xi == sigma2
    }
}

/// Physical inputs of the derived hardware profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareComponents {
    pub bits: u32,
    pub noise_figure_db: f64,
    pub carrier_freq: f64,
    pub symbol_time: f64,
    pub oscillator_constant: f64,
    pub lo_mode: LoMode,
}

impl Default for HardwareComponents {
    fn default() -> Self {
        HardwareComponents {
            bits: 3,
            noise_figure_db: 2.0,
            carrier_freq: 2e9,
            symbol_time: 1e-7,
            oscillator_constant: 1e-17,
            lo_mode: LoMode::Slo,
        }
    }
}

/// Wiener increment variance `4π² f_c² c T_s`.
pub fn pn_increment_variance(f_c: f64, t_s: f64, c: f64) -> f64 {
    4.0 * PI * PI * f_c * f_c * c * t_s
}

/// Quantization distortion factor `2^{-b} / sqrt(1 - 2^{-2b})`.
pub fn kappa_from_bits(bits: u32) -> f64 {
    let q = 2f64.powi(-(bits as i32));
    q / (1.0 - q * q).sqrt()
}

/// Amplified thermal noise `10^{NF/10} σ² / (1 - 2^{-2b})`.
pub fn atn_variance(noise_figure_db: f64, bits: u32, sigma2: f64) -> f64 {
    let q2 = 2f64.powi(-2 * bits as i32);
    10f64.powf(noise_figure_db / 10.0) * sigma2 / (1.0 - q2)
}

/// CN(0, var) draw. Always consumes two normals.
pub fn sample_cn<R: Rng + ?Sized>(var: f64, rng: &mut R) -> Complex64 {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    let s = (0.5 * var).sqrt();
    Complex64::new(a * s, b * s)
}

/// Phase rotations of all oscillators over one coherence block.
///
/// Storage is 0-based; accessors take the 1-based channel-use index `n`.
#[derive(Debug, Clone)]
pub struct PhaseTrajectory {
    pub lo_mode: LoMode,
    /// `ap[m][j][n]`, AP oscillator phase. Under CLO only `j = 0` is used.
    pub ap: Vec<Vec<Vec<f64>>>,
    /// `ue[k][n]`, UE oscillator phase.
    pub ue: Vec<Vec<f64>>,
    ap_rot: Vec<Vec<Vec<Complex64>>>,
    ue_rot: Vec<Vec<Complex64>>,
}

impl PhaseTrajectory {
    /// Total phase θ_{mk,n}^{(j)} at channel use `n` (1-based).
    pub fn theta(&self, m: usize, k: usize, j: usize, n: usize) -> f64 {
        self.ap[m][self.chain(j)][n - 1] + self.ue[k][n - 1]
    }

    /// `e^{jθ_{mk,n}^{(j)}}` at channel use `n` (1-based).
    #[inline]
    pub fn rotation(&self, m: usize, k: usize, j: usize, n: usize) -> Complex64 {
        self.ap_rot[m][self.chain(j)][n - 1] * self.ue_rot[k][n - 1]
    }

    #[inline]
    fn chain(&self, j: usize) -> usize {
        match self.lo_mode {
            LoMode::Slo => j,
            LoMode::Clo => 0,
        }
    }

    pub fn len(&self) -> usize {
        self.ue.first().map_or(0, |v| v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn wiener_chain<R: Rng + ?Sized>(var: f64, len: usize, rng: &mut R) -> Vec<f64> {
    let sd = var.sqrt();
    let mut phase = rng.random::<f64>() * 2.0 * PI;
    (0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            phase += sd * z;
            phase
        })
        .collect()
}

/// Draws one Wiener chain per AP antenna (L per AP, of which CLO uses the
/// first) and one per UE, each with a uniform initial phase.
pub fn sample_phase_trajectories<R: Rng + ?Sized>(
    profile: &HardwareProfile,
    m: usize,
    k: usize,
    l: usize,
    tau_c: usize,
    rng: &mut R,
) -> PhaseTrajectory {
    let ap: Vec<Vec<Vec<f64>>> = (0..m)
        .map(|_| (0..l).map(|_| wiener_chain(profile.sigma2_phi, tau_c, rng)).collect())
        .collect();
    let ue: Vec<Vec<f64>> = (0..k).map(|_| wiener_chain(profile.sigma2_varphi, tau_c, rng)).collect();
    let to_rot = |v: &Vec<f64>| v.iter().map(|&p| Complex64::from_polar(1.0, p)).collect::<Vec<_>>();
    let ap_rot = ap.iter().map(|chains| chains.iter().map(to_rot).collect()).collect();
    let ue_rot = ue.iter().map(to_rot).collect();
    PhaseTrajectory { lo_mode: profile.lo_mode, ap, ue, ap_rot, ue_rot }
}

/// Transmit distortion draw `δ_t ~ CN(0, κ_t² ρ)`.
pub fn sample_transmit_distortion<R: Rng + ?Sized>(kappa_t: f64, power: f64, rng: &mut R) -> Complex64 {
    sample_cn(kappa_t * kappa_t * power, rng)
}

/// Diagonal of the receive-distortion covariance at one AP:
/// `κ_r² Σ_i ρ_i |h_i^{(j)}|²`. `channels[i]` is UE i's L-vector at the AP.
pub fn receive_distortion_variances(kappa_r: f64, channels: &[&[Complex64]], powers: &[f64]) -> Vec<f64> {
    let l = channels.first().map_or(0, |h| h.len());
    let k2 = kappa_r * kappa_r;
    (0..l)
        .map(|j| k2 * channels.iter().zip(powers).map(|(h, &p)| p * h[j].norm_sqr()).sum::<f64>())
        .collect()
}

/// Receive distortion vector at one AP given its per-antenna variances.
pub fn sample_receive_distortion<R: Rng + ?Sized>(variances: &[f64], rng: &mut R) -> Vec<Complex64> {
    variances.iter().map(|&v| sample_cn(v, rng)).collect()
}
