//! Small-scale fading, effective (phase-rotated) channels, pilot book and
//! observation synthesis.
//!
//! Channel uses are 1-based: pilots occupy `1..=τ`, data `τ+1..=τ_c`.

use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::PI;

use crate::geometry::NetworkRealization;
use crate::impairments::{
    receive_distortion_variances, sample_cn, sample_phase_trajectories, sample_receive_distortion,
    sample_transmit_distortion, HardwareProfile, PhaseTrajectory,
};
use crate::linalg::{CMat, CVec};
use crate::rng::{stream_rng, Stream};

/// τ mutually orthogonal constant-modulus pilots (scaled DFT columns).
#[derive(Debug, Clone)]
pub struct PilotBook {
    pub power: f64,
    sequences: Vec<CVec>,
}

impl PilotBook {
    pub fn new(tau: usize, power: f64) -> Self {
        let amp = power.sqrt();
        let sequences = (0..tau)
            .map(|t| {
                CVec::from_fn(tau, |u, _| {
                    Complex64::from_polar(amp, -2.0 * PI * (t * u) as f64 / tau as f64)
                })
            })
            .collect();
        PilotBook { power, sequences }
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sequence with pilot index `t` (0-based).
    pub fn sequence(&self, t: usize) -> &CVec {
        &self.sequences[t]
    }
}

/// One coherence block: block-constant channels plus phase trajectories.
#[derive(Debug, Clone)]
pub struct CoherenceBlock {
    /// `h[m][k]`, L-vector drawn from CN(0, R_mk).
    pub h: Vec<Vec<CVec>>,
    pub phases: PhaseTrajectory,
    num_ues: usize,
    antennas: usize,
}

impl CoherenceBlock {
    /// Effective channel `Θ_{mk,n} h_mk` at channel use `n`.
    pub fn h_eff(&self, m: usize, k: usize, n: usize) -> CVec {
        let h = &self.h[m][k];
        CVec::from_fn(h.len(), |j, _| self.phases.rotation(m, k, j, n) * h[j])
    }

    /// All effective channels at channel use `n`.
    pub fn snapshot(&self, n: usize) -> ChannelSnapshot {
        let (kc, l) = (self.num_ues, self.antennas);
        let mc = self.h.len();
        let mut data = vec![Complex64::new(0.0, 0.0); mc * kc * l];
        for m in 0..mc {
            for k in 0..kc {
                let h = &self.h[m][k];
                let base = (m * kc + k) * l;
                for j in 0..l {
                    data[base + j] = self.phases.rotation(m, k, j, n) * h[j];
                }
            }
        }
        ChannelSnapshot { num_ues: kc, antennas: l, data }
    }
}

/// Flat `[m][k][j]` store of effective channels at one channel use.
#[derive(Debug, Clone)]
pub struct ChannelSnapshot {
    pub num_ues: usize,
    pub antennas: usize,
    pub data: Vec<Complex64>,
}

impl ChannelSnapshot {
    #[inline]
    pub fn get(&self, m: usize, k: usize) -> &[Complex64] {
        let base = (m * self.num_ues + k) * self.antennas;
        &self.data[base..base + self.antennas]
    }

    /// Stack of UE k's channels over the given APs.
    pub fn stacked(&self, aps: &[usize], k: usize) -> CVec {
        let l = self.antennas;
        let mut v = CVec::zeros(aps.len() * l);
        for (a, &m) in aps.iter().enumerate() {
            for (j, z) in self.get(m, k).iter().enumerate() {
                v[a * l + j] = *z;
            }
        }
        v
    }
}

/// Draws `h_mk = R_mk^{1/2} z` and the phase trajectories of one block.
pub fn sample_block<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    net: &NetworkRealization,
    profile: &HardwareProfile,
    fading_rng: &mut R1,
    phase_rng: &mut R2,
) -> CoherenceBlock {
    let cfg = &net.config;
    let (mc, kc, l) = (cfg.num_aps, cfg.num_ues, cfg.antennas_per_ap);
    let h = (0..mc)
        .map(|m| {
            (0..kc)
                .map(|k| {
                    let z = CVec::from_fn(l, |_, _| sample_cn(1.0, fading_rng));
                    &net.r_sqrt[m][k] * z
                })
                .collect()
        })
        .collect();
    let phases = sample_phase_trajectories(profile, mc, kc, l, cfg.coherence_length, phase_rng);
    CoherenceBlock { h, phases, num_ues: kc, antennas: l }
}

/// Block for trial `trial` of master seed `seed`.
pub fn sample_block_for_trial(
    net: &NetworkRealization,
    profile: &HardwareProfile,
    seed: u64,
    trial: u64,
) -> CoherenceBlock {
    let mut f = stream_rng(seed, Stream::Fading(trial));
    let mut p = stream_rng(seed, Stream::Phase(trial));
    sample_block(net, profile, &mut f, &mut p)
}

/// Received pilot signals ψ_m = [y_{m,1}; ...; y_{m,τ}] for every AP.
///
/// Transmit distortion is drawn once per UE and channel use and seen by all
/// APs; receive distortion and thermal noise are per AP.
pub fn synthesize_pilot_observation<R: Rng + ?Sized>(
    net: &NetworkRealization,
    block: &CoherenceBlock,
    pilots: &PilotBook,
    profile: &HardwareProfile,
    rng: &mut R,
) -> Vec<CVec> {
    let cfg = &net.config;
    let (mc, kc, l, tau) = (cfg.num_aps, cfg.num_ues, cfg.antennas_per_ap, cfg.pilot_length);
    let p_pilot = vec![pilots.power; kc];
    let tx: Vec<Vec<Complex64>> = (0..kc)
        .map(|_| (0..tau).map(|_| sample_transmit_distortion(profile.kappa_t, pilots.power, rng)).collect())
        .collect();
    let mut out = Vec::with_capacity(mc);
    for m in 0..mc {
        let mut psi = CVec::zeros(tau * l);
        for u in 1..=tau {
            let snap: Vec<CVec> = (0..kc).map(|k| block.h_eff(m, k, u)).collect();
            for k in 0..kc {
                let w = pilots.sequence(net.clustering.pilot_of[k])[u - 1] + tx[k][u - 1];
                for j in 0..l {
                    psi[(u - 1) * l + j] += snap[k][j] * w;
                }
            }
            let refs: Vec<&[Complex64]> = snap.iter().map(|v| v.as_slice()).collect();
            let var = receive_distortion_variances(profile.kappa_r, &refs, &p_pilot);
            let dr = sample_receive_distortion(&var, rng);
            for j in 0..l {
                psi[(u - 1) * l + j] += dr[j] + sample_cn(profile.xi, rng);
            }
        }
        out.push(psi);
    }
    out
}

/// Data-phase impairment draws for one channel use.
#[derive(Debug, Clone)]
pub struct DataImpairments {
    /// Transmit distortion per UE.
    pub tx: Vec<Complex64>,
    /// Receive distortion, W-vector stacked by AP.
    pub rx: CVec,
    /// Amplified thermal noise, W-vector.
    pub noise: CVec,
}

impl DataImpairments {
    pub fn zero(k: usize, w: usize) -> Self {
        DataImpairments { tx: vec![Complex64::new(0.0, 0.0); k], rx: CVec::zeros(w), noise: CVec::zeros(w) }
    }
}

/// Gaussian data symbols with variances `powers`.
pub fn sample_symbols<R: Rng + ?Sized>(powers: &[f64], rng: &mut R) -> Vec<Complex64> {
    powers.iter().map(|&p| sample_cn(p, rng)).collect()
}

/// Impairment draws for data channel use `n` (receive distortion depends on
/// the effective channels).
pub fn sample_data_impairments<R: Rng + ?Sized>(
    net: &NetworkRealization,
    block: &CoherenceBlock,
    profile: &HardwareProfile,
    n: usize,
    rng: &mut R,
) -> DataImpairments {
    let cfg = &net.config;
    let (mc, kc, l) = (cfg.num_aps, cfg.num_ues, cfg.antennas_per_ap);
    let tx = net.powers.iter().map(|&p| sample_transmit_distortion(profile.kappa_t, p, rng)).collect();
    let snap = block.snapshot(n);
    let mut rx = CVec::zeros(mc * l);
    let mut noise = CVec::zeros(mc * l);
    for m in 0..mc {
        let refs: Vec<&[Complex64]> = (0..kc).map(|k| snap.get(m, k)).collect();
        let var = receive_distortion_variances(profile.kappa_r, &refs, &net.powers);
        let dr = sample_receive_distortion(&var, rng);
        for j in 0..l {
            rx[m * l + j] = dr[j];
            noise[m * l + j] = sample_cn(profile.xi, rng);
        }
    }
    DataImpairments { tx, rx, noise }
}

/// `y_n = Σ_i h_{i,n}(s_i + δ_t^i) + δ_r + ξ_n`, stacked over APs.
pub fn observe_data(
    net: &NetworkRealization,
    block: &CoherenceBlock,
    n: usize,
    symbols: &[Complex64],
    imp: &DataImpairments,
) -> CVec {
    let cfg = &net.config;
    let (mc, kc, l) = (cfg.num_aps, cfg.num_ues, cfg.antennas_per_ap);
    let snap = block.snapshot(n);
    let mut y = &imp.rx + &imp.noise;
    for m in 0..mc {
        for k in 0..kc {
            let a = symbols[k] + imp.tx[k];
            for (j, h) in snap.get(m, k).iter().enumerate() {
                y[m * l + j] += h * a;
            }
        }
    }
    y
}

/// Symbols and impairments drawn together, then observed.
pub fn synthesize_data_observation<R: Rng + ?Sized>(
    net: &NetworkRealization,
    block: &CoherenceBlock,
    profile: &HardwareProfile,
    symbols: &[Complex64],
    n: usize,
    rng: &mut R,
) -> CVec {
    let imp = sample_data_impairments(net, block, profile, n, rng);
    observe_data(net, block, n, symbols, &imp)
}

/// Sample covariance helper used by tests: `(1/N) Σ x x^H`.
pub fn sample_covariance(samples: &[CVec]) -> CMat {
    let d = samples.first().map_or(0, |s| s.len());
    let mut acc = CMat::zeros(d, d);
    for s in samples {
        crate::linalg::add_outer(&mut acc, s, 1.0);
    }
    acc / Complex64::new(samples.len() as f64, 0.0)
}
