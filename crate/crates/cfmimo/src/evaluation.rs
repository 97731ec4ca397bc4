//! Monte-Carlo evaluation of the perfect-CSI upper bound and the
//! use-and-then-forget lower bound on per-UE spectral efficiency.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{sample_block_for_trial, synthesize_pilot_observation, PilotBook};
use crate::combining::{CombinerVariant, CombiningInputs};
use crate::estimation::{CovarianceSet, EstimationModel, EstimationScope};
use crate::geometry::NetworkRealization;
use crate::impairments::HardwareProfile;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("at least one trial is required")]
    NoTrials,
    #[error("no combiner variants requested")]
    NoVariants,
    #[error("grid stride must be >= 1")]
    BadStride,
}

/// Network, hardware and the derived estimation statistics.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub net: NetworkRealization,
    pub profile: HardwareProfile,
    pub pilots: PilotBook,
    pub model: EstimationModel,
}

impl Scenario {
    pub fn new(net: NetworkRealization, profile: HardwareProfile) -> Self {
        let pilots = PilotBook::new(net.config.pilot_length, net.config.pilot_power);
        let model = EstimationModel::build(&net, &profile, &pilots);
        Scenario { net, profile, pilots, model }
    }
}

/// Data channel uses to evaluate: `τ+1`, every `stride`-th use after it,
/// the midpoint and `τ_c`.
pub fn channel_use_grid(tau: usize, tau_c: usize, stride: usize) -> Vec<usize> {
    let first = tau + 1;
    let mut g: Vec<usize> = (first..=tau_c).step_by(stride.max(1)).collect();
    g.push((first + tau_c) / 2);
    g.push(tau_c);
    g.sort_unstable();
    g.dedup();
    g
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub trials: usize,
    pub seed: u64,
    pub grid: Vec<usize>,
    pub variants: Vec<CombinerVariant>,
    /// Number of trial batches used for standard errors.
    pub batches: usize,
}

impl EvalSettings {
    pub fn new(scn: &Scenario, trials: usize, seed: u64, stride: usize, variants: Vec<CombinerVariant>) -> Self {
        let c = &scn.net.config;
        EvalSettings {
            trials,
            seed,
            grid: channel_use_grid(c.pilot_length, c.coherence_length, stride),
            variants,
            batches: 10,
        }
    }
}

const FIELDS: usize = 8;
// moment slots
const A_RE: usize = 0;
const A_IM: usize = 1;
const A_ABS2: usize = 2;
const MUI: usize = 3;
const TX: usize = 4;
const RX: usize = 5;
const ATN: usize = 6;
const UP_LOG: usize = 7;

/// Which capacity bound a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Bound {
    Lower,
    Upper,
}

/// Power budget of UE k at one channel use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SinrPoint {
    pub variant: CombinerVariant,
    pub bound: Bound,
    pub n: usize,
    pub ue: usize,
    /// `ρ |E v^H h|²`.
    pub desired: f64,
    /// `ρ Var(v^H h)`.
    pub var_term: f64,
    pub multiuser: f64,
    pub tx_distortion: f64,
    pub rx_distortion: f64,
    pub atn: f64,
    pub sinr: f64,
    /// Batch-means standard error of `sinr`.
    pub sinr_std_err: f64,
    /// `log2(1 + γ)` for the lower bound, `E log2(1 + γ_up)` for the upper.
    pub rate: f64,
}

impl SinrPoint {
    pub fn interference(&self) -> f64 {
        self.var_term + self.multiuser + self.tx_distortion + self.rx_distortion + self.atn
    }

    pub fn decompose(&self) -> InterferenceBudget {
        InterferenceBudget {
            desired: self.desired,
            channel_variance: self.var_term,
            multiuser: self.multiuser,
            transmit_distortion: self.tx_distortion,
            receive_distortion: self.rx_distortion,
            amplified_noise: self.atn,
            total_interference: self.interference(),
        }
    }
}

/// Labeled decomposition of the lower-bound SINR denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterferenceBudget {
    pub desired: f64,
    pub channel_variance: f64,
    pub multiuser: f64,
    pub transmit_distortion: f64,
    pub receive_distortion: f64,
    pub amplified_noise: f64,
    pub total_interference: f64,
}

/// Per-UE spectral efficiency of one variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UeSe {
    pub variant: CombinerVariant,
    pub bound: Bound,
    pub ue: usize,
    pub se: f64,
    pub se_std_err: f64,
}

#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub grid: Vec<usize>,
    pub trials: usize,
    pub points: Vec<SinrPoint>,
    pub ue_se: Vec<UeSe>,
    /// Number of negative variance estimates clamped to zero.
    pub clamped: usize,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn se(&self, variant: CombinerVariant, ue: usize) -> Option<&UeSe> {
        self.ue_se.iter().find(|s| s.variant == variant && s.ue == ue)
    }

    /// Mean SE over UEs and its standard error (from per-UE batch errors,
    /// treating UEs as independent).
    pub fn mean_se(&self, variant: CombinerVariant) -> (f64, f64) {
        let v: Vec<&UeSe> = self.ue_se.iter().filter(|s| s.variant == variant).collect();
        let n = v.len().max(1) as f64;
        let mean = v.iter().map(|s| s.se).sum::<f64>() / n;
        let se = (v.iter().map(|s| s.se_std_err * s.se_std_err).sum::<f64>()).sqrt() / n;
        (mean, se)
    }

    pub fn point(&self, variant: CombinerVariant, n: usize, ue: usize) -> Option<&SinrPoint> {
        self.points.iter().find(|p| p.variant == variant && p.n == n && p.ue == ue)
    }
}

struct Layout {
    grid_len: usize,
    k: usize,
}

impl Layout {
    #[inline]
    fn idx(&self, v: usize, g: usize, k: usize) -> usize {
        ((v * self.grid_len + g) * self.k + k) * FIELDS
    }
}

fn run_trial(
    scn: &Scenario,
    covs: &[CovarianceSet],
    set: &EvalSettings,
    lay: &Layout,
    trial: u64,
) -> Vec<f64> {
    let net = &scn.net;
    let p = &scn.profile;
    let cfg = &net.config;
    let kc = cfg.num_ues;
    let mut out = vec![0.0; set.variants.len() * lay.grid_len * kc * FIELDS];
    let block = sample_block_for_trial(net, p, set.seed, trial);
    let mut rng = stream_rng(set.seed, Stream::PilotNoise(trial));
    let psi = synthesize_pilot_observation(net, &block, &scn.pilots, p, &mut rng);
    let z = scn.model.whiten(&psi);
    let kt2 = p.kappa_t * p.kappa_t;
    let kr2 = p.kappa_r * p.kappa_r;
    for (g, &n) in set.grid.iter().enumerate() {
        let est = scn.model.estimate_all(&z, n, EstimationScope::Full);
        let truth = block.snapshot(n);
        let inputs = CombiningInputs { net, profile: p, cov: &covs[g], est: &est, truth: Some(&truth) };
        for (vi, &variant) in set.variants.iter().enumerate() {
            let combs = inputs.build_all(variant);
            for c in &combs {
                let k = c.ue;
                let o = lay.idx(vi, g, k);
                if c.aps.is_empty() {
                    continue;
                }
                if variant.is_genie() {
                    let gam = inputs.upper_bound_sinr(c);
                    out[o + UP_LOG] = (1.0 + gam).log2();
                    continue;
                }
                let mut rx_w = vec![0.0; c.v.len()];
                let mut tx_sum = 0.0;
                let mut mui = 0.0;
                for i in 0..kc {
                    let hi = truth.stacked(&c.aps, i);
                    let ip = (c.v.adjoint() * &hi)[(0, 0)];
                    let pw = net.powers[i] * ip.norm_sqr();
                    tx_sum += pw;
                    if i == k {
                        out[o + A_RE] = ip.re;
                        out[o + A_IM] = ip.im;
                        out[o + A_ABS2] = ip.norm_sqr();
                    } else {
                        mui += pw;
                    }
                    for (r, w) in rx_w.iter_mut().enumerate() {
                        *w += net.powers[i] * hi[r].norm_sqr();
                    }
                }
                let rx: f64 = c.v.iter().zip(&rx_w).map(|(v, w)| v.norm_sqr() * w).sum();
                out[o + MUI] = mui;
                out[o + TX] = kt2 * tx_sum;
                out[o + RX] = kr2 * rx;
                out[o + ATN] = p.xi * c.v.norm_squared();
            }
        }
    }
    out
}

/// Runs `set.trials` independent blocks and assembles both bounds.
/// The result does not depend on the rayon thread count.
pub fn evaluate(scn: &Scenario, set: &EvalSettings) -> Result<EvaluationReport, EvaluationError> {
    if set.trials == 0 {
        return Err(EvaluationError::NoTrials);
    }
    if set.variants.is_empty() {
        return Err(EvaluationError::NoVariants);
    }
    let cfg = &scn.net.config;
    let kc = cfg.num_ues;
    let lay = Layout { grid_len: set.grid.len(), k: kc };
    let covs: Vec<CovarianceSet> = set.grid.par_iter().map(|&n| scn.model.covariances(n)).collect();
    let width = set.variants.len() * lay.grid_len * kc * FIELDS;
    let batches = set.batches.clamp(1, set.trials);
    let mut sums = vec![vec![0.0; width]; batches];
    let chunk = 64usize;
    let mut start = 0usize;
    while start < set.trials {
        let end = (start + chunk).min(set.trials);
        let results: Vec<Vec<f64>> = (start..end)
            .into_par_iter()
            .map(|t| run_trial(scn, &covs, set, &lay, t as u64))
            .collect();
        for (off, r) in results.into_iter().enumerate() {
            let t = start + off;
            let b = t * batches / set.trials;
            for (acc, x) in sums[b].iter_mut().zip(&r) {
                *acc += x;
            }
        }
        start = end;
    }
    let counts: Vec<f64> = (0..batches)
        .map(|b| (0..set.trials).filter(|&t| t * batches / set.trials == b).count() as f64)
        .collect();
    let mut total = vec![0.0; width];
    for s in &sums {
        for (a, x) in total.iter_mut().zip(s) {
            *a += x;
        }
    }
    let mut clamped = 0usize;
    let mut warnings = Vec::new();
    let mut points = Vec::new();
    let mut ue_se = Vec::new();
    let prelog = cfg.data_length() as f64 / cfg.coherence_length as f64;
    for (vi, &variant) in set.variants.iter().enumerate() {
        let bound = if variant.is_genie() { Bound::Upper } else { Bound::Lower };
        for k in 0..kc {
            let rho = scn.net.powers[k];
            let mut rate_sum = 0.0;
            let mut batch_rate = vec![0.0; batches];
            for (g, &n) in set.grid.iter().enumerate() {
                let o = lay.idx(vi, g, k);
                let mut pt = assemble(variant, bound, n, k, rho, &total[o..o + FIELDS], set.trials as f64);
                if pt.var_term < 0.0 {
                    clamped += 1;
                    warnings.push(format!(
                        "{} UE {k} n {n}: negative variance estimate {:e} clamped to 0",
                        variant.as_str(),
                        pt.var_term
                    ));
                    pt.var_term = 0.0;
                    pt.sinr = sinr_of(&pt);
                    pt.rate = (1.0 + pt.sinr).log2();
                }
                let mut bs = Vec::with_capacity(batches);
                for b in 0..batches {
                    let mut bp = assemble(variant, bound, n, k, rho, &sums[b][o..o + FIELDS], counts[b]);
                    bp.var_term = bp.var_term.max(0.0);
                    if bound == Bound::Lower {
                        bp.sinr = sinr_of(&bp);
                        bp.rate = (1.0 + bp.sinr).log2();
                    }
                    batch_rate[b] += bp.rate;
                    bs.push(bp.sinr);
                }
                pt.sinr_std_err = batch_std_err(&bs);
                rate_sum += pt.rate;
                points.push(pt);
            }
            let glen = set.grid.len() as f64;
            let se = prelog * rate_sum / glen;
            let per_batch: Vec<f64> = batch_rate.iter().map(|r| prelog * r / glen).collect();
            ue_se.push(UeSe { variant, bound, ue: k, se, se_std_err: batch_std_err(&per_batch) });
        }
    }
    Ok(EvaluationReport { grid: set.grid.clone(), trials: set.trials, points, ue_se, clamped, warnings })
}

fn sinr_of(p: &SinrPoint) -> f64 {
    let i = p.interference();
    if i > 0.0 {
        p.desired / i
    } else {
        0.0
    }
}

fn assemble(variant: CombinerVariant, bound: Bound, n: usize, ue: usize, rho: f64, s: &[f64], count: f64) -> SinrPoint {
    let mean = |f: usize| s[f] / count;
    if bound == Bound::Upper {
        let rate = mean(UP_LOG);
        return SinrPoint {
            variant,
            bound,
            n,
            ue,
            desired: 0.0,
            var_term: 0.0,
            multiuser: 0.0,
            tx_distortion: 0.0,
            rx_distortion: 0.0,
            atn: 0.0,
            sinr: 2f64.powf(rate) - 1.0,
            sinr_std_err: 0.0,
            rate,
        };
    }
    let a2 = mean(A_RE).powi(2) + mean(A_IM).powi(2);
    let mut p = SinrPoint {
        variant,
        bound,
        n,
        ue,
        desired: rho * a2,
        var_term: rho * (mean(A_ABS2) - a2),
        multiuser: mean(MUI),
        tx_distortion: mean(TX),
        rx_distortion: mean(RX),
        atn: mean(ATN),
        sinr: 0.0,
        sinr_std_err: 0.0,
        rate: 0.0,
    };
    p.sinr = sinr_of(&p);
    p.rate = (1.0 + p.sinr).log2();
    p
}

fn batch_std_err(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}
