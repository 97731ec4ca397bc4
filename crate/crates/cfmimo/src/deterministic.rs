//! Deterministic equivalent of the HA-PMMSE lower-bound SINR.
//!
//! Normalization used throughout (one place on purpose):
//!
//! | quantity | definition |
//! |---|---|
//! | `T` | `(Σ_{i∈P_k} q_i Φ_i / (W(1+δ_i)) + Δ/W + αξ I)^{-1}` with `q_i = ρ_i(1+κ_t²)` |
//! | `Δ` | `Σ_{i∈P_k} [q_i R̃_i + κ_r² ρ_i I∘R_i]` |
//! | `δ_i` | `q_i tr(Φ_i T) / W` |
//! | `δ̃_k` | `tr(Φ_k T) / W` |
//! | `μ_ki, ζ_ki, ε_ki, ζ̃_k` | `tr(· T'_k) / W²` |
//! | `ẽ'_k` | `ξ tr(T'_k) / W²` |
//! | `c_ki` | `tr(T C_ik) / W`, `C_ik = E[h_i ĥ_k^H]` |
//!
//! Every denominator term carries the common factor `(1+δ_k)²` of the
//! desired signal, which cancels.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::estimation::CovarianceSet;
use crate::evaluation::Scenario;
use crate::impairments::LoMode;
use crate::linalg::{cr, spectral_radius, trace_prod, trace_re, CMat, HermitianSolver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeError {
    #[error("fixed point did not converge after {} iterations (last residual {:e})", residuals.len(), residuals.last().copied().unwrap_or(f64::NAN))]
    NotConverged { residuals: Vec<f64> },
    #[error("derivative system singular, spectral radius of F = {spectral_radius}")]
    Singular { spectral_radius: f64 },
    #[error("denominator term {name} is negative: {value:e}")]
    NegativeTerm { name: &'static str, value: f64 },
    #[error("UE {0} has no serving AP")]
    Unserved(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct DeSettings {
    /// Regularization weight on ξ; `None` means `1/W`.
    pub alpha: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DeSettings {
    fn default() -> Self {
        DeSettings { alpha: None, tol: 1e-9, max_iter: 500 }
    }
}

/// Resolvent `T(δ) = (Σ_i q_i Φ_i / (W(1+δ_i)) + base)^{-1}` and its fixed point.
#[derive(Debug, Clone)]
pub struct ResolventProblem {
    pub w: usize,
    pub q: Vec<f64>,
    pub phi: Vec<CMat>,
    pub base: CMat,
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub delta: Vec<f64>,
    pub t: CMat,
    pub iterations: usize,
    /// Sup-norm change per iteration.
    pub residuals: Vec<f64>,
    pub damped: bool,
}

#[derive(Debug, Clone)]
pub struct Derivative {
    pub delta_prime: Vec<f64>,
    pub tp: CMat,
    pub f: DMatrix<f64>,
    pub spectral_radius: f64,
}

impl ResolventProblem {
    pub fn resolvent(&self, delta: &[f64]) -> CMat {
        let wf = self.w as f64;
        let mut a = self.base.clone();
        for ((p, &q), &d) in self.phi.iter().zip(&self.q).zip(delta) {
            a += p * cr(q / (wf * (1.0 + d)));
        }
        HermitianSolver::new(&crate::linalg::hermitize(&a)).inverse()
    }

    pub fn update(&self, t: &CMat) -> Vec<f64> {
        let wf = self.w as f64;
        self.phi.iter().zip(&self.q).map(|(p, &q)| q * trace_prod(p, t).re / wf).collect()
    }

    /// Picard iteration from `δ_i = init`. Switches to averaged updates if
    /// the residual keeps rising within a 10-iteration window.
    pub fn solve(&self, init: f64, tol: f64, max_iter: usize) -> Result<FixedPoint, DeError> {
        let mut delta = vec![init; self.q.len()];
        let mut residuals = Vec::new();
        let mut damped = false;
        for it in 1..=max_iter {
            let t = self.resolvent(&delta);
            let mut next = self.update(&t);
            if damped {
                for (n, d) in next.iter_mut().zip(&delta) {
                    *n = 0.5 * (*n + d);
                }
            }
            let res = next.iter().zip(&delta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            residuals.push(res);
            delta = next;
            if res < tol {
                let t = self.resolvent(&delta);
                return Ok(FixedPoint { delta, t, iterations: it, residuals, damped });
            }
            if !damped && residuals.len() >= 10 {
                let w = &residuals[residuals.len() - 10..];
                let rises = w.windows(2).filter(|p| p[1] > p[0]).count();
                if rises >= 5 {
                    damped = true;
                }
            }
        }
        Err(DeError::NotConverged { residuals })
    }

    /// Largest gap between the fixed points reached from δ⁰ = 0.1 and δ⁰ = 10.
    pub fn uniqueness_gap(&self, tol: f64, max_iter: usize) -> Result<f64, DeError> {
        let a = self.solve(0.1, tol, max_iter)?;
        let b = self.solve(10.0, tol, max_iter)?;
        Ok(a.delta.iter().zip(&b.delta).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
    }

    /// `F_ji = q_j q_i tr(Φ_j T Φ_i T) / (W² (1+δ_i)²)`.
    pub fn f_matrix(&self, fp: &FixedPoint) -> DMatrix<f64> {
        let n = self.q.len();
        let wf = self.w as f64;
        let pt: Vec<CMat> = self.phi.iter().map(|p| p * &fp.t).collect();
        DMatrix::from_fn(n, n, |j, i| {
            self.q[j] * self.q[i] * trace_prod(&pt[j], &pt[i]).re / (wf * wf * (1.0 + fp.delta[i]).powi(2))
        })
    }

    /// Deterministic equivalent of `Σ X Σ`:
    /// `T' = T X T + Σ_i q_i δ'_i T Φ_i T / (W(1+δ_i)²)` with
    /// `(I - F) δ' = b`, `b_j = q_j tr(Φ_j T X T) / W`.
    pub fn derivative(&self, fp: &FixedPoint, x: &CMat) -> Result<Derivative, DeError> {
        let n = self.q.len();
        let wf = self.w as f64;
        let t = &fp.t;
        let txt = t * x * t;
        let f = self.f_matrix(fp);
        let rho = spectral_radius(&f);
        let b = nalgebra::DVector::from_fn(n, |j, _| self.q[j] * trace_prod(&self.phi[j], &txt).re / wf);
        let sys = DMatrix::<f64>::identity(n, n) - &f;
        let dp = sys.lu().solve(&b).filter(|v| v.iter().all(|z| z.is_finite()));
        let dp = match dp {
            Some(v) => v,
            None => return Err(DeError::Singular { spectral_radius: rho }),
        };
        let mut tp = txt;
        for i in 0..n {
            let s = self.q[i] * dp[i] / (wf * (1.0 + fp.delta[i]).powi(2));
            if s != 0.0 {
                tp += t * &self.phi[i] * t * cr(s);
            }
        }
        Ok(Derivative { delta_prime: dp.iter().copied().collect(), tp: crate::linalg::hermitize(&tp), f, spectral_radius: rho })
    }
}

/// Trace functionals of one (UE, channel use) solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeTraces {
    pub delta_tilde: f64,
    /// `μ_ki` over `P_k` (in partner order).
    pub mu: Vec<f64>,
    /// `ζ_ki` over all UEs.
    pub zeta: Vec<f64>,
    /// `μ̃_ki` over `P_k`; the entry for k includes its estimate-error part.
    pub mu_tilde: Vec<f64>,
    pub zeta_tilde: f64,
    /// `ε_ki` over all UEs.
    pub eps: Vec<f64>,
    /// `|c_ki|²` over all UEs (zero inside `P_k`).
    pub cross: Vec<f64>,
    /// Variance of the desired gain caused by oscillator drift common to a
    /// whole UE, AP or antenna.
    pub phase_variance: f64,
    /// Power of UE i reaching UE k's estimate through pilot-phase transmit
    /// distortion, per UE.
    pub leak: Vec<f64>,
    pub e_prime: f64,
    /// `ξ tr(Φ_k T'') / W²`, equal to `e_prime` up to rounding.
    pub e_prime_check: f64,
}

/// Denominator of the DE SINR, each term relative to `ρ_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeBudget {
    pub desired: f64,
    pub self_distortion: f64,
    pub channel_variance: f64,
    pub multiuser: f64,
    pub rx_distortion: f64,
    pub atn: f64,
}

impl DeBudget {
    pub fn denominator(&self) -> f64 {
        self.self_distortion + self.channel_variance + self.multiuser + self.rx_distortion + self.atn
    }

    pub fn sinr(&self) -> f64 {
        let d = self.denominator();
        if self.desired <= 0.0 || d <= 0.0 {
            0.0
        } else {
            self.desired / d
        }
    }
}

/// Full solve for UE k at one channel use, matrices included.
#[derive(Debug, Clone)]
pub struct DeSolution {
    pub ue: usize,
    pub n: usize,
    pub aps: Vec<usize>,
    pub partners: Vec<usize>,
    pub alpha: f64,
    pub problem: ResolventProblem,
    pub fixed_point: FixedPoint,
    pub tp: Derivative,
    pub tpp: Derivative,
    pub traces: DeTraces,
    pub budget: DeBudget,
    pub gamma: f64,
}

impl DeSolution {
    pub fn summary(&self) -> DePoint {
        DePoint {
            ue: self.ue,
            n: self.n,
            w: self.problem.w,
            gamma: self.gamma,
            budget: self.budget,
            iterations: self.fixed_point.iterations,
            spectral_radius: self.tp.spectral_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DePoint {
    pub ue: usize,
    pub n: usize,
    pub w: usize,
    pub gamma: f64,
    pub budget: DeBudget,
    pub iterations: usize,
    pub spectral_radius: f64,
}

/// Assembles the resolvent problem of UE k from the link statistics.
pub fn ue_problem(scn: &Scenario, cov: &CovarianceSet, k: usize, alpha: Option<f64>) -> Result<(ResolventProblem, Vec<usize>, Vec<usize>, f64), DeError> {
    let net = &scn.net;
    let p = &scn.profile;
    let aps = net.clustering.serving_aps(k);
    if aps.is_empty() {
        return Err(DeError::Unserved(k));
    }
    let ues = net.clustering.partners[k].clone();
    let w = aps.len() * net.config.antennas_per_ap;
    let wf = w as f64;
    let alpha = alpha.unwrap_or(1.0 / wf);
    let kt2 = p.kappa_t * p.kappa_t;
    let kr2 = p.kappa_r * p.kappa_r;
    let q: Vec<f64> = ues.iter().map(|&i| net.powers[i] * (1.0 + kt2)).collect();
    let phi: Vec<CMat> = ues.iter().map(|&i| cov.phi_block(i, &aps)).collect();
    let mut base = CMat::identity(w, w) * cr(alpha * p.xi);
    for (&i, &qi) in ues.iter().zip(&q) {
        base += cov.rtilde_block(i, &aps) * cr(qi / wf);
        let r = cov.r_block(i, &aps);
        for d in 0..w {
            base[(d, d)] += cr(kr2 * net.powers[i] * r[(d, d)].re / wf);
        }
    }
    Ok((ResolventProblem { w, q, phi, base }, aps, ues, alpha))
}

/// DE SINR of UE k at the channel use of `cov`.
pub fn ue_de(scn: &Scenario, cov: &CovarianceSet, k: usize, s: &DeSettings) -> Result<DeSolution, DeError> {
    let net = &scn.net;
    let p = &scn.profile;
    let kc = net.config.num_ues;
    let (prob, aps, ues, alpha) = ue_problem(scn, cov, k, s.alpha)?;
    let w = prob.w;
    let wf = w as f64;
    let w2 = wf * wf;
    let fp = prob.solve(1.0, s.tol, s.max_iter)?;
    let kp = ues.iter().position(|&i| i == k).expect("k is its own partner");
    let tp = prob.derivative(&fp, &prob.phi[kp])?;
    let tpp = prob.derivative(&fp, &CMat::identity(w, w))?;
    let t = &fp.t;
    let tk = &tp.tp;
    let kt2 = p.kappa_t * p.kappa_t;
    let kr2 = p.kappa_r * p.kappa_r;

    let delta_tilde = trace_prod(&prob.phi[kp], t).re / wf;
    let mu: Vec<f64> = prob.phi.iter().map(|ph| trace_prod(ph, tk).re / w2).collect();
    let mut zeta = vec![0.0; kc];
    let mut eps = vec![0.0; kc];
    let mut cross = vec![0.0; kc];
    for i in 0..kc {
        let r = cov.r_block(i, &aps);
        zeta[i] = trace_prod(&r, tk).re / w2;
        let diag: f64 = (0..w).map(|d| r[(d, d)].re * tk[(d, d)].re).sum();
        eps[i] = kr2 * diag / w2;
        if i != k {
            let l = net.config.antennas_per_ap;
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, &m) in aps.iter().enumerate() {
                let c = scn.model.cross_covariance(m, i, k, cov.n);
                let tb = t.view((a * l, a * l), (l, l));
                acc += (tb * c).trace();
            }
            cross[i] = (acc / wf).norm_sqr();
            if let Some(j) = ues.iter().position(|&u| u == i) {
                cross[i] /= (1.0 + fp.delta[j]).powi(2);
            }
        }
    }
    let (phase_variance, leak) = coherent_terms(scn, cov, k, &aps, &ues, &fp);
    // Phase error that stays coherent over the array is carried by the
    // coherent terms, so the isotropic error keeps only what is left of it:
    // all drift for the own channel, the UE rotation for nulled partners.
    let drift = cov.n as f64 - (scn.model.tau as f64 + 1.0) / 2.0;
    let lam_tot = (-p.total_pn_variance() * drift).exp();
    let lam_ue = (-p.sigma2_varphi * drift).exp();
    let zeta_tilde = (zeta[k] - mu[kp] / lam_tot).max(0.0);
    let mu_tilde: Vec<f64> = ues
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            let g = 1.0 / (1.0 + fp.delta[j]).powi(2);
            if i == k {
                zeta_tilde + mu[j] * g
            } else {
                (zeta[i] - mu[j] / lam_ue * (1.0 - g)).max(0.0)
            }
        })
        .collect();
    let e_prime = p.xi * trace_re(tk) / w2;
    let e_prime_check = p.xi * trace_prod(&prob.phi[kp], &tpp.tp).re / w2;

    let rho_k = net.powers[k];
    let mut mui = 0.0;
    for i in 0..kc {
        if i == k {
            continue;
        }
        let ratio = net.powers[i] / rho_k;
        mui += ratio
            * (leak[i]
                + match ues.iter().position(|&u| u == i) {
                    Some(j) => mu_tilde[j] + cross[i],
                    None => zeta[i] + cross[i],
                });
    }
    let rx: f64 = (0..kc).map(|i| net.powers[i] / rho_k * eps[i]).sum();
    let budget = DeBudget {
        desired: delta_tilde * delta_tilde,
        self_distortion: kt2 * delta_tilde * delta_tilde,
        channel_variance: (1.0 + kt2) * (mu_tilde[kp] + phase_variance + leak[k]),
        multiuser: (1.0 + kt2) * mui,
        rx_distortion: rx,
        atn: e_prime / rho_k,
    };
    let scale = budget.desired + budget.denominator().abs();
    for (name, v) in [
        ("channel_variance", budget.channel_variance),
        ("multiuser", budget.multiuser),
        ("rx_distortion", budget.rx_distortion),
        ("atn", budget.atn),
    ] {
        if v < -1e-10 * scale {
            return Err(DeError::NegativeTerm { name, value: v });
        }
    }
    let gamma = budget.sinr();
    let traces = DeTraces { delta_tilde, mu, zeta, mu_tilde, zeta_tilde, eps, cross, phase_variance, leak, e_prime, e_prime_check };
    Ok(DeSolution { ue: k, n: cov.n, aps, partners: ues, alpha, problem: prob, fixed_point: fp, tp, tpp, traces, budget, gamma })
}

/// Terms the isotropic-error model misses because they act coherently on
/// all antennas sharing an oscillator or a distortion draw.
///
/// Given the phases, the desired gain concentrates on
/// `Σ_{g,u} e^{j(θ_{g,n} - θ_{g,u})} s_{g,u}` where g runs over phase groups
/// (antennas under SLO, APs under CLO) and u over pilot slots. Its variance
/// over the Wiener increments is returned first. The second value holds,
/// per UE i, `κ_t² ρ_p Σ_u λ_{n-u}² |tr(T R'_i G_{k,u}^H)/W|²`, the power
/// of `h_i` that UE i's pilot distortion copies into `ĥ_k`.
fn coherent_terms(
    scn: &Scenario,
    cov: &CovarianceSet,
    k: usize,
    aps: &[usize],
    ues: &[usize],
    fp: &FixedPoint,
) -> (f64, Vec<f64>) {
    let net = &scn.net;
    let p = &scn.profile;
    let model = &scn.model;
    let cfg = &net.config;
    let (l, tau, kc, n) = (cfg.antennas_per_ap, cfg.pilot_length, cfg.num_ues, cov.n);
    let wf = (aps.len() * l) as f64;
    let lam = |s2: f64, d: usize| (-0.5 * s2 * d as f64).exp();
    let (s_ap, s_ue) = (p.sigma2_phi, p.sigma2_varphi);
    let s_tot = s_ap + s_ue;
    let dn = |u: usize| n.abs_diff(u + 1);
    let t = &fp.t;
    let blocks: Vec<CMat> = (0..aps.len()).map(|a| t.view((a * l, a * l), (l, l)).into_owned()).collect();
    let taps: Vec<Vec<CMat>> = aps.iter().map(|&m| model.taps(m, k, n)).collect();

    let mut groups: Vec<Vec<Complex64>> = Vec::new();
    for (a, &m) in aps.iter().enumerate() {
        let re = &model.r_eff[m][k];
        let per_u: Vec<CMat> = (0..tau).map(|u| &blocks[a] * re * &taps[a][u] * re * model.omega[k][u]).collect();
        match p.lo_mode {
            LoMode::Clo => groups.push(per_u.iter().map(|x| x.trace() / wf).collect()),
            LoMode::Slo => {
                for j in 0..l {
                    groups.push(per_u.iter().map(|x| x[(j, j)] / wf).collect());
                }
            }
        }
    }
    let total: Vec<Complex64> = (0..tau).map(|u| groups.iter().map(|g| g[u]).sum()).collect();
    let mut var = 0.0;
    for u in 0..tau {
        for v in 0..tau {
            let d = u.abs_diff(v);
            let cross_ap = lam(s_ue, d) * lam(s_ap, dn(u)) * lam(s_ap, dn(v));
            let same = lam(s_tot, d) - cross_ap;
            let common = cross_ap - lam(s_tot, dn(u)) * lam(s_tot, dn(v));
            let own: f64 = groups.iter().map(|g| (g[u] * g[v].conj()).re).sum();
            var += own * same + (total[u] * total[v].conj()).re * common;
        }
    }

    let kt2 = p.kappa_t * p.kappa_t;
    let mut leak = vec![0.0; kc];
    if kt2 > 0.0 {
        for (i, li) in leak.iter_mut().enumerate() {
            let pos = if i == k { None } else { ues.iter().position(|&x| x == i) };
            let rprime: Vec<CMat> = aps
                .iter()
                .map(|&m| match pos {
                    Some(j) => &cov.rtilde[m][i] + &cov.phi[m][i] * cr(1.0 / (1.0 + fp.delta[j])),
                    None => model.r_eff[m][i].clone(),
                })
                .collect();
            let mut acc = 0.0;
            for u in 0..tau {
                let mut x = Complex64::new(0.0, 0.0);
                for (a, &m) in aps.iter().enumerate() {
                    x += (&blocks[a] * &rprime[a] * taps[a][u].adjoint() * &model.r_eff[m][k]).trace();
                }
                acc += lam(s_tot, dn(u)).powi(2) * (x / wf).norm_sqr();
            }
            *li = kt2 * cfg.pilot_power * acc;
        }
    }
    // UE k's pilot distortion and intra-pilot phase jitter copy a random
    // multiple of h_k into ĥ_i, which misdirects the null on UE i.
    let rp = cfg.pilot_power;
    let bk: Vec<Vec<CMat>> = aps
        .iter()
        .enumerate()
        .map(|(a, &m)| taps[a].iter().map(|z| z.adjoint() * &model.r_eff[m][k]).collect())
        .collect();
    let om = &model.omega[k];
    for (j, &i) in ues.iter().enumerate() {
        if i == k {
            continue;
        }
        // y[g][u][v]: group part of tr(T R_i Z_{i,u} R_k Z_{k,v}^H R_k) / W
        let mut y: Vec<Vec<Complex64>> = Vec::new();
        for (a, &m) in aps.iter().enumerate() {
            let zi = model.taps(m, i, n);
            let left: Vec<CMat> = zi.iter().map(|z| &blocks[a] * &model.r_eff[m][i] * z * &model.r_eff[m][k]).collect();
            let ng = if p.lo_mode == LoMode::Slo { l } else { 1 };
            let mut gy = vec![vec![Complex64::new(0.0, 0.0); tau * tau]; ng];
            for u in 0..tau {
                for v in 0..tau {
                    let pm = &left[u] * &bk[a][v];
                    if p.lo_mode == LoMode::Slo {
                        for jj in 0..l {
                            gy[jj][u * tau + v] = pm[(jj, jj)] / wf;
                        }
                    } else {
                        gy[0][u * tau + v] = pm.trace() / wf;
                    }
                }
            }
            y.extend(gy);
        }
        let mut power = 0.0;
        if kt2 > 0.0 {
            for u in 0..tau {
                let mut sum = Complex64::new(0.0, 0.0);
                for g in &y {
                    for v in 0..tau {
                        sum += g[u * tau + v] * om[v].conj() * lam(s_tot, u.abs_diff(v));
                    }
                }
                power += kt2 * rp * sum.norm_sqr();
            }
        }
        if s_tot > 0.0 {
            let b: Vec<Vec<Complex64>> = y
                .iter()
                .map(|g| {
                    (0..tau)
                        .map(|u| {
                            (0..tau)
                                .map(|v| om[u] * om[v].conj() * g[u * tau + v] - om[v] * om[u].conj() * g[v * tau + u])
                                .sum()
                        })
                        .collect()
                })
                .collect();
            let bt: Vec<Complex64> = (0..tau).map(|u| b.iter().map(|g| g[u]).sum()).collect();
            for u in 0..tau {
                for w in 0..tau {
                    let mn = (u.min(w) + 1) as f64;
                    power += s_ue * mn * (bt[u] * bt[w].conj()).re;
                    power += s_ap * mn * b.iter().map(|g| (g[u] * g[w].conj()).re).sum::<f64>();
                }
            }
        }
        let d = fp.delta[j];
        leak[i] += power * (d / (1.0 + d)).powi(2);
    }
    (var.max(0.0), leak)
}

/// Per-UE DE SE over a channel-use grid.
#[derive(Debug, Clone)]
pub struct DeReport {
    pub grid: Vec<usize>,
    pub points: Vec<DePoint>,
    /// `(ue, SE)`; unserved UEs get 0.
    pub ue_se: Vec<(usize, f64)>,
}

impl DeReport {
    pub fn point(&self, n: usize, ue: usize) -> Option<&DePoint> {
        self.points.iter().find(|p| p.n == n && p.ue == ue)
    }

    pub fn se(&self, ue: usize) -> f64 {
        self.ue_se.iter().find(|(k, _)| *k == ue).map(|x| x.1).unwrap_or(0.0)
    }
}

/// Evaluates the DE on every (UE, grid point) pair; averaging matches the
/// Monte-Carlo module.
pub fn de_profile(scn: &Scenario, grid: &[usize], s: &DeSettings) -> Result<DeReport, DeError> {
    let kc = scn.net.config.num_ues;
    let covs: Vec<CovarianceSet> = grid.par_iter().map(|&n| scn.model.covariances(n)).collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..kc).map(move |k| (g, k))).collect();
    let solved: Vec<Result<Option<DePoint>, DeError>> = jobs
        .par_iter()
        .map(|&(g, k)| match ue_de(scn, &covs[g], k, s) {
            Ok(sol) => Ok(Some(sol.summary())),
            Err(DeError::Unserved(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut points = Vec::new();
    for r in solved {
        if let Some(p) = r? {
            points.push(p);
        }
    }
    let cfg = &scn.net.config;
    let prelog = cfg.data_length() as f64 / cfg.coherence_length as f64;
    let ue_se = (0..kc)
        .map(|k| {
            let rates: f64 = points.iter().filter(|p| p.ue == k).map(|p| (1.0 + p.gamma).log2()).sum();
            (k, prelog * rates / grid.len() as f64)
        })
        .collect();
    Ok(DeReport { grid: grid.to_vec(), points, ue_se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::channel_use_grid;
    use crate::geometry::{NetworkConfig, NetworkRealization};
    use crate::impairments::HardwareProfile;
    use crate::linalg::{c, is_psd};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(q: f64, phi: f64, base: f64) -> ResolventProblem {
        ResolventProblem {
            w: 1,
            q: vec![q],
            phi: vec![CMat::from_element(1, 1, cr(phi))],
            base: CMat::from_element(1, 1, cr(base)),
        }
    }

    fn random_problem(seed: u64, w: usize, n: usize) -> ResolventProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psd = |rank: usize| {
            let g = CMat::from_fn(w, rank, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            &g * g.adjoint()
        };
        let phi = (0..n).map(|_| psd(2)).collect();
        let base = psd(w) * cr(0.1) + CMat::identity(w, w) * cr(0.05);
        let q = (0..n).map(|i| 0.5 + i as f64 * 0.3).collect();
        ResolventProblem { w, q, phi, base }
    }

    #[test]
    fn scalar_matches_quadratic_root() {
        // δ = qφ / (a + qφ/(1+δ))  ⇔  a δ² + (a + qφ - qφ) δ ... solved below
        let (q, phi, a) = (2.0, 0.7, 0.3);
        let fp = scalar(q, phi, a).solve(1.0, 1e-12, 500).unwrap();
        // δ(a(1+δ) + qφ) = qφ(1+δ)  ⇒  a δ² + a δ - qφ = 0
        let qp = q * phi;
        let root = (-a + (a * a + 4.0 * a * qp).sqrt()) / (2.0 * a);
        assert!((fp.delta[0] - root).abs() < 1e-9, "{} vs {root}", fp.delta[0]);
    }

    #[test]
    fn zero_phi_gives_base_inverse() {
        let p = ResolventProblem { phi: vec![CMat::zeros(3, 3); 2], ..random_problem(1, 3, 2) };
        let fp = p.solve(1.0, 1e-9, 500).unwrap();
        assert!(fp.delta.iter().all(|&d| d == 0.0));
        // first update lands on δ = 0, the second confirms it
        assert_eq!(fp.residuals, vec![1.0, 0.0]);
        let inv = HermitianSolver::new(&p.base).inverse();
        assert!((&fp.t - inv).norm() < 1e-12 * fp.t.norm());
        let d = p.derivative(&fp, &CMat::identity(3, 3)).unwrap();
        assert!(d.delta_prime.iter().all(|&x| x == 0.0));
        let dk = p.derivative(&fp, &p.phi[0]).unwrap();
        assert_eq!(dk.tp.norm(), 0.0);
    }

    #[test]
    fn residuals_decrease_and_fixed_point_unique() {
        for seed in 0..5 {
            let p = random_problem(seed, 6, 4);
            let fp = p.solve(1.0, 1e-9, 500).unwrap();
            assert!(fp.residuals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{:?}", fp.residuals);
            assert!(p.uniqueness_gap(1e-9, 500).unwrap() < 1e-8);
            assert!(is_psd(&fp.t, 1e-10));
            assert!(fp.delta.iter().all(|&d| d >= 0.0));
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        // T'_X is d/dz of the fixed point with base → base - zX.
        for seed in 0..3 {
            let p = random_problem(10 + seed, 5, 3);
            let x = p.phi[0].clone();
            let fp = p.solve(1.0, 1e-13, 1000).unwrap();
            let d = p.derivative(&fp, &x).unwrap();
            assert!(d.spectral_radius < 1.0);
            let h = 1e-5;
            let shifted = |z: f64| {
                let q = ResolventProblem { base: &p.base - &x * cr(z), ..p.clone() };
                q.solve(1.0, 1e-14, 2000).unwrap()
            };
            let (up, dn) = (shifted(h), shifted(-h));
            for i in 0..3 {
                let fd = (up.delta[i] - dn.delta[i]) / (2.0 * h);
                assert!((fd - d.delta_prime[i]).abs() <= 1e-4 * fd.abs().max(1e-12), "{fd} vs {}", d.delta_prime[i]);
            }
            let fd_t = (&up.t - &dn.t) / cr(2.0 * h);
            assert!((&fd_t - &d.tp).norm() <= 1e-4 * d.tp.norm());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn contraction_on_random_instances(seed in 0u64..10_000, w in 2usize..6, n in 1usize..5) {
            let p = random_problem(seed, w, n);
            let fp = p.solve(1.0, 1e-9, 500).unwrap();
            prop_assert!(spectral_radius(&p.f_matrix(&fp)) < 1.0);
            prop_assert!(p.uniqueness_gap(1e-9, 500).unwrap() < 1e-8);
        }
    }

    fn desk_scenario(profile: impl Fn(f64) -> HardwareProfile, m: usize, k: usize, seed: u64) -> Scenario {
        let cfg = NetworkConfig { pilot_length: k.min(8), ..NetworkConfig::desk(m, k) };
        let net = NetworkRealization::generate(&cfg, seed).unwrap();
        let p = profile(cfg.noise_variance);
        Scenario::new(net, p)
    }

    fn impaired(s2: f64) -> HardwareProfile {
        HardwareProfile { kappa_t: 0.126, kappa_r: 0.126, xi: 1.6 * s2, sigma2_phi: 1.58e-4, sigma2_varphi: 1.58e-4, lo_mode: LoMode::Slo }
    }

    #[test]
    fn atn_trace_identity_and_terms_nonnegative() {
        let scn = desk_scenario(impaired, 12, 6, 3);
        let cov = scn.model.covariances(30);
        for k in 0..6 {
            let sol = ue_de(&scn, &cov, k, &DeSettings::default()).unwrap();
            let tr = &sol.traces;
            assert!((tr.e_prime - tr.e_prime_check).abs() <= 1e-8 * tr.e_prime);
            let b = sol.budget;
            for v in [b.self_distortion, b.channel_variance, b.multiuser, b.rx_distortion, b.atn] {
                assert!(v >= -1e-10 * b.denominator());
            }
            assert!(sol.tp.spectral_radius < 1.0);
            assert!(sol.problem.uniqueness_gap(1e-9, 500).unwrap() < 1e-8);
        }
    }

    #[test]
    fn no_transmit_distortion_drops_self_term() {
        let scn = desk_scenario(|s2| HardwareProfile { kappa_t: 0.0, ..impaired(s2) }, 10, 4, 5);
        let cov = scn.model.covariances(25);
        let sol = ue_de(&scn, &cov, 0, &DeSettings::default()).unwrap();
        assert_eq!(sol.budget.self_distortion, 0.0);
    }

    #[test]
    fn flat_without_phase_noise_and_decreasing_with_it() {
        let flat = desk_scenario(|s2| HardwareProfile { sigma2_phi: 0.0, sigma2_varphi: 0.0, ..impaired(s2) }, 10, 4, 7);
        let grid = channel_use_grid(8, 200, 40);
        let rep = de_profile(&flat, &grid, &DeSettings::default()).unwrap();
        for k in 0..4 {
            let g: Vec<f64> = grid.iter().map(|&n| rep.point(n, k).unwrap().gamma).collect();
            assert!(g.iter().all(|x| (x - g[0]).abs() <= 1e-9 * g[0]));
        }
        let pn = desk_scenario(impaired, 10, 4, 7);
        let rep = de_profile(&pn, &grid, &DeSettings::default()).unwrap();
        for k in 0..4 {
            let g: Vec<f64> = grid.iter().map(|&n| rep.point(n, k).unwrap().gamma).collect();
            assert!(g.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{g:?}");
        }
    }

    #[test]
    fn grid_refinement_is_stable() {
        let scn = desk_scenario(impaired, 10, 4, 9);
        let c = &scn.net.config;
        let coarse = de_profile(&scn, &channel_use_grid(c.pilot_length, c.coherence_length, 10), &DeSettings::default()).unwrap();
        let fine = de_profile(&scn, &channel_use_grid(c.pilot_length, c.coherence_length, 1), &DeSettings::default()).unwrap();
        for k in 0..4 {
            let (a, b) = (coarse.se(k), fine.se(k));
            assert!((a - b).abs() <= 0.005 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn more_antennas_help_under_ideal_hardware() {
        let base = NetworkConfig { pilot_length: 4, ..NetworkConfig::desk(8, 4) };
        let net = NetworkRealization::generate(&base, 2).unwrap().with_full_service();
        let s2 = base.noise_variance;
        let mut prev = 0.0;
        for l in [1usize, 2, 4] {
            let mut cfg = base.clone();
            cfg.antennas_per_ap = l;
            let n2 = NetworkRealization::from_parts(&cfg, net.layout.clone(), net.shadow.clone()).unwrap().with_full_service();
            let scn = Scenario::new(n2, HardwareProfile::ideal(s2));
            let cov = scn.model.covariances(10);
            let g: f64 = (0..4).map(|k| ue_de(&scn, &cov, k, &DeSettings::default()).unwrap().gamma).sum();
            assert!(g > prev);
            prev = g;
        }
    }
}
