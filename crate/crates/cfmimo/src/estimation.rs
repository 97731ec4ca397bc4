//! Per-AP LMMSE estimation of the effective channel under hardware
//! impairments.
//!
//! Second-order statistics are exact for the sampled model. With independent
//! uniform initial phases per oscillator, the effective channel of a link has
//! covariance `R_eff = I ∘ R` under SLO (cross-antenna phases are
//! independent) and `R_eff = R` under CLO; the two agree when R is diagonal.

use num_complex::Complex64;
use thiserror::Error;

use crate::channel::PilotBook;
use crate::geometry::NetworkRealization;
use crate::impairments::{HardwareProfile, LoMode};
use crate::linalg::{cr, CMat, CVec, HermitianSolver};

#[derive(Debug, Error, PartialEq)]
pub enum EstimationError {
    #[error("UE {k} is outside the estimation scope of AP {m}")]
    OutOfScope { m: usize, k: usize },
    #[error("channel use {n} outside 1..={tau_c}")]
    BadChannelUse { n: usize, tau_c: usize },
}

/// Which (AP, UE) estimates an AP may form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimationScope {
    /// AP m estimates UE i only if i is a partner of some UE that m serves.
    Scalable,
    /// Every AP estimates every UE (needed by non-scalable benchmarks).
    Full,
}

/// `I ∘ A` as a matrix.
pub fn diag_part(a: &CMat) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| if i == j { cr(a[(i, i)].re) } else { cr(0.0) })
}

/// Statistics of the pilot observations at every AP.
#[derive(Debug, Clone)]
pub struct EstimationModel {
    pub tau: usize,
    pub tau_c: usize,
    pub antennas: usize,
    pub num_ues: usize,
    pub lo_mode: LoMode,
    pn_var: f64,
    /// Pilot sequence of each UE.
    pub omega: Vec<CVec>,
    /// Effective-channel covariance `[m][k]`.
    pub r_eff: Vec<Vec<CMat>>,
    /// Pilot-observation covariance Q_m.
    pub q: Vec<CMat>,
    q_inv: Vec<CMat>,
    /// UEs each AP may estimate under the scalable scope.
    scope: Vec<Vec<bool>>,
}

impl EstimationModel {
    pub fn build(net: &NetworkRealization, profile: &HardwareProfile, pilots: &PilotBook) -> Self {
        let cfg = &net.config;
        let (mc, kc, l, tau) = (cfg.num_aps, cfg.num_ues, cfg.antennas_per_ap, cfg.pilot_length);
        let rho_p = pilots.power;
        let omega: Vec<CVec> = (0..kc).map(|k| pilots.sequence(net.clustering.pilot_of[k]).clone()).collect();
        let pn_var = profile.total_pn_variance();
        let lam = |d: usize| (-0.5 * pn_var * d as f64).exp();
        let r_eff: Vec<Vec<CMat>> = net
            .r
            .iter()
            .map(|row| {
                row.iter()
                    .map(|r| match profile.lo_mode {
                        LoMode::Slo => diag_part(r),
                        LoMode::Clo => r.clone(),
                    })
                    .collect()
            })
            .collect();
        let kt2 = profile.kappa_t * profile.kappa_t;
        let kr2 = profile.kappa_r * profile.kappa_r;
        let mut q = Vec::with_capacity(mc);
        let mut q_inv = Vec::with_capacity(mc);
        for m in 0..mc {
            let mut qm = CMat::zeros(tau * l, tau * l);
            for k in 0..kc {
                let re = &r_eff[m][k];
                let w = &omega[k];
                for u in 0..tau {
                    for v in 0..tau {
                        let x = w[u] * w[v].conj() * lam(u.abs_diff(v));
                        for a in 0..l {
                            for b in 0..l {
                                qm[(u * l + a, v * l + b)] += x * re[(a, b)];
                            }
                        }
                    }
                    for a in 0..l {
                        for b in 0..l {
                            qm[(u * l + a, u * l + b)] += re[(a, b)] * (kt2 * rho_p);
                        }
                        qm[(u * l + a, u * l + a)] += cr(kr2 * rho_p * net.r[m][k][(a, a)].re);
                    }
                }
            }
            for i in 0..tau * l {
                qm[(i, i)] += cr(profile.xi);
            }
            q_inv.push(HermitianSolver::new(&qm).inverse());
            q.push(qm);
        }
        let cl = &net.clustering;
        let scope = (0..mc)
            .map(|m| {
                let mut row = vec![false; kc];
                for k in cl.served_ues(m) {
                    for &i in &cl.partners[k] {
                        row[i] = true;
                    }
                }
                row
            })
            .collect();
        EstimationModel {
            tau,
            tau_c: cfg.coherence_length,
            antennas: l,
            num_ues: kc,
            lo_mode: profile.lo_mode,
            pn_var,
            omega,
            r_eff,
            q,
            q_inv,
            scope,
        }
    }

    pub fn num_aps(&self) -> usize {
        self.q.len()
    }

    /// Drift attenuation between channel uses `n` and `u`.
    pub fn lambda(&self, n: usize, u: usize) -> f64 {
        (-0.5 * self.pn_var * n.abs_diff(u) as f64).exp()
    }

    pub fn in_scope(&self, m: usize, k: usize, scope: EstimationScope) -> bool {
        match scope {
            EstimationScope::Full => true,
            EstimationScope::Scalable => self.scope[m][k],
        }
    }

    /// `E[ψ_m h_{k,n}^H]`: τL × L with block u equal to `λ_{|n-u|} ω_{k,u} R_eff`.
    pub fn cross_pilot(&self, m: usize, k: usize, n: usize) -> CMat {
        let l = self.antennas;
        let re = &self.r_eff[m][k];
        let mut b = CMat::zeros(self.tau * l, l);
        for u in 0..self.tau {
            let s = self.omega[k][u] * self.lambda(n, u + 1);
            for a in 0..l {
                for c in 0..l {
                    b[(u * l + a, c)] = s * re[(a, c)];
                }
            }
        }
        b
    }

    /// Estimate covariance Φ_mk(n).
    pub fn phi(&self, m: usize, k: usize, n: usize) -> CMat {
        self.cross_covariance(m, k, k, n)
    }

    /// `E[h_{l,n} ĥ_{k,n}^H]` at AP m.
    pub fn cross_covariance(&self, m: usize, l: usize, k: usize, n: usize) -> CMat {
        let bl = self.cross_pilot(m, l, n);
        let bk = if l == k { bl.clone() } else { self.cross_pilot(m, k, n) };
        let out = bl.adjoint() * (&self.q_inv[m] * bk);
        if l == k {
            crate::linalg::hermitize(&out)
        } else {
            out
        }
    }

    /// Power that UE i's transmit and receive distortion contributes to the
    /// estimate of UE k at AP m. Orthogonal pilots keep `E[h_i ĥ_k^H] = 0`,
    /// but this leakage is nonzero whenever κ_t or κ_r is.
    pub fn distortion_leakage(&self, m: usize, i: usize, k: usize, n: usize, net: &NetworkRealization, profile: &HardwareProfile, rho_p: f64) -> f64 {
        let l = self.antennas;
        let g = &self.q_inv[m] * self.cross_pilot(m, k, n);
        let kt2 = profile.kappa_t * profile.kappa_t;
        let kr2 = profile.kappa_r * profile.kappa_r;
        let block = self.r_eff[m][i].map(|z| z * (kt2 * rho_p)) + diag_part(&net.r[m][i]).map(|z| z * (kr2 * rho_p));
        let mut acc = 0.0;
        for u in 0..self.tau {
            let gu = g.view((u * l, 0), (l, l));
            acc += crate::linalg::trace_re(&(gu.adjoint() * &block * gu));
        }
        acc
    }

    /// Estimate and error covariances of every link at channel use `n`.
    pub fn covariances(&self, n: usize) -> CovarianceSet {
        let mc = self.num_aps();
        let mut phi = Vec::with_capacity(mc);
        let mut rtilde = Vec::with_capacity(mc);
        for m in 0..mc {
            let mut pr = Vec::with_capacity(self.num_ues);
            let mut rr = Vec::with_capacity(self.num_ues);
            for k in 0..self.num_ues {
                let p = self.phi(m, k, n);
                rr.push(&self.r_eff[m][k] - &p);
                pr.push(p);
            }
            phi.push(pr);
            rtilde.push(rr);
        }
        CovarianceSet { n, antennas: self.antennas, phi, rtilde, r_eff: self.r_eff.clone() }
    }

    /// Per-slot estimator taps: `ĥ_{mk,n} = R_eff Σ_u Z_u y_{m,u}` with
    /// `Z_u = Σ_v ω_{k,v}^* λ_{|n-v|} [Q_m^{-1}]_{vu}`.
    pub fn taps(&self, m: usize, k: usize, n: usize) -> Vec<CMat> {
        let l = self.antennas;
        let qi = &self.q_inv[m];
        (0..self.tau)
            .map(|u| {
                let mut z = CMat::zeros(l, l);
                for v in 0..self.tau {
                    let s = self.omega[k][v].conj() * self.lambda(n, v + 1);
                    z += qi.view((v * l, u * l), (l, l)) * s;
                }
                z
            })
            .collect()
    }

    /// `Q_m^{-1} ψ_m` for every AP, computed once per block.
    pub fn whiten(&self, psi: &[CVec]) -> Vec<CVec> {
        psi.iter().zip(&self.q_inv).map(|(p, qi)| qi * p).collect()
    }

    /// `ĥ_{mk,n} = (ω_k^H Λ_n ⊗ R_eff) Q_m^{-1} ψ_m` from the whitened
    /// observation, without forming the Kronecker product.
    pub fn estimate_whitened(&self, z_m: &CVec, m: usize, k: usize, n: usize) -> CVec {
        let l = self.antennas;
        let mut acc = CVec::zeros(l);
        for u in 0..self.tau {
            let s = self.omega[k][u].conj() * self.lambda(n, u + 1);
            for a in 0..l {
                acc[a] += s * z_m[u * l + a];
            }
        }
        &self.r_eff[m][k] * acc
    }

    /// Scope-checked estimate from a raw pilot observation.
    pub fn estimate(
        &self,
        psi_m: &CVec,
        m: usize,
        k: usize,
        n: usize,
        scope: EstimationScope,
    ) -> Result<CVec, EstimationError> {
        if n == 0 || n > self.tau_c {
            return Err(EstimationError::BadChannelUse { n, tau_c: self.tau_c });
        }
        if !self.in_scope(m, k, scope) {
            return Err(EstimationError::OutOfScope { m, k });
        }
        Ok(self.estimate_whitened(&(&self.q_inv[m] * psi_m), m, k, n))
    }

    /// All in-scope estimates at channel use `n`; out-of-scope links are zero.
    pub fn estimate_all(&self, z: &[CVec], n: usize, scope: EstimationScope) -> EstimateSet {
        let (mc, kc, l) = (self.num_aps(), self.num_ues, self.antennas);
        let mut data = vec![Complex64::new(0.0, 0.0); mc * kc * l];
        for m in 0..mc {
            for k in 0..kc {
                if !self.in_scope(m, k, scope) {
                    continue;
                }
                let e = self.estimate_whitened(&z[m], m, k, n);
                data[(m * kc + k) * l..(m * kc + k + 1) * l].copy_from_slice(e.as_slice());
            }
        }
        EstimateSet { n, num_ues: kc, antennas: l, data }
    }
}

/// Per-link estimate and error covariances at one channel use.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    pub n: usize,
    pub antennas: usize,
    pub phi: Vec<Vec<CMat>>,
    pub rtilde: Vec<Vec<CMat>>,
    pub r_eff: Vec<Vec<CMat>>,
}

impl CovarianceSet {
    fn block(&self, src: &[Vec<CMat>], k: usize, aps: &[usize]) -> CMat {
        let l = self.antennas;
        let mut out = CMat::zeros(aps.len() * l, aps.len() * l);
        for (a, &m) in aps.iter().enumerate() {
            out.view_mut((a * l, a * l), (l, l)).copy_from(&src[m][k]);
        }
        out
    }

    /// Block-diagonal Φ_k restricted to `aps`.
    pub fn phi_block(&self, k: usize, aps: &[usize]) -> CMat {
        self.block(&self.phi, k, aps)
    }

    /// Block-diagonal R̃_k restricted to `aps`.
    pub fn rtilde_block(&self, k: usize, aps: &[usize]) -> CMat {
        self.block(&self.rtilde, k, aps)
    }

    /// Block-diagonal R_eff,k restricted to `aps`.
    pub fn r_block(&self, k: usize, aps: &[usize]) -> CMat {
        self.block(&self.r_eff, k, aps)
    }

    /// Diagonal of R̃_k over `aps`, stacked.
    pub fn rtilde_diag(&self, k: usize, aps: &[usize]) -> Vec<f64> {
        let l = self.antennas;
        let mut v = Vec::with_capacity(aps.len() * l);
        for &m in aps {
            for j in 0..l {
                v.push(self.rtilde[m][k][(j, j)].re);
            }
        }
        v
    }
}

/// Flat `[m][k][j]` store of channel estimates at one channel use.
#[derive(Debug, Clone)]
pub struct EstimateSet {
    pub n: usize,
    pub num_ues: usize,
    pub antennas: usize,
    pub data: Vec<Complex64>,
}

impl EstimateSet {
    #[inline]
    pub fn get(&self, m: usize, k: usize) -> &[Complex64] {
        let base = (m * self.num_ues + k) * self.antennas;
        &self.data[base..base + self.antennas]
    }

    /// Collective estimate of UE k over `aps`.
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Layout, NetworkConfig, Point};
    use crate::linalg::{hermitian_defect, is_psd, trace_re};

    pub(crate) fn small_net(m: usize, k: usize, l: usize, tau: usize, corr: f64) -> NetworkRealization {
        let cfg = NetworkConfig {
            num_aps: m,
            antennas_per_ap: l,
            num_ues: k,
            pilot_length: tau,
            coherence_length: 30,
            correlation: corr,
            ..NetworkConfig::default()
        };
        let layout = Layout {
            ap_positions: (0..m).map(|i| Point { x: 40.0 * i as f64, y: 0.0 }).collect(),
            ue_positions: (0..k).map(|i| Point { x: 15.0 + 25.0 * i as f64, y: 20.0 }).collect(),
        };
        NetworkRealization::from_parts(&cfg, layout, vec![vec![0.0; k]; m]).unwrap()
    }

    fn hw(pn: f64, kt: f64, kr: f64, mode: LoMode, s2: f64) -> HardwareProfile {
        HardwareProfile { sigma2_phi: pn, sigma2_varphi: pn, kappa_t: kt, kappa_r: kr, xi: 1.6 * s2, lo_mode: mode }
    }

    #[test]
    fn ideal_q_matches_textbook() {
        let net = small_net(2, 2, 2, 2, 0.5);
        let s2 = net.config.noise_variance;
        let prof = HardwareProfile { lo_mode: LoMode::Clo, ..HardwareProfile::ideal(s2) };
        let pb = PilotBook::new(2, net.config.pilot_power);
        let est = EstimationModel::build(&net, &prof, &pb);
        for m in 0..2 {
            let mut q = CMat::identity(4, 4).map(|z| z * s2);
            for k in 0..2 {
                let w = pb.sequence(net.clustering.pilot_of[k]);
                q += (w * w.adjoint()).kronecker(&net.r[m][k]);
            }
            assert!((&q - &est.q[m]).norm() < 1e-12 * q.norm());
        }
        // zero drift: Λ = I
        assert_eq!(est.lambda(30, 1), 1.0);
    }

    #[test]
    fn covariance_decomposition_invariants() {
        let net = small_net(3, 3, 2, 2, 0.5);
        let s2 = net.config.noise_variance;
        for mode in [LoMode::Slo, LoMode::Clo] {
            let prof = hw(1e-3, 0.1, 0.12, mode, s2);
            let pb = PilotBook::new(2, net.config.pilot_power);
            let est = EstimationModel::build(&net, &prof, &pb);
            for m in 0..3 {
                assert!(hermitian_defect(&est.q[m]) < 1e-10);
                assert!(is_psd(&est.q[m], 1e-10));
            }
            let cov = est.covariances(10);
            for m in 0..3 {
                for k in 0..3 {
                    assert!(hermitian_defect(&cov.phi[m][k]) < 1e-10);
                    assert!(is_psd(&cov.phi[m][k], 1e-10));
                    assert!(is_psd(&cov.rtilde[m][k], 1e-10));
                }
            }
        }
    }

    #[test]
    fn phi_trace_decreases_with_drift() {
        let net = small_net(2, 2, 2, 2, 0.5);
        let s2 = net.config.noise_variance;
        let prof = hw(1e-3, 0.0, 0.0, LoMode::Slo, s2);
        let pb = PilotBook::new(2, net.config.pilot_power);
        let est = EstimationModel::build(&net, &prof, &pb);
        let mut last = f64::INFINITY;
        for n in 3..=30 {
            let t = trace_re(&est.phi(0, 1, n));
            assert!(t <= last * (1.0 + 1e-12));
            last = t;
        }
    }

    #[test]
    fn perfect_csi_limit() {
        let net = small_net(2, 2, 2, 2, 0.3);
        let s2 = net.config.noise_variance;
        let prof = HardwareProfile { lo_mode: LoMode::Clo, ..HardwareProfile::ideal(s2) };
        let pb = PilotBook::new(2, 1e6);
        let est = EstimationModel::build(&net, &prof, &pb);
        let cov = est.covariances(5);
        for m in 0..2 {
            for k in 0..2 {
                assert!(trace_re(&cov.rtilde[m][k]) < 1e-6 * trace_re(&net.r[m][k]));
            }
        }
    }

    #[test]
    fn distortion_couples_orthogonal_pilots() {
        let net = small_net(1, 2, 2, 2, 0.5);
        let s2 = net.config.noise_variance;
        let rho_p = net.config.pilot_power;
        let pb = PilotBook::new(2, rho_p);
        let ideal_hw = HardwareProfile::ideal(s2);
        let ideal = EstimationModel::build(&net, &ideal_hw, &pb);
        assert!(ideal.cross_covariance(0, 1, 0, 5).norm() < 1e-12 * ideal.phi(0, 0, 5).norm());
        assert_eq!(ideal.distortion_leakage(0, 1, 0, 5, &net, &ideal_hw, rho_p), 0.0);
        let dist_hw = hw(0.0, 0.2, 0.2, LoMode::Slo, s2);
        let dist = EstimationModel::build(&net, &dist_hw, &pb);
        let leak = dist.distortion_leakage(0, 1, 0, 5, &net, &dist_hw, rho_p);
        assert!(leak > 1e-4 * trace_re(&dist.phi(0, 0, 5)));
    }

    #[test]
    fn zero_observation_gives_zero_estimate() {
        let net = small_net(2, 2, 2, 2, 0.5);
        let s2 = net.config.noise_variance;
        let pb = PilotBook::new(2, net.config.pilot_power);
        let est = EstimationModel::build(&net, &HardwareProfile::ideal(s2), &pb);
        let e = est.estimate(&CVec::zeros(4), 0, 0, 5, EstimationScope::Full).unwrap();
        assert_eq!(e.norm(), 0.0);
        assert!(est.estimate(&CVec::zeros(4), 0, 0, 31, EstimationScope::Full).is_err());
    }

    #[test]
    fn scope_is_enforced() {
        // AP 0 serves only UE 0, AP 1 only UE 1, no overlap
        let cfg = NetworkConfig { num_aps: 2, antennas_per_ap: 1, num_ues: 2, pilot_length: 1, coherence_length: 10, ..NetworkConfig::default() };
        let layout = Layout {
            ap_positions: vec![Point { x: 0.0, y: 0.0 }, Point { x: 2000.0, y: 2000.0 }],
            ue_positions: vec![Point { x: 1.0, y: 1.0 }, Point { x: 1999.0, y: 1999.0 }],
        };
        let net = NetworkRealization::from_parts(&cfg, layout, vec![vec![0.0; 2]; 2]).unwrap();
        assert_eq!(net.clustering.partners, vec![vec![0], vec![1]]);
        let pb = PilotBook::new(1, cfg.pilot_power);
        let est = EstimationModel::build(&net, &HardwareProfile::ideal(cfg.noise_variance), &pb);
        let psi = CVec::zeros(1);
        assert!(est.estimate(&psi, 0, 0, 2, EstimationScope::Scalable).is_ok());
        assert_eq!(
            est.estimate(&psi, 0, 1, 2, EstimationScope::Scalable),
            Err(EstimationError::OutOfScope { m: 0, k: 1 })
        );
        assert!(est.estimate(&psi, 0, 1, 2, EstimationScope::Full).is_ok());
    }
}
