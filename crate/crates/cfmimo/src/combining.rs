//! Receive combiners and the conditional MSE they minimize.
//!
//! Every combiner of UE k lives on the antennas of its serving APs; vectors
//! are stored in that restricted coordinate system (`Combiner::aps` lists the
//! APs in order) and can be expanded to the full W-vector on demand.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::channel::ChannelSnapshot;
use crate::estimation::{CovarianceSet, EstimateSet};
use crate::geometry::NetworkRealization;
use crate::impairments::HardwareProfile;
use crate::linalg::{cr, hermitian_pinv, quad_form, CMat, CVec, HermitianSolver, PINV_REL_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CombinerVariant {
    #[serde(rename = "HA_PMMSE")]
    HaPmmse,
    #[serde(rename = "HA_MMSE")]
    HaMmse,
    #[serde(rename = "HU_MMSE")]
    HuMmse,
    #[serde(rename = "HU_PMMSE")]
    HuPmmse,
    #[serde(rename = "MRC")]
    Mrc,
    #[serde(rename = "GENIE_MMSE")]
    GenieMmse,
    #[serde(rename = "GENIE_PMMSE")]
    GeniePmmse,
}

impl CombinerVariant {
    pub const ALL: [CombinerVariant; 7] = [
        CombinerVariant::HaPmmse,
        CombinerVariant::HaMmse,
        CombinerVariant::HuMmse,
        CombinerVariant::HuPmmse,
        CombinerVariant::Mrc,
        CombinerVariant::GenieMmse,
        CombinerVariant::GeniePmmse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CombinerVariant::HaPmmse => "HA_PMMSE",
            CombinerVariant::HaMmse => "HA_MMSE",
            CombinerVariant::HuMmse => "HU_MMSE",
            CombinerVariant::HuPmmse => "HU_PMMSE",
            CombinerVariant::Mrc => "MRC",
            CombinerVariant::GenieMmse => "GENIE_MMSE",
            CombinerVariant::GeniePmmse => "GENIE_PMMSE",
        }
    }

    /// Genie variants use perfect CSI and are scored by the upper bound.
    pub fn is_genie(self) -> bool {
        matches!(self, CombinerVariant::GenieMmse | CombinerVariant::GeniePmmse)
    }

    /// Partial variants only involve the partner set P_k.
    pub fn is_partial(self) -> bool {
        matches!(self, CombinerVariant::HaPmmse | CombinerVariant::HuPmmse | CombinerVariant::GeniePmmse)
    }
}

/// Combiner of one UE on the antennas of `aps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub ue: usize,
    pub aps: Vec<usize>,
    pub v: CVec,
}

impl Combiner {
    /// Full W-vector with zeros outside the serving APs.
    pub fn to_collective(&self, num_aps: usize, l: usize) -> CVec {
        let mut out = CVec::zeros(num_aps * l);
        for (a, &m) in self.aps.iter().enumerate() {
            for j in 0..l {
                out[m * l + j] = self.v[a * l + j];
            }
        }
        out
    }
}

/// Everything a combiner may look at for one channel use of one block.
#[derive(Clone, Copy)]
pub struct CombiningInputs<'a> {
    pub net: &'a NetworkRealization,
    pub profile: &'a HardwareProfile,
    pub cov: &'a CovarianceSet,
    pub est: &'a EstimateSet,
    /// Perfect CSI, required by the genie variants.
    pub truth: Option<&'a ChannelSnapshot>,
}

impl<'a> CombiningInputs<'a> {
    fn rho(&self, i: usize) -> f64 {
        self.net.powers[i]
    }

    fn l(&self) -> usize {
        self.net.config.antennas_per_ap
    }

    /// UEs entering the system matrix of `variant` for UE k.
    pub fn ue_set(&self, variant: CombinerVariant, k: usize) -> Vec<usize> {
        let all = || (0..self.net.config.num_ues).collect::<Vec<_>>();
        match variant {
            CombinerVariant::HaPmmse | CombinerVariant::HuPmmse | CombinerVariant::GeniePmmse => {
                self.net.clustering.partners[k].clone()
            }
            CombinerVariant::HaMmse | CombinerVariant::HuMmse => all(),
            CombinerVariant::GenieMmse => all().into_iter().filter(|&i| i != k).collect(),
            CombinerVariant::Mrc => vec![k],
        }
    }

    /// Hardware-aware system
    /// `Σ_{i∈U} [q_i (ĥ_i ĥ_i^H + R̃_i) + κ_r² ρ_i (diag|ĥ_i|² + diag R̃_i)] + ξ I`
    /// with `q_i = ρ_i (1 + κ_t²)`, restricted to `aps`.
    pub fn hardware_aware_system(&self, aps: &[usize], ues: &[usize]) -> CMat {
        let p = self.profile;
        self.estimate_system(aps, ues, 1.0 + p.kappa_t * p.kappa_t, p.kappa_r * p.kappa_r, p.xi)
    }

    /// Hardware-unaware system `Σ_{i∈U} ρ_i (ĥ_i ĥ_i^H + R̃_i) + σ² I`.
    pub fn hardware_unaware_system(&self, aps: &[usize], ues: &[usize]) -> CMat {
        self.estimate_system(aps, ues, 1.0, 0.0, self.net.config.noise_variance)
    }

    fn estimate_system(&self, aps: &[usize], ues: &[usize], tx: f64, kr2: f64, floor: f64) -> CMat {
        let l = self.l();
        let n = aps.len() * l;
        let mut h = CMat::zeros(n, ues.len());
        for (c, &i) in ues.iter().enumerate() {
            let w = (self.rho(i) * tx).sqrt();
            let e = self.est.stacked(aps, i);
            for r in 0..n {
                h[(r, c)] = e[r] * w;
            }
        }
        let mut a = &h * h.adjoint();
        for (b, &m) in aps.iter().enumerate() {
            for &i in ues {
                let q = self.rho(i) * tx;
                let rt = &self.cov.rtilde[m][i];
                let eh = self.est.get(m, i);
                for r in 0..l {
                    for c in 0..l {
                        a[(b * l + r, b * l + c)] += rt[(r, c)] * q;
                    }
                    a[(b * l + r, b * l + r)] += cr(kr2 * self.rho(i) * (eh[r].norm_sqr() + rt[(r, r)].re));
                }
            }
        }
        for d in 0..n {
            a[(d, d)] += cr(floor);
        }
        a
    }

    /// Perfect-CSI distortion-plus-noise covariance
    /// `Σ_{i∈U} ρ_i (κ_t² h_i h_i^H + κ_r² diag|h_i|²) + ξ I` on `aps`.
    pub fn genie_system(&self, aps: &[usize], ues: &[usize]) -> CMat {
        let truth = self.truth.expect("genie combiners need perfect CSI");
        let p = self.profile;
        let l = self.l();
        let n = aps.len() * l;
        let kt2 = p.kappa_t * p.kappa_t;
        let kr2 = p.kappa_r * p.kappa_r;
        let mut h = CMat::zeros(n, ues.len());
        let mut diag = vec![p.xi; n];
        for (c, &i) in ues.iter().enumerate() {
            let hi = truth.stacked(aps, i);
            let w = (self.rho(i) * kt2).sqrt();
            for r in 0..n {
                h[(r, c)] = hi[r] * w;
                diag[r] += kr2 * self.rho(i) * hi[r].norm_sqr();
            }
        }
        let mut a = &h * h.adjoint();
        for (d, x) in diag.into_iter().enumerate() {
            a[(d, d)] += cr(x);
        }
        a
    }

    /// Combiner of `variant` for UE k.
    pub fn build(&self, variant: CombinerVariant, k: usize) -> Combiner {
        let aps = self.net.clustering.serving_aps(k);
        let ues = self.ue_set(variant, k);
        let v = match variant {
            CombinerVariant::Mrc => self.est.stacked(&aps, k),
            CombinerVariant::GenieMmse | CombinerVariant::GeniePmmse => {
                let c = self.genie_system(&aps, &ues);
                let h = self.truth.expect("genie combiners need perfect CSI").stacked(&aps, k);
                genie_solve(&c, &h) * cr(self.rho(k))
            }
            _ => {
                let a = self.system_for(variant, &aps, &ues);
                HermitianSolver::new(&a).solve_vec(&self.est.stacked(&aps, k)) * cr(self.rho(k))
            }
        };
        Combiner { ue: k, aps, v }
    }

    fn system_for(&self, variant: CombinerVariant, aps: &[usize], ues: &[usize]) -> CMat {
        match variant {
            CombinerVariant::HaPmmse | CombinerVariant::HaMmse => self.hardware_aware_system(aps, ues),
            CombinerVariant::HuPmmse | CombinerVariant::HuMmse => self.hardware_unaware_system(aps, ues),
            CombinerVariant::GenieMmse | CombinerVariant::GeniePmmse => self.genie_system(aps, ues),
            CombinerVariant::Mrc => unreachable!("MRC has no system matrix"),
        }
    }

    /// Combiners of all UEs. UEs with identical support and UE set share one
    /// factorization.
    pub fn build_all(&self, variant: CombinerVariant) -> Vec<Combiner> {
        let kc = self.net.config.num_ues;
        if matches!(variant, CombinerVariant::Mrc | CombinerVariant::GenieMmse | CombinerVariant::GeniePmmse) {
            return (0..kc).map(|k| self.build(variant, k)).collect();
        }
        let mut groups: BTreeMap<(Vec<usize>, Vec<usize>), Vec<usize>> = BTreeMap::new();
        for k in 0..kc {
            groups
                .entry((self.net.clustering.serving_aps(k), self.ue_set(variant, k)))
                .or_default()
                .push(k);
        }
        let mut out: Vec<Option<Combiner>> = vec![None; kc];
        for ((aps, ues), members) in groups {
            if aps.is_empty() {
                for k in members {
                    out[k] = Some(Combiner { ue: k, aps: Vec::new(), v: CVec::zeros(0) });
                }
                continue;
            }
            let solver = HermitianSolver::new(&self.system_for(variant, &aps, &ues));
            let n = aps.len() * self.l();
            let mut rhs = CMat::zeros(n, members.len());
            for (c, &k) in members.iter().enumerate() {
                let e = self.est.stacked(&aps, k);
                for r in 0..n {
                    rhs[(r, c)] = e[r] * self.rho(k);
                }
            }
            let sol = solver.solve_mat(&rhs);
            for (c, &k) in members.iter().enumerate() {
                out[k] = Some(Combiner { ue: k, aps: aps.clone(), v: sol.column(c).into_owned() });
            }
        }
        out.into_iter().map(|c| c.expect("every UE assigned")).collect()
    }

    /// Conditional MSE `E{|v^H y - s_k|² | Ĥ}` with the interference and
    /// distortion sums taken over `ues`.
    pub fn conditional_mse(&self, comb: &Combiner, ues: &[usize]) -> f64 {
        let k = comb.ue;
        let rho = self.rho(k);
        if comb.aps.is_empty() {
            return rho;
        }
        let a = self.hardware_aware_system(&comb.aps, ues);
        let h = self.est.stacked(&comb.aps, k);
        let cross = (comb.v.adjoint() * &h)[(0, 0)];
        quad_form(&a, &comb.v) - 2.0 * rho * cross.re + rho
    }

    /// Upper-bound SINR `ρ_k |v^H h_k|² / (v^H C v)` where C excludes UE k
    /// and has no multi-user interference.
    pub fn upper_bound_sinr(&self, comb: &Combiner) -> f64 {
        let k = comb.ue;
        if comb.aps.is_empty() || comb.v.norm() == 0.0 {
            return 0.0;
        }
        let others: Vec<usize> = (0..self.net.config.num_ues).filter(|&i| i != k).collect();
        let c = self.genie_system(&comb.aps, &others);
        let h = self.truth.expect("upper bound needs perfect CSI").stacked(&comb.aps, k);
        let num = (comb.v.adjoint() * h)[(0, 0)].norm_sqr() * self.rho(k);
        num / quad_form(&c, &comb.v)
    }
}

/// `C^† h` with Cholesky when C is PD and the eigen pseudo-inverse otherwise.
fn genie_solve(c: &CMat, h: &CVec) -> CVec {
    match nalgebra::Cholesky::new(c.clone()) {
        Some(ch) => ch.solve(h),
        None => hermitian_pinv(c, PINV_REL_TOL) * h,
    }
}

/// Scalar helper used in tests: `1×1` HA-PMMSE closed form.
pub fn scalar_ha_combiner(rho: f64, hhat: Complex64, rtilde: f64, kappa_t: f64, kappa_r: f64, xi: f64) -> Complex64 {
    let g = hhat.norm_sqr() + rtilde;
    hhat * (rho / (rho * (1.0 + kappa_t * kappa_t) * g + kappa_r * kappa_r * rho * g + xi))
}
