//! Network layout, large-scale fading, spatial correlation and dynamic
//! cooperation clustering with pilot assignment.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

use crate::linalg::{c, hermitian_sqrt, CMat};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
}

/// Noise power in watts for a per-Hz density (dBm/Hz) and bandwidth (Hz).
pub fn noise_power_w(density_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    dbm_to_w(density_dbm_per_hz + 10.0 * bandwidth_hz.log10())
}

pub fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) / 1000.0
}

pub fn w_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1000.0).log10()
}

fn default_corr() -> f64 {
    0.5
}
fn default_window() -> f64 {
    40.0
}
fn default_min_distance() -> f64 {
    1.0
}

/// Static system dimensions and link-budget parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_ues: usize,
    /// Side of the square deployment area in meters.
    pub area_side: f64,
    pub coherence_length: usize,
    pub pilot_length: usize,
    pub carrier_freq: f64,
    /// UE data power in W.
    pub ue_power: f64,
    /// UE pilot power in W.
    pub pilot_power: f64,
    /// Noise power per channel use in W.
    pub noise_variance: f64,
    /// Magnitude of the exponential correlation coefficient.
    #[serde(default = "default_corr")]
    pub correlation: f64,
    /// Serving window relative to the UE's strongest AP, dB.
    #[serde(default = "default_window")]
    pub serving_window_db: f64,
    #[serde(default = "default_min_distance")]
    pub min_distance: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_aps: 200,
            antennas_per_ap: 3,
            num_ues: 40,
            area_side: 2000.0,
            coherence_length: 200,
            pilot_length: 20,
            carrier_freq: 2e9,
            ue_power: 0.1,
            pilot_power: 0.1,
            noise_variance: noise_power_w(-174.0, 1e5),
            correlation: default_corr(),
            serving_window_db: default_window(),
            min_distance: default_min_distance(),
        }
    }
}

impl NetworkConfig {
    /// Desk-scale preset: L = 2, τ = τ_c / 10, 1 km side.
    pub fn desk(num_aps: usize, num_ues: usize) -> Self {
        NetworkConfig {
            num_aps,
            antennas_per_ap: 2,
            num_ues,
            area_side: 1000.0,
            ..Default::default()
        }
    }

    pub fn data_length(&self) -> usize {
        self.coherence_length - self.pilot_length
    }

    /// Total number of antennas W = M L.
    pub fn total_antennas(&self) -> usize {
        self.num_aps * self.antennas_per_ap
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidConfig(m.to_string()));
        if self.num_aps == 0 || self.antennas_per_ap == 0 {
            return bad("num_aps and antennas_per_ap must be >= 1");
        }
        if self.pilot_length == 0 || self.pilot_length >= self.coherence_length {
            return bad("need 1 <= pilot_length < coherence_length");
        }
        if !(self.area_side > 0.0) {
            return bad("area_side must be positive");
        }
        if !(self.ue_power > 0.0 && self.pilot_power > 0.0) {
            return bad("powers must be positive");
        }
        if !(self.noise_variance > 0.0) {
            return bad("noise_variance must be positive");
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return bad("correlation must lie in [0, 1)");
        }
        if !(self.serving_window_db >= 0.0) || !(self.min_distance > 0.0) {
            return bad("serving_window_db >= 0 and min_distance > 0 required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn dist(&self, o: &Point) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub ap_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
}

/// Uniform AP and UE positions in the square. UEs and APs use separate
/// streams so UE positions do not move when M changes.
pub fn sample_layout(config: &NetworkConfig, seed: u64) -> Layout {
    let side = config.area_side;
    let draw = |stream: Stream, n: usize| {
        let mut rng = stream_rng(seed, stream);
        (0..n)
            .map(|_| Point { x: rng.random::<f64>() * side, y: rng.random::<f64>() * side })
            .collect::<Vec<_>>()
    };
    Layout {
        ap_positions: draw(Stream::ApLayout, config.num_aps),
        ue_positions: draw(Stream::UeLayout, config.num_ues),
    }
}

/// Median pathloss in dB at distance `d` meters.
pub fn pathloss_db(d: f64) -> Result<f64, GeometryError> {
    if !(d > 0.0) {
        return Err(GeometryError::NonPositiveDistance(d));
    }
    Ok(-30.5 - 36.7 * d.log10())
}

/// Shadow covariance between UEs at distance `delta` meters (dB²).
pub fn shadow_covariance(delta: f64) -> f64 {
    16.0 * 2f64.powf(-delta / 9.0)
}

/// Correlated shadowing in dB, indexed `[m][k]`. For each AP the K-vector
/// has covariance `16 * 2^{-δ_kj/9}`; different APs are independent.
pub fn sample_shadowing<R: Rng + ?Sized>(
    ue_positions: &[Point],
    num_aps: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let k = ue_positions.len();
    if k == 0 {
        return vec![Vec::new(); num_aps];
    }
    let factor = shadow_cholesky(ue_positions);
    (0..num_aps)
        .map(|_| {
            let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let f = &factor * z;
            f.iter().copied().collect()
        })
        .collect()
}

fn shadow_cholesky(ue_positions: &[Point]) -> DMatrix<f64> {
    let k = ue_positions.len();
    let mut cov = DMatrix::from_fn(k, k, |i, j| {
        shadow_covariance(ue_positions[i].dist(&ue_positions[j]))
    });
    let min_eig = cov.clone().symmetric_eigen().eigenvalues.min();
    if min_eig < 0.0 {
        for i in 0..k {
            cov[(i, i)] += 1e-9;
        }
    }
    match cov.clone().cholesky() {
        Some(ch) => ch.l(),
        None => {
            for i in 0..k {
                cov[(i, i)] += 1e-9;
            }
            cov.cholesky().expect("shadow covariance repaired").l()
        }
    }
}

/// Exponential correlation `R_ij = β r^{|i-j|} e^{jπ(i-j) sin θ}`,
/// renormalized so `tr(R)/L = β`.
pub fn build_correlation(beta: f64, l: usize, r: f64, angle: f64) -> CMat {
    let s = angle.sin();
    let mut m = CMat::from_fn(l, l, |i, j| {
        let d = i as f64 - j as f64;
        let mag = beta * r.powf(d.abs());
        let ph = PI * d * s;
        c(mag * ph.cos(), mag * ph.sin())
    });
    let tr: f64 = (0..l).map(|i| m[(i, i)].re).sum::<f64>() / l as f64;
    if tr > 0.0 {
        let scale = beta / tr;
        m.iter_mut().for_each(|z| *z *= scale);
    }
    m
}

/// DCC serving indicators, pilot assignment and partner sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// `serving[m][k]` is true when AP m serves UE k.
    pub serving: Vec<Vec<bool>>,
    /// 0-based pilot index per UE.
    pub pilot_of: Vec<usize>,
    /// Strongest-AP (master) per UE.
    pub master_of: Vec<usize>,
    /// Sorted partner sets P_k (always contain k).
    pub partners: Vec<Vec<usize>>,
}

impl Clustering {
    /// APs serving UE `k`, ascending.
    pub fn serving_aps(&self, k: usize) -> Vec<usize> {
        (0..self.serving.len()).filter(|&m| self.serving[m][k]).collect()
    }

    /// UEs served by AP `m`, ascending.
    pub fn served_ues(&self, m: usize) -> Vec<usize> {
        (0..self.serving[m].len()).filter(|&k| self.serving[m][k]).collect()
    }

    pub fn is_full_service(&self) -> bool {
        self.serving.iter().all(|row| row.iter().all(|&b| b))
    }
}

/// Pilot assignment and serving sets for large-scale coefficients
/// `beta[m][k]` (linear).
///
/// The first τ UEs receive distinct pilots; later UEs take the pilot with the
/// least contamination at their master AP among pilots still free there. Each
/// AP then serves, per pilot, the strongest eligible UE within
/// `window_db` of that UE's own strongest link.
pub fn assign_clusters_and_pilots(beta: &[Vec<f64>], tau: usize, window_db: f64) -> Clustering {
    let m_count = beta.len();
    let k_count = if m_count > 0 { beta[0].len() } else { 0 };
    let mut serving = vec![vec![false; k_count]; m_count];
    let mut pilot_of = vec![0usize; k_count];
    let mut master_of = vec![0usize; k_count];
    // used[m][t] = UE occupying pilot t at AP m
    let mut used: Vec<Vec<Option<usize>>> = vec![vec![None; tau]; m_count];

    let order_aps = |k: usize| {
        let mut idx: Vec<usize> = (0..m_count).collect();
        idx.sort_by(|&a, &b| beta[b][k].partial_cmp(&beta[a][k]).unwrap().then(a.cmp(&b)));
        idx
    };

    for k in 0..k_count {
        let ranked = order_aps(k);
        let mut master = ranked[0];
        let pilot = if k < tau {
            k
        } else {
            // move to the next strongest AP only if the master has no free slot
            if used[master].iter().all(|u| u.is_some()) {
                if let Some(&alt) = ranked.iter().find(|&&m| used[m].iter().any(|u| u.is_none())) {
                    master = alt;
                }
            }
            let free: Vec<usize> = (0..tau).filter(|&t| used[master][t].is_none()).collect();
            let candidates = if free.is_empty() { (0..tau).collect() } else { free };
            let contamination = |t: usize| -> f64 {
                (0..k).filter(|&i| pilot_of[i] == t).map(|i| beta[master][i]).sum()
            };
            *candidates
                .iter()
                .min_by(|&&a, &&b| contamination(a).partial_cmp(&contamination(b)).unwrap().then(a.cmp(&b)))
                .unwrap()
        };
        pilot_of[k] = pilot;
        master_of[k] = master;
        if used[master][pilot].is_none() {
            used[master][pilot] = Some(k);
            serving[master][k] = true;
        }
    }

    let window = 10f64.powf(-window_db / 10.0);
    for m in 0..m_count {
        for t in 0..tau {
            if used[m][t].is_some() {
                continue;
            }
            let best = (0..k_count)
                .filter(|&k| pilot_of[k] == t)
                .filter(|&k| beta[m][k] >= window * beta[master_of[k]][k])
                .max_by(|&a, &b| beta[m][a].partial_cmp(&beta[m][b]).unwrap().then(b.cmp(&a)));
            if let Some(k) = best {
                used[m][t] = Some(k);
                serving[m][k] = true;
            }
        }
    }

    let partners = partner_sets(&serving, k_count);
    Clustering { serving, pilot_of, master_of, partners }
}

/// `P_k = { i : serving sets of i and k overlap }`, plus k itself.
pub fn partner_sets(serving: &[Vec<bool>], k_count: usize) -> Vec<Vec<usize>> {
    (0..k_count)
        .map(|k| {
            (0..k_count)
                .filter(|&i| i == k || serving.iter().any(|row| row[i] && row[k]))
                .collect()
        })
        .collect()
}

/// Full network draw: layout, large-scale fading, correlation, clustering.
#[derive(Debug, Clone)]
pub struct NetworkRealization {
    pub config: NetworkConfig,
    pub layout: Layout,
    /// Shadowing in dB, `[m][k]`.
    pub shadow: Vec<Vec<f64>>,
    /// Linear large-scale coefficients, `[m][k]`.
    pub beta: Vec<Vec<f64>>,
    /// Spatial correlation `R[m][k]`.
    pub r: Vec<Vec<CMat>>,
    /// Hermitian square roots of `R[m][k]`.
    pub r_sqrt: Vec<Vec<CMat>>,
    pub clustering: Clustering,
    /// Per-UE data power (W).
    pub powers: Vec<f64>,
}

impl NetworkRealization {
    pub fn generate(config: &NetworkConfig, seed: u64) -> Result<Self, GeometryError> {
        config.validate()?;
        let layout = sample_layout(config, seed);
        let mut rng = stream_rng(seed, Stream::Shadowing);
        let shadow = sample_shadowing(&layout.ue_positions, config.num_aps, &mut rng);
        Self::from_parts(config, layout, shadow)
    }

    /// Build from given positions and shadowing (dB, `[m][k]`).
    pub fn from_parts(
        config: &NetworkConfig,
        layout: Layout,
        shadow: Vec<Vec<f64>>,
    ) -> Result<Self, GeometryError> {
        config.validate()?;
        let (mc, kc, l) = (config.num_aps, config.num_ues, config.antennas_per_ap);
        let mut beta = vec![vec![0.0; kc]; mc];
        let mut r = Vec::with_capacity(mc);
        let mut r_sqrt = Vec::with_capacity(mc);
        for m in 0..mc {
            let ap = layout.ap_positions[m];
            let mut rm = Vec::with_capacity(kc);
            let mut sm = Vec::with_capacity(kc);
            for k in 0..kc {
                let ue = layout.ue_positions[k];
                let d = ap.dist(&ue).max(config.min_distance);
                let db = pathloss_db(d)? + shadow[m][k];
                beta[m][k] = 10f64.powf(db / 10.0);
                let angle = (ue.y - ap.y).atan2(ue.x - ap.x);
                let rmk = build_correlation(beta[m][k], l, config.correlation, angle);
                sm.push(hermitian_sqrt(&rmk));
                rm.push(rmk);
            }
            r.push(rm);
            r_sqrt.push(sm);
        }
        let clustering = assign_clusters_and_pilots(&beta, config.pilot_length, config.serving_window_db);
        Ok(NetworkRealization {
            config: config.clone(),
            layout,
            shadow,
            beta,
            r,
            r_sqrt,
            clustering,
            powers: vec![config.ue_power; kc],
        })
    }

    /// Replace the clustering with full service (every AP serves every UE).
    pub fn with_full_service(mut self) -> Self {
        let (mc, kc) = (self.config.num_aps, self.config.num_ues);
        self.clustering.serving = vec![vec![true; kc]; mc];
        self.clustering.partners = partner_sets(&self.clustering.serving, kc);
        self
    }

    /// Write the layout as CSV with columns entity_type, index, x_m, y_m.
    pub fn write_layout_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["entity_type", "index", "x_m", "y_m"])?;
        for (i, p) in self.layout.ap_positions.iter().enumerate() {
            w.write_record(["ap".to_string(), i.to_string(), p.x.to_string(), p.y.to_string()])?;
        }
        for (i, p) in self.layout.ue_positions.iter().enumerate() {
            w.write_record(["ue".to_string(), i.to_string(), p.x.to_string(), p.y.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermitian_defect, is_psd, trace_re};
    use proptest::prelude::*;

    #[test]
    fn pathloss_reference_points() {
        assert!((pathloss_db(1.0).unwrap() + 30.5).abs() < 1e-12);
        assert!((pathloss_db(10.0).unwrap() + 67.2).abs() < 1e-12);
        assert!((pathloss_db(100.0).unwrap() + 103.9).abs() < 1e-12);
        assert_eq!(pathloss_db(0.0), Err(GeometryError::NonPositiveDistance(0.0)));
        assert!(pathloss_db(-3.0).is_err());
    }

    #[test]
    fn shadow_covariance_points() {
        assert_eq!(shadow_covariance(0.0), 16.0);
        assert!((shadow_covariance(9.0) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn noise_power_default() {
        let s2 = noise_power_w(-174.0, 1e5);
        assert!((w_to_dbm(s2) + 124.0).abs() < 1e-9);
    }

    #[test]
    fn layout_is_deterministic_and_inside() {
        let cfg = NetworkConfig::default();
        let a = sample_layout(&cfg, 7);
        let b = sample_layout(&cfg, 7);
        assert_eq!(a, b);
        assert_eq!(a.ap_positions.len(), 200);
        assert_eq!(a.ue_positions.len(), 40);
        for p in a.ap_positions.iter().chain(a.ue_positions.iter()) {
            assert!((0.0..=2000.0).contains(&p.x) && (0.0..=2000.0).contains(&p.y));
        }
    }

    #[test]
    fn ue_positions_do_not_depend_on_ap_count() {
        let a = sample_layout(&NetworkConfig::desk(20, 10), 3);
        let b = sample_layout(&NetworkConfig::desk(80, 10), 3);
        assert_eq!(a.ue_positions, b.ue_positions);
    }

    #[test]
    fn uncorrelated_case_is_scaled_identity() {
        let r = build_correlation(2.5, 3, 0.0, 0.4);
        assert!((r - CMat::identity(3, 3).map(|z| z * 2.5)).norm() < 1e-15);
    }

    #[test]
    fn single_ue_cluster() {
        let beta = vec![vec![1e-8], vec![1e-10], vec![1e-14]];
        let cl = assign_clusters_and_pilots(&beta, 2, 40.0);
        assert_eq!(cl.serving_aps(0), vec![0, 1]);
        assert_eq!(cl.partners[0], vec![0]);
    }

    #[test]
    fn disjoint_serving_sets() {
        let beta = vec![vec![1e-6, 1e-14], vec![1e-14, 1e-6]];
        let cl = assign_clusters_and_pilots(&beta, 1, 40.0);
        assert_eq!(cl.partners, vec![vec![0], vec![1]]);
        assert_eq!(cl.pilot_of, vec![0, 0]);
    }

    #[test]
    fn full_service_with_enough_pilots() {
        let beta = vec![vec![1e-8, 2e-8, 3e-8], vec![2e-8, 1e-8, 1e-8]];
        let cl = assign_clusters_and_pilots(&beta, 3, 40.0);
        assert!(cl.is_full_service());
        assert!(cl.partners.iter().all(|p| p.len() == 3));
    }

    #[test]
    fn shadowing_empirical_covariance() {
        // three UEs at 0, 9 and 30 m along a line
        let ues = vec![Point { x: 0.0, y: 0.0 }, Point { x: 9.0, y: 0.0 }, Point { x: 30.0, y: 0.0 }];
        let mut rng = stream_rng(11, Stream::Shadowing);
        let draws = 100_000;
        let f = sample_shadowing(&ues, draws, &mut rng);
        for i in 0..3 {
            for j in 0..3 {
                let prods: Vec<f64> = f.iter().map(|v| v[i] * v[j]).collect();
                let mean = prods.iter().sum::<f64>() / draws as f64;
                let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
                let se = (var / draws as f64).sqrt();
                let target = shadow_covariance(ues[i].dist(&ues[j]));
                assert!((mean - target).abs() < 3.0 * se, "({i},{j}) {mean} vs {target} se {se}");
            }
        }
    }

    #[test]
    fn coincident_ues_are_repaired() {
        let ues = vec![Point { x: 5.0, y: 5.0 }; 3];
        let mut rng = stream_rng(1, Stream::Shadowing);
        let f = sample_shadowing(&ues, 4, &mut rng);
        assert!(f.iter().flatten().all(|x| x.is_finite()));
    }

    #[test]
    fn layout_csv_has_header_and_rows() {
        let cfg = NetworkConfig::desk(3, 2);
        let net = NetworkRealization::generate(&cfg, 1).unwrap();
        let mut buf = Vec::new();
        net.write_layout_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("entity_type,index,x_m,y_m\n"));
        assert_eq!(s.lines().count(), 6);
    }

    proptest! {
        #[test]
        fn correlation_trace_and_psd(beta in 1e-14f64..1e-2, l in 1usize..6, r in 0.0f64..0.95, ang in -3.2f64..3.2) {
            let m = build_correlation(beta, l, r, ang);
            let tr = trace_re(&m) / l as f64;
            prop_assert!(((tr - beta) / beta).abs() < 1e-12);
            prop_assert!(hermitian_defect(&m) < 1e-12);
            prop_assert!(is_psd(&m, 1e-12));
        }

        #[test]
        fn clustering_invariants(seed in 0u64..500, m in 1usize..12, k in 1usize..12, tau in 1usize..6) {
            let cfg = NetworkConfig { pilot_length: tau, coherence_length: 10 * tau, ..NetworkConfig::desk(m, k) };
            let net = NetworkRealization::generate(&cfg, seed).unwrap();
            let cl = &net.clustering;
            for ap in 0..m {
                for t in 0..tau {
                    let n = (0..k).filter(|&u| cl.serving[ap][u] && cl.pilot_of[u] == t).count();
                    prop_assert!(n <= 1);
                }
                prop_assert!(cl.served_ues(ap).len() <= tau);
            }
            for u in 0..k {
                prop_assert!(cl.partners[u].contains(&u));
                prop_assert!(!cl.serving_aps(u).is_empty() || k > m * tau);
                for &i in &cl.partners[u] {
                    prop_assert!(cl.partners[i].contains(&u));
                }
            }
        }
    }
}
