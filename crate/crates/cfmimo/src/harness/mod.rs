//! Configuration, experiment orchestration and result files.
//!
//! A run expands the experiment into cases ([`plan::plan`]), evaluates each
//! case with the Monte-Carlo bounds, the deterministic equivalent or both,
//! and writes CSV tables plus a JSON manifest. Every case of a run uses the
//! same master seed, so comparisons between cases are paired.

pub mod config;
pub mod plan;
pub mod validate;

use crate::combining::CombinerVariant;
use crate::deterministic::{de_profile, DeReport, DeSettings};
use crate::evaluation::{channel_use_grid, evaluate, Bound, EvalSettings, EvaluationReport, Scenario};
use crate::geometry::{w_to_dbm, NetworkRealization};
use config::{ExperimentId, RunConfig};
use plan::{estimate_memory_mb, Case};
use serde::Serialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config key `{path}`: {message}")]
    ConfigKey { path: String, message: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("case {case} needs about {estimate_mb:.0} MiB, above the cap of {cap_mb:.0} MiB")]
    Infeasible { case: String, estimate_mb: f64, cap_mb: f64 },
    #[error("case {case}: {message}")]
    Case { case: String, message: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    De,
    Compare,
}

/// One (case, variant, channel use, UE) line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRow {
    pub experiment: String,
    pub case: String,
    pub variant: String,
    pub bound: &'static str,
    pub lo_mode: &'static str,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub rho_dbm: f64,
    pub kappa_t: f64,
    pub kappa_r: f64,
    pub xi_over_sigma2: f64,
    pub sigma2_phi: f64,
    pub sigma2_varphi: f64,
    pub n: usize,
    pub ue_index: usize,
    /// Pre-log times log2(1 + SINR) at this channel use.
    pub se_bits_per_hz: f64,
    pub sinr: f64,
    pub sinr_std_err: f64,
    pub desired: f64,
    pub channel_variance: f64,
    pub multiuser: f64,
    pub transmit_distortion: f64,
    pub receive_distortion: f64,
    pub atn: f64,
}

/// Channel-use averaged SE of one UE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeRow {
    pub experiment: String,
    pub case: String,
    pub variant: String,
    pub bound: &'static str,
    pub lo_mode: &'static str,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub rho_dbm: f64,
    pub kappa_t: f64,
    pub kappa_r: f64,
    pub xi_over_sigma2: f64,
    pub sigma2_phi: f64,
    pub sigma2_varphi: f64,
    pub ue_index: usize,
    pub se_bits_per_hz: f64,
    pub se_std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub case: String,
    pub ue_index: usize,
    pub n: usize,
    pub mc_sinr: f64,
    pub mc_sinr_std_err: f64,
    pub de_sinr: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSeRow {
    pub case: String,
    pub ue_index: usize,
    pub mc_se: f64,
    pub mc_se_std_err: f64,
    pub de_se: f64,
    pub rel_err: f64,
}

/// Summary statistics of |relative error|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorQuantiles {
    pub count: usize,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
    pub within_10pct: f64,
}

impl ErrorQuantiles {
    pub fn of(rel: impl Iterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = rel.map(f64::abs).filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| if v.is_empty() { f64::NAN } else { v[((v.len() - 1) as f64 * p).round() as usize] };
        let within = v.iter().filter(|&&x| x <= 0.1).count() as f64 / v.len().max(1) as f64;
        ErrorQuantiles { count: v.len(), median: q(0.5), p90: q(0.9), max: q(1.0), within_10pct: within }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareSummary {
    pub sinr: ErrorQuantiles,
    pub se: ErrorQuantiles,
}

/// Evaluated case: the inputs plus whichever reports the mode produced.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub case: Case,
    pub grid: Vec<usize>,
    pub mc: Option<EvaluationReport>,
    pub de: Option<DeReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub experiment: ExperimentId,
    pub mode: Mode,
    pub cases: Vec<CaseResult>,
    pub points: Vec<PointRow>,
    pub se: Vec<SeRow>,
    pub compare: Option<(Vec<CompareRow>, Vec<CompareSeRow>, CompareSummary)>,
    pub warnings: Vec<String>,
}

struct Tags {
    experiment: String,
    case: String,
    lo_mode: &'static str,
    m: usize,
    l: usize,
    k: usize,
    rho_dbm: f64,
    kappa_t: f64,
    kappa_r: f64,
    xi_over_sigma2: f64,
    sigma2_phi: f64,
    sigma2_varphi: f64,
}

impl Tags {
    fn of(exp: ExperimentId, c: &Case) -> Self {
        let n = &c.network;
        let p = &c.profile;
        Tags {
            experiment: exp.as_str().to_string(),
            case: c.label.clone(),
            lo_mode: p.lo_mode.as_str(),
            m: n.num_aps,
            l: n.antennas_per_ap,
            k: n.num_ues,
            rho_dbm: w_to_dbm(n.ue_power),
            kappa_t: p.kappa_t,
            kappa_r: p.kappa_r,
            xi_over_sigma2: p.xi / n.noise_variance,
            sigma2_phi: p.sigma2_phi,
            sigma2_varphi: p.sigma2_varphi,
        }
    }

    fn point(&self, variant: &str, bound: &'static str, n: usize, ue: usize) -> PointRow {
        PointRow {
            experiment: self.experiment.clone(),
            case: self.case.clone(),
            variant: variant.to_string(),
            bound,
            lo_mode: self.lo_mode,
            m: self.m,
            l: self.l,
            k: self.k,
            rho_dbm: self.rho_dbm,
            kappa_t: self.kappa_t,
            kappa_r: self.kappa_r,
            xi_over_sigma2: self.xi_over_sigma2,
            sigma2_phi: self.sigma2_phi,
            sigma2_varphi: self.sigma2_varphi,
            n,
            ue_index: ue,
            se_bits_per_hz: 0.0,
            sinr: 0.0,
            sinr_std_err: 0.0,
            desired: 0.0,
            channel_variance: 0.0,
            multiuser: 0.0,
            transmit_distortion: 0.0,
            receive_distortion: 0.0,
            atn: 0.0,
        }
    }

    fn se(&self, variant: &str, bound: &'static str, ue: usize, se: f64, se_std_err: f64) -> SeRow {
        SeRow {
            experiment: self.experiment.clone(),
            case: self.case.clone(),
            variant: variant.to_string(),
            bound,
            lo_mode: self.lo_mode,
            m: self.m,
            l: self.l,
            k: self.k,
            rho_dbm: self.rho_dbm,
            kappa_t: self.kappa_t,
            kappa_r: self.kappa_r,
            xi_over_sigma2: self.xi_over_sigma2,
            sigma2_phi: self.sigma2_phi,
            sigma2_varphi: self.sigma2_varphi,
            ue_index: ue,
            se_bits_per_hz: se,
            se_std_err,
        }
    }
}

fn bound_str(b: Bound) -> &'static str {
    match b {
        Bound::Lower => "lower",
        Bound::Upper => "upper",
    }
}

fn prelog(c: &Case) -> f64 {
    c.network.data_length() as f64 / c.network.coherence_length as f64
}

fn mc_rows(exp: ExperimentId, c: &Case, rep: &EvaluationReport) -> (Vec<PointRow>, Vec<SeRow>) {
    let tags = Tags::of(exp, c);
    let pl = prelog(c);
    let points = rep
        .points
        .iter()
        .map(|p| {
            let d = p.decompose();
            PointRow {
                se_bits_per_hz: pl * p.rate,
                sinr: p.sinr,
                sinr_std_err: p.sinr_std_err,
                desired: d.desired,
                channel_variance: d.channel_variance,
                multiuser: d.multiuser,
                transmit_distortion: d.transmit_distortion,
                receive_distortion: d.receive_distortion,
                atn: d.amplified_noise,
                ..tags.point(p.variant.as_str(), bound_str(p.bound), p.n, p.ue)
            }
        })
        .collect();
    let se = rep
        .ue_se
        .iter()
        .map(|s| tags.se(s.variant.as_str(), bound_str(s.bound), s.ue, s.se, s.se_std_err))
        .collect();
    (points, se)
}

/// DE rows share the schema; the breakdown is normalized by ρ_k and the
/// transmit column holds the UE's own distortion term.
fn de_rows(exp: ExperimentId, c: &Case, rep: &DeReport) -> (Vec<PointRow>, Vec<SeRow>) {
    let tags = Tags::of(exp, c);
    let pl = prelog(c);
    let points = rep
        .points
        .iter()
        .map(|p| {
            let b = &p.budget;
            PointRow {
                se_bits_per_hz: pl * (1.0 + p.gamma).log2(),
                sinr: p.gamma,
                desired: b.desired,
                channel_variance: b.channel_variance,
                multiuser: b.multiuser,
                transmit_distortion: b.self_distortion,
                receive_distortion: b.rx_distortion,
                atn: b.atn,
                ..tags.point("DE", "lower", p.n, p.ue)
            }
        })
        .collect();
    let se = rep.ue_se.iter().map(|&(k, se)| tags.se("DE", "lower", k, se, 0.0)).collect();
    (points, se)
}

fn compare_rows(c: &Case, mc: &EvaluationReport, de: &DeReport) -> (Vec<CompareRow>, Vec<CompareSeRow>) {
    let v = CombinerVariant::HaPmmse;
    let rel = |a: f64, b: f64| if b > 0.0 { a / b - 1.0 } else { f64::NAN };
    let mut pts = Vec::new();
    for d in &de.points {
        if let Some(p) = mc.point(v, d.n, d.ue) {
            pts.push(CompareRow {
                case: c.label.clone(),
                ue_index: d.ue,
                n: d.n,
                mc_sinr: p.sinr,
                mc_sinr_std_err: p.sinr_std_err,
                de_sinr: d.gamma,
                rel_err: rel(d.gamma, p.sinr),
            });
        }
    }
    let se = (0..c.network.num_ues)
        .filter_map(|k| {
            let m = mc.se(v, k)?;
            Some(CompareSeRow {
                case: c.label.clone(),
                ue_index: k,
                mc_se: m.se,
                mc_se_std_err: m.se_std_err,
                de_se: de.se(k),
                rel_err: rel(de.se(k), m.se),
            })
        })
        .collect();
    (pts, se)
}

/// Evaluates one case. Comparison runs score HA-PMMSE only.
pub fn run_case(
    exp: &config::ExperimentSpec,
    case: &Case,
    mode: Mode,
    workers: usize,
) -> Result<CaseResult, HarnessError> {
    let n = &case.network;
    let grid = channel_use_grid(n.pilot_length, n.coherence_length, exp.grid_stride);
    let est = estimate_memory_mb(case, grid.len(), workers.max(1));
    if est > exp.memory_cap_mb {
        return Err(HarnessError::Infeasible { case: case.label.clone(), estimate_mb: est, cap_mb: exp.memory_cap_mb });
    }
    let fail = |m: String| HarnessError::Case { case: case.label.clone(), message: m };
    let net = NetworkRealization::generate(n, exp.master_seed).map_err(|e| fail(e.to_string()))?;
    let scn = Scenario::new(net, case.profile);
    let variants = match mode {
        Mode::Compare => vec![CombinerVariant::HaPmmse],
        _ => case.variants.clone(),
    };
    let mc = if mode == Mode::De {
        None
    } else {
        let set = EvalSettings::new(&scn, exp.trials, exp.master_seed, exp.grid_stride, variants);
        Some(evaluate(&scn, &set).map_err(|e| fail(e.to_string()))?)
    };
    let de = if mode == Mode::Simulate {
        None
    } else {
        Some(de_profile(&scn, &grid, &DeSettings::default()).map_err(|e| fail(e.to_string()))?)
    };
    Ok(CaseResult { case: case.clone(), grid, mc, de })
}

/// Runs every case of the experiment in order.
pub fn run(cfg: &RunConfig, mode: Mode, workers: usize) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let exp = cfg.experiment.id;
    let cases = plan::plan(cfg);
    let mut out = RunOutput {
        experiment: exp,
        mode,
        cases: Vec::new(),
        points: Vec::new(),
        se: Vec::new(),
        compare: None,
        warnings: Vec::new(),
    };
    let mut cmp_pts = Vec::new();
    let mut cmp_se = Vec::new();
    for case in &cases {
        let r = run_case(&cfg.experiment, case, mode, workers)?;
        if let Some(mc) = &r.mc {
            let (p, s) = mc_rows(exp, case, mc);
            out.points.extend(p);
            out.se.extend(s);
            out.warnings.extend(mc.warnings.iter().map(|w| format!("{}: {w}", case.label)));
        }
        if let Some(de) = &r.de {
            let (p, s) = de_rows(exp, case, de);
            out.points.extend(p);
            out.se.extend(s);
        }
        if let (Mode::Compare, Some(mc), Some(de)) = (mode, &r.mc, &r.de) {
            let (p, s) = compare_rows(case, mc, de);
            cmp_pts.extend(p);
            cmp_se.extend(s);
        }
        out.cases.push(r);
    }
    if mode == Mode::Compare {
        let summary = CompareSummary {
            sinr: ErrorQuantiles::of(cmp_pts.iter().map(|r| r.rel_err)),
            se: ErrorQuantiles::of(cmp_se.iter().map(|r| r.rel_err)),
        };
        out.compare = Some((cmp_pts, cmp_se, summary));
    }
    Ok(out)
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: &'static str,
    pub mode: Mode,
    pub config_hash: String,
    pub master_seed: u64,
    pub trials: usize,
    pub grid_stride: usize,
    pub workers: usize,
    pub noise_normalization: String,
    pub files: Vec<String>,
    pub cases: Vec<String>,
    pub warnings: Vec<String>,
    pub compare: Option<CompareSummary>,
    pub timestamp_unix: u64,
    pub config: RunConfig,
}

fn noise_note(cfg: &RunConfig) -> String {
    format!(
        "noise_variance = {:e} W per channel use (thermal density integrated over the signal bandwidth)",
        cfg.network.noise_variance
    )
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<String>) -> Result<(), HarnessError> {
    std::fs::write(dir.join(name), bytes)?;
    files.push(name.to_string());
    Ok(())
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<PathBuf, HarnessError> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(m).map_err(|e| HarnessError::Io(e.to_string()))?;
    std::fs::write(&path, text)?;
    Ok(path)
}

fn manifest(cfg: &RunConfig, mode: Mode, workers: usize, files: Vec<String>) -> Manifest {
    let ts = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment.id.as_str(),
        mode,
        config_hash: cfg.hash(),
        master_seed: cfg.experiment.master_seed,
        trials: cfg.experiment.trials,
        grid_stride: cfg.experiment.grid_stride,
        workers,
        noise_normalization: noise_note(cfg),
        files,
        cases: Vec::new(),
        warnings: Vec::new(),
        compare: None,
        timestamp_unix: ts,
        config: cfg.clone(),
    }
}

/// Writes the tables of a run into `dir` and returns the manifest path.
pub fn write_run(dir: &Path, cfg: &RunConfig, out: &RunOutput, workers: usize) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let prefix = match out.mode {
        Mode::Simulate => "results",
        Mode::De => "de_results",
        Mode::Compare => "compare_results",
    };
    write_file(dir, &format!("{prefix}.csv"), &csv_bytes(&out.points)?, &mut files)?;
    write_file(dir, &format!("{prefix}_se.csv"), &csv_bytes(&out.se)?, &mut files)?;
    let mut summary = None;
    if let Some((p, s, sum)) = &out.compare {
        write_file(dir, "compare_points.csv", &csv_bytes(p)?, &mut files)?;
        write_file(dir, "compare_se.csv", &csv_bytes(s)?, &mut files)?;
        summary = Some(sum.clone());
    }
    let mut m = manifest(cfg, out.mode, workers, files);
    m.cases = out.cases.iter().map(|c| c.case.label.clone()).collect();
    m.warnings = out.warnings.clone();
    m.compare = summary;
    write_manifest(dir, &m)
}

/// Runs the invariant suite, writes `validate.csv` and the manifest, and
/// reports whether every check passed.
pub fn run_validation(dir: &Path, cfg: &RunConfig, workers: usize) -> Result<(bool, Vec<validate::Check>), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let checks = validate::validation_suite(cfg.experiment.master_seed);
    let mut files = Vec::new();
    write_file(dir, "validate.csv", &csv_bytes(&checks)?, &mut files)?;
    let mut m = manifest(cfg, Mode::Simulate, workers, files);
    m.warnings = checks.iter().filter(|c| !c.passed).map(|c| format!("{} failed: {}", c.name, c.detail)).collect();
    write_manifest(dir, &m)?;
    Ok((checks.iter().all(|c| c.passed), checks))
}

/// Writes the AP/UE positions of the configured network.
pub fn write_layout(dir: &Path, cfg: &RunConfig) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let net = NetworkRealization::generate(&cfg.network, cfg.experiment.master_seed)
        .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?;
    let path = dir.join("layout.csv");
    let f = std::fs::File::create(&path)?;
    net.write_layout_csv(f)?;
    Ok(path)
}
