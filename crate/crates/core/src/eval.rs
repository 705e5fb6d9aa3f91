//! Evaluation harness: seeded multi-episode evaluation of any advisory
//! policy, baseline comparison reports, and the ring's equilibrium speed.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{sample_trait, Driver, DriverProfile, TraitMean};
use crate::dti::DtiModel;
use crate::episode::{
    Advisor, ConstantAdvisor, EmissionsModel, EpisodeMetrics, EpisodeRunner, EpisodeSpec, EpisodeTrace,
};
use crate::error::{PerpError, Result};
use crate::pcp::{PcpAdvisor, PcpPolicy};
use crate::perp::{PerpPolicy, ResidualAdvisor, Variant};
use crate::ppo::ActMode;
use crate::ring::{mean, std_dev, IdmParams, RingConfig, RingEnv, EGO};
use crate::rng::{derive_seed, rng_from};

pub use crate::episode::emissions_proxy;

const STREAM_EVAL: u64 = 41;
const STREAM_EVAL_ENV: u64 = 42;
const STREAM_EVAL_DRIVER: u64 = 43;
const STREAM_EVAL_ACT: u64 = 44;

// ---------------------------------------------------------------- equilibrium

/// Gap between evenly spaced vehicles.
pub fn equilibrium_gap(ring: &RingConfig) -> f64 {
    ring.even_gap()
}

/// Root of `1 − (v/v0)^δ − ((s0 + v·T)/gap)² = 0` on `[0, v0]`, by bisection to 1e-6 m/s.
pub fn optimal_uniform_speed(ring: &RingConfig, idm: &IdmParams) -> Result<f64> {
    let gap = equilibrium_gap(ring);
    let f = |v: f64| 1.0 - (v / idm.desired_speed).powf(idm.accel_exponent) - ((idm.min_gap + v * idm.time_headway) / gap).powi(2);
    let (mut lo, mut hi) = (0.0, idm.desired_speed);
    if !(f(lo) > 0.0 && f(hi) < 0.0) {
        return Err(PerpError::Config(format!(
            "no equilibrium speed in [0, {}] for an even gap of {gap} m",
            idm.desired_speed
        )));
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub speed: f64,
    /// `None` when the ego collided.
    pub avg_speed: Option<f64>,
}

/// Simulated cross-check: the ego holds each candidate speed on a uniformly
/// moving ring; the best candidate is the fastest collision-free average.
pub fn grid_search_best_speed(
    ring: &RingConfig,
    idm: &IdmParams,
    candidates: &[f64],
    steps: usize,
    seed: u64,
) -> Result<(Option<f64>, Vec<GridPoint>)> {
    let points = candidates
        .par_iter()
        .map(|&c| {
            let mut env = RingEnv::uniform(ring, idm, c, seed)?;
            let mut total = 0.0;
            for _ in 0..steps {
                if env.step(c).collided {
                    return Ok(GridPoint { speed: c, avg_speed: None });
                }
                total += mean(env.speeds());
            }
            Ok(GridPoint {
                speed: c,
                avg_speed: Some(total / steps.max(1) as f64),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = points
        .iter()
        .filter_map(|p| p.avg_speed.map(|a| (p.speed, a)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(s, _)| s);
    Ok((best, points))
}

// ---------------------------------------------------------------- policies

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// No advisory: the ego is an IDM vehicle.
    Idm,
    Osl,
    Pcp,
    Vrp,
    Tarp,
    Perp,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Idm,
        PolicyKind::Osl,
        PolicyKind::Pcp,
        PolicyKind::Vrp,
        PolicyKind::Tarp,
        PolicyKind::Perp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Idm => "idm",
            PolicyKind::Osl => "osl",
            PolicyKind::Pcp => "pcp",
            PolicyKind::Vrp => "vrp",
            PolicyKind::Tarp => "tarp",
            PolicyKind::Perp => "perp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase().replace('-', ""))
            .ok_or_else(|| PerpError::Config(format!("unknown policy `{s}` (idm, osl, pcp, vrp, tarp, perp)")))
    }

    pub fn residual_variant(self) -> Option<Variant> {
        match self {
            PolicyKind::Vrp => Some(Variant::Vrp),
            PolicyKind::Tarp => Some(Variant::Tarp),
            PolicyKind::Perp => Some(Variant::Perp),
            _ => None,
        }
    }
}

/// Everything needed to advise: which policy, and the frozen networks it uses.
#[derive(Debug, Clone, Copy)]
pub struct PolicyBundle<'a> {
    pub kind: PolicyKind,
    pub osl_speed: f64,
    pub pcp: Option<&'a PcpPolicy>,
    pub dti: Option<&'a DtiModel>,
    pub residual: Option<&'a PerpPolicy>,
}

impl<'a> PolicyBundle<'a> {
    pub fn idm() -> Self {
        Self {
            kind: PolicyKind::Idm,
            osl_speed: 0.0,
            pcp: None,
            dti: None,
            residual: None,
        }
    }

    pub fn osl(speed: f64) -> Self {
        Self {
            kind: PolicyKind::Osl,
            osl_speed: speed,
            ..Self::idm()
        }
    }

    pub fn pcp(pcp: &'a PcpPolicy) -> Self {
        Self {
            kind: PolicyKind::Pcp,
            pcp: Some(pcp),
            ..Self::idm()
        }
    }

    pub fn residual(pcp: &'a PcpPolicy, dti: Option<&'a DtiModel>, residual: &'a PerpPolicy) -> Self {
        let kind = match residual.variant {
            Variant::Vrp => PolicyKind::Vrp,
            Variant::Tarp => PolicyKind::Tarp,
            Variant::Perp => PolicyKind::Perp,
            Variant::Osl => PolicyKind::Osl,
        };
        Self {
            kind,
            pcp: Some(pcp),
            dti,
            residual: Some(residual),
            ..Self::idm()
        }
    }

    fn advisor(&self, act_seed: u64) -> Result<Option<Box<dyn Advisor + 'a>>> {
        let missing = |what: &str| PerpError::Config(format!("{} policy bundle lacks a {what}", self.kind.name()));
        Ok(match self.kind {
            PolicyKind::Idm => None,
            PolicyKind::Osl => Some(Box::new(ConstantAdvisor(self.osl_speed))),
            PolicyKind::Pcp => {
                let pcp = self.pcp.ok_or_else(|| missing("speed policy"))?;
                Some(Box::new(PcpAdvisor::new(pcp, ActMode::Greedy, rng_from(act_seed, &[]), false)))
            }
            PolicyKind::Vrp | PolicyKind::Tarp | PolicyKind::Perp => {
                let pcp = self.pcp.ok_or_else(|| missing("speed policy"))?;
                let res = self.residual.ok_or_else(|| missing("residual policy"))?;
                Some(Box::new(ResidualAdvisor::new(
                    pcp,
                    self.dti,
                    res,
                    ActMode::Greedy,
                    ActMode::Greedy,
                    rng_from(act_seed, &[]),
                    false,
                )?))
            }
        })
    }
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub warmup: usize,
    pub horizon: usize,
    pub emissions: EmissionsModel,
    /// Pin every driver to one trait instead of drawing uniformly.
    pub pinned_trait: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            warmup: 600,
            horizon: 4000,
            emissions: EmissionsModel::default(),
            pinned_trait: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub trait_mean: Option<f64>,
    pub metrics: EpisodeMetrics,
    pub hold_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: PolicyKind,
    pub delta: usize,
    pub episodes: Vec<EpisodeRecord>,
    pub collisions: usize,
    /// Means over collision-free episodes; `None` when every episode collided or none ran.
    pub avg_speed: Option<f64>,
    pub avg_std: Option<f64>,
    pub emissions_proxy: Option<f64>,
    pub hold_violations: usize,
}

impl EvalReport {
    pub fn from_records(policy: PolicyKind, delta: usize, episodes: Vec<EpisodeRecord>) -> Self {
        let ok: Vec<&EpisodeMetrics> = episodes.iter().map(|e| &e.metrics).filter(|m| !m.collided).collect();
        let avg = |f: fn(&EpisodeMetrics) -> f64| {
            (!ok.is_empty()).then(|| ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64)
        };
        Self {
            policy,
            delta,
            collisions: episodes.iter().filter(|e| e.metrics.collided).count(),
            avg_speed: avg(|m| m.avg_speed),
            avg_std: avg(|m| m.speed_std),
            emissions_proxy: avg(|m| m.emissions_proxy),
            hold_violations: episodes.iter().map(|e| e.hold_violations).sum(),
            episodes,
        }
    }
}

/// Steps `t > 0` with `t mod δ ≠ 0` at which the advice changed.
pub fn hold_violations(trace: &EpisodeTrace, delta: usize) -> usize {
    trace
        .advised
        .windows(2)
        .enumerate()
        .filter(|(t, w)| (t + 1) % delta != 0 && w[0].to_bits() != w[1].to_bits() && !(w[0].is_nan() && w[1].is_nan()))
        .count()
}

/// Per-episode trace as written to the optional JSON-lines dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub policy: PolicyKind,
    pub delta: usize,
    pub episode: usize,
    pub trait_mean: Option<f64>,
    pub trace: EpisodeTrace,
}

/// Greedy evaluation over `cfg.episodes` seeded episodes with uniformly drawn
/// driver traits. Episode `k`'s ring, trait and noise depend only on
/// `(seed, k)`, so every policy sees the same scenarios.
pub fn evaluate(
    bundle: &PolicyBundle<'_>,
    ring: &RingConfig,
    idm: &IdmParams,
    cfg: &EvalConfig,
    delta: usize,
    seed: u64,
) -> Result<EvalReport> {
    Ok(evaluate_with_traces(bundle, ring, idm, cfg, delta, seed, false)?.0)
}

pub fn evaluate_with_traces(
    bundle: &PolicyBundle<'_>,
    ring: &RingConfig,
    idm: &IdmParams,
    cfg: &EvalConfig,
    delta: usize,
    seed: u64,
    keep_traces: bool,
) -> Result<(EvalReport, Vec<TraceRecord>)> {
    let spec = EpisodeSpec {
        warmup: cfg.warmup,
        horizon: cfg.horizon,
        delta,
    };
    spec.validate()?;
    let pinned = cfg.pinned_trait.map(TraitMean::from_value).transpose()?;
    let runner = EpisodeRunner {
        ring,
        idm,
        spec,
        emissions: cfg.emissions,
        record_trace: true,
    };
    let results = (0..cfg.episodes)
        .into_par_iter()
        .map(|k| {
            let kk = k as u64;
            let mut drv_rng = rng_from(seed, &[STREAM_EVAL_DRIVER, kk]);
            let drawn = sample_trait(&mut drv_rng);
            let t = pinned.unwrap_or(drawn);
            let mut driver = match bundle.kind {
                PolicyKind::Idm => Driver::Perfect,
                _ => Driver::Profile(DriverProfile::new(t, drv_rng)),
            };
            let mut advisor = bundle.advisor(derive_seed(seed, &[STREAM_EVAL_ACT, kk]))?;
            let env_seed = derive_seed(seed, &[STREAM_EVAL_ENV, kk]);
            let out = runner.run(env_seed, &mut driver, advisor.as_deref_mut())?;
            let trace = out.trace.expect("trace recording enabled");
            let trait_mean = driver.trait_mean().map(TraitMean::value);
            let record = EpisodeRecord {
                episode: k,
                trait_mean,
                hold_violations: if bundle.kind == PolicyKind::Idm { 0 } else { hold_violations(&trace, delta) },
                metrics: out.metrics,
            };
            let tr = keep_traces.then(|| TraceRecord {
                policy: bundle.kind,
                delta,
                episode: k,
                trait_mean,
                trace,
            });
            Ok((record, tr))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(results.len());
    let mut traces = Vec::new();
    for (r, t) in results {
        records.push(r);
        traces.extend(t);
    }
    Ok((EvalReport::from_records(bundle.kind, delta, records), traces))
}

pub fn write_traces(path: &Path, traces: &[TraceRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PerpError::io(dir, e))?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| PerpError::io(path, e))?);
    for t in traces {
        writeln!(f, "{}", serde_json::to_string(t).expect("plain data serializes")).map_err(|e| PerpError::io(path, e))?;
    }
    f.flush().map_err(|e| PerpError::io(path, e))
}

/// Evaluation seed shared by every policy at one `(δ, seed)` cell.
pub fn cell_seed(seed: u64, delta: usize) -> u64 {
    derive_seed(seed, &[STREAM_EVAL, delta as u64])
}

// ---------------------------------------------------------------- artifacts

/// File layout of trained artifacts under one directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactLayout {
    pub root: PathBuf,
}

impl ArtifactLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn pcp(&self, delta: usize, seed: u64) -> PathBuf {
        self.root.join(format!("pcp_d{delta}_s{seed}.json"))
    }

    pub fn pcp_log(&self, delta: usize, seed: u64) -> PathBuf {
        self.root.join(format!("pcp_d{delta}_s{seed}.csv"))
    }

    pub fn dataset(&self, delta: usize, seed: u64) -> PathBuf {
        self.root.join(format!("dti_data_d{delta}_s{seed}.jsonl"))
    }

    pub fn dti(&self, delta: usize, seed: u64) -> PathBuf {
        self.root.join(format!("dti_d{delta}_s{seed}.json"))
    }

    pub fn dti_log(&self, delta: usize, seed: u64) -> PathBuf {
        self.root.join(format!("dti_d{delta}_s{seed}.csv"))
    }

    pub fn latents(&self, delta: usize, seed: u64) -> PathBuf {
        self.root.join(format!("dti_latent_d{delta}_s{seed}.csv"))
    }

    pub fn residual(&self, variant: Variant, delta: usize, seed: u64) -> PathBuf {
        self.root.join(format!("{}_d{delta}_s{seed}.json", variant.name()))
    }

    pub fn residual_log(&self, variant: Variant, delta: usize, seed: u64) -> PathBuf {
        self.root.join(format!("{}_d{delta}_s{seed}.csv", variant.name()))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.csv")
    }
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub delta: usize,
    /// Master seed, or `mean` / `std` on summary rows.
    pub seed: String,
    pub avg_speed: Option<f64>,
    pub avg_std: Option<f64>,
    /// Collisions per 100 episodes.
    pub collisions: f64,
    pub emissions_proxy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<ComparisonRow>,
    pub reports: Vec<(u64, EvalReport)>,
    pub missing: Vec<PathBuf>,
}

impl ComparisonReport {
    /// Mean avg-speed over seeds of one `(policy, δ)` cell.
    pub fn mean_speed(&self, policy: PolicyKind, delta: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.policy == policy.name() && r.delta == delta && r.seed == "mean")
            .and_then(|r| r.avg_speed)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| PerpError::Input(format!("writing comparison csv: {e}"));
        for row in self.rows.iter().chain(&self.summary) {
            w.serialize(row).map_err(err)?;
        }
        w.flush().map_err(|e| PerpError::Input(format!("writing comparison csv: {e}")))
    }
}

fn per_hundred(report: &EvalReport) -> f64 {
    if report.episodes.is_empty() {
        0.0
    } else {
        100.0 * report.collisions as f64 / report.episodes.len() as f64
    }
}

fn summarize(policy: PolicyKind, delta: usize, cells: &[&EvalReport]) -> Vec<ComparisonRow> {
    let stat = |f: fn(&EvalReport) -> Option<f64>| {
        let v: Vec<f64> = cells.iter().filter_map(|r| f(r)).collect();
        if v.is_empty() {
            (None, None)
        } else {
            (Some(mean(&v)), Some(std_dev(&v)))
        }
    };
    let speed = stat(|r| r.avg_speed);
    let sd = stat(|r| r.avg_std);
    let em = stat(|r| r.emissions_proxy);
    let col: Vec<f64> = cells.iter().map(|r| per_hundred(r)).collect();
    vec![
        ComparisonRow {
            policy: policy.name().into(),
            delta,
            seed: "mean".into(),
            avg_speed: speed.0,
            avg_std: sd.0,
            collisions: mean(&col),
            emissions_proxy: em.0,
        },
        ComparisonRow {
            policy: policy.name().into(),
            delta,
            seed: "std".into(),
            avg_speed: speed.1,
            avg_std: sd.1,
            collisions: std_dev(&col),
            emissions_proxy: em.1,
        },
    ]
}

/// Evaluates every available `(policy, δ, seed)` cell. Missing checkpoints
/// are skipped with a warning and listed in `missing`.
pub fn compare(
    layout: &ArtifactLayout,
    policies: &[PolicyKind],
    deltas: &[usize],
    seeds: &[u64],
    ring: &RingConfig,
    idm: &IdmParams,
    cfg: &EvalConfig,
) -> Result<ComparisonReport> {
    let osl_speed = optimal_uniform_speed(ring, idm)?;
    let mut report = ComparisonReport::default();
    let note_missing = |p: PathBuf, report: &mut ComparisonReport| {
        log::warn!("skipping: missing checkpoint {}", p.display());
        if !report.missing.contains(&p) {
            report.missing.push(p);
        }
    };
    for &policy in policies {
        for &delta in deltas {
            let mut cells = Vec::new();
            for &seed in seeds {
                let pcp = match policy {
                    PolicyKind::Idm | PolicyKind::Osl => None,
                    _ => {
                        let path = layout.pcp(delta, seed);
                        if !path.exists() {
                            note_missing(path, &mut report);
                            continue;
                        }
                        Some(PcpPolicy::load(&path)?)
                    }
                };
                let dti = if policy == PolicyKind::Perp {
                    let path = layout.dti(delta, seed);
                    if !path.exists() {
                        note_missing(path, &mut report);
                        continue;
                    }
                    Some(DtiModel::load(&path)?)
                } else {
                    None
                };
                let residual = match policy.residual_variant() {
                    Some(v) => {
                        let path = layout.residual(v, delta, seed);
                        if !path.exists() {
                            note_missing(path, &mut report);
                            continue;
                        }
                        Some(PerpPolicy::load(&path)?)
                    }
                    None => None,
                };
                let bundle = match policy {
                    PolicyKind::Idm => PolicyBundle::idm(),
                    PolicyKind::Osl => PolicyBundle::osl(osl_speed),
                    PolicyKind::Pcp => PolicyBundle::pcp(pcp.as_ref().expect("loaded above")),
                    _ => PolicyBundle::residual(
                        pcp.as_ref().expect("loaded above"),
                        dti.as_ref(),
                        residual.as_ref().expect("loaded above"),
                    ),
                };
                let r = evaluate(&bundle, ring, idm, cfg, delta, cell_seed(seed, delta))?;
                report.rows.push(ComparisonRow {
                    policy: policy.name().into(),
                    delta,
                    seed: seed.to_string(),
                    avg_speed: r.avg_speed,
                    avg_std: r.avg_std,
                    collisions: per_hundred(&r),
                    emissions_proxy: r.emissions_proxy,
                });
                cells.push((seed, r));
            }
            if !cells.is_empty() {
                let refs: Vec<&EvalReport> = cells.iter().map(|c| &c.1).collect();
                report.summary.extend(summarize(policy, delta, &refs));
            }
            report.reports.extend(cells);
        }
    }
    Ok(report)
}

/// Ego-speed-only helper for tests and diagnostics.
pub fn ego_speed(env: &RingEnv) -> f64 {
    env.speeds()[EGO]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_gap_is_eleven() {
        assert_eq!(equilibrium_gap(&RingConfig::default()), 11.0);
    }

    #[test]
    fn equilibrium_root_default_params() {
        let v = optimal_uniform_speed(&RingConfig::default(), &IdmParams::default()).unwrap();
        assert!((8.9..=9.0).contains(&v), "{v}");
    }

    #[test]
    fn large_desired_speed_limit() {
        let idm = IdmParams {
            desired_speed: 1e9,
            ..IdmParams::default()
        };
        let v = optimal_uniform_speed(&RingConfig::default(), &idm).unwrap();
        assert!((v - 9.0).abs() < 1e-5, "{v}");
    }

    #[test]
    fn infeasible_geometry_has_no_root() {
        let ring = RingConfig {
            circumference: 40.0 * 6.5,
            initial_jitter: 0.0,
            initial_wave_amplitude: 0.0,
            ..RingConfig::default()
        };
        assert!(matches!(optimal_uniform_speed(&ring, &IdmParams::default()), Err(PerpError::Config(_))));
    }

    #[test]
    fn hold_violation_counter() {
        let tr = EpisodeTrace {
            advised: vec![1.0, 1.0, 2.0, 2.0, 3.0, 4.0],
            ..EpisodeTrace::default()
        };
        assert_eq!(hold_violations(&tr, 2), 1);
        assert_eq!(hold_violations(&tr, 1), 0);
    }

    #[test]
    fn zero_episodes_is_an_empty_report() {
        let cfg = EvalConfig {
            episodes: 0,
            ..EvalConfig::default()
        };
        let r = evaluate(&PolicyBundle::idm(), &RingConfig::default(), &IdmParams::default(), &cfg, 20, 0).unwrap();
        assert!(r.episodes.is_empty());
        assert_eq!(r.collisions, 0);
        assert_eq!(r.avg_speed, None);
    }

    #[test]
    fn collided_episode_is_dropped_from_aggregates() {
        let m = |s: f64, c: bool| EpisodeRecord {
            episode: 0,
            trait_mean: None,
            metrics: EpisodeMetrics {
                avg_speed: s,
                speed_std: 1.0,
                collided: c,
                emissions_proxy: 10.0,
                steps: 5,
            },
            hold_violations: 0,
        };
        let base = EvalReport::from_records(PolicyKind::Pcp, 20, vec![m(8.0, false), m(6.0, false)]);
        let with = EvalReport::from_records(PolicyKind::Pcp, 20, vec![m(8.0, false), m(1.0, true), m(6.0, false)]);
        assert_eq!(base.avg_speed, with.avg_speed);
        assert_eq!(with.collisions, 1);
        let all = EvalReport::from_records(PolicyKind::Pcp, 20, vec![m(1.0, true)]);
        assert_eq!(all.avg_speed, None);
        assert_eq!(all.collisions, 1);
    }
}
