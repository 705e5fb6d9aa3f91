//! Python module `perp`: the ring simulator, trained policies, trait
//! inference and the evaluation harness.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use perp_core::config::RunConfig;
use perp_core::driver::{Driver, DriverProfile, TraitMean};
use perp_core::dti::{infer_trait, DtiModel};
use perp_core::error::PerpError;
use perp_core::eval::{self, EvalConfig, PolicyBundle, PolicyKind};
use perp_core::pcp::PcpPolicy;
use perp_core::perp::{compose_advice, reward_perp as core_reward_perp, PerpPolicy};
use perp_core::ppo::ActMode;
use perp_core::ring::{EgoObservation, IdmParams, RingConfig};
use perp_core::rng::rng_from;

fn py_err(e: PerpError) -> PyErr {
    match e {
        PerpError::MissingArtifact(p) => PyFileNotFoundError::new_err(p.display().to_string()),
        PerpError::Numeric(_) | PerpError::Training { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn config_from(toml: Option<&str>) -> PyResult<RunConfig> {
    match toml {
        Some(t) => RunConfig::from_toml_str(t).map_err(py_err),
        None => Ok(RunConfig::default()),
    }
}

fn mode(greedy: bool) -> ActMode {
    if greedy {
        ActMode::Greedy
    } else {
        ActMode::Sample
    }
}

/// Single-lane ring with IDM background traffic and a speed-commanded ego.
#[pyclass(module = "perp")]
struct RingEnv {
    inner: perp_core::ring::RingEnv,
}

#[pymethods]
impl RingEnv {
    /// `config` is a TOML run config; only its `env` and `idm` sections are used.
    #[new]
    #[pyo3(signature = (seed = 0, config = None))]
    fn new(seed: u64, config: Option<&str>) -> PyResult<Self> {
        let cfg = config_from(config)?;
        let inner = perp_core::ring::RingEnv::reset(&cfg.env, &cfg.idm, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Advance one step with the ego at `speed`; returns whether the ego collided.
    fn step(&mut self, speed: f64) -> bool {
        self.inner.step(speed).collided
    }

    /// Advance one step with the ego under IDM control.
    fn step_idm(&mut self) -> bool {
        self.inner.step_idm().collided
    }

    fn warmup(&mut self, steps: usize) {
        self.inner.warmup(steps);
    }

    /// `(v_ego, v_leader, headway)`, each normalized to `[0, 1]`.
    fn observe(&self) -> (f64, f64, f64) {
        let o = self.inner.observe_ego().to_array();
        (o[0], o[1], o[2])
    }

    #[getter]
    fn speeds(&self) -> Vec<f64> {
        self.inner.speeds().to_vec()
    }

    #[getter]
    fn positions(&self) -> Vec<f64> {
        self.inner.state().positions.clone()
    }

    #[getter]
    fn step_count(&self) -> u64 {
        self.inner.state().step
    }

    #[getter]
    fn collided(&self) -> bool {
        self.inner.collided()
    }
}

/// Trained piecewise-constant speed policy.
#[pyclass(module = "perp")]
struct Pcp {
    inner: PcpPolicy,
}

#[pymethods]
impl Pcp {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: PcpPolicy::load(&path).map_err(py_err)?,
        })
    }

    /// Advised speed in m/s for a normalized observation.
    #[pyo3(signature = (observation, greedy = true, seed = 0))]
    fn act(&self, observation: (f64, f64, f64), greedy: bool, seed: u64) -> PyResult<f64> {
        let obs = EgoObservation::from_slice(&[observation.0, observation.1, observation.2]);
        let (speed, _) = self.inner.act(&obs, mode(greedy), &mut rng_from(seed, &[])).map_err(py_err)?;
        Ok(speed)
    }

    fn speed_table(&self) -> Vec<f64> {
        self.inner.space.table()
    }
}

/// Trait-inference autoencoder.
#[pyclass(module = "perp")]
struct Dti {
    inner: DtiModel,
}

#[pymethods]
impl Dti {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: DtiModel::load(&path).map_err(py_err)?,
        })
    }

    /// Latent mean for the most recent `window` observations; shorter
    /// histories are left-padded.
    fn infer(&self, history: Vec<(f64, f64, f64)>) -> PyResult<Vec<f64>> {
        let hist: Vec<EgoObservation> = history
            .iter()
            .map(|o| EgoObservation::from_slice(&[o.0, o.1, o.2]))
            .collect();
        Ok(infer_trait(&self.inner, &hist).map_err(py_err)?.0)
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.window
    }
}

/// Residual policy (perp, vrp or tarp).
#[pyclass(module = "perp")]
struct Residual {
    inner: PerpPolicy,
}

#[pymethods]
impl Residual {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: PerpPolicy::load(&path).map_err(py_err)?,
        })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant.name()
    }
}

/// IDM equilibrium speed of the evenly spaced ring.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn equilibrium_speed(config: Option<&str>) -> PyResult<f64> {
    let cfg = config_from(config)?;
    eval::optimal_uniform_speed(&cfg.env, &cfg.idm).map_err(py_err)
}

/// Residual-policy reward for executed speed `a_driver` and base advice `a_pcp`.
#[pyfunction]
fn reward_perp(a_driver: f64, a_pcp: f64) -> f64 {
    core_reward_perp(a_driver, a_pcp)
}

/// `clamp(a_pcp + residual, 0, a_max)`.
#[pyfunction]
#[pyo3(signature = (a_pcp, residual, a_max = 35.0))]
fn advise(a_pcp: f64, residual: f64, a_max: f64) -> f64 {
    compose_advice(a_pcp, residual, a_max)
}

/// One executed speed of a driver with the given trait mean.
#[pyfunction]
#[pyo3(signature = (advised, trait_mean, seed = 0, v_max = 35.0))]
fn driver_act(advised: f64, trait_mean: f64, seed: u64, v_max: f64) -> PyResult<f64> {
    let t = TraitMean::from_value(trait_mean).map_err(py_err)?;
    let mut d = Driver::Profile(DriverProfile::new(t, rng_from(seed, &[])));
    Ok(d.act(advised, v_max))
}

/// Greedy evaluation with uniformly drawn driver traits. Returns a dict with
/// `avg_speed`, `avg_std`, `emissions_proxy` (None if every episode collided),
/// `collisions` and `episodes`.
#[pyfunction]
#[pyo3(signature = (policy, episodes = 10, delta = 20, seed = 0, pcp = None, dti = None, residual = None, config = None))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    policy: &str,
    episodes: usize,
    delta: usize,
    seed: u64,
    pcp: Option<PyRef<'py, Pcp>>,
    dti: Option<PyRef<'py, Dti>>,
    residual: Option<PyRef<'py, Residual>>,
    config: Option<&str>,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let cfg = config_from(config)?;
    let kind = PolicyKind::parse(policy).map_err(py_err)?;
    let need = |what: &str| PyValueError::new_err(format!("policy `{policy}` needs `{what}`"));
    let bundle = match kind {
        PolicyKind::Idm => PolicyBundle::idm(),
        PolicyKind::Osl => PolicyBundle::osl(eval::optimal_uniform_speed(&cfg.env, &cfg.idm).map_err(py_err)?),
        PolicyKind::Pcp => PolicyBundle::pcp(&pcp.as_ref().ok_or_else(|| need("pcp"))?.inner),
        _ => PolicyBundle::residual(
            &pcp.as_ref().ok_or_else(|| need("pcp"))?.inner,
            dti.as_ref().map(|d| &d.inner),
            &residual.as_ref().ok_or_else(|| need("residual"))?.inner,
        ),
    };
    let ecfg = EvalConfig { episodes, ..cfg.eval };
    let report = eval::evaluate(&bundle, &cfg.env, &cfg.idm, &ecfg, delta, seed).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("avg_speed", report.avg_speed)?;
    d.set_item("avg_std", report.avg_std)?;
    d.set_item("emissions_proxy", report.emissions_proxy)?;
    d.set_item("collisions", report.collisions)?;
    d.set_item("episodes", report.episodes.len())?;
    d.set_item("hold_violations", report.hold_violations)?;
    Ok(d)
}

/// The default run configuration as TOML.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_toml_string()
}

/// Ring and IDM defaults as `(circumference, n_vehicles, desired_speed)`.
#[pyfunction]
fn ring_defaults() -> (f64, usize, f64) {
    let r = RingConfig::default();
    (r.circumference, r.n_vehicles, IdmParams::default().desired_speed)
}

#[pymodule]
fn perp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RingEnv>()?;
    m.add_class::<Pcp>()?;
    m.add_class::<Dti>()?;
    m.add_class::<Residual>()?;
    m.add_function(wrap_pyfunction!(equilibrium_speed, m)?)?;
    m.add_function(wrap_pyfunction!(reward_perp, m)?)?;
    m.add_function(wrap_pyfunction!(advise, m)?)?;
    m.add_function(wrap_pyfunction!(driver_act, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(ring_defaults, m)?)?;
    Ok(())
}
