//! One advisory episode: all-IDM warm-up, then δ-held advice executed by a
//! driver, with per-step metric accumulation.

use serde::{Deserialize, Serialize};

use crate::driver::{Driver, TraitMean};
use crate::error::{PerpError, Result};
use crate::ring::{std_dev, EgoObservation, IdmParams, RingConfig, RingEnv, EGO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub warmup: usize,
    pub horizon: usize,
    /// Hold length in simulation steps.
    pub delta: usize,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.delta == 0 {
            return Err(PerpError::Config("hold length delta must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(PerpError::Config("horizon must be positive".into()));
        }
        Ok(())
    }

    /// Number of decision windows; a trailing partial window counts.
    pub fn decisions(&self) -> usize {
        self.horizon.div_ceil(self.delta)
    }
}

/// Emission-rate proxy `max(0, c0 + c1·v + c2·v² + c3·v·max(0, a))` per
/// vehicle-step. Only relative comparisons are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmissionsModel {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for EmissionsModel {
    fn default() -> Self {
        Self {
            c0: 0.1,
            c1: 0.01,
            c2: 0.002,
            c3: 0.5,
        }
    }
}

impl EmissionsModel {
    pub fn rate(&self, v: f64, a: f64) -> f64 {
        (self.c0 + self.c1 * v + self.c2 * v * v + self.c3 * v * a.max(0.0)).max(0.0)
    }

    /// Sum over vehicles of one step's rates.
    pub fn step_total(&self, speeds: &[f64], accels: &[f64]) -> f64 {
        speeds.iter().zip(accels).map(|(v, a)| self.rate(*v, *a)).sum()
    }
}

/// Proxy over a `[step][vehicle]` trace.
pub fn emissions_proxy(speeds: &[Vec<f64>], accels: &[Vec<f64>], model: &EmissionsModel) -> f64 {
    speeds.iter().zip(accels).map(|(v, a)| model.step_total(v, a)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Mean over all vehicles and post-warm-up steps.
    pub avg_speed: f64,
    /// Per-step cross-vehicle std, averaged over post-warm-up steps.
    pub speed_std: f64,
    pub collided: bool,
    pub emissions_proxy: f64,
    pub steps: usize,
}

/// Per-step accumulator behind [`EpisodeMetrics`].
#[derive(Debug, Clone, Default)]
pub struct MetricsRecorder {
    speed_sum: f64,
    std_sum: f64,
    emissions: f64,
    samples: usize,
    steps: usize,
    emissions_model: EmissionsModel,
}

impl MetricsRecorder {
    pub fn new(emissions_model: EmissionsModel) -> Self {
        Self {
            emissions_model,
            ..Self::default()
        }
    }

    pub fn record(&mut self, speeds: &[f64], accels: &[f64]) {
        self.speed_sum += speeds.iter().sum::<f64>();
        self.samples += speeds.len();
        self.std_sum += std_dev(speeds);
        self.emissions += self.emissions_model.step_total(speeds, accels);
        self.steps += 1;
    }

    pub fn finish(&self, collided: bool) -> EpisodeMetrics {
        let steps = self.steps.max(1) as f64;
        EpisodeMetrics {
            avg_speed: self.speed_sum / self.samples.max(1) as f64,
            speed_std: self.std_sum / steps,
            collided,
            emissions_proxy: self.emissions,
            steps: self.steps,
        }
    }
}

/// What an advisor sees at a decision boundary.
pub struct DecisionContext<'a> {
    pub env: &'a RingEnv,
    pub observation: EgoObservation,
    /// Ground-truth trait, for trait-aware baselines only.
    pub trait_mean: Option<TraitMean>,
    /// Index of the decision within the advisory phase.
    pub decision: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub advised: f64,
    pub executed: f64,
    /// Ego speed after the step.
    pub v_ego: f64,
}

/// Produces one advised speed per δ-window.
pub trait Advisor {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<f64>;

    fn observe(&mut self, _step: &StepInfo) {}

    /// Called when a window closes, including a window cut short by a collision.
    fn close_window(&mut self, _collided: bool) {}
}

/// Constant-speed advice (the OSL baseline).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantAdvisor(pub f64);

impl Advisor for ConstantAdvisor {
    fn decide(&mut self, _ctx: &DecisionContext<'_>) -> Result<f64> {
        Ok(self.0)
    }
}

/// Per-step record of the advisory phase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub advised: Vec<f64>,
    pub executed: Vec<f64>,
    /// Ego observation before each advisory step.
    pub observations: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub metrics: EpisodeMetrics,
    pub trace: Option<EpisodeTrace>,
    pub env: RingEnv,
}

pub struct EpisodeRunner<'a> {
    pub ring: &'a RingConfig,
    pub idm: &'a IdmParams,
    pub spec: EpisodeSpec,
    pub emissions: EmissionsModel,
    pub record_trace: bool,
}

impl EpisodeRunner<'_> {
    pub fn warmed_env(&self, seed: u64) -> Result<RingEnv> {
        let mut env = RingEnv::reset(self.ring, self.idm, seed)?;
        env.warmup(self.spec.warmup);
        Ok(env)
    }

    /// Runs the advisory phase. `None` leaves the ego under IDM control
    /// (the no-advisory baseline). The episode stops at the first collision.
    pub fn run(&self, env_seed: u64, driver: &mut Driver, advisor: Option<&mut (dyn Advisor + '_)>) -> Result<EpisodeOutcome> {
        self.spec.validate()?;
        let env = self.warmed_env(env_seed)?;
        self.run_from(env, driver, advisor)
    }

    pub fn run_from(
        &self,
        mut env: RingEnv,
        driver: &mut Driver,
        mut advisor: Option<&mut (dyn Advisor + '_)>,
    ) -> Result<EpisodeOutcome> {
        let mut rec = MetricsRecorder::new(self.emissions);
        let mut trace = self.record_trace.then(EpisodeTrace::default);
        let v_max = self.ring.v_max;
        let mut advised = 0.0;
        let mut collided = false;
        for t in 0..self.spec.horizon {
            let obs = env.observe_ego();
            let executed = match advisor.as_deref_mut() {
                Some(adv) => {
                    if t % self.spec.delta == 0 {
                        if t > 0 {
                            adv.close_window(false);
                        }
                        let ctx = DecisionContext {
                            env: &env,
                            observation: obs,
                            trait_mean: driver.trait_mean(),
                            decision: t / self.spec.delta,
                        };
                        advised = adv.decide(&ctx)?.clamp(0.0, v_max);
                    }
                    let executed = driver.act(advised, v_max);
                    let out = env.step(executed);
                    collided = out.collided;
                    adv.observe(&StepInfo {
                        advised,
                        executed,
                        v_ego: env.speeds()[EGO],
                    });
                    executed
                }
                None => {
                    collided = env.step_idm().collided;
                    advised = f64::NAN;
                    env.speeds()[EGO]
                }
            };
            rec.record(env.speeds(), env.accels());
            if let Some(tr) = trace.as_mut() {
                tr.advised.push(advised);
                tr.executed.push(executed);
                tr.observations.push(obs.to_array());
            }
            if collided {
                break;
            }
        }
        if let Some(adv) = advisor {
            adv.close_window(collided);
        }
        Ok(EpisodeOutcome {
            metrics: rec.finish(collided),
            trace,
            env,
        })
    }
}
