use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{idm_accel, IdmParams, RingConfig};
use crate::error::Result;
use crate::rng::{rng_from, Rng};

/// Index of the advised vehicle. Vehicle `i` follows vehicle `i + 1 (mod N)`.
pub const EGO: usize = 0;

/// Smallest bumper-to-bumper gap a background vehicle may reach.
pub const BACKGROUND_GAP_FLOOR: f64 = 0.01;

const STREAM_LAYOUT: u64 = 1;
const STREAM_NOISE: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingState {
    /// Rear-bumper positions in `[0, circumference)`.
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
    pub step: u64,
}

impl RingState {
    pub fn n_vehicles(&self) -> usize {
        self.positions.len()
    }
}

/// Bumper-to-bumper distance from `vehicle` to its leader along the ring.
pub fn headway(state: &RingState, config: &RingConfig, vehicle: usize) -> f64 {
    let n = state.n_vehicles();
    let leader = (vehicle + 1) % n;
    (state.positions[leader] - state.positions[vehicle]).rem_euclid(config.circumference)
        - config.vehicle_length
}

/// Normalized ego view `(v_ego / v_max, v_leader / v_max, h_leader / h_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoObservation {
    pub v_ego: f64,
    pub v_leader: f64,
    pub headway: f64,
}

impl EgoObservation {
    pub fn from_raw(v_ego: f64, v_leader: f64, headway: f64, config: &RingConfig) -> Self {
        Self {
            v_ego: (v_ego / config.v_max).clamp(0.0, 1.0),
            v_leader: (v_leader / config.v_max).clamp(0.0, 1.0),
            headway: (headway / config.h_max()).clamp(0.0, 1.0),
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.v_ego, self.v_leader, self.headway]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            v_ego: v[0],
            v_leader: v[1],
            headway: v[2],
        }
    }
}

pub fn observe_ego(state: &RingState, config: &RingConfig) -> EgoObservation {
    EgoObservation::from_raw(
        state.speeds[EGO],
        state.speeds[(EGO + 1) % state.n_vehicles()],
        headway(state, config, EGO),
        config,
    )
}

/// How the ego vehicle is moved during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EgoControl {
    /// The ego is an ordinary (noise-free) IDM driver.
    Idm,
    /// The ego speed is set directly.
    Speed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub collided: bool,
}

/// One ring simulation owned by a single worker.
#[derive(Debug, Clone)]
pub struct RingEnv {
    config: RingConfig,
    idm: IdmParams,
    state: RingState,
    noise: Rng,
    accels: Vec<f64>,
    collided: bool,
    clamp_warnings: u32,
    history: Vec<EgoObservation>,
}

impl RingEnv {
    /// Vehicles at rest, evenly spaced except for a seeded single-period
    /// density wave plus uniform per-vehicle jitter. Every vehicle lies within
    /// `initial_wave_amplitude + initial_jitter` of its even-spacing slot.
    pub fn reset(config: &RingConfig, idm: &IdmParams, seed: u64) -> Result<Self> {
        config.validate()?;
        idm.validate()?;
        let mut layout = rng_from(seed, &[STREAM_LAYOUT]);
        let n = config.n_vehicles;
        let spacing = config.circumference / n as f64;
        let jitter = config.initial_jitter;
        let phase = layout.random_range(0.0..std::f64::consts::TAU);
        let positions = (0..n)
            .map(|i| {
                let wave = config.initial_wave_amplitude
                    * (std::f64::consts::TAU * i as f64 / n as f64 + phase).sin();
                let offset = if jitter > 0.0 {
                    layout.random_range(-jitter..=jitter)
                } else {
                    0.0
                };
                (i as f64 * spacing + wave + offset).rem_euclid(config.circumference)
            })
            .collect();
        let state = RingState {
            positions,
            speeds: vec![0.0; config.n_vehicles],
            step: 0,
        };
        Ok(Self::from_state(config, idm, state, seed))
    }

    /// Exact even spacing with every vehicle already moving at `speed`.
    pub fn uniform(config: &RingConfig, idm: &IdmParams, speed: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        idm.validate()?;
        let spacing = config.circumference / config.n_vehicles as f64;
        let state = RingState {
            positions: (0..config.n_vehicles).map(|i| i as f64 * spacing).collect(),
            speeds: vec![speed; config.n_vehicles],
            step: 0,
        };
        Ok(Self::from_state(config, idm, state, seed))
    }

    pub fn from_state(config: &RingConfig, idm: &IdmParams, state: RingState, seed: u64) -> Self {
        let n = state.n_vehicles();
        let mut env = Self {
            config: config.clone(),
            idm: idm.clone(),
            state,
            noise: rng_from(seed, &[STREAM_NOISE]),
            accels: vec![0.0; n],
            collided: false,
            clamp_warnings: 0,
            history: Vec::new(),
        };
        env.history.push(env.observe_ego());
        env
    }

    pub fn config(&self) -> &RingConfig {
        &self.config
    }

    pub fn idm(&self) -> &IdmParams {
        &self.idm
    }

    pub fn state(&self) -> &RingState {
        &self.state
    }

    pub fn speeds(&self) -> &[f64] {
        &self.state.speeds
    }

    /// Per-vehicle accelerations realized in the last step.
    pub fn accels(&self) -> &[f64] {
        &self.accels
    }

    pub fn collided(&self) -> bool {
        self.collided
    }

    /// Number of out-of-range ego commands that were clamped.
    pub fn clamp_warnings(&self) -> u32 {
        self.clamp_warnings
    }

    pub fn headway(&self, vehicle: usize) -> f64 {
        headway(&self.state, &self.config, vehicle)
    }

    pub fn observe_ego(&self) -> EgoObservation {
        observe_ego(&self.state, &self.config)
    }

    /// Ego observations recorded after reset and after every step.
    pub fn history(&self) -> &[EgoObservation] {
        &self.history
    }

    /// Steps with the ego driven at `command` m/s (clamped to `[0, v_max]`).
    pub fn step(&mut self, command: f64) -> StepOutcome {
        let cmd = if command.is_nan() { 0.0 } else { command };
        let clamped = cmd.clamp(0.0, self.config.v_max);
        if clamped != command {
            self.clamp_warnings += 1;
            log::debug!("ego command {command} clamped to {clamped}");
        }
        self.advance(EgoControl::Speed(clamped))
    }

    /// Steps with every vehicle, ego included, following IDM.
    pub fn step_idm(&mut self) -> StepOutcome {
        self.advance(EgoControl::Idm)
    }

    pub fn step_with(&mut self, control: EgoControl) -> StepOutcome {
        match control {
            EgoControl::Idm => self.step_idm(),
            EgoControl::Speed(v) => self.step(v),
        }
    }

    /// All-IDM warm-up of `steps` steps to let stop-and-go waves form.
    pub fn warmup(&mut self, steps: usize) {
        for _ in 0..steps {
            self.step_idm();
        }
    }

    fn advance(&mut self, control: EgoControl) -> StepOutcome {
        let n = self.state.n_vehicles();
        let dt = self.config.dt;
        let gaps: Vec<f64> = (0..n).map(|i| self.headway(i)).collect();
        let old = self.state.speeds.clone();
        let mut new = vec![0.0; n];

        new[EGO] = match control {
            EgoControl::Speed(v) => v,
            EgoControl::Idm => {
                let a = idm_accel(old[EGO], old[1 % n], gaps[EGO], &self.idm).unwrap_or(f64::NEG_INFINITY);
                // The leader's new speed is not known yet; bound against a stopped leader.
                (old[EGO] + a * dt)
                    .max(0.0)
                    .min(((gaps[EGO] - BACKGROUND_GAP_FLOOR) / dt).max(0.0))
            }
        };

        // Background vehicles are finalized from the ego's follower backwards,
        // so each one's leader already has its new speed.
        let noise_std = self.idm.accel_noise_std;
        for i in (1..n).rev() {
            let leader = (i + 1) % n;
            let mut a = idm_accel(old[i], old[leader], gaps[i], &self.idm).unwrap_or(f64::NEG_INFINITY);
            if noise_std > 0.0 {
                let z: f64 = self.noise.sample(StandardNormal);
                a += noise_std * z;
            }
            let cap = (new[leader] + (gaps[i] - BACKGROUND_GAP_FLOOR) / dt).max(0.0);
            new[i] = (old[i] + a * dt).max(0.0).min(cap);
        }

        let ego_gap_after = gaps[EGO] + (new[1 % n] - new[EGO]) * dt;
        for i in 0..n {
            self.accels[i] = (new[i] - old[i]) / dt;
            self.state.positions[i] =
                (self.state.positions[i] + new[i] * dt).rem_euclid(self.config.circumference);
        }
        self.state.speeds = new;
        self.state.step += 1;
        let collided = ego_gap_after <= 0.0;
        self.collided |= collided;
        self.history.push(self.observe_ego());
        StepOutcome { collided }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RingConfig {
        RingConfig::default()
    }

    #[test]
    fn headway_wraps_around_ring() {
        let c = cfg();
        let mut positions = vec![0.0; 2];
        positions[0] = 630.0;
        positions[1] = 10.0;
        let state = RingState {
            positions,
            speeds: vec![0.0; 2],
            step: 0,
        };
        assert_eq!(headway(&state, &c, 0), 15.0);
    }

    #[test]
    fn evenly_spaced_gaps_are_eleven() {
        let env = RingEnv::uniform(&cfg(), &IdmParams::default(), 0.0, 0).unwrap();
        for i in 0..40 {
            assert!((env.headway(i) - 11.0).abs() < 1e-9);
        }
    }

    #[test]
    fn touching_leader_has_zero_gap() {
        let state = RingState {
            positions: vec![100.0, 105.0, 300.0],
            speeds: vec![0.0; 3],
            step: 0,
        };
        assert_eq!(headway(&state, &cfg(), 0), 0.0);
    }

    #[test]
    fn all_at_rest_with_min_gap_stays_at_rest() {
        let idm = IdmParams::default().noise_free();
        // gap == min_gap → IDM acceleration exactly 0 at standstill.
        let c = RingConfig {
            circumference: 40.0 * 7.0,
            ..cfg()
        };
        let c = RingConfig {
            initial_jitter: 0.0,
            initial_wave_amplitude: 0.0,
            ..c
        };
        let mut env = RingEnv::uniform(&c, &idm, 0.0, 0).unwrap();
        let before = env.state().clone();
        for _ in 0..10 {
            assert!(!env.step(0.0).collided);
        }
        assert_eq!(env.state().positions, before.positions);
        assert_eq!(env.state().speeds, before.speeds);
    }

    #[test]
    fn ramming_a_stopped_leader_collides() {
        let state = RingState {
            positions: vec![0.0, 5.5, 300.0],
            speeds: vec![0.0, 0.0, 0.0],
            step: 0,
        };
        let mut env = RingEnv::from_state(&cfg(), &IdmParams::default(), state, 0);
        assert!(env.step(35.0).collided);
        assert!(env.collided());
    }

    #[test]
    fn out_of_range_command_is_clamped() {
        let mut env = RingEnv::reset(&cfg(), &IdmParams::default(), 0).unwrap();
        env.step(-3.0);
        assert_eq!(env.speeds()[EGO], 0.0);
        env.step(50.0);
        assert_eq!(env.speeds()[EGO], 35.0);
        assert_eq!(env.clamp_warnings(), 2);
    }

    #[test]
    fn reset_jitter_is_bounded_and_seeded() {
        let a = RingEnv::reset(&cfg(), &IdmParams::default(), 9).unwrap();
        let b = RingEnv::reset(&cfg(), &IdmParams::default(), 9).unwrap();
        assert_eq!(a.state(), b.state());
        for (i, p) in a.state().positions.iter().enumerate() {
            let d = (p - i as f64 * 16.0 + 320.0).rem_euclid(640.0) - 320.0;
            assert!(d.abs() <= 17.0);
        }
        let mut c = cfg();
        c.initial_jitter = 0.0;
        c.initial_wave_amplitude = 0.0;
        let even = RingEnv::reset(&c, &IdmParams::default(), 3).unwrap();
        assert!(even.state().positions.iter().enumerate().all(|(i, p)| *p == i as f64 * 16.0));
        c.initial_jitter = 1.0;
        let one = RingEnv::reset(&c, &IdmParams::default(), 3).unwrap();
        assert!(one.state().positions.iter().enumerate().all(|(i, p)| {
            let d = (p - i as f64 * 16.0 + 320.0).rem_euclid(640.0) - 320.0;
            d.abs() <= 1.0
        }));
    }

    #[test]
    fn observation_examples() {
        let c = cfg();
        let env = RingEnv::uniform(&c, &IdmParams::default(), 0.0, 0).unwrap();
        let o = env.observe_ego();
        assert_eq!((o.v_ego, o.v_leader), (0.0, 0.0));
        assert!((o.headway - 11.0 / 635.0).abs() < 1e-12);
        assert!((o.headway - 0.01732).abs() < 1e-5);
        let full = EgoObservation::from_raw(35.0, 35.0, c.h_max(), &c);
        assert_eq!(full.to_array(), [1.0, 1.0, 1.0]);
        let o = EgoObservation::from_raw(8.65, 0.0, 0.0, &c);
        assert!((o.v_ego - 0.2471).abs() < 1e-4);
        let over = EgoObservation::from_raw(80.0, -1.0, 1e4, &c);
        assert_eq!(over.to_array(), [1.0, 0.0, 1.0]);
    }

    #[test]
    fn warmup_zero_is_identity_and_warmup_is_deterministic() {
        let mut a = RingEnv::reset(&cfg(), &IdmParams::default(), 4).unwrap();
        let start = a.state().clone();
        a.warmup(0);
        assert_eq!(a.state(), &start);
        let mut b = RingEnv::reset(&cfg(), &IdmParams::default(), 4).unwrap();
        a.warmup(600);
        b.warmup(600);
        assert_eq!(a.state(), b.state());
        assert!(a.state().positions.iter().zip(&b.state().positions).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
