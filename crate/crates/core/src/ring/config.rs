use serde::{Deserialize, Serialize};

use crate::error::{PerpError, Result};

/// Geometry and timing of the single-lane ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingConfig {
    /// Track length in meters.
    pub circumference: f64,
    pub n_vehicles: usize,
    pub vehicle_length: f64,
    /// Simulation step in seconds.
    pub dt: f64,
    /// Speed cap for commands and the normalization constant for speeds.
    pub v_max: f64,
    /// Half-width of the uniform positional jitter applied at reset.
    pub initial_jitter: f64,
    /// Amplitude (m) of the single-period density wave imposed at reset.
    pub initial_wave_amplitude: f64,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            circumference: 640.0,
            n_vehicles: 40,
            vehicle_length: 5.0,
            dt: 0.1,
            v_max: 35.0,
            initial_jitter: 2.0,
            initial_wave_amplitude: 15.0,
        }
    }
}

impl RingConfig {
    /// Largest possible bumper-to-bumper distance to a leader.
    pub fn h_max(&self) -> f64 {
        self.circumference - self.vehicle_length
    }

    /// Gap of every vehicle when evenly spaced.
    pub fn even_gap(&self) -> f64 {
        self.circumference / self.n_vehicles as f64 - self.vehicle_length
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vehicles < 2 {
            return Err(PerpError::Config("ring needs at least 2 vehicles".into()));
        }
        if !(self.dt > 0.0) || !(self.v_max > 0.0) {
            return Err(PerpError::Config("dt and v_max must be positive".into()));
        }
        if self.n_vehicles as f64 * self.vehicle_length >= self.circumference {
            return Err(PerpError::Config(format!(
                "{} vehicles of length {} m do not fit on a {} m ring",
                self.n_vehicles, self.vehicle_length, self.circumference
            )));
        }
        // Largest gap shrink the reset layout can produce between neighbours.
        let squeeze = 2.0 * self.initial_jitter
            + self.initial_wave_amplitude * std::f64::consts::TAU / self.n_vehicles as f64;
        if self.initial_jitter < 0.0 || self.initial_wave_amplitude < 0.0 || squeeze >= self.even_gap() {
            return Err(PerpError::Config(format!(
                "initial perturbation (jitter {}, wave amplitude {}) can reorder vehicles",
                self.initial_jitter, self.initial_wave_amplitude
            )));
        }
        Ok(())
    }
}

/// Intelligent Driver Model parameters for the background drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub accel_exponent: f64,
    pub min_gap: f64,
    /// Standard deviation of the Gaussian acceleration noise (background only).
    pub accel_noise_std: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 30.0,
            time_headway: 1.0,
            max_accel: 1.0,
            comfortable_decel: 1.5,
            accel_exponent: 4.0,
            min_gap: 2.0,
            accel_noise_std: 0.2,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("max_accel", self.max_accel),
            ("comfortable_decel", self.comfortable_decel),
            ("accel_exponent", self.accel_exponent),
            ("min_gap", self.min_gap),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(PerpError::Config(format!("idm.{name} must be positive, got {v}")));
            }
        }
        if !(self.accel_noise_std >= 0.0) {
            return Err(PerpError::Config("idm.accel_noise_std must be non-negative".into()));
        }
        Ok(())
    }

    pub fn noise_free(&self) -> Self {
        Self {
            accel_noise_std: 0.0,
            ..self.clone()
        }
    }
}

/// Standard IDM acceleration (without noise). `None` when the gap is not
/// positive: the caller must treat that as a collision.
pub fn idm_accel(v: f64, v_leader: f64, gap: f64, p: &IdmParams) -> Option<f64> {
    if !(gap > 0.0) {
        return None;
    }
    let s_star = p.min_gap
        + v * p.time_headway
        + v * (v - v_leader) / (2.0 * (p.max_accel * p.comfortable_decel).sqrt());
    let free = (v / p.desired_speed).powf(p.accel_exponent);
    Some(p.max_accel * (1.0 - free - (s_star / gap).powi(2)))
}
