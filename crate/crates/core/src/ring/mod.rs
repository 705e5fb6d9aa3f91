//! Single-lane ring-road microsimulator with IDM background traffic and a
//! directly speed-controlled ego vehicle.

mod config;
mod env;
mod trajectory;

pub use config::{idm_accel, IdmParams, RingConfig};
pub use env::{
    headway, observe_ego, EgoControl, EgoObservation, RingEnv, RingState, StepOutcome,
    BACKGROUND_GAP_FLOOR, EGO,
};
pub use trajectory::{TrajectoryRecord, TrajectoryWriter};

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
