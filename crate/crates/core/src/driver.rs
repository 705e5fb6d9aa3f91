//! Instruction-adherence model for the advised (ego) driver: the executed
//! speed is the advised speed plus a trait-dependent Gaussian offset.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PerpError, Result};
use crate::rng::Rng;

/// Offset means (m/s) of the five instruction-following traits.
pub const TRAIT_MEANS: [f64; 5] = [-5.0, -2.5, 0.0, 2.5, 5.0];

/// Standard deviation of the per-step offset around the trait mean.
pub const OFFSET_STD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TraitMean(u8);

impl TraitMean {
    pub const ALL: [TraitMean; 5] = [TraitMean(0), TraitMean(1), TraitMean(2), TraitMean(3), TraitMean(4)];

    pub fn from_label(label: usize) -> Result<Self> {
        if label < TRAIT_MEANS.len() {
            Ok(Self(label as u8))
        } else {
            Err(PerpError::Config(format!("trait label {label} outside 0..5")))
        }
    }

    /// Looks a trait up by its offset mean in m/s.
    pub fn from_value(value: f64) -> Result<Self> {
        TRAIT_MEANS
            .iter()
            .position(|m| (m - value).abs() < 1e-9)
            .map(|i| Self(i as u8))
            .ok_or_else(|| PerpError::Config(format!("{value} is not one of the trait means {TRAIT_MEANS:?}")))
    }

    pub fn label(self) -> usize {
        self.0 as usize
    }

    pub fn value(self) -> f64 {
        TRAIT_MEANS[self.label()]
    }

    pub fn one_hot(self) -> [f64; 5] {
        let mut v = [0.0; 5];
        v[self.label()] = 1.0;
        v
    }
}

/// Uniform draw over the five traits.
pub fn sample_trait(rng: &mut Rng) -> TraitMean {
    TraitMean(rng.random_range(0..TRAIT_MEANS.len()) as u8)
}

/// Executed speed for a given offset, clamped to `[0, v_max]`.
pub fn apply_offset(advised: f64, offset: f64, v_max: f64) -> f64 {
    (advised + offset).clamp(0.0, v_max)
}

/// One episode's driver: the trait is fixed at construction.
#[derive(Debug, Clone)]
pub struct DriverProfile {
    trait_mean: TraitMean,
    offset: Normal<f64>,
    rng: Rng,
}

impl DriverProfile {
    pub fn new(trait_mean: TraitMean, rng: Rng) -> Self {
        Self {
            trait_mean,
            offset: Normal::new(trait_mean.value(), OFFSET_STD).expect("finite parameters"),
            rng,
        }
    }

    pub fn trait_mean(&self) -> TraitMean {
        self.trait_mean
    }

    pub fn noise_std(&self) -> f64 {
        OFFSET_STD
    }

    /// Fresh pre-clamp offset `k ~ N(trait_mean, 1)`.
    pub fn sample_offset(&mut self) -> f64 {
        self.offset.sample(&mut self.rng)
    }

    pub fn act(&mut self, advised: f64, v_max: f64) -> f64 {
        let k = self.sample_offset();
        apply_offset(advised, k, v_max)
    }
}

/// Who turns advice into an executed speed.
#[derive(Debug, Clone)]
pub enum Driver {
    /// Executes the advice exactly.
    Perfect,
    Profile(DriverProfile),
}

impl Driver {
    pub fn act(&mut self, advised: f64, v_max: f64) -> f64 {
        match self {
            Driver::Perfect => advised.clamp(0.0, v_max),
            Driver::Profile(p) => p.act(advised, v_max),
        }
    }

    pub fn trait_mean(&self) -> Option<TraitMean> {
        match self {
            Driver::Perfect => None,
            Driver::Profile(p) => Some(p.trait_mean()),
        }
    }
}
