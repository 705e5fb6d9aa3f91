//! Co-operative speed advisory on a ring road: simulator, driver model,
//! piecewise-constant and personalized residual policies, driver-trait
//! inference, and the evaluation harness.

pub mod config;
pub mod driver;
pub mod dti;
pub mod episode;
pub mod eval;
pub mod error;
pub mod nn;
pub mod pcp;
pub mod perp;
pub mod pipeline;
pub mod ppo;
pub mod rng;
pub mod ring;

pub use error::{PerpError, Result};
