//! Minimal tensor layers with explicit backward passes.

pub mod layers;
pub mod params;

pub use layers::{Conv2d, Linear, Resize};
pub use params::{Grads, Init, ParamId, ParamStore};

/// Logistic function, written to stay finite for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
