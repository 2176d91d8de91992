//! Minimal neural-network substrate: dense layers, an LSTM cell,
//! reverse-mode gradients and Adam, all in `f64`.

pub mod adam;
pub mod dense;
pub mod gradcheck;
pub mod lstm;
pub mod params;

pub use adam::{AdamConfig, AdamState};
pub use dense::{Activation, Dense, Mlp, MlpCache};
pub use gradcheck::{check_gradients, GradCheck, GradReport};
pub use lstm::{LstmCell, LstmState, LstmStepCache};
pub use params::{bit_identical, zeros_like, Parameters};
