//! Minimal reverse-mode differentiable compute core.

mod adam;
mod error;
mod gaussian;
mod graph;
mod layers;
mod param;

pub use adam::Adam;
pub use error::NnError;
pub use gaussian::{gaussian_kl, gaussian_kl_value, reparameterize, GaussianParams};
pub use graph::{Graph, Var};
pub use layers::{Dense, Mlp, RnnCell};
pub use param::{Init, ParamId, ParamStore, ParamTensor};

pub(crate) use graph::log_softmax;
