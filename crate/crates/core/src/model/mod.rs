//! Attention network over tuples of consecutive skeleton frames.

mod check;
mod config;
mod network;
mod params;
mod pe;

pub use check::network_grad_check;
pub use config::ModelConfig;
pub use network::{gather_persons, Model, Session, StageToggles, BUFFER_PREFIX, PARAM_PREFIX};
pub use params::{decays, init_param, init_params, layer_prefix, registry, Init, ParamSpec};
pub use pe::positional_encoding;
