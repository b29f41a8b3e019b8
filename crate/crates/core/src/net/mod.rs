//! Network configuration, layers and the assembled interpolation model.

mod config;
mod layers;
mod network;

pub use config::{parse_kv_lines, FlavrConfig, FusionMode, LossMode};
pub use layers::{channel_gate, channel_gate_backward, GatingLayer, Param};
pub use network::Network;
