//! Hybrid online learning: forward sensitivities (RTRL), STDP, and their
//! λ-weighted mix, applied to the composed network.

pub mod eligibility;
pub mod hybrid;
pub mod loss;
pub mod network;
pub mod online;
pub mod stdp;

pub use eligibility::{eligibility_step, instantaneous_gradient, EligibilityTensor};
pub use hybrid::{hybrid_update, HybridRuleConfig};
pub use loss::{LossKind, LossSpec, Target};
pub use network::{BimNetwork, Decoder, NetState, NetworkDims, ParamKind, Readout, ReadoutMode, StepRecord};
pub use online::{online_step, rtrl_gradient, LearnerState, OnlineConfig, Plasticity, StepOutcome};
pub use stdp::{stdp_pairwise, stdp_trace_step, stdp_window, StdpConfig, StdpState};
