//! Transmit-power minimization for downlink NOMA with distributed antennas.
//!
//! A cell is served by several remote radio heads (RRHs). Each user must
//! reach a fixed rate; the allocators assign subcarriers, RRHs and powers to
//! minimize the total transmit power, optionally letting two users share a
//! subcarrier with successive interference cancellation (SIC).
//!
//! * [`params`]: system parameters and validation.
//! * [`channel`]: cell geometry and frequency-selective channel gains.
//! * [`waterfill`]: closed-form incremental waterfilling.
//! * [`rates`]: NOMA rates and SIC feasibility.
//! * [`adjust`]: power setting for paired users (LPO, DPA, OPAd, SOPAd).
//! * [`alloc`]: the allocation methods and their audit.
//! * [`campaign`]: Monte Carlo campaigns, CSV output and summaries.

pub mod adjust;
pub mod alloc;
pub mod campaign;
pub mod channel;
pub mod params;
pub mod rates;
pub mod rng;
pub mod root;
pub mod waterfill;

pub use alloc::{run_method, AllocationState, AuditReport, MethodId, MethodRun};
pub use campaign::{run_campaign, summarize, CampaignConfig, TrialRecord};
pub use channel::{generate_trial, ChannelTensor};
pub use params::{validate_config, ParamError, SystemParams};
