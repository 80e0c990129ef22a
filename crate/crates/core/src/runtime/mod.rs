//! The workspace state machine: attention, injection, broadcast,
//! reverberation with an all-or-none amplitude gate, readout and tracing.

pub mod attention;
pub mod ignition;
pub mod parallel;
pub mod trace;
pub mod workspace;

pub use attention::{attention_select, compute_key, key_projection, AttentionBundle, AttentionParams};
pub use ignition::{amplitude_orbit, lowest_fixed_point, IgnitionParams};
pub use parallel::{par_map, threads_from_env};
pub use trace::{summaries_to_csv, Phase, TickSummary, Trace, TraceEvent};
pub use workspace::{
    broadcast, inject, readout, refresh_keys, reverberate, select, tick, Event, IgnitionOutcome, Readout,
    TickContext, WorkspaceState,
};
