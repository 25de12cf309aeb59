//! Gnutella servent: handshake, routing Rules 1-5, pong caching, priority
//! dropping and connection health.

pub mod policy;
pub mod seen;
mod servent;

pub use policy::{
    answer_query, connection_health, coverage_estimate, handshake, select_drop, ConnHealth,
    Coverage, CoverageError, Handshake, RejectReason, ResponderIdentity, Verdict,
};
pub use seen::{ConnId, Origin, RouteKey, SeenTable, Tag};
pub use servent::{
    CachedPong, DropReason, HealthAction, PushError, RoutingAction, RuleFault, Servent,
    ServentConfig, Target, Verb,
};
