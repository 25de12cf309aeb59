//! Hybrid overlays: FastTrack-style two tiers and OpenFT-style three tiers.

pub mod registry;
pub mod reputation;
pub mod roles;
pub mod routing;

pub use registry::{
    coverage_ratio, failover_reassign, registry_update, select_parents, FailoverOutcome,
    RegistryError, RegistryOp, SuperNodeState, CHILD_CAPACITY,
};
pub use reputation::{participation_update, ParticipationQueue, MAX_LEVEL};
pub use roles::{
    bootstrap_assign, choose_role, Assignment, BootstrapError, KnownSuper, NodeCapability, Role,
    RoleError, Thresholds,
};
pub use routing::SuperRouter;
