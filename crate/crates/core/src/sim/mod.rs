pub mod churn;
pub mod engine;
pub mod invariants;
pub mod metrics;
pub mod run;
pub mod scenario;
pub mod topology;
pub mod trace;
pub mod drivers;

pub use engine::{Core, Driver, LinkConfig, SimMessage};
pub use invariants::{check_invariants, Rule, Violation};
pub use metrics::{metrics, query_records, success_ratio, QueryRecord, Report};
pub use run::{run_scenario, SimOutput};
pub use scenario::{Protocol, Scenario, ScenarioError};
pub use topology::{build_topology, Topology, TopologyKind, TopologyParams};
pub use trace::{SimTrace, TraceEvent};
