//! Learning paradigms (local, central, federated), the federated aggregation
//! algorithms and round orchestration.

mod aggregate;
mod client;
mod config;
mod engine;
mod federation;

pub use aggregate::{
    fedavg_aggregate, scaffold_client_finalize, scaffold_local_step, scaffold_server_update, ClientId, ClientUpdate,
    ScaffoldState,
};
pub use client::{outcome_aurocs, Algorithm, SiteClient};
pub use config::TrainConfig;
pub use engine::{
    history_csv_string, pool_scores, run_federated, run_federated_observed, write_history_csv, RoundRecord, RunResult,
};
pub use federation::{serve_site, DirectFederation, Federation, LoopbackPort, Port, WireFederation, WireSite};
