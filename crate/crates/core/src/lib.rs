//! Discrete-event simulator of a stored-value electronic cash scheme under
//! counterfeit attack, with the originator's monitoring systems.

pub mod clock;
pub mod config;
pub mod detection;
pub mod economy;
pub mod ledger_io;
pub mod money;
pub mod purse;
pub mod record;
pub mod replication;
pub mod rng;
pub mod scenario;
pub mod txgen;
