//! Networked services around `fedcap-core`: the cloud decision center,
//! domain coordinators, provider middleware and the experiment harness.

pub mod api;
pub mod client;
pub mod config;
pub mod coordinator_server;
pub mod harness;
pub mod http;
pub mod identity;
pub mod pdc_server;
pub mod provider_server;
