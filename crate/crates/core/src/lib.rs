//! A deterministic time-slice simulator for vehicular edge computing:
//! service caching and computation offloading across vehicles (SDVs),
//! roadside units (RSUs) and a cloud datacenter (CDC).

pub mod cache;
pub mod channel;
pub mod demand;
pub mod engine;
pub mod event;
pub mod http;
pub mod metrics;
pub mod mobility;
pub mod offload;
pub mod rng;
pub mod scenario;
pub mod synthgen;
pub mod world;
