//! Discrete-event simulator for multi-plane Ethernet scale-out fabrics:
//! per-packet adaptive routing, per-plane congestion control, NIC plane
//! load balancing, lossless flow control, fault injection, collective
//! workloads, and control-plane analytics.

pub mod config;
pub mod controlplane;
pub mod engine;
pub mod faults;
pub mod largescale;
pub mod nic;
pub mod report;
pub mod sim;
pub mod switch;
pub mod telemetry;
pub mod topology;
pub mod units;
pub mod workloads;
