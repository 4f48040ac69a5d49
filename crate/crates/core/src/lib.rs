//! Bandwidth brokering for IEC 61850 traffic on constrained links.
//!
//! The crate is organised bottom-up:
//!
//! * [`codec`] encodes and decodes GOOSE and Sampled-Values frames;
//! * [`classify`] maps a raw frame to its flow-table match tuple and class;
//! * [`timing`] holds per-class transfer-time bounds and demand estimates;
//! * [`broker`] keeps the reservation ledger for one constrained link;
//! * [`sdn`] is the PacketIn/FlowMod control loop in front of the brokers;
//! * [`sim`] is a deterministic discrete-event model of two substations
//!   joined by one link, used to check timing bounds end to end;
//! * [`scenario`] parses the scenario files the simulator consumes.

pub mod broker;
pub mod classify;
pub mod codec;
pub mod sdn;
pub mod scenario;
pub mod sim;
pub mod time;
pub mod timing;

pub use broker::{Broker, BrokerConfig, Decision, QueuePlan};
pub use classify::{classify_frame, FlowKey, MessageClass};
pub use time::Timestamp;
pub use timing::{DemandEstimate, TimingTable, TrafficProfile};
