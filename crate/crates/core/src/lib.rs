//! A hub-and-client framework for collaborating autonomous agents:
//! server-side registry, discovery and ordered group routing; client-side
//! team formation, conversation flow control, and task execution; and a
//! deterministic scenario harness in place of any model.

pub mod client;
pub mod fsm;
pub mod harness;
pub mod policy;
pub mod protocol;
pub mod registry;
pub mod server;
pub mod teaming;
pub mod wire;
