pub mod cli;
pub mod codec;
pub mod registry;
pub mod schemes;
pub mod topic;
pub mod transport;

pub use topic::{Carrier, InvalidTopic, Topic};
