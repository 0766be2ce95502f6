pub mod agent;
pub mod alloc;
pub mod codec;
pub mod harness;
pub mod nn;
pub mod sim;
pub mod spatial;
