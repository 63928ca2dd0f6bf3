pub mod experiments;
pub mod fixtures;
pub mod icp;
pub mod pipeline;
pub mod retrieval;
pub mod rng;
pub mod scm;
pub mod search;
pub mod simulator;
pub mod stats;
pub mod svar;
