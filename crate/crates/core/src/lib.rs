pub mod corpus;
pub mod encoding;
pub mod harness;
pub mod metrics;
pub mod reference_selection;
pub mod rng;
pub mod scorer;
pub mod training;
