pub mod associator;
pub mod domain;
pub mod ingest;
pub mod numerics;
pub mod predictor;
pub mod scenario;
