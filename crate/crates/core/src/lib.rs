pub mod artifact;
pub mod cli;
pub mod corpus;
pub mod gateway;
pub mod hashing;
pub mod http;
pub mod optimizer;
pub mod promptkit;
pub mod retrieval;
pub mod schema;
pub mod synth;
