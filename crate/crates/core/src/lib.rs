pub mod atomic;
pub mod cli;
pub mod metrics;
pub mod predictor;
pub mod search;
pub mod search_space;
pub mod seed;
pub mod shapes;
pub mod store;
