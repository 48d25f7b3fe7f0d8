pub mod autodiff;
pub mod config;
pub mod encoders;
pub mod nn;
pub mod heads;
pub mod moe;
pub mod pipeline;
pub mod metrics;
pub mod synthgen;
pub mod service;
