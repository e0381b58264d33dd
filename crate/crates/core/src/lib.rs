pub mod autodiff;
pub mod bundle;
pub mod contrastive;
pub mod data;
pub mod encoders;
pub mod fusion;
pub mod io;
pub mod java;
pub mod metrics;
pub mod synthetic;
