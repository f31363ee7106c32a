pub mod fsutil;
pub mod image;
pub mod manifest;
pub mod provider;
pub mod store;
pub mod trialfile;
pub mod gateway;
pub mod bundle;
pub mod cli;
pub mod config;
pub mod eval;
pub mod templates;
pub mod synthetic;
