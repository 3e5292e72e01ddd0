pub mod cli;
pub mod config;
pub mod dataset;
pub mod dr_estimator;
pub mod inference;
pub mod isotonic;
pub mod oracle_dgp;
pub mod policy;
pub mod quadrature;
pub mod returns_engine;
pub mod selftest;
pub(crate) mod special;
pub mod synthetic;
