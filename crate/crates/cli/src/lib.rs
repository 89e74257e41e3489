//! Command-line front end for the augmentation/linking pipeline.

pub mod commands;
pub mod config;
