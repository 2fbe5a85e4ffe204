//! Command line and HTTP front ends for medmsa.

pub mod backend;
pub mod cli;
pub mod error;
pub mod service;
pub mod views;
